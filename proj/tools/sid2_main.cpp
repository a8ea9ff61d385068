// sid2: pixel-space diffusion toolkit CLI.
//
// Subcommands: schedule | losscurve | oracle | train | sample | flops | memory.
// Outputs are written atomically (temp file + rename). CSV uses a one-line
// header, '.' decimals and LF endings; JSON reports are stable-key-ordered.
// Exit codes: 0 success, 2 usage error, 1 runtime error.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <string>

#include "sid/config.hpp"
#include "sid/costmodel.hpp"
#include "sid/oracle.hpp"
#include "sid/quadrature.hpp"
#include "sid/trainer.hpp"

namespace {

using nlohmann::ordered_json;

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

void write_text_atomic(const std::string& path, const std::string& content) {
    const std::string tmp = path + ".tmp";
    std::FILE* f = std::fopen(tmp.c_str(), "wb");
    if (f == nullptr) throw sid::IoError("cannot open " + tmp);
    const size_t n = std::fwrite(content.data(), 1, content.size(), f);
    const bool ok = std::fflush(f) == 0;
    std::fclose(f);
    if (n != content.size() || !ok || std::rename(tmp.c_str(), path.c_str()) != 0) {
        std::remove(tmp.c_str());
        throw sid::IoError("failed writing " + path);
    }
}

void check_writable(const std::string& path) {
    const std::string probe = path + ".probe";
    std::FILE* f = std::fopen(probe.c_str(), "wb");
    if (f == nullptr) throw sid::IoError("output path not writable: " + path);
    std::fclose(f);
    std::remove(probe.c_str());
}

std::vector<double> linspace(double lo, double hi, int n) {
    std::vector<double> out(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        out[static_cast<size_t>(i)] =
            n == 1 ? lo : lo + (hi - lo) * static_cast<double>(i) / (n - 1);
    }
    return out;
}

sid::LoadedConfig load_or_defaults(const std::string& path) {
    sid::LoadedConfig cfg = path.empty() ? sid::config_defaults() : sid::config_load(path);
    sid::apply_env_seed(cfg);
    return cfg;
}

// ---------------------------------------------------------------------------

int cmd_schedule(const std::string& kind, int res, int low, int high, int shift,
                 double logsnr_min, double logsnr_max, int points, const std::string& out) {
    sid::LogSnrSchedule sched = [&] {
        if (kind == "cosine") return sid::LogSnrSchedule::cosine(logsnr_min, logsnr_max);
        if (kind == "cosine_shifted") {
            return sid::LogSnrSchedule::cosine_shifted(logsnr_min, logsnr_max, res, shift);
        }
        if (kind == "cosine_interpolated") {
            return sid::LogSnrSchedule::cosine_interpolated(logsnr_min, logsnr_max, res, low,
                                                            high);
        }
        throw sid::ConfigError("schedule: unknown kind '" + kind + "'");
    }();
    std::string csv = "t,lambda,alpha,sigma,dlambda_dt\n";
    for (double t : linspace(0.0, 1.0, points)) {
        const sid::NoiseLevel lv = sched.to_noise_level(t);
        csv += fmt(t) + "," + fmt(lv.lambda) + "," + fmt(lv.alpha) + "," + fmt(lv.sigma) + "," +
               fmt(sched.dlogsnr_dt(t)) + "\n";
    }
    write_text_atomic(out, csv);
    std::printf("wrote %d rows (%s) to %s\n", points, sched.name().c_str(), out.c_str());
    return 0;
}

int cmd_losscurve(double bias, double edm_shift, double lo, double hi, int points,
                  bool normalize_max, const std::string& out) {
    const auto lambdas = linspace(lo, hi, points);
    struct Kind {
        std::string name;
        sid::WeightingSpec spec;
    };
    std::vector<Kind> kinds;
    kinds.push_back({"sigmoid", {sid::WeightingKind::Sigmoid, bias, 0, 0.0, {}}});
    kinds.push_back({"edm", {sid::WeightingKind::Edm, 0.0, 0, edm_shift, {}}});
    kinds.push_back({"edm_monotonic", {sid::WeightingKind::EdmMonotonic, 0.0, 0, edm_shift, {}}});

    std::vector<std::vector<double>> eps_cols, x_cols;
    for (const auto& k : kinds) {
        std::vector<double> we, wx;
        for (double l : lambdas) {
            we.push_back(sid::weight_eps(k.spec, l));
            wx.push_back(sid::weight_x(k.spec, l));
        }
        if (normalize_max) {
            auto norm = [](std::vector<double>& v) {
                double mx = 0.0;
                for (double x : v) mx = std::max(mx, std::abs(x));
                if (mx > 0.0) {
                    for (double& x : v) x /= mx;
                }
            };
            norm(we);
            norm(wx);
        }
        eps_cols.push_back(std::move(we));
        x_cols.push_back(std::move(wx));
    }
    std::string csv = "lambda";
    for (const auto& k : kinds) csv += ",w_eps_" + k.name + ",w_x_" + k.name;
    csv += "\n";
    for (size_t i = 0; i < lambdas.size(); ++i) {
        csv += fmt(lambdas[i]);
        for (size_t k = 0; k < kinds.size(); ++k) {
            csv += "," + fmt(eps_cols[k][i]) + "," + fmt(x_cols[k][i]);
        }
        csv += "\n";
    }
    write_text_atomic(out, csv);
    std::printf("wrote %d rows to %s\n", points, out.c_str());
    return 0;
}

int cmd_oracle(int bits, const std::string& mixture, double lo, double hi, int points,
               double weight_bias, bool has_weight_bias, const std::string& out) {
    const auto lambdas = linspace(lo, hi, points);
    sid::LossCurve curve;
    if (!mixture.empty()) {
        sid::PrecisionMixture mix;
        // "8:1,7:4,6:4,5:6" -> [(bits, proportion)]
        std::stringstream ss(mixture);
        std::string part;
        while (std::getline(ss, part, ',')) {
            const size_t colon = part.find(':');
            if (colon == std::string::npos) {
                throw sid::ConfigError("oracle: mixture entries are bits:proportion");
            }
            mix.components.emplace_back(std::atoi(part.substr(0, colon).c_str()),
                                        std::atof(part.substr(colon + 1).c_str()));
        }
        curve = sid::mixture_curve(mix, lambdas);
    } else {
        sid::GridData data(bits);
        curve = sid::eps_mse_curve(data, lambdas);
    }
    if (has_weight_bias) {
        for (size_t i = 0; i < curve.values.size(); ++i) {
            curve.values[i] *= sid::sigmoid(weight_bias - curve.lambdas[i]);
        }
    }
    std::string csv = "lambda,value\n";
    for (size_t i = 0; i < curve.lambdas.size(); ++i) {
        csv += fmt(curve.lambdas[i]) + "," + fmt(curve.values[i]) + "\n";
    }
    write_text_atomic(out, csv);
    std::printf("wrote %d rows to %s\n", points, out.c_str());
    return 0;
}

int cmd_flops(const std::string& config_path, int res, const std::string& json_out) {
    sid::LoadedConfig cfg = load_or_defaults(config_path);
    const int input_res = res > 0 ? res : cfg.model.image_res;
    sid::CostReport rep = sid::model_cost(cfg.model, input_res);
    std::printf("flop report (multiply-add = 1 flop; train step = 3x forward)\n");
    std::printf("input %dx%d, patch %d\n", input_res, input_res, cfg.model.patch_size);
    for (const auto& st : rep.stages) {
        std::printf("  %-40s %12.3f gflops\n", st.name.c_str(), st.gflops);
    }
    std::printf("  %-40s %12.3f gflops\n", "forward total", rep.forward_gflops);
    std::printf("  %-40s %12.3f gflops\n", "train step (3x)", rep.train_step_gflops);
    std::printf("  params (counted scope)  %lld\n", static_cast<long long>(rep.params));
    std::printf("  flops/param             %.1f\n", rep.flops_per_param);
    if (!json_out.empty()) {
        ordered_json j;
        j["note"] = "multiply-add = 1 flop";
        j["input_res"] = input_res;
        j["patch_size"] = cfg.model.patch_size;
        j["stages"] = ordered_json::array();
        for (const auto& st : rep.stages) {
            j["stages"].push_back({{"name", st.name}, {"gflops", st.gflops}});
        }
        j["forward_gflops"] = rep.forward_gflops;
        j["train_step_gflops"] = rep.train_step_gflops;
        j["params"] = rep.params;
        j["flops_per_param"] = rep.flops_per_param;
        write_text_atomic(json_out, j.dump(2) + "\n");
    }
    return 0;
}

int cmd_memory(const std::string& config_path, int res, int batch, const std::string& json_out) {
    sid::LoadedConfig cfg = load_or_defaults(config_path);
    const int input_res = res > 0 ? res : cfg.model.image_res;
    sid::MemoryReport rep = sid::activation_memory(cfg.model, input_res, batch);
    const double mb = 1024.0 * 1024.0;
    std::printf("evaluation-time skip retention (2 bytes/element, batch %d)\n", batch);
    std::printf("  %-6s %-8s %-9s %14s %14s\n", "level", "res", "channels", "blockwise MB",
                "residual MB");
    for (const auto& lm : rep.per_level) {
        std::printf("  %-6d %-8lld %-9lld %14.2f %14.2f\n", lm.level,
                    static_cast<long long>(lm.res), static_cast<long long>(lm.channels),
                    lm.blockwise_bytes / mb, lm.residual_bytes / mb);
    }
    std::printf("  totals: blockwise %.2f MB, residual %.2f MB\n", rep.blockwise_total / mb,
                rep.residual_total / mb);
    if (!json_out.empty()) {
        ordered_json j;
        j["bytes_per_element"] = 2;
        j["batch"] = batch;
        j["levels"] = ordered_json::array();
        for (const auto& lm : rep.per_level) {
            j["levels"].push_back({{"level", lm.level},
                                   {"res", lm.res},
                                   {"channels", lm.channels},
                                   {"blockwise_bytes", lm.blockwise_bytes},
                                   {"residual_bytes", lm.residual_bytes}});
        }
        j["blockwise_total_bytes"] = rep.blockwise_total;
        j["residual_total_bytes"] = rep.residual_total;
        write_text_atomic(json_out, j.dump(2) + "\n");
    }
    return 0;
}

int cmd_train(const std::string& config_path, int64_t steps_override, bool toy_model,
              const std::string& ckpt_out, const std::string& metrics_out) {
    sid::LoadedConfig cfg = load_or_defaults(config_path);
    if (!ckpt_out.empty()) check_writable(ckpt_out);
    if (!metrics_out.empty()) check_writable(metrics_out);

    sid::UViTConfig model_cfg = toy_model ? cfg.toy_model() : cfg.model;
    if (model_cfg.image_res != cfg.train.dataset.resolution() ||
        model_cfg.in_channels != cfg.train.dataset.channels()) {
        throw sid::ConfigError(
            "train: model is " + std::to_string(model_cfg.image_res) + "^2 x" +
            std::to_string(model_cfg.in_channels) + " but dataset '" + cfg.train.dataset.name() +
            "' is " + std::to_string(cfg.train.dataset.resolution()) + "^2 x" +
            std::to_string(cfg.train.dataset.channels()) +
            "; set image_res/in_channels or pass --toy-model");
    }
    const int res = model_cfg.image_res;
    if (res != 128 && res != 256 && res != 512) {
        // shift-rule suggestions for resolutions without a configured preset
        std::printf("note: no preset for %d^2; suggested sigmoid bias %.2f (configured %.2f), "
                    "suggested guidance lambda_lo %.2f (configured %.2f)\n",
                    res, sid::suggest_bias(res), cfg.train.weighting.bias,
                    -3.0 + 1.5 * std::log2(512.0 / res), cfg.sampler.guidance_interval.lambda_lo);
    }

    const int64_t steps = steps_override > 0 ? steps_override : cfg.train.max_steps;
    sid::TrainState st = sid::init_train(cfg.train, model_cfg);
    std::string csv = "step,loss,grad_norm,lr,bias_t\n";
    for (int64_t i = 0; i < steps; ++i) {
        sid::StepStats s = sid::train_step(st);
        csv += std::to_string(s.step) + "," + fmt(s.loss) + "," + fmt(s.grad_norm) + "," +
               fmt(s.lr) + "," + fmt(s.bias) + "\n";
        if (s.step % 100 == 0 || i + 1 == steps) {
            std::printf("step %lld  loss %.6f  |g| %.4f  lr %.2e  bias %.2f\n",
                        static_cast<long long>(s.step), s.loss, s.grad_norm, s.lr, s.bias);
        }
    }
    if (!metrics_out.empty()) write_text_atomic(metrics_out, csv);
    if (!ckpt_out.empty()) {
        st.model.save(ckpt_out);
        std::printf("checkpoint: %s (%lld params)\n", ckpt_out.c_str(),
                    static_cast<long long>(st.model.num_params()));
    }
    return 0;
}

int cmd_sample(const std::string& config_path, const std::string& ckpt, int64_t num, int steps,
               int64_t cls, bool toy_model, const std::string& outdir) {
    sid::LoadedConfig cfg = load_or_defaults(config_path);
    std::filesystem::create_directories(outdir);
    check_writable(outdir + "/sample");

    sid::UViTConfig model_cfg = toy_model ? cfg.toy_model() : cfg.model;
    sid::UViT model = sid::UViT::load(ckpt, model_cfg);
    sid::SamplerConfig scfg = cfg.sampler;
    if (steps > 0) scfg.num_steps = steps;

    std::vector<int64_t> labels;
    if (model_cfg.num_classes > 0) {
        labels.assign(static_cast<size_t>(num), 0);
        for (int64_t i = 0; i < num; ++i) {
            labels[static_cast<size_t>(i)] = cls >= 0 ? cls : i % model_cfg.num_classes;
        }
    }
    const sid::Shape ex{model_cfg.image_res, model_cfg.image_res, model_cfg.in_channels};
    sid::Tensor out = sid::sample(sid::model_denoiser(model), cfg.train.schedule, scfg, labels,
                                  num, ex);

    ordered_json sidecar;
    sidecar["seed"] = scfg.seed;
    sidecar["num_steps"] = scfg.num_steps;
    sidecar["gamma"] = scfg.gamma;
    sidecar["guidance"] = scfg.guidance_scale;
    sidecar["guidance_interval"] = {scfg.guidance_interval.lambda_lo,
                                    scfg.guidance_interval.lambda_hi};
    sidecar["clip_x"] = scfg.clip_x == sid::ClipX::Static ? "static" : "none";
    sidecar["schedule"] = cfg.train.schedule.name();
    sidecar["checkpoint"] = ckpt;

    const int64_t per = sid::numel(ex);
    if (model_cfg.image_res == 1) {
        // 1-D samples: one CSV instead of degenerate images
        std::string csv = "index,value\n";
        for (int64_t i = 0; i < num; ++i) {
            csv += std::to_string(i) + "," + fmt(out.data()[i * per]) + "\n";
        }
        write_text_atomic(outdir + "/samples.csv", csv);
        write_text_atomic(outdir + "/samples.json", sidecar.dump(2) + "\n");
        std::printf("wrote %lld scalar samples to %s/samples.csv\n", static_cast<long long>(num),
                    outdir.c_str());
        return 0;
    }
    for (int64_t i = 0; i < num; ++i) {
        char name[64];
        std::snprintf(name, sizeof(name), "sample_%04lld", static_cast<long long>(i));
        sid::Tensor img = sid::Tensor::from_data(
            ex, {out.data().begin() + i * per, out.data().begin() + (i + 1) * per});
        sid::write_ppm(outdir + "/" + name + ".ppm", img);
        ordered_json side = sidecar;
        side["index"] = i;
        if (!labels.empty()) side["class"] = labels[static_cast<size_t>(i)];
        write_text_atomic(outdir + "/" + std::string(name) + ".json", side.dump(2) + "\n");
    }
    std::printf("wrote %lld samples to %s\n", static_cast<long long>(num), outdir.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"sid2: pixel-space diffusion toolkit"};
    app.require_subcommand(1);

    // schedule
    auto* sc = app.add_subcommand("schedule", "dump a log-SNR schedule as CSV");
    std::string sc_kind = "cosine_interpolated";
    int sc_res = 512, sc_low = 32, sc_high = 512, sc_shift = 64, sc_points = 101;
    double sc_min = -10.0, sc_max = 10.0;
    std::string sc_out = "schedule.csv";
    sc->add_option("--kind", sc_kind, "cosine | cosine_shifted | cosine_interpolated");
    sc->add_option("--res", sc_res, "image resolution");
    sc->add_option("--low", sc_low, "interpolated: low noise resolution");
    sc->add_option("--high", sc_high, "interpolated: high noise resolution");
    sc->add_option("--shift", sc_shift, "shifted: shift resolution");
    sc->add_option("--logsnr-min", sc_min, "log-SNR at t=1 (before shifts)");
    sc->add_option("--logsnr-max", sc_max, "log-SNR at t=0 (before shifts)");
    sc->add_option("--points", sc_points, "number of rows");
    sc->add_option("--out", sc_out, "output CSV path");

    // losscurve
    auto* lc = app.add_subcommand("losscurve", "dump eps/x-space weighting curves as CSV");
    double lc_bias = -3.0, lc_shift = 0.0, lc_min = -15.0, lc_max = 15.0;
    int lc_points = 301;
    bool lc_norm = false;
    std::string lc_out = "losscurve.csv";
    lc->add_option("--bias", lc_bias, "sigmoid bias b");
    lc->add_option("--edm-shift", lc_shift, "lambda translation of the EDM curves");
    lc->add_option("--lambda-min", lc_min, "grid start");
    lc->add_option("--lambda-max", lc_max, "grid end");
    lc->add_option("--points", lc_points, "grid size");
    lc->add_flag("--normalize-max", lc_norm, "scale every curve to max 1");
    lc->add_option("--out", lc_out, "output CSV path");

    // oracle
    auto* oc = app.add_subcommand("oracle", "analytic low-bit eps-mse curves as CSV");
    int oc_bits = 8;
    std::string oc_mixture;
    double oc_min = -30.0, oc_max = 30.0, oc_wbias = 0.0;
    int oc_points = 121;
    std::string oc_out = "oracle.csv";
    auto* oc_wb = oc->add_option("--weight-bias", oc_wbias,
                                 "multiply by the sigmoid weighting sigma(b - lambda)");
    oc->add_option("--bits", oc_bits, "data precision n (2^n grid)");
    oc->add_option("--mixture", oc_mixture, "precision mixture, e.g. 8:1,7:4,6:4,5:6");
    oc->add_option("--lambda-min", oc_min, "grid start");
    oc->add_option("--lambda-max", oc_max, "grid end");
    oc->add_option("--points", oc_points, "grid size");
    oc->add_option("--out", oc_out, "output CSV path");

    // flops
    auto* fc = app.add_subcommand("flops", "FLOP accounting for a model config");
    std::string fc_config, fc_json;
    int fc_res = 0;
    fc->add_option("--config", fc_config, "config file (defaults when omitted)");
    fc->add_option("--res", fc_res, "input resolution override");
    fc->add_option("--json", fc_json, "also write a JSON report here");

    // memory
    auto* mc = app.add_subcommand("memory", "skip-retention memory accounting");
    std::string mc_config, mc_json;
    int mc_res = 0, mc_batch = 1;
    mc->add_option("--config", mc_config, "config file (defaults when omitted)");
    mc->add_option("--res", mc_res, "input resolution override");
    mc->add_option("--batch", mc_batch, "batch size multiplier");
    mc->add_option("--json", mc_json, "also write a JSON report here");

    // train
    auto* tc = app.add_subcommand("train", "toy-scale training loop");
    std::string tc_config, tc_ckpt = "model.ckpt", tc_metrics = "metrics.csv";
    int64_t tc_steps = 0;
    bool tc_toy = false;
    tc->add_option("--config", tc_config, "config file (defaults when omitted)");
    tc->add_option("--steps", tc_steps, "override max_train_steps");
    tc->add_flag("--toy-model", tc_toy, "size the model to the dataset");
    tc->add_option("--out", tc_ckpt, "checkpoint output path");
    tc->add_option("--metrics", tc_metrics, "metrics CSV path");

    // sample
    auto* xc = app.add_subcommand("sample", "sample from a checkpoint");
    std::string xc_config, xc_ckpt, xc_outdir = "samples";
    int64_t xc_num = 4, xc_class = -1;
    int xc_steps = 0;
    bool xc_toy = false;
    xc->add_option("--config", xc_config, "config file (defaults when omitted)");
    xc->add_option("--ckpt", xc_ckpt, "checkpoint path")->required();
    xc->add_option("--num", xc_num, "number of samples");
    xc->add_option("--steps", xc_steps, "override num_steps");
    xc->add_option("--class", xc_class, "class id (-1 cycles classes)");
    xc->add_flag("--toy-model", xc_toy, "size the model to the dataset");
    xc->add_option("--outdir", xc_outdir, "output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);  // exits 0 with help text
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;  // usage error
    }

    try {
        if (sc->parsed()) {
            return cmd_schedule(sc_kind, sc_res, sc_low, sc_high, sc_shift, sc_min, sc_max,
                                sc_points, sc_out);
        }
        if (lc->parsed()) {
            return cmd_losscurve(lc_bias, lc_shift, lc_min, lc_max, lc_points, lc_norm, lc_out);
        }
        if (oc->parsed()) {
            return cmd_oracle(oc_bits, oc_mixture, oc_min, oc_max, oc_points, oc_wbias,
                              oc_wb->count() > 0, oc_out);
        }
        if (fc->parsed()) return cmd_flops(fc_config, fc_res, fc_json);
        if (mc->parsed()) return cmd_memory(mc_config, mc_res, mc_batch, mc_json);
        if (tc->parsed()) return cmd_train(tc_config, tc_steps, tc_toy, tc_ckpt, tc_metrics);
        if (xc->parsed()) {
            return cmd_sample(xc_config, xc_ckpt, xc_num, xc_steps, xc_class, xc_toy, xc_outdir);
        }
    } catch (const sid::ConfigError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}

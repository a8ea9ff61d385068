#include "sid/uvit.hpp"

#include <cmath>

namespace sid {

int UViTConfig::token_res(int level) const { return (image_res / patch_size) >> level; }

int UViTConfig::resolved_temb_dim() const {
    if (temb_dim > 0) return temb_dim;
    return std::max(32, 4 * channels.at(0));
}

int UViTConfig::heads_at(int level) const {
    const int c = channels.at(static_cast<size_t>(level));
    if (c < head_dim) return 1;
    if (c % head_dim != 0) {
        throw ConfigError("uvit: channels " + std::to_string(c) + " not divisible by head_dim " +
                          std::to_string(head_dim));
    }
    return c / head_dim;
}

void UViTConfig::validate() const {
    if (channels.empty()) throw ConfigError("uvit: channels must be non-empty");
    const size_t n = channels.size();
    if (block_type.size() != n || block_dropout.size() != n) {
        throw ConfigError("uvit: block_type/block_dropout must have one entry per level");
    }
    if (num_down_blocks.size() != n - 1 || num_up_blocks.size() != n - 1) {
        throw ConfigError("uvit: num_down/up_blocks must have levels-1 entries");
    }
    if (patch_size != 1 && patch_size != 2 && patch_size != 4) {
        throw ConfigError("uvit: patch_size must be 1, 2 or 4");
    }
    if (image_res <= 0 || image_res % patch_size != 0) {
        throw ConfigError("uvit: patch_size must divide image_res");
    }
    const int s0 = image_res / patch_size;
    if (s0 % (1 << (n - 1)) != 0 || token_res(static_cast<int>(n) - 1) < 1) {
        throw ConfigError("uvit: " + std::to_string(n) + " levels do not fit token grid " +
                          std::to_string(s0));
    }
    for (int c : channels) {
        if (c < 1) throw ConfigError("uvit: channels must be positive");
    }
    for (int b : num_down_blocks) {
        if (b < 0) throw ConfigError("uvit: block counts must be >= 0");
    }
    for (int b : num_up_blocks) {
        if (b < 0) throw ConfigError("uvit: block counts must be >= 0");
    }
    if (num_mid_blocks < 0) throw ConfigError("uvit: num_mid_blocks must be >= 0");
    for (double d : block_dropout) {
        if (!(d >= 0.0 && d < 1.0)) throw ConfigError("uvit: dropout must be in [0,1)");
    }
    for (size_t l = 0; l < n; ++l) {
        if (block_type[l] == BlockKind::Transformer) (void)heads_at(static_cast<int>(l));
    }
    if (num_classes < 0) throw ConfigError("uvit: num_classes must be >= 0");
}

// ---------------------------------------------------------------------------
// parameter walker: one source of truth for names, shapes and inits
// ---------------------------------------------------------------------------

namespace detail {

struct UvitParamMaker {
    std::vector<ParamSpec>* specs = nullptr;  // record mode: shapes only
    NamedTensors* store = nullptr;            // build mode: allocate + register
    Rng* rng = nullptr;

    Tensor operator()(const std::string& name, Shape shape, ParamSpec::Init init,
                      double stddev = 0.0) {
        if (specs != nullptr) {
            specs->push_back({name, shape, init, stddev});
            return {};
        }
        Tensor t;
        switch (init) {
            case ParamSpec::Init::Zero:
                t = Tensor::zeros(shape);
                break;
            case ParamSpec::Init::One:
                t = Tensor::full(shape, 1.0);
                break;
            case ParamSpec::Init::Normal:
                t = Tensor::randn(shape, *rng, stddev);
                break;
            case ParamSpec::Init::SkipSelect: {
                // [2C, C]: zero on the current half, identity on the skip half
                t = Tensor::zeros(shape);
                const int64_t c = shape[1];
                auto d = t.mutable_data();
                for (int64_t i = 0; i < c; ++i) d[static_cast<size_t>((c + i) * c + i)] = 1.0;
                break;
            }
        }
        t.set_requires_grad(true);
        store->emplace_back(name, t);
        return t;
    }
};

}  // namespace detail

void UViT::walk_params(const UViTConfig& cfg, detail::UvitParamMaker& mk, UViT* self) {
    const int f = cfg.resolved_temb_dim();
    const int64_t cin_p = static_cast<int64_t>(cfg.in_channels) * cfg.patch_size * cfg.patch_size;
    const int64_t c0 = cfg.channels[0];

    self->in_w =
        mk("in_proj.w", {cin_p, c0}, ParamSpec::Init::Normal, 1.0 / std::sqrt(double(cin_p)));
    self->in_b = mk("in_proj.b", {c0}, ParamSpec::Init::Zero);
    self->temb_w1 = mk("temb.w1", {f, f}, ParamSpec::Init::Normal, 1.0 / std::sqrt(double(f)));
    self->temb_b1 = mk("temb.b1", {f}, ParamSpec::Init::Zero);
    self->temb_w2 = mk("temb.w2", {f, f}, ParamSpec::Init::Normal, 1.0 / std::sqrt(double(f)));
    self->temb_b2 = mk("temb.b2", {f}, ParamSpec::Init::Zero);
    if (cfg.num_classes > 0) {
        self->class_embed =
            mk("class_embed", {cfg.num_classes + 1, f}, ParamSpec::Init::Normal, 0.02);
    }

    auto make_block = [&](const std::string& p, int64_t c, BlockKind kind) -> BlockP {
        auto zero = ParamSpec::Init::Zero;
        auto one = ParamSpec::Init::One;
        auto nrm = ParamSpec::Init::Normal;
        if (kind == BlockKind::ResBlock) {
            ResBlockP b;
            b.ln_g = mk(p + ".ln_g", {c}, one);
            b.ln_b = mk(p + ".ln_b", {c}, zero);
            b.scale_w = mk(p + ".scale_w", {f, c}, zero);
            b.scale_b = mk(p + ".scale_b", {c}, zero);
            b.shift_w = mk(p + ".shift_w", {f, c}, zero);
            b.shift_b = mk(p + ".shift_b", {c}, zero);
            b.conv1_k = mk(p + ".conv1_k", {3, 3, c, c}, nrm, 1.0 / std::sqrt(9.0 * double(c)));
            b.conv1_b = mk(p + ".conv1_b", {c}, zero);
            b.conv2_k = mk(p + ".conv2_k", {3, 3, c, c}, zero);  // identity at init
            b.conv2_b = mk(p + ".conv2_b", {c}, zero);
            return b;
        }
        TransformerP b;
        const double s = 1.0 / std::sqrt(double(c));
        b.ln1_g = mk(p + ".ln1_g", {c}, one);
        b.ln1_b = mk(p + ".ln1_b", {c}, zero);
        b.scale1_w = mk(p + ".scale1_w", {f, c}, zero);
        b.scale1_b = mk(p + ".scale1_b", {c}, zero);
        b.shift1_w = mk(p + ".shift1_w", {f, c}, zero);
        b.shift1_b = mk(p + ".shift1_b", {c}, zero);
        b.wq = mk(p + ".attn.wq", {c, c}, nrm, s);
        b.bq = mk(p + ".attn.bq", {c}, zero);
        b.wk = mk(p + ".attn.wk", {c, c}, nrm, s);
        b.bk = mk(p + ".attn.bk", {c}, zero);
        b.wv = mk(p + ".attn.wv", {c, c}, nrm, s);
        b.bv = mk(p + ".attn.bv", {c}, zero);
        b.wo = mk(p + ".attn.wo", {c, c}, zero);  // identity at init
        b.bo = mk(p + ".attn.bo", {c}, zero);
        b.ln2_g = mk(p + ".ln2_g", {c}, one);
        b.ln2_b = mk(p + ".ln2_b", {c}, zero);
        b.scale2_w = mk(p + ".scale2_w", {f, c}, zero);
        b.scale2_b = mk(p + ".scale2_b", {c}, zero);
        b.shift2_w = mk(p + ".shift2_w", {f, c}, zero);
        b.shift2_b = mk(p + ".shift2_b", {c}, zero);
        b.mlp_w1 = mk(p + ".mlp.w1", {c, 4 * c}, nrm, s);
        b.mlp_b1 = mk(p + ".mlp.b1", {4 * c}, zero);
        b.mlp_w2 = mk(p + ".mlp.w2", {4 * c, c}, zero);  // identity at init
        b.mlp_b2 = mk(p + ".mlp.b2", {c}, zero);
        return b;
    };

    const int n = cfg.levels();
    for (int l = 0; l < n; ++l) {
        LevelP lv;
        const int64_t c = cfg.channels[static_cast<size_t>(l)];
        const std::string lp = "level" + std::to_string(l);
        const BlockKind kind = cfg.block_type[static_cast<size_t>(l)];
        if (kind == BlockKind::Transformer) {
            // learned positional embedding, zero-initialized to preserve
            // identity at initialization; added once per level
            const int64_t s = cfg.token_res(l);
            lv.pos = mk(lp + ".pos", {s, s, c}, ParamSpec::Init::Zero);
        }
        if (l < n - 1) {
            const int64_t c_next = cfg.channels[static_cast<size_t>(l + 1)];
            const int nd = cfg.num_down_blocks[static_cast<size_t>(l)];
            const int nu = cfg.num_up_blocks[static_cast<size_t>(l)];
            for (int i = 0; i < nd; ++i) {
                lv.down.push_back(make_block(lp + ".down" + std::to_string(i), c, kind));
            }
            lv.dw =
                mk(lp + ".dw", {c, c_next}, ParamSpec::Init::Normal, 1.0 / std::sqrt(double(c)));
            lv.uw = mk(lp + ".uw", {c_next, c}, ParamSpec::Init::Normal,
                       1.0 / std::sqrt(double(c_next)));
            for (int i = 0; i < nu; ++i) {
                if (cfg.blockwise_skips && i < nd) {
                    lv.up_skip_w.push_back(mk(lp + ".up" + std::to_string(i) + ".skip_w",
                                              {2 * c, c}, ParamSpec::Init::SkipSelect));
                }
                lv.up.push_back(make_block(lp + ".up" + std::to_string(i), c, kind));
            }
        } else {
            for (int i = 0; i < cfg.num_mid_blocks; ++i) {
                lv.mid.push_back(make_block(lp + ".mid" + std::to_string(i), c, kind));
            }
        }
        self->levels_.push_back(std::move(lv));
    }

    self->out_w = mk("out_proj.w", {c0, cin_p}, ParamSpec::Init::Zero);
    self->out_b = mk("out_proj.b", {cin_p}, ParamSpec::Init::Zero);
}

std::vector<ParamSpec> parameter_shapes(const UViTConfig& cfg) {
    cfg.validate();
    std::vector<ParamSpec> specs;
    detail::UvitParamMaker mk;
    mk.specs = &specs;
    UViT scratch;  // record mode fills the tree with undefined handles, discarded
    scratch.cfg_ = cfg;
    UViT::walk_params(cfg, mk, &scratch);
    return specs;
}

int64_t parameter_count(const UViTConfig& cfg) {
    int64_t total = 0;
    for (const auto& s : parameter_shapes(cfg)) total += numel(s.shape);
    return total;
}

UViT UViT::build(const UViTConfig& cfg, Rng& rng) {
    cfg.validate();
    UViT m;
    m.cfg_ = cfg;
    detail::UvitParamMaker mk;
    mk.store = &m.params_;
    mk.rng = &rng;
    walk_params(cfg, mk, &m);
    return m;
}

int64_t UViT::num_params() const {
    int64_t total = 0;
    for (const auto& [name, t] : params_) total += t.numel();
    return total;
}

void UViT::save(const std::string& path) const { save_checkpoint(path, params_); }

UViT UViT::load(const std::string& path, const UViTConfig& cfg) {
    Rng rng(0);
    UViT m = build(cfg, rng);
    NamedTensors loaded = load_checkpoint(path);
    if (loaded.size() != m.params_.size()) {
        throw IoError("uvit load: checkpoint has " + std::to_string(loaded.size()) +
                      " tensors, model needs " + std::to_string(m.params_.size()));
    }
    for (size_t i = 0; i < loaded.size(); ++i) {
        auto& [name, t] = m.params_[i];
        auto& [lname, lt] = loaded[i];
        if (lname != name || lt.shape() != t.shape()) {
            throw IoError("uvit load: mismatch at " + name + " vs " + lname);
        }
        auto dst = t.mutable_data();
        auto src = lt.data();
        std::copy(src.begin(), src.end(), dst.begin());
    }
    return m;
}

void UViT::zero_mid_level() {
    const std::string prefix = "level" + std::to_string(cfg_.levels() - 1) + ".mid";
    for (auto& [name, t] : params_) {
        if (name.rfind(prefix, 0) == 0) {
            auto d = t.mutable_data();
            std::fill(d.begin(), d.end(), 0.0);
        }
    }
}

// ---------------------------------------------------------------------------
// forward
// ---------------------------------------------------------------------------

Tensor logsnr_features(const std::vector<NoiseLevel>& levels, int dim) {
    if (dim < 2 || dim % 2 != 0) throw ConfigError("logsnr_features: dim must be even and >= 2");
    const int half = dim / 2;
    const int64_t n = static_cast<int64_t>(levels.size());
    auto out = Tensor::zeros({n, dim});
    auto d = out.mutable_data();
    for (int64_t i = 0; i < n; ++i) {
        const double pos = levels[static_cast<size_t>(i)].lambda * 25.0;
        for (int k = 0; k < half; ++k) {
            const double expo = half > 1 ? static_cast<double>(k) / (half - 1) : 0.0;
            const double freq = std::exp(-std::log(10000.0) * expo);
            d[static_cast<size_t>(i * dim + k)] = std::sin(pos * freq);
            d[static_cast<size_t>(i * dim + half + k)] = std::cos(pos * freq);
        }
    }
    return out;
}

Tensor UViT::temb_from(const std::vector<NoiseLevel>& levels,
                       const std::vector<int64_t>& labels) const {
    const int f = cfg_.resolved_temb_dim();
    Tensor feats = logsnr_features(levels, f);
    if (cfg_.num_classes > 0) {
        if (labels.size() != levels.size()) {
            throw DimensionError("uvit: labels size vs batch");
        }
        std::vector<int64_t> idx(labels.size());
        for (size_t i = 0; i < labels.size(); ++i) {
            const int64_t l = labels[i];
            if (l >= cfg_.num_classes) throw ConfigError("uvit: label out of range");
            idx[i] = l < 0 ? cfg_.num_classes : l;  // -1 selects the null token
        }
        feats = add(feats, gather_rows(class_embed, idx));
    } else if (!labels.empty()) {
        throw ConfigError("uvit: labels given to an unconditional model");
    }
    return linear(silu(linear(feats, temb_w1, temb_b1)), temb_w2, temb_b2);
}

Tensor UViT::apply_block(const BlockP& blk, const Tensor& x, const Tensor& temb, double drop,
                         Rng* rng) const {
    if (const auto* b = std::get_if<ResBlockP>(&blk)) {
        auto s = linear(temb, b->scale_w, b->scale_b);
        auto sh = linear(temb, b->shift_w, b->shift_b);
        auto h = film(layer_norm(x, b->ln_g, b->ln_b), s, sh);
        h = conv2d_3x3(silu(h), b->conv1_k, b->conv1_b);
        h = conv2d_3x3(silu(h), b->conv2_k, b->conv2_b);
        if (rng != nullptr && drop > 0.0) h = dropout(h, drop, *rng);
        return add(x, h);
    }
    const auto& b = std::get<TransformerP>(blk);
    const int64_t n = x.dim(0), hh = x.dim(1), ww = x.dim(2), c = x.dim(3);
    auto t = reshape(x, {n, hh * ww, c});

    auto s1 = linear(temb, b.scale1_w, b.scale1_b);
    auto sh1 = linear(temb, b.shift1_w, b.shift1_b);
    AttentionParams ap;
    ap.wq = b.wq;
    ap.bq = b.bq;
    ap.wk = b.wk;
    ap.bk = b.bk;
    ap.wv = b.wv;
    ap.bv = b.bv;
    ap.wo = b.wo;
    ap.bo = b.bo;
    ap.num_heads = static_cast<int>(c) < cfg_.head_dim ? 1 : static_cast<int>(c) / cfg_.head_dim;
    auto a = self_attention(film(layer_norm(t, b.ln1_g, b.ln1_b), s1, sh1), ap);
    if (rng != nullptr && drop > 0.0) a = dropout(a, drop, *rng);
    t = add(t, a);

    auto s2 = linear(temb, b.scale2_w, b.scale2_b);
    auto sh2 = linear(temb, b.shift2_w, b.shift2_b);
    auto m = film(layer_norm(t, b.ln2_g, b.ln2_b), s2, sh2);
    m = linear(silu(linear(m, b.mlp_w1, b.mlp_b1)), b.mlp_w2, b.mlp_b2);
    if (rng != nullptr && drop > 0.0) m = dropout(m, drop, *rng);
    t = add(t, m);
    return reshape(t, {n, hh, ww, c});
}

Tensor UViT::level_forward(size_t lev, Tensor x, const Tensor& temb, Rng* rng) const {
    const LevelP& lp = levels_[lev];
    const double drop = cfg_.block_dropout[lev];
    if (lp.pos.defined()) x = add_bias(x, lp.pos);
    if (lev + 1 == levels_.size()) {
        for (const auto& b : lp.mid) x = apply_block(b, x, temb, drop, rng);
        return x;
    }
    std::vector<Tensor> skips;
    for (const auto& b : lp.down) {
        x = apply_block(b, x, temb, drop, rng);
        if (cfg_.blockwise_skips) skips.push_back(x);
    }
    const Tensor h = x;
    Tensor d = linear_nobias(avg_pool2(h), lp.dw);
    Tensor inner = level_forward(lev + 1, d, temb, rng);

    if (!cfg_.blockwise_skips) {
        Tensor y = add(nearest_upsample2(linear_nobias(sub(inner, d), lp.uw)), h);
        for (const auto& b : lp.up) y = apply_block(b, y, temb, drop, rng);
        return y;
    }
    // classic U-Net style: decoder blocks consume encoder activations
    Tensor y = nearest_upsample2(linear_nobias(inner, lp.uw));
    const size_t nd = lp.down.size();
    for (size_t j = 0; j < lp.up.size(); ++j) {
        if (j < nd) {
            y = linear_nobias(concat_channels(y, skips[nd - 1 - j]), lp.up_skip_w[j]);
        }
        y = apply_block(lp.up[j], y, temb, drop, rng);
    }
    return y;
}

Tensor UViT::core_forward(const Tensor& x, const std::vector<NoiseLevel>& levels,
                          Rng* dropout_rng) const {
    if (x.rank() != 4 || x.dim(3) != cfg_.channels[0]) {
        throw DimensionError("core_forward: expected [N, S, S, " +
                             std::to_string(cfg_.channels[0]) + "]");
    }
    std::vector<int64_t> no_labels;
    Tensor temb = cfg_.num_classes > 0
                      ? temb_from(levels, std::vector<int64_t>(levels.size(), -1))
                      : temb_from(levels, no_labels);
    return level_forward(0, x, temb, dropout_rng);
}

Prediction UViT::forward(const Tensor& z, const std::vector<NoiseLevel>& levels,
                         const std::vector<int64_t>& labels, Rng* dropout_rng) const {
    if (z.rank() != 4 || z.dim(1) != cfg_.image_res || z.dim(2) != cfg_.image_res ||
        z.dim(3) != cfg_.in_channels) {
        throw DimensionError("uvit forward: expected [N," + std::to_string(cfg_.image_res) + "," +
                             std::to_string(cfg_.image_res) + "," +
                             std::to_string(cfg_.in_channels) + "], got " + shape_str(z.shape()));
    }
    if (levels.size() != static_cast<size_t>(z.dim(0))) {
        throw DimensionError("uvit forward: levels size vs batch");
    }
    Tensor temb = temb_from(levels, labels);
    Tensor x = space_to_depth(z, cfg_.patch_size);
    x = linear(x, in_w, in_b);
    x = level_forward(0, x, temb, dropout_rng);
    x = linear(x, out_w, out_b);
    Prediction out;
    out.space = PredSpace::V;
    out.value = depth_to_space(x, cfg_.patch_size);
    out.level = levels[0];
    return out;
}

// ---------------------------------------------------------------------------
// memory accounting
// ---------------------------------------------------------------------------

int64_t feature_map_bytes(int64_t res, int64_t channels) { return res * res * channels * 2; }

MemoryReport activation_memory(const UViTConfig& cfg, int input_res, int batch) {
    if (input_res <= 0 || input_res % cfg.patch_size != 0) {
        throw ConfigError("activation_memory: patch must divide input_res");
    }
    MemoryReport rep;
    const int n = cfg.levels();
    for (int l = 0; l + 1 < n; ++l) {
        const int64_t res = (input_res / cfg.patch_size) >> l;
        const int64_t c = cfg.channels[static_cast<size_t>(l)];
        const int64_t c_next = cfg.channels[static_cast<size_t>(l + 1)];
        MemoryReport::LevelMem lm;
        lm.level = l;
        lm.res = res;
        lm.channels = c;
        lm.blockwise_bytes =
            batch * cfg.num_down_blocks[static_cast<size_t>(l)] * feature_map_bytes(res, c);
        lm.residual_bytes =
            batch * (feature_map_bytes(res, c) + feature_map_bytes(res / 2, c_next));
        rep.per_level.push_back(lm);
        rep.blockwise_total += lm.blockwise_bytes;
        rep.residual_total += lm.residual_bytes;
    }
    return rep;
}

int64_t skip_memory_bytes(const UViTConfig& cfg, int input_res, SkipScheme scheme, int batch) {
    MemoryReport rep = activation_memory(cfg, input_res, batch);
    return scheme == SkipScheme::BlockwiseSkip ? rep.blockwise_total : rep.residual_total;
}

}  // namespace sid

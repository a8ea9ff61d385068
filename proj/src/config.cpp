#include "sid/config.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

namespace sid {

namespace {

struct Value {
    enum class Kind { Num, Str, List, Tuple };
    Kind kind = Kind::Str;
    double num = 0.0;
    std::string str;
    std::vector<Value> items;
    int line = 0;
};

[[noreturn]] void fail(const std::string& key, int line, const std::string& what) {
    throw ConfigError("config: key '" + key + "' (line " + std::to_string(line) + "): " + what);
}

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

bool parse_number(const std::string& raw, double* out) {
    std::string s;
    for (char c : raw) {
        if (c != '_') s.push_back(c);  // 1_000_000 style literals
    }
    if (s.empty()) return false;
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (end == nullptr || *end != '\0') return false;
    *out = v;
    return true;
}

std::vector<std::string> split_top_level(const std::string& s) {
    std::vector<std::string> parts;
    int depth = 0;
    std::string cur;
    for (char c : s) {
        if (c == '[' || c == '(') depth++;
        if (c == ']' || c == ')') depth--;
        if (c == ',' && depth == 0) {
            parts.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    if (!trim(cur).empty()) parts.push_back(cur);
    return parts;
}

Value parse_value(const std::string& key, const std::string& raw, int line) {
    const std::string s = trim(raw);
    Value v;
    v.line = line;
    if (s.empty()) fail(key, line, "missing value");
    if (s.front() == '[' || s.front() == '(') {
        const char close = s.front() == '[' ? ']' : ')';
        if (s.back() != close) fail(key, line, "unterminated bracket");
        v.kind = s.front() == '[' ? Value::Kind::List : Value::Kind::Tuple;
        for (const auto& part : split_top_level(s.substr(1, s.size() - 2))) {
            v.items.push_back(parse_value(key, part, line));
        }
        return v;
    }
    if (s.front() == '\'' || s.front() == '"') {
        if (s.size() < 2 || s.back() != s.front()) fail(key, line, "unterminated string");
        v.kind = Value::Kind::Str;
        v.str = s.substr(1, s.size() - 2);
        return v;
    }
    double num;
    if (parse_number(s, &num)) {
        v.kind = Value::Kind::Num;
        v.num = num;
        return v;
    }
    v.kind = Value::Kind::Str;  // bare token: v, sigmoid:-3, ddpm
    v.str = s;
    return v;
}

struct FileConfig {
    std::map<std::string, Value> values;
    std::set<std::string> consumed;

    bool has(const std::string& key) const { return values.count(key) > 0; }

    const Value* get(const std::string& key) {
        auto it = values.find(key);
        if (it == values.end()) return nullptr;
        consumed.insert(key);
        return &it->second;
    }

    double num(const std::string& key, double fallback) {
        const Value* v = get(key);
        if (v == nullptr) return fallback;
        if (v->kind == Value::Kind::Num) return v->num;
        double parsed;  // quoted numbers like logvar_type = '0.3'
        if (v->kind == Value::Kind::Str && parse_number(v->str, &parsed)) return parsed;
        fail(key, v->line, "expected a number");
    }

    int64_t integer(const std::string& key, int64_t fallback) {
        const Value* v = get(key);
        if (v == nullptr) return fallback;
        if (v->kind != Value::Kind::Num || v->num != std::floor(v->num)) {
            fail(key, v->line, "expected an integer");
        }
        return static_cast<int64_t>(v->num);
    }

    std::string str(const std::string& key, const std::string& fallback) {
        const Value* v = get(key);
        if (v == nullptr) return fallback;
        if (v->kind != Value::Kind::Str) fail(key, v->line, "expected a string");
        return v->str;
    }

    std::vector<double> num_list(const std::string& key, std::vector<double> fallback) {
        const Value* v = get(key);
        if (v == nullptr) return fallback;
        if (v->kind != Value::Kind::List && v->kind != Value::Kind::Tuple) {
            fail(key, v->line, "expected a list");
        }
        std::vector<double> out;
        for (const auto& item : v->items) {
            if (item.kind != Value::Kind::Num) fail(key, v->line, "expected numbers in list");
            out.push_back(item.num);
        }
        return out;
    }

    std::vector<std::string> str_list(const std::string& key, std::vector<std::string> fallback) {
        const Value* v = get(key);
        if (v == nullptr) return fallback;
        if (v->kind != Value::Kind::List) fail(key, v->line, "expected a list");
        std::vector<std::string> out;
        for (const auto& item : v->items) {
            if (item.kind != Value::Kind::Str) fail(key, v->line, "expected strings in list");
            out.push_back(item.str);
        }
        return out;
    }

    std::pair<double, double> tuple2(const std::string& key, std::pair<double, double> fallback) {
        const Value* v = get(key);
        if (v == nullptr) return fallback;
        if ((v->kind != Value::Kind::Tuple && v->kind != Value::Kind::List) ||
            v->items.size() != 2 || v->items[0].kind != Value::Kind::Num ||
            v->items[1].kind != Value::Kind::Num) {
            fail(key, v->line, "expected a 2-tuple of numbers");
        }
        return {v->items[0].num, v->items[1].num};
    }

    void reject_unknown() const {
        for (const auto& [key, v] : values) {
            if (consumed.count(key) == 0) {
                fail(key, v.line, "unknown key");
            }
        }
    }
};

FileConfig parse_native(std::istream& in) {
    FileConfig fc;
    std::string line;
    int lineno = 0;
    std::string pending_key;
    std::string pending_value;
    int pending_line = 0;
    int depth = 0;
    auto flush = [&]() {
        if (pending_key.empty()) return;
        if (fc.values.count(pending_key) > 0) {
            fail(pending_key, pending_line, "duplicate key");
        }
        std::string v = trim(pending_value);
        if (!v.empty() && v.back() == ',') v.pop_back();  // A.7 listings end lines with commas
        fc.values.emplace(pending_key, parse_value(pending_key, v, pending_line));
        pending_key.clear();
        pending_value.clear();
    };
    while (std::getline(in, line)) {
        ++lineno;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        std::string t = trim(line);
        if (t.empty()) continue;
        if (depth > 0) {
            // continuation of a bracketed value from the previous line
            pending_value += " " + t;
            for (char c : t) {
                if (c == '[' || c == '(') depth++;
                if (c == ']' || c == ')') depth--;
            }
            if (depth == 0) flush();
            continue;
        }
        const size_t eq = t.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config: line " + std::to_string(lineno) + ": expected key = value");
        }
        std::string key = trim(t.substr(0, eq));
        std::string val = trim(t.substr(eq + 1));
        if (key.empty()) {
            throw ConfigError("config: line " + std::to_string(lineno) + ": empty key");
        }
        pending_key = key;
        pending_value = val;
        pending_line = lineno;
        depth = 0;
        for (char c : val) {
            if (c == '[' || c == '(') depth++;
            if (c == ']' || c == ')') depth--;
        }
        if (depth == 0) flush();
    }
    if (depth != 0) fail(pending_key, pending_line, "unterminated bracket");
    flush();
    return fc;
}

Value value_from_json(const std::string& key, const nlohmann::json& j) {
    Value v;
    if (j.is_number()) {
        v.kind = Value::Kind::Num;
        v.num = j.get<double>();
    } else if (j.is_string()) {
        v.kind = Value::Kind::Str;
        v.str = j.get<std::string>();
    } else if (j.is_boolean()) {
        v.kind = Value::Kind::Num;
        v.num = j.get<bool>() ? 1.0 : 0.0;
    } else if (j.is_array()) {
        v.kind = Value::Kind::List;
        for (const auto& item : j) v.items.push_back(value_from_json(key, item));
    } else {
        throw ConfigError("config: key '" + key + "': unsupported JSON value");
    }
    return v;
}

FileConfig parse_json_file(std::istream& in) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config: invalid JSON: ") + e.what());
    }
    if (!j.is_object()) throw ConfigError("config: JSON root must be an object");
    FileConfig fc;
    for (const auto& [key, value] : j.items()) {
        fc.values.emplace(key, value_from_json(key, value));
    }
    return fc;
}

BlockKind block_kind_from(const std::string& s, const std::string& key, int line) {
    if (s == "ResBlock") return BlockKind::ResBlock;
    if (s == "Transformer") return BlockKind::Transformer;
    fail(key, line, "unknown block type '" + s + "'");
}

WeightingSpec parse_loss_type(FileConfig& fc) {
    WeightingSpec w;
    const std::string s = fc.str("loss_type", "sigmoid:0");
    const size_t colon = s.find(':');
    const std::string kind = s.substr(0, colon);
    double bias = 0.0;
    if (colon != std::string::npos && !parse_number(s.substr(colon + 1), &bias)) {
        throw ConfigError("config: loss_type '" + s + "': bad bias");
    }
    w.bias = bias;
    if (kind == "sigmoid") {
        w.kind = WeightingKind::Sigmoid;
    } else if (kind == "power") {
        w.kind = WeightingKind::Power;
        w.power_levels = static_cast<int>(fc.integer("downsample_levels", 0));
    } else if (kind == "edm") {
        w.kind = WeightingKind::Edm;
        w.edm_shift = fc.num("edm_shift", 0.0);
    } else if (kind == "edm_monotonic") {
        w.kind = WeightingKind::EdmMonotonic;
        w.edm_shift = fc.num("edm_shift", 0.0);
    } else {
        throw ConfigError("config: loss_type '" + s + "': unknown weighting");
    }
    if (fc.has("time_shift_start")) {
        TimeShift ts;
        ts.b_start = fc.num("time_shift_start", 0.0);
        ts.b_end = fc.num("time_shift_end", w.bias);
        ts.t_b = fc.integer("time_shift_steps", 100000);
        w.time_shift = ts;
    }
    return w;
}

ToyDataset parse_dataset(const std::string& s) {
    if (s == "two_gaussians_1d") return ToyDataset::two_gaussians_1d();
    if (s == "shapes_16x16") return ToyDataset::shapes_16x16();
    if (s.rfind("grid_bits_1d:", 0) == 0) {
        return ToyDataset::grid_bits_1d(std::atoi(s.c_str() + 13));
    }
    if (s.rfind("file_folder:", 0) == 0) return ToyDataset::file_folder(s.substr(12));
    throw ConfigError("config: unknown dataset '" + s + "'");
}

}  // namespace

LogSnrSchedule schedule_from_name(const std::string& name, int image_res, double logsnr_min,
                                  double logsnr_max) {
    if (name == "cosine") return LogSnrSchedule::cosine(logsnr_min, logsnr_max);
    if (name.rfind("cosine_shifted_", 0) == 0) {
        const int shift = std::atoi(name.c_str() + 15);
        return LogSnrSchedule::cosine_shifted(logsnr_min, logsnr_max, image_res, shift);
    }
    if (name.rfind("cosine_interpolated_low_", 0) == 0) {
        const std::string rest = name.substr(24);
        const size_t high_pos = rest.find("_high_");
        if (high_pos != std::string::npos) {
            const int low = std::atoi(rest.substr(0, high_pos).c_str());
            const int high = std::atoi(rest.substr(high_pos + 6).c_str());
            return LogSnrSchedule::cosine_interpolated(logsnr_min, logsnr_max, image_res, low,
                                                       high);
        }
    }
    throw ConfigError("config: unknown diffusion_schedule '" + name + "'");
}

LoadedConfig config_defaults() {
    LoadedConfig out;

    UViTConfig& m = out.model;
    m.image_res = 128;
    m.in_channels = 3;
    m.patch_size = 1;
    m.channels = {128, 256, 512, 1024};
    m.num_down_blocks = {3, 3, 3};
    m.num_up_blocks = {3, 3, 3};
    m.num_mid_blocks = 16;
    m.block_type = {BlockKind::ResBlock, BlockKind::ResBlock, BlockKind::Transformer,
                    BlockKind::Transformer};
    m.block_dropout = {0.0, 0.0, 0.1, 0.1};
    m.num_classes = 1000;

    TrainConfig& t = out.train;
    t.batch_size = 2048;
    t.learning_rate = 1e-4;
    t.warmup_steps = 10000;
    t.adam_beta1 = 0.9;
    t.adam_beta2 = 0.99;
    t.adam_eps = 1e-12;
    t.weight_decay = 0.0;
    t.ema_decay = 0.9999;
    t.max_steps = 1000000;
    t.weighting.kind = WeightingKind::Sigmoid;
    t.weighting.bias = 0.0;
    t.schedule = LogSnrSchedule::cosine_interpolated(-10.0, 10.0, 128, 32, 128);
    t.label_drop_prob = 0.1;
    t.dataset = ToyDataset::shapes_16x16();

    SamplerConfig& s = out.sampler;
    s.num_steps = 512;
    s.gamma = 0.3;
    s.guidance_scale = 1.0;
    s.guidance_interval = {0.0, 5.0};
    s.clip_x = ClipX::Static;
    s.guidance_space = PredSpace::X;
    return out;
}

LoadedConfig config_load(const std::string& path) {
    std::ifstream in(path);
    if (!in.good()) throw IoError("config: cannot open " + path);
    const bool is_json = path.size() > 5 && path.substr(path.size() - 5) == ".json";
    FileConfig fc = is_json ? parse_json_file(in) : parse_native(in);

    LoadedConfig out = config_defaults();
    UViTConfig& m = out.model;
    TrainConfig& t = out.train;
    SamplerConfig& s = out.sampler;

    m.image_res = static_cast<int>(fc.integer("image_res", m.image_res));
    m.in_channels = static_cast<int>(fc.integer("in_channels", m.in_channels));
    m.patch_size = static_cast<int>(fc.integer("patching_size", m.patch_size));
    {
        std::vector<double> ch;
        for (int c : m.channels) ch.push_back(c);
        ch = fc.num_list("channels", ch);
        m.channels.clear();
        for (double c : ch) m.channels.push_back(static_cast<int>(c));
    }
    {
        std::vector<double> ud;
        for (int b : m.num_down_blocks) ud.push_back(b);
        ud = fc.num_list("num_updown_blocks", ud);
        m.num_down_blocks.clear();
        for (double b : ud) m.num_down_blocks.push_back(static_cast<int>(b));
        m.num_up_blocks = m.num_down_blocks;
        // asymmetric encoder/decoder splits override the symmetric key
        if (fc.has("num_down_blocks")) {
            auto v = fc.num_list("num_down_blocks", {});
            m.num_down_blocks.clear();
            for (double b : v) m.num_down_blocks.push_back(static_cast<int>(b));
        }
        if (fc.has("num_up_blocks")) {
            auto v = fc.num_list("num_up_blocks", {});
            m.num_up_blocks.clear();
            for (double b : v) m.num_up_blocks.push_back(static_cast<int>(b));
        }
    }
    m.num_mid_blocks = static_cast<int>(fc.integer("num_mid_blocks", m.num_mid_blocks));
    {
        std::vector<std::string> bt;
        for (BlockKind k : m.block_type) {
            bt.push_back(k == BlockKind::ResBlock ? "ResBlock" : "Transformer");
        }
        bt = fc.str_list("block_type", bt);
        m.block_type.clear();
        for (const auto& b : bt) m.block_type.push_back(block_kind_from(b, "block_type", 0));
    }
    m.block_dropout = fc.num_list("block_dropout", m.block_dropout);
    m.num_classes = static_cast<int>(fc.integer("num_classes", m.num_classes));
    m.head_dim = static_cast<int>(fc.integer("head_dim", m.head_dim));
    m.temb_dim = static_cast<int>(fc.integer("temb_dim", m.temb_dim));
    m.blockwise_skips = fc.integer("blockwise_skips", 0) != 0;

    const std::string mean_type = fc.str("mean_type", "v");
    if (mean_type != "v") {
        throw ConfigError("config: mean_type '" + mean_type + "' unsupported (only 'v')");
    }
    const std::string optimizer = fc.str("optimizer", "adam");
    if (optimizer != "adam") {
        throw ConfigError("config: optimizer '" + optimizer + "' unsupported (only 'adam')");
    }

    t.weighting = parse_loss_type(fc);
    t.batch_size = fc.integer("batch_size", t.batch_size);
    t.learning_rate = fc.num("learning_rate", t.learning_rate);
    t.warmup_steps = fc.integer("learning_rate_warmup_steps", t.warmup_steps);
    t.adam_beta1 = fc.num("adam_beta1", t.adam_beta1);
    t.adam_beta2 = fc.num("adam_beta2", t.adam_beta2);
    t.adam_eps = fc.num("adam_eps", t.adam_eps);
    t.weight_decay = fc.num("weight_decay", 0.0);
    t.ema_decay = fc.num("ema_decay", t.ema_decay);
    t.max_steps = fc.integer("max_train_steps", t.max_steps);
    t.label_drop_prob = fc.num("label_drop_prob", t.label_drop_prob);
    t.seed = static_cast<uint64_t>(fc.integer("seed", 0));
    t.dataset = parse_dataset(fc.str("dataset", "shapes_16x16"));

    const double logsnr_min = fc.num("logsnr_min", -10.0);
    const double logsnr_max = fc.num("logsnr_max", 10.0);
    const std::string default_sched =
        "cosine_interpolated_low_32_high_" + std::to_string(m.image_res);
    t.schedule =
        schedule_from_name(fc.str("diffusion_schedule", default_sched), m.image_res, logsnr_min,
                           logsnr_max);

    s.guidance_scale = fc.num("guidance", s.guidance_scale);
    auto gi = fc.tuple2("guidance_interval",
                        {s.guidance_interval.lambda_lo, s.guidance_interval.lambda_hi});
    s.guidance_interval = {gi.first, gi.second};
    s.num_steps = static_cast<int>(fc.integer("num_steps", s.num_steps));
    const std::string sampler_name = fc.str("sampler", "ddpm");
    if (sampler_name != "ddpm") {
        throw ConfigError("config: sampler '" + sampler_name + "' unsupported (only 'ddpm')");
    }
    const std::string clip = fc.str("clip_x", "static");
    if (clip == "static") {
        s.clip_x = ClipX::Static;
    } else if (clip == "none") {
        s.clip_x = ClipX::None;
    } else {
        throw ConfigError("config: clip_x '" + clip + "' must be 'static' or 'none'");
    }
    s.gamma = fc.num("logvar_type", s.gamma);
    const std::string gspace = fc.str("guidance_space", "x");
    if (gspace == "x") {
        s.guidance_space = PredSpace::X;
    } else if (gspace == "eps") {
        s.guidance_space = PredSpace::Eps;
    } else if (gspace == "v") {
        s.guidance_space = PredSpace::V;
    } else {
        throw ConfigError("config: guidance_space '" + gspace + "' must be x, eps or v");
    }
    s.seed = t.seed;

    fc.reject_unknown();
    m.validate();
    t.validate();
    s.validate();
    return out;
}

void apply_env_seed(LoadedConfig& cfg) {
    const char* env = std::getenv("SID2_SEED");
    if (env == nullptr) return;
    const uint64_t seed = std::strtoull(env, nullptr, 10);
    cfg.train.seed = seed;
    cfg.sampler.seed = seed;
}

}  // namespace sid

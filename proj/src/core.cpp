#include "bbnet/core.hpp"

#include <array>
#include <charconv>
#include <fstream>
#include <algorithm>
#include <sstream>

namespace bbnet {

Dims Dims::make(std::int64_t b, std::int64_t c, std::int64_t h, std::int64_t w) {
    if (b <= 0 || c <= 0 || h <= 0 || w <= 0) {
        throw ShapeError("dims must be strictly positive, got " + to_string(Dims{b, c, h, w}));
    }
    return Dims{b, c, h, w};
}

Dims Dims::of(const torch::Tensor& t) {
    if (t.dim() != 4) {
        throw ShapeError("expected a 4-axis (B,C,H,W) tensor, got " + std::to_string(t.dim()) + " axes");
    }
    return Dims::make(t.size(0), t.size(1), t.size(2), t.size(3));
}

std::string to_string(const Dims& d) {
    std::ostringstream os;
    os << "(" << d.batch << "," << d.channels << "," << d.height << "," << d.width << ")";
    return os.str();
}

std::string_view stage_name(Stage s) {
    switch (s) {
        case Stage::Cat: return "f_cat";
        case Stage::Shuffled: return "f_sh";
        case Stage::MultiView: return "f_mv";
        case Stage::Collaborative: return "f_col";
        case Stage::Single: return "f_sin";
        case Stage::AffinityContext: return "f_mm";
        case Stage::PooledSum: return "f_sum";
        case Stage::Weighted: return "f_w";
        case Stage::Object: return "f_obj";
        case Stage::Aggregated: return "f_ag";
        case Stage::Local: return "f_local";
        case Stage::Global: return "f_global";
        case Stage::Refined: return "f_lgr";
    }
    return "unknown";
}

FeatureMap::FeatureMap(torch::Tensor t, Stage s) : data(std::move(t)), stage(s) {
    Dims::of(data);
}

bool all_finite(const torch::Tensor& t) {
    torch::NoGradGuard guard;
    return torch::isfinite(t).all().item<bool>();
}

void check_finite(const FeatureMap& f) {
    if (!all_finite(f.data)) {
        throw NonFiniteError(std::string(stage_name(f.stage)) + " contains NaN or Inf");
    }
}

namespace {

constexpr std::array<std::pair<BackboneId, std::string_view>, 4> kBackboneNames{{
    {BackboneId::TinyCnn, "tiny_cnn"},
    {BackboneId::Res2Net50Like, "res2net50_like"},
    {BackboneId::ResNet50Like, "resnet50_like"},
    {BackboneId::Vgg16Like, "vgg16_like"},
}};

std::int64_t parse_int(const std::string& key, const std::string& v) {
    std::int64_t out = 0;
    auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size()) {
        throw ConfigError("key '" + key + "': expected an integer, got '" + v + "'");
    }
    return out;
}

std::uint64_t parse_uint(const std::string& key, const std::string& v) {
    std::uint64_t out = 0;
    auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size()) {
        throw ConfigError("key '" + key + "': expected a non-negative integer, got '" + v + "'");
    }
    return out;
}

double parse_real(const std::string& key, const std::string& v) {
    double out = 0.0;
    auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size()) {
        throw ConfigError("key '" + key + "': expected a real number, got '" + v + "'");
    }
    return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "on" || v == "1") return true;
    if (v == "false" || v == "off" || v == "0") return false;
    throw ConfigError("key '" + key + "': expected true/false, got '" + v + "'");
}

std::string format_real(double v) {
    std::array<char, 64> buf{};
    auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
    return std::string(buf.data(), ptr);
}

std::string trim(std::string_view s) {
    const auto* ws = " \t\r\n";
    const auto b = s.find_first_not_of(ws);
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(ws);
    return std::string(s.substr(b, e - b + 1));
}

const std::array<std::string_view, 12> kModelKeys{
    "input_size", "channels", "multiview_iters", "lgr_grid", "lgr_top_n", "group_consensus",
    "backbone", "pretrained_path", "use_cfe", "use_ofs", "use_lgr", "gamma_mode"};

const std::array<std::string_view, 14> kTrainKeys{
    "optimizer", "lr_schedule", "learning_rate", "momentum", "weight_decay", "batch_size", "max_steps", "seed",
    "loss", "checkpoint_every", "data_root", "train_split", "eval_split", "run_dir"};

bool is_model_key(std::string_view k) {
    return std::find(kModelKeys.begin(), kModelKeys.end(), k) != kModelKeys.end();
}
bool is_train_key(std::string_view k) {
    return std::find(kTrainKeys.begin(), kTrainKeys.end(), k) != kTrainKeys.end();
}

void apply_model_key(ModelConfig& m, const std::string& k, const std::string& v) {
    if (k == "input_size") m.input_size = parse_int(k, v);
    else if (k == "channels") m.channels = parse_int(k, v);
    else if (k == "multiview_iters") m.multiview_iters = parse_int(k, v);
    else if (k == "lgr_grid") m.lgr_grid = parse_int(k, v);
    else if (k == "lgr_top_n") m.lgr_top_n = parse_int(k, v);
    else if (k == "group_consensus") m.group_consensus = parse_bool(k, v);
    else if (k == "backbone") m.backbone = parse_backbone(v);
    else if (k == "pretrained_path") {
        if (v.empty()) m.pretrained_path.reset();
        else m.pretrained_path = v;
    }
    else if (k == "use_cfe") m.use_cfe = parse_bool(k, v);
    else if (k == "use_ofs") m.use_ofs = parse_bool(k, v);
    else if (k == "use_lgr") m.use_lgr = parse_bool(k, v);
    else if (k == "gamma_mode") {
        if (v == "learned") m.gamma_mode = GammaMode::Learned;
        else if (v == "fixed_one") m.gamma_mode = GammaMode::FixedOne;
        else throw ConfigError("key 'gamma_mode': expected learned|fixed_one, got '" + v + "'");
    }
}

void apply_train_key(TrainConfig& t, const std::string& k, const std::string& v) {
    if (k == "optimizer") {
        if (v == "sgd") t.optimizer = OptimizerKind::Sgd;
        else if (v == "adam") t.optimizer = OptimizerKind::Adam;
        else throw ConfigError("key 'optimizer': expected sgd|adam, got '" + v + "'");
    }
    else if (k == "lr_schedule") {
        if (v == "constant") t.lr_schedule = LrSchedule::Constant;
        else if (v == "cosine") t.lr_schedule = LrSchedule::Cosine;
        else throw ConfigError("key 'lr_schedule': expected constant|cosine, got '" + v + "'");
    }
    else if (k == "learning_rate") t.learning_rate = parse_real(k, v);
    else if (k == "momentum") t.momentum = parse_real(k, v);
    else if (k == "weight_decay") t.weight_decay = parse_real(k, v);
    else if (k == "batch_size") t.batch_size = parse_int(k, v);
    else if (k == "max_steps") t.max_steps = parse_int(k, v);
    else if (k == "seed") t.seed = parse_uint(k, v);
    else if (k == "loss") {
        if (v == "bce_iou") t.loss = LossMode::BceIou;
        else if (v == "bce_only") t.loss = LossMode::BceOnly;
        else throw ConfigError("key 'loss': expected bce_iou|bce_only, got '" + v + "'");
    }
    else if (k == "checkpoint_every") t.checkpoint_every = parse_int(k, v);
    else if (k == "data_root") t.data_root = v;
    else if (k == "train_split") t.train_split = v;
    else if (k == "eval_split") t.eval_split = v;
    else if (k == "run_dir") t.run_dir = v;
}

}  // namespace

std::string_view backbone_name(BackboneId id) {
    for (const auto& [k, name] : kBackboneNames) {
        if (k == id) return name;
    }
    return "unknown";
}

BackboneId parse_backbone(std::string_view name) {
    for (const auto& [k, n] : kBackboneNames) {
        if (n == name) return k;
    }
    throw ConfigError("unknown backbone '" + std::string(name) + "'");
}

ModelConfig ModelConfig::tiny() {
    ModelConfig c;
    c.input_size = 96;
    c.channels = 16;
    c.backbone = BackboneId::TinyCnn;
    return c;
}

void ModelConfig::validate() const {
    if (input_size <= 0 || input_size % 24 != 0) {
        throw ConfigError("input_size must be a positive multiple of 24, got " + std::to_string(input_size));
    }
    if (channels <= 0) throw ConfigError("channels must be positive");
    if (multiview_iters < 0 || multiview_iters > 4) {
        throw ConfigError("multiview_iters must lie in [0,4], got " + std::to_string(multiview_iters));
    }
    if (lgr_grid != 3) throw ConfigError("lgr_grid is fixed to 3, got " + std::to_string(lgr_grid));
    if (lgr_top_n < 1 || lgr_top_n > lgr_grid * lgr_grid) {
        throw ConfigError("lgr_top_n must lie in [1,9], got " + std::to_string(lgr_top_n));
    }
}

void TrainConfig::validate() const {
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
    if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be non-negative");
    if (batch_size <= 0) throw ConfigError("batch_size must be positive");
    if (max_steps < 0) throw ConfigError("max_steps must be non-negative");
    if (checkpoint_every <= 0) throw ConfigError("checkpoint_every must be positive");
}

std::int64_t working_resolution(const ModelConfig& cfg) { return cfg.input_size / 8; }

void validate_dims(const Dims& d, const ModelConfig& cfg) {
    if (cfg.input_size % 8 != 0) {
        throw DimsError(8, "input_size " + std::to_string(cfg.input_size) + " is not divisible by 8");
    }
    const auto w = working_resolution(cfg);
    for (int divisor : {2, 3}) {
        if (w % divisor != 0) {
            throw DimsError(divisor, "working resolution " + std::to_string(w) + " (input_size/8) is not divisible by " +
                                         std::to_string(divisor));
        }
    }
    if (d.height != cfg.input_size || d.width != cfg.input_size) {
        throw ShapeError("input " + to_string(d) + " does not match input_size " + std::to_string(cfg.input_size));
    }
}

KeyValues model_to_kv(const ModelConfig& m) {
    KeyValues kv;
    kv["input_size"] = std::to_string(m.input_size);
    kv["channels"] = std::to_string(m.channels);
    kv["multiview_iters"] = std::to_string(m.multiview_iters);
    kv["lgr_grid"] = std::to_string(m.lgr_grid);
    kv["lgr_top_n"] = std::to_string(m.lgr_top_n);
    kv["group_consensus"] = m.group_consensus ? "true" : "false";
    kv["backbone"] = std::string(backbone_name(m.backbone));
    kv["pretrained_path"] = m.pretrained_path ? m.pretrained_path->string() : "";
    kv["use_cfe"] = m.use_cfe ? "true" : "false";
    kv["use_ofs"] = m.use_ofs ? "true" : "false";
    kv["use_lgr"] = m.use_lgr ? "true" : "false";
    kv["gamma_mode"] = m.gamma_mode == GammaMode::Learned ? "learned" : "fixed_one";
    return kv;
}

KeyValues train_to_kv(const TrainConfig& t) {
    KeyValues kv;
    kv["optimizer"] = t.optimizer == OptimizerKind::Sgd ? "sgd" : "adam";
    kv["lr_schedule"] = t.lr_schedule == LrSchedule::Constant ? "constant" : "cosine";
    kv["learning_rate"] = format_real(t.learning_rate);
    kv["momentum"] = format_real(t.momentum);
    kv["weight_decay"] = format_real(t.weight_decay);
    kv["batch_size"] = std::to_string(t.batch_size);
    kv["max_steps"] = std::to_string(t.max_steps);
    kv["seed"] = std::to_string(t.seed);
    kv["loss"] = t.loss == LossMode::BceIou ? "bce_iou" : "bce_only";
    kv["checkpoint_every"] = std::to_string(t.checkpoint_every);
    kv["data_root"] = t.data_root.string();
    kv["train_split"] = t.train_split;
    kv["eval_split"] = t.eval_split;
    kv["run_dir"] = t.run_dir.string();
    return kv;
}

ModelConfig model_from_kv(const KeyValues& kv) {
    ModelConfig m;
    for (const auto& [k, v] : kv) {
        if (!is_model_key(k)) throw ConfigError("unknown model key '" + k + "'");
        apply_model_key(m, k, v);
    }
    m.validate();
    return m;
}

KeyValues parse_key_values(std::string_view text) {
    KeyValues kv;
    std::istringstream in{std::string(text)};
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        const auto t = trim(line);
        if (t.empty()) continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("line " + std::to_string(lineno) + ": expected key=value");
        }
        auto key = trim(std::string_view(t).substr(0, eq));
        auto value = trim(std::string_view(t).substr(eq + 1));
        if (key.empty()) throw ConfigError("line " + std::to_string(lineno) + ": empty key");
        if (!kv.emplace(key, value).second) {
            throw ConfigError("line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
        }
    }
    return kv;
}

std::string format_key_values(const KeyValues& kv) {
    std::string out;
    for (const auto& [k, v] : kv) out += k + " = " + v + "\n";
    return out;
}

RunConfig parse_run_config(std::string_view text) {
    RunConfig cfg;
    for (const auto& [k, v] : parse_key_values(text)) {
        if (is_model_key(k)) apply_model_key(cfg.model, k, v);
        else if (is_train_key(k)) apply_train_key(cfg.train, k, v);
        else throw ConfigError("unknown key '" + k + "'");
    }
    cfg.model.validate();
    cfg.train.validate();
    return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_run_config(ss.str());
}

std::string format_run_config(const RunConfig& cfg) {
    auto kv = model_to_kv(cfg.model);
    kv.merge(train_to_kv(cfg.train));
    return format_key_values(kv);
}

}  // namespace bbnet

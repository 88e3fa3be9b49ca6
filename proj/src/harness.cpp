#include "bbnet/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <memory>
#include <numbers>
#include <random>
#include <sstream>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "bbnet/archive.hpp"
#include "bbnet/log.hpp"
#include "bbnet/losses.hpp"
#include "json.hpp"

#ifndef BBNET_CODE_HASH
#define BBNET_CODE_HASH "unknown"
#endif

namespace bbnet {

namespace fs = std::filesystem;

std::string code_hash() { return BBNET_CODE_HASH; }

void seed_everything(std::uint64_t seed) {
    torch::set_num_threads(1);
    torch::manual_seed(seed);
}

namespace {

std::string number(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

fs::path checkpoint_path(const fs::path& run_dir, std::int64_t step) {
    char name[32];
    std::snprintf(name, sizeof(name), "step_%06lld.bbn", static_cast<long long>(step));
    return run_dir / "checkpoints" / name;
}

// Sgd:  v <- momentum * v + (grad + weight_decay * w);  w <- w - lr * v
// Adam: beta1 = momentum, beta2 = 0.999, grad <- grad + weight_decay * w
std::unique_ptr<torch::optim::Optimizer> make_optimizer(const TrainConfig& t, std::vector<torch::Tensor> params) {
    if (t.optimizer == OptimizerKind::Adam) {
        return std::make_unique<torch::optim::Adam>(
            std::move(params),
            torch::optim::AdamOptions(t.learning_rate).betas({t.momentum, 0.999}).weight_decay(t.weight_decay));
    }
    return std::make_unique<torch::optim::SGD>(
        std::move(params),
        torch::optim::SGDOptions(t.learning_rate).momentum(t.momentum).weight_decay(t.weight_decay));
}

double scheduled_lr(const TrainConfig& t, std::int64_t step) {
    if (t.lr_schedule == LrSchedule::Constant) return t.learning_rate;
    const double progress = static_cast<double>(step - 1) / static_cast<double>(t.max_steps);
    return 0.5 * t.learning_rate * (1.0 + std::cos(std::numbers::pi * progress));
}

void set_lr(torch::optim::Optimizer& opt, double lr) {
    for (auto& group : opt.param_groups()) group.options().set_lr(lr);
}

fs::path eval_root(const TrainConfig& t) {
    const auto eval = t.data_root / t.eval_split;
    return fs::is_directory(eval) ? eval : t.data_root / t.train_split;
}

}  // namespace

std::string manifest_json(const RunManifest& m) {
    nlohmann::ordered_json j;
    nlohmann::ordered_json model(model_to_kv(m.config.model));
    nlohmann::ordered_json train(train_to_kv(m.config.train));
    j["config"] = {{"model", model}, {"train", train}};
    j["seed"] = m.seed;
    j["code_hash"] = m.code_hash;
    j["loss_log"] = m.loss_log.generic_string();
    j["checkpoints"] = nlohmann::ordered_json::array();
    for (const auto& c : m.checkpoints) {
        j["checkpoints"].push_back({{"step", c.step}, {"path", c.path.generic_string()}, {"hash", c.hash}});
    }
    j["predictions"] = m.predictions.generic_string();
    j["report"] = m.report.generic_string();
    return j.dump(2) + "\n";
}

std::vector<StepLog> read_loss_log(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read loss log " + path.string());
    std::vector<StepLog> out;
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        for (std::string cell; std::getline(ss, cell, ',');) cells.push_back(cell);
        if (cells.size() != 7) throw IoError("malformed loss log row: " + line);
        StepLog s;
        s.step = std::stoll(cells[0]);
        s.group = cells[1];
        s.wbce_final = std::stod(cells[2]);
        s.wiou_final = std::stod(cells[3]);
        s.wbce_ofs = std::stod(cells[4]);
        s.wiou_ofs = std::stod(cells[5]);
        s.total = std::stod(cells[6]);
        out.push_back(s);
    }
    return out;
}

RunManifest train_run(const RunConfig& cfg) {
    cfg.model.validate();
    cfg.train.validate();
    const auto& t = cfg.train;
    const auto records = scan_dataset(t.data_root / t.train_split);
    if (records.empty()) throw ConfigError("no training groups under " + (t.data_root / t.train_split).string());

    seed_everything(t.seed);
    BBNet net(cfg.model);
    std::mt19937_64 rng(t.seed);

    auto opt = make_optimizer(t, net->parameters());
    const LossOptions loss_opts{t.loss, cfg.model.use_ofs};

    RunManifest m;
    m.config = cfg;
    m.seed = t.seed;
    m.code_hash = code_hash();
    fs::create_directories(t.run_dir / "checkpoints");
    m.loss_log = t.run_dir / "loss_log.csv";
    std::ofstream log_out(m.loss_log, std::ios::trunc);
    if (!log_out) throw IoError("cannot write " + m.loss_log.string());
    log_out << "step,group,wbce_final,wiou_final,wbce_ofs,wiou_ofs,total\n";

    auto checkpoint = [&](std::int64_t step) {
        const auto path = checkpoint_path(t.run_dir, step);
        save_checkpoint(path, net);
        m.checkpoints.push_back({step, path, content_hash(read_file(path))});
    };

    const auto start = std::chrono::steady_clock::now();
    for (std::int64_t step = 1; step <= t.max_steps; ++step) {
        const auto group = sample_group(records, t.batch_size, cfg.model.input_size, rng);
        net->train();
        const auto out = net->forward(group.images);
        const auto terms = total_loss(out, group.masks, loss_opts);
        const double total = terms.total.item<double>();
        if (!std::isfinite(total)) throw NonFiniteError("loss is not finite at step " + std::to_string(step));
        set_lr(*opt, scheduled_lr(t, step));
        opt->zero_grad();
        terms.total.backward();
        opt->step();

        log_out << step << ',' << group.group_id << ',' << number(terms.wbce_final.item<double>()) << ','
                << number(terms.wiou_final.item<double>()) << ',' << number(terms.wbce_ofs.item<double>()) << ','
                << number(terms.wiou_ofs.item<double>()) << ',' << number(total) << '\n';
        log_out.flush();
        if (step % 10 == 0 || step == 1) {
            const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
            log::info("step ", step, "/", t.max_steps, " loss ", total, " (", secs, " s)");
        }
        if (step % t.checkpoint_every == 0) checkpoint(step);
    }
    if (t.max_steps == 0 || t.max_steps % t.checkpoint_every != 0) checkpoint(t.max_steps);
    log_out.close();

    m.predictions = t.run_dir / "predictions";
    fs::remove_all(m.predictions);
    predict_tree(net, eval_root(t), m.predictions);
    m.report = t.run_dir / "report.json";
    cmd_eval(m.predictions, eval_root(t), m.report);

    m.manifest = t.run_dir / "manifest.json";
    write_file_atomic(m.manifest, manifest_json(m));
    return m;
}

RunManifest cmd_train(const fs::path& config_path) { return train_run(load_run_config(config_path)); }

std::vector<cv::Mat1b> predict_group(BBNet& net, const ImageGroup& group) {
    torch::NoGradGuard no_grad;
    net->eval();
    const auto p = net->forward(group.images).p.to(torch::kFloat32).contiguous();
    std::vector<cv::Mat1b> out;
    for (std::int64_t i = 0; i < p.size(0); ++i) {
        const auto map = p[i][0].contiguous();
        cv::Mat1f m(static_cast<int>(map.size(0)), static_cast<int>(map.size(1)));
        std::memcpy(m.data, map.data_ptr<float>(), sizeof(float) * static_cast<std::size_t>(map.numel()));
        const auto& native = group.native_sizes.at(static_cast<std::size_t>(i));
        if (m.size() != native) cv::resize(m, m, native, 0, 0, cv::INTER_LINEAR);
        cv::Mat1b u8;
        m.convertTo(u8, CV_8U, 255.0);
        out.push_back(u8);
    }
    return out;
}

namespace {

bool has_images(const fs::path& dir) {
    for (const auto& e : fs::directory_iterator(dir)) {
        if (e.is_regular_file() && is_image_file(e.path())) return true;
    }
    return false;
}

std::vector<fs::path> group_dirs(const fs::path& root) {
    if (!fs::is_directory(root)) throw IoError("not a directory: " + root.string());
    std::vector<fs::path> out;
    if (has_images(root)) out.push_back(root);
    for (auto it = fs::recursive_directory_iterator(root); it != fs::recursive_directory_iterator(); ++it) {
        if (!it->is_directory()) continue;
        if (it->path().filename() == "masks") {
            it.disable_recursion_pending();
            continue;
        }
        if (has_images(it->path())) out.push_back(it->path());
    }
    std::sort(out.begin(), out.end());
    if (out.empty()) throw IoError("no images under " + root.string());
    return out;
}

}  // namespace

std::vector<fs::path> predict_tree(BBNet& net, const fs::path& in_dir, const fs::path& out_dir) {
    std::vector<fs::path> written;
    for (const auto& dir : group_dirs(in_dir)) {
        const auto group = load_group_dir(dir, net->config().input_size);
        const auto maps = predict_group(net, group);
        const auto target = out_dir / fs::relative(dir, in_dir);
        fs::create_directories(target);
        for (std::size_t i = 0; i < maps.size(); ++i) {
            const auto path = target / (group.stems[i] + ".png");
            if (!cv::imwrite(path.string(), maps[i])) throw IoError("cannot write " + path.string());
            written.push_back(path.lexically_normal());
        }
    }
    return written;
}

std::vector<fs::path> cmd_predict(const fs::path& checkpoint, const fs::path& in_dir, const fs::path& out_dir) {
    seed_everything(0);
    auto net = load_checkpoint(checkpoint);
    return predict_tree(net, in_dir, out_dir);
}

std::vector<fs::path> cmd_predict(const fs::path& checkpoint, const fs::path& in_dir, const fs::path& out_dir,
                                  const ModelConfig& expected) {
    seed_everything(0);
    auto cfg = expected;
    cfg.pretrained_path.reset();
    BBNet net(cfg);
    load_checkpoint_into(checkpoint, net);
    return predict_tree(net, in_dir, out_dir);
}

metrics::MetricReport cmd_eval(const fs::path& pred_dir, const fs::path& gt_dir, const fs::path& report_path,
                               bool adaptive_f) {
    metrics::EvalOptions opts;
    opts.adaptive_f = adaptive_f;
    auto report = metrics::evaluate_dirs(pred_dir, gt_dir, opts);
    metrics::write_report(report, report_path);
    return report;
}

RunConfig apply_switch(RunConfig cfg, std::string_view name) {
    auto& m = cfg.model;
    auto bounded = [&](std::string_view prefix, std::int64_t lo, std::int64_t hi, std::int64_t& field) {
        if (name.substr(0, prefix.size()) != prefix) return false;
        const auto value = name.substr(prefix.size());
        if (value.size() != 1 || value[0] < '0' + lo || value[0] > '0' + hi) throw UnknownSwitchError(std::string(name));
        field = value[0] - '0';
        return true;
    };
    if (name == "no_cfe") m.use_cfe = false;
    else if (name == "no_ofs") m.use_ofs = false;
    else if (name == "no_lgr") m.use_lgr = false;
    else if (name == "no_gamma") m.gamma_mode = GammaMode::FixedOne;
    else if (name == "bce_only") cfg.train.loss = LossMode::BceOnly;
    else if (name == "consensus_off") m.group_consensus = false;
    else if (bounded("iters=", 0, 3, m.multiview_iters)) {
    } else if (bounded("top_n=", 1, 4, m.lgr_top_n)) {
    } else {
        throw UnknownSwitchError(std::string(name));
    }
    return cfg;
}

namespace {

std::string dir_name(std::string_view name) {
    std::string s(name);
    std::replace(s.begin(), s.end(), '=', '_');
    return s;
}

// A finished run whose manifest echoes this exact config and code.
bool reusable(const RunConfig& cfg) {
    const auto path = cfg.train.run_dir / "manifest.json";
    if (!fs::exists(path)) return false;
    const auto j = nlohmann::ordered_json::parse(read_file(path));
    nlohmann::ordered_json model(model_to_kv(cfg.model));
    nlohmann::ordered_json train(train_to_kv(cfg.train));
    return j.at("config") == nlohmann::ordered_json{{"model", model}, {"train", train}} &&
           j.at("code_hash") == code_hash();
}

metrics::MetricReport run_or_reuse(const RunConfig& cfg) {
    if (reusable(cfg)) {
        log::info("reusing finished run in ", cfg.train.run_dir.string());
        return metrics::evaluate_dirs(cfg.train.run_dir / "predictions", eval_root(cfg.train));
    }
    const auto m = train_run(cfg);
    return metrics::evaluate_dirs(m.predictions, eval_root(cfg.train));
}

}  // namespace

AblationReport ablate_run(const RunConfig& cfg, std::string_view name) {
    auto variant = apply_switch(cfg, name);
    auto full = cfg;
    const auto root = cfg.train.run_dir;
    full.train.run_dir = root / "full";
    variant.train.run_dir = root / dir_name(name);

    AblationReport r;
    r.switch_name = std::string(name);
    r.full = run_or_reuse(full);
    r.variant = run_or_reuse(variant);

    nlohmann::ordered_json j;
    j["switch"] = r.switch_name;
    j["full"] = nlohmann::ordered_json::parse(metrics::report_json(r.full));
    j["variant"] = nlohmann::ordered_json::parse(metrics::report_json(r.variant));
    r.json = root / ("ablation_" + dir_name(name) + ".json");
    r.csv = root / ("ablation_" + dir_name(name) + ".csv");
    write_file_atomic(r.json, j.dump(2) + "\n");

    std::ostringstream csv;
    csv << "metric,full," << r.switch_name << '\n';
    const std::array<std::pair<const char*, double metrics::MetricReport::*>, 6> rows{{
        {"s_alpha", &metrics::MetricReport::s_alpha},
        {"mae", &metrics::MetricReport::mae},
        {"e_max", &metrics::MetricReport::e_max},
        {"f_max", &metrics::MetricReport::f_max},
        {"e_mean", &metrics::MetricReport::e_mean},
        {"f_mean", &metrics::MetricReport::f_mean},
    }};
    for (const auto& [label, field] : rows) {
        csv << label << ',' << number(r.full.*field) << ',' << number(r.variant.*field) << '\n';
    }
    write_file_atomic(r.csv, csv.str());
    return r;
}

AblationReport cmd_ablate(const fs::path& config_path, std::string_view name) {
    return ablate_run(load_run_config(config_path), name);
}

}  // namespace bbnet

#include <cstdio>
#include <iostream>

#include "CLI11.hpp"

#include "bbnet/dataset.hpp"
#include "bbnet/errors.hpp"
#include "bbnet/harness.hpp"
#include "bbnet/log.hpp"
#include "bbnet/metrics.hpp"
#include "bbnet/network.hpp"

namespace fs = std::filesystem;

namespace {

std::string one_line(std::string s) {
    for (auto& c : s) {
        if (c == '\n' || c == '\r') c = ' ';
    }
    return s;
}

void print_report(const bbnet::metrics::MetricReport& r) {
    std::printf("s_alpha %.6f\nmae %.6f\ne_max %.6f\nf_max %.6f\ne_mean %.6f\nf_mean %.6f\n", r.s_alpha, r.mae,
                r.e_max, r.f_max, r.e_mean, r.f_mean);
    if (r.f_adaptive) std::printf("f_adaptive %.6f\n", *r.f_adaptive);
}

int run(int argc, char** argv) {
    CLI::App app{"Collaborative camouflaged object detection: training, inference and evaluation"};
    app.require_subcommand(1);

    fs::path config;
    auto* train = app.add_subcommand("train", "train a model from a key=value config");
    train->add_option("--config", config, "run config")->required()->check(CLI::ExistingFile);

    fs::path ckpt, in_dir, out_dir, model_config;
    auto* predict = app.add_subcommand("predict", "write 8-bit prediction maps for every image group");
    predict->add_option("--ckpt", ckpt)->required()->check(CLI::ExistingFile);
    predict->add_option("--in", in_dir)->required()->check(CLI::ExistingDirectory);
    predict->add_option("--out", out_dir)->required();
    predict->add_option("--config", model_config, "reject checkpoints that do not match this config")
        ->check(CLI::ExistingFile);

    fs::path pred_dir, gt_dir, report;
    bool adaptive = false;
    auto* eval = app.add_subcommand("eval", "score predictions against ground-truth masks");
    eval->add_option("--pred", pred_dir)->required()->check(CLI::ExistingDirectory);
    eval->add_option("--gt", gt_dir)->required()->check(CLI::ExistingDirectory);
    eval->add_option("--report", report, "report JSON path; CSVs are written next to it")->required();
    eval->add_flag("--adaptive-f", adaptive, "also report the adaptive-threshold F-measure");

    bbnet::SynthOptions synth_opts;
    fs::path synth_out;
    auto* synth = app.add_subcommand("synth", "generate the synthetic camouflage dataset");
    synth->add_option("--out", synth_out)->required();
    synth->add_option("--groups", synth_opts.groups)->capture_default_str();
    synth->add_option("--per-group", synth_opts.per_group)->capture_default_str();
    synth->add_option("--size", synth_opts.size)->capture_default_str();
    synth->add_option("--seed", synth_opts.seed)->capture_default_str();

    fs::path stats_root, stats_out;
    auto* stats = app.add_subcommand("stats", "dataset statistics histograms");
    stats->add_option("--root", stats_root, "split root: <root>/<super>/<sub>/")->required()->check(
        CLI::ExistingDirectory);
    stats->add_option("--out", stats_out)->required();

    std::string switch_name;
    auto* ablate = app.add_subcommand("ablate", "train the full model and one variant side by side");
    ablate->add_option("--config", config)->required()->check(CLI::ExistingFile);
    ablate->add_option("--switch", switch_name,
                       "no_cfe|no_ofs|no_lgr|no_gamma|bce_only|consensus_off|iters=0..3|top_n=1..4")
        ->required();

    auto* summary = app.add_subcommand("summary", "parameter count and FLOP estimate");
    summary->add_option("--ckpt", ckpt)->check(CLI::ExistingFile);
    summary->add_option("--config", model_config)->check(CLI::ExistingFile);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::fprintf(stderr, "error: UsageError: %s\n", one_line(e.what()).c_str());
        return 2;
    }

    if (*train) {
        const auto m = bbnet::cmd_train(config);
        std::printf("manifest %s\n", m.manifest.string().c_str());
    } else if (*predict) {
        const auto written = model_config.empty()
                                 ? bbnet::cmd_predict(ckpt, in_dir, out_dir)
                                 : bbnet::cmd_predict(ckpt, in_dir, out_dir,
                                                      bbnet::load_run_config(model_config).model);
        std::printf("wrote %zu predictions to %s\n", written.size(), out_dir.string().c_str());
    } else if (*eval) {
        print_report(bbnet::cmd_eval(pred_dir, gt_dir, report, adaptive));
    } else if (*synth) {
        bbnet::synth_generate(synth_out, synth_opts);
        std::printf("wrote %lld groups to %s\n", static_cast<long long>(synth_opts.groups),
                    (synth_out / "train" / "synth").string().c_str());
    } else if (*stats) {
        const auto s = bbnet::compute_stats(bbnet::scan_dataset(stats_root));
        bbnet::write_stats(s, stats_out);
        std::printf("measured %lld images (%lld degenerate skipped)\n", static_cast<long long>(s.measured),
                    static_cast<long long>(s.degenerate));
    } else if (*ablate) {
        const auto r = bbnet::cmd_ablate(config, switch_name);
        std::printf("%-8s %10s %10s\n", "metric", "full", r.switch_name.c_str());
        std::printf("%-8s %10.4f %10.4f\n", "s_alpha", r.full.s_alpha, r.variant.s_alpha);
        std::printf("%-8s %10.4f %10.4f\n", "mae", r.full.mae, r.variant.mae);
        std::printf("%-8s %10.4f %10.4f\n", "e_max", r.full.e_max, r.variant.e_max);
        std::printf("%-8s %10.4f %10.4f\n", "f_max", r.full.f_max, r.variant.f_max);
        std::printf("%-8s %10.4f %10.4f\n", "e_mean", r.full.e_mean, r.variant.e_mean);
        std::printf("%-8s %10.4f %10.4f\n", "f_mean", r.full.f_mean, r.variant.f_mean);
    } else if (*summary) {
        bbnet::seed_everything(0);
        auto net = !ckpt.empty() ? bbnet::load_checkpoint(ckpt)
                   : !model_config.empty() ? bbnet::BBNet(bbnet::load_run_config(model_config).model)
                                           : bbnet::BBNet(bbnet::ModelConfig{});
        const auto s = bbnet::model_summary(net);
        std::printf("params %lld (%.3f M)\nflops %.6g (%.3f G)\n", static_cast<long long>(s.param_count),
                    s.param_count / 1e6, s.flop_estimate, s.flop_estimate / 1e9);
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    bbnet::log::init_from_env();
    try {
        return run(argc, argv);
    } catch (const bbnet::Error& e) {
        std::fprintf(stderr, "error: %s: %s\n", e.kind().c_str(), one_line(e.what()).c_str());
    } catch (const c10::Error& e) {
        std::fprintf(stderr, "error: TorchError: %s\n", one_line(e.what_without_backtrace()).c_str());
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: InternalError: %s\n", one_line(e.what()).c_str());
    }
    return 1;
}

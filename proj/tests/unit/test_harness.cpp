#include <doctest.h>

#include <fstream>

#include <opencv2/imgcodecs.hpp>

#include "bbnet/archive.hpp"
#include "bbnet/harness.hpp"
#include "json.hpp"
#include "oracles.hpp"

using namespace bbnet;
namespace fs = std::filesystem;

namespace {

RunConfig quick_config(const fs::path& data, const fs::path& run, std::int64_t steps) {
    RunConfig cfg;
    cfg.model = ModelConfig::tiny();
    cfg.train.learning_rate = 1e-3;
    cfg.train.batch_size = 4;
    cfg.train.max_steps = steps;
    cfg.train.checkpoint_every = 2;
    cfg.train.seed = 3;
    cfg.train.data_root = data;
    cfg.train.run_dir = run;
    return cfg;
}

void small_synth(const fs::path& out) {
    SynthOptions opts;
    opts.groups = 2;
    opts.per_group = 6;
    opts.size = 96;
    synth_generate(out, opts);
}

std::vector<fs::path> sorted_files(const fs::path& root) {
    std::vector<fs::path> out;
    for (const auto& e : fs::recursive_directory_iterator(root)) {
        if (e.is_regular_file()) out.push_back(fs::relative(e.path(), root));
    }
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace

TEST_SUITE("harness") {

TEST_CASE("ablation switches") {
    RunConfig base;
    base.model = ModelConfig::tiny();
    CHECK_FALSE(apply_switch(base, "no_cfe").model.use_cfe);
    CHECK_FALSE(apply_switch(base, "no_ofs").model.use_ofs);
    CHECK_FALSE(apply_switch(base, "no_lgr").model.use_lgr);
    CHECK(apply_switch(base, "no_gamma").model.gamma_mode == GammaMode::FixedOne);
    CHECK(apply_switch(base, "bce_only").train.loss == LossMode::BceOnly);
    CHECK_FALSE(apply_switch(base, "consensus_off").model.group_consensus);
    CHECK(apply_switch(base, "iters=0").model.multiview_iters == 0);
    CHECK(apply_switch(base, "iters=3").model.multiview_iters == 3);
    CHECK(apply_switch(base, "top_n=4").model.lgr_top_n == 4);
    for (const char* bad : {"no_backbone", "iters=4", "top_n=0", "top_n=5", "iters=", ""}) {
        CHECK_THROWS_AS(apply_switch(base, bad), UnknownSwitchError);
    }
}

TEST_CASE("frozen gate really adds the residual") {
    RunConfig base;
    base.model = ModelConfig::tiny();
    torch::manual_seed(0);
    BBNet net(apply_switch(base, "no_gamma").model);
    CHECK(net->ofs->gate().item<float>() == 1.0f);
}

TEST_CASE("configuration errors fail before the first step") {
    testing::TempDir dir("badcfg");
    auto cfg = quick_config(dir.path() / "nowhere", dir.path() / "run", 3);
    CHECK_THROWS_AS(train_run(cfg), Error);
    CHECK_FALSE(fs::exists(dir.path() / "run" / "loss_log.csv"));
    fs::create_directories(dir.path() / "empty" / "train");
    cfg.train.data_root = dir.path() / "empty";
    CHECK_THROWS_AS(train_run(cfg), ConfigError);
    cfg.train.momentum = 1.5;
    CHECK_THROWS_AS(train_run(cfg), ConfigError);
}

TEST_CASE("zero steps checkpoint the initialization") {
    testing::TempDir dir("zero");
    small_synth(dir.path() / "data");
    const auto cfg = quick_config(dir.path() / "data", dir.path() / "run", 0);
    const auto m = train_run(cfg);
    REQUIRE(m.checkpoints.size() == 1);
    CHECK(m.checkpoints[0].step == 0);
    seed_everything(cfg.train.seed);
    BBNet fresh(cfg.model);
    const auto saved = read_archive(m.checkpoints[0].path);
    const auto state = fresh->named_state();
    REQUIRE(saved.tensors.size() == state.size());
    for (std::size_t i = 0; i < state.size(); ++i) {
        CHECK(saved.tensors[i].first == state[i].first);
        CHECK(torch::equal(saved.tensors[i].second, state[i].second));
    }
}

TEST_CASE("training is reproducible and fully recorded") {
    testing::TempDir dir("train");
    small_synth(dir.path() / "data");
    const auto a = train_run(quick_config(dir.path() / "data", dir.path() / "a", 5));
    const auto b = train_run(quick_config(dir.path() / "data", dir.path() / "b", 5));

    REQUIRE(a.checkpoints.size() == 3);  // steps 2, 4 and the final 5
    CHECK(a.checkpoints.back().step == 5);
    CHECK(a.checkpoints.back().hash == b.checkpoints.back().hash);
    CHECK(testing::file_bytes(a.report) == testing::file_bytes(b.report));

    const auto log = read_loss_log(a.loss_log);
    REQUIRE(log.size() == 5);
    for (std::size_t i = 0; i < log.size(); ++i) {
        CHECK(log[i].step == static_cast<std::int64_t>(i + 1));
        CHECK(log[i].total == doctest::Approx(log[i].wbce_final + log[i].wiou_final + log[i].wbce_ofs + log[i].wiou_ofs));
    }

    std::ifstream in(a.manifest);
    const auto j = nlohmann::json::parse(in);
    CHECK(j.at("seed") == 3);
    CHECK(j.at("code_hash") == code_hash());
    CHECK(j.contains("config"));
    CHECK(j.at("checkpoints").size() == 3);

    const auto pa = sorted_files(a.predictions);
    REQUIRE(pa == sorted_files(b.predictions));
    CHECK(pa.size() == 12);
    for (const auto& f : pa) CHECK(testing::file_bytes(a.predictions / f) == testing::file_bytes(b.predictions / f));
}

TEST_CASE("predict writes one 8-bit map per image, deterministically") {
    testing::TempDir dir("predict");
    small_synth(dir.path() / "data");
    const auto m = train_run(quick_config(dir.path() / "data", dir.path() / "run", 1));
    const auto group = dir.path() / "data" / "train" / "synth" / "species_00";
    const auto first = cmd_predict(m.checkpoints.back().path, group, dir.path() / "p1");
    const auto second = cmd_predict(m.checkpoints.back().path, group, dir.path() / "p2");
    REQUIRE(first.size() == 6);
    for (std::size_t i = 0; i < first.size(); ++i) {
        const cv::Mat img = cv::imread(first[i].string(), cv::IMREAD_UNCHANGED);
        CHECK(img.type() == CV_8UC1);
        CHECK(img.rows == 96);
        CHECK(testing::file_bytes(first[i]) == testing::file_bytes(second[i]));
    }
    auto other = ModelConfig::tiny();
    other.channels = 8;
    CHECK_THROWS_AS(cmd_predict(m.checkpoints.back().path, group, dir.path() / "p3", other), CheckpointMismatchError);
    CHECK_NOTHROW(cmd_predict(m.checkpoints.back().path, group, dir.path() / "p4", ModelConfig::tiny()));

    const auto report = cmd_eval(dir.path() / "data" / "train", dir.path() / "data" / "train", dir.path() / "self.json");
    CHECK(report.per_image.size() == 12);
    CHECK(report.mae == 0.0);
    CHECK(report.s_alpha == doctest::Approx(1.0));
    CHECK(report.f_max == doctest::Approx(1.0));
}

}

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <opencv2/core.hpp>

#include "bbnet/core.hpp"
#include "bbnet/dataset.hpp"
#include "bbnet/metrics.hpp"
#include "bbnet/network.hpp"

namespace bbnet {

// Hash of the sources this binary was built from.
std::string code_hash();

// Seeds torch and pins intra-op parallelism to one thread.
void seed_everything(std::uint64_t seed);

struct CheckpointRecord {
    std::int64_t step = 0;
    std::filesystem::path path;
    std::string hash;
};

struct RunManifest {
    RunConfig config;
    std::uint64_t seed = 0;
    std::string code_hash;
    std::filesystem::path loss_log;
    std::vector<CheckpointRecord> checkpoints;
    std::filesystem::path predictions;
    std::filesystem::path report;
    std::filesystem::path manifest;
};

std::string manifest_json(const RunManifest& m);

struct StepLog {
    std::int64_t step = 0;
    std::string group;
    double wbce_final = 0.0;
    double wiou_final = 0.0;
    double wbce_ofs = 0.0;
    double wiou_ofs = 0.0;
    double total = 0.0;
};

std::vector<StepLog> read_loss_log(const std::filesystem::path& path);

// Trains, checkpoints every checkpoint_every steps and at the end, predicts the
// evaluation split and writes its MetricReport; the manifest is written last.
RunManifest train_run(const RunConfig& cfg);
RunManifest cmd_train(const std::filesystem::path& config_path);

// 8-bit maps at the native size of each input image.
std::vector<cv::Mat1b> predict_group(BBNet& net, const ImageGroup& group);

// Every directory under in_dir holding images (masks/ excluded) is one group;
// outputs mirror the relative layout as <stem>.png.
std::vector<std::filesystem::path> predict_tree(BBNet& net, const std::filesystem::path& in_dir,
                                                const std::filesystem::path& out_dir);
std::vector<std::filesystem::path> cmd_predict(const std::filesystem::path& checkpoint,
                                               const std::filesystem::path& in_dir,
                                               const std::filesystem::path& out_dir);
// Same, but the checkpoint must match the given model config.
std::vector<std::filesystem::path> cmd_predict(const std::filesystem::path& checkpoint,
                                               const std::filesystem::path& in_dir,
                                               const std::filesystem::path& out_dir, const ModelConfig& expected);

metrics::MetricReport cmd_eval(const std::filesystem::path& pred_dir, const std::filesystem::path& gt_dir,
                               const std::filesystem::path& report_path, bool adaptive_f = false);

// no_cfe, no_ofs, no_lgr, no_gamma, bce_only, consensus_off, iters=0..3, top_n=1..4.
RunConfig apply_switch(RunConfig cfg, std::string_view name);

struct AblationReport {
    std::string switch_name;
    metrics::MetricReport full;
    metrics::MetricReport variant;
    std::filesystem::path json;
    std::filesystem::path csv;
};

// Trains the full model (reused when an identical finished run exists) and the
// variant under the same seed and data, and writes both side by side.
AblationReport ablate_run(const RunConfig& cfg, std::string_view name);
AblationReport cmd_ablate(const std::filesystem::path& config_path, std::string_view name);

}  // namespace bbnet

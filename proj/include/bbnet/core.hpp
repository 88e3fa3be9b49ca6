#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>

#include <torch/torch.h>

#include "bbnet/errors.hpp"

namespace bbnet {

struct Dims {
    std::int64_t batch = 1;
    std::int64_t channels = 1;
    std::int64_t height = 1;
    std::int64_t width = 1;

    // Throws ShapeError unless every extent is strictly positive.
    static Dims make(std::int64_t b, std::int64_t c, std::int64_t h, std::int64_t w);
    static Dims of(const torch::Tensor& t);

    bool operator==(const Dims&) const = default;
};

std::string to_string(const Dims& d);

// Semantic stage a feature map carries through the network.
enum class Stage {
    Cat,
    Shuffled,
    MultiView,
    Collaborative,
    Single,
    AffinityContext,
    PooledSum,
    Weighted,
    Object,
    Aggregated,
    Local,
    Global,
    Refined,
};

std::string_view stage_name(Stage s);

struct FeatureMap {
    torch::Tensor data;
    Stage stage = Stage::Cat;

    FeatureMap() = default;
    FeatureMap(torch::Tensor t, Stage s);

    Dims dims() const { return Dims::of(data); }
};

bool all_finite(const torch::Tensor& t);
// Throws NonFiniteError naming the stage.
void check_finite(const FeatureMap& f);

enum class BackboneId { TinyCnn, Res2Net50Like, ResNet50Like, Vgg16Like };

std::string_view backbone_name(BackboneId id);
BackboneId parse_backbone(std::string_view name);

// When the gate is frozen it is pinned to 1: the residual is always added.
enum class GammaMode { Learned, FixedOne };

struct ModelConfig {
    std::int64_t input_size = 288;
    std::int64_t channels = 64;
    std::int64_t multiview_iters = 2;
    std::int64_t lgr_grid = 3;
    std::int64_t lgr_top_n = 1;
    bool group_consensus = true;
    BackboneId backbone = BackboneId::Res2Net50Like;
    std::optional<std::filesystem::path> pretrained_path;

    // Ablation switches; a disabled module is an identity pass-through.
    bool use_cfe = true;
    bool use_ofs = true;
    bool use_lgr = true;
    GammaMode gamma_mode = GammaMode::Learned;

    // C=16, tiny_cnn, 96x96 inputs.
    static ModelConfig tiny();

    // Throws ConfigError on any invariant violation.
    void validate() const;

    bool operator==(const ModelConfig&) const = default;
};

enum class LossMode { BceIou, BceOnly };
// Sgd: momentum SGD with coupled weight decay. Adam: same momentum as beta1,
// decay added to the gradient.
enum class OptimizerKind { Sgd, Adam };
// Cosine: lr(step) = 0.5 * lr * (1 + cos(pi * (step - 1) / max_steps)).
enum class LrSchedule { Constant, Cosine };

struct TrainConfig {
    OptimizerKind optimizer = OptimizerKind::Sgd;
    LrSchedule lr_schedule = LrSchedule::Constant;
    double learning_rate = 1e-4;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    std::int64_t batch_size = 10;
    std::int64_t max_steps = 1000;
    std::uint64_t seed = 0;
    LossMode loss = LossMode::BceIou;
    std::int64_t checkpoint_every = 50;

    std::filesystem::path data_root;
    std::string train_split = "train";
    // Split evaluated after training; falls back to train_split when absent on disk.
    std::string eval_split = "train";
    std::filesystem::path run_dir = "runs/default";

    void validate() const;

    bool operator==(const TrainConfig&) const = default;
};

struct RunConfig {
    ModelConfig model;
    TrainConfig train;
};

// validate_dims: ok iff the stride-8 working resolution of cfg.input_size
// splits in half (shuffle) and in thirds (LGR grid). Throws DimsError naming
// the violated divisor.
void validate_dims(const Dims& d, const ModelConfig& cfg);
std::int64_t working_resolution(const ModelConfig& cfg);

using KeyValues = std::map<std::string, std::string>;

KeyValues model_to_kv(const ModelConfig& cfg);
KeyValues train_to_kv(const TrainConfig& cfg);
ModelConfig model_from_kv(const KeyValues& kv);

// Flat key=value config files. '#' starts a comment. Unknown keys throw.
KeyValues parse_key_values(std::string_view text);
std::string format_key_values(const KeyValues& kv);
RunConfig parse_run_config(std::string_view text);
RunConfig load_run_config(const std::filesystem::path& path);
std::string format_run_config(const RunConfig& cfg);

}  // namespace bbnet

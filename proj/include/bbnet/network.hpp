#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <torch/torch.h>

#include "bbnet/backbone.hpp"
#include "bbnet/cfe.hpp"
#include "bbnet/core.hpp"
#include "bbnet/lgr.hpp"
#include "bbnet/ofs.hpp"

namespace bbnet {

// d = conv1x1(sigmoid(gate) * f' + f') where f' is the backbone feature
// projected to C channels and resized to the gate's spatial size.
class DecoderImpl : public torch::nn::Module {
public:
    DecoderImpl(std::int64_t backbone_channels, std::int64_t channels);

    torch::Tensor forward(const torch::Tensor& gate, const torch::Tensor& backbone_feature);

    Conv project{nullptr};
    Conv fuse{nullptr};
};
TORCH_MODULE(Decoder);

struct ForwardOutput {
    torch::Tensor p;      // (B,1,S,S) final prediction
    torch::Tensor p_ofs;  // (B,1,S,S) OFS-branch prediction
    std::vector<FeatureMap> stages;
};

class BBNetImpl : public torch::nn::Module {
public:
    explicit BBNetImpl(ModelConfig cfg);

    // images: (B,3,S,S) in [0,1]. Stage maps are kept when requested; every
    // stage is checked for finiteness either way.
    ForwardOutput forward(const torch::Tensor& images, bool keep_stages = false);

    const ModelConfig& config() const { return cfg_; }

    // Parameters followed by buffers, each under its dotted module path.
    std::vector<std::pair<std::string, torch::Tensor>> named_state();

    Backbone backbone;
    Projection projection{nullptr};
    Cfe cfe{nullptr};
    Ofs ofs{nullptr};
    Lgr lgr{nullptr};
    Decoder decoder4{nullptr};
    Decoder decoder3{nullptr};
    Conv head{nullptr};

private:
    ModelConfig cfg_;
};
TORCH_MODULE(BBNet);

struct ModelSummary {
    std::int64_t param_count = 0;
    double flop_estimate = 0.0;  // 2 x multiply-adds of one image at input_size
};

ModelSummary model_summary(BBNet& net);

// Checkpoints: archive of named_state() plus the ModelConfig echo.
void save_checkpoint(const std::filesystem::path& path, BBNet& net);
// Rebuilds the network from the config echo.
BBNet load_checkpoint(const std::filesystem::path& path);
// Loads into an existing network; a config echo that differs from the
// network's config is a CheckpointMismatchError.
void load_checkpoint_into(const std::filesystem::path& path, BBNet& net);

}  // namespace bbnet

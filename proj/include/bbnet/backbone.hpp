#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>

#include <torch/torch.h>

#include "bbnet/core.hpp"
#include "bbnet/layers.hpp"

namespace bbnet {

inline constexpr std::array<std::int64_t, 5> kPyramidStrides{2, 4, 8, 16, 32};

struct BackboneDescriptor {
    BackboneId id = BackboneId::TinyCnn;
    std::array<std::int64_t, 5> channels{};
    std::optional<std::filesystem::path> pretrained_path;

    static BackboneDescriptor of(BackboneId id);
};

// Per-channel RGB statistics the backbones expect their input standardized with.
inline constexpr std::array<double, 3> kInputMean{0.485, 0.456, 0.406};
inline constexpr std::array<double, 3> kInputStd{0.229, 0.224, 0.225};

torch::Tensor standardize(const torch::Tensor& images);

// f1..f5 at strides 2, 4, 8, 16, 32.
struct FeaturePyramid {
    std::array<torch::Tensor, 5> levels;

    const torch::Tensor& level(int k) const { return levels.at(static_cast<std::size_t>(k - 1)); }
};

class BackboneImpl : public torch::nn::Module {
public:
    explicit BackboneImpl(BackboneDescriptor desc) : desc_(std::move(desc)) {}

    // Requires a square (B,3,S,S) input in [0,1] with S divisible by 32;
    // standardizes it before the stages run.
    FeaturePyramid extract(const torch::Tensor& images);
    const BackboneDescriptor& descriptor() const { return desc_; }

protected:
    virtual FeaturePyramid run(const torch::Tensor& images) = 0;

private:
    BackboneDescriptor desc_;
};

using Backbone = std::shared_ptr<BackboneImpl>;

// Five stride-2 stages of 3x3 conv + ReLU; channels 16, 32, 64, 96, 128.
class TinyCnnImpl : public BackboneImpl {
public:
    TinyCnnImpl();

    // Stages without the input-size check, for gradient probes on small maps.
    FeaturePyramid run(const torch::Tensor& images) override;

private:
    std::array<Conv, 5> stages_{nullptr, nullptr, nullptr, nullptr, nullptr};
};

Backbone make_backbone(const BackboneDescriptor& desc);

// Loads a name->tensor archive into the backbone. Every parameter and buffer
// must be present with a matching shape; anything else is a WeightLoadError.
void load_backbone_weights(BackboneImpl& backbone, const std::filesystem::path& path);

// Learned 1x1 projections of f3, f4, f5 onto C channels.
class ProjectionImpl : public torch::nn::Module {
public:
    ProjectionImpl(const std::array<std::int64_t, 5>& channels, std::int64_t c);

    std::array<torch::Tensor, 3> forward(const FeaturePyramid& pyr);

    Conv p3{nullptr}, p4{nullptr}, p5{nullptr};
};
TORCH_MODULE(Projection);

}  // namespace bbnet

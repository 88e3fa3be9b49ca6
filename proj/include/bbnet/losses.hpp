#pragma once

#include <torch/torch.h>

#include "bbnet/core.hpp"
#include "bbnet/network.hpp"

namespace bbnet {

inline constexpr double kProbClamp = 1e-7;
inline constexpr std::int64_t kWeightWindow = 31;
inline constexpr double kWeightFactor = 5.0;

// omega = 1 + 5 |avgpool31(G) - G|, averaged over in-image pixels only, so
// constant masks get omega == 1 everywhere. Range [1, 6].
torch::Tensor pixel_weights(const torch::Tensor& g);

// Per-image -sum(w (G log P + (1-G) log(1-P))) / sum(w), averaged over the
// batch. P is clamped to [eps, 1-eps].
torch::Tensor weighted_bce(const torch::Tensor& p, const torch::Tensor& g, const torch::Tensor& w);

// Per-image 1 - (sum(w P G) + 1) / (sum(w (P + G - P G)) + 1), batch mean.
torch::Tensor weighted_iou(const torch::Tensor& p, const torch::Tensor& g, const torch::Tensor& w);

struct LossTerms {
    torch::Tensor wbce_final;
    torch::Tensor wiou_final;
    torch::Tensor wbce_ofs;
    torch::Tensor wiou_ofs;
    torch::Tensor total;
};

struct LossOptions {
    LossMode mode = LossMode::BceIou;
    // Without the OFS branch its supervision is dropped.
    bool supervise_ofs = true;
};

// wbce(P) + wiou(P) + wbce(P_ofs) + wiou(P_ofs); disabled terms are zero.
LossTerms total_loss(const torch::Tensor& p, const torch::Tensor& p_ofs, const torch::Tensor& g,
                     const LossOptions& opts = {});
LossTerms total_loss(const ForwardOutput& out, const torch::Tensor& g, const LossOptions& opts = {});

}  // namespace bbnet

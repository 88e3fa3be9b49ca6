#pragma once

#include <cstdint>

#include <torch/torch.h>

#include "bbnet/core.hpp"
#include "bbnet/layers.hpp"

namespace bbnet {

// Intra-image object feature search.
//
//   q = conv3x3(f), k = conv3x3(f)                 (B,HW,C), (B,C,HW)
//   A = q k                                        (B,HW,HW) affinity
//   context = (A . f) / HW  back in (B,C,H,W)
//   f_sum = maxpool3(context) + avgpool3(context)
//   f_w = conv3x1(conv1x3(GAP(f_sum) * context))
//   f_obj = f + gamma * f_w                        gamma starts at 0
class OfsImpl : public torch::nn::Module {
public:
    OfsImpl(std::int64_t channels, GammaMode gamma_mode);

    // Affinity product returned to spatial layout (the first three steps).
    torch::Tensor affinity_context(const torch::Tensor& f_sin);
    // The (B,HW,HW) affinity q.k.
    torch::Tensor affinity(const torch::Tensor& f_sin);

    FeatureMap forward(const FeatureMap& f_sin);

    // 1x1 to one channel, bilinear upsample to `size`, sigmoid.
    torch::Tensor head(const torch::Tensor& f_obj, std::int64_t size);

    // Current gate value (1 when frozen).
    torch::Tensor gate() const;

    Conv query{nullptr}, key{nullptr};
    Conv gate_row{nullptr};  // 1x3
    Conv gate_col{nullptr};  // 3x1
    Conv head_conv{nullptr};
    torch::Tensor gamma;
    GammaMode gamma_mode;
};
TORCH_MODULE(Ofs);

}  // namespace bbnet

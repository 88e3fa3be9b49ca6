#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include <torch/torch.h>

#include "bbnet/core.hpp"
#include "bbnet/layers.hpp"

namespace bbnet {

// Perfect shuffle of n indices: the axis is viewed as (2, n/2), the two
// factors are swapped and the result flattened. Output position b*2+a holds
// input index a*(n/2)+b. Throws DimsError for odd n.
std::vector<std::int64_t> perfect_shuffle(std::int64_t n);
std::vector<std::int64_t> inverse_permutation(const std::vector<std::int64_t>& perm);

struct ShufflePermutation {
    std::vector<std::int64_t> row_map;
    std::vector<std::int64_t> col_map;

    static ShufflePermutation for_size(std::int64_t h, std::int64_t w);
};

// Gathers rows (axis 2) or columns (axis 3) of a (B,C,H,W) tensor so that
// out[..., i, ...] = x[..., perm[i], ...].
torch::Tensor permute_rows(const torch::Tensor& x, const std::vector<std::int64_t>& perm);
torch::Tensor permute_cols(const torch::Tensor& x, const std::vector<std::int64_t>& perm);

struct MultiViewConfig {
    static constexpr double kDownFactor = 0.5;
    static constexpr std::array<double, 2> kUpFactors{2.0, 4.0};
    std::int64_t iterations = 2;
};

// Batch-mean gate: out = f * sigmoid(mean_B f), broadcast over the group.
torch::Tensor group_consensus(const torch::Tensor& f);

class CfeImpl : public torch::nn::Module {
public:
    CfeImpl(std::int64_t channels, MultiViewConfig mv, bool consensus);

    // f4p and f5p are resized to f3p's spatial size, concatenated (3C) and
    // reduced back to C by a 1x1 convolution.
    FeatureMap concat_levels(const torch::Tensor& f3p, const torch::Tensor& f4p, const torch::Tensor& f5p);

    // Row-shuffled and column-shuffled copies, channel-concatenated (2C) and
    // reduced to C.
    FeatureMap shuffle(const FeatureMap& f_cat);

    // Per-pixel channel attention from 0.5x/2x/4x rescaled views. Returns the
    // softmax weights of one pass applied to x.
    torch::Tensor view_weights(const torch::Tensor& x);

    // `iterations` passes of f <- f * view_weights(f), then the optional
    // group consensus gate.
    FeatureMap multi_view(const FeatureMap& f_sh);

    FeatureMap forward(const torch::Tensor& f3p, const torch::Tensor& f4p, const torch::Tensor& f5p);

    Conv reduce_cat{nullptr};
    Conv reduce_shuffle{nullptr};
    Conv view_fuse{nullptr};

    MultiViewConfig mv;
    bool consensus;
};
TORCH_MODULE(Cfe);

}  // namespace bbnet

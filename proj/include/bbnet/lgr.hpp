#pragma once

#include <cstdint>
#include <vector>

#include <torch/torch.h>

#include "bbnet/core.hpp"
#include "bbnet/layers.hpp"

namespace bbnet {

// f_col * f_obj. Throws ShapeError on mismatch.
FeatureMap aggregate(const FeatureMap& f_col, const FeatureMap& f_obj);

// Per-image probabilities of the grid x grid blocks (row-major), each the
// mean of sigmoid over the block's channels and pixels. Shape (B, grid^2).
torch::Tensor block_probabilities(const torch::Tensor& f, std::int64_t grid = 3);

// Indices of the top_n blocks per image, highest first; ties go to the
// lower row-major index.
std::vector<std::vector<std::int64_t>> select_blocks(const torch::Tensor& probs, std::int64_t top_n);

// Cuts block `index` of a grid x grid partition out of one image (C,H,W).
torch::Tensor block_at(const torch::Tensor& image, std::int64_t index, std::int64_t grid = 3);

struct LocalSelection {
    torch::Tensor blocks;  // (B,C,H/3,W/3), mean of the selected blocks
    std::vector<std::vector<std::int64_t>> indices;
};

// Throws DimsError when H or W is not divisible by the grid.
LocalSelection select_local(const torch::Tensor& f_ag, std::int64_t top_n, std::int64_t grid = 3);

class LgrImpl : public torch::nn::Module {
public:
    LgrImpl(std::int64_t channels, std::int64_t top_n);

    FeatureMap local_refine(const FeatureMap& f_ag);
    FeatureMap global_refine(const FeatureMap& f_ag);
    // conv3x3(cat(upsample3x(f_local), f_global)) -> C channels.
    FeatureMap fuse(const FeatureMap& f_local, const FeatureMap& f_global);

    FeatureMap forward(const FeatureMap& f_ag);

    Conv local_row{nullptr}, local_col{nullptr};
    Conv global_row{nullptr}, global_col{nullptr};
    Conv fuse_conv{nullptr};
    std::int64_t top_n;
    std::vector<std::vector<std::int64_t>> last_selection;
};
TORCH_MODULE(Lgr);

}  // namespace bbnet

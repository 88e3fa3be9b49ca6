#include "bbnet/cfe.hpp"

#include <string>

namespace bbnet {

std::vector<std::int64_t> perfect_shuffle(std::int64_t n) {
    if (n <= 0 || n % 2 != 0) {
        throw DimsError(2, "shuffle needs an even extent, got " + std::to_string(n));
    }
    const auto half = n / 2;
    std::vector<std::int64_t> perm(static_cast<std::size_t>(n));
    for (std::int64_t a = 0; a < 2; ++a) {
        for (std::int64_t b = 0; b < half; ++b) {
            perm[static_cast<std::size_t>(b * 2 + a)] = a * half + b;
        }
    }
    return perm;
}

std::vector<std::int64_t> inverse_permutation(const std::vector<std::int64_t>& perm) {
    std::vector<std::int64_t> inv(perm.size());
    for (std::size_t i = 0; i < perm.size(); ++i) inv[static_cast<std::size_t>(perm[i])] = static_cast<std::int64_t>(i);
    return inv;
}

ShufflePermutation ShufflePermutation::for_size(std::int64_t h, std::int64_t w) {
    return {perfect_shuffle(h), perfect_shuffle(w)};
}

namespace {
torch::Tensor index_tensor(const std::vector<std::int64_t>& perm, const torch::Device& device) {
    return torch::tensor(perm, torch::TensorOptions().dtype(torch::kLong)).to(device);
}
}  // namespace

torch::Tensor permute_rows(const torch::Tensor& x, const std::vector<std::int64_t>& perm) {
    return x.index_select(2, index_tensor(perm, x.device()));
}

torch::Tensor permute_cols(const torch::Tensor& x, const std::vector<std::int64_t>& perm) {
    return x.index_select(3, index_tensor(perm, x.device()));
}

torch::Tensor group_consensus(const torch::Tensor& f) {
    auto m = f.mean(0, /*keepdim=*/true);
    return f * torch::sigmoid(m);
}

CfeImpl::CfeImpl(std::int64_t channels, MultiViewConfig mv_cfg, bool use_consensus)
    : mv(mv_cfg), consensus(use_consensus) {
    reduce_cat = register_module("reduce_cat", conv1x1(3 * channels, channels));
    reduce_shuffle = register_module("reduce_shuffle", conv1x1(2 * channels, channels));
    view_fuse = register_module("view_fuse", conv1x1(3 * channels, channels));
}

FeatureMap CfeImpl::concat_levels(const torch::Tensor& f3p, const torch::Tensor& f4p, const torch::Tensor& f5p) {
    const auto c = f3p.size(1);
    if (f4p.size(1) != c || f5p.size(1) != c) throw ShapeError("concat_levels: channel counts differ");
    const auto h = f3p.size(2);
    const auto w = f3p.size(3);
    auto cat = torch::cat({f3p, resize_bilinear(f4p, h, w), resize_bilinear(f5p, h, w)}, 1);
    return {reduce_cat->forward(cat), Stage::Cat};
}

FeatureMap CfeImpl::shuffle(const FeatureMap& f_cat) {
    const auto& x = f_cat.data;
    const auto perm = ShufflePermutation::for_size(x.size(2), x.size(3));
    auto branch_h = permute_rows(x, perm.row_map);
    auto branch_w = permute_cols(x, perm.col_map);
    return {reduce_shuffle->forward(torch::cat({branch_h, branch_w}, 1)), Stage::Shuffled};
}

torch::Tensor CfeImpl::view_weights(const torch::Tensor& x) {
    const auto h = x.size(2);
    const auto w = x.size(3);
    std::vector<torch::Tensor> views;
    views.push_back(resize_bilinear(scale_bilinear(x, MultiViewConfig::kDownFactor), h, w));
    for (double up : MultiViewConfig::kUpFactors) {
        views.push_back(resize_bilinear(scale_bilinear(x, up), h, w));
    }
    return torch::softmax(view_fuse->forward(torch::cat(views, 1)), 1);
}

FeatureMap CfeImpl::multi_view(const FeatureMap& f_sh) {
    auto f = f_sh.data;
    for (std::int64_t i = 0; i < mv.iterations; ++i) f = f * view_weights(f);
    if (consensus) f = group_consensus(f);
    return {f, Stage::Collaborative};
}

FeatureMap CfeImpl::forward(const torch::Tensor& f3p, const torch::Tensor& f4p, const torch::Tensor& f5p) {
    return multi_view(shuffle(concat_levels(f3p, f4p, f5p)));
}

}  // namespace bbnet

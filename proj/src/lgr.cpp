#include "bbnet/lgr.hpp"

#include <algorithm>
#include <numeric>
#include <string>

namespace bbnet {

FeatureMap aggregate(const FeatureMap& f_col, const FeatureMap& f_obj) {
    if (f_col.data.sizes() != f_obj.data.sizes()) {
        throw ShapeError("aggregate: " + to_string(f_col.dims()) + " vs " + to_string(f_obj.dims()));
    }
    return {f_col.data * f_obj.data, Stage::Aggregated};
}

namespace {
void check_grid(const torch::Tensor& f, std::int64_t grid) {
    if (f.dim() != 4) throw ShapeError("expected (B,C,H,W)");
    if (f.size(2) % grid != 0 || f.size(3) % grid != 0) {
        throw DimsError(static_cast<int>(grid), "LGR grid needs H and W divisible by " + std::to_string(grid) +
                                                    ", got " + to_string(Dims::of(f)));
    }
}
}  // namespace

torch::Tensor block_at(const torch::Tensor& image, std::int64_t index, std::int64_t grid) {
    const auto bh = image.size(1) / grid;
    const auto bw = image.size(2) / grid;
    const auto r = index / grid;
    const auto c = index % grid;
    return image.narrow(1, r * bh, bh).narrow(2, c * bw, bw);
}

torch::Tensor block_probabilities(const torch::Tensor& f, std::int64_t grid) {
    check_grid(f, grid);
    const auto b = f.size(0);
    const auto c = f.size(1);
    const auto bh = f.size(2) / grid;
    const auto bw = f.size(3) / grid;
    // (B,C,g,bh,g,bw) -> mean over C, bh, bw -> (B,g,g)
    auto s = torch::sigmoid(f).reshape({b, c, grid, bh, grid, bw});
    return s.mean(std::vector<std::int64_t>{1, 3, 5}).reshape({b, grid * grid});
}

std::vector<std::vector<std::int64_t>> select_blocks(const torch::Tensor& probs, std::int64_t top_n) {
    auto p = probs.detach().to(torch::kCPU).to(torch::kFloat64).contiguous();
    const auto b = p.size(0);
    const auto n = p.size(1);
    if (top_n < 1 || top_n > n) throw ConfigError("top_n must lie in [1," + std::to_string(n) + "]");
    auto acc = p.accessor<double, 2>();
    std::vector<std::vector<std::int64_t>> out(static_cast<std::size_t>(b));
    for (std::int64_t i = 0; i < b; ++i) {
        std::vector<std::int64_t> idx(static_cast<std::size_t>(n));
        std::iota(idx.begin(), idx.end(), 0);
        std::stable_sort(idx.begin(), idx.end(), [&](auto x, auto y) { return acc[i][x] > acc[i][y]; });
        idx.resize(static_cast<std::size_t>(top_n));
        out[static_cast<std::size_t>(i)] = std::move(idx);
    }
    return out;
}

LocalSelection select_local(const torch::Tensor& f_ag, std::int64_t top_n, std::int64_t grid) {
    auto probs = block_probabilities(f_ag, grid);
    LocalSelection sel;
    sel.indices = select_blocks(probs, top_n);
    std::vector<torch::Tensor> per_image;
    for (std::int64_t i = 0; i < f_ag.size(0); ++i) {
        const auto image = f_ag[i];
        const auto& chosen = sel.indices[static_cast<std::size_t>(i)];
        auto acc = block_at(image, chosen.front(), grid);
        for (std::size_t j = 1; j < chosen.size(); ++j) acc = acc + block_at(image, chosen[j], grid);
        if (chosen.size() > 1) acc = acc / static_cast<double>(chosen.size());
        per_image.push_back(acc);
    }
    sel.blocks = torch::stack(per_image, 0);
    return sel;
}

LgrImpl::LgrImpl(std::int64_t channels, std::int64_t n) : top_n(n) {
    local_row = register_module("local_row", Conv(channels, channels, 1, 3));
    local_col = register_module("local_col", Conv(channels, channels, 3, 1));
    global_row = register_module("global_row", Conv(channels, channels, 1, 3));
    global_col = register_module("global_col", Conv(channels, channels, 3, 1));
    fuse_conv = register_module("fuse", conv3x3(2 * channels, channels));
}

FeatureMap LgrImpl::local_refine(const FeatureMap& f_ag) {
    auto sel = select_local(f_ag.data, top_n);
    last_selection = sel.indices;
    return {local_col->forward(local_row->forward(sel.blocks)), Stage::Local};
}

FeatureMap LgrImpl::global_refine(const FeatureMap& f_ag) {
    return {global_col->forward(global_row->forward(f_ag.data)), Stage::Global};
}

FeatureMap LgrImpl::fuse(const FeatureMap& f_local, const FeatureMap& f_global) {
    const auto& l = f_local.data;
    const auto& g = f_global.data;
    if (l.size(0) != g.size(0) || l.size(1) != g.size(1) || l.size(2) * 3 != g.size(2) || l.size(3) * 3 != g.size(3)) {
        throw ShapeError("fuse: local " + to_string(f_local.dims()) + " is not a third of global " +
                         to_string(f_global.dims()));
    }
    auto up = resize_bilinear(l, g.size(2), g.size(3));
    return {fuse_conv->forward(torch::cat({up, g}, 1)), Stage::Refined};
}

FeatureMap LgrImpl::forward(const FeatureMap& f_ag) {
    return fuse(local_refine(f_ag), global_refine(f_ag));
}

}  // namespace bbnet

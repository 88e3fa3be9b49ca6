#include "bbnet/layers.hpp"

#include <cmath>

namespace bbnet {

namespace {
thread_local MacScope* active_scope = nullptr;
}

MacScope::MacScope() { active_scope = this; }
MacScope::~MacScope() {
    if (active_scope == this) active_scope = nullptr;
}

void count_macs(std::int64_t macs) {
    if (active_scope != nullptr) active_scope->total_ += macs;
}

ConvImpl::ConvImpl(std::int64_t in, std::int64_t out, std::int64_t kh, std::int64_t kw, std::int64_t stride,
                   bool bias) {
    auto opts = torch::nn::Conv2dOptions(in, out, {kh, kw})
                    .stride(stride)
                    .padding(std::vector<std::int64_t>{kh / 2, kw / 2})
                    .bias(bias);
    conv = register_module("conv", torch::nn::Conv2d(opts));
    torch::NoGradGuard guard;
    torch::nn::init::kaiming_normal_(conv->weight, 0.0, torch::kFanIn, torch::kReLU);
    if (bias) conv->bias.zero_();
}

torch::Tensor ConvImpl::forward(const torch::Tensor& x) {
    auto y = conv->forward(x);
    const auto& w = conv->weight;
    count_macs(y.numel() * w.size(1) * w.size(2) * w.size(3));
    return y;
}

torch::Tensor resize_bilinear(const torch::Tensor& x, std::int64_t h, std::int64_t w) {
    if (x.size(2) == h && x.size(3) == w) return x;
    namespace F = torch::nn::functional;
    return F::interpolate(x, F::InterpolateFuncOptions()
                                 .size(std::vector<std::int64_t>{h, w})
                                 .mode(torch::kBilinear)
                                 .align_corners(false));
}

torch::Tensor scale_bilinear(const torch::Tensor& x, double factor) {
    const auto h = static_cast<std::int64_t>(std::llround(static_cast<double>(x.size(2)) * factor));
    const auto w = static_cast<std::int64_t>(std::llround(static_cast<double>(x.size(3)) * factor));
    return resize_bilinear(x, std::max<std::int64_t>(h, 1), std::max<std::int64_t>(w, 1));
}

std::int64_t parameter_count(const torch::nn::Module& m) {
    std::int64_t n = 0;
    for (const auto& p : m.parameters()) n += p.numel();
    return n;
}

}  // namespace bbnet

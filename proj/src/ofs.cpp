#include "bbnet/ofs.hpp"

namespace bbnet {

namespace F = torch::nn::functional;

OfsImpl::OfsImpl(std::int64_t channels, GammaMode mode) : gamma_mode(mode) {
    query = register_module("query", conv3x3(channels, channels));
    key = register_module("key", conv3x3(channels, channels));
    gate_row = register_module("gate_row", Conv(channels, channels, 1, 3));
    gate_col = register_module("gate_col", Conv(channels, channels, 3, 1));
    head_conv = register_module("head", conv1x1(channels, 1));
    if (gamma_mode == GammaMode::Learned) {
        gamma = register_parameter("gamma", torch::zeros({1}));
    } else {
        gamma = register_buffer("gamma", torch::ones({1}));
    }
}

torch::Tensor OfsImpl::affinity(const torch::Tensor& f_sin) {
    const auto b = f_sin.size(0);
    const auto c = f_sin.size(1);
    const auto hw = f_sin.size(2) * f_sin.size(3);
    auto q = query->forward(f_sin).reshape({b, c, hw}).transpose(1, 2);  // (B,HW,C)
    auto k = key->forward(f_sin).reshape({b, c, hw});                    // (B,C,HW)
    count_macs(b * hw * hw * c);
    return torch::bmm(q, k);
}

torch::Tensor OfsImpl::affinity_context(const torch::Tensor& f_sin) {
    const auto b = f_sin.size(0);
    const auto c = f_sin.size(1);
    const auto h = f_sin.size(2);
    const auto w = f_sin.size(3);
    const auto hw = h * w;
    auto a = affinity(f_sin);
    auto v = f_sin.reshape({b, c, hw}).transpose(1, 2);  // (B,HW,C)
    count_macs(b * hw * hw * c);
    auto ctx = torch::bmm(a, v) / static_cast<double>(hw);
    return ctx.transpose(1, 2).reshape({b, c, h, w});
}

torch::Tensor OfsImpl::gate() const { return gamma; }

FeatureMap OfsImpl::forward(const FeatureMap& f_sin) {
    const auto& x = f_sin.data;
    auto context = affinity_context(x);
    auto f_sum = F::max_pool2d(context, F::MaxPool2dFuncOptions(3).stride(1).padding(1)) +
                 F::avg_pool2d(context, F::AvgPool2dFuncOptions(3).stride(1).padding(1).count_include_pad(false));
    auto g = F::adaptive_avg_pool2d(f_sum, F::AdaptiveAvgPool2dFuncOptions(1));
    auto f_w = gate_col->forward(gate_row->forward(g * context));
    return {x + gamma.to(x.dtype()) * f_w, Stage::Object};
}

torch::Tensor OfsImpl::head(const torch::Tensor& f_obj, std::int64_t size) {
    return torch::sigmoid(resize_bilinear(head_conv->forward(f_obj), size, size));
}

}  // namespace bbnet

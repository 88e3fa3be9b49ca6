#pragma once

#include <cstdint>

#include <torch/torch.h>

namespace bbnet {

// Accumulates multiply-accumulate counts from every Conv/matmul executed
// on this thread while a scope is alive. Scopes do not nest.
class MacScope {
public:
    MacScope();
    ~MacScope();
    MacScope(const MacScope&) = delete;
    MacScope& operator=(const MacScope&) = delete;

    std::int64_t total() const { return total_; }

private:
    friend void count_macs(std::int64_t);
    std::int64_t total_ = 0;
};

void count_macs(std::int64_t macs);

// 2-D convolution with "same" padding for odd kernels. Weights are
// He-initialized, biases start at zero.
class ConvImpl : public torch::nn::Module {
public:
    ConvImpl(std::int64_t in, std::int64_t out, std::int64_t kh, std::int64_t kw, std::int64_t stride = 1,
             bool bias = true);

    torch::Tensor forward(const torch::Tensor& x);

    torch::nn::Conv2d conv{nullptr};
};
TORCH_MODULE(Conv);

inline Conv conv1x1(std::int64_t in, std::int64_t out) { return Conv(in, out, 1, 1); }
inline Conv conv3x3(std::int64_t in, std::int64_t out, std::int64_t stride = 1) {
    return Conv(in, out, 3, 3, stride);
}

// Bilinear, half-pixel centers (align_corners = false).
torch::Tensor resize_bilinear(const torch::Tensor& x, std::int64_t h, std::int64_t w);
torch::Tensor scale_bilinear(const torch::Tensor& x, double factor);

std::int64_t parameter_count(const torch::nn::Module& m);

}  // namespace bbnet

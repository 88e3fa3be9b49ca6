#pragma once

#include <string>
#include <utility>
#include <vector>

#include <torch/torch.h>

namespace bbnet::testing {

inline std::vector<std::pair<std::string, torch::Tensor>> parameters_of(const torch::nn::Module& m,
                                                                        const std::string& prefix = "") {
    std::vector<std::pair<std::string, torch::Tensor>> out;
    for (const auto& item : m.named_parameters()) out.emplace_back(prefix + item.key(), item.value());
    return out;
}

// sum(out * probe) for a fixed random probe: a generic scalar readout.
inline torch::Tensor readout(const torch::Tensor& out, const torch::Tensor& probe) { return (out * probe).sum(); }

inline torch::Tensor rand64(torch::IntArrayRef shape) { return torch::randn(shape, torch::kFloat64); }

// Overwrites weights (std 0.5) and biases (std 0.1) with random values; the OFS gate is left alone.
inline void randomize(torch::nn::Module& m) {
    torch::NoGradGuard g;
    for (auto& p : m.named_parameters()) {
        if (p.key() == "gamma") continue;
        const bool bias = p.key().find("bias") != std::string::npos;
        p.value().normal_(0.0, bias ? 0.1 : 0.5);
    }
}

}  // namespace bbnet::testing

#include "bbnet/losses.hpp"

namespace bbnet {

namespace F = torch::nn::functional;

torch::Tensor pixel_weights(const torch::Tensor& g) {
    auto local = F::avg_pool2d(g, F::AvgPool2dFuncOptions(kWeightWindow)
                                      .stride(1)
                                      .padding(kWeightWindow / 2)
                                      .count_include_pad(false));
    return 1.0 + kWeightFactor * (local - g).abs();
}

torch::Tensor weighted_bce(const torch::Tensor& p, const torch::Tensor& g, const torch::Tensor& w) {
    auto pc = p.clamp(kProbClamp, 1.0 - kProbClamp);
    auto bce = -(g * pc.log() + (1.0 - g) * (1.0 - pc).log());
    const std::vector<std::int64_t> dims{1, 2, 3};
    return ((w * bce).sum(dims) / w.sum(dims)).mean();
}

torch::Tensor weighted_iou(const torch::Tensor& p, const torch::Tensor& g, const torch::Tensor& w) {
    auto pc = p.clamp(kProbClamp, 1.0 - kProbClamp);
    const std::vector<std::int64_t> dims{1, 2, 3};
    auto inter = (w * pc * g).sum(dims);
    auto uni = (w * (pc + g - pc * g)).sum(dims);
    return (1.0 - (inter + 1.0) / (uni + 1.0)).mean();
}

LossTerms total_loss(const torch::Tensor& p, const torch::Tensor& p_ofs, const torch::Tensor& g,
                     const LossOptions& opts) {
    if (p.sizes() != g.sizes() || p_ofs.sizes() != g.sizes()) {
        throw ShapeError("total_loss: prediction and mask shapes differ");
    }
    auto w = pixel_weights(g);
    auto zero = torch::zeros({}, p.options());
    const bool iou = opts.mode == LossMode::BceIou;
    LossTerms t;
    t.wbce_final = weighted_bce(p, g, w);
    t.wiou_final = iou ? weighted_iou(p, g, w) : zero;
    t.wbce_ofs = opts.supervise_ofs ? weighted_bce(p_ofs, g, w) : zero;
    t.wiou_ofs = (opts.supervise_ofs && iou) ? weighted_iou(p_ofs, g, w) : zero;
    t.total = t.wbce_final + t.wiou_final + t.wbce_ofs + t.wiou_ofs;
    return t;
}

LossTerms total_loss(const ForwardOutput& out, const torch::Tensor& g, const LossOptions& opts) {
    return total_loss(out.p, out.p_ofs, g, opts);
}

}  // namespace bbnet

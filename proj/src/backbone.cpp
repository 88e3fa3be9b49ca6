#include "bbnet/backbone.hpp"

#include <string>

#include "bbnet/archive.hpp"

namespace bbnet {

namespace F = torch::nn::functional;

BackboneDescriptor BackboneDescriptor::of(BackboneId id) {
    BackboneDescriptor d;
    d.id = id;
    switch (id) {
        case BackboneId::TinyCnn: d.channels = {16, 32, 64, 96, 128}; break;
        case BackboneId::Res2Net50Like:
        case BackboneId::ResNet50Like: d.channels = {64, 256, 512, 1024, 2048}; break;
        case BackboneId::Vgg16Like: d.channels = {64, 128, 256, 512, 512}; break;
    }
    return d;
}

torch::Tensor standardize(const torch::Tensor& images) {
    const auto opts = images.options();
    const auto mean = torch::tensor(std::vector<double>(kInputMean.begin(), kInputMean.end()), opts).view({1, 3, 1, 1});
    const auto std = torch::tensor(std::vector<double>(kInputStd.begin(), kInputStd.end()), opts).view({1, 3, 1, 1});
    return (images - mean) / std;
}

FeaturePyramid BackboneImpl::extract(const torch::Tensor& images) {
    if (images.dim() != 4 || images.size(1) != 3 || images.size(2) != images.size(3)) {
        throw ShapeError("backbone expects (B,3,S,S) input");
    }
    if (images.size(2) % 32 != 0) {
        throw DimsError(32, "backbone input size " + std::to_string(images.size(2)) + " is not divisible by 32");
    }
    auto pyr = run(standardize(images));
    for (int k = 0; k < 5; ++k) {
        const auto& t = pyr.levels[static_cast<std::size_t>(k)];
        const auto expect = images.size(2) / kPyramidStrides[static_cast<std::size_t>(k)];
        if (t.size(1) != desc_.channels[static_cast<std::size_t>(k)] || t.size(2) != expect || t.size(3) != expect) {
            throw ShapeError("backbone level f" + std::to_string(k + 1) + " violates its stride/channel contract");
        }
    }
    return pyr;
}

TinyCnnImpl::TinyCnnImpl() : BackboneImpl(BackboneDescriptor::of(BackboneId::TinyCnn)) {
    std::int64_t in = 3;
    for (std::size_t i = 0; i < 5; ++i) {
        const auto out = descriptor().channels[i];
        stages_[i] = register_module("stage" + std::to_string(i + 1), conv3x3(in, out, 2));
        in = out;
    }
}

FeaturePyramid TinyCnnImpl::run(const torch::Tensor& images) {
    FeaturePyramid pyr;
    auto x = images;
    for (std::size_t i = 0; i < 5; ++i) {
        x = torch::relu(stages_[i]->forward(x));
        pyr.levels[i] = x;
    }
    return pyr;
}

namespace {

// conv -> batch norm, optionally followed by ReLU.
struct ConvBnImpl : torch::nn::Module {
    ConvBnImpl(std::int64_t in, std::int64_t out, std::int64_t k, std::int64_t stride)
        : conv(register_module("conv", Conv(in, out, k, k, stride, /*bias=*/false))),
          bn(register_module("bn", torch::nn::BatchNorm2d(out))) {}

    torch::Tensor forward(const torch::Tensor& x, bool relu = true) {
        auto y = bn->forward(conv->forward(x));
        return relu ? torch::relu(y) : y;
    }

    Conv conv;
    torch::nn::BatchNorm2d bn;
};
TORCH_MODULE(ConvBn);

class ResidualUnit : public torch::nn::Module {
public:
    virtual torch::Tensor forward(const torch::Tensor& x) = 0;
};

// 1x1 reduce, 3x3 (strided), 1x1 expand, projection shortcut when needed.
class BottleneckImpl : public ResidualUnit {
public:
    BottleneckImpl(std::int64_t in, std::int64_t planes, std::int64_t stride) {
        const auto out = planes * 4;
        reduce_ = register_module("reduce", ConvBn(in, planes, 1, 1));
        spatial_ = register_module("spatial", ConvBn(planes, planes, 3, stride));
        expand_ = register_module("expand", ConvBn(planes, out, 1, 1));
        if (stride != 1 || in != out) shortcut_ = register_module("shortcut", ConvBn(in, out, 1, stride));
    }

    torch::Tensor forward(const torch::Tensor& x) override {
        auto y = expand_->forward(spatial_->forward(reduce_->forward(x)), false);
        auto id = shortcut_ ? shortcut_->forward(x, false) : x;
        return torch::relu(y + id);
    }

private:
    ConvBn reduce_{nullptr}, spatial_{nullptr}, expand_{nullptr}, shortcut_{nullptr};
};

// Hierarchical split-scale residual unit: the 3x3 stage is split into
// `scale` channel groups, each group also receiving the previous group's
// output (except in the first unit of a stage).
class SplitScaleUnitImpl : public ResidualUnit {
public:
    SplitScaleUnitImpl(std::int64_t in, std::int64_t planes, std::int64_t stride, bool first,
                       std::int64_t base_width = 26, std::int64_t scale = 4)
        : stride_(stride), first_(first), scale_(scale) {
        width_ = planes * base_width / 64;
        const auto out = planes * 4;
        reduce_ = register_module("reduce", ConvBn(in, width_ * scale, 1, 1));
        for (std::int64_t i = 0; i < scale - 1; ++i) {
            branches_.push_back(register_module("branch" + std::to_string(i), ConvBn(width_, width_, 3, stride)));
        }
        expand_ = register_module("expand", ConvBn(width_ * scale, out, 1, 1));
        if (stride != 1 || in != out) shortcut_ = register_module("shortcut", ConvBn(in, out, 1, stride));
    }

    torch::Tensor forward(const torch::Tensor& x) override {
        auto parts = reduce_->forward(x).split(width_, 1);
        std::vector<torch::Tensor> outs;
        torch::Tensor sp;
        for (std::int64_t i = 0; i < scale_ - 1; ++i) {
            const auto& part = parts[static_cast<std::size_t>(i)];
            sp = (i == 0 || first_) ? part : sp + part;
            sp = branches_[static_cast<std::size_t>(i)]->forward(sp);
            outs.push_back(sp);
        }
        auto last = parts.back();
        if (first_) {
            last = F::avg_pool2d(last, F::AvgPool2dFuncOptions(3).stride(stride_).padding(1));
        }
        outs.push_back(last);
        auto y = expand_->forward(torch::cat(outs, 1), false);
        auto id = shortcut_ ? shortcut_->forward(x, false) : x;
        return torch::relu(y + id);
    }

private:
    std::int64_t stride_;
    bool first_;
    std::int64_t scale_;
    std::int64_t width_ = 0;
    ConvBn reduce_{nullptr}, expand_{nullptr}, shortcut_{nullptr};
    std::vector<ConvBn> branches_;
};

// Stem (7x7/2) -> f1; maxpool + 4 residual stages -> f2..f5 with [3,4,6,3] units.
class ResidualBackboneImpl : public BackboneImpl {
public:
    ResidualBackboneImpl(BackboneId id) : BackboneImpl(BackboneDescriptor::of(id)) {
        stem_ = register_module("stem", ConvBn(3, 64, 7, 2));
        const std::array<std::int64_t, 4> units{3, 4, 6, 3};
        const std::array<std::int64_t, 4> planes{64, 128, 256, 512};
        std::int64_t in = 64;
        for (std::size_t s = 0; s < 4; ++s) {
            auto seq = torch::nn::Sequential();
            for (std::int64_t u = 0; u < units[s]; ++u) {
                const auto stride = (u == 0 && s > 0) ? 2 : 1;
                std::shared_ptr<ResidualUnit> unit;
                if (id == BackboneId::Res2Net50Like) {
                    unit = std::make_shared<SplitScaleUnitImpl>(in, planes[s], stride, u == 0);
                } else {
                    unit = std::make_shared<BottleneckImpl>(in, planes[s], stride);
                }
                seq->push_back("unit" + std::to_string(u), torch::nn::AnyModule(unit));
                in = planes[s] * 4;
            }
            stages_[s] = register_module("stage" + std::to_string(s + 2), seq);
        }
    }

protected:
    FeaturePyramid run(const torch::Tensor& images) override {
        FeaturePyramid pyr;
        auto x = stem_->forward(images);
        pyr.levels[0] = x;
        x = F::max_pool2d(x, F::MaxPool2dFuncOptions(3).stride(2).padding(1));
        for (std::size_t s = 0; s < 4; ++s) {
            x = stages_[s]->forward(x);
            pyr.levels[s + 1] = x;
        }
        return pyr;
    }

private:
    ConvBn stem_{nullptr};
    std::array<torch::nn::Sequential, 4> stages_{nullptr, nullptr, nullptr, nullptr};
};

// Five conv blocks of [2,2,3,3,3] 3x3 convs, each followed by a 2x2 max pool.
class Vgg16LikeImpl : public BackboneImpl {
public:
    Vgg16LikeImpl() : BackboneImpl(BackboneDescriptor::of(BackboneId::Vgg16Like)) {
        const std::array<int, 5> depth{2, 2, 3, 3, 3};
        std::int64_t in = 3;
        for (std::size_t b = 0; b < 5; ++b) {
            const auto out = descriptor().channels[b];
            for (int i = 0; i < depth[b]; ++i) {
                convs_[b].push_back(
                    register_module("block" + std::to_string(b + 1) + "_conv" + std::to_string(i), conv3x3(in, out)));
                in = out;
            }
        }
    }

protected:
    FeaturePyramid run(const torch::Tensor& images) override {
        FeaturePyramid pyr;
        auto x = images;
        for (std::size_t b = 0; b < 5; ++b) {
            for (auto& c : convs_[b]) x = torch::relu(c->forward(x));
            x = F::max_pool2d(x, F::MaxPool2dFuncOptions(2).stride(2));
            pyr.levels[b] = x;
        }
        return pyr;
    }

private:
    std::array<std::vector<Conv>, 5> convs_;
};

}  // namespace

Backbone make_backbone(const BackboneDescriptor& desc) {
    Backbone b;
    switch (desc.id) {
        case BackboneId::TinyCnn: b = std::make_shared<TinyCnnImpl>(); break;
        case BackboneId::Res2Net50Like:
        case BackboneId::ResNet50Like: b = std::make_shared<ResidualBackboneImpl>(desc.id); break;
        case BackboneId::Vgg16Like: b = std::make_shared<Vgg16LikeImpl>(); break;
    }
    if (desc.pretrained_path) load_backbone_weights(*b, *desc.pretrained_path);
    return b;
}

void load_backbone_weights(BackboneImpl& backbone, const std::filesystem::path& path) {
    TensorArchive archive;
    try {
        archive = read_archive(path);
    } catch (const IoError& e) {
        throw WeightLoadError(e.what());
    }
    torch::NoGradGuard guard;
    auto assign = [&](const std::string& name, torch::Tensor& dst) {
        const auto* src = archive.find(name);
        if (src == nullptr) src = archive.find("backbone." + name);
        if (src == nullptr) throw WeightLoadError(path.string() + ": missing tensor '" + name + "'");
        if (src->sizes() != dst.sizes()) {
            throw WeightLoadError(path.string() + ": shape mismatch for '" + name + "'");
        }
        dst.copy_(*src);
    };
    std::size_t expected = 0;
    for (auto& item : backbone.named_parameters()) {
        assign(item.key(), item.value());
        ++expected;
    }
    for (auto& item : backbone.named_buffers()) {
        assign(item.key(), item.value());
        ++expected;
    }
    if (archive.tensors.size() != expected) {
        throw WeightLoadError(path.string() + ": archive holds " + std::to_string(archive.tensors.size()) +
                              " tensors, backbone expects " + std::to_string(expected));
    }
}

ProjectionImpl::ProjectionImpl(const std::array<std::int64_t, 5>& channels, std::int64_t c) {
    p3 = register_module("p3", conv1x1(channels[2], c));
    p4 = register_module("p4", conv1x1(channels[3], c));
    p5 = register_module("p5", conv1x1(channels[4], c));
}

std::array<torch::Tensor, 3> ProjectionImpl::forward(const FeaturePyramid& pyr) {
    return {p3->forward(pyr.level(3)), p4->forward(pyr.level(4)), p5->forward(pyr.level(5))};
}

}  // namespace bbnet

#include "bbnet/network.hpp"

#include "bbnet/archive.hpp"

namespace bbnet {

DecoderImpl::DecoderImpl(std::int64_t backbone_channels, std::int64_t channels) {
    project = register_module("project", conv1x1(backbone_channels, channels));
    fuse = register_module("fuse", conv1x1(channels, channels));
}

torch::Tensor DecoderImpl::forward(const torch::Tensor& gate, const torch::Tensor& backbone_feature) {
    auto f = resize_bilinear(project->forward(backbone_feature), gate.size(2), gate.size(3));
    return fuse->forward(torch::sigmoid(gate) * f + f);
}

BBNetImpl::BBNetImpl(ModelConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    auto desc = BackboneDescriptor::of(cfg_.backbone);
    desc.pretrained_path = cfg_.pretrained_path;
    const auto c = cfg_.channels;
    backbone = register_module("backbone", make_backbone(desc));
    projection = register_module("projection", Projection(desc.channels, c));
    cfe = register_module("cfe", Cfe(c, MultiViewConfig{cfg_.multiview_iters}, cfg_.group_consensus));
    ofs = register_module("ofs", Ofs(c, cfg_.gamma_mode));
    lgr = register_module("lgr", Lgr(c, cfg_.lgr_top_n));
    decoder4 = register_module("decoder4", Decoder(desc.channels[3], c));
    decoder3 = register_module("decoder3", Decoder(desc.channels[2], c));
    head = register_module("head", conv1x1(c, 1));
}

ForwardOutput BBNetImpl::forward(const torch::Tensor& images, bool keep_stages) {
    validate_dims(Dims::of(images), cfg_);
    const auto size = cfg_.input_size;
    std::vector<FeatureMap> stages;
    auto record = [&](const FeatureMap& f) {
        check_finite(f);
        if (keep_stages) stages.push_back(f);
        return f;
    };

    auto pyr = backbone->extract(images);
    auto [f3p, f4p, f5p] = projection->forward(pyr);

    FeatureMap f_col;
    if (cfg_.use_cfe) {
        auto f_cat = record(cfe->concat_levels(f3p, f4p, f5p));
        auto f_sh = record(cfe->shuffle(f_cat));
        f_col = record(cfe->multi_view(f_sh));
    } else {
        f_col = record(FeatureMap(f3p, Stage::Collaborative));
    }

    auto f_sin = record(FeatureMap(f3p, Stage::Single));
    auto f_obj = cfg_.use_ofs ? record(ofs->forward(f_sin)) : record(FeatureMap(f3p, Stage::Object));
    auto f_ag = record(aggregate(f_col, f_obj));

    FeatureMap f_lgr;
    if (cfg_.use_lgr) {
        auto f_local = record(lgr->local_refine(f_ag));
        auto f_global = record(lgr->global_refine(f_ag));
        f_lgr = record(lgr->fuse(f_local, f_global));
    } else {
        f_lgr = record(FeatureMap(f_ag.data, Stage::Refined));
    }

    auto d4 = decoder4->forward(f_lgr.data, pyr.level(4));
    auto d3 = decoder3->forward(d4, pyr.level(3));

    ForwardOutput out;
    out.p = torch::sigmoid(resize_bilinear(head->forward(d3), size, size));
    out.p_ofs = ofs->head(f_obj.data, size);
    out.stages = std::move(stages);
    return out;
}

std::vector<std::pair<std::string, torch::Tensor>> BBNetImpl::named_state() {
    std::vector<std::pair<std::string, torch::Tensor>> out;
    for (const auto& item : named_parameters()) out.emplace_back(item.key(), item.value());
    for (const auto& item : named_buffers()) out.emplace_back(item.key(), item.value());
    return out;
}

ModelSummary model_summary(BBNet& net) {
    ModelSummary s;
    s.param_count = parameter_count(*net);
    torch::NoGradGuard guard;
    const bool was_training = net->is_training();
    net->eval();
    const auto& cfg = net->config();
    auto dtype = net->parameters().front().scalar_type();
    auto x = torch::zeros({1, 3, cfg.input_size, cfg.input_size}, torch::TensorOptions().dtype(dtype));
    {
        MacScope scope;
        net->forward(x);
        s.flop_estimate = 2.0 * static_cast<double>(scope.total());
    }
    net->train(was_training);
    return s;
}

void save_checkpoint(const std::filesystem::path& path, BBNet& net) {
    TensorArchive a;
    a.config = model_to_kv(net->config());
    a.tensors = net->named_state();
    write_archive(path, a);
}

namespace {
void assign_state(const TensorArchive& a, BBNet& net, const std::string& origin) {
    torch::NoGradGuard guard;
    auto state = net->named_state();
    if (state.size() != a.tensors.size()) {
        throw CheckpointMismatchError(origin + ": checkpoint holds " + std::to_string(a.tensors.size()) +
                                      " tensors, network has " + std::to_string(state.size()));
    }
    for (auto& [name, dst] : state) {
        const auto* src = a.find(name);
        if (src == nullptr) throw CheckpointMismatchError(origin + ": missing tensor '" + name + "'");
        if (src->sizes() != dst.sizes()) throw CheckpointMismatchError(origin + ": shape mismatch for '" + name + "'");
        dst.copy_(*src);
    }
}
}  // namespace

BBNet load_checkpoint(const std::filesystem::path& path) {
    const auto a = read_archive(path);
    ModelConfig cfg;
    try {
        cfg = model_from_kv(a.config);
    } catch (const ConfigError& e) {
        throw CheckpointMismatchError(path.string() + ": bad config echo: " + e.what());
    }
    // The pretrained backbone is superseded by the checkpoint's own weights.
    cfg.pretrained_path.reset();
    BBNet net(cfg);
    assign_state(a, net, path.string());
    return net;
}

void load_checkpoint_into(const std::filesystem::path& path, BBNet& net) {
    const auto a = read_archive(path);
    auto expected = model_to_kv(net->config());
    auto echo = a.config;
    expected.erase("pretrained_path");
    echo.erase("pretrained_path");
    if (echo != expected) {
        throw CheckpointMismatchError(path.string() + ": config echo does not match the network config");
    }
    assign_state(a, net, path.string());
}

}  // namespace bbnet

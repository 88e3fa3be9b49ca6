#include <doctest.h>

#include "bbnet/lgr.hpp"
#include "common.hpp"
#include "oracles.hpp"

using namespace bbnet;
using torch::indexing::Slice;

TEST_SUITE("lgr") {

TEST_CASE("aggregate examples") {
    torch::manual_seed(0);
    const auto a = torch::randn({2, 4, 12, 12});
    const auto b = torch::randn({2, 4, 12, 12});
    const FeatureMap fa(a, Stage::Collaborative), fb(b, Stage::Object);
    CHECK(torch::equal(aggregate(fa, FeatureMap(torch::ones_like(a), Stage::Object)).data, a));
    CHECK(aggregate(fa, FeatureMap(torch::zeros_like(a), Stage::Object)).data.abs().max().item<float>() == 0.0f);
    CHECK(torch::equal(aggregate(fa, fb).data, aggregate(fb, fa).data));
    CHECK_THROWS_AS(aggregate(fa, FeatureMap(torch::zeros({2, 4, 6, 6}), Stage::Object)), ShapeError);
}

TEST_CASE("block probabilities match a per-block loop") {
    torch::manual_seed(1);
    const auto f = torch::randn({2, 3, 9, 12}, torch::kFloat64);
    const auto p = block_probabilities(f);
    REQUIRE(p.sizes() == torch::IntArrayRef{2, 9});
    for (std::int64_t i = 0; i < 2; ++i) {
        for (std::int64_t k = 0; k < 9; ++k) {
            const auto expect = torch::sigmoid(block_at(f[i], k)).mean().item<double>();
            CHECK(p[i][k].item<double>() == doctest::Approx(expect).epsilon(1e-12));
            CHECK(p[i][k].item<double>() >= 0.0);
            CHECK(p[i][k].item<double>() <= 1.0);
        }
    }
}

TEST_CASE("local selection examples") {
    auto f = torch::zeros({1, 4, 12, 12}, torch::kFloat64);
    f.index_put_({0, Slice(), Slice(4, 8), Slice(4, 8)}, 10.0);
    auto sel = select_local(f, 1);
    CHECK(sel.indices[0] == std::vector<std::int64_t>{4});
    CHECK(sel.blocks.sizes() == torch::IntArrayRef{1, 4, 4, 4});
    CHECK(torch::equal(sel.blocks[0], block_at(f[0], 4)));

    const auto uniform = torch::full({2, 4, 12, 12}, 0.3, torch::kFloat64);
    const auto u = select_local(uniform, 1);
    CHECK(u.indices[0] == std::vector<std::int64_t>{0});
    CHECK(u.indices[1] == std::vector<std::int64_t>{0});

    CHECK_THROWS_AS(select_local(torch::zeros({1, 4, 10, 12}), 1), DimsError);
}

TEST_CASE("top_n averages the selected blocks highest first") {
    auto f = torch::zeros({1, 1, 9, 9}, torch::kFloat64);
    f.index_put_({0, 0, Slice(6, 9), Slice(0, 3)}, 5.0);   // block 6
    f.index_put_({0, 0, Slice(0, 3), Slice(3, 6)}, 3.0);   // block 1
    f.index_put_({0, 0, Slice(3, 6), Slice(6, 9)}, 1.0);   // block 5
    const auto sel = select_local(f, 3);
    CHECK(sel.indices[0] == std::vector<std::int64_t>{6, 1, 5});
    CHECK(torch::allclose(sel.blocks, torch::full({1, 1, 3, 3}, 3.0, torch::kFloat64)));
}

TEST_CASE("doubling the input keeps the selected block when block means are distinct") {
    // Constant blocks: the block probability is monotone in the block value.
    for (int trial = 0; trial < 50; ++trial) {
        torch::manual_seed(static_cast<std::uint64_t>(trial));
        const auto values = torch::randperm(9, torch::kFloat64) - 4.0 + torch::randn({1}, torch::kFloat64);
        const auto f = torch::nn::functional::interpolate(
                           values.reshape({1, 1, 3, 3}),
                           torch::nn::functional::InterpolateFuncOptions().size(std::vector<std::int64_t>{12, 12}).mode(
                               torch::kNearest))
                           .expand({2, 4, 12, 12})
                           .contiguous();
        const auto a = select_local(f, 1).indices;
        const auto b = select_local(f * 2.0, 1).indices;
        CHECK(a == b);
        CHECK(a[0][0] == values.argmax().item<std::int64_t>());
    }
}

TEST_CASE("refinement paths keep shapes and linear identities") {
    torch::manual_seed(0);
    Lgr lgr(4, 1);
    lgr->to(torch::kFloat64);
    const auto x = torch::randn({2, 4, 12, 12}, torch::kFloat64);
    const auto local = lgr->local_refine(FeatureMap(x, Stage::Aggregated));
    const auto global = lgr->global_refine(FeatureMap(x, Stage::Aggregated));
    CHECK(local.data.sizes() == torch::IntArrayRef{2, 4, 4, 4});
    CHECK(global.data.sizes() == x.sizes());
    CHECK(lgr->fuse(local, global).data.sizes() == x.sizes());
    CHECK(lgr->forward(FeatureMap(x, Stage::Aggregated)).data.sizes() == x.sizes());

    const auto z = torch::zeros({2, 4, 12, 12}, torch::kFloat64);
    CHECK(lgr->global_refine(FeatureMap(z, Stage::Aggregated)).data.abs().max().item<double>() == 0.0);
    CHECK(lgr->fuse(FeatureMap(torch::zeros({2, 4, 4, 4}, torch::kFloat64), Stage::Local),
                    FeatureMap(z, Stage::Global))
              .data.abs()
              .max()
              .item<double>() == 0.0);
    CHECK_THROWS_AS(lgr->fuse(FeatureMap(torch::zeros({2, 4, 5, 5}, torch::kFloat64), Stage::Local),
                              FeatureMap(z, Stage::Global)),
                    ShapeError);

    testing::randomize(*lgr);
    const auto big = lgr->forward(FeatureMap(x * 1e3, Stage::Aggregated));
    CHECK(all_finite(big.data));
}

TEST_CASE("lgr gradients agree with finite differences") {
    torch::manual_seed(6);
    Lgr lgr(4, 1);
    lgr->to(torch::kFloat64);
    auto col = testing::rand64({2, 4, 12, 12}).requires_grad_(true);
    auto obj = testing::rand64({2, 4, 12, 12}).requires_grad_(true);
    const auto probe = testing::rand64({2, 4, 12, 12});
    auto loss = [&] {
        auto ag = aggregate(FeatureMap(col, Stage::Collaborative), FeatureMap(obj, Stage::Object));
        return testing::readout(lgr->forward(ag).data, probe);
    };
    auto tensors = testing::parameters_of(*lgr);
    tensors.emplace_back("f_col", col);
    tensors.emplace_back("f_obj", obj);
    const auto r = testing::gradcheck(loss, tensors, 40, 4);
    CHECK_MESSAGE(r.max_rel_err < 1e-3, r.worst);

    auto x = testing::rand64({2, 4, 12, 12}).requires_grad_(true);
    auto g_loss = [&] { return testing::readout(lgr->global_refine(FeatureMap(x, Stage::Aggregated)).data, probe); };
    auto g_tensors = testing::parameters_of(*lgr->global_row, "global_row.");
    for (auto& t : testing::parameters_of(*lgr->global_col, "global_col.")) g_tensors.push_back(t);
    g_tensors.emplace_back("f_ag", x);
    const auto g = testing::gradcheck(g_loss, g_tensors, 20, 5);
    CHECK_MESSAGE(g.max_rel_err < 1e-3, g.worst);
}

}

#include <doctest.h>

#include <algorithm>
#include <numeric>

#include "bbnet/cfe.hpp"
#include "common.hpp"
#include "oracles.hpp"

using namespace bbnet;

namespace {

Cfe make_cfe(std::int64_t c, std::int64_t iters, bool consensus) {
    Cfe cfe(c, MultiViewConfig{iters}, consensus);
    cfe->to(torch::kFloat64);
    return cfe;
}

bool same_channel_multisets(const torch::Tensor& a, const torch::Tensor& b) {
    const auto fa = std::get<0>(a.flatten(2).sort(2));
    const auto fb = std::get<0>(b.flatten(2).sort(2));
    return torch::equal(fa, fb);
}

}  // namespace

TEST_SUITE("cfe") {

TEST_CASE("perfect shuffle index map") {
    CHECK(perfect_shuffle(4) == std::vector<std::int64_t>{0, 2, 1, 3});
    CHECK(perfect_shuffle(6) == std::vector<std::int64_t>{0, 3, 1, 4, 2, 5});
    CHECK_THROWS_AS(perfect_shuffle(5), DimsError);
    for (std::int64_t n = 2; n <= 64; n += 2) {
        const auto p = perfect_shuffle(n);
        // brute-force: reshape (2, n/2), swap, flatten
        std::vector<std::int64_t> expected;
        for (std::int64_t b = 0; b < n / 2; ++b) {
            for (std::int64_t a = 0; a < 2; ++a) expected.push_back(a * (n / 2) + b);
        }
        CHECK(p == expected);
        auto sorted = p;
        std::sort(sorted.begin(), sorted.end());
        std::vector<std::int64_t> iota(static_cast<std::size_t>(n));
        std::iota(iota.begin(), iota.end(), 0);
        CHECK(sorted == iota);
        const auto inv = inverse_permutation(p);
        for (std::size_t i = 0; i < p.size(); ++i) CHECK(inv[static_cast<std::size_t>(p[i])] == static_cast<std::int64_t>(i));
    }
}

TEST_CASE("row and column branches are exact spatial permutations") {
    torch::manual_seed(0);
    const auto x = torch::randn({2, 3, 8, 12});
    const auto perm = ShufflePermutation::for_size(8, 12);
    const auto rows = permute_rows(x, perm.row_map);
    const auto cols = permute_cols(x, perm.col_map);
    CHECK(same_channel_multisets(rows, x));
    CHECK(same_channel_multisets(cols, x));
    CHECK(torch::equal(permute_rows(rows, inverse_permutation(perm.row_map)), x));
    CHECK(torch::equal(permute_cols(cols, inverse_permutation(perm.col_map)), x));
    const auto r = torch::arange(4, torch::kFloat32).reshape({1, 1, 4, 1});
    CHECK(torch::equal(permute_rows(r, perfect_shuffle(4)).flatten(), torch::tensor({0.f, 2.f, 1.f, 3.f})));
}

TEST_CASE("concat_levels shapes and linear identities") {
    torch::manual_seed(0);
    auto cfe = make_cfe(4, 2, true);
    const auto out = cfe->concat_levels(torch::randn({2, 4, 12, 12}, torch::kFloat64),
                                        torch::randn({2, 4, 6, 6}, torch::kFloat64),
                                        torch::randn({2, 4, 3, 3}, torch::kFloat64));
    CHECK(out.data.sizes() == torch::IntArrayRef{2, 4, 12, 12});
    CHECK(out.stage == Stage::Cat);

    const auto zero = cfe->concat_levels(torch::zeros({1, 4, 12, 12}, torch::kFloat64),
                                         torch::zeros({1, 4, 6, 6}, torch::kFloat64),
                                         torch::zeros({1, 4, 3, 3}, torch::kFloat64));
    CHECK(zero.data.abs().max().item<double>() == 0.0);

    {
        torch::NoGradGuard g;
        auto w = torch::zeros({4, 12, 1, 1}, torch::kFloat64);
        for (int o = 0; o < 4; ++o) {
            for (int k = 0; k < 3; ++k) w[o][k * 4 + o][0][0] = 1.0 / 3.0;
        }
        cfe->reduce_cat->conv->weight.copy_(w);
    }
    const auto ones = cfe->concat_levels(torch::ones({1, 4, 12, 12}, torch::kFloat64),
                                         torch::ones({1, 4, 6, 6}, torch::kFloat64),
                                         torch::ones({1, 4, 3, 3}, torch::kFloat64));
    CHECK(torch::allclose(ones.data, torch::ones_like(ones.data), 0.0, 1e-12));
}

TEST_CASE("shuffle keeps the shape and rejects odd extents") {
    torch::manual_seed(0);
    auto cfe = make_cfe(4, 2, true);
    const auto f = cfe->shuffle(FeatureMap(torch::randn({2, 4, 12, 12}, torch::kFloat64), Stage::Cat));
    CHECK(f.data.sizes() == torch::IntArrayRef{2, 4, 12, 12});
    CHECK_THROWS_AS(cfe->shuffle(FeatureMap(torch::randn({1, 4, 9, 12}, torch::kFloat64), Stage::Cat)), DimsError);
}

TEST_CASE("multi-view attention is a per-pixel channel distribution") {
    torch::manual_seed(0);
    auto cfe = make_cfe(4, 2, false);
    const auto x = torch::randn({2, 4, 12, 12}, torch::kFloat64) * 3.0;
    const auto w = cfe->view_weights(x);
    CHECK(w.sizes() == x.sizes());
    CHECK((w.sum(1) - 1.0).abs().max().item<double>() < 1e-5);
    CHECK(w.min().item<double>() >= 0.0);
    CHECK(w.max().item<double>() <= 1.0);

    const auto f_sh = FeatureMap(x, Stage::Shuffled);
    for (std::int64_t n : {1, 2, 3}) {
        cfe->mv.iterations = n;
        const auto out = cfe->multi_view(f_sh);
        CHECK(out.data.sizes() == x.sizes());
        CHECK((out.data.abs() <= x.abs()).all().item<bool>());
    }
    cfe->mv.iterations = 0;
    CHECK(torch::equal(cfe->multi_view(f_sh).data, x));
}

TEST_CASE("group consensus examples") {
    torch::manual_seed(0);
    const auto f = torch::randn({1, 3, 5, 5}, torch::kFloat64);
    CHECK(torch::allclose(group_consensus(f), f * torch::sigmoid(f), 0.0, 0.0));
    CHECK(group_consensus(torch::zeros({3, 2, 4, 4})).abs().max().item<float>() == 0.0f);

    const auto g = torch::randn({5, 4, 6, 6}, torch::kFloat64);
    const auto perm = torch::tensor({3, 0, 4, 1, 2}, torch::kLong);
    const auto a = group_consensus(g).index_select(0, perm);
    const auto b = group_consensus(g.index_select(0, perm));
    CHECK((a - b).abs().max().item<double>() < 1e-12);
}

TEST_CASE("cfe gradients agree with finite differences") {
    torch::manual_seed(5);
    auto cfe = make_cfe(4, 2, true);
    auto f3 = testing::rand64({2, 4, 12, 12}).requires_grad_(true);
    auto f4 = testing::rand64({2, 4, 6, 6}).requires_grad_(true);
    auto f5 = testing::rand64({2, 4, 3, 3}).requires_grad_(true);
    const auto probe = testing::rand64({2, 4, 12, 12});
    auto loss = [&] { return testing::readout(cfe->forward(f3, f4, f5).data, probe); };
    auto tensors = testing::parameters_of(*cfe);
    tensors.emplace_back("f3", f3);
    tensors.emplace_back("f4", f4);
    tensors.emplace_back("f5", f5);
    const auto r = testing::gradcheck(loss, tensors, 40, 1);
    CHECK_MESSAGE(r.max_rel_err < 1e-3, r.worst);

    auto x = testing::rand64({2, 4, 12, 12}).requires_grad_(true);
    auto mv_loss = [&] { return testing::readout(cfe->multi_view(FeatureMap(x, Stage::Shuffled)).data, probe); };
    auto mv_tensors = testing::parameters_of(*cfe->view_fuse, "view_fuse.");
    mv_tensors.emplace_back("f_sh", x);
    const auto m = testing::gradcheck(mv_loss, mv_tensors, 30, 2);
    CHECK_MESSAGE(m.max_rel_err < 1e-3, m.worst);
}

}

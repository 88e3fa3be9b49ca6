#include <doctest.h>

#include <limits>

#include "bbnet/archive.hpp"
#include "bbnet/core.hpp"
#include "oracles.hpp"

using namespace bbnet;

TEST_SUITE("core") {

TEST_CASE("dims reject non-positive extents") {
    CHECK_NOTHROW(Dims::make(1, 3, 4, 4));
    CHECK_THROWS_AS(Dims::make(0, 3, 4, 4), ShapeError);
    CHECK_THROWS_AS(Dims::make(1, 3, -1, 4), ShapeError);
    CHECK(Dims::of(torch::zeros({2, 3, 5, 7})) == Dims::make(2, 3, 5, 7));
}

TEST_CASE("validate_dims examples") {
    ModelConfig cfg;
    cfg.input_size = 288;
    CHECK_NOTHROW(validate_dims(Dims::make(1, 3, 288, 288), cfg));
    cfg.input_size = 240;
    CHECK_NOTHROW(validate_dims(Dims::make(1, 3, 240, 240), cfg));
    cfg.input_size = 256;
    try {
        validate_dims(Dims::make(1, 3, 256, 256), cfg);
        FAIL("expected DimsError");
    } catch (const DimsError& e) {
        CHECK(e.divisor() == 3);
    }
}

TEST_CASE("validate_dims accepts exactly the sizes whose working resolution divides by 6") {
    for (std::int64_t s = 8; s <= 2048; s += 8) {
        ModelConfig cfg;
        cfg.input_size = s;
        bool ok = true;
        try {
            validate_dims(Dims::make(1, 3, s, s), cfg);
        } catch (const DimsError&) {
            ok = false;
        }
        CHECK_MESSAGE(ok == ((s / 8) % 6 == 0), "input_size " << s);
    }
}

TEST_CASE("finiteness check names the stage") {
    auto t = torch::zeros({1, 1, 2, 2});
    CHECK_NOTHROW(check_finite(FeatureMap(t, Stage::Object)));
    t[0][0][1][1] = std::numeric_limits<float>::quiet_NaN();
    try {
        check_finite(FeatureMap(t, Stage::Object));
        FAIL("expected NonFiniteError");
    } catch (const NonFiniteError& e) {
        CHECK(std::string(e.what()).find("f_obj") != std::string::npos);
    }
}

TEST_CASE("run config round-trips through key=value text") {
    RunConfig cfg;
    cfg.model = ModelConfig::tiny();
    cfg.model.use_lgr = false;
    cfg.model.gamma_mode = GammaMode::FixedOne;
    cfg.train.learning_rate = 1e-3;
    cfg.train.max_steps = 321;
    cfg.train.seed = 42;
    cfg.train.optimizer = OptimizerKind::Adam;
    cfg.train.data_root = "/tmp/some root";
    const auto text = format_run_config(cfg);
    const auto back = parse_run_config(text);
    CHECK(back.model == cfg.model);
    CHECK(back.train == cfg.train);
}

TEST_CASE("config parsing fails fast") {
    CHECK_THROWS_AS(parse_run_config("no_such_key = 1\n"), ConfigError);
    CHECK_THROWS_AS(parse_run_config("channels = sixteen\n"), ConfigError);
    CHECK_THROWS_AS(parse_run_config("backbone = alexnet\n"), ConfigError);
    CHECK_THROWS_AS(parse_run_config("momentum = 1.0\n"), ConfigError);
    CHECK_THROWS_AS(parse_run_config("lgr_top_n = 10\n"), ConfigError);
    const auto cfg = parse_run_config("# comment\nchannels = 16 # trailing\n\nbackbone = tiny_cnn\n");
    CHECK(cfg.model.channels == 16);
    CHECK(cfg.model.backbone == BackboneId::TinyCnn);
}

TEST_CASE("archive encoding is deterministic and lossless") {
    TensorArchive a;
    a.config = {{"channels", "4"}};
    a.tensors.emplace_back("w", torch::arange(6, torch::kFloat32).reshape({2, 3}));
    a.tensors.emplace_back("d", torch::tensor({1.5, -2.25}, torch::kFloat64));
    const auto bytes = encode_archive(a);
    CHECK(bytes == encode_archive(a));
    const auto back = decode_archive(bytes);
    CHECK(back.config == a.config);
    REQUIRE(back.tensors.size() == 2);
    CHECK(torch::equal(back.tensors[0].second, a.tensors[0].second));
    CHECK(torch::equal(back.tensors[1].second, a.tensors[1].second));
    CHECK((back.tensors[1].second.scalar_type() == torch::kFloat64));
    CHECK_THROWS_AS(decode_archive(bytes.substr(0, bytes.size() - 3)), WeightLoadError);
    CHECK_THROWS_AS(decode_archive("not an archive"), WeightLoadError);
}

TEST_CASE("archive files round-trip") {
    testing::TempDir dir("archive");
    TensorArchive a;
    a.tensors.emplace_back("x", torch::randn({3, 3}));
    write_archive(dir.path() / "a.bbn", a);
    const auto back = read_archive(dir.path() / "a.bbn");
    CHECK(torch::equal(back.tensors.at(0).second, a.tensors[0].second));
    CHECK_THROWS_AS(read_archive(dir.path() / "missing.bbn"), Error);
}

}

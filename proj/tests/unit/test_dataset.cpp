#include <doctest.h>

#include <filesystem>
#include <set>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "bbnet/dataset.hpp"
#include "oracles.hpp"

using namespace bbnet;
namespace fs = std::filesystem;

namespace {

// Writes `n` random 24x24 image/mask pairs into root/super/sub.
void write_group(const fs::path& root, const std::string& super, const std::string& sub, int n,
                 std::uint64_t seed) {
    const auto dir = root / super / sub;
    fs::create_directories(dir / "masks");
    cv::RNG rng(seed);
    for (int i = 0; i < n; ++i) {
        cv::Mat3b img(24, 24);
        rng.fill(img, cv::RNG::UNIFORM, 0, 256);
        cv::Mat1b mask = cv::Mat1b::zeros(24, 24);
        cv::circle(mask, {8 + i % 8, 12}, 5, 255, -1);
        const auto stem = sub + "_" + std::to_string(i);
        cv::imwrite((dir / (stem + ".png")).string(), img);
        cv::imwrite((dir / "masks" / (stem + ".png")).string(), mask);
    }
}

std::vector<fs::path> files_under(const fs::path& root) {
    std::vector<fs::path> out;
    for (const auto& e : fs::recursive_directory_iterator(root)) {
        if (e.is_regular_file()) out.push_back(fs::relative(e.path(), root));
    }
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace

TEST_SUITE("dataset") {

TEST_CASE("scan drops groups with fewer than five pairs") {
    testing::TempDir dir("scan");
    write_group(dir.path(), "birds", "owl", 8, 1);
    write_group(dir.path(), "birds", "heron", 6, 2);
    write_group(dir.path(), "fish", "flounder", 4, 3);
    const auto records = scan_dataset(dir.path());
    REQUIRE(records.size() == 2);
    for (const auto& r : records) {
        CHECK(r.size() >= kMinGroupSize);
        CHECK(r.image_paths.size() == r.mask_paths.size());
        for (std::size_t i = 0; i < r.size(); ++i) {
            CHECK(r.image_paths[i].stem() == r.mask_paths[i].stem());
        }
    }
}

TEST_CASE("scan of an empty root is empty") {
    testing::TempDir dir("empty");
    CHECK(scan_dataset(dir.path()).empty());
}

TEST_CASE("an image without a mask is a pairing error") {
    testing::TempDir dir("pairing");
    write_group(dir.path(), "birds", "owl", 5, 1);
    cv::imwrite((dir.path() / "birds" / "owl" / "owl_01.jpg").string(), cv::Mat3b(24, 24, cv::Vec3b(1, 2, 3)));
    CHECK_THROWS_AS(scan_dataset(dir.path()), PairingError);
}

TEST_CASE("sample_group draws distinct members when it can and repeats otherwise") {
    testing::TempDir dir("sample");
    write_group(dir.path(), "a", "big", 12, 1);
    write_group(dir.path(), "b", "small", 6, 2);
    const auto records = scan_dataset(dir.path());
    REQUIRE(records.size() == 2);
    const std::vector<GroupRecord> big{records[0]};
    const std::vector<GroupRecord> small{records[1]};

    std::mt19937_64 rng(5);
    const auto g = sample_group(big, 10, 24, rng);
    CHECK(g.images.sizes() == torch::IntArrayRef{10, 3, 24, 24});
    CHECK(std::set<std::string>(g.stems.begin(), g.stems.end()).size() == 10);

    const auto s = sample_group(small, 10, 24, rng);
    CHECK(s.images.size(0) == 10);
    CHECK(std::set<std::string>(s.stems.begin(), s.stems.end()).size() <= 6);

    std::mt19937_64 r1(11), r2(11);
    const auto x = sample_group(records, 4, 24, r1);
    const auto y = sample_group(records, 4, 24, r2);
    CHECK(x.stems == y.stems);
    CHECK(torch::equal(x.images, y.images));
    CHECK(torch::equal(x.masks, y.masks));
}

TEST_CASE("sampled masks are exactly binary after resizing") {
    testing::TempDir dir("binary");
    write_group(dir.path(), "a", "g", 6, 4);
    const auto records = scan_dataset(dir.path());
    std::mt19937_64 rng(0);
    for (std::int64_t size : {24, 48, 96}) {
        const auto g = sample_group(records, 6, size, rng);
        CHECK(torch::logical_or(g.masks == 0, g.masks == 1).all().item<bool>());
        CHECK(g.images.min().item<float>() >= 0.0f);
        CHECK(g.images.max().item<float>() <= 1.0f);
    }
}

TEST_CASE("synth_generate is a pure function of its arguments") {
    testing::TempDir a("synth_a"), b("synth_b");
    SynthOptions opts;  // 4 x 8 at 96, seed 7
    synth_generate(a.path(), opts);
    synth_generate(b.path(), opts);
    const auto fa = files_under(a.path());
    REQUIRE(fa == files_under(b.path()));
    CHECK(fa.size() == 64);
    for (const auto& f : fa) CHECK(testing::file_bytes(a.path() / f) == testing::file_bytes(b.path() / f));

    const auto records = scan_dataset(a.path() / "train");
    REQUIRE(records.size() == 4);
    std::size_t pairs = 0;
    for (const auto& r : records) {
        pairs += r.size();
        for (const auto& m : r.mask_paths) {
            const cv::Mat1b mask = cv::imread(m.string(), cv::IMREAD_GRAYSCALE);
            CHECK(mask.rows == 96);
            const double frac = cv::countNonZero(mask) / static_cast<double>(mask.total());
            CHECK(frac >= kMinForeground);
            CHECK(frac <= kMaxForeground);
            cv::Mat1b other;
            cv::compare(mask, 0, other, cv::CMP_NE);
            cv::Mat1b not_full;
            cv::compare(mask, 255, not_full, cv::CMP_NE);
            CHECK(cv::countNonZero(other & not_full) == 0);
        }
    }
    CHECK(pairs == 32);

    SynthOptions bad = opts;
    bad.size = 100;
    CHECK_THROWS_AS(synth_generate(a.path() / "bad", bad), ConfigError);
}

TEST_CASE("camouflaged objects have lower local contrast than a matte control") {
    std::mt19937_64 rng(3);
    double camo = 0.0, matte = 0.0;
    for (int i = 0; i < 100; ++i) {
        const auto species = draw_species(rng);
        std::mt19937_64 r1(rng()), r2 = r1;
        const auto c = render_sample(species, 96, r1, false);
        const auto m = render_sample(species, 96, r2, true);
        camo += local_contrast(c.image, c.mask);
        matte += local_contrast(m.image, m.mask);
    }
    CHECK(camo / 100.0 < matte / 100.0);
}

TEST_CASE("statistics examples") {
    const cv::Mat3b img(9, 9, cv::Vec3b(10, 20, 30));
    const cv::Mat1b full(9, 9, uchar(255));
    CHECK(object_size(full) == doctest::Approx(1.0));
    CHECK(center_bias(full) == doctest::Approx(0.0));
    cv::Mat1b dot = cv::Mat1b::zeros(9, 9);
    dot(4, 4) = 255;
    CHECK(center_bias(dot) == doctest::Approx(0.0));
    cv::Mat1b corner = cv::Mat1b::zeros(9, 9);
    corner(0, 0) = 255;
    CHECK(center_bias(corner) > 0.7);
    CHECK(center_bias(corner) <= 1.0);
    CHECK_THROWS_AS(image_stats(img, cv::Mat1b::zeros(9, 9)), DegenerateMaskError);
    CHECK_THROWS_AS(image_stats(img, cv::Mat1b::zeros(8, 9)), ShapeError);
    CHECK(color_chi2(img, full, cv::Mat1b::zeros(9, 9)) == 0.0);
}

TEST_CASE("compute_stats counts every image and matches brute-force object size") {
    testing::TempDir dir("stats");
    SynthOptions opts;
    opts.groups = 2;
    opts.per_group = 6;
    opts.size = 48;
    synth_generate(dir.path(), opts);
    const auto records = scan_dataset(dir.path() / "train");
    const auto stats = compute_stats(records);
    CHECK(stats.measured == 12);
    CHECK(stats.degenerate == 0);
    for (const auto* h : {&stats.resolution, &stats.global_contrast, &stats.local_contrast, &stats.object_size,
                          &stats.center_bias}) {
        CHECK_MESSAGE(h->total() == 12, h->name);
    }
    double brute = 0.0;
    for (const auto& r : records) {
        for (const auto& m : r.mask_paths) {
            const cv::Mat1b mask = cv::imread(m.string(), cv::IMREAD_GRAYSCALE);
            std::int64_t on = 0;
            for (int y = 0; y < mask.rows; ++y) {
                for (int x = 0; x < mask.cols; ++x) on += mask(y, x) > 127 ? 1 : 0;
            }
            const double frac = static_cast<double>(on) / static_cast<double>(mask.total());
            CHECK(object_size(mask) == doctest::Approx(frac).epsilon(1e-12));
            brute += frac;
        }
    }
    CHECK(stats.mean_object_size == doctest::Approx(brute / 12.0).epsilon(1e-12));

    write_stats(stats, dir.path() / "out");
    CHECK(fs::exists(dir.path() / "out" / "stats.csv"));
    CHECK(fs::exists(dir.path() / "out" / "stats.json"));
}

}

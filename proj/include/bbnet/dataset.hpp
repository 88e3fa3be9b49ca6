#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <opencv2/core.hpp>
#include <torch/torch.h>

#include "bbnet/core.hpp"

namespace bbnet {

// On-disk layout: <split>/<super_class>/<sub_class>/{*.png,*.jpg} with the
// masks of a sub-class in <sub_class>/masks/<stem>.png.
struct GroupRecord {
    std::string super_class;
    std::string sub_class;
    std::vector<std::filesystem::path> image_paths;
    std::vector<std::filesystem::path> mask_paths;  // parallel to image_paths

    std::string id() const { return super_class + "/" + sub_class; }
    std::size_t size() const { return image_paths.size(); }
};

inline constexpr std::size_t kMinGroupSize = 5;

struct ImageGroup {
    torch::Tensor images;  // (B,3,S,S) in [0,1]
    torch::Tensor masks;   // (B,1,S,S) in {0,1}; undefined when no masks were loaded
    std::string group_id;
    std::vector<std::string> stems;
    std::vector<cv::Size> native_sizes;
};

bool is_image_file(const std::filesystem::path& p);

// One record per <super>/<sub> directory under `split_root` with at least
// five image/mask pairs; smaller groups are dropped with a warning.
// Throws PairingError when an image has no mask of the same stem.
std::vector<GroupRecord> scan_dataset(const std::filesystem::path& split_root);

// Uniformly picks a record, then draws `batch_size` images from it, without
// replacement when the group is large enough and with replacement otherwise.
ImageGroup sample_group(const std::vector<GroupRecord>& records, std::int64_t batch_size, std::int64_t size,
                        std::mt19937_64& rng);

// Loads the given members of a record (resized to size x size).
ImageGroup load_group(const GroupRecord& record, const std::vector<std::size_t>& members, std::int64_t size);

// Loads every image in a directory (sorted by file name) as one group.
// Masks from <dir>/masks are loaded when all are present.
ImageGroup load_group_dir(const std::filesystem::path& dir, std::int64_t size);

// RGB image as a (3,S,S) tensor in [0,1].
torch::Tensor load_image(const std::filesystem::path& p, std::int64_t size);
// Binary (1,S,S) tensor: bilinear resize, threshold at 0.5.
torch::Tensor load_mask(const std::filesystem::path& p, std::int64_t size);

// --- synthetic camouflage groups -------------------------------------------

struct SynthOptions {
    std::int64_t groups = 4;
    std::int64_t per_group = 8;
    std::int64_t size = 96;
    std::uint64_t seed = 7;
};

inline constexpr double kMinForeground = 0.02;
inline constexpr double kMaxForeground = 0.5;

// Per-group "species": a closed contour r(theta) = 1 + sum_k a_k cos(k theta + phi_k)
// plus the shared texture parameters.
struct SpeciesParams {
    std::vector<double> amplitudes;
    std::vector<double> phases;
    cv::Vec3d base_color;
    double texture_amplitude = 0.1;
    double luminance_delta = 0.1;
};

struct SynthSample {
    cv::Mat3b image;  // BGR
    cv::Mat1b mask;   // 0 / 255
};

SpeciesParams draw_species(std::mt19937_64& rng);

// Renders one image of a species. With `matte` the object is a flat random
// colour instead of camouflaged texture (contrast control).
SynthSample render_sample(const SpeciesParams& species, std::int64_t size, std::mt19937_64& rng, bool matte = false);

// Writes <out>/train/synth/species_XX/img_YYY.png (+ masks/). Pure function
// of its arguments. Throws ConfigError unless size is divisible by 24.
void synth_generate(const std::filesystem::path& out, const SynthOptions& opts);

// --- dataset statistics --------------------------------------------------

inline constexpr int kContrastBand = 15;

struct Histogram {
    std::string name;
    std::vector<double> edges;  // bins + 1 edges; the last bin is closed
    std::vector<std::int64_t> counts;

    void add(double v);
    std::int64_t total() const;
};

struct DatasetStats {
    Histogram resolution;  // longer side in pixels
    Histogram global_contrast;
    Histogram local_contrast;
    Histogram object_size;
    Histogram center_bias;
    std::int64_t measured = 0;
    std::int64_t degenerate = 0;
    double mean_global_contrast = 0.0;
    double mean_local_contrast = 0.0;
    double mean_object_size = 0.0;
    double mean_center_bias = 0.0;
};

// Chi-square distance (0.5 sum (a-b)^2/(a+b)) between normalized 8x8x8 RGB
// histograms of two pixel sets; 0 if either set is empty.
double color_chi2(const cv::Mat3b& image, const cv::Mat1b& a, const cv::Mat1b& b);
double global_contrast(const cv::Mat3b& image, const cv::Mat1b& mask);
// Object against the background within `band` pixels of it.
double local_contrast(const cv::Mat3b& image, const cv::Mat1b& mask, int band = kContrastBand);
double object_size(const cv::Mat1b& mask);
// |centroid - image centre| / diagonal * 2, in [0,1].
double center_bias(const cv::Mat1b& mask);

struct ImageStats {
    cv::Size resolution;
    double global_contrast = 0.0;
    double local_contrast = 0.0;
    double object_size = 0.0;
    double center_bias = 0.0;
};

// Throws DegenerateMaskError for an all-zero mask.
ImageStats image_stats(const cv::Mat3b& image, const cv::Mat1b& mask);

// Images with empty masks are skipped and counted in `degenerate`.
DatasetStats compute_stats(const std::vector<GroupRecord>& records);

// <out>/stats.csv (one row per histogram bin) and <out>/stats.json.
void write_stats(const DatasetStats& stats, const std::filesystem::path& out_dir);

}  // namespace bbnet

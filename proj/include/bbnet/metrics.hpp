#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <opencv2/core.hpp>

#include "bbnet/errors.hpp"

namespace bbnet::metrics {

inline constexpr int kThresholds = 256;
inline constexpr double kBeta2 = 0.3;
inline constexpr double kAlignEps = 1e-8;

// A prediction in [0,1] and a binary ground truth of the same size.
struct EvalPair {
    cv::Mat1d pred;
    cv::Mat1d gt;
};

// Scales predictions whose range leaves [0,1] by per-image min-max.
cv::Mat1d normalize_prediction(const cv::Mat1d& pred);

// Builds an aligned pair: predictions are normalized and bilinearly resized
// to the ground truth; the ground truth is binarized at 0.5.
EvalPair make_pair(const cv::Mat1d& pred, const cv::Mat1d& gt);
// 8-bit maps: values are divided by 255 first.
EvalPair make_pair_u8(const cv::Mat1b& pred, const cv::Mat1b& gt);

// Largest t in [0,255] with t/255 <= p (p is in [0,1]).
int threshold_bin(double p);

struct PrPoint {
    double precision = 0.0;
    double recall = 0.0;
};

struct FMeasure {
    double f_max = 0.0;
    double f_mean = 0.0;
    std::array<PrPoint, kThresholds> pr{};
    std::array<double, kThresholds> curve{};
};

struct EMeasure {
    double e_max = 0.0;
    double e_mean = 0.0;
    std::array<double, kThresholds> curve{};
};

double mae(const EvalPair& pair);

// Sweep over t in 0..255 with B = (P >= t/255). Throws DegenerateGTError
// for an empty ground truth.
FMeasure f_measure(const EvalPair& pair);

// F at the adaptive threshold min(2 mean(P), 1).
double f_adaptive(const EvalPair& pair);

EMeasure e_measure(const EvalPair& pair);

// alpha * S_object + (1 - alpha) * S_region, clamped to [0,1].
double s_measure(const EvalPair& pair, double alpha = 0.5);

// F-beta from counts; 0 when undefined.
double f_beta(double precision, double recall);

struct ImageMetrics {
    std::string name;
    double mae = 0.0;
    double s_alpha = 0.0;
    double e_mean = 0.0;
    double e_max = 0.0;
    std::optional<double> f_mean;  // absent when the ground truth is empty
    std::optional<double> f_max;
    std::optional<double> f_adaptive;
};

struct MetricReport {
    std::vector<ImageMetrics> per_image;
    double mae = 0.0;
    double s_alpha = 0.0;
    double e_mean = 0.0;
    double e_max = 0.0;
    double f_mean = 0.0;
    double f_max = 0.0;
    std::optional<double> f_adaptive;
    std::array<PrPoint, kThresholds> pr_curve{};
    int degenerate_gt = 0;
};

ImageMetrics evaluate_pair(const std::string& name, const EvalPair& pair, bool adaptive_f = false,
                           FMeasure* f_out = nullptr);

// Aggregates per-image values: arithmetic means, PR curve averaged pointwise
// over images with a non-empty ground truth.
MetricReport aggregate(std::vector<ImageMetrics> per_image, const std::vector<FMeasure>& curves,
                       bool adaptive_f = false);

struct EvalOptions {
    bool adaptive_f = false;
};

// Pairs files by key: the path relative to the root, extension stripped, with
// any "masks" directory component removed. Missing predictions throw
// MissingPredictionError listing their keys.
MetricReport evaluate_dirs(const std::filesystem::path& pred_dir, const std::filesystem::path& gt_dir,
                           const EvalOptions& opts = {});

// <report>.json summary, <report>_per_image.csv, <report>_pr.csv.
struct ReportPaths {
    std::filesystem::path json, per_image_csv, pr_csv;
};
ReportPaths report_paths(const std::filesystem::path& report_path);
std::string report_json(const MetricReport& r);
void write_report(const MetricReport& r, const std::filesystem::path& report_path);

}  // namespace bbnet::metrics

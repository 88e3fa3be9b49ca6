#include "bbnet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "json.hpp"

namespace bbnet::metrics {

namespace fs = std::filesystem;

namespace {
constexpr double kMatlabEps = std::numeric_limits<double>::epsilon();
}

cv::Mat1d normalize_prediction(const cv::Mat1d& pred) {
    double lo = 0.0, hi = 0.0;
    cv::minMaxLoc(pred, &lo, &hi);
    if (lo >= 0.0 && hi <= 1.0) return pred.clone();
    if (hi - lo <= 0.0) return cv::Mat1d::zeros(pred.size());
    cv::Mat1d out = (pred - lo) / (hi - lo);
    return out;
}

EvalPair make_pair(const cv::Mat1d& pred, const cv::Mat1d& gt) {
    if (pred.empty() || gt.empty()) throw ShapeError("empty prediction or ground truth");
    EvalPair pair;
    cv::Mat1d p = normalize_prediction(pred);
    if (p.size() != gt.size()) {
        cv::Mat1d resized;
        cv::resize(p, resized, gt.size(), 0, 0, cv::INTER_LINEAR);
        p = cv::min(cv::max(resized, 0.0), 1.0);
    }
    pair.pred = p;
    pair.gt = cv::Mat1d(gt.size());
    for (int r = 0; r < gt.rows; ++r) {
        for (int c = 0; c < gt.cols; ++c) pair.gt(r, c) = gt(r, c) >= 0.5 ? 1.0 : 0.0;
    }
    return pair;
}

EvalPair make_pair_u8(const cv::Mat1b& pred, const cv::Mat1b& gt) {
    cv::Mat1d p, g;
    pred.convertTo(p, CV_64F, 1.0 / 255.0);
    gt.convertTo(g, CV_64F, 1.0 / 255.0);
    return make_pair(p, g);
}

int threshold_bin(double p) {
    int k = static_cast<int>(std::floor(p * 255.0));
    k = std::clamp(k, 0, kThresholds - 1);
    while (k + 1 < kThresholds && static_cast<double>(k + 1) / 255.0 <= p) ++k;
    while (k > 0 && static_cast<double>(k) / 255.0 > p) --k;
    return k;
}

double f_beta(double precision, double recall) {
    const double den = kBeta2 * precision + recall;
    if (den <= 0.0) return 0.0;
    return (1.0 + kBeta2) * precision * recall / den;
}

namespace {

struct SweepCounts {
    std::array<double, kThresholds> tp{};  // foreground pixels with P >= t/255
    std::array<double, kThresholds> fp{};  // background pixels with P >= t/255
    double n = 0.0;
    double n_fg = 0.0;
};

SweepCounts sweep(const EvalPair& pair) {
    std::array<double, kThresholds> hist_fg{}, hist_bg{};
    SweepCounts s;
    for (int r = 0; r < pair.pred.rows; ++r) {
        const double* p = pair.pred[r];
        const double* g = pair.gt[r];
        for (int c = 0; c < pair.pred.cols; ++c) {
            const auto k = static_cast<std::size_t>(threshold_bin(p[c]));
            if (g[c] > 0.5) hist_fg[k] += 1.0;
            else hist_bg[k] += 1.0;
        }
    }
    double tp = 0.0, fp = 0.0;
    for (int t = kThresholds - 1; t >= 0; --t) {
        tp += hist_fg[static_cast<std::size_t>(t)];
        fp += hist_bg[static_cast<std::size_t>(t)];
        s.tp[static_cast<std::size_t>(t)] = tp;
        s.fp[static_cast<std::size_t>(t)] = fp;
    }
    s.n = static_cast<double>(pair.pred.total());
    s.n_fg = s.tp[0];
    return s;
}

double enhanced(double phi_g, double phi_b) {
    const double xi = 2.0 * phi_g * phi_b / (phi_g * phi_g + phi_b * phi_b + kAlignEps);
    return (xi + 1.0) * (xi + 1.0) / 4.0;
}

}  // namespace

double mae(const EvalPair& pair) {
    return cv::norm(pair.pred, pair.gt, cv::NORM_L1) / static_cast<double>(pair.pred.total());
}

FMeasure f_measure(const EvalPair& pair) {
    const auto s = sweep(pair);
    if (s.n_fg <= 0.0) throw DegenerateGTError("ground truth has no foreground pixel");
    FMeasure f;
    double sum = 0.0;
    for (std::size_t t = 0; t < kThresholds; ++t) {
        const double predicted = s.tp[t] + s.fp[t];
        PrPoint pt;
        pt.precision = predicted > 0.0 ? s.tp[t] / predicted : 0.0;
        pt.recall = s.tp[t] / s.n_fg;
        f.pr[t] = pt;
        f.curve[t] = f_beta(pt.precision, pt.recall);
        sum += f.curve[t];
        f.f_max = std::max(f.f_max, f.curve[t]);
    }
    f.f_mean = sum / kThresholds;
    return f;
}

double f_adaptive(const EvalPair& pair) {
    const double thr = std::min(2.0 * cv::mean(pair.pred)[0], 1.0);
    double tp = 0.0, predicted = 0.0, fg = 0.0;
    for (int r = 0; r < pair.pred.rows; ++r) {
        for (int c = 0; c < pair.pred.cols; ++c) {
            const bool b = pair.pred(r, c) >= thr;
            const bool g = pair.gt(r, c) > 0.5;
            tp += (b && g) ? 1.0 : 0.0;
            predicted += b ? 1.0 : 0.0;
            fg += g ? 1.0 : 0.0;
        }
    }
    if (fg <= 0.0) throw DegenerateGTError("ground truth has no foreground pixel");
    return f_beta(predicted > 0.0 ? tp / predicted : 0.0, tp / fg);
}

EMeasure e_measure(const EvalPair& pair) {
    const auto s = sweep(pair);
    EMeasure e;
    const double mg = s.n_fg / s.n;
    double sum = 0.0;
    for (std::size_t t = 0; t < kThresholds; ++t) {
        const double tp = s.tp[t];
        const double fp = s.fp[t];
        const double mb = (tp + fp) / s.n;
        double value = 0.0;
        if (s.n_fg <= 0.0) {
            value = 1.0 - mb;
        } else if (s.n_fg >= s.n) {
            value = mb;
        } else {
            const double fn = s.n_fg - tp;
            const double tn = s.n - s.n_fg - fp;
            value = (tp * enhanced(1.0 - mg, 1.0 - mb) + fn * enhanced(1.0 - mg, -mb) +
                     fp * enhanced(-mg, 1.0 - mb) + tn * enhanced(-mg, -mb)) /
                    s.n;
        }
        e.curve[t] = value;
        sum += value;
        e.e_max = std::max(e.e_max, value);
    }
    e.e_mean = sum / kThresholds;
    return e;
}

namespace {

// 2x / (x^2 + 1 + sigma) over the pixels selected by `where`; sigma is the
// sample standard deviation.
double object_similarity(const cv::Mat1d& values, const cv::Mat1b& where) {
    const int n = cv::countNonZero(where);
    if (n == 0) return 0.0;
    cv::Scalar mean, stddev;
    cv::meanStdDev(values, mean, stddev, where);
    const double mu = mean[0];
    const double sigma = n > 1 ? stddev[0] * std::sqrt(static_cast<double>(n) / (n - 1)) : 0.0;
    return 2.0 * mu / (mu * mu + 1.0 + sigma + kMatlabEps);
}

double region_ssim(const cv::Mat1d& pred, const cv::Mat1d& gt) {
    const double n = static_cast<double>(pred.total());
    const double x = cv::mean(pred)[0];
    const double y = cv::mean(gt)[0];
    cv::Mat1d dx = pred - x;
    cv::Mat1d dy = gt - y;
    const double denom = n - 1.0 + kMatlabEps;
    const double sx2 = dx.dot(dx) / denom;
    const double sy2 = dy.dot(dy) / denom;
    const double sxy = dx.dot(dy) / denom;
    const double alpha = 4.0 * x * y * sxy;
    const double beta = (x * x + y * y) * (sx2 + sy2);
    if (alpha != 0.0) return alpha / (beta + kMatlabEps);
    if (beta == 0.0) return 1.0;
    return 0.0;
}

double s_object(const EvalPair& pair) {
    cv::Mat1b fg = pair.gt > 0.5;
    cv::Mat1b bg = pair.gt <= 0.5;
    const double u = cv::mean(pair.gt)[0];
    cv::Mat1d inv = 1.0 - pair.pred;
    return u * object_similarity(pair.pred, fg) + (1.0 - u) * object_similarity(inv, bg);
}

double s_region(const EvalPair& pair) {
    const int h = pair.gt.rows;
    const int w = pair.gt.cols;
    cv::Mat1b fg = pair.gt > 0.5;
    const double total = cv::countNonZero(fg);
    cv::Moments m = cv::moments(fg, /*binaryImage=*/true);
    // 1-based centroid, rounded half away from zero.
    const int cx = static_cast<int>(std::round(m.m10 / total + 1.0));
    const int cy = static_cast<int>(std::round(m.m01 / total + 1.0));
    const double area = static_cast<double>(h) * w;
    const std::array<cv::Rect, 4> rects{cv::Rect(0, 0, cx, cy), cv::Rect(cx, 0, w - cx, cy),
                                        cv::Rect(0, cy, cx, h - cy), cv::Rect(cx, cy, w - cx, h - cy)};
    double q = 0.0;
    double used = 0.0;
    for (std::size_t i = 0; i < rects.size(); ++i) {
        const auto& r = rects[i];
        const double weight = i < 3 ? static_cast<double>(r.area()) / area : 1.0 - used;
        used += weight;
        if (r.area() == 0) continue;
        q += weight * region_ssim(pair.pred(r), pair.gt(r));
    }
    return q;
}

}  // namespace

double s_measure(const EvalPair& pair, double alpha) {
    const double y = cv::mean(pair.gt)[0];
    if (y == 0.0) return std::clamp(1.0 - cv::mean(pair.pred)[0], 0.0, 1.0);
    if (y == 1.0) return std::clamp(cv::mean(pair.pred)[0], 0.0, 1.0);
    const double q = alpha * s_object(pair) + (1.0 - alpha) * s_region(pair);
    return std::clamp(q, 0.0, 1.0);
}

ImageMetrics evaluate_pair(const std::string& name, const EvalPair& pair, bool adaptive_f, FMeasure* f_out) {
    ImageMetrics m;
    m.name = name;
    m.mae = mae(pair);
    m.s_alpha = s_measure(pair);
    const auto e = e_measure(pair);
    m.e_mean = e.e_mean;
    m.e_max = e.e_max;
    try {
        const auto f = f_measure(pair);
        m.f_mean = f.f_mean;
        m.f_max = f.f_max;
        if (adaptive_f) m.f_adaptive = f_adaptive(pair);
        if (f_out != nullptr) *f_out = f;
    } catch (const DegenerateGTError&) {
        if (f_out != nullptr) *f_out = FMeasure{};
    }
    return m;
}

MetricReport aggregate(std::vector<ImageMetrics> per_image, const std::vector<FMeasure>& curves, bool adaptive_f) {
    MetricReport r;
    r.per_image = std::move(per_image);
    const double n = static_cast<double>(r.per_image.size());
    double n_f = 0.0;
    for (std::size_t i = 0; i < r.per_image.size(); ++i) {
        const auto& m = r.per_image[i];
        r.mae += m.mae;
        r.s_alpha += m.s_alpha;
        r.e_mean += m.e_mean;
        r.e_max += m.e_max;
        if (!m.f_max) {
            ++r.degenerate_gt;
            continue;
        }
        n_f += 1.0;
        r.f_mean += *m.f_mean;
        r.f_max += *m.f_max;
        if (adaptive_f && m.f_adaptive) r.f_adaptive = r.f_adaptive.value_or(0.0) + *m.f_adaptive;
        if (i < curves.size()) {
            for (std::size_t t = 0; t < kThresholds; ++t) {
                r.pr_curve[t].precision += curves[i].pr[t].precision;
                r.pr_curve[t].recall += curves[i].pr[t].recall;
            }
        }
    }
    if (n > 0.0) {
        r.mae /= n;
        r.s_alpha /= n;
        r.e_mean /= n;
        r.e_max /= n;
    }
    if (n_f > 0.0) {
        r.f_mean /= n_f;
        r.f_max /= n_f;
        if (r.f_adaptive) *r.f_adaptive /= n_f;
        for (auto& pt : r.pr_curve) {
            pt.precision /= n_f;
            pt.recall /= n_f;
        }
    }
    return r;
}

namespace {

bool is_image(const fs::path& p) {
    auto ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    return ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".bmp" || ext == ".tif" || ext == ".tiff";
}

std::string pair_key(const fs::path& root, const fs::path& file) {
    auto rel = fs::relative(file, root);
    rel.replace_extension();
    fs::path key;
    for (const auto& part : rel) {
        if (part != "masks") key /= part;
    }
    return key.generic_string();
}

std::map<std::string, fs::path> index_dir(const fs::path& root) {
    if (!fs::is_directory(root)) throw IoError("not a directory: " + root.string());
    // A file inside a masks/ directory wins over a same-keyed sibling image,
    // so a dataset split root can serve directly as the ground-truth root.
    std::map<std::string, fs::path> out;
    std::map<std::string, bool> from_masks;
    for (const auto& entry : fs::recursive_directory_iterator(root)) {
        if (!entry.is_regular_file() || !is_image(entry.path())) continue;
        const auto rel = fs::relative(entry.path(), root);
        const bool in_masks = std::find(rel.begin(), rel.end(), fs::path("masks")) != rel.end();
        const auto key = pair_key(root, entry.path());
        auto it = from_masks.find(key);
        if (it != from_masks.end() && (it->second || !in_masks)) {
            if (it->second == in_masks) throw PairingError("two files map to key " + key);
            continue;
        }
        out[key] = entry.path();
        from_masks[key] = in_masks;
    }
    if (std::any_of(from_masks.begin(), from_masks.end(), [](const auto& kv) { return kv.second; })) {
        std::erase_if(out, [&](const auto& kv) { return !from_masks.at(kv.first); });
    }
    return out;
}

cv::Mat1b read_gray(const fs::path& p) {
    cv::Mat img = cv::imread(p.string(), cv::IMREAD_GRAYSCALE);
    if (img.empty()) throw IoError("cannot decode " + p.string());
    return img;
}

}  // namespace

MetricReport evaluate_dirs(const fs::path& pred_dir, const fs::path& gt_dir, const EvalOptions& opts) {
    const auto gts = index_dir(gt_dir);
    const auto preds = index_dir(pred_dir);
    std::vector<std::string> missing;
    for (const auto& [key, _] : gts) {
        if (!preds.count(key)) missing.push_back(key);
    }
    if (!missing.empty()) throw MissingPredictionError(missing);

    std::vector<ImageMetrics> per_image;
    std::vector<FMeasure> curves;
    for (const auto& [key, gt_path] : gts) {
        const auto pair = make_pair_u8(read_gray(preds.at(key)), read_gray(gt_path));
        FMeasure f;
        per_image.push_back(evaluate_pair(key, pair, opts.adaptive_f, &f));
        curves.push_back(f);
    }
    return aggregate(std::move(per_image), curves, opts.adaptive_f);
}

ReportPaths report_paths(const fs::path& report_path) {
    ReportPaths p;
    p.json = report_path;
    auto stem = report_path;
    stem.replace_extension();
    p.per_image_csv = stem.string() + "_per_image.csv";
    p.pr_csv = stem.string() + "_pr.csv";
    return p;
}

std::string report_json(const MetricReport& r) {
    nlohmann::ordered_json j;
    j["mae"] = r.mae;
    j["s_alpha"] = r.s_alpha;
    j["e_mean"] = r.e_mean;
    j["e_max"] = r.e_max;
    j["f_mean"] = r.f_mean;
    j["f_max"] = r.f_max;
    if (r.f_adaptive) j["f_adaptive"] = *r.f_adaptive;
    j["images"] = r.per_image.size();
    j["degenerate_gt"] = r.degenerate_gt;
    return j.dump(2) + "\n";
}

namespace {
std::string fmt(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}
std::string fmt(const std::optional<double>& v) { return v ? fmt(*v) : std::string(); }

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
}
}  // namespace

void write_report(const MetricReport& r, const fs::path& report_path) {
    const auto paths = report_paths(report_path);
    write_text(paths.json, report_json(r));

    std::ostringstream rows;
    rows << "name,mae,s_alpha,e_mean,e_max,f_mean,f_max";
    if (r.f_adaptive) rows << ",f_adaptive";
    rows << "\n";
    for (const auto& m : r.per_image) {
        rows << m.name << "," << fmt(m.mae) << "," << fmt(m.s_alpha) << "," << fmt(m.e_mean) << "," << fmt(m.e_max)
             << "," << fmt(m.f_mean) << "," << fmt(m.f_max);
        if (r.f_adaptive) rows << "," << fmt(m.f_adaptive);
        rows << "\n";
    }
    write_text(paths.per_image_csv, rows.str());

    std::ostringstream pr;
    pr << "threshold,precision,recall\n";
    for (int t = 0; t < kThresholds; ++t) {
        pr << t << "," << fmt(r.pr_curve[static_cast<std::size_t>(t)].precision) << ","
           << fmt(r.pr_curve[static_cast<std::size_t>(t)].recall) << "\n";
    }
    write_text(paths.pr_csv, pr.str());
}

}  // namespace bbnet::metrics

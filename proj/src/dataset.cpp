#include "bbnet/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>
#include <numbers>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "bbnet/archive.hpp"
#include "bbnet/log.hpp"
#include "json.hpp"

namespace bbnet {

namespace fs = std::filesystem;

bool is_image_file(const fs::path& p) {
    auto ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

namespace {

std::vector<fs::path> sorted_entries(const fs::path& dir, bool directories) {
    std::vector<fs::path> out;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (directories ? e.is_directory() : (e.is_regular_file() && is_image_file(e.path()))) out.push_back(e.path());
    }
    std::sort(out.begin(), out.end());
    return out;
}

std::size_t draw_index(std::mt19937_64& rng, std::size_t n) { return static_cast<std::size_t>(rng() % n); }

}  // namespace

std::vector<GroupRecord> scan_dataset(const fs::path& split_root) {
    if (!fs::is_directory(split_root)) throw IoError("dataset root does not exist: " + split_root.string());
    std::vector<GroupRecord> records;
    for (const auto& super_dir : sorted_entries(split_root, true)) {
        for (const auto& sub_dir : sorted_entries(super_dir, true)) {
            const auto images = sorted_entries(sub_dir, false);
            std::map<std::string, fs::path> masks;
            const auto mask_dir = sub_dir / "masks";
            if (fs::is_directory(mask_dir)) {
                for (const auto& m : sorted_entries(mask_dir, false)) {
                    auto& slot = masks[m.stem().string()];
                    if (slot.empty() || m.extension() == ".png") slot = m;
                }
            }
            GroupRecord rec;
            rec.super_class = super_dir.filename().string();
            rec.sub_class = sub_dir.filename().string();
            for (const auto& img : images) {
                auto it = masks.find(img.stem().string());
                if (it == masks.end()) {
                    throw PairingError("image " + img.string() + " has no mask named " + img.stem().string() + ".*");
                }
                rec.image_paths.push_back(img);
                rec.mask_paths.push_back(it->second);
            }
            if (rec.size() < kMinGroupSize) {
                log::warn("dropping group ", rec.id(), " with ", rec.size(), " image/mask pairs (< ", kMinGroupSize, ")");
                continue;
            }
            records.push_back(std::move(rec));
        }
    }
    if (records.empty()) log::warn("no usable groups under ", split_root.string());
    return records;
}

torch::Tensor load_image(const fs::path& p, std::int64_t size) {
    cv::Mat bgr = cv::imread(p.string(), cv::IMREAD_COLOR);
    if (bgr.empty()) throw IoError("cannot decode image " + p.string());
    cv::Mat rgb;
    cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
    const cv::Size target(static_cast<int>(size), static_cast<int>(size));
    if (rgb.size() != target) cv::resize(rgb, rgb, target, 0, 0, cv::INTER_LINEAR);
    cv::Mat f;
    rgb.convertTo(f, CV_32FC3, 1.0 / 255.0);
    auto t = torch::from_blob(f.data, {size, size, 3}, torch::kFloat32);
    return t.permute({2, 0, 1}).contiguous().clone();
}

torch::Tensor load_mask(const fs::path& p, std::int64_t size) {
    cv::Mat gray = cv::imread(p.string(), cv::IMREAD_GRAYSCALE);
    if (gray.empty()) throw IoError("cannot decode mask " + p.string());
    cv::Mat f;
    gray.convertTo(f, CV_32F, 1.0 / 255.0);
    const cv::Size target(static_cast<int>(size), static_cast<int>(size));
    if (f.size() != target) cv::resize(f, f, target, 0, 0, cv::INTER_LINEAR);
    cv::Mat bin;
    cv::threshold(f, bin, 0.5 - 1e-6, 1.0, cv::THRESH_BINARY);
    auto t = torch::from_blob(bin.data, {1, size, size}, torch::kFloat32);
    return t.clone();
}

namespace {
cv::Size native_size(const fs::path& p) {
    cv::Mat img = cv::imread(p.string(), cv::IMREAD_UNCHANGED);
    if (img.empty()) throw IoError("cannot decode image " + p.string());
    return img.size();
}
}  // namespace

ImageGroup load_group(const GroupRecord& record, const std::vector<std::size_t>& members, std::int64_t size) {
    ImageGroup g;
    g.group_id = record.id();
    std::vector<torch::Tensor> images, masks;
    for (auto i : members) {
        images.push_back(load_image(record.image_paths.at(i), size));
        masks.push_back(load_mask(record.mask_paths.at(i), size));
        g.stems.push_back(record.image_paths[i].stem().string());
        g.native_sizes.push_back(native_size(record.image_paths[i]));
    }
    g.images = torch::stack(images, 0);
    g.masks = torch::stack(masks, 0);
    return g;
}

ImageGroup sample_group(const std::vector<GroupRecord>& records, std::int64_t batch_size, std::int64_t size,
                        std::mt19937_64& rng) {
    if (records.empty()) throw ConfigError("sample_group needs at least one group");
    if (batch_size <= 0) throw ConfigError("batch_size must be positive");
    const auto& rec = records[draw_index(rng, records.size())];
    const auto n = rec.size();
    const auto b = static_cast<std::size_t>(batch_size);
    std::vector<std::size_t> members;
    if (n >= b) {
        std::vector<std::size_t> idx(n);
        for (std::size_t i = 0; i < n; ++i) idx[i] = i;
        for (std::size_t i = 0; i < b; ++i) std::swap(idx[i], idx[i + draw_index(rng, n - i)]);
        members.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(b));
    } else {
        for (std::size_t i = 0; i < b; ++i) members.push_back(draw_index(rng, n));
    }
    return load_group(rec, members, size);
}

ImageGroup load_group_dir(const fs::path& dir, std::int64_t size) {
    if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir.string());
    const auto images = sorted_entries(dir, false);
    if (images.empty()) throw IoError("no images in " + dir.string());
    ImageGroup g;
    g.group_id = dir.filename().string();
    std::vector<torch::Tensor> imgs, masks;
    bool all_masks = true;
    for (const auto& p : images) {
        imgs.push_back(load_image(p, size));
        g.stems.push_back(p.stem().string());
        g.native_sizes.push_back(native_size(p));
        const auto m = dir / "masks" / (p.stem().string() + ".png");
        if (all_masks && fs::exists(m)) masks.push_back(load_mask(m, size));
        else all_masks = false;
    }
    g.images = torch::stack(imgs, 0);
    if (all_masks) g.masks = torch::stack(masks, 0);
    return g;
}

// --- synthetic generator ---------------------------------------------------

namespace {

double uniform(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }
double uniform(std::mt19937_64& rng, double lo, double hi) { return lo + (hi - lo) * uniform(rng); }

double normal(std::mt19937_64& rng) {
    double u1 = uniform(rng);
    while (u1 <= 0.0) u1 = uniform(rng);
    const double u2 = uniform(rng);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

// Gaussian-smoothed white noise rescaled to zero mean, unit deviation.
cv::Mat1d noise_field(int size, double sigma, std::mt19937_64& rng) {
    cv::Mat1d n(size, size);
    for (int r = 0; r < size; ++r) {
        for (int c = 0; c < size; ++c) n(r, c) = normal(rng);
    }
    cv::GaussianBlur(n, n, cv::Size(0, 0), sigma, sigma, cv::BORDER_REFLECT);
    cv::Scalar mean, dev;
    cv::meanStdDev(n, mean, dev);
    n = (n - mean[0]) / std::max(dev[0], 1e-12);
    return n;
}

struct Texture {
    cv::Mat1d shared;
    std::array<cv::Mat1d, 3> channel;
};

Texture texture(int size, std::mt19937_64& rng) {
    Texture t;
    t.shared = noise_field(size, 1.5, rng);
    for (auto& c : t.channel) c = noise_field(size, 1.0, rng);
    return t;
}

double contour_radius(const std::vector<double>& amp, const std::vector<double>& phase, double theta) {
    double r = 1.0;
    for (std::size_t k = 0; k < amp.size(); ++k) r += amp[k] * std::cos(static_cast<double>(k + 2) * theta + phase[k]);
    return r;
}

std::uint8_t to_u8(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

}  // namespace

SpeciesParams draw_species(std::mt19937_64& rng) {
    SpeciesParams s;
    double total = 0.0;
    for (int k = 2; k <= 5; ++k) {
        const double a = uniform(rng, 0.0, 0.3) / std::pow(static_cast<double>(k), 0.7);
        s.amplitudes.push_back(a);
        s.phases.push_back(uniform(rng, 0.0, 2.0 * std::numbers::pi));
        total += a;
    }
    // Keep the contour star-shaped with a comfortable minimum radius.
    if (total > 0.6) {
        for (auto& a : s.amplitudes) a *= 0.6 / total;
    }
    // Species differ in hue; their mean luminance stays near mid-grey.
    const double grey = uniform(rng, 0.45, 0.55);
    cv::Vec3d hue;
    for (int c = 0; c < 3; ++c) hue[c] = uniform(rng, -0.1, 0.1);
    const double hue_mean = (hue[0] + hue[1] + hue[2]) / 3.0;
    for (int c = 0; c < 3; ++c) s.base_color[c] = grey + hue[c] - hue_mean;
    s.texture_amplitude = uniform(rng, 0.04, 0.06);
    const double sign = uniform(rng) < 0.5 ? -1.0 : 1.0;
    s.luminance_delta = sign * uniform(rng, 0.2, 0.25);
    return s;
}

SynthSample render_sample(const SpeciesParams& species, std::int64_t size64, std::mt19937_64& rng, bool matte) {
    const int size = static_cast<int>(size64);
    std::vector<double> amp = species.amplitudes;
    std::vector<double> phase = species.phases;
    for (std::size_t k = 0; k < amp.size(); ++k) {
        amp[k] *= 1.0 + 0.15 * normal(rng);
        phase[k] += 0.1 * normal(rng);
    }

    cv::Mat1b mask(size, size);
    for (int attempt = 0;; ++attempt) {
        const double fraction = uniform(rng, 0.04, 0.35);
        const double radius = size * std::sqrt(fraction / std::numbers::pi);
        const double margin = std::min(0.8 * radius, 0.5 * size);
        const double cx = uniform(rng, margin, size - margin);
        const double cy = uniform(rng, margin, size - margin);
        const double rot = uniform(rng, 0.0, 2.0 * std::numbers::pi);
        int count = 0;
        for (int r = 0; r < size; ++r) {
            for (int c = 0; c < size; ++c) {
                const double dx = c + 0.5 - cx;
                const double dy = r + 0.5 - cy;
                const bool inside = std::hypot(dx, dy) <= radius * contour_radius(amp, phase, std::atan2(dy, dx) - rot);
                mask(r, c) = inside ? 255 : 0;
                count += inside ? 1 : 0;
            }
        }
        const double fg = static_cast<double>(count) / (static_cast<double>(size) * size);
        if (fg >= kMinForeground && fg <= kMaxForeground) break;
        if (attempt > 1000) throw ConfigError("synth: cannot place an object within the foreground band");
    }

    const auto bg = texture(size, rng);
    const auto obj = texture(size, rng);
    const auto light = noise_field(size, size / 6.0, rng);
    cv::Vec3d matte_color;
    for (int c = 0; c < 3; ++c) matte_color[c] = uniform(rng);

    const double a = species.texture_amplitude;
    SynthSample out;
    out.image = cv::Mat3b(size, size);
    for (int r = 0; r < size; ++r) {
        for (int c = 0; c < size; ++c) {
            const bool fg = mask(r, c) != 0;
            const auto& t = fg ? obj : bg;
            cv::Vec3b px;
            for (int ch = 0; ch < 3; ++ch) {
                double v = species.base_color[ch] + a * t.shared(r, c) + 0.3 * a * t.channel[ch](r, c) +
                           0.04 * light(r, c);
                if (fg) v = matte ? matte_color[ch] : v + species.luminance_delta;
                px[2 - ch] = to_u8(v);  // RGB -> BGR
            }
            out.image(r, c) = px;
        }
    }
    out.mask = mask;
    return out;
}

void synth_generate(const fs::path& out, const SynthOptions& opts) {
    if (opts.size <= 0 || opts.size % 24 != 0) {
        throw ConfigError("synth size must be a positive multiple of 24, got " + std::to_string(opts.size));
    }
    if (opts.groups <= 0 || opts.per_group <= 0) throw ConfigError("synth needs positive group counts");
    std::mt19937_64 master(opts.seed);
    for (std::int64_t g = 0; g < opts.groups; ++g) {
        std::mt19937_64 rng(master());
        const auto species = draw_species(rng);
        char name[32];
        std::snprintf(name, sizeof(name), "species_%02lld", static_cast<long long>(g));
        const auto dir = out / "train" / "synth" / name;
        fs::create_directories(dir / "masks");
        for (std::int64_t i = 0; i < opts.per_group; ++i) {
            const auto sample = render_sample(species, opts.size, rng);
            char file[32];
            std::snprintf(file, sizeof(file), "img_%03lld.png", static_cast<long long>(i));
            if (!cv::imwrite((dir / file).string(), sample.image) ||
                !cv::imwrite((dir / "masks" / file).string(), sample.mask)) {
                throw IoError("cannot write synthetic sample into " + dir.string());
            }
        }
    }
}

// --- statistics ------------------------------------------------------------

void Histogram::add(double v) {
    const auto bins = counts.size();
    std::size_t i = 0;
    while (i + 1 < bins && v >= edges[i + 1]) ++i;
    ++counts[i];
}

std::int64_t Histogram::total() const {
    std::int64_t t = 0;
    for (auto c : counts) t += c;
    return t;
}

namespace {

Histogram make_hist(std::string name, std::vector<double> edges) {
    Histogram h;
    h.name = std::move(name);
    h.counts.assign(edges.size() - 1, 0);
    h.edges = std::move(edges);
    return h;
}

Histogram unit_hist(std::string name) {
    std::vector<double> edges;
    for (int i = 0; i <= 10; ++i) edges.push_back(i / 10.0);
    return make_hist(std::move(name), edges);
}

std::array<double, 512> color_hist(const cv::Mat3b& image, const cv::Mat1b& where, double& count) {
    std::array<double, 512> h{};
    count = 0.0;
    for (int r = 0; r < image.rows; ++r) {
        for (int c = 0; c < image.cols; ++c) {
            if (where(r, c) == 0) continue;
            const auto& px = image(r, c);
            h[static_cast<std::size_t>((px[0] >> 5) * 64 + (px[1] >> 5) * 8 + (px[2] >> 5))] += 1.0;
            count += 1.0;
        }
    }
    if (count > 0.0) {
        for (auto& v : h) v /= count;
    }
    return h;
}

}  // namespace

double color_chi2(const cv::Mat3b& image, const cv::Mat1b& a, const cv::Mat1b& b) {
    double na = 0.0, nb = 0.0;
    const auto ha = color_hist(image, a, na);
    const auto hb = color_hist(image, b, nb);
    if (na == 0.0 || nb == 0.0) return 0.0;
    double d = 0.0;
    for (std::size_t i = 0; i < ha.size(); ++i) {
        const double s = ha[i] + hb[i];
        if (s > 0.0) d += (ha[i] - hb[i]) * (ha[i] - hb[i]) / s;
    }
    return 0.5 * d;
}

double global_contrast(const cv::Mat3b& image, const cv::Mat1b& mask) {
    cv::Mat1b fg = mask > 0;
    cv::Mat1b bg = mask == 0;
    return color_chi2(image, fg, bg);
}

double local_contrast(const cv::Mat3b& image, const cv::Mat1b& mask, int band) {
    cv::Mat1b fg = mask > 0;
    cv::Mat1b dilated;
    cv::dilate(fg, dilated, cv::getStructuringElement(cv::MORPH_ELLIPSE, cv::Size(2 * band + 1, 2 * band + 1)));
    cv::Mat1b ring = dilated & (mask == 0);
    return color_chi2(image, fg, ring);
}

double object_size(const cv::Mat1b& mask) {
    return static_cast<double>(cv::countNonZero(mask)) / static_cast<double>(mask.total());
}

double center_bias(const cv::Mat1b& mask) {
    const auto m = cv::moments(mask > 0, true);
    if (m.m00 <= 0.0) throw DegenerateMaskError("mask has no foreground pixel");
    // Pixel centres sit at index + 0.5.
    const double cx = m.m10 / m.m00 + 0.5;
    const double cy = m.m01 / m.m00 + 0.5;
    const double dx = cx - mask.cols / 2.0;
    const double dy = cy - mask.rows / 2.0;
    const double diag = std::hypot(static_cast<double>(mask.cols), static_cast<double>(mask.rows));
    return std::clamp(2.0 * std::hypot(dx, dy) / diag, 0.0, 1.0);
}

ImageStats image_stats(const cv::Mat3b& image, const cv::Mat1b& mask) {
    if (image.size() != mask.size()) throw ShapeError("image and mask sizes differ");
    if (cv::countNonZero(mask) == 0) throw DegenerateMaskError("mask has no foreground pixel");
    ImageStats s;
    s.resolution = image.size();
    s.global_contrast = global_contrast(image, mask);
    s.local_contrast = local_contrast(image, mask);
    s.object_size = object_size(mask);
    s.center_bias = center_bias(mask);
    return s;
}

DatasetStats compute_stats(const std::vector<GroupRecord>& records) {
    if (records.empty()) throw ConfigError("compute_stats needs at least one group");
    DatasetStats st;
    st.resolution = make_hist("resolution", {0, 256, 512, 768, 1024, 1536, 2048, 1e9});
    st.global_contrast = unit_hist("global_contrast");
    st.local_contrast = unit_hist("local_contrast");
    st.object_size = unit_hist("object_size");
    st.center_bias = unit_hist("center_bias");
    for (const auto& rec : records) {
        for (std::size_t i = 0; i < rec.size(); ++i) {
            cv::Mat3b image = cv::imread(rec.image_paths[i].string(), cv::IMREAD_COLOR);
            cv::Mat1b mask = cv::imread(rec.mask_paths[i].string(), cv::IMREAD_GRAYSCALE);
            if (image.empty() || mask.empty()) throw IoError("cannot decode pair " + rec.image_paths[i].string());
            mask = mask >= 128;
            ImageStats s;
            try {
                s = image_stats(image, mask);
            } catch (const DegenerateMaskError&) {
                log::warn("skipping ", rec.mask_paths[i].string(), ": empty mask");
                ++st.degenerate;
                continue;
            }
            ++st.measured;
            st.resolution.add(std::max(s.resolution.width, s.resolution.height));
            st.global_contrast.add(s.global_contrast);
            st.local_contrast.add(s.local_contrast);
            st.object_size.add(s.object_size);
            st.center_bias.add(s.center_bias);
            st.mean_global_contrast += s.global_contrast;
            st.mean_local_contrast += s.local_contrast;
            st.mean_object_size += s.object_size;
            st.mean_center_bias += s.center_bias;
        }
    }
    if (st.measured > 0) {
        const auto n = static_cast<double>(st.measured);
        st.mean_global_contrast /= n;
        st.mean_local_contrast /= n;
        st.mean_object_size /= n;
        st.mean_center_bias /= n;
    }
    return st;
}

void write_stats(const DatasetStats& stats, const fs::path& out_dir) {
    fs::create_directories(out_dir);
    const std::array<const Histogram*, 5> hists{&stats.resolution, &stats.global_contrast, &stats.local_contrast,
                                                &stats.object_size, &stats.center_bias};
    std::ostringstream csv;
    csv.precision(10);
    csv << "histogram,bin,lower,upper,count\n";
    nlohmann::json j;
    j["measured"] = stats.measured;
    j["degenerate"] = stats.degenerate;
    j["mean"] = {{"global_contrast", stats.mean_global_contrast},
                 {"local_contrast", stats.mean_local_contrast},
                 {"object_size", stats.mean_object_size},
                 {"center_bias", stats.mean_center_bias}};
    for (const auto* h : hists) {
        for (std::size_t i = 0; i < h->counts.size(); ++i) {
            csv << h->name << ',' << i << ',' << h->edges[i] << ',' << h->edges[i + 1] << ',' << h->counts[i] << '\n';
        }
        j["histograms"][h->name] = {{"edges", h->edges}, {"counts", h->counts}};
    }
    write_file_atomic(out_dir / "stats.csv", csv.str());
    write_file_atomic(out_dir / "stats.json", j.dump(2) + "\n");
}

}  // namespace bbnet

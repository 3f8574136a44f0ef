#include "uqc/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <tuple>
#include <vector>

namespace uqc::preprocess {

namespace {

double median_inplace(std::vector<double>& v) {
    const size_t n = v.size();
    auto mid = v.begin() + n / 2;
    std::nth_element(v.begin(), mid, v.end());
    if (n % 2 == 1) return *mid;
    const double hi = *mid;
    const double lo = *std::max_element(v.begin(), mid);
    return 0.5 * (lo + hi);
}

struct WindowStats {
    std::vector<double> values;  // row-major window pixels
    double mean = 0.0;
    double var = 0.0;
};

WindowStats gather_window(const Image& img, int r, int c, int side) {
    const int h = static_cast<int>(img.rows());
    const int w = static_cast<int>(img.cols());
    const int half = side / 2;
    WindowStats ws;
    ws.values.reserve(static_cast<size_t>(side) * side);
    double sum = 0.0, sum2 = 0.0;
    for (int dr = -half; dr <= half; ++dr)
        for (int dc = -half; dc <= half; ++dc) {
            const double v = img(reflect_index(r + dr, h), reflect_index(c + dc, w));
            ws.values.push_back(v);
            sum += v;
            sum2 += v * v;
        }
    const double n = static_cast<double>(ws.values.size());
    ws.mean = sum / n;
    ws.var = std::max(0.0, sum2 / n - ws.mean * ws.mean);
    return ws;
}

double window_distance(const WindowStats& a, const WindowStats& b) {
    double s = 0.0;
    for (size_t i = 0; i < a.values.size(); ++i) {
        const double d = a.values[i] - b.values[i];
        s += d * d;
    }
    return std::sqrt(s);
}

}  // namespace

double estimate_noise_sigma(const Image& image) {
    if (image.size() == 0) throw std::invalid_argument("empty image");
    const int h = static_cast<int>(image.rows());
    const int w = static_cast<int>(image.cols());
    std::vector<double> resp;
    resp.reserve(static_cast<size_t>(h) * w);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            const double lap = image(reflect_index(r - 1, h), c) + image(reflect_index(r + 1, h), c)
                             + image(r, reflect_index(c - 1, w)) + image(r, reflect_index(c + 1, w))
                             - 4.0 * image(r, c);
            resp.push_back(lap);
        }
    std::vector<double> centered = resp;
    const double med = median_inplace(centered);
    for (size_t i = 0; i < resp.size(); ++i) centered[i] = std::abs(resp[i] - med);
    const double mad = median_inplace(centered);
    const double sigma = mad / (0.67449 * std::sqrt(20.0));
    return std::max(sigma, 1e-4);
}

Image fuzzy_filter(const Image& image, const FuzzyFilterConfig& cfg) {
    if (cfg.window_side < 3 || cfg.window_side % 2 == 0)
        throw std::domain_error("window_side must be odd and >= 3");
    if (cfg.search_radius < cfg.window_side / 2)
        throw std::domain_error("search_radius too small for window");
    if (cfg.max_matches < 1) throw std::domain_error("max_matches must be >= 1");
    const int h = static_cast<int>(image.rows());
    const int w = static_cast<int>(image.cols());
    if (h <= cfg.window_side || w <= cfg.window_side)
        throw std::domain_error("image must exceed window_side in both dimensions");

    const double sigma = cfg.sigma ? *cfg.sigma : estimate_noise_sigma(image);
    if (sigma <= 0.0) throw std::domain_error("sigma must be positive");
    const double inv = 1.0 / (2.0 * sigma * sigma);
    const int R = cfg.search_radius;

    Image out(h, w);
    std::vector<std::tuple<double, int, int>> kept;  // (d_s, row, col)
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            const WindowStats local = gather_window(image, r, c, cfg.window_side);
            kept.clear();
            for (int jr = std::max(0, r - R); jr <= std::min(h - 1, r + R); ++jr) {
                for (int jc = std::max(0, c - R); jc <= std::min(w - 1, c + R); ++jc) {
                    if (jr == r && jc == c) continue;
                    const WindowStats cand = gather_window(image, jr, jc, cfg.window_side);
                    if (std::abs(cand.mean - local.mean) >= cfg.mean_tolerance) continue;
                    if (std::abs(cand.var - local.var) >= cfg.var_tolerance) continue;
                    kept.emplace_back(window_distance(local, cand), jr, jc);
                }
            }
            std::sort(kept.begin(), kept.end());
            if (static_cast<int>(kept.size()) > cfg.max_matches - 1)
                kept.resize(static_cast<size_t>(cfg.max_matches - 1));
            // Accumulate deviations from the center pixel so a constant
            // image is reproduced bit for bit.
            const double center = image(r, c);
            double wsum = 1.0;            // the local window itself, d_s = 0
            double dsum = 0.0;
            for (const auto& [ds, jr, jc] : kept) {
                const double wj = std::exp(-ds * ds * inv);
                wsum += wj;
                dsum += wj * (image(jr, jc) - center);
            }
            out(r, c) = clamp01(center + dsum / wsum);
        }
    }
    return out;
}

Image sharpen(const Image& image, bool clamp) {
    const int h = static_cast<int>(image.rows());
    const int w = static_cast<int>(image.cols());
    if (h < 3 || w < 3) throw std::domain_error("sharpen needs at least 3x3");
    Image out(h, w);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            // 5p - sum(neighbors), grouped as p + sum(p - neighbor) so a
            // constant image passes through bit-exactly.
            const double p = image(r, c);
            const double v = p + (p - image(reflect_index(r - 1, h), c))
                               + (p - image(reflect_index(r + 1, h), c))
                               + (p - image(r, reflect_index(c - 1, w)))
                               + (p - image(r, reflect_index(c + 1, w)));
            out(r, c) = clamp ? clamp01(v) : v;
        }
    return out;
}

data::Dataset augment_hflip(const data::Dataset& dataset) {
    data::Dataset out = dataset;
    out.samples.reserve(dataset.samples.size() * 2);
    for (const auto& s : dataset.samples) {
        data::ImageSample f = s;
        f.id = s.id + ":flip";
        f.pixels = s.pixels.rowwise().reverse();
        out.samples.push_back(std::move(f));
    }
    std::sort(out.samples.begin(), out.samples.end(),
              [](const data::ImageSample& a, const data::ImageSample& b) { return a.id < b.id; });
    return out;
}

Image standardize(const Image& image, int side) {
    if (side < 8) throw std::domain_error("side must be >= 8");
    const int h = static_cast<int>(image.rows());
    const int w = static_cast<int>(image.cols());
    if (h == side && w == side) return image;
    Image out(side, side);
    const double sr = static_cast<double>(h) / side;
    const double sc = static_cast<double>(w) / side;
    for (int r = 0; r < side; ++r) {
        const double src_r = (r + 0.5) * sr - 0.5;
        const int r0 = static_cast<int>(std::floor(src_r));
        const double fr = src_r - r0;
        const int ra = std::clamp(r0, 0, h - 1);
        const int rb = std::clamp(r0 + 1, 0, h - 1);
        for (int c = 0; c < side; ++c) {
            const double src_c = (c + 0.5) * sc - 0.5;
            const int c0 = static_cast<int>(std::floor(src_c));
            const double fc = src_c - c0;
            const int ca = std::clamp(c0, 0, w - 1);
            const int cb = std::clamp(c0 + 1, 0, w - 1);
            const double top = image(ra, ca) * (1.0 - fc) + image(ra, cb) * fc;
            const double bot = image(rb, ca) * (1.0 - fc) + image(rb, cb) * fc;
            out(r, c) = clamp01(top * (1.0 - fr) + bot * fr);
        }
    }
    return out;
}

data::Dataset preprocess_pipeline(const data::Dataset& dataset, const FuzzyFilterConfig& cfg,
                                  const StageFlags& flags) {
    data::Dataset out = dataset;
    for (auto& s : out.samples) {
        if (flags.fuzzy) s.pixels = fuzzy_filter(s.pixels, cfg);
        if (flags.sharpen) s.pixels = sharpen(s.pixels);
        s.pixels = standardize(s.pixels, flags.side);
    }
    if (flags.train && flags.hflip) out = augment_hflip(out);
    return out;
}

}  // namespace uqc::preprocess

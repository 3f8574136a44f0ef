#pragma once

#include <optional>

#include "uqc/data.hpp"
#include "uqc/image.hpp"

namespace uqc::preprocess {

struct FuzzyFilterConfig {
    int window_side = 5;
    int search_radius = 10;          // 21x21 search region
    int max_matches = 16;            // n, self included
    double mean_tolerance = 0.05;
    double var_tolerance = 0.01;
    std::optional<double> sigma;     // nullopt = per-image auto estimate
};

// Noise sigma via median absolute deviation of the 4-neighbor Laplacian
// response: MAD / (0.67449 * sqrt(20)). Floors at 1e-4 for constant images.
double estimate_noise_sigma(const Image& image);

// Weighted non-local window average. For each pixel, candidate windows inside
// the search region pass a strict mean/variance pre-screen against the local
// window, the n most similar by window distance d_s are kept (the local window
// always among them), and the output is the w_j = exp(-d_s^2 / 2 sigma^2)
// weighted mean of their center pixels, clamped to [0,1].
Image fuzzy_filter(const Image& image, const FuzzyFilterConfig& cfg);

// 3x3 sharpening convolution [[0,-1,0],[-1,5,-1],[0,-1,0]], reflect-padded.
// `clamp` exists so tests can inspect the raw impulse response.
Image sharpen(const Image& image, bool clamp = true);

// Appends a left-right mirrored copy of every sample (id suffixed ":flip",
// label kept), then re-sorts by id.
data::Dataset augment_hflip(const data::Dataset& dataset);

// Bilinear resize to side x side with half-pixel sample centers; exact
// identity when the size already matches.
Image standardize(const Image& image, int side);

struct StageFlags {
    bool fuzzy = true;
    bool sharpen = true;
    bool hflip = true;   // honored only when train is set
    bool train = false;
    int side = 224;
};

// fuzzy -> sharpen -> standardize -> (train only) hflip, each toggleable.
data::Dataset preprocess_pipeline(const data::Dataset& dataset, const FuzzyFilterConfig& cfg,
                                  const StageFlags& flags);

}  // namespace uqc::preprocess

#pragma once

#include <Eigen/Dense>

namespace uqc {

// Grayscale image, intensities in [0,1]. (row, col) indexing.
using Image = Eigen::ArrayXXd;

using Eigen::ArrayXd;
using Eigen::MatrixXd;
using Eigen::VectorXd;
using Eigen::VectorXi;

inline double clamp01(double v) { return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v); }

inline Image clamp01(const Image& img) { return img.min(1.0).max(0.0); }

// Index reflection for border handling (abc|cba style, no edge duplication
// beyond single mirror; matches cv::BORDER_REFLECT_101 for in-range sizes).
inline int reflect_index(int i, int n) {
    if (n == 1) return 0;
    const int period = 2 * (n - 1);
    i = ((i % period) + period) % period;
    return i < n ? i : period - i;
}

inline double image_mean(const Image& img) { return img.mean(); }

inline double image_variance(const Image& img) {
    const double m = img.mean();
    return (img - m).square().mean();
}

}  // namespace uqc

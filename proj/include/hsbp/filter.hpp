#pragma once

#include <cmath>
#include <vector>

#include "hsbp/error.hpp"
#include "hsbp/geometry.hpp"
#include "hsbp/grid.hpp"

namespace hsbp {

// Normalized 1D Gaussian taps truncated at 3 sigma.
inline std::vector<double> gaussian_kernel(double sigma) {
    require(sigma >= 0.0 && std::isfinite(sigma), ErrorKind::InvalidArgument, "gaussian sigma must be >= 0");
    if (sigma == 0.0) return {1.0};
    const int radius = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> k(2 * radius + 1);
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
        sum += k[i + radius];
    }
    for (auto& v : k) v /= sum;
    return k;
}

// Separable Gaussian blur with edge replication; sigma == 0 is the identity.
inline Image gaussian_filter(const Image& image, double sigma) {
    const auto k = gaussian_kernel(sigma);
    if (k.size() == 1) return image;
    const int r = static_cast<int>(k.size() / 2);
    const int w = image.width();
    const int h = image.height();
    Image tmp(w, h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int i = -r; i <= r; ++i) acc += k[i + r] * image(std::clamp(x + i, 0, w - 1), y);
            tmp(x, y) = acc;
        }
    Image out(w, h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int i = -r; i <= r; ++i) acc += k[i + r] * tmp(x, std::clamp(y + i, 0, h - 1));
            out(x, y) = acc;
        }
    return out;
}

inline constexpr double kBoundsGuard = 1e-9;

inline bool in_sampling_bounds(const Image& image, const Vec2& pixel) noexcept {
    return pixel.x() >= -kBoundsGuard && pixel.y() >= -kBoundsGuard &&
           pixel.x() <= image.width() - 1 + kBoundsGuard && pixel.y() <= image.height() - 1 + kBoundsGuard;
}

// Bilinear interpolation at a continuous pixel position (integer = pixel center).
inline double bilinear(const Image& image, const Vec2& pixel) {
    require(!image.empty() && in_sampling_bounds(image, pixel), ErrorKind::OutOfBounds,
            "sample position outside image");
    const double px = std::clamp(pixel.x(), 0.0, static_cast<double>(image.width() - 1));
    const double py = std::clamp(pixel.y(), 0.0, static_cast<double>(image.height() - 1));
    const int x0 = std::min(static_cast<int>(px), std::max(image.width() - 2, 0));
    const int y0 = std::min(static_cast<int>(py), std::max(image.height() - 2, 0));
    const int x1 = std::min(x0 + 1, image.width() - 1);
    const int y1 = std::min(y0 + 1, image.height() - 1);
    const double fx = px - x0;
    const double fy = py - y0;
    const double top = (1.0 - fx) * image(x0, y0) + fx * image(x1, y0);
    const double bottom = (1.0 - fx) * image(x0, y1) + fx * image(x1, y1);
    return (1.0 - fy) * top + fy * bottom;
}

} // namespace hsbp

#pragma once

// Normal-field integration in the Fourier domain (Frankot-Chellappa).
//
// Gradients use the image axes: p = dz/dx (x right), q = dz/dy (y down).
// The integrable projection solves, per frequency,
//
//   Z = (conj(Dx) P + conj(Dy) Q) / (|Dx|^2 + |Dy|^2),   Dx = i wx, Dy = i wy
//
// with the DC term and the Nyquist derivative bins set to zero.

#include <Eigen/Core>
#include <unsupported/Eigen/FFT>

#include <cmath>
#include <complex>
#include <filesystem>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "hsbp/error.hpp"
#include "hsbp/geometry.hpp"
#include "hsbp/grid.hpp"
#include "hsbp/image_io.hpp"

namespace hsbp {

inline constexpr double kNzMin = 0.05;

struct GradientField {
    Image p;
    Image q;
    Mask mask;

    GradientField() = default;
    GradientField(int w, int h) : p(w, h, 0.0), q(w, h, 0.0), mask(w, h, 1) {}

    int width() const noexcept { return p.width(); }
    int height() const noexcept { return p.height(); }
};

enum class Boundary {
    Periodic,
    Mirror, // half-sample symmetric extension to twice the size
};

struct IntegratedSurface {
    Image z;
    Mask mask;
    std::string offset_policy;
};

// Rotates world-frame normals into the frame of `rotation` (rows = axes).
inline Grid<Vec3> rotate_normals(const Grid<Vec3>& normals, const Mat3& rotation) {
    Grid<Vec3> out(normals.width(), normals.height(), Vec3::Zero());
    for (std::size_t i = 0; i < normals.size(); ++i) out[i] = rotation * normals[i];
    return out;
}

// p = -nx/nz, q = -ny/nz; grazing normals (|nz| < nz_min) are masked out.
inline GradientField normals_to_gradients(const Grid<Vec3>& normals, const Mask& mask, double nz_min = kNzMin) {
    require_same_shape(normals, mask, "normals and mask");
    GradientField g(normals.width(), normals.height());
    for (std::size_t i = 0; i < normals.size(); ++i) {
        const Vec3& n = normals[i];
        if (!mask[i] || std::abs(n.z()) < nz_min) {
            g.mask[i] = 0;
            continue;
        }
        g.p[i] = -n.x() / n.z();
        g.q[i] = -n.y() / n.z();
    }
    return g;
}

namespace detail {

using Spectrum = std::vector<std::complex<double>>;

// In-place 2D DFT of a row-major w x h array.
inline void fft2(Spectrum& data, int w, int h, bool inverse) {
    Eigen::FFT<double> fft;
    std::vector<std::complex<double>> in, out;
    in.resize(static_cast<std::size_t>(w));
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) in[x] = data[static_cast<std::size_t>(y) * w + x];
        inverse ? fft.inv(out, in) : fft.fwd(out, in);
        for (int x = 0; x < w; ++x) data[static_cast<std::size_t>(y) * w + x] = out[x];
    }
    in.resize(static_cast<std::size_t>(h));
    for (int x = 0; x < w; ++x) {
        for (int y = 0; y < h; ++y) in[y] = data[static_cast<std::size_t>(y) * w + x];
        inverse ? fft.inv(out, in) : fft.fwd(out, in);
        for (int y = 0; y < h; ++y) data[static_cast<std::size_t>(y) * w + x] = out[y];
    }
}

// Spectral derivative operator i*w for bin k of an n-point transform.
inline double omega(int k, int n) {
    if (2 * k == n) return 0.0;
    const int s = k <= n / 2 ? k : k - n;
    return 2.0 * std::numbers::pi * s / n;
}

inline Spectrum to_spectrum(const Image& img) {
    Spectrum s(img.size());
    for (std::size_t i = 0; i < img.size(); ++i) s[i] = img[i];
    return s;
}

// Half-sample symmetric extension; `odd_x`/`odd_y` flip the sign of mirrored copies.
inline Image extend(const Image& img, bool odd_x, bool odd_y) {
    const int w = img.width(), h = img.height();
    Image out(2 * w, 2 * h, 0.0);
    for (int y = 0; y < 2 * h; ++y)
        for (int x = 0; x < 2 * w; ++x) {
            const bool mx = x >= w, my = y >= h;
            const int sx = mx ? 2 * w - 1 - x : x;
            const int sy = my ? 2 * h - 1 - y : y;
            double v = img(sx, sy);
            if (mx && odd_x) v = -v;
            if (my && odd_y) v = -v;
            out(x, y) = v;
        }
    return out;
}

inline Image crop(const Image& img, int w, int h) {
    Image out(w, h, 0.0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) out(x, y) = img(x, y);
    return out;
}

inline Image integrate_periodic(const Image& p, const Image& q) {
    const int w = p.width(), h = p.height();
    Spectrum P = to_spectrum(p), Q = to_spectrum(q);
    fft2(P, w, h, false);
    fft2(Q, w, h, false);
    Spectrum Z(P.size());
    const std::complex<double> i(0.0, 1.0);
    for (int ky = 0; ky < h; ++ky) {
        const double wy = omega(ky, h);
        for (int kx = 0; kx < w; ++kx) {
            const double wx = omega(kx, w);
            const double denom = wx * wx + wy * wy;
            const std::size_t k = static_cast<std::size_t>(ky) * w + kx;
            Z[k] = denom > 0.0 ? (-i * wx * P[k] - i * wy * Q[k]) / denom : 0.0;
        }
    }
    fft2(Z, w, h, true);
    Image z(w, h, 0.0);
    for (std::size_t k = 0; k < z.size(); ++k) z[k] = Z[k].real();
    return z;
}

inline GradientField differentiate_periodic(const Image& z) {
    const int w = z.width(), h = z.height();
    Spectrum Z = to_spectrum(z);
    fft2(Z, w, h, false);
    Spectrum P(Z.size()), Q(Z.size());
    const std::complex<double> i(0.0, 1.0);
    for (int ky = 0; ky < h; ++ky)
        for (int kx = 0; kx < w; ++kx) {
            const std::size_t k = static_cast<std::size_t>(ky) * w + kx;
            P[k] = i * omega(kx, w) * Z[k];
            Q[k] = i * omega(ky, h) * Z[k];
        }
    fft2(P, w, h, true);
    fft2(Q, w, h, true);
    GradientField g(w, h);
    for (std::size_t k = 0; k < z.size(); ++k) {
        g.p[k] = P[k].real();
        g.q[k] = Q[k].real();
    }
    return g;
}

} // namespace detail

// Integrates a gradient field; masked-out gradients are filled with 0 and the
// additive constant is fixed so that z has zero mean over the mask.
inline IntegratedSurface integrate(const GradientField& g, Boundary boundary = Boundary::Mirror) {
    require(g.width() >= 2 && g.height() >= 2, ErrorKind::DegenerateField, "integration needs at least a 2x2 grid");
    require_same_shape(g.p, g.q, "gradient components");
    require_same_shape(g.p, g.mask, "gradient mask");
    const std::size_t valid = count(g.mask);
    require(valid >= 4, ErrorKind::DegenerateField,
            "gradient mask covers " + std::to_string(valid) + " pixels; at least 4 are needed");

    Image p = g.p, q = g.q;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (g.mask[i]) {
            require(std::isfinite(p[i]) && std::isfinite(q[i]), ErrorKind::NonFinite, "non-finite gradient on the mask");
        } else {
            p[i] = 0.0;
            q[i] = 0.0;
        }
    }

    Image z = boundary == Boundary::Periodic
                  ? detail::integrate_periodic(p, q)
                  : detail::crop(detail::integrate_periodic(detail::extend(p, true, false), detail::extend(q, false, true)),
                                 g.width(), g.height());
    double mean = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i)
        if (g.mask[i]) mean += z[i];
    mean /= static_cast<double>(valid);
    for (auto& v : z) v -= mean;
    return IntegratedSurface{std::move(z), g.mask, "zero mean over mask"};
}

// Spectral gradients of z under the same boundary convention as integrate().
inline GradientField differentiate(const Image& z, Boundary boundary = Boundary::Mirror) {
    if (boundary == Boundary::Periodic) return detail::differentiate_periodic(z);
    const GradientField ext = detail::differentiate_periodic(detail::extend(z, false, false));
    GradientField g(z.width(), z.height());
    g.p = detail::crop(ext.p, z.width(), z.height());
    g.q = detail::crop(ext.q, z.width(), z.height());
    return g;
}

// ---------------------------------------------------------------------------
// Mapping integrated heights to depth units.

struct AffineMap {
    double scale = 1.0;
    double offset = 0.0;
    double operator()(double z) const noexcept { return scale * z + offset; }
};

// 4-connected component labels over `mask` (-1 outside); returns the count.
inline int connected_components(const Mask& mask, Grid<int>& labels) {
    labels = Grid<int>(mask.width(), mask.height(), -1);
    int next = 0;
    std::vector<std::size_t> stack;
    for (std::size_t s = 0; s < mask.size(); ++s) {
        if (!mask[s] || labels[s] >= 0) continue;
        labels[s] = next;
        stack.assign(1, s);
        while (!stack.empty()) {
            const std::size_t p = stack.back();
            stack.pop_back();
            const int x = static_cast<int>(p % mask.width()), y = static_cast<int>(p / mask.width());
            const int nx[4] = {x - 1, x + 1, x, x};
            const int ny[4] = {y, y, y - 1, y + 1};
            for (int k = 0; k < 4; ++k) {
                if (!mask.contains(nx[k], ny[k])) continue;
                const std::size_t n = mask.index(nx[k], ny[k]);
                if (mask[n] && labels[n] < 0) {
                    labels[n] = next;
                    stack.push_back(n);
                }
            }
        }
        ++next;
    }
    return next;
}

// Least-squares affine fit of `surface` to `depth` per connected component of
// `mask`, using only pixels where the surface itself is valid. A component
// with too few samples or a non-positive slope falls back to the slope
// `fallback_scale` with the offset matching the means.
inline IntegratedSurface fit_to_depth(const IntegratedSurface& surface, const Image& depth, const Mask& mask,
                                      double fallback_scale, std::vector<AffineMap>* fits = nullptr) {
    require_same_shape(surface.z, depth, "surface and depth map");
    require_same_shape(surface.z, mask, "surface and mask");
    Grid<int> comp;
    const int n = connected_components(mask, comp);
    struct Sums {
        double n = 0, sz = 0, sd = 0, szz = 0, szd = 0;
        double all_n = 0, all_sz = 0, all_sd = 0;
    };
    std::vector<Sums> sums(static_cast<std::size_t>(n));
    for (std::size_t i = 0; i < mask.size(); ++i) {
        if (comp[i] < 0) continue;
        Sums& s = sums[static_cast<std::size_t>(comp[i])];
        const double z = surface.z[i], d = depth[i];
        s.all_n += 1;
        s.all_sz += z;
        s.all_sd += d;
        if (!surface.mask[i]) continue;
        s.n += 1;
        s.sz += z;
        s.sd += d;
        s.szz += z * z;
        s.szd += z * d;
    }
    std::vector<AffineMap> maps(static_cast<std::size_t>(n));
    for (int c = 0; c < n; ++c) {
        const Sums& s = sums[static_cast<std::size_t>(c)];
        AffineMap m;
        const double var = s.n > 0 ? s.szz - s.sz * s.sz / s.n : 0.0;
        if (s.n >= 3 && var > 1e-12 * std::max(1.0, s.szz)) {
            m.scale = (s.szd - s.sz * s.sd / s.n) / var;
            m.offset = (s.sd - m.scale * s.sz) / s.n;
        } else {
            m.scale = -1.0;
        }
        if (!(m.scale > 0.0)) {
            m.scale = fallback_scale;
            m.offset = (s.all_sd - m.scale * s.all_sz) / s.all_n;
        }
        maps[static_cast<std::size_t>(c)] = m;
    }
    IntegratedSurface out{Image(mask.width(), mask.height(), 0.0), mask, "affine fit to depth per component"};
    for (std::size_t i = 0; i < mask.size(); ++i)
        if (comp[i] >= 0) out.z[i] = maps[static_cast<std::size_t>(comp[i])](surface.z[i]);
    if (fits) *fits = std::move(maps);
    return out;
}

inline double sample_zin(const IntegratedSurface& surface, int x, int y) {
    require(surface.z.contains(x, y), ErrorKind::OutOfBounds, "pixel outside the integrated surface");
    require(surface.mask(x, y) != 0, ErrorKind::Unmasked,
            "pixel (" + std::to_string(x) + ", " + std::to_string(y) + ") has no integrated depth");
    return surface.z(x, y);
}

inline double sample_zin(const IntegratedSurface& surface, int x, int y, const AffineMap& map) {
    return map(sample_zin(surface, x, y));
}

// Height-field mesh over the mask; vertices are back-projected from `station`.
inline void write_obj(const std::filesystem::path& path, const Image& depth, const Mask& mask, const ViewStation& station) {
    require_same_shape(depth, mask, "depth and mask");
    std::ostringstream out;
    out.precision(9);
    Grid<int> vid(depth.width(), depth.height(), 0);
    int next = 1;
    for (int y = 0; y < depth.height(); ++y)
        for (int x = 0; x < depth.width(); ++x) {
            if (!mask(x, y)) continue;
            const Vec3 v = station.backproject(Vec2(x, y), depth(x, y));
            out << "v " << v.x() << ' ' << v.y() << ' ' << v.z() << '\n';
            vid(x, y) = next++;
        }
    for (int y = 0; y + 1 < depth.height(); ++y)
        for (int x = 0; x + 1 < depth.width(); ++x) {
            const int a = vid(x, y), b = vid(x + 1, y), c = vid(x, y + 1), d = vid(x + 1, y + 1);
            if (a && b && c) out << "f " << a << ' ' << c << ' ' << b << '\n';
            if (b && c && d) out << "f " << b << ' ' << c << ' ' << d << '\n';
        }
    detail::write_file(path, out.str());
}

} // namespace hsbp

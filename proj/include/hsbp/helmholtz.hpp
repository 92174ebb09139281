#pragma once

// Helmholtz radiometric constraint: per candidate point, each reciprocal pair
// contributes one row
//
//   w_j = I_ab * v_a / |O_a - P|^2  -  I_ba * v_b / |O_b - P|^2
//
// and the true surface point satisfies W n = 0. Points are scored by the
// singular value ratio sigma2 / sigma3 of W.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "hsbp/error.hpp"
#include "hsbp/geometry.hpp"
#include "hsbp/grid.hpp"
#include "hsbp/hull.hpp"
#include "hsbp/parallel.hpp"
#include "hsbp/scene.hpp"

namespace hsbp {

inline constexpr int kMaxPairs = 32;
inline constexpr double kRankEpsilon = 1e-12; // relative to sigma1
inline constexpr double kRatioMax = 1e6;
inline constexpr double kDataDecay = 0.2 * std::numbers::ln2;
// Floor keeping E_d strictly positive once exp() underflows.
inline constexpr double kDataCostFloor = std::numeric_limits<double>::min();

using ConstraintRows = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor, kMaxPairs, 3>;

struct ConstraintMatrix {
    ConstraintRows rows;
    Vec3 point = Vec3::Zero();
    int valid_rows = 0;
};

struct DepthScore {
    Vec3 sigma = Vec3::Zero(); // descending
    double ratio = 0.0;
    Vec3 normal = Vec3::UnitZ();
    double data_cost = 1.0;
};

// Stations resolved once per scene so per-point assembly does no id lookups.
class HelmholtzRig {
public:
    struct Pair {
        const ViewStation* a;
        const ViewStation* b;
    };

    explicit HelmholtzRig(const SceneConfig& scene) : principal_(&scene.principal()) {
        require(scene.pairs.size() <= static_cast<std::size_t>(kMaxPairs), ErrorKind::InvalidArgument,
                "at most " + std::to_string(kMaxPairs) + " reciprocal pairs are supported");
        for (const auto& p : scene.pairs) pairs_.push_back(Pair{&scene.station(p.station_a), &scene.station(p.station_b)});
    }

    std::span<const Pair> pairs() const noexcept { return pairs_; }
    const ViewStation& principal() const noexcept { return *principal_; }

private:
    const ViewStation* principal_;
    std::vector<Pair> pairs_;
};

// One constraint row from two sampled intensities.
inline Vec3 constraint_row(const Vec3& center_a, const Vec3& center_b, const Vec3& point, double intensity_ab,
                           double intensity_ba) {
    const double ra2 = (center_a - point).squaredNorm();
    const double rb2 = (center_b - point).squaredNorm();
    return intensity_ab * view_vector(center_a, point) / ra2 - intensity_ba * view_vector(center_b, point) / rb2;
}

namespace detail {
inline std::optional<Vec2> try_project(const ViewStation& s, const Vec3& point) {
    const Eigen::Vector3d h = s.projection() * point.homogeneous();
    if (!(s.depth_of(point) > 0.0)) return std::nullopt;
    return Vec2(h.x() / h.z(), h.y() / h.z());
}
} // namespace detail

// `source(pair, side, pixel)` returns the irradiance of the pair's AB or BA
// image at a continuous pixel, or nullopt when unavailable. Pairs whose
// projections fall outside either image are dropped. Never throws on too few
// rows; see assemble_w.
template <class IntensitySource>
ConstraintMatrix assemble_rows(const HelmholtzRig& rig, const Vec3& point, const IntensitySource& source) {
    ConstraintMatrix w;
    w.point = point;
    w.rows.resize(static_cast<Eigen::Index>(rig.pairs().size()), 3);
    int r = 0;
    for (std::size_t j = 0; j < rig.pairs().size(); ++j) {
        const auto& pr = rig.pairs()[j];
        const auto pa = detail::try_project(*pr.a, point);
        const auto pb = detail::try_project(*pr.b, point);
        if (!pa || !pb) continue;
        const std::optional<double> iab = source(j, PairSide::AB, *pa);
        const std::optional<double> iba = source(j, PairSide::BA, *pb);
        if (!iab || !iba) continue;
        if ((pr.a->center() - point).squaredNorm() == 0.0 || (pr.b->center() - point).squaredNorm() == 0.0) continue;
        w.rows.row(r++) = constraint_row(pr.a->center(), pr.b->center(), point, *iab, *iba).transpose();
    }
    w.rows.conservativeResize(r, 3);
    w.valid_rows = r;
    return w;
}

template <class IntensitySource>
ConstraintMatrix assemble_w(const HelmholtzRig& rig, const Vec3& point, const IntensitySource& source) {
    ConstraintMatrix w = assemble_rows(rig, point, source);
    require(w.valid_rows >= 3, ErrorKind::InsufficientConstraints,
            "only " + std::to_string(w.valid_rows) + " reciprocal pairs observe the point; 3 are required");
    return w;
}

inline ConstraintMatrix assemble_w(const SceneConfig& scene, const Vec3& point) {
    return assemble_w(HelmholtzRig(scene), point, ImageIntensitySource(scene));
}

inline double data_cost_from_ratio(double ratio) {
    return std::max(std::exp(-kDataDecay * ratio), kDataCostFloor);
}

// Non-throwing scoring; nullopt when W has fewer than 3 rows or rank < 2.
inline std::optional<DepthScore> try_score_depth(const ConstraintMatrix& w, const Vec3& principal_dir) {
    if (w.valid_rows < 3) return std::nullopt;
    Eigen::JacobiSVD<ConstraintRows> svd(w.rows, Eigen::ComputeFullV);
    const auto s = svd.singularValues();
    if (!(s(0) > 0.0 && s(1) > kRankEpsilon * s(0))) return std::nullopt;
    DepthScore out;
    out.sigma = Vec3(s(0), s(1), s(2));
    out.ratio = std::min(s(1) / std::max(s(2), kRankEpsilon * s(0)), kRatioMax);
    Vec3 n = svd.matrixV().col(2).normalized();
    if (n.dot(principal_dir) < 0.0) n = -n;
    out.normal = n;
    out.data_cost = data_cost_from_ratio(out.ratio);
    return out;
}

inline DepthScore score_depth(const ConstraintMatrix& w, const Vec3& principal_dir) {
    require(w.valid_rows >= 3, ErrorKind::InsufficientConstraints, "scoring needs at least 3 constraint rows");
    const auto s = try_score_depth(w, principal_dir);
    require(s.has_value(), ErrorKind::DegenerateMatrix, "constraint matrix has rank < 2");
    return *s;
}

// ---------------------------------------------------------------------------
// Per-(pixel, label) cache.

struct LabelScore {
    double ratio = 0.0;
    double data_cost = 1.0;
    Vec3 normal = Vec3::UnitZ();
    bool scorable = false;
};

class ScoreCache {
public:
    ScoreCache() = default;
    explicit ScoreCache(const CandidateVolume& cv) : scores_(cv.total_labels()) {}

    LabelScore& at(const CandidateVolume& cv, std::size_t p, std::size_t label) { return scores_[cv.flat(p, label)]; }
    const LabelScore& at(const CandidateVolume& cv, std::size_t p, std::size_t label) const {
        return scores_[cv.flat(p, label)];
    }
    std::span<const LabelScore> all() const noexcept { return scores_; }
    std::size_t size() const noexcept { return scores_.size(); }

private:
    std::vector<LabelScore> scores_;
};

// Scores every candidate. Unscorable labels (fewer than 3 observing pairs or
// rank < 2) get ratio 0, cost 1 and a normal facing the principal camera.
template <class IntensitySource>
ScoreCache compute_scores(const SceneConfig& scene, const CandidateVolume& cv, const IntensitySource& source) {
    scene.require_reconstructible();
    const HelmholtzRig rig(scene);
    const ViewStation& principal = rig.principal();
    ScoreCache cache(cv);
    parallel_for(cv.pixel_count(), [&](std::size_t p) {
        const int x = static_cast<int>(p % cv.width());
        const int y = static_cast<int>(p / cv.width());
        const auto labels = cv.labels(p);
        for (std::size_t l = 0; l < labels.size(); ++l) {
            const Vec3 point = principal.backproject(Vec2(x, y), labels[l]);
            const Vec3 toward = view_vector(principal, point);
            LabelScore& out = cache.at(cv, p, l);
            out.normal = toward;
            const auto s = try_score_depth(assemble_rows(rig, point, source), toward);
            if (!s) continue;
            out.ratio = s->ratio;
            out.data_cost = s->data_cost;
            out.normal = s->normal;
            out.scorable = true;
        }
    });
    return cache;
}

inline ScoreCache compute_scores(const SceneConfig& scene, const CandidateVolume& cv) {
    return compute_scores(scene, cv, ImageIntensitySource(scene));
}

// ---------------------------------------------------------------------------
// Reconstruction output.

struct DepthNormalMap {
    Image depth;
    Grid<Vec3> normals;
    Grid<int> label;
    Mask valid;

    DepthNormalMap() = default;
    DepthNormalMap(int w, int h) : depth(w, h, 0.0), normals(w, h, Vec3::Zero()), label(w, h, -1), valid(w, h, 0) {}

    int width() const noexcept { return depth.width(); }
    int height() const noexcept { return depth.height(); }
};

// Fills a map from a per-pixel label choice (-1 = none) using cached normals.
inline DepthNormalMap map_from_labels(const CandidateVolume& cv, const ScoreCache& cache, const Grid<int>& chosen) {
    DepthNormalMap m(cv.width(), cv.height());
    for (std::size_t p = 0; p < cv.pixel_count(); ++p) {
        const int l = chosen[p];
        if (l < 0) continue;
        m.label[p] = l;
        m.depth[p] = cv.labels(p)[static_cast<std::size_t>(l)];
        m.normals[p] = cache.at(cv, p, static_cast<std::size_t>(l)).normal;
        m.valid[p] = 1;
    }
    return m;
}

namespace detail {

// Ratio that pixel q contributes at depth d: its nearest label's ratio when d
// lies within q's label span (padded by half its mean label gap), else 0.
inline double ratio_at_depth(const CandidateVolume& cv, const ScoreCache& cache, std::size_t q, double d,
                             double fallback_gap) {
    const auto labels = cv.labels(q);
    if (labels.empty()) return 0.0;
    const double gap = labels.size() > 1 ? (labels.back() - labels.front()) / (labels.size() - 1) : fallback_gap;
    if (d < labels.front() - 0.5 * gap || d > labels.back() + 0.5 * gap) return 0.0;
    auto it = std::lower_bound(labels.begin(), labels.end(), d);
    std::size_t idx = static_cast<std::size_t>(it - labels.begin());
    if (idx == labels.size()) idx = labels.size() - 1;
    else if (idx > 0 && d - labels[idx - 1] <= labels[idx] - d) idx -= 1;
    return cache.at(cv, q, idx).ratio;
}

} // namespace detail

// Maximum-likelihood depth: per pixel, the label maximizing the ratio summed
// over a window x window neighborhood; ties go to the nearest depth.
inline DepthNormalMap ml_depth(const CandidateVolume& cv, const ScoreCache& cache, int window) {
    require(window >= 1 && window % 2 == 1, ErrorKind::InvalidArgument, "ML window must be odd and >= 1");
    const int r = window / 2;
    Grid<int> chosen(cv.width(), cv.height(), -1);
    parallel_for(cv.pixel_count(), [&](std::size_t p) {
        const auto labels = cv.labels(p);
        if (labels.empty()) return;
        const int x = static_cast<int>(p % cv.width());
        const int y = static_cast<int>(p / cv.width());
        const double own_gap = labels.size() > 1 ? (labels.back() - labels.front()) / (labels.size() - 1) : 0.0;
        double best = -1.0;
        int best_label = 0;
        for (std::size_t l = 0; l < labels.size(); ++l) {
            double sum = 0.0;
            for (int dy = -r; dy <= r; ++dy)
                for (int dx = -r; dx <= r; ++dx) {
                    const int qx = x + dx, qy = y + dy;
                    if (qx < 0 || qy < 0 || qx >= cv.width() || qy >= cv.height()) continue;
                    const std::size_t q = cv.pixel(qx, qy);
                    sum += q == p ? cache.at(cv, p, l).ratio : detail::ratio_at_depth(cv, cache, q, labels[l], own_gap);
                }
            if (sum > best) {
                best = sum;
                best_label = static_cast<int>(l);
            }
        }
        chosen[p] = best_label;
    });
    return map_from_labels(cv, cache, chosen);
}

} // namespace hsbp

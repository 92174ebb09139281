#include <gtest/gtest.h>

#include "fixtures.hpp"

using namespace hsbp;

namespace {

ConstraintMatrix matrix(std::initializer_list<Vec3> rows) {
    ConstraintMatrix w;
    w.rows.resize(static_cast<Eigen::Index>(rows.size()), 3);
    int r = 0;
    for (const auto& row : rows) w.rows.row(r++) = row.transpose();
    w.valid_rows = r;
    return w;
}

SceneConfig prepared(const SynthSpec& spec) {
    SceneConfig scene = synthesize(spec).config;
    scene.prefilter();
    return scene;
}

// Labels on a fixed depth lattice covering [lo, hi] for every masked pixel.
CandidateVolume lattice(const Mask& mask, double lo, double hi, double step) {
    std::vector<std::vector<double>> lists(mask.size());
    for (std::size_t p = 0; p < mask.size(); ++p)
        if (mask[p])
            for (double d = lo; d <= hi + 1e-12; d += step) lists[p].push_back(d);
    return CandidateVolume::from_lists(mask.width(), mask.height(), lists);
}

} // namespace

TEST(AssembleW, ZeroIntensitiesGiveZeroMatrix) {
    const SynthSpec spec = fixtures::sphere_rig(32, 100.0);
    SceneConfig scene = prepared(spec);
    const auto zero = [](std::size_t, PairSide, const Vec2&) { return std::optional<double>(0.0); };
    const ConstraintMatrix w = assemble_w(HelmholtzRig(scene), Vec3(0, 0, -1), zero);
    EXPECT_EQ(w.valid_rows, 3);
    EXPECT_EQ(w.rows.norm(), 0.0);
}

TEST(AssembleW, SymmetricStationsRow) {
    const Vec3 row = constraint_row(Vec3(1, 0, 0), Vec3(-1, 0, 0), Vec3::Zero(), 1.0, 1.0);
    EXPECT_NEAR((row - Vec3(2, 0, 0)).norm(), 0.0, 1e-15);
}

TEST(AssembleW, TrueNormalSpansNullSpace) {
    const SynthSpec spec = fixtures::sphere_rig(64, 200.0);
    const SynthOutput data = synthesize(spec);
    const AnalyticIntensitySource source(spec.scene, data.config);
    const HelmholtzRig rig(data.config);
    const ViewStation& a = data.config.principal();
    int checked = 0;
    for (int y = 4; y < 64; y += 5)
        for (int x = 4; x < 64; x += 5) {
            if (!data.truth.mask(x, y)) continue;
            const Vec3 p = a.backproject(Vec2(x, y), data.truth.depth(x, y));
            const Vec3 nrm = data.truth.normals(x, y);
            // Near the limb a pair camera sees a different, occluding point.
            bool seen = true;
            for (const auto& pr : data.config.pairs)
                for (const auto& id : {pr.station_a, pr.station_b})
                    seen = seen && nrm.dot((data.config.station(id).center() - p).normalized()) > 0.05;
            if (!seen) continue;
            const ConstraintMatrix w = assemble_rows(rig, p, source);
            if (w.valid_rows < 3 || w.rows.norm() == 0.0) continue;
            EXPECT_LT((w.rows * nrm).norm() / w.rows.norm(), 1e-6) << x << "," << y;
            ++checked;
        }
    EXPECT_GT(checked, 20);
}

TEST(AssembleW, TooFewPairsThrows) {
    const SynthSpec spec = fixtures::sphere_rig(32, 100.0);
    SceneConfig scene = prepared(spec);
    // A point behind every camera observes nothing.
    try {
        assemble_w(scene, Vec3(0, 0, -20));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::InsufficientConstraints);
    }
}

TEST(ScoreDepth, ExactRankTwo) {
    const DepthScore s = score_depth(matrix({Vec3(1, 0, 0), Vec3(0, 1, 0), Vec3(0, 0, 0)}), Vec3(0, 0, 1));
    EXPECT_NEAR(s.sigma(0), 1.0, 1e-12);
    EXPECT_NEAR(s.sigma(1), 1.0, 1e-12);
    EXPECT_NEAR(s.sigma(2), 0.0, 1e-12);
    EXPECT_NEAR(s.normal.dot(Vec3(0, 0, 1)), 1.0, 1e-12);
    EXPECT_EQ(s.ratio, kRatioMax);
}

TEST(ScoreDepth, DiagonalRatio) {
    const DepthScore s = score_depth(matrix({Vec3(3, 0, 0), Vec3(0, 2, 0), Vec3(0, 0, 1)}), Vec3(0, 0, -1));
    EXPECT_NEAR(s.ratio, 2.0, 1e-12);
    EXPECT_NEAR(s.data_cost, std::pow(2.0, -0.4), 1e-12);
    EXPECT_NEAR(s.data_cost, 0.7579, 1e-4);
    EXPECT_NEAR(s.normal.z(), -1.0, 1e-12); // oriented toward the given direction
}

TEST(ScoreDepth, RatioFiveCostsOneHalf) { EXPECT_NEAR(data_cost_from_ratio(5.0), 0.5, 1e-15); }

TEST(ScoreDepth, DataCostMonotoneInUnitInterval) {
    double prev = 1.0 + 1e-12;
    for (double r = 0.0; r <= kRatioMax; r = r * 1.7 + 0.5) {
        const double c = data_cost_from_ratio(r);
        EXPECT_GT(c, 0.0);
        EXPECT_LE(c, 1.0);
        EXPECT_LE(c, prev);
        prev = c;
    }
}

TEST(ScoreDepth, RankDeficientAndShortMatrices) {
    try {
        score_depth(matrix({Vec3(1, 0, 0), Vec3(2, 0, 0), Vec3(-1, 0, 0)}), Vec3::UnitZ());
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::DegenerateMatrix);
    }
    try {
        score_depth(matrix({Vec3(1, 0, 0), Vec3(0, 1, 0)}), Vec3::UnitZ());
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::InsufficientConstraints);
    }
}

TEST(ScoreDepth, UnitNormalAndSortedSigma) {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> n(0.0, 1.0);
    for (int t = 0; t < 50; ++t) {
        const ConstraintMatrix w = matrix({Vec3(n(rng), n(rng), n(rng)), Vec3(n(rng), n(rng), n(rng)),
                                           Vec3(n(rng), n(rng), n(rng)), Vec3(n(rng), n(rng), n(rng))});
        const Vec3 dir = Vec3(n(rng), n(rng), n(rng)).normalized();
        const DepthScore s = score_depth(w, dir);
        EXPECT_NEAR(s.normal.norm(), 1.0, 1e-9);
        EXPECT_GT(s.normal.dot(dir), 0.0);
        EXPECT_GE(s.sigma(0), s.sigma(1));
        EXPECT_GE(s.sigma(1), s.sigma(2));
        EXPECT_GE(s.sigma(2), 0.0);
    }
}

TEST(MlDepth, WindowOneIsPointwiseArgmax) {
    std::vector<std::vector<double>> lists(9, {1.0, 1.1, 1.2, 1.3});
    const CandidateVolume cv = CandidateVolume::from_lists(3, 3, lists);
    ScoreCache cache(cv);
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.0, 10.0);
    for (std::size_t p = 0; p < 9; ++p)
        for (std::size_t l = 0; l < 4; ++l) cache.at(cv, p, l).ratio = u(rng);
    const DepthNormalMap m = ml_depth(cv, cache, 1);
    for (std::size_t p = 0; p < 9; ++p) {
        std::size_t best = 0;
        for (std::size_t l = 1; l < 4; ++l)
            if (cache.at(cv, p, l).ratio > cache.at(cv, p, best).ratio) best = l;
        EXPECT_EQ(m.label[p], static_cast<int>(best));
        EXPECT_EQ(m.depth[p], lists[p][best]);
    }
}

TEST(MlDepth, PicksLargerSummedRatio) {
    std::vector<std::vector<double>> lists(9, {2.0, 2.5});
    const CandidateVolume cv = CandidateVolume::from_lists(3, 3, lists);
    ScoreCache cache(cv);
    for (std::size_t p = 0; p < 9; ++p) {
        cache.at(cv, p, 0).ratio = 10.0;
        cache.at(cv, p, 1).ratio = 2.0;
    }
    const DepthNormalMap m = ml_depth(cv, cache, 3);
    for (std::size_t p = 0; p < 9; ++p) EXPECT_EQ(m.label[p], 0);
    EXPECT_THROW(ml_depth(cv, cache, 2), Error);
}

TEST(MlDepth, FrontoParallelPlaneNearestLabel) {
    const auto stations = fixtures::cone_stations(64, 64, 200.0);
    const Vec3 n = stations[0].center().normalized();
    SynthSpec spec = fixtures::rig(Plane{Vec3::Zero(), n}, Lambertian{0.8}, 64, 200.0);
    spec.noise_sigma = 0.0;
    const SynthOutput data = synthesize(spec);
    SceneConfig scene = data.config;
    scene.prefilter();
    Mask mask = data.truth.mask;
    // Stay clear of every image border, where the prefilter sees padding.
    for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 64; ++x) {
            if (!mask(x, y)) continue;
            const Vec3 p = scene.principal().backproject(Vec2(x, y), data.truth.depth(x, y));
            for (const auto& s : stations) {
                const Vec2 q = s.project(p);
                if (q.x() < 4 || q.y() < 4 || q.x() > 59 || q.y() > 59) mask(x, y) = 0;
            }
        }
    const double step = 0.02;
    const CandidateVolume cv = lattice(mask, 7.0, 9.0, step);
    const ScoreCache cache = compute_scores(scene, cv);
    const DepthNormalMap m = ml_depth(cv, cache, 3);
    std::size_t good = 0, total = 0;
    for (std::size_t p = 0; p < mask.size(); ++p) {
        if (!mask[p]) continue;
        ++total;
        const auto labels = cv.labels(p);
        std::size_t nearest = 0;
        for (std::size_t l = 1; l < labels.size(); ++l)
            if (std::abs(labels[l] - data.truth.depth[p]) < std::abs(labels[nearest] - data.truth.depth[p])) nearest = l;
        good += m.label[p] == static_cast<int>(nearest);
    }
    ASSERT_GT(total, 2000u);
    EXPECT_GE(static_cast<double>(good) / static_cast<double>(total), 0.99);
}

TEST(MlDepth, IntensityScaleInvariance) {
    const SynthSpec spec = fixtures::sphere_rig(48, 150.0);
    SceneConfig scene = prepared(spec);
    const VoxelGrid hull = carve_scene(scene, 32, 0.1);
    const CandidateVolume cv = extract_candidates(hull, scene.principal(), 48, 48, 24);
    const ScoreCache base = compute_scores(scene, cv);
    SceneConfig scaled = scene;
    for (auto& p : scaled.pairs) {
        for (double& v : p.image_ab) v *= 3.7;
        for (double& v : p.image_ba) v *= 3.7;
    }
    scaled.prefilter();
    const ScoreCache other = compute_scores(scaled, cv);
    for (std::size_t i = 0; i < base.size(); ++i) {
        const auto& a = base.all()[i];
        const auto& b = other.all()[i];
        ASSERT_EQ(a.scorable, b.scorable);
        if (!a.scorable) continue;
        EXPECT_NEAR(a.ratio, b.ratio, 1e-6 * std::max(1.0, a.ratio));
        EXPECT_NEAR(std::abs(a.normal.dot(b.normal)), 1.0, 1e-9);
    }
    EXPECT_EQ(ml_depth(cv, base, 3).label, ml_depth(cv, other, 3).label);
}

TEST(MlDepth, UnmaskedPixelsInvalid) {
    std::vector<std::vector<double>> lists(4);
    lists[1] = {1.0};
    const CandidateVolume cv = CandidateVolume::from_lists(2, 2, lists);
    const DepthNormalMap m = ml_depth(cv, ScoreCache(cv), 3);
    EXPECT_EQ(count(m.valid), 1u);
    EXPECT_TRUE(m.valid[1]);
}

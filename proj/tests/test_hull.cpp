#include <gtest/gtest.h>

#include "fixtures.hpp"

using namespace hsbp;

namespace {

std::vector<Silhouette> orthogonal_sphere_silhouettes(int size, double focal) {
    const AnalyticScene scene{Sphere{Vec3::Zero(), 1.0}, Lambertian{0.8}, 150.0};
    const Vec3 pos[] = {Vec3(8, 0, 0), Vec3(0, 8, 0), Vec3(0, 0, -8)};
    const Vec3 up[] = {Vec3(0, 1, 0), Vec3(0, 0, 1), Vec3(0, 1, 0)};
    std::vector<Silhouette> out;
    for (int k = 0; k < 3; ++k) {
        const auto st = ViewStation::look_at("s" + std::to_string(k), pos[k], Vec3::Zero(), up[k], focal, size, size);
        const Image img = render_image(scene, st, st.center(), size, size);
        out.push_back(Silhouette{st, binarize(img, 0.1 * max_value(img))});
    }
    return out;
}

} // namespace

TEST(Binarize, AllZeroImage) {
    const Mask m = binarize(Image(5, 4, 0.0), 0.1);
    EXPECT_EQ(count(m), 0u);
}

TEST(Binarize, DiskMask) {
    Image img(21, 21, 0.0);
    Mask disk(21, 21, 0);
    for (int y = 0; y < 21; ++y)
        for (int x = 0; x < 21; ++x)
            if ((x - 10) * (x - 10) + (y - 10) * (y - 10) <= 49) img(x, y) = 1.0, disk(x, y) = 1;
    EXPECT_EQ(binarize(img, 0.5), disk);
}

TEST(Binarize, RampColumns) {
    Image ramp(11, 3);
    for (int y = 0; y < 3; ++y)
        for (int x = 0; x < 11; ++x) ramp(x, y) = x / 10.0;
    const Mask m = binarize(ramp, 0.45);
    // Values 0.5 .. 1.0 sit in 0-based columns 5 .. 10.
    for (int y = 0; y < 3; ++y)
        for (int x = 0; x < 11; ++x) EXPECT_EQ(m(x, y) != 0, x >= 5) << x;
}

TEST(Carve, FullFrameForegroundKeepsEverything) {
    const auto stations = fixtures::cone_stations(64, 64, 200.0);
    const VoxelGrid g = VoxelGrid::covering(Box{Vec3::Constant(-0.5), Vec3::Constant(0.5)}, 10);
    std::vector<Silhouette> s;
    for (const auto& st : stations) s.push_back({st, Mask(64, 64, 1)});
    EXPECT_EQ(carve(g, s), g);
}

TEST(Carve, AllBackgroundIsEmptyHull) {
    const auto st = fixtures::cone_stations(64, 64, 200.0)[0];
    const VoxelGrid g = VoxelGrid::covering(Box{Vec3::Constant(-0.5), Vec3::Constant(0.5)}, 10);
    const std::vector<Silhouette> s{{st, Mask(64, 64, 0)}};
    try {
        carve(g, s);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::EmptyHull);
    }
}

TEST(Carve, SphereFromThreeOrthogonalViews) {
    const auto sil = orthogonal_sphere_silhouettes(128, 400.0);
    const double h = 1.0 / 20.0;
    const VoxelGrid g(Vec3::Constant(-1.2), h, VoxelDims{48, 48, 48});
    const VoxelGrid hull = carve(g, sil);
    const double v_sphere = 4.0 / 3.0 * std::numbers::pi;
    EXPECT_GE(hull.occupied_volume(), v_sphere);
    EXPECT_LE(hull.occupied_volume(), 1.5 * v_sphere);
}

TEST(Carve, MonotoneAndIdempotent) {
    const auto sil = orthogonal_sphere_silhouettes(64, 200.0);
    const VoxelGrid g(Vec3::Constant(-1.2), 0.1, VoxelDims{24, 24, 24});
    const std::vector<Silhouette> two(sil.begin(), sil.begin() + 2);
    const VoxelGrid a = carve(g, two);
    const VoxelGrid b = carve(g, sil);
    EXPECT_LE(b.occupied_count(), a.occupied_count());
    for (std::size_t i = 0; i < a.occupancy().size(); ++i)
        if (b.occupancy()[i]) EXPECT_TRUE(a.occupancy()[i]);
    EXPECT_EQ(carve(b, sil), b);
}

TEST(Carve, OutOfViewPolicies) {
    // The wide view sees the whole grid, the narrow one only its middle.
    const auto wide = ViewStation::look_at("w", Vec3(0, 0, -10), Vec3::Zero(), Vec3(0, 1, 0), 10.0, 16, 16);
    const auto narrow = ViewStation::look_at("n", Vec3(0, 0, -3), Vec3::Zero(), Vec3(0, 1, 0), 20.0, 16, 16);
    const VoxelGrid g = VoxelGrid::covering(Box{Vec3(-2, -2, -1), Vec3(2, 2, 1)}, 16);
    const std::vector<Silhouette> s{{wide, Mask(16, 16, 1)}, {narrow, Mask(16, 16, 1)}};
    const VoxelGrid bg = carve(g, s, OutOfView::Background);
    const VoxelGrid ig = carve(g, s, OutOfView::Ignore);
    EXPECT_LT(bg.occupied_count(), g.occupied_count());
    EXPECT_EQ(ig, g);
}

TEST(Carve, HullContainsTrueSurface) {
    SynthSpec spec = fixtures::sphere_rig(64, 200.0);
    const SynthOutput data = synthesize(spec);
    SceneConfig scene = data.config;
    scene.prefilter();
    const VoxelGrid hull = carve_scene(scene, 48, 0.1);
    const ViewStation& a = scene.principal();
    const double h = hull.spacing();
    int checked = 0;
    for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 64; ++x) {
            if (!data.truth.mask(x, y)) continue;
            const Vec3 p = a.backproject(Vec2(x, y), data.truth.depth(x, y));
            const Vec3 rel = (p - hull.origin()) / h;
            bool near = false;
            for (int dk = -1; dk <= 1 && !near; ++dk)
                for (int dj = -1; dj <= 1 && !near; ++dj)
                    for (int di = -1; di <= 1 && !near; ++di) {
                        const int i = static_cast<int>(std::floor(rel.x())) + di;
                        const int j = static_cast<int>(std::floor(rel.y())) + dj;
                        const int k = static_cast<int>(std::floor(rel.z())) + dk;
                        if (i < 0 || j < 0 || k < 0 || i >= hull.dims().nx || j >= hull.dims().ny || k >= hull.dims().nz)
                            continue;
                        near = hull.occupied(i, j, k);
                    }
            EXPECT_TRUE(near) << x << "," << y;
            ++checked;
        }
    EXPECT_GT(checked, 500);
}

TEST(Candidates, SingleVoxelOnAxis) {
    const auto st = ViewStation::look_at("p", Vec3(0, 0, -5), Vec3::Zero(), Vec3(0, 1, 0), 100.0, 63, 63);
    VoxelGrid g(Vec3::Constant(-0.05), 0.1, VoxelDims{1, 1, 1});
    const CandidateVolume cv = extract_candidates(g, st, 63, 63);
    ASSERT_EQ(cv.label_count(cv.pixel(31, 31)), 1u);
    EXPECT_NEAR(cv.labels(31, 31)[0], 4.95, 1e-9); // entry face of the voxel
    EXPECT_LE(std::abs(cv.labels(31, 31)[0] - 5.0), 0.05 + 1e-12);
}

TEST(Candidates, SolidSlab) {
    const auto st = ViewStation::look_at("p", Vec3::Zero(), Vec3(0, 0, 1), Vec3(0, 1, 0), 50.0, 21, 21);
    const VoxelGrid g(Vec3(-1, -1, 2), 0.1, VoxelDims{20, 20, 10});
    const CandidateVolume cv = extract_candidates(g, st, 21, 21);
    const auto center = cv.labels(10, 10);
    ASSERT_EQ(center.size(), 10u);
    for (std::size_t l = 0; l < 10; ++l) EXPECT_NEAR(center[l], 2.0 + 0.1 * l, 1e-9);
    for (int y = 2; y < 19; ++y)
        for (int x = 2; x < 19; ++x) {
            const auto l = cv.labels(x, y);
            EXPECT_GE(l.size(), 10u);
            EXPECT_LE(l.size(), 14u);
            for (std::size_t i = 1; i < l.size(); ++i) EXPECT_GT(l[i], l[i - 1]);
        }
}

TEST(Candidates, EmptyGridHasNoMask) {
    const auto st = ViewStation::look_at("p", Vec3::Zero(), Vec3(0, 0, 1), Vec3(0, 1, 0), 50.0, 9, 9);
    const VoxelGrid g(Vec3(-1, -1, 2), 0.1, VoxelDims{20, 20, 10}, false);
    EXPECT_EQ(count(extract_candidates(g, st, 9, 9).mask()), 0u);
}

TEST(Candidates, MaskMatchesNonEmptyLabels) {
    SynthSpec spec = fixtures::sphere_rig(48, 150.0);
    SceneConfig scene = synthesize(spec).config;
    scene.prefilter();
    const VoxelGrid hull = carve_scene(scene, 32, 0.1);
    const CandidateVolume cv = extract_candidates(hull, scene.principal(), 48, 48, 16);
    std::size_t masked = 0;
    for (std::size_t p = 0; p < cv.pixel_count(); ++p) {
        EXPECT_EQ(cv.mask()[p] != 0, cv.label_count(p) > 0);
        EXPECT_LE(cv.label_count(p), 16u);
        masked += cv.masked(p);
    }
    EXPECT_GT(masked, 100u);
}

TEST(Candidates, SubsampleKeepsEndsAndOrder) {
    std::vector<double> v;
    for (int i = 0; i < 100; ++i) v.push_back(i * 0.5);
    const auto s = detail::subsample(v, 64);
    ASSERT_EQ(s.size(), 64u);
    EXPECT_EQ(s.front(), 0.0);
    EXPECT_EQ(s.back(), 49.5);
    for (std::size_t i = 1; i < s.size(); ++i) EXPECT_GT(s[i], s[i - 1]);
    EXPECT_EQ(detail::subsample(v, 0), v);
}

TEST(HullIo, RleRoundTripAndPly) {
    const auto dir = fixtures::temp_dir("hull");
    VoxelGrid g(Vec3(0.5, -1, 2), 0.25, VoxelDims{5, 4, 3}, false);
    g.set(0, 0, 0, true);
    g.set(4, 3, 2, true);
    g.set(2, 1, 1, true);
    g.set(3, 1, 1, true);
    write_hull(dir / "h.json", g);
    EXPECT_EQ(read_hull(dir / "h.json"), g);
    write_hull_ply(dir / "h.ply", g);
    const std::string ply = detail::read_file(dir / "h.ply");
    EXPECT_NE(ply.find("element vertex 4"), std::string::npos);
}

TEST(CandidateVolume, RejectsUnorderedLabels) {
    EXPECT_THROW(CandidateVolume::from_lists(1, 1, {{2.0, 1.0}}), Error);
    EXPECT_THROW(CandidateVolume::from_lists(1, 1, {{1.0, 1.0}}), Error);
}

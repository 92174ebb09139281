#pragma once

#include <cmath>
#include <filesystem>
#include <random>
#include <string>

#include "hsbp/hsbp.hpp"

namespace fixtures {

using namespace hsbp;

// Three stations around -z looking at the origin. Distances and tilts differ
// so no mirror plane maps the rig onto itself; a symmetric rig leaves W rank 2
// at every depth on the symmetry plane.
inline std::vector<ViewStation> cone_stations(int width, int height, double focal) {
    struct Placement {
        const char* id;
        double azimuth, tilt, distance;
    };
    const Placement placements[] = {{"A", 90.0, 15.0, 8.0}, {"B", 210.0, 12.0, 8.6}, {"C", 330.0, 18.0, 7.5}};
    std::vector<ViewStation> out;
    for (const auto& pl : placements) {
        const double phi = pl.azimuth * std::numbers::pi / 180.0, tilt = pl.tilt * std::numbers::pi / 180.0;
        const Vec3 pos = pl.distance * Vec3(std::sin(tilt) * std::cos(phi), std::sin(tilt) * std::sin(phi), -std::cos(tilt));
        out.push_back(ViewStation::look_at(pl.id, pos, Vec3::Zero(), Vec3(0, 1, 0), focal, width, height));
    }
    return out;
}

inline SynthSpec rig(Surface surface, Brdf brdf, int size = 64, double focal = 200.0) {
    SynthSpec s;
    s.scene.surface = std::move(surface);
    s.scene.brdf = brdf;
    s.scene.light_power = 150.0;
    s.width = s.height = size;
    s.stations = cone_stations(size, size, focal);
    s.pairs = {{"A", "B"}, {"B", "C"}, {"C", "A"}};
    s.principal = "A";
    s.silhouette_stations = {"A", "B", "C"};
    s.gaussian_sigma = 1.0;
    return s;
}

inline SynthSpec sphere_rig(int size = 64, double focal = 200.0, Brdf brdf = Lambertian{0.8}) {
    SynthSpec s = rig(Sphere{Vec3::Zero(), 1.0}, brdf, size, focal);
    s.volume = Box{Vec3::Constant(-1.25), Vec3::Constant(1.25)};
    const Vec3 side[] = {Vec3(8, 0, 0), Vec3(0, 8, 0), Vec3(0, 0, 8)};
    const Vec3 up[] = {Vec3(0, 1, 0), Vec3(0, 0, 1), Vec3(0, 1, 0)};
    const char* ids[] = {"X", "Y", "Z"};
    for (int k = 0; k < 3; ++k) {
        s.stations.push_back(ViewStation::look_at(ids[k], side[k], Vec3::Zero(), up[k], focal, size, size));
        s.silhouette_stations.push_back(ids[k]);
    }
    return s;
}

// Gaussian bumps on [-1, 1]^2 protruding toward the cameras.
inline HeightField bumpy_field(int nodes = 41) {
    Image h(nodes, nodes, 0.0);
    struct Bump {
        double x, y, a, s;
    };
    const Bump bumps[] = {{0.35, 0.25, -0.3, 0.25}, {-0.4, -0.3, -0.25, 0.3}, {-0.25, 0.5, -0.15, 0.18}, {0.3, -0.45, 0.12, 0.2}};
    for (int j = 0; j < nodes; ++j)
        for (int i = 0; i < nodes; ++i) {
            const double x = -1.0 + 2.0 * i / (nodes - 1), y = -1.0 + 2.0 * j / (nodes - 1);
            for (const auto& b : bumps)
                h(i, j) += b.a * std::exp(-0.5 * ((x - b.x) * (x - b.x) + (y - b.y) * (y - b.y)) / (b.s * b.s));
        }
    return HeightField(std::move(h), -1.0, 1.0, -1.0, 1.0);
}

inline std::filesystem::path temp_dir(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / ("hsbp_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

} // namespace fixtures

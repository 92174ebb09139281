#pragma once

// Analytic scenes rendered into reciprocal image pairs with exact irradiance:
//
//   I_ab(pixel) = light_power * f_r(v_b, v_a) * (n . v_b) / |O_b - P|^2
//
// at the first intersection P of the pixel ray from station a (camera at a,
// light at b). No interreflection and no cast shadows.

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "hsbp/error.hpp"
#include "hsbp/geometry.hpp"
#include "hsbp/grid.hpp"
#include "hsbp/image_io.hpp"
#include "hsbp/parallel.hpp"
#include "hsbp/scene.hpp"

namespace hsbp {

struct Sphere {
    Vec3 center = Vec3::Zero();
    double radius = 1.0;
};

struct Plane {
    Vec3 point = Vec3::Zero();
    Vec3 normal = -Vec3::UnitZ();
};

// z = h(x, y) over [x0, x1] x [y0, y1], Catmull-Rom interpolated between
// nodes; the surface faces -z (n ~ (h_x, h_y, -1)).
class HeightField {
public:
    HeightField() = default;
    HeightField(Image heights, double x0, double x1, double y0, double y1)
        : h_(std::move(heights)), x0_(x0), x1_(x1), y0_(y0), y1_(y1) {
        require(h_.width() >= 2 && h_.height() >= 2, ErrorKind::InvalidArgument, "height field needs at least 2x2 nodes");
        require(x1 > x0 && y1 > y0, ErrorKind::InvalidArgument, "height field extent must be positive");
        dx_ = (x1_ - x0_) / (h_.width() - 1);
        dy_ = (y1_ - y0_) / (h_.height() - 1);
        zmin_ = *std::min_element(h_.begin(), h_.end());
        zmax_ = *std::max_element(h_.begin(), h_.end());
        // Catmull-Rom overshoot stays within half the node range.
        const double pad = 0.5 * (zmax_ - zmin_) + 1e-9;
        zmin_ -= pad;
        zmax_ += pad;
    }

    const Image& heights() const noexcept { return h_; }
    double x0() const noexcept { return x0_; }
    double x1() const noexcept { return x1_; }
    double y0() const noexcept { return y0_; }
    double y1() const noexcept { return y1_; }
    double zmin() const noexcept { return zmin_; }
    double zmax() const noexcept { return zmax_; }
    double spacing() const noexcept { return std::min(dx_, dy_); }

    bool inside(double x, double y) const noexcept { return x >= x0_ && x <= x1_ && y >= y0_ && y <= y1_; }

    // Height and its gradient (h, h_x, h_y).
    Vec3 eval(double x, double y) const noexcept {
        const double u = std::clamp((x - x0_) / dx_, 0.0, static_cast<double>(h_.width() - 1));
        const double v = std::clamp((y - y0_) / dy_, 0.0, static_cast<double>(h_.height() - 1));
        const int i = std::min(static_cast<int>(u), h_.width() - 2);
        const int j = std::min(static_cast<int>(v), h_.height() - 2);
        const auto [wx, dwx] = weights(u - i);
        const auto [wy, dwy] = weights(v - j);
        double h = 0.0, hx = 0.0, hy = 0.0;
        for (int b = 0; b < 4; ++b) {
            const int yy = std::clamp(j - 1 + b, 0, h_.height() - 1);
            for (int a = 0; a < 4; ++a) {
                const int xx = std::clamp(i - 1 + a, 0, h_.width() - 1);
                const double node = h_(xx, yy);
                h += wx[a] * wy[b] * node;
                hx += dwx[a] * wy[b] * node;
                hy += wx[a] * dwy[b] * node;
            }
        }
        return {h, hx / dx_, hy / dy_};
    }

    Vec3 normal(double x, double y) const noexcept {
        const Vec3 e = eval(x, y);
        return Vec3(e(1), e(2), -1.0).normalized();
    }

private:
    using W = std::array<double, 4>;
    static std::pair<W, W> weights(double t) noexcept {
        const double t2 = t * t, t3 = t2 * t;
        return {W{0.5 * (-t + 2 * t2 - t3), 0.5 * (2 - 5 * t2 + 3 * t3), 0.5 * (t + 4 * t2 - 3 * t3), 0.5 * (-t2 + t3)},
                W{0.5 * (-1 + 4 * t - 3 * t2), 0.5 * (-10 * t + 9 * t2), 0.5 * (1 + 8 * t - 9 * t2), 0.5 * (-2 * t + 3 * t2)}};
    }

    Image h_;
    double x0_ = 0, x1_ = 1, y0_ = 0, y1_ = 1, dx_ = 1, dy_ = 1;
    double zmin_ = 0, zmax_ = 0;
};

using Surface = std::variant<Sphere, Plane, HeightField>;

struct Lambertian {
    double albedo = 0.8;
};

// Reciprocal Phong: the mirror lobe (r(i) . e)^n is symmetric in i and e.
struct Phong {
    double kd = 0.5;
    double ks = 0.3;
    double exponent = 20.0;
};

using Brdf = std::variant<Lambertian, Phong>;

inline double brdf_value(const Brdf& brdf, const Vec3& n, const Vec3& in, const Vec3& out) {
    if (const auto* l = std::get_if<Lambertian>(&brdf)) return l->albedo / std::numbers::pi;
    const auto& p = std::get<Phong>(brdf);
    const double lobe = 2.0 * n.dot(in) * n.dot(out) - in.dot(out);
    return p.kd / std::numbers::pi + p.ks * std::pow(std::max(0.0, lobe), p.exponent);
}

struct AnalyticScene {
    Surface surface;
    Brdf brdf;
    double light_power = 1.0;
};

struct Hit {
    double t = 0.0; // along the (unnormalized) ray
    Vec3 point = Vec3::Zero();
    Vec3 normal = Vec3::UnitZ();
};

namespace detail {

inline std::optional<Hit> intersect(const Sphere& s, const Vec3& o, const Vec3& d) {
    const Vec3 oc = o - s.center;
    const double a = d.squaredNorm();
    const double b = oc.dot(d);
    const double c = oc.squaredNorm() - s.radius * s.radius;
    const double disc = b * b - a * c;
    if (disc < 0.0) return std::nullopt;
    const double sq = std::sqrt(disc);
    // Numerically stable pair of roots.
    const double qv = -(b + std::copysign(sq, b));
    double t0 = qv / a, t1 = c / qv;
    if (t0 > t1) std::swap(t0, t1);
    const double t = t0 > 0.0 ? t0 : t1;
    if (!(t > 0.0)) return std::nullopt;
    const Vec3 p = o + t * d;
    return Hit{t, p, (p - s.center).normalized()};
}

inline std::optional<Hit> intersect(const Plane& pl, const Vec3& o, const Vec3& d) {
    const Vec3 n = pl.normal.normalized();
    const double den = d.dot(n);
    if (std::abs(den) < 1e-300) return std::nullopt;
    const double t = (pl.point - o).dot(n) / den;
    if (!(t > 0.0)) return std::nullopt;
    return Hit{t, o + t * d, n};
}

inline std::optional<Hit> intersect(const HeightField& hf, const Vec3& o, const Vec3& d) {
    // Slab clip against the bounding box.
    const Vec3 lo(hf.x0(), hf.y0(), hf.zmin()), hi(hf.x1(), hf.y1(), hf.zmax());
    double t0 = 0.0, t1 = std::numeric_limits<double>::infinity();
    for (int a = 0; a < 3; ++a) {
        if (std::abs(d(a)) < 1e-300) {
            if (o(a) < lo(a) || o(a) > hi(a)) return std::nullopt;
            continue;
        }
        double ta = (lo(a) - o(a)) / d(a), tb = (hi(a) - o(a)) / d(a);
        if (ta > tb) std::swap(ta, tb);
        t0 = std::max(t0, ta);
        t1 = std::min(t1, tb);
    }
    if (!(t0 < t1)) return std::nullopt;
    auto g = [&](double t) {
        const Vec3 p = o + t * d;
        return p.z() - hf.eval(p.x(), p.y())(0);
    };
    const double step = 0.1 * hf.spacing() / d.norm();
    double ta = t0;
    double ga = g(ta);
    if (ga >= 0.0) return std::nullopt; // entered from below the surface
    while (ta < t1) {
        const double tb = std::min(ta + step, t1);
        const double gb = g(tb);
        if (gb >= 0.0) {
            double lo_t = ta, hi_t = tb;
            for (int it = 0; it < 200 && hi_t - lo_t > 1e-15 * std::max(1.0, hi_t); ++it) {
                const double mid = 0.5 * (lo_t + hi_t);
                (g(mid) < 0.0 ? lo_t : hi_t) = mid;
            }
            const double t = 0.5 * (lo_t + hi_t);
            Vec3 p = o + t * d;
            if (!hf.inside(p.x(), p.y())) return std::nullopt;
            p.z() = hf.eval(p.x(), p.y())(0);
            return Hit{t, p, hf.normal(p.x(), p.y())};
        }
        ta = tb;
    }
    return std::nullopt;
}

} // namespace detail

inline std::optional<Hit> intersect(const AnalyticScene& scene, const Vec3& origin, const Vec3& dir) {
    return std::visit([&](const auto& s) { return detail::intersect(s, origin, dir); }, scene.surface);
}

// Irradiance seen by a camera at `camera` of the surface point `hit` lit from
// `light`; zero when either station lies behind the tangent plane.
inline double irradiance(const AnalyticScene& scene, const Vec3& camera, const Vec3& light, const Hit& hit) {
    const Vec3 to_light = light - hit.point;
    const Vec3 to_camera = camera - hit.point;
    const double r2 = to_light.squaredNorm();
    const Vec3 i = to_light / std::sqrt(r2);
    const Vec3 e = to_camera.normalized();
    const double cos_i = hit.normal.dot(i);
    const double cos_e = hit.normal.dot(e);
    if (cos_i <= 0.0 || cos_e <= 0.0) return 0.0;
    return scene.light_power * brdf_value(scene.brdf, hit.normal, i, e) * cos_i / r2;
}

inline double render_pixel(const AnalyticScene& scene, const ViewStation& camera, const Vec3& light, const Vec2& pixel) {
    const auto hit = intersect(scene, camera.center(), camera.ray(pixel));
    return hit ? irradiance(scene, camera.center(), light, *hit) : 0.0;
}

inline Image render_image(const AnalyticScene& scene, const ViewStation& camera, const Vec3& light, int width, int height) {
    Image img(width, height, 0.0);
    parallel_for(img.size(), [&](std::size_t p) {
        img[p] = render_pixel(scene, camera, light, Vec2(static_cast<double>(p % width), static_cast<double>(p / width)));
    });
    return img;
}

inline ReciprocalPair render_pair(const AnalyticScene& scene, const ViewStation& a, const ViewStation& b, int width,
                                  int height, int pair_index = 1) {
    ReciprocalPair pair;
    pair.station_a = a.id();
    pair.station_b = b.id();
    pair.pair_index = pair_index;
    pair.image_ab = render_image(scene, a, b.center(), width, height);
    pair.image_ba = render_image(scene, b, a.center(), width, height);
    return pair;
}

struct GroundTruth {
    Image depth;
    Grid<Vec3> normals;
    Mask mask;
};

// Depth along the principal rays (camera-frame depth) and world normals of the
// first visible intersection.
inline GroundTruth ground_truth(const AnalyticScene& scene, const ViewStation& principal, int width, int height) {
    GroundTruth gt{Image(width, height, 0.0), Grid<Vec3>(width, height, Vec3::Zero()), Mask(width, height, 0)};
    parallel_for(gt.depth.size(), [&](std::size_t p) {
        const Vec2 px(static_cast<double>(p % width), static_cast<double>(p / width));
        const auto hit = intersect(scene, principal.center(), principal.ray(px));
        if (!hit || hit->normal.dot(principal.center() - hit->point) <= 0.0) return;
        gt.depth[p] = principal.depth_of(hit->point);
        gt.normals[p] = hit->normal;
        gt.mask[p] = 1;
    });
    return gt;
}

// Exact irradiance at continuous pixel positions, mirroring the
// ImageIntensitySource interface without discretization or prefiltering.
class AnalyticIntensitySource {
public:
    AnalyticIntensitySource(const AnalyticScene& scene, const SceneConfig& config) : scene_(&scene) {
        for (const auto& p : config.pairs) stations_.emplace_back(config.station(p.station_a), config.station(p.station_b));
    }

    std::optional<double> operator()(std::size_t pair, PairSide side, const Vec2& pixel) const {
        const auto& [a, b] = stations_[pair];
        const ViewStation& cam = side == PairSide::AB ? a : b;
        const ViewStation& light = side == PairSide::AB ? b : a;
        return render_pixel(*scene_, cam, light.center(), pixel);
    }

private:
    const AnalyticScene* scene_;
    std::vector<std::pair<ViewStation, ViewStation>> stations_;
};

// ---------------------------------------------------------------------------
// Noise.

// Zero-mean Gaussian noise from mt19937_64 via Box-Muller, clamped at 0.
// The field depends only on (seed, image sizes, sigma).
inline void add_noise(Image& image, double sigma, std::mt19937_64& rng) {
    require(sigma >= 0.0, ErrorKind::InvalidArgument, "noise sigma must be >= 0");
    if (sigma == 0.0) return;
    constexpr double k53 = 1.0 / 9007199254740992.0;
    for (std::size_t i = 0; i < image.size(); i += 2) {
        const double u1 = (static_cast<double>(rng() >> 11) + 1.0) * k53;
        const double u2 = static_cast<double>(rng() >> 11) * k53;
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double th = 2.0 * std::numbers::pi * u2;
        image[i] = std::max(0.0, image[i] + sigma * r * std::cos(th));
        if (i + 1 < image.size()) image[i + 1] = std::max(0.0, image[i + 1] + sigma * r * std::sin(th));
    }
}

inline ReciprocalPair add_noise(ReciprocalPair pair, double sigma, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    add_noise(pair.image_ab, sigma, rng);
    add_noise(pair.image_ba, sigma, rng);
    return pair;
}

// ---------------------------------------------------------------------------
// Scene description JSON for the synthesizer.
//
//   {
//     "width": 128, "height": 128,
//     "surface": {"type": "SPHERE", "center": [0,0,0], "radius": 1}
//              | {"type": "PLANE", "point": [..], "normal": [..]}
//              | {"type": "HEIGHT_FIELD", "x_range": [-1,1], "y_range": [-1,1],
//                 "heights": [[row0], [row1], ...]}                    explicit nodes
//                 or "nodes": [33, 33], "base": 0, "bumps": [{"center": [x,y], "amplitude": a, "sigma": s}]
//     "brdf": {"type": "LAMBERTIAN", "albedo": 0.8} | {"type": "PHONG", "kd": .., "ks": .., "exponent": ..},
//     "light_power": 150,
//     "stations": [{"id": "A", "position": [..], "look_at": [..], "up": [..], "focal": 400}],
//     "pairs": [["A", "B"], ...],
//     "principal": "A",
//     "silhouette_stations": ["S1", ...],      co-located camera and light
//     "volume": {"min": [..], "max": [..]},
//     "noise": {"sigma": 0.01, "seed": 7},
//     "gaussian_sigma": 1.0,
//     "image_format": "pfm"
//   }

struct SynthSpec {
    AnalyticScene scene;
    int width = 128;
    int height = 128;
    std::vector<ViewStation> stations;
    std::vector<std::pair<std::string, std::string>> pairs;
    std::string principal;
    std::vector<std::string> silhouette_stations;
    std::optional<Box> volume;
    double noise_sigma = 0.0;
    std::uint64_t noise_seed = 0;
    double gaussian_sigma = 1.0;
    std::string image_format = "pfm";

    const ViewStation& station(const std::string& id) const {
        for (const auto& s : stations)
            if (s.id() == id) return s;
        fail(ErrorKind::ParseError, "scene: unknown station '" + id + "'");
    }
};

namespace detail {

inline std::string upper(std::string s) {
    for (auto& c : s) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    return s;
}

inline HeightField parse_height_field(const Json& j) {
    const std::string ctx = "surface";
    auto range = [&](const std::string& key) {
        const Json& r = field(j, key, ctx);
        require(r.is_array() && r.size() == 2 && r[0].is_number() && r[1].is_number(), ErrorKind::ParseError,
                ctx + ": field '" + key + "' must be [min, max]");
        return std::pair{r[0].get<double>(), r[1].get<double>()};
    };
    const auto [x0, x1] = range("x_range");
    const auto [y0, y1] = range("y_range");
    Image heights;
    if (j.contains("heights")) {
        const Json& rows = j.at("heights");
        require(rows.is_array() && !rows.empty() && rows[0].is_array(), ErrorKind::ParseError,
                ctx + ": field 'heights' must be an array of rows");
        heights = Image(static_cast<int>(rows[0].size()), static_cast<int>(rows.size()), 0.0);
        for (int y = 0; y < heights.height(); ++y) {
            require(rows[y].is_array() && static_cast<int>(rows[y].size()) == heights.width(), ErrorKind::ParseError,
                    ctx + ": field 'heights' rows must have equal length");
            for (int x = 0; x < heights.width(); ++x) heights(x, y) = rows[y][x].get<double>();
        }
    } else {
        const Json& nodes = field(j, "nodes", ctx);
        require(nodes.is_array() && nodes.size() == 2, ErrorKind::ParseError, ctx + ": field 'nodes' must be [nx, ny]");
        const int nx = nodes[0].get<int>(), ny = nodes[1].get<int>();
        require(nx >= 2 && ny >= 2, ErrorKind::ParseError, ctx + ": field 'nodes' must be at least [2, 2]");
        const double base = j.contains("base") ? number_field(j, "base", ctx) : 0.0;
        heights = Image(nx, ny, base);
        if (j.contains("bumps"))
            for (const auto& b : j.at("bumps")) {
                const Json& c = field(b, "center", "bump");
                const double cx = c.at(0).get<double>(), cy = c.at(1).get<double>();
                const double amp = number_field(b, "amplitude", "bump");
                const double s = number_field(b, "sigma", "bump");
                require(s > 0.0, ErrorKind::ParseError, "bump: field 'sigma' must be positive");
                for (int y = 0; y < ny; ++y)
                    for (int x = 0; x < nx; ++x) {
                        const double px = x0 + (x1 - x0) * x / (nx - 1), py = y0 + (y1 - y0) * y / (ny - 1);
                        const double r2 = (px - cx) * (px - cx) + (py - cy) * (py - cy);
                        heights(x, y) += amp * std::exp(-0.5 * r2 / (s * s));
                    }
            }
    }
    return HeightField(std::move(heights), x0, x1, y0, y1);
}

inline Surface parse_surface(const Json& j) {
    const std::string type = upper(string_field(j, "type", "surface"));
    if (type == "SPHERE") {
        Sphere s{json_vec3(field(j, "center", "surface"), "surface.center"), number_field(j, "radius", "surface")};
        require(s.radius > 0.0, ErrorKind::ParseError, "surface: field 'radius' must be positive");
        return s;
    }
    if (type == "PLANE") {
        Plane p{json_vec3(field(j, "point", "surface"), "surface.point"),
                json_vec3(field(j, "normal", "surface"), "surface.normal")};
        require(p.normal.norm() > 0.0, ErrorKind::ParseError, "surface: field 'normal' must be nonzero");
        p.normal.normalize();
        return p;
    }
    if (type == "HEIGHT_FIELD") return parse_height_field(j);
    fail(ErrorKind::ParseError, "surface: field 'type' has unknown value '" + type + "'");
}

inline Brdf parse_brdf(const Json& j) {
    const std::string type = upper(string_field(j, "type", "brdf"));
    if (type == "LAMBERTIAN") {
        Lambertian l{j.contains("albedo") ? number_field(j, "albedo", "brdf") : 0.8};
        require(l.albedo >= 0.0, ErrorKind::ParseError, "brdf: field 'albedo' must be >= 0");
        return l;
    }
    if (type == "PHONG") {
        Phong p{number_field(j, "kd", "brdf"), number_field(j, "ks", "brdf"), number_field(j, "exponent", "brdf")};
        require(p.kd >= 0.0 && p.ks >= 0.0 && p.exponent >= 0.0, ErrorKind::ParseError,
                "brdf: fields 'kd', 'ks', 'exponent' must be >= 0");
        return p;
    }
    fail(ErrorKind::ParseError, "brdf: field 'type' has unknown value '" + type + "'");
}

} // namespace detail

inline SynthSpec parse_synth(const Json& j) {
    SynthSpec s;
    if (j.contains("width")) s.width = static_cast<int>(detail::number_field(j, "width", "scene"));
    if (j.contains("height")) s.height = static_cast<int>(detail::number_field(j, "height", "scene"));
    require(s.width > 0 && s.height > 0, ErrorKind::ParseError, "scene: 'width' and 'height' must be positive");
    s.scene.surface = detail::parse_surface(detail::field(j, "surface", "scene"));
    s.scene.brdf = detail::parse_brdf(detail::field(j, "brdf", "scene"));
    if (j.contains("light_power")) s.scene.light_power = detail::number_field(j, "light_power", "scene");

    const Json& stations = detail::field(j, "stations", "scene");
    require(stations.is_array(), ErrorKind::ParseError, "scene: 'stations' must be an array");
    for (const auto& st : stations) {
        if (st.contains("projection")) {
            s.stations.push_back(station_from_json(st));
            continue;
        }
        const std::string id = detail::string_field(st, "id", "station");
        const std::string ctx = "station '" + id + "'";
        const Vec3 up = st.contains("up") ? detail::json_vec3(st.at("up"), "up") : Vec3(0, 1, 0);
        s.stations.push_back(ViewStation::look_at(id, detail::json_vec3(detail::field(st, "position", ctx), "position"),
                                                  detail::json_vec3(detail::field(st, "look_at", ctx), "look_at"), up,
                                                  detail::number_field(st, "focal", ctx), s.width, s.height));
    }

    const Json& pairs = detail::field(j, "pairs", "scene");
    require(pairs.is_array(), ErrorKind::ParseError, "scene: 'pairs' must be an array");
    for (const auto& p : pairs) {
        require(p.is_array() && p.size() == 2 && p[0].is_string() && p[1].is_string(), ErrorKind::ParseError,
                "scene: each entry of 'pairs' must be [station_a, station_b]");
        s.pairs.emplace_back(p[0].get<std::string>(), p[1].get<std::string>());
        s.station(s.pairs.back().first);
        s.station(s.pairs.back().second);
    }
    s.principal = detail::string_field(j, "principal", "scene");
    s.station(s.principal);
    if (j.contains("silhouette_stations"))
        for (const auto& id : j.at("silhouette_stations")) {
            s.silhouette_stations.push_back(id.get<std::string>());
            s.station(s.silhouette_stations.back());
        }
    if (j.contains("volume")) s.volume = box_from_json(j.at("volume"));
    if (j.contains("noise")) {
        const Json& n = j.at("noise");
        if (n.contains("sigma")) s.noise_sigma = detail::number_field(n, "sigma", "noise");
        if (n.contains("seed")) s.noise_seed = n.at("seed").get<std::uint64_t>();
        require(s.noise_sigma >= 0.0, ErrorKind::ParseError, "noise: field 'sigma' must be >= 0");
    }
    if (j.contains("gaussian_sigma")) s.gaussian_sigma = detail::number_field(j, "gaussian_sigma", "scene");
    if (j.contains("image_format")) s.image_format = detail::string_field(j, "image_format", "scene");
    require(s.image_format == "pfm" || s.image_format == "png" || s.image_format == "pgm", ErrorKind::ParseError,
            "scene: field 'image_format' must be pfm, png or pgm");
    return s;
}

inline SynthSpec load_synth(const std::filesystem::path& path) { return parse_synth(detail::parse_json_file(path)); }

struct SynthOutput {
    SceneConfig config;
    GroundTruth truth;
    std::vector<std::filesystem::path> files;
};

// Renders every pair (and silhouette view), applies noise, and returns the
// in-memory scene exactly as load_scene would rebuild it from disk.
inline SynthOutput synthesize(const SynthSpec& spec) {
    SynthOutput out;
    SceneConfig& cfg = out.config;
    cfg.stations = spec.stations;
    cfg.principal_station = spec.principal;
    cfg.gaussian_sigma = spec.gaussian_sigma;
    cfg.volume = spec.volume;
    int index = 1;
    for (const auto& [a, b] : spec.pairs) {
        ReciprocalPair pair = render_pair(spec.scene, spec.station(a), spec.station(b), spec.width, spec.height, index);
        const std::uint64_t seed = spec.noise_seed * 0x9E3779B97F4A7C15ull + static_cast<std::uint64_t>(index);
        cfg.pairs.push_back(add_noise(std::move(pair), spec.noise_sigma, seed));
        ++index;
    }
    for (const auto& id : spec.silhouette_stations) {
        const ViewStation& st = spec.station(id);
        SilhouetteView view{id, render_image(spec.scene, st, st.center(), spec.width, spec.height)};
        std::mt19937_64 rng(spec.noise_seed * 0x9E3779B97F4A7C15ull + static_cast<std::uint64_t>(index++));
        add_noise(view.image, spec.noise_sigma, rng);
        cfg.silhouettes.push_back(std::move(view));
    }
    out.truth = ground_truth(spec.scene, spec.station(spec.principal), spec.width, spec.height);
    cfg.gt_depth = out.truth.depth;
    cfg.gt_normals = out.truth.normals;
    return out;
}

// Writes calibration.json, images and ground truth into `dir`. PFM images
// round-trip exactly through float32, so the in-memory config is quantized to
// what a reload would produce before prefiltering.
inline SynthOutput write_dataset(const SynthSpec& spec, const std::filesystem::path& dir) {
    SynthOutput out = synthesize(spec);
    SceneConfig& cfg = out.config;
    const std::string ext = "." + spec.image_format;
    auto emit = [&](const std::string& name, Image& img) {
        const auto path = dir / (name + ext);
        write_image(path, img);
        img = read_image(path);
        out.files.push_back(path);
        return name + ext;
    };
    Json pairs = Json::array();
    for (auto& p : cfg.pairs) {
        const std::string base = "pair_" + std::to_string(p.pair_index);
        pairs.push_back({{"index", p.pair_index},
                         {"station_a", p.station_a},
                         {"station_b", p.station_b},
                         {"image_ab", emit(base + "_ab", p.image_ab)},
                         {"image_ba", emit(base + "_ba", p.image_ba)}});
    }
    Json sils = Json::array();
    for (auto& s : cfg.silhouettes) sils.push_back({{"station", s.station}, {"image", emit("silhouette_" + s.station, s.image)}});
    Json stations = Json::array();
    for (const auto& s : cfg.stations) stations.push_back(station_to_json(s));

    write_pfm(dir / "gt_depth.pfm", *cfg.gt_depth);
    write_pfm3(dir / "gt_normals.pfm", *cfg.gt_normals);
    cfg.gt_depth = read_pfm(dir / "gt_depth.pfm");
    cfg.gt_normals = read_pfm3(dir / "gt_normals.pfm");
    out.files.push_back(dir / "gt_depth.pfm");
    out.files.push_back(dir / "gt_normals.pfm");

    Json doc{{"principal", cfg.principal_station},
             {"gaussian_sigma", cfg.gaussian_sigma},
             {"stations", stations},
             {"pairs", pairs},
             {"ground_truth", {{"depth", "gt_depth.pfm"}, {"normals", "gt_normals.pfm"}}}};
    if (!sils.empty()) doc["silhouettes"] = sils;
    if (cfg.volume) doc["volume"] = box_to_json(*cfg.volume);
    detail::write_file(dir / "calibration.json", doc.dump(2) + "\n");
    out.files.push_back(dir / "calibration.json");
    cfg.prefilter();
    return out;
}

} // namespace hsbp

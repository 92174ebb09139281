#pragma once

// Calibrated stations, reciprocal pairs and the calibration JSON document.
//
// Calibration document layout (paths are relative to the document):
//
//   {
//     "principal": "A",
//     "gaussian_sigma": 1.0,
//     "volume": {"min": [x, y, z], "max": [x, y, z]},          optional
//     "stations": [{"id": "A", "center": [..], "projection": [[4], [4], [4]]}],
//     "pairs": [{"index": 1, "station_a": "A", "station_b": "B",
//                "image_ab": "ab.pfm", "image_ba": "ba.pfm"}],
//     "silhouettes": [{"station": "S", "image": "s.pfm"}],      optional
//     "ground_truth": {"depth": "gt_depth.pfm", "normals": "gt_normals.pfm"}   optional
//   }

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "hsbp/error.hpp"
#include "hsbp/filter.hpp"
#include "hsbp/geometry.hpp"
#include "hsbp/grid.hpp"
#include "hsbp/image_io.hpp"

namespace hsbp {

using Json = nlohmann::json;

struct Box {
    Vec3 min = Vec3::Zero();
    Vec3 max = Vec3::Zero();

    bool valid() const { return (max.array() > min.array()).all(); }
    Vec3 extent() const { return max - min; }
};

// Two irradiance images taken with camera and light exchanged.
// image_ab: camera at station_a, light at station_b; image_ba the converse.
struct ReciprocalPair {
    std::string station_a;
    std::string station_b;
    Image image_ab;
    Image image_ba;
    int pair_index = 1;

    void validate() const {
        require(station_a != station_b, ErrorKind::InvalidArgument,
                "pair " + std::to_string(pair_index) + ": stations must differ");
        require(!image_ab.empty(), ErrorKind::InvalidArgument, "pair " + std::to_string(pair_index) + ": empty image");
        require_same_shape(image_ab, image_ba, "pair " + std::to_string(pair_index) + " image dimensions");
        for (const Image* img : {&image_ab, &image_ba})
            for (double v : *img)
                require(v >= 0.0 && std::isfinite(v), ErrorKind::InvalidArgument,
                        "pair " + std::to_string(pair_index) + ": intensities must be finite and nonnegative");
    }
};

struct SilhouetteView {
    std::string station;
    Image image;
};

// Which of a pair's two images an intensity lookup refers to.
enum class PairSide { AB, BA };

struct SceneConfig {
    std::vector<ViewStation> stations;
    std::vector<ReciprocalPair> pairs;
    std::string principal_station;
    double gaussian_sigma = 1.0;

    std::vector<SilhouetteView> silhouettes;
    std::optional<Box> volume;

    // Gaussian-prefiltered copies of every pair image, aligned with `pairs`.
    std::vector<Image> filtered_ab;
    std::vector<Image> filtered_ba;

    std::optional<Image> gt_depth;
    std::optional<Grid<Vec3>> gt_normals;

    const ViewStation& station(const std::string& id) const {
        for (const auto& s : stations)
            if (s.id() == id) return s;
        fail(ErrorKind::InvalidArgument, "unknown station '" + id + "'");
    }

    bool has_station(const std::string& id) const {
        for (const auto& s : stations)
            if (s.id() == id) return true;
        return false;
    }

    const ViewStation& principal() const { return station(principal_station); }

    int width() const { return pairs.empty() ? 0 : image_for_camera(principal_station).width(); }
    int height() const { return pairs.empty() ? 0 : image_for_camera(principal_station).height(); }

    // Any raw image taken by the camera at `id`.
    const Image& image_for_camera(const std::string& id) const {
        for (const auto& p : pairs) {
            if (p.station_a == id) return p.image_ab;
            if (p.station_b == id) return p.image_ba;
        }
        for (const auto& s : silhouettes)
            if (s.station == id) return s.image;
        fail(ErrorKind::InvalidArgument, "no image taken from station '" + id + "'");
    }

    const Image& filtered(std::size_t pair, PairSide side) const {
        return side == PairSide::AB ? filtered_ab[pair] : filtered_ba[pair];
    }

    // Applies the Gaussian prefilter to every pair image; called once at load.
    void prefilter() {
        filtered_ab.clear();
        filtered_ba.clear();
        for (const auto& p : pairs) {
            filtered_ab.push_back(gaussian_filter(p.image_ab, gaussian_sigma));
            filtered_ba.push_back(gaussian_filter(p.image_ba, gaussian_sigma));
        }
    }

    void validate() const {
        require(has_station(principal_station), ErrorKind::InvalidArgument,
                "principal station '" + principal_station + "' is not listed");
        require(gaussian_sigma >= 0.0, ErrorKind::InvalidArgument, "gaussian_sigma must be >= 0");
        std::map<std::string, int> seen;
        for (const auto& s : stations)
            require(++seen[s.id()] == 1, ErrorKind::InvalidArgument, "duplicate station id '" + s.id() + "'");
        for (const auto& p : pairs) {
            p.validate();
            require(has_station(p.station_a) && has_station(p.station_b), ErrorKind::InvalidArgument,
                    "pair " + std::to_string(p.pair_index) + " references an unknown station");
        }
        for (const auto& s : silhouettes)
            require(has_station(s.station), ErrorKind::InvalidArgument,
                    "silhouette references unknown station '" + s.station + "'");
    }

    // Reconstruction needs at least three constraints per point.
    void require_reconstructible() const {
        require(pairs.size() >= 3, ErrorKind::InsufficientConstraints,
                "reconstruction needs at least 3 reciprocal pairs, got " + std::to_string(pairs.size()));
    }
};

// Samples the Gaussian-prefiltered pair images bilinearly.
class ImageIntensitySource {
public:
    explicit ImageIntensitySource(const SceneConfig& scene) : scene_(&scene) {}

    std::optional<double> operator()(std::size_t pair, PairSide side, const Vec2& pixel) const {
        const Image& img = scene_->filtered(pair, side);
        if (!in_sampling_bounds(img, pixel)) return std::nullopt;
        return bilinear(img, pixel);
    }

private:
    const SceneConfig* scene_;
};

// ---------------------------------------------------------------------------
// JSON

namespace detail {

inline Vec3 json_vec3(const Json& j, const std::string& field) {
    require(j.is_array() && j.size() == 3, ErrorKind::ParseError, "'" + field + "' must be a 3-vector");
    Vec3 v;
    for (int i = 0; i < 3; ++i) {
        require(j[i].is_number(), ErrorKind::ParseError, "'" + field + "' must hold numbers");
        v(i) = j[i].get<double>();
    }
    return v;
}

inline Json to_json(const Vec3& v) { return Json::array({v(0), v(1), v(2)}); }

inline Mat34 json_mat34(const Json& j, const std::string& field) {
    require(j.is_array() && j.size() == 3, ErrorKind::ParseError, "'" + field + "' must be a 3x4 matrix");
    Mat34 m;
    for (int r = 0; r < 3; ++r) {
        require(j[r].is_array() && j[r].size() == 4, ErrorKind::ParseError, "'" + field + "' must be a 3x4 matrix");
        for (int c = 0; c < 4; ++c) {
            require(j[r][c].is_number(), ErrorKind::ParseError, "'" + field + "' must hold numbers");
            m(r, c) = j[r][c].get<double>();
        }
    }
    return m;
}

inline Json to_json(const Mat34& m) {
    Json rows = Json::array();
    for (int r = 0; r < 3; ++r) rows.push_back(Json::array({m(r, 0), m(r, 1), m(r, 2), m(r, 3)}));
    return rows;
}

inline const Json& field(const Json& j, const std::string& key, const std::string& context) {
    require(j.is_object() && j.contains(key), ErrorKind::ParseError, context + ": missing field '" + key + "'");
    return j.at(key);
}

inline std::string string_field(const Json& j, const std::string& key, const std::string& context) {
    const Json& v = field(j, key, context);
    require(v.is_string(), ErrorKind::ParseError, context + ": field '" + key + "' must be a string");
    return v.get<std::string>();
}

inline double number_field(const Json& j, const std::string& key, const std::string& context) {
    const Json& v = field(j, key, context);
    require(v.is_number(), ErrorKind::ParseError, context + ": field '" + key + "' must be a number");
    return v.get<double>();
}

inline Json parse_json_file(const std::filesystem::path& path) {
    const std::string text = read_file(path);
    try {
        return Json::parse(text);
    } catch (const Json::parse_error& e) {
        fail(ErrorKind::ParseError, "'" + path.string() + "': " + e.what());
    }
}

} // namespace detail

inline Json station_to_json(const ViewStation& s) {
    return Json{{"id", s.id()}, {"center", detail::to_json(s.center())}, {"projection", detail::to_json(s.projection())}};
}

inline ViewStation station_from_json(const Json& j) {
    const std::string id = detail::string_field(j, "id", "station");
    const Mat34 p = detail::json_mat34(detail::field(j, "projection", "station '" + id + "'"), "projection");
    if (j.contains("center")) return ViewStation(id, detail::json_vec3(j.at("center"), "center"), p);
    return ViewStation::from_projection(id, p);
}

inline Json box_to_json(const Box& b) { return Json{{"min", detail::to_json(b.min)}, {"max", detail::to_json(b.max)}}; }

inline Box box_from_json(const Json& j) {
    Box b{detail::json_vec3(detail::field(j, "min", "volume"), "volume.min"),
          detail::json_vec3(detail::field(j, "max", "volume"), "volume.max")};
    require(b.valid(), ErrorKind::ParseError, "volume: max must exceed min on every axis");
    return b;
}

// Loads the calibration document and every image it references, then
// prefilters the pair images.
inline SceneConfig load_scene(const std::filesystem::path& path) {
    const Json j = detail::parse_json_file(path);
    const auto base = path.parent_path();
    auto resolve = [&](const std::string& rel) { return (base / rel).lexically_normal(); };

    SceneConfig scene;
    scene.principal_station = detail::string_field(j, "principal", "calibration");
    if (j.contains("gaussian_sigma")) scene.gaussian_sigma = detail::number_field(j, "gaussian_sigma", "calibration");
    if (j.contains("volume")) scene.volume = box_from_json(j.at("volume"));

    const Json& stations = detail::field(j, "stations", "calibration");
    require(stations.is_array(), ErrorKind::ParseError, "calibration: 'stations' must be an array");
    for (const auto& s : stations) scene.stations.push_back(station_from_json(s));

    const Json& pairs = detail::field(j, "pairs", "calibration");
    require(pairs.is_array(), ErrorKind::ParseError, "calibration: 'pairs' must be an array");
    int next_index = 1;
    for (const auto& p : pairs) {
        ReciprocalPair pair;
        pair.pair_index = p.contains("index") ? static_cast<int>(detail::number_field(p, "index", "pair")) : next_index;
        ++next_index;
        const std::string ctx = "pair " + std::to_string(pair.pair_index);
        pair.station_a = detail::string_field(p, "station_a", ctx);
        pair.station_b = detail::string_field(p, "station_b", ctx);
        pair.image_ab = read_image(resolve(detail::string_field(p, "image_ab", ctx)));
        pair.image_ba = read_image(resolve(detail::string_field(p, "image_ba", ctx)));
        scene.pairs.push_back(std::move(pair));
    }

    if (j.contains("silhouettes")) {
        for (const auto& s : j.at("silhouettes")) {
            SilhouetteView view;
            view.station = detail::string_field(s, "station", "silhouette");
            view.image = read_image(resolve(detail::string_field(s, "image", "silhouette")));
            scene.silhouettes.push_back(std::move(view));
        }
    }

    if (j.contains("ground_truth")) {
        const Json& gt = j.at("ground_truth");
        if (gt.contains("depth")) scene.gt_depth = read_pfm(resolve(detail::string_field(gt, "depth", "ground_truth")));
        if (gt.contains("normals"))
            scene.gt_normals = read_pfm3(resolve(detail::string_field(gt, "normals", "ground_truth")));
    }

    scene.validate();
    scene.prefilter();
    return scene;
}

} // namespace hsbp

#pragma once

// End-to-end reconstruction: load, carve, extract candidates, score, then one
// of the four estimators, final normal integration and evaluation.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "hsbp/error.hpp"
#include "hsbp/eval.hpp"
#include "hsbp/helmholtz.hpp"
#include "hsbp/hull.hpp"
#include "hsbp/integration.hpp"
#include "hsbp/mrf.hpp"
#include "hsbp/scene.hpp"

namespace hsbp {

struct PipelineConfig {
    std::filesystem::path scene;
    Method method = Method::MAP_BP_Z;
    double alpha = 0.5;
    int iterations = 10;
    double damping = 0.5;
    int window = 3;
    std::optional<double> gaussian_sigma; // overrides the calibration value
    int voxels = 128;
    double threshold = 0.1;
    double nz_min = kNzMin;
    std::size_t labels_max = 64;
    std::filesystem::path output_dir = "out";
    bool literal_s2 = false;
    unsigned threads = 0;
    OutOfView out_of_view = OutOfView::Background;
    bool save_intermediates = false;
    std::optional<std::filesystem::path> hull; // precarved hull header

    void validate() const {
        require(alpha >= 0.0 && alpha < 1.0, ErrorKind::InvalidArgument, "alpha must lie in [0, 1)");
        require(iterations >= 1, ErrorKind::InvalidArgument, "iterations must be >= 1");
        require(damping >= 0.0 && damping < 1.0, ErrorKind::InvalidArgument, "damping must lie in [0, 1)");
        require(window >= 1 && window % 2 == 1, ErrorKind::InvalidArgument, "window must be odd and >= 1");
        require(voxels >= 2, ErrorKind::InvalidArgument, "voxels must be >= 2");
        require(threshold >= 0.0 && threshold < 1.0, ErrorKind::InvalidArgument, "threshold must lie in [0, 1)");
        require(nz_min > 0.0 && nz_min < 1.0, ErrorKind::InvalidArgument, "nz_min must lie in (0, 1)");
        require(!gaussian_sigma || *gaussian_sigma >= 0.0, ErrorKind::InvalidArgument, "sigma must be >= 0");
    }
};

inline Json config_to_json(const PipelineConfig& c) {
    Json j{{"scene", c.scene.string()},
           {"method", to_string(c.method)},
           {"alpha", c.alpha},
           {"iterations", c.iterations},
           {"damping", c.damping},
           {"window", c.window},
           {"voxels", c.voxels},
           {"threshold", c.threshold},
           {"nz_min", c.nz_min},
           {"labels_max", c.labels_max},
           {"output_dir", c.output_dir.string()},
           {"literal_s2", c.literal_s2},
           {"threads", c.threads},
           {"out_of_view", c.out_of_view == OutOfView::Background ? "background" : "ignore"},
           {"save_intermediates", c.save_intermediates}};
    j["gaussian_sigma"] = c.gaussian_sigma ? Json(*c.gaussian_sigma) : Json(nullptr);
    j["hull"] = c.hull ? Json(c.hull->string()) : Json(nullptr);
    return j;
}

// Reads a config object; relative paths resolve against `base`. A manifest
// is accepted too (its "config" member is used).
inline PipelineConfig config_from_json(const Json& doc, const std::filesystem::path& base = {}) {
    const Json& j = doc.contains("config") && doc.at("config").is_object() ? doc.at("config") : doc;
    require(j.is_object(), ErrorKind::ParseError, "config must be a JSON object");
    PipelineConfig c;
    auto path = [&](const std::string& key) {
        std::filesystem::path p = detail::string_field(j, key, "config");
        return p.is_absolute() || base.empty() ? p : (base / p).lexically_normal();
    };
    auto number = [&](const std::string& key) { return detail::number_field(j, key, "config"); };
    auto flag = [&](const std::string& key) {
        require(j.at(key).is_boolean(), ErrorKind::ParseError, "config: field '" + key + "' must be a boolean");
        return j.at(key).get<bool>();
    };
    if (j.contains("scene")) c.scene = path("scene");
    if (j.contains("method")) c.method = parse_method(detail::string_field(j, "method", "config"));
    if (j.contains("alpha")) c.alpha = number("alpha");
    if (j.contains("iterations")) c.iterations = static_cast<int>(number("iterations"));
    if (j.contains("damping")) c.damping = number("damping");
    if (j.contains("window")) c.window = static_cast<int>(number("window"));
    if (j.contains("gaussian_sigma") && !j.at("gaussian_sigma").is_null()) c.gaussian_sigma = number("gaussian_sigma");
    if (j.contains("voxels")) c.voxels = static_cast<int>(number("voxels"));
    if (j.contains("threshold")) c.threshold = number("threshold");
    if (j.contains("nz_min")) c.nz_min = number("nz_min");
    if (j.contains("labels_max")) c.labels_max = static_cast<std::size_t>(number("labels_max"));
    if (j.contains("output_dir")) c.output_dir = path("output_dir");
    if (j.contains("literal_s2")) c.literal_s2 = flag("literal_s2");
    if (j.contains("threads")) c.threads = static_cast<unsigned>(number("threads"));
    if (j.contains("save_intermediates")) c.save_intermediates = flag("save_intermediates");
    if (j.contains("out_of_view")) {
        const std::string v = detail::string_field(j, "out_of_view", "config");
        require(v == "background" || v == "ignore", ErrorKind::ParseError,
                "config: field 'out_of_view' must be 'background' or 'ignore'");
        c.out_of_view = v == "background" ? OutOfView::Background : OutOfView::Ignore;
    }
    if (j.contains("hull") && !j.at("hull").is_null()) c.hull = path("hull");
    return c;
}

inline PipelineConfig load_config(const std::filesystem::path& path) {
    return config_from_json(detail::parse_json_file(path), path.parent_path());
}

namespace detail {

// Re-raises module errors with the failing stage named.
template <class F>
auto staged(const std::string& stage, F&& f) {
    try {
        return f();
    } catch (const Error& e) {
        throw Error(e.kind(), "[" + stage + "] " + e.message());
    }
}

} // namespace detail

// Everything shared by the four estimators.
struct PreparedScene {
    SceneConfig scene;
    VoxelGrid hull;
    CandidateVolume candidates;
    ScoreCache scores;
};

inline PreparedScene prepare(SceneConfig scene, const PipelineConfig& cfg) {
    cfg.validate();
    PreparedScene ps;
    const bool resigma = cfg.gaussian_sigma && *cfg.gaussian_sigma != scene.gaussian_sigma;
    if (resigma) scene.gaussian_sigma = *cfg.gaussian_sigma;
    if (resigma || scene.filtered_ab.size() != scene.pairs.size()) scene.prefilter();
    detail::staged("load", [&] {
        scene.validate();
        scene.require_reconstructible();
        return 0;
    });
    ps.hull = detail::staged("carve", [&] {
        return cfg.hull ? read_hull(*cfg.hull) : carve_scene(scene, cfg.voxels, cfg.threshold, cfg.out_of_view);
    });
    ps.candidates = detail::staged("candidates", [&] {
        return extract_candidates(ps.hull, scene.principal(), scene.width(), scene.height(), cfg.labels_max);
    });
    ps.scores = detail::staged("score", [&] { return compute_scores(scene, ps.candidates); });
    ps.scene = std::move(scene);
    return ps;
}

inline PreparedScene prepare(const PipelineConfig& cfg) {
    return prepare(detail::staged("load", [&] { return load_scene(cfg.scene); }), cfg);
}

struct RunResult {
    Method method = Method::ML;
    DepthNormalMap map;
    std::vector<double> energy_trace; // empty for ML
    std::optional<MessageField> messages;
    std::optional<IntegratedSurface> zin;
    IntegratedSurface surface; // final integrated depth in depth units
    EvalReport self_consistency;
    std::optional<EvalReport> ground_truth;
};

// Integrates a depth/normal map's normals in the principal camera frame and
// maps the heights to depth units against the map's own depths.
inline IntegratedSurface integrate_map(const DepthNormalMap& m, const ViewStation& principal, double nz_min) {
    const GradientField g = normals_to_gradients(rotate_normals(m.normals, principal.rotation()), m.valid, nz_min);
    const IntegratedSurface raw = integrate(g, Boundary::Mirror);
    double mean = 0.0;
    const std::size_t n = count(m.valid);
    for (std::size_t i = 0; i < m.valid.size(); ++i)
        if (m.valid[i]) mean += m.depth[i];
    mean /= static_cast<double>(std::max<std::size_t>(n, 1));
    return fit_to_depth(raw, m.depth, m.valid, mean / principal.intrinsics()(0, 0));
}

namespace detail {

inline std::vector<double> flat_depths(const CandidateVolume& cv) {
    std::vector<double> d;
    d.reserve(cv.total_labels());
    for (std::size_t p = 0; p < cv.pixel_count(); ++p) {
        const auto l = cv.labels(p);
        d.insert(d.end(), l.begin(), l.end());
    }
    return d;
}

inline std::vector<double> flat_data_costs(const ScoreCache& cache) {
    std::vector<double> u;
    u.reserve(cache.size());
    for (const auto& s : cache.all()) u.push_back(s.data_cost);
    return u;
}

template <class Pairwise>
DepthNormalMap solve_bp(const PreparedScene& ps, const PipelineConfig& cfg, GridMrf<Pairwise>& mrf, RunResult& out,
                        bool keep_messages) {
    BeliefResult r = staged("bp", [&] { return run_bp(mrf, cfg.iterations, cfg.damping); });
    out.energy_trace = r.energy_trace;
    if (keep_messages) out.messages = std::move(r.messages);
    return map_from_labels(ps.candidates, ps.scores, r.chosen_grid(mrf.graph));
}

} // namespace detail

inline RunResult run_method(const PreparedScene& ps, const PipelineConfig& cfg, Method method) {
    cfg.validate();
    RunResult out;
    out.method = method;
    const CandidateVolume& cv = ps.candidates;
    const ViewStation& principal = ps.scene.principal();

    if (method == Method::ML) {
        out.map = detail::staged("ml", [&] { return ml_depth(cv, ps.scores, cfg.window); });
    } else {
        MrfGraph graph = MrfGraph::from_candidates(cv);
        std::vector<double> unary = detail::flat_data_costs(ps.scores);
        if (method == Method::MAP_BP_Z) {
            const DepthNormalMap ml = detail::staged("ml", [&] { return ml_depth(cv, ps.scores, cfg.window); });
            out.zin = detail::staged("zin", [&] { return integrate_map(ml, principal, cfg.nz_min); });
            std::vector<double> zin(graph.node_count());
            for (std::size_t n = 0; n < zin.size(); ++n) {
                const std::size_t p = graph.pixel_of_node(n);
                zin[n] = sample_zin(*out.zin, static_cast<int>(p % cv.width()), static_cast<int>(p / cv.width()));
            }
            IntegratedDepthPairwise pw(graph, detail::flat_depths(cv), std::move(zin), cfg.literal_s2);
            GridMrf<IntegratedDepthPairwise> mrf{std::move(graph), std::move(unary), std::move(pw), cfg.alpha,
                                                 Neighborhood::Four};
            out.map = detail::solve_bp(ps, cfg, mrf, out, cfg.save_intermediates);
        } else {
            std::vector<Vec3> normals;
            normals.reserve(ps.scores.size());
            for (const auto& s : ps.scores.all()) normals.push_back(s.normal);
            // The forward-two structure touches fewer edges; the table only
            // depends on the graph, so both methods share it.
            auto table = normal_pairwise(graph, normals);
            GridMrf<TablePairwise<float>> mrf{std::move(graph), std::move(unary), std::move(table), cfg.alpha,
                                              method == Method::MAP_ND ? Neighborhood::ForwardTwo : Neighborhood::Four};
            out.map = detail::solve_bp(ps, cfg, mrf, out, cfg.save_intermediates);
        }
    }

    out.surface = detail::staged("integrate", [&] { return integrate_map(out.map, principal, cfg.nz_min); });
    out.self_consistency = detail::staged("eval", [&] { return rms_error(out.surface.z, out.map.depth, out.map.valid, method); });
    out.self_consistency.metric = "self_consistency";
    if (ps.scene.gt_depth) {
        out.ground_truth = detail::staged("eval", [&] {
            const Image& gt = *ps.scene.gt_depth;
            require_same_shape(gt, out.map.depth, "ground-truth depth");
            Mask m(gt.width(), gt.height(), 0);
            for (std::size_t i = 0; i < m.size(); ++i) m[i] = out.map.valid[i] && gt[i] > 0.0 ? 1 : 0;
            return rms_error(gt, out.map.depth, m, method);
        });
    }
    return out;
}

inline RunResult run_method(const PreparedScene& ps, const PipelineConfig& cfg) { return run_method(ps, cfg, cfg.method); }

// ---------------------------------------------------------------------------
// Output files.

namespace detail {

inline std::string csv_number(double v) {
    std::ostringstream s;
    s << std::setprecision(17) << v;
    return s.str();
}

} // namespace detail

inline std::vector<std::filesystem::path> write_run(const std::filesystem::path& dir, const PreparedScene& ps,
                                                    const RunResult& r, const PipelineConfig& cfg) {
    std::vector<std::filesystem::path> files;
    auto track = [&](const std::filesystem::path& p) {
        files.push_back(p);
        return p;
    };
    write_pfm(track(dir / "depth.pfm"), r.map.depth);
    write_pfm3(track(dir / "normals.pfm"), r.map.normals);
    write_mask(track(dir / "mask.png"), r.map.valid);
    write_pfm(track(dir / "surface.pfm"), r.surface.z);
    write_obj(track(dir / "surface.obj"), r.surface.z, r.map.valid, ps.scene.principal());

    std::string csv = "metric,method,e_rms,e_rms_normalized,pixel_count\n";
    auto row = [&](const EvalReport& e) {
        csv += e.metric + "," + to_string(e.method) + "," + detail::csv_number(e.e_rms) + "," +
               detail::csv_number(e.e_rms_normalized) + "," + std::to_string(e.pixel_count) + "\n";
    };
    row(r.self_consistency);
    write_report(dir, "eval_self_consistency", r.self_consistency);
    if (r.ground_truth) {
        row(*r.ground_truth);
        write_report(dir, "eval_ground_truth", *r.ground_truth);
        track(dir / "eval_ground_truth_error.pfm");
    }
    track(dir / "eval_self_consistency_error.pfm");
    detail::write_file(track(dir / "eval.csv"), csv);

    if (!r.energy_trace.empty()) {
        std::string trace = "iteration,energy\n";
        for (std::size_t t = 0; t < r.energy_trace.size(); ++t)
            trace += std::to_string(t) + "," + detail::csv_number(r.energy_trace[t]) + "\n";
        detail::write_file(track(dir / "energy_trace.csv"), trace);
    }

    if (cfg.save_intermediates) {
        const auto inter = dir / "intermediates";
        write_hull(inter / "hull.json", ps.hull);
        write_hull_ply(inter / "hull.ply", ps.hull);
        if (r.zin) write_pfm(track(inter / "zin.pfm"), r.zin->z);
        if (r.messages) write_messages(inter / "messages.json", MrfGraph::from_candidates(ps.candidates), *r.messages);
        const DepthNormalMap ml = ml_depth(ps.candidates, ps.scores, cfg.window);
        write_pfm(track(inter / "ml_depth.pfm"), ml.depth);
        write_pfm3(track(inter / "ml_normals.pfm"), ml.normals);
        // Score cache as a PFM stack: slice k holds each pixel's k-th label ratio.
        const CandidateVolume& cv = ps.candidates;
        for (std::size_t k = 0; k < cv.max_labels(); ++k) {
            Image slice(cv.width(), cv.height(), 0.0);
            for (std::size_t p = 0; p < cv.pixel_count(); ++p)
                if (k < cv.label_count(p)) slice[p] = ps.scores.at(cv, p, k).ratio;
            char name[32];
            std::snprintf(name, sizeof name, "ratio_%03zu.pfm", k);
            write_pfm(inter / "scores" / name, slice);
        }
    }
    return files;
}

} // namespace hsbp

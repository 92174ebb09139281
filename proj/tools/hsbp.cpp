// hsbp: command-line front end for the reconstruction pipeline.
//
// Exit codes: 0 success, 2 usage error, 10 + ErrorKind for library errors,
// 1 for anything else.

#include <CLI11.hpp>
#include <Eigen/Core>
#include <openssl/evp.h>
#include <png.h>

#include <cstdio>
#include <iostream>
#include <set>

#include "hsbp/hsbp.hpp"

namespace fs = std::filesystem;
using namespace hsbp;

namespace {

constexpr const char* kVersion = "1.0.0";

std::string sha256_file(const fs::path& path) {
    const std::string bytes = detail::read_file(path);
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr);
    std::string hex;
    char buf[3];
    for (unsigned i = 0; i < len; ++i) {
        std::snprintf(buf, sizeof buf, "%02x", digest[i]);
        hex += buf;
    }
    return hex;
}

Json file_list(const std::vector<fs::path>& paths) {
    Json out = Json::array();
    std::set<fs::path> seen;
    for (const auto& p : paths) {
        const fs::path abs = fs::absolute(p).lexically_normal();
        if (!seen.insert(abs).second || !fs::exists(abs)) continue;
        out.push_back({{"path", abs.string()}, {"sha256", sha256_file(abs)}});
    }
    return out;
}

// The calibration document plus every file it references.
std::vector<fs::path> calibration_inputs(const fs::path& calibration) {
    std::vector<fs::path> files{calibration};
    const Json j = detail::parse_json_file(calibration);
    const fs::path base = calibration.parent_path();
    if (j.contains("pairs"))
        for (const auto& p : j.at("pairs"))
            for (const char* key : {"image_ab", "image_ba"})
                if (p.contains(key)) files.push_back(base / p.at(key).get<std::string>());
    if (j.contains("silhouettes"))
        for (const auto& s : j.at("silhouettes"))
            if (s.contains("image")) files.push_back(base / s.at("image").get<std::string>());
    if (j.contains("ground_truth"))
        for (const auto& [k, v] : j.at("ground_truth").items())
            if (v.is_string()) files.push_back(base / v.get<std::string>());
    return files;
}

Json versions() {
    return Json{{"hsbp", kVersion},
                {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                              std::to_string(EIGEN_MINOR_VERSION)},
                {"libpng", PNG_LIBPNG_VER_STRING},
                {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                      std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                      std::to_string(NLOHMANN_JSON_VERSION_PATCH)}};
}

void write_manifest(const fs::path& dir, const std::string& command, const Json& config,
                    const std::vector<fs::path>& inputs, const std::vector<fs::path>& outputs) {
    const Json m{{"command", command},
                 {"config", config},
                 {"versions", versions()},
                 {"inputs", file_list(inputs)},
                 {"outputs", file_list(outputs)}};
    detail::write_file(dir / "manifest.json", m.dump(2) + "\n");
}

// Pipeline options shared by carve, reconstruct and compare. Flags win over
// the config file.
struct PipelineFlags {
    std::string scene;
    std::string config;
    std::string method;
    double alpha = 0;
    int iterations = 0;
    double damping = 0;
    int window = 0;
    double sigma = 0;
    int voxels = 0;
    double threshold = 0;
    double nz_min = 0;
    std::size_t labels_max = 0;
    bool literal_s2 = false;
    unsigned threads = 0;
    std::string out;
    std::string hull;
    std::string out_of_view;
    bool save_intermediates = false;

    std::vector<CLI::Option*> opts;

    void add(CLI::App* app, bool with_method) {
        app->add_option("scene", scene, "Calibration JSON");
        app->add_option("--config", config, "Pipeline config or manifest JSON");
        if (with_method) app->add_option("--method", method, "ML, MAP_ND, MAP_BP_N or MAP_BP_Z");
        app->add_option("--alpha", alpha, "Smoothness weight in [0, 1)");
        app->add_option("--iterations", iterations, "BP iterations");
        app->add_option("--damping", damping, "Message damping in [0, 1)");
        app->add_option("--window", window, "ML window (odd)");
        app->add_option("--sigma", sigma, "Gaussian prefilter sigma (px)");
        app->add_option("--voxels", voxels, "Voxels along the longest hull side");
        app->add_option("--threshold", threshold, "Silhouette threshold as a fraction of the image max");
        app->add_option("--nz-min", nz_min, "Grazing-normal cutoff for integration");
        app->add_option("--labels-max", labels_max, "Maximum depth labels per pixel (0 = all)");
        app->add_flag("--literal-s2", literal_s2, "Use the label-independent integration prior");
        app->add_option("--threads", threads, "Worker threads (0 = all cores)");
        app->add_option("--out", out, "Output directory");
        app->add_option("--hull", hull, "Precarved hull header (skips carving)");
        app->add_option("--out-of-view", out_of_view, "Carving policy for views a voxel misses: background|ignore");
        app->add_flag("--save-intermediates", save_intermediates, "Persist hull, scores, ML map, z_in, messages");
    }

    PipelineConfig resolve(CLI::App* app) const {
        PipelineConfig c = config.empty() ? PipelineConfig{} : load_config(config);
        auto given = [&](const char* name) {
            const CLI::Option* o = app->get_option_no_throw(name);
            return o != nullptr && o->count() > 0;
        };
        if (!scene.empty()) c.scene = scene;
        require(!c.scene.empty(), ErrorKind::InvalidArgument, "no calibration given (positional argument or config 'scene')");
        if (given("--method")) c.method = parse_method(method);
        if (given("--alpha")) c.alpha = alpha;
        if (given("--iterations")) c.iterations = iterations;
        if (given("--damping")) c.damping = damping;
        if (given("--window")) c.window = window;
        if (given("--sigma")) c.gaussian_sigma = sigma;
        if (given("--voxels")) c.voxels = voxels;
        if (given("--threshold")) c.threshold = threshold;
        if (given("--nz-min")) c.nz_min = nz_min;
        if (given("--labels-max")) c.labels_max = labels_max;
        if (given("--literal-s2")) c.literal_s2 = literal_s2;
        if (given("--threads")) c.threads = threads;
        if (given("--out")) c.output_dir = out;
        if (given("--hull")) c.hull = fs::path(hull);
        if (given("--save-intermediates")) c.save_intermediates = save_intermediates;
        if (given("--out-of-view")) {
            require(out_of_view == "background" || out_of_view == "ignore", ErrorKind::InvalidArgument,
                    "--out-of-view must be 'background' or 'ignore'");
            c.out_of_view = out_of_view == "background" ? OutOfView::Background : OutOfView::Ignore;
        }
        c.scene = fs::absolute(c.scene).lexically_normal();
        if (c.hull) c.hull = fs::absolute(*c.hull).lexically_normal();
        c.validate();
        set_thread_count(c.threads);
        return c;
    }
};

void print_run(const RunResult& r) {
    std::cout << to_string(r.method) << ": self-consistency e_rms " << r.self_consistency.e_rms;
    if (r.ground_truth) std::cout << ", ground-truth e_rms " << r.ground_truth->e_rms;
    std::cout << " over " << r.self_consistency.pixel_count << " pixels\n";
}

int cmd_synth(const std::string& scene_json, const fs::path& out) {
    const SynthSpec spec = load_synth(scene_json);
    const SynthOutput res = write_dataset(spec, out);
    write_manifest(out, "synth", Json{{"scene", fs::absolute(scene_json).lexically_normal().string()}, {"out", out.string()}},
                   {scene_json}, res.files);
    std::cout << "wrote " << res.config.pairs.size() << " reciprocal pairs to " << out.string() << "\n";
    return 0;
}

int cmd_carve(const PipelineConfig& c) {
    const SceneConfig scene = load_scene(c.scene);
    const VoxelGrid hull = detail::staged("carve", [&] { return carve_scene(scene, c.voxels, c.threshold, c.out_of_view); });
    const CandidateVolume cv = extract_candidates(hull, scene.principal(), scene.width(), scene.height(), c.labels_max);
    write_hull(c.output_dir / "hull.json", hull);
    write_hull_ply(c.output_dir / "hull.ply", hull);
    Image counts(cv.width(), cv.height(), 0.0);
    for (std::size_t p = 0; p < cv.pixel_count(); ++p) counts[p] = static_cast<double>(cv.label_count(p));
    write_pfm(c.output_dir / "label_counts.pfm", counts);
    write_manifest(c.output_dir, "carve", config_to_json(c), calibration_inputs(c.scene),
                   {c.output_dir / "hull.json", c.output_dir / "hull.rle", c.output_dir / "label_counts.pfm"});
    std::cout << hull.occupied_count() << " occupied voxels, " << count(cv.mask()) << " masked pixels, up to "
              << cv.max_labels() << " labels\n";
    return 0;
}

int cmd_reconstruct(const PipelineConfig& c) {
    const PreparedScene ps = prepare(c);
    const RunResult r = run_method(ps, c);
    auto outputs = write_run(c.output_dir, ps, r, c);
    std::vector<fs::path> inputs = calibration_inputs(c.scene);
    if (c.hull) {
        inputs.push_back(*c.hull);
        inputs.push_back(fs::path(*c.hull).replace_extension(".rle"));
    }
    write_manifest(c.output_dir, "reconstruct", config_to_json(c), inputs, outputs);
    print_run(r);
    return 0;
}

int cmd_compare(const PipelineConfig& c, const std::vector<std::string>& method_names) {
    const PreparedScene ps = prepare(c);
    std::vector<Method> methods;
    for (const auto& m : method_names) methods.push_back(parse_method(m));
    if (methods.empty()) methods = {Method::ML, Method::MAP_ND, Method::MAP_BP_N, Method::MAP_BP_Z};
    std::vector<EvalReport> gt, self;
    std::vector<fs::path> outputs;
    for (Method m : methods) {
        const RunResult r = run_method(ps, c, m);
        const auto files = write_run(c.output_dir / to_string(m), ps, r, c);
        outputs.insert(outputs.end(), files.begin(), files.end());
        print_run(r);
        self.push_back(r.self_consistency);
        if (r.ground_truth) gt.push_back(*r.ground_truth);
    }
    const ComparisonTable table = compare_methods(gt.size() == methods.size() ? gt : self);
    detail::write_file(c.output_dir / "comparison.csv", table.csv());
    detail::write_file(c.output_dir / "comparison.txt", table.text());
    detail::write_file(c.output_dir / "comparison_self_consistency.csv", compare_methods(self).csv());
    outputs.push_back(c.output_dir / "comparison.csv");
    outputs.push_back(c.output_dir / "comparison_self_consistency.csv");
    Json cfg = config_to_json(c);
    Json names = Json::array();
    for (Method m : methods) names.push_back(to_string(m));
    cfg["methods"] = names;
    write_manifest(c.output_dir, "compare", cfg, calibration_inputs(c.scene), outputs);
    std::cout << table.text();
    return 0;
}

int cmd_integrate(const fs::path& normals_path, const fs::path& mask_path, const std::string& calibration,
                  const std::string& depth_path, double nz_min, const fs::path& out) {
    Grid<Vec3> normals = read_pfm3(normals_path);
    const Mask mask = mask_path.empty() ? Mask(normals.width(), normals.height(), 1) : read_mask(mask_path);
    std::vector<fs::path> inputs{normals_path};
    if (!mask_path.empty()) inputs.push_back(mask_path);
    std::optional<SceneConfig> scene;
    if (!calibration.empty()) {
        scene = load_scene(calibration);
        normals = rotate_normals(normals, scene->principal().rotation());
        inputs.push_back(calibration);
    }
    IntegratedSurface s = integrate(normals_to_gradients(normals, mask, nz_min), Boundary::Mirror);
    if (!depth_path.empty()) {
        require(scene.has_value(), ErrorKind::InvalidArgument, "--depth needs --calibration for the fallback scale");
        const Image depth = read_pfm(depth_path);
        inputs.push_back(depth_path);
        double mean = 0.0;
        for (std::size_t i = 0; i < mask.size(); ++i)
            if (mask[i]) mean += depth[i];
        mean /= static_cast<double>(std::max<std::size_t>(count(mask), 1));
        s = fit_to_depth(s, depth, mask, mean / scene->principal().intrinsics()(0, 0));
    }
    std::vector<fs::path> outputs{out / "surface.pfm"};
    write_pfm(out / "surface.pfm", s.z);
    if (scene && !depth_path.empty()) {
        write_obj(out / "surface.obj", s.z, mask, scene->principal());
        outputs.push_back(out / "surface.obj");
    }
    write_manifest(out, "integrate", Json{{"normals", normals_path.string()}, {"nz_min", nz_min}}, inputs, outputs);
    std::cout << "integrated " << count(s.mask) << " pixels (" << s.offset_policy << ")\n";
    return 0;
}

int cmd_eval(const fs::path& reference, const fs::path& estimate, const std::string& mask_path, const fs::path& out) {
    const Image ref = read_image(reference);
    const Image est = read_image(estimate);
    require_same_shape(ref, est, "reference and estimate");
    Mask mask(ref.width(), ref.height(), 0);
    if (!mask_path.empty()) {
        mask = read_mask(mask_path);
    } else {
        for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = ref[i] > 0.0 && est[i] > 0.0 ? 1 : 0;
    }
    const EvalReport r = rms_error(ref, est, mask);
    write_report(out, "eval", r);
    std::ostringstream csv;
    csv << std::setprecision(17) << "e_rms,e_rms_normalized,pixel_count\n"
        << r.e_rms << ',' << r.e_rms_normalized << ',' << r.pixel_count << '\n';
    detail::write_file(out / "eval.csv", csv.str());
    std::vector<fs::path> inputs{reference, estimate};
    if (!mask_path.empty()) inputs.emplace_back(mask_path);
    write_manifest(out, "eval", Json{{"reference", reference.string()}, {"estimate", estimate.string()}}, inputs,
                   {out / "eval.json", out / "eval.csv", out / "eval_error.pfm"});
    std::cout << "e_rms " << r.e_rms << " (normalized " << r.e_rms_normalized << ") over " << r.pixel_count << " pixels\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Bayesian Helmholtz stereopsis"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kVersion);

    auto* synth = app.add_subcommand("synth", "Render a synthetic reciprocal-pair dataset");
    std::string synth_scene, synth_out = "dataset";
    synth->add_option("scene", synth_scene, "Scene description JSON")->required();
    synth->add_option("--out", synth_out, "Output directory");

    PipelineFlags carve_flags, recon_flags, compare_flags;
    auto* carve = app.add_subcommand("carve", "Carve the visual hull and extract candidate depths");
    carve_flags.add(carve, false);
    auto* recon = app.add_subcommand("reconstruct", "Reconstruct depth and normals with one method");
    recon_flags.add(recon, true);
    auto* compare = app.add_subcommand("compare", "Run several methods and rank them");
    compare_flags.add(compare, false);
    std::vector<std::string> compare_methods_list;
    compare->add_option("--methods", compare_methods_list, "Methods to compare (default: all four)");

    auto* integ = app.add_subcommand("integrate", "Integrate a normal map into a surface");
    std::string normals_path, mask_path, calibration, depth_path, integ_out = "surface";
    double nz_min = kNzMin;
    integ->add_option("normals", normals_path, "Normals PFM (3 channels)")->required();
    integ->add_option("--mask", mask_path, "Mask image (nonzero = valid)");
    integ->add_option("--calibration", calibration, "Rotate world normals into this calibration's principal frame");
    integ->add_option("--depth", depth_path, "Depth map the surface is fitted to");
    integ->add_option("--nz-min", nz_min, "Grazing-normal cutoff");
    integ->add_option("--out", integ_out, "Output directory");

    auto* ev = app.add_subcommand("eval", "RMS error between two depth maps");
    std::string ref_path, est_path, eval_mask, eval_out = "eval";
    ev->add_option("reference", ref_path, "Reference depth")->required();
    ev->add_option("estimate", est_path, "Estimated depth")->required();
    ev->add_option("--mask", eval_mask, "Mask image (default: both maps positive)");
    ev->add_option("--out", eval_out, "Output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (*synth) return cmd_synth(synth_scene, synth_out);
        if (*carve) return cmd_carve(carve_flags.resolve(carve));
        if (*recon) return cmd_reconstruct(recon_flags.resolve(recon));
        if (*compare) return cmd_compare(compare_flags.resolve(compare), compare_methods_list);
        if (*integ) return cmd_integrate(normals_path, mask_path, calibration, depth_path, nz_min, integ_out);
        if (*ev) return cmd_eval(ref_path, est_path, eval_mask, eval_out);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return e.exit_code();
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

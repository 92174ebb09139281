#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "hsbp/error.hpp"
#include "hsbp/grid.hpp"
#include "hsbp/image_io.hpp"
#include "hsbp/scene.hpp"

namespace hsbp {

// Enum order doubles as the tie-break order of comparison tables.
enum class Method { MAP_ND, MAP_BP_N, MAP_BP_Z, ML };

inline std::string to_string(Method m) {
    switch (m) {
    case Method::MAP_ND: return "MAP_ND";
    case Method::MAP_BP_N: return "MAP_BP_N";
    case Method::MAP_BP_Z: return "MAP_BP_Z";
    case Method::ML: return "ML";
    }
    return "?";
}

inline Method parse_method(std::string s) {
    for (auto& c : s) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    std::replace(s.begin(), s.end(), '-', '_');
    for (Method m : {Method::MAP_ND, Method::MAP_BP_N, Method::MAP_BP_Z, Method::ML})
        if (to_string(m) == s) return m;
    fail(ErrorKind::InvalidArgument, "unknown method '" + s + "' (expected ML, MAP_ND, MAP_BP_N or MAP_BP_Z)");
}

struct EvalReport {
    Method method = Method::ML;
    std::string metric = "ground_truth"; // or "self_consistency"
    double e_rms = 0.0;
    double e_rms_normalized = 0.0;
    std::size_t pixel_count = 0;
    Image per_pixel_abs_error;
    Mask mask;
};

// Root-mean-square difference over `mask`; the normalized variant divides by
// the reference depth span on the mask.
inline EvalReport rms_error(const Image& reference, const Image& estimate, const Mask& mask, Method method = Method::ML) {
    require_same_shape(reference, estimate, "reference and estimate");
    require_same_shape(reference, mask, "reference and mask");
    EvalReport r;
    r.method = method;
    r.mask = mask;
    r.per_pixel_abs_error = Image(reference.width(), reference.height(), 0.0);
    double sum = 0.0;
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (std::size_t i = 0; i < mask.size(); ++i) {
        if (!mask[i]) continue;
        const double d = reference[i] - estimate[i];
        sum += d * d;
        r.per_pixel_abs_error[i] = std::abs(d);
        lo = std::min(lo, reference[i]);
        hi = std::max(hi, reference[i]);
        ++r.pixel_count;
    }
    require(r.pixel_count > 0, ErrorKind::EmptyMask, "evaluation mask is empty");
    r.e_rms = std::sqrt(sum / static_cast<double>(r.pixel_count));
    const double span = hi - lo;
    r.e_rms_normalized = span > 0.0 ? r.e_rms / span : r.e_rms;
    return r;
}

struct ComparisonTable {
    std::vector<EvalReport> rows; // ranked, best first

    std::string csv() const {
        std::ostringstream out;
        out << std::setprecision(17);
        out << "rank,method,metric,e_rms,e_rms_normalized,pixel_count\n";
        for (std::size_t i = 0; i < rows.size(); ++i)
            out << i + 1 << ',' << to_string(rows[i].method) << ',' << rows[i].metric << ',' << rows[i].e_rms << ','
                << rows[i].e_rms_normalized << ',' << rows[i].pixel_count << '\n';
        return out.str();
    }

    std::string text() const {
        std::ostringstream out;
        out << std::left << std::setw(6) << "rank" << std::setw(11) << "method" << std::right << std::setw(14) << "e_rms"
            << std::setw(14) << "normalized" << std::setw(10) << "pixels" << '\n';
        for (std::size_t i = 0; i < rows.size(); ++i)
            out << std::left << std::setw(6) << i + 1 << std::setw(11) << to_string(rows[i].method) << std::right
                << std::scientific << std::setprecision(4) << std::setw(14) << rows[i].e_rms << std::setw(14)
                << rows[i].e_rms_normalized << std::defaultfloat << std::setw(10) << rows[i].pixel_count << '\n';
        return out.str();
    }
};

// Ranks reports by e_rms; equal errors keep method-enum order.
inline ComparisonTable compare_methods(std::vector<EvalReport> reports) {
    require(reports.size() >= 2, ErrorKind::InvalidArgument, "comparison needs at least two reports");
    for (const auto& r : reports) {
        require(r.mask.same_shape(reports.front().mask) && r.mask.values().size() == reports.front().mask.values().size() &&
                    std::equal(r.mask.begin(), r.mask.end(), reports.front().mask.begin(),
                               [](unsigned char a, unsigned char b) { return (a != 0) == (b != 0); }),
                ErrorKind::MaskMismatch, "reports cover different pixel sets");
    }
    std::stable_sort(reports.begin(), reports.end(), [](const EvalReport& a, const EvalReport& b) {
        if (a.e_rms != b.e_rms) return a.e_rms < b.e_rms;
        return static_cast<int>(a.method) < static_cast<int>(b.method);
    });
    return ComparisonTable{std::move(reports)};
}

inline Json report_to_json(const EvalReport& r) {
    return Json{{"method", to_string(r.method)},
                {"metric", r.metric},
                {"e_rms", r.e_rms},
                {"e_rms_normalized", r.e_rms_normalized},
                {"pixel_count", r.pixel_count}};
}

// Error magnitude mapped through a blue-to-red ramp scaled to the maximum.
inline void write_heat_png(const std::filesystem::path& path, const Image& error, const Mask& mask) {
    double hi = 0.0;
    for (std::size_t i = 0; i < error.size(); ++i)
        if (mask[i]) hi = std::max(hi, error[i]);
    std::vector<unsigned char> rgb(error.size() * 3, 0);
    for (std::size_t i = 0; i < error.size(); ++i) {
        if (!mask[i]) continue;
        const double t = hi > 0.0 ? std::clamp(error[i] / hi, 0.0, 1.0) : 0.0;
        const double r = std::clamp(1.5 - std::abs(4.0 * t - 3.0), 0.0, 1.0);
        const double g = std::clamp(1.5 - std::abs(4.0 * t - 2.0), 0.0, 1.0);
        const double b = std::clamp(1.5 - std::abs(4.0 * t - 1.0), 0.0, 1.0);
        rgb[3 * i + 0] = static_cast<unsigned char>(std::lround(255.0 * r));
        rgb[3 * i + 1] = static_cast<unsigned char>(std::lround(255.0 * g));
        rgb[3 * i + 2] = static_cast<unsigned char>(std::lround(255.0 * b));
    }
    detail::write_png_bytes(path, error.width(), error.height(), 3, rgb);
}

// report.json, error.pfm and error.png under `dir` with the given stem.
inline void write_report(const std::filesystem::path& dir, const std::string& stem, const EvalReport& r) {
    detail::write_file(dir / (stem + ".json"), report_to_json(r).dump(2) + "\n");
    write_pfm(dir / (stem + "_error.pfm"), r.per_pixel_abs_error);
    write_heat_png(dir / (stem + "_error.png"), r.per_pixel_abs_error, r.mask);
}

} // namespace hsbp

#pragma once

// Shape-from-silhouette voxel carving and extraction of the per-pixel depth
// label sets that initialize the Helmholtz search.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "hsbp/error.hpp"
#include "hsbp/geometry.hpp"
#include "hsbp/grid.hpp"
#include "hsbp/image_io.hpp"
#include "hsbp/parallel.hpp"
#include "hsbp/scene.hpp"

namespace hsbp {

struct VoxelDims {
    int nx = 1, ny = 1, nz = 1;
    std::size_t total() const {
        return static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny) * static_cast<std::size_t>(nz);
    }
    friend bool operator==(const VoxelDims&, const VoxelDims&) = default;
};

// Axis-aligned grid of cubic voxels; `origin` is the min corner of voxel (0,0,0).
class VoxelGrid {
public:
    VoxelGrid() = default;
    VoxelGrid(const Vec3& origin, double spacing, VoxelDims dims, bool fill = true)
        : origin_(origin), spacing_(spacing), dims_(dims) {
        require(spacing > 0.0 && std::isfinite(spacing), ErrorKind::InvalidArgument, "voxel spacing must be > 0");
        require(dims.nx >= 1 && dims.ny >= 1 && dims.nz >= 1, ErrorKind::InvalidArgument, "voxel dims must be >= 1");
        occupancy_.assign(dims.total(), fill ? 1 : 0);
    }

    // Cubic voxels covering `box`, with `voxels` cells along its longest side.
    static VoxelGrid covering(const Box& box, int voxels) {
        require(box.valid(), ErrorKind::InvalidArgument, "voxel volume is empty");
        require(voxels >= 1, ErrorKind::InvalidArgument, "voxel resolution must be >= 1");
        const Vec3 e = box.extent();
        const double spacing = e.maxCoeff() / voxels;
        auto cells = [&](double len) { return std::max(1, static_cast<int>(std::ceil(len / spacing - 1e-9))); };
        return VoxelGrid(box.min, spacing, VoxelDims{cells(e.x()), cells(e.y()), cells(e.z())});
    }

    const Vec3& origin() const noexcept { return origin_; }
    double spacing() const noexcept { return spacing_; }
    const VoxelDims& dims() const noexcept { return dims_; }

    std::size_t index(int i, int j, int k) const noexcept {
        return (static_cast<std::size_t>(k) * dims_.ny + static_cast<std::size_t>(j)) * dims_.nx +
               static_cast<std::size_t>(i);
    }

    bool occupied(int i, int j, int k) const noexcept { return occupancy_[index(i, j, k)] != 0; }
    void set(int i, int j, int k, bool v) noexcept { occupancy_[index(i, j, k)] = v ? 1 : 0; }

    Vec3 center(int i, int j, int k) const noexcept {
        return origin_ + spacing_ * Vec3(i + 0.5, j + 0.5, k + 0.5);
    }

    Box bounds() const {
        return Box{origin_, origin_ + spacing_ * Vec3(dims_.nx, dims_.ny, dims_.nz)};
    }

    std::size_t occupied_count() const {
        return static_cast<std::size_t>(std::count(occupancy_.begin(), occupancy_.end(), 1));
    }

    double occupied_volume() const { return static_cast<double>(occupied_count()) * spacing_ * spacing_ * spacing_; }

    std::span<const unsigned char> occupancy() const noexcept { return occupancy_; }
    std::span<unsigned char> occupancy() noexcept { return occupancy_; }

    // Bounding box of occupied voxels; invalid box when nothing is occupied.
    Box occupied_bounds() const {
        Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
        Vec3 hi = -lo;
        for (int k = 0; k < dims_.nz; ++k)
            for (int j = 0; j < dims_.ny; ++j)
                for (int i = 0; i < dims_.nx; ++i)
                    if (occupied(i, j, k)) {
                        const Vec3 c0 = origin_ + spacing_ * Vec3(i, j, k);
                        lo = lo.cwiseMin(c0);
                        hi = hi.cwiseMax(c0 + Vec3::Constant(spacing_));
                    }
        if (!(hi.array() > lo.array()).all()) return Box{};
        return Box{lo, hi};
    }

    friend bool operator==(const VoxelGrid&, const VoxelGrid&) = default;

private:
    Vec3 origin_ = Vec3::Zero();
    double spacing_ = 1.0;
    VoxelDims dims_;
    std::vector<unsigned char> occupancy_;
};

// Object pixels (strictly brighter than `threshold`) are true.
inline Mask binarize(const Image& image, double threshold) {
    Mask m(image.width(), image.height(), 0);
    for (std::size_t i = 0; i < image.size(); ++i) m[i] = image[i] > threshold ? 1 : 0;
    return m;
}

struct Silhouette {
    ViewStation station;
    Mask mask;
};

// How a silhouette treats voxels whose center projects outside its image.
enum class OutOfView {
    Background, // conservative: the voxel is carved
    Ignore,     // the view casts no vote; voxels outside every view are still carved
};

inline VoxelGrid carve(const VoxelGrid& grid, std::span<const Silhouette> silhouettes,
                       OutOfView policy = OutOfView::Background) {
    require(!silhouettes.empty(), ErrorKind::InvalidArgument, "carving needs at least one silhouette");
    require(grid.dims().total() > 0, ErrorKind::InvalidArgument, "carving needs a nonempty grid");
    VoxelGrid out = grid;
    const auto& d = grid.dims();
    parallel_for(static_cast<std::size_t>(d.nz), [&](std::size_t kk) {
        const int k = static_cast<int>(kk);
        for (int j = 0; j < d.ny; ++j)
            for (int i = 0; i < d.nx; ++i) {
                if (!grid.occupied(i, j, k)) continue;
                const Vec3 c = grid.center(i, j, k);
                bool keep = true;
                bool seen = false;
                for (const auto& s : silhouettes) {
                    const Eigen::Vector3d h = s.station.projection() * c.homogeneous();
                    const bool in_front = s.station.depth_of(c) > 0.0;
                    int px = -1, py = -1;
                    if (in_front) {
                        px = static_cast<int>(std::lround(h.x() / h.z()));
                        py = static_cast<int>(std::lround(h.y() / h.z()));
                    }
                    if (!in_front || !s.mask.contains(px, py)) {
                        if (policy == OutOfView::Background) {
                            keep = false;
                            break;
                        }
                        continue;
                    }
                    seen = true;
                    if (!s.mask(px, py)) {
                        keep = false;
                        break;
                    }
                }
                if (!seen) keep = false;
                out.set(i, j, k, keep);
            }
    });
    require(out.occupied_count() > 0, ErrorKind::EmptyHull,
            "no voxel survived carving (check calibration and silhouette threshold)");
    return out;
}

// Per-pixel ordered depth labels along the principal rays.
class CandidateVolume {
public:
    CandidateVolume() = default;
    CandidateVolume(int width, int height) : width_(width), height_(height), offsets_(static_cast<std::size_t>(width) * height + 1, 0) {}

    // Builds from per-pixel label lists in raster order.
    static CandidateVolume from_lists(int width, int height, const std::vector<std::vector<double>>& lists) {
        require(lists.size() == static_cast<std::size_t>(width) * height, ErrorKind::DimensionMismatch,
                "label list count does not match image size");
        CandidateVolume cv(width, height);
        for (std::size_t p = 0; p < lists.size(); ++p) {
            for (std::size_t l = 1; l < lists[p].size(); ++l)
                require(lists[p][l] > lists[p][l - 1], ErrorKind::InvalidArgument, "labels must be strictly increasing");
            cv.depths_.insert(cv.depths_.end(), lists[p].begin(), lists[p].end());
            cv.offsets_[p + 1] = cv.depths_.size();
        }
        return cv;
    }

    int width() const noexcept { return width_; }
    int height() const noexcept { return height_; }
    std::size_t pixel_count() const noexcept { return static_cast<std::size_t>(width_) * height_; }

    std::size_t pixel(int x, int y) const noexcept { return static_cast<std::size_t>(y) * width_ + x; }

    std::span<const double> labels(std::size_t p) const noexcept {
        return {depths_.data() + offsets_[p], offsets_[p + 1] - offsets_[p]};
    }
    std::span<const double> labels(int x, int y) const noexcept { return labels(pixel(x, y)); }

    std::size_t label_count(std::size_t p) const noexcept { return offsets_[p + 1] - offsets_[p]; }
    // Flat index of (pixel, label) into per-label caches.
    std::size_t flat(std::size_t p, std::size_t label) const noexcept { return offsets_[p] + label; }
    std::size_t total_labels() const noexcept { return depths_.size(); }

    bool masked(std::size_t p) const noexcept { return label_count(p) > 0; }
    bool masked(int x, int y) const noexcept { return masked(pixel(x, y)); }

    Mask mask() const {
        Mask m(width_, height_, 0);
        for (std::size_t p = 0; p < pixel_count(); ++p) m[p] = masked(p) ? 1 : 0;
        return m;
    }

    std::size_t max_labels() const {
        std::size_t n = 0;
        for (std::size_t p = 0; p < pixel_count(); ++p) n = std::max(n, label_count(p));
        return n;
    }

private:
    int width_ = 0;
    int height_ = 0;
    std::vector<std::size_t> offsets_;
    std::vector<double> depths_;
};

namespace detail {

// Index subsampling that keeps the first and last entries.
inline std::vector<double> subsample(const std::vector<double>& v, std::size_t max_count) {
    if (max_count == 0 || v.size() <= max_count) return v;
    if (max_count == 1) return {v.front()};
    std::vector<double> out;
    out.reserve(max_count);
    for (std::size_t i = 0; i < max_count; ++i) {
        const std::size_t idx = (i * (v.size() - 1) + (max_count - 1) / 2) / (max_count - 1);
        if (out.empty() || v[idx] > out.back()) out.push_back(v[idx]);
    }
    return out;
}

} // namespace detail

// Voxel-entry depths of occupied voxels along one principal ray, via
// Amanatides-Woo traversal.
inline std::vector<double> march_ray(const VoxelGrid& grid, const Vec3& origin, const Vec3& dir) {
    std::vector<double> entries;
    const Box b = grid.bounds();
    double t0 = 0.0;
    double t1 = std::numeric_limits<double>::infinity();
    for (int a = 0; a < 3; ++a) {
        if (dir(a) == 0.0) {
            if (origin(a) < b.min(a) || origin(a) > b.max(a)) return entries;
            continue;
        }
        double ta = (b.min(a) - origin(a)) / dir(a);
        double tb = (b.max(a) - origin(a)) / dir(a);
        if (ta > tb) std::swap(ta, tb);
        t0 = std::max(t0, ta);
        t1 = std::min(t1, tb);
    }
    if (!(t0 < t1)) return entries;

    const double h = grid.spacing();
    const auto& d = grid.dims();
    const Vec3 start = origin + dir * (t0 + 1e-12 * std::max(1.0, t0));
    int cell[3];
    int step[3];
    double t_max[3];
    double t_delta[3];
    const int n[3] = {d.nx, d.ny, d.nz};
    for (int a = 0; a < 3; ++a) {
        cell[a] = std::clamp(static_cast<int>(std::floor((start(a) - grid.origin()(a)) / h)), 0, n[a] - 1);
        if (dir(a) > 0.0) {
            step[a] = 1;
            t_max[a] = (grid.origin()(a) + (cell[a] + 1) * h - origin(a)) / dir(a);
            t_delta[a] = h / dir(a);
        } else if (dir(a) < 0.0) {
            step[a] = -1;
            t_max[a] = (grid.origin()(a) + cell[a] * h - origin(a)) / dir(a);
            t_delta[a] = -h / dir(a);
        } else {
            step[a] = 0;
            t_max[a] = std::numeric_limits<double>::infinity();
            t_delta[a] = std::numeric_limits<double>::infinity();
        }
    }
    double t_enter = t0;
    while (t_enter < t1) {
        if (grid.occupied(cell[0], cell[1], cell[2])) {
            if (entries.empty() || t_enter - entries.back() >= 0.5 * h) entries.push_back(t_enter);
        }
        int axis = 0;
        if (t_max[1] < t_max[axis]) axis = 1;
        if (t_max[2] < t_max[axis]) axis = 2;
        t_enter = t_max[axis];
        cell[axis] += step[axis];
        if (cell[axis] < 0 || cell[axis] >= n[axis]) break;
        t_max[axis] += t_delta[axis];
    }
    return entries;
}

// `labels_max` == 0 keeps every entry.
inline CandidateVolume extract_candidates(const VoxelGrid& grid, const ViewStation& principal, int width, int height,
                                          std::size_t labels_max = 0) {
    require(width > 0 && height > 0, ErrorKind::InvalidArgument, "image dimensions must be positive");
    std::vector<std::vector<double>> lists(static_cast<std::size_t>(width) * height);
    parallel_for(lists.size(), [&](std::size_t p) {
        const int x = static_cast<int>(p % width);
        const int y = static_cast<int>(p / width);
        const Vec3 dir = principal.ray(Vec2(x, y));
        std::vector<double> entries = march_ray(grid, principal.center(), dir);
        std::erase_if(entries, [](double t) { return t <= 0.0; });
        lists[p] = detail::subsample(entries, labels_max);
    });
    return CandidateVolume::from_lists(width, height, lists);
}

// ---------------------------------------------------------------------------
// Silhouettes and carving of a loaded scene.

// Silhouette per station: explicit silhouette images take precedence, otherwise
// the per-pixel maximum of the pair images that station's camera took. Each
// source image is thresholded at `threshold_fraction` of its own maximum.
inline std::vector<Silhouette> scene_silhouettes(const SceneConfig& scene, double threshold_fraction) {
    require(threshold_fraction >= 0.0 && threshold_fraction < 1.0, ErrorKind::InvalidArgument,
            "silhouette threshold must be in [0, 1)");
    std::vector<Silhouette> out;
    for (const auto& st : scene.stations) {
        std::vector<const Image*> sources;
        for (const auto& s : scene.silhouettes)
            if (s.station == st.id()) sources.push_back(&s.image);
        if (sources.empty()) {
            for (const auto& p : scene.pairs) {
                if (p.station_a == st.id()) sources.push_back(&p.image_ab);
                if (p.station_b == st.id()) sources.push_back(&p.image_ba);
            }
        }
        if (sources.empty()) continue;
        Mask mask(sources.front()->width(), sources.front()->height(), 0);
        for (const Image* img : sources) {
            require_same_shape(*img, mask, "silhouette sources of station '" + st.id() + "'");
            const Mask m = binarize(*img, threshold_fraction * max_value(*img));
            for (std::size_t i = 0; i < m.size(); ++i) mask[i] = mask[i] | m[i];
        }
        out.push_back(Silhouette{st, std::move(mask)});
    }
    return out;
}

// Coarse pass over the scene volume, then `voxels` cells along the longest
// side of the coarse hull's bounding box.
inline VoxelGrid carve_scene(const SceneConfig& scene, int voxels, double threshold_fraction,
                             OutOfView policy = OutOfView::Background) {
    require(scene.volume.has_value(), ErrorKind::ParseError, "calibration lacks the 'volume' bounding box");
    const auto silhouettes = scene_silhouettes(scene, threshold_fraction);
    const int coarse_n = std::clamp(voxels / 4, 8, 32);
    const VoxelGrid coarse = carve(VoxelGrid::covering(*scene.volume, coarse_n), silhouettes, policy);
    Box b = coarse.occupied_bounds();
    const Vec3 pad = Vec3::Constant(coarse.spacing());
    b.min = (b.min - pad).cwiseMax(scene.volume->min);
    b.max = (b.max + pad).cwiseMin(scene.volume->max);
    return carve(VoxelGrid::covering(b, voxels), silhouettes, policy);
}

// ---------------------------------------------------------------------------
// Export: JSON header plus little-endian uint32 run lengths (x fastest, then y,
// then z), alternating empty/occupied and starting with an empty run.

inline void write_hull(const std::filesystem::path& header_path, const VoxelGrid& grid) {
    auto runs_path = header_path;
    runs_path.replace_extension(".rle");
    std::string bytes;
    auto occ = grid.occupancy();
    unsigned char current = 0;
    std::uint32_t run = 0;
    std::size_t run_count = 0;
    auto emit = [&](std::uint32_t r) {
        for (int b = 0; b < 4; ++b) bytes.push_back(static_cast<char>((r >> (8 * b)) & 0xff));
        ++run_count;
    };
    for (unsigned char v : occ) {
        if (v != current) {
            emit(run);
            run = 0;
            current = v;
        }
        ++run;
    }
    emit(run);
    const Json header{{"origin", detail::to_json(grid.origin())},
                      {"spacing", grid.spacing()},
                      {"dims", {grid.dims().nx, grid.dims().ny, grid.dims().nz}},
                      {"order", "x-fastest"},
                      {"encoding", "rle-u32-le"},
                      {"first_run", "empty"},
                      {"runs", run_count},
                      {"occupied", grid.occupied_count()},
                      {"runs_file", runs_path.filename().string()}};
    detail::write_file(header_path, header.dump(2) + "\n");
    detail::write_file(runs_path, bytes);
}

inline VoxelGrid read_hull(const std::filesystem::path& header_path) {
    const Json h = detail::parse_json_file(header_path);
    const Json& dims = detail::field(h, "dims", "hull");
    require(dims.is_array() && dims.size() == 3, ErrorKind::ParseError, "hull: 'dims' must have 3 entries");
    VoxelGrid grid(detail::json_vec3(detail::field(h, "origin", "hull"), "origin"),
                   detail::number_field(h, "spacing", "hull"),
                   VoxelDims{dims[0].get<int>(), dims[1].get<int>(), dims[2].get<int>()}, false);
    const std::string bytes =
        detail::read_file(header_path.parent_path() / detail::string_field(h, "runs_file", "hull"));
    require(bytes.size() % 4 == 0, ErrorKind::ParseError, "hull: run file length is not a multiple of 4");
    auto occ = grid.occupancy();
    std::size_t pos = 0;
    unsigned char value = 0;
    for (std::size_t i = 0; i < bytes.size(); i += 4) {
        std::uint32_t r = 0;
        for (int b = 0; b < 4; ++b) r |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[i + b])) << (8 * b);
        require(pos + r <= occ.size(), ErrorKind::ParseError, "hull: runs exceed the grid size");
        std::fill_n(occ.begin() + static_cast<std::ptrdiff_t>(pos), r, value);
        pos += r;
        value ^= 1;
    }
    require(pos == occ.size(), ErrorKind::ParseError, "hull: runs do not cover the grid");
    return grid;
}

// ASCII point cloud of occupied voxel centers.
inline void write_hull_ply(const std::filesystem::path& path, const VoxelGrid& grid) {
    std::string body;
    const auto& d = grid.dims();
    std::size_t n = 0;
    char line[96];
    for (int k = 0; k < d.nz; ++k)
        for (int j = 0; j < d.ny; ++j)
            for (int i = 0; i < d.nx; ++i)
                if (grid.occupied(i, j, k)) {
                    const Vec3 c = grid.center(i, j, k);
                    std::snprintf(line, sizeof line, "%.6f %.6f %.6f\n", c.x(), c.y(), c.z());
                    body += line;
                    ++n;
                }
    const std::string header = "ply\nformat ascii 1.0\nelement vertex " + std::to_string(n) +
                               "\nproperty float x\nproperty float y\nproperty float z\nend_header\n";
    detail::write_file(path, header + body);
}

} // namespace hsbp

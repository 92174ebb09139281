#pragma once

// MAP-MRF labeling over the masked pixel grid and its min-sum (max-product)
// loopy belief propagation solver.
//
// Energy of a labeling z:
//
//   E(z) = sum_p (1 - alpha) E_d(z_p) + sum_p sum_{q in N(p)} alpha E_s(z_p, z_q)
//
// With the four-neighborhood each undirected edge appears twice in the double
// sum; with the forward two-neighborhood (right and down) it appears once.
// Messages carry the same weights so that beliefs minimize exactly E.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "hsbp/error.hpp"
#include "hsbp/geometry.hpp"
#include "hsbp/grid.hpp"
#include "hsbp/hull.hpp"
#include "hsbp/image_io.hpp"
#include "hsbp/parallel.hpp"
#include "hsbp/scene.hpp"

namespace hsbp {

enum class Neighborhood {
    Four,       // up, down, left, right
    ForwardTwo, // each pixel hears only from its right and lower neighbors
};

// Masked pixels become nodes; 4-adjacent masked pixels are joined by an edge.
class MrfGraph {
public:
    struct Edge {
        int a; // earlier in raster order
        int b; // right or lower neighbor of a
    };

    MrfGraph() = default;

    MrfGraph(const Mask& mask, std::span<const std::size_t> labels_per_pixel)
        : width_(mask.width()), height_(mask.height()), node_of_pixel_(mask.size(), -1) {
        require(labels_per_pixel.size() == mask.size(), ErrorKind::DimensionMismatch,
                "label counts do not match the mask size");
        label_offset_.push_back(0);
        for (std::size_t p = 0; p < mask.size(); ++p) {
            if (!mask[p]) continue;
            require(labels_per_pixel[p] > 0, ErrorKind::InvalidArgument, "masked pixel without labels");
            node_of_pixel_[p] = static_cast<int>(pixel_of_node_.size());
            pixel_of_node_.push_back(p);
            label_offset_.push_back(label_offset_.back() + labels_per_pixel[p]);
        }
        for (std::size_t n = 0; n < pixel_of_node_.size(); ++n) {
            const std::size_t p = pixel_of_node_[n];
            const int x = static_cast<int>(p % width_);
            const int y = static_cast<int>(p / width_);
            if (x + 1 < width_ && node_of_pixel_[p + 1] >= 0) edges_.push_back({static_cast<int>(n), node_of_pixel_[p + 1]});
            if (y + 1 < height_ && node_of_pixel_[p + width_] >= 0)
                edges_.push_back({static_cast<int>(n), node_of_pixel_[p + width_]});
        }
    }

    static MrfGraph from_candidates(const CandidateVolume& cv) {
        std::vector<std::size_t> counts(cv.pixel_count());
        for (std::size_t p = 0; p < counts.size(); ++p) counts[p] = cv.label_count(p);
        return MrfGraph(cv.mask(), counts);
    }

    int width() const noexcept { return width_; }
    int height() const noexcept { return height_; }
    std::size_t node_count() const noexcept { return pixel_of_node_.size(); }
    std::size_t edge_count() const noexcept { return edges_.size(); }
    std::span<const Edge> edges() const noexcept { return edges_; }
    const Edge& edge(std::size_t e) const noexcept { return edges_[e]; }

    int node_of_pixel(std::size_t p) const noexcept { return node_of_pixel_[p]; }
    std::size_t pixel_of_node(std::size_t n) const noexcept { return pixel_of_node_[n]; }
    std::size_t labels(std::size_t n) const noexcept { return label_offset_[n + 1] - label_offset_[n]; }
    std::size_t label_offset(std::size_t n) const noexcept { return label_offset_[n]; }
    std::size_t total_labels() const noexcept { return label_offset_.back(); }

private:
    int width_ = 0;
    int height_ = 0;
    std::vector<int> node_of_pixel_;
    std::vector<std::size_t> pixel_of_node_;
    std::vector<std::size_t> label_offset_;
    std::vector<Edge> edges_;
};

// ---------------------------------------------------------------------------
// Smoothness functionals.

// Angle between two unit normals, scaled to [0, 1].
inline double smoothness_s1(const Vec3& n_p, const Vec3& n_q) {
    return std::acos(std::clamp(n_p.dot(n_q), -1.0, 1.0)) / std::numbers::pi;
}

// Deviation of the candidate depth step from the integrated-surface step,
// squared and normalized by the label span `s`.
inline double smoothness_s2(double z_p, double z_q, double zin_p, double zin_q, double s = 1.0) {
    const double d = (z_p - z_q) - (zin_p - zin_q);
    return d * d / (s * s);
}

// Integrated-surface term that ignores the candidate labels.
inline double smoothness_s2_literal(double zin_p, double zin_q, double s = 1.0) {
    const double d = zin_p - zin_q;
    return d * d / (s * s);
}

// Dense per-edge cost tables, indexed [label_a * labels_b + label_b].
template <class T = double>
class TablePairwise {
public:
    TablePairwise() = default;
    explicit TablePairwise(const MrfGraph& g) {
        offset_.reserve(g.edge_count());
        stride_.reserve(g.edge_count());
        std::size_t total = 0;
        for (const auto& e : g.edges()) {
            offset_.push_back(total);
            stride_.push_back(g.labels(static_cast<std::size_t>(e.b)));
            total += g.labels(static_cast<std::size_t>(e.a)) * g.labels(static_cast<std::size_t>(e.b));
        }
        values_.assign(total, T{});
    }

    double operator()(std::size_t e, std::size_t la, std::size_t lb) const noexcept {
        return static_cast<double>(values_[offset_[e] + la * stride_[e] + lb]);
    }

    void set(std::size_t e, std::size_t la, std::size_t lb, double v) { values_[offset_[e] + la * stride_[e] + lb] = static_cast<T>(v); }

private:
    std::vector<std::size_t> offset_;
    std::vector<std::size_t> stride_;
    std::vector<T> values_;
};

// S1 over per-label normals (flat, aligned with the graph's label offsets).
inline TablePairwise<float> normal_pairwise(const MrfGraph& g, std::span<const Vec3> label_normals) {
    require(label_normals.size() == g.total_labels(), ErrorKind::DimensionMismatch, "one normal per label expected");
    TablePairwise<float> table(g);
    parallel_for(g.edge_count(), [&](std::size_t e) {
        const auto& ed = g.edge(e);
        const std::size_t oa = g.label_offset(static_cast<std::size_t>(ed.a));
        const std::size_t ob = g.label_offset(static_cast<std::size_t>(ed.b));
        for (std::size_t la = 0; la < g.labels(static_cast<std::size_t>(ed.a)); ++la)
            for (std::size_t lb = 0; lb < g.labels(static_cast<std::size_t>(ed.b)); ++lb)
                table.set(e, la, lb, smoothness_s1(label_normals[oa + la], label_normals[ob + lb]));
    });
    return table;
}

// S2 evaluated on the fly from label depths and per-node integrated depths.
class IntegratedDepthPairwise {
public:
    IntegratedDepthPairwise() = default;

    // `label_depths` is flat over the graph's labels; `zin` holds one value per
    // node. The normalizer of each edge is the depth span of the union of its
    // endpoints' label sets.
    IntegratedDepthPairwise(const MrfGraph& g, std::vector<double> label_depths, std::vector<double> zin, bool literal)
        : depths_(std::move(label_depths)), literal_(literal) {
        require(depths_.size() == g.total_labels(), ErrorKind::DimensionMismatch, "one depth per label expected");
        require(zin.size() == g.node_count(), ErrorKind::DimensionMismatch, "one integrated depth per node expected");
        edges_.resize(g.edge_count());
        for (std::size_t e = 0; e < g.edge_count(); ++e) {
            const auto& ed = g.edge(e);
            const auto a = static_cast<std::size_t>(ed.a), b = static_cast<std::size_t>(ed.b);
            const double lo = std::min(depths_[g.label_offset(a)], depths_[g.label_offset(b)]);
            const double hi = std::max(depths_[g.label_offset(a) + g.labels(a) - 1], depths_[g.label_offset(b) + g.labels(b) - 1]);
            const double s = hi - lo;
            edges_[e] = {g.label_offset(a), g.label_offset(b), zin[a] - zin[b], s > 0.0 ? 1.0 / (s * s) : 1.0};
        }
    }

    double operator()(std::size_t e, std::size_t la, std::size_t lb) const noexcept {
        const EdgeTerm& t = edges_[e];
        if (literal_) return t.dzin * t.dzin * t.inv_s2;
        const double d = depths_[t.offset_a + la] - depths_[t.offset_b + lb] - t.dzin;
        return d * d * t.inv_s2;
    }

private:
    // Copied out of the graph so the term stays valid when the MRF is moved.
    struct EdgeTerm {
        std::size_t offset_a;
        std::size_t offset_b;
        double dzin;
        double inv_s2;
    };
    std::vector<double> depths_;
    std::vector<EdgeTerm> edges_;
    bool literal_ = false;
};

template <class Pairwise>
struct GridMrf {
    MrfGraph graph;
    std::vector<double> unary; // flat over graph labels
    Pairwise pairwise;         // callable (edge, label_a, label_b) -> cost
    double alpha = 0.5;
    Neighborhood neighborhood = Neighborhood::Four;

    double edge_weight() const noexcept { return neighborhood == Neighborhood::Four ? 2.0 * alpha : alpha; }

    void validate() const {
        require(alpha >= 0.0 && alpha < 1.0, ErrorKind::InvalidArgument, "alpha must lie in [0, 1)");
        require(unary.size() == graph.total_labels(), ErrorKind::DimensionMismatch, "one unary cost per label expected");
        for (double u : unary)
            require(std::isfinite(u) && u >= 0.0, ErrorKind::InvalidArgument, "unary costs must be finite and >= 0");
    }
};

template <class Pairwise>
double energy(const GridMrf<Pairwise>& mrf, std::span<const int> labeling) {
    const auto& g = mrf.graph;
    require(labeling.size() == g.node_count(), ErrorKind::DimensionMismatch, "one label per node expected");
    double e = 0.0;
    for (std::size_t n = 0; n < g.node_count(); ++n)
        e += (1.0 - mrf.alpha) * mrf.unary[g.label_offset(n) + static_cast<std::size_t>(labeling[n])];
    const double w = mrf.edge_weight();
    if (w != 0.0)
        for (std::size_t k = 0; k < g.edge_count(); ++k) {
            const auto& ed = g.edge(k);
            e += w * mrf.pairwise(k, static_cast<std::size_t>(labeling[static_cast<std::size_t>(ed.a)]),
                                  static_cast<std::size_t>(labeling[static_cast<std::size_t>(ed.b)]));
        }
    return e;
}

// ---------------------------------------------------------------------------
// Messages.

class MessageField {
public:
    struct Message {
        int from;
        int to;
        std::size_t edge;
        bool to_is_b;
        std::size_t offset; // into values(), length = labels(to)
    };

    MessageField() = default;

    MessageField(const MrfGraph& g, Neighborhood nb, double damping) : damping_(damping), incoming_(g.node_count()) {
        require(damping >= 0.0 && damping < 1.0, ErrorKind::InvalidArgument, "damping must lie in [0, 1)");
        std::size_t total = 0;
        auto add = [&](int from, int to, std::size_t e, bool to_is_b) {
            incoming_[static_cast<std::size_t>(to)].push_back(messages_.size());
            messages_.push_back(Message{from, to, e, to_is_b, total});
            total += g.labels(static_cast<std::size_t>(to));
        };
        for (std::size_t e = 0; e < g.edge_count(); ++e) {
            const auto& ed = g.edge(e);
            if (nb == Neighborhood::Four) add(ed.a, ed.b, e, true);
            add(ed.b, ed.a, e, false);
        }
        values_.assign(total, 0.0);
    }

    std::span<const Message> messages() const noexcept { return messages_; }
    std::span<const std::size_t> incoming(std::size_t node) const noexcept { return incoming_[node]; }
    std::span<const double> values() const noexcept { return values_; }
    std::span<double> values() noexcept { return values_; }

    std::span<const double> message(std::size_t m, const MrfGraph& g) const noexcept {
        return {values_.data() + messages_[m].offset, g.labels(static_cast<std::size_t>(messages_[m].to))};
    }

    int iteration() const noexcept { return iteration_; }
    void set_iteration(int t) noexcept { iteration_ = t; }
    double damping() const noexcept { return damping_; }

private:
    double damping_ = 0.0;
    int iteration_ = 0;
    std::vector<Message> messages_;
    std::vector<std::vector<std::size_t>> incoming_;
    std::vector<double> values_;
};

inline void normalize_min_zero(std::span<double> v) {
    if (v.empty()) return;
    const double m = *std::min_element(v.begin(), v.end());
    for (auto& x : v) x -= m;
}

// Unnormalized, undamped message m_{p->q}(z_q) computed from `field`'s
// current (t-1) values.
template <class Pairwise>
void compute_message(const GridMrf<Pairwise>& mrf, const MessageField& field, std::size_t m, std::span<double> out,
                     std::vector<double>& scratch) {
    const auto& g = mrf.graph;
    const auto& msg = field.messages()[m];
    const auto p = static_cast<std::size_t>(msg.from);
    const std::size_t lp = g.labels(p);
    const std::size_t lq = g.labels(static_cast<std::size_t>(msg.to));
    scratch.resize(lp);
    for (std::size_t z = 0; z < lp; ++z) scratch[z] = (1.0 - mrf.alpha) * mrf.unary[g.label_offset(p) + z];
    for (std::size_t in : field.incoming(p)) {
        if (field.messages()[in].from == msg.to) continue;
        const auto v = field.message(in, g);
        for (std::size_t z = 0; z < lp; ++z) scratch[z] += v[z];
    }
    const double w = mrf.edge_weight();
    for (std::size_t zq = 0; zq < lq; ++zq) {
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t zp = 0; zp < lp; ++zp) {
            const double s = w == 0.0 ? 0.0 : (msg.to_is_b ? mrf.pairwise(msg.edge, zp, zq) : mrf.pairwise(msg.edge, zq, zp));
            best = std::min(best, w * s + scratch[zp]);
        }
        out[zq] = best;
    }
}

// Normalized (min 0) and damped message against the field's previous value.
template <class Pairwise>
std::vector<double> send_message(const GridMrf<Pairwise>& mrf, const MessageField& field, std::size_t m) {
    std::vector<double> out(mrf.graph.labels(static_cast<std::size_t>(field.messages()[m].to)));
    std::vector<double> scratch;
    compute_message(mrf, field, m, out, scratch);
    normalize_min_zero(out);
    const double d = field.damping();
    if (d > 0.0) {
        const auto old = field.message(m, mrf.graph);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = (1.0 - d) * out[i] + d * old[i];
        normalize_min_zero(out);
    }
    return out;
}

struct BeliefResult {
    std::vector<double> beliefs; // flat over graph labels
    std::vector<int> chosen;     // per node
    // Entry 0 is the data-term-only labeling; entry t the labeling after t iterations.
    std::vector<double> energy_trace;
    MessageField messages;

    Grid<int> chosen_grid(const MrfGraph& g) const {
        Grid<int> out(g.width(), g.height(), -1);
        for (std::size_t n = 0; n < chosen.size(); ++n) out[g.pixel_of_node(n)] = chosen[n];
        return out;
    }
};

namespace detail {

// Belief argmin per node; ties go to the smallest label index.
inline void argmin_beliefs(const MrfGraph& g, std::span<const double> beliefs, std::vector<int>& chosen) {
    chosen.resize(g.node_count());
    for (std::size_t n = 0; n < g.node_count(); ++n) {
        const std::size_t o = g.label_offset(n);
        std::size_t best = 0;
        for (std::size_t l = 1; l < g.labels(n); ++l)
            if (beliefs[o + l] < beliefs[o + best]) best = l;
        chosen[n] = static_cast<int>(best);
    }
}

template <class Pairwise>
void compute_beliefs(const GridMrf<Pairwise>& mrf, const MessageField& field, std::vector<double>& beliefs) {
    const auto& g = mrf.graph;
    beliefs.resize(g.total_labels());
    for (std::size_t n = 0; n < g.node_count(); ++n) {
        const std::size_t o = g.label_offset(n);
        for (std::size_t l = 0; l < g.labels(n); ++l) beliefs[o + l] = (1.0 - mrf.alpha) * mrf.unary[o + l];
        for (std::size_t in : field.incoming(n)) {
            const auto v = field.message(in, g);
            for (std::size_t l = 0; l < g.labels(n); ++l) beliefs[o + l] += v[l];
        }
    }
}

} // namespace detail

// Synchronous (flood) schedule over double-buffered messages.
template <class Pairwise>
BeliefResult run_bp(const GridMrf<Pairwise>& mrf, int iterations, double damping = 0.5) {
    require(iterations >= 1, ErrorKind::InvalidArgument, "BP needs at least one iteration");
    mrf.validate();
    const auto& g = mrf.graph;
    BeliefResult result;
    MessageField current(g, mrf.neighborhood, damping);
    MessageField next = current;

    detail::compute_beliefs(mrf, current, result.beliefs);
    detail::argmin_beliefs(g, result.beliefs, result.chosen);
    result.energy_trace.push_back(energy(mrf, result.chosen));

    const std::size_t message_count = current.messages().size();
    for (int t = 1; t <= iterations; ++t) {
        parallel_for(message_count, [&](std::size_t m) {
            thread_local std::vector<double> scratch;
            const auto& msg = current.messages()[m];
            std::span<double> out(next.values().data() + msg.offset, g.labels(static_cast<std::size_t>(msg.to)));
            compute_message(mrf, current, m, out, scratch);
            normalize_min_zero(out);
            if (damping > 0.0) {
                const auto old = current.message(m, g);
                for (std::size_t i = 0; i < out.size(); ++i) out[i] = (1.0 - damping) * out[i] + damping * old[i];
                normalize_min_zero(out);
            }
        });
        for (double v : next.values())
            require(std::isfinite(v), ErrorKind::NonFinite, "non-finite message at iteration " + std::to_string(t));
        next.set_iteration(t);
        std::swap(current, next);
        detail::compute_beliefs(mrf, current, result.beliefs);
        detail::argmin_beliefs(g, result.beliefs, result.chosen);
        result.energy_trace.push_back(energy(mrf, result.chosen));
    }
    result.messages = std::move(current);
    return result;
}

struct MapSolution {
    std::vector<int> labeling;
    double energy = 0.0;
};

inline constexpr double kBruteForceLimit = 1e7;

// Exact minimizer by exhaustive enumeration with incremental energies; the
// lexicographically first optimum wins ties.
template <class Pairwise>
MapSolution brute_force_map(const GridMrf<Pairwise>& mrf) {
    mrf.validate();
    const auto& g = mrf.graph;
    double configs = 1.0;
    for (std::size_t n = 0; n < g.node_count(); ++n) configs *= static_cast<double>(g.labels(n));
    require(configs <= kBruteForceLimit, ErrorKind::TooLarge,
            "brute force over " + std::to_string(configs) + " configurations exceeds the limit");

    // back[n]: edges joining n to an earlier node.
    std::vector<std::vector<std::size_t>> back(g.node_count());
    for (std::size_t e = 0; e < g.edge_count(); ++e) back[static_cast<std::size_t>(g.edge(e).b)].push_back(e);

    const double w = mrf.edge_weight();
    std::vector<int> current(g.node_count(), 0);
    MapSolution best{std::vector<int>(g.node_count(), 0), std::numeric_limits<double>::infinity()};

    auto recurse = [&](auto&& self, std::size_t n, double partial) -> void {
        if (n == g.node_count()) {
            if (partial < best.energy) {
                best.energy = partial;
                best.labeling = current;
            }
            return;
        }
        for (std::size_t l = 0; l < g.labels(n); ++l) {
            current[n] = static_cast<int>(l);
            double e = partial + (1.0 - mrf.alpha) * mrf.unary[g.label_offset(n) + l];
            if (w != 0.0)
                for (std::size_t k : back[n]) {
                    const auto a = static_cast<std::size_t>(g.edge(k).a);
                    e += w * mrf.pairwise(k, static_cast<std::size_t>(current[a]), l);
                }
            self(self, n + 1, e);
        }
    };
    recurse(recurse, 0, 0.0);
    if (g.node_count() == 0) best.energy = 0.0;
    return best;
}

// ---------------------------------------------------------------------------
// Debug dump: JSON header plus little-endian float64 message values in
// message order.

inline void write_messages(const std::filesystem::path& header_path, const MrfGraph& g, const MessageField& field) {
    auto bin = header_path;
    bin.replace_extension(".bin");
    std::vector<std::size_t> labels(static_cast<std::size_t>(g.width()) * g.height(), 0);
    for (std::size_t n = 0; n < g.node_count(); ++n) labels[g.pixel_of_node(n)] = g.labels(n);
    Json msgs = Json::array();
    for (const auto& m : field.messages())
        msgs.push_back({g.pixel_of_node(static_cast<std::size_t>(m.from)), g.pixel_of_node(static_cast<std::size_t>(m.to)), m.offset});
    const Json header{{"width", g.width()},
                      {"height", g.height()},
                      {"labels_per_pixel", labels},
                      {"iteration", field.iteration()},
                      {"damping", field.damping()},
                      {"encoding", "f64-le"},
                      {"messages", msgs},
                      {"message_layout", "[from_pixel, to_pixel, value_offset]; length = labels of to_pixel"},
                      {"values_file", bin.filename().string()}};
    std::string bytes;
    bytes.reserve(field.values().size() * 8);
    for (double v : field.values()) {
        std::uint64_t u;
        std::memcpy(&u, &v, 8);
        for (int b = 0; b < 8; ++b) bytes.push_back(static_cast<char>((u >> (8 * b)) & 0xff));
    }
    detail::write_file(header_path, header.dump() + "\n");
    detail::write_file(bin, bytes);
}

} // namespace hsbp

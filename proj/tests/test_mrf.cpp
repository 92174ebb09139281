#include <gtest/gtest.h>

#include "fixtures.hpp"

using namespace hsbp;

namespace {

using Table = TablePairwise<double>;

MrfGraph dense_graph(int w, int h, std::size_t labels) {
    return MrfGraph(Mask(w, h, 1), std::vector<std::size_t>(static_cast<std::size_t>(w) * h, labels));
}

// |la - lb| on every edge.
Table absolute_pairwise(const MrfGraph& g) {
    Table t(g);
    for (std::size_t e = 0; e < g.edge_count(); ++e) {
        const auto& ed = g.edge(e);
        for (std::size_t a = 0; a < g.labels(ed.a); ++a)
            for (std::size_t b = 0; b < g.labels(ed.b); ++b)
                t.set(e, a, b, std::abs(static_cast<double>(a) - static_cast<double>(b)));
    }
    return t;
}

GridMrf<Table> random_mrf(const MrfGraph& g, std::uint64_t seed, double alpha) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    GridMrf<Table> m{g, std::vector<double>(g.total_labels()), Table(g), alpha, Neighborhood::Four};
    for (double& v : m.unary) v = u(rng);
    for (std::size_t e = 0; e < g.edge_count(); ++e)
        for (std::size_t a = 0; a < g.labels(g.edge(e).a); ++a)
            for (std::size_t b = 0; b < g.labels(g.edge(e).b); ++b) m.pairwise.set(e, a, b, u(rng));
    return m;
}

// Min-sum dynamic programming on a forest, written against the energy
// definition only: leaves-to-root sweeps, then root-to-leaves backtracking.
std::vector<int> tree_oracle(const GridMrf<Table>& mrf) {
    const auto& g = mrf.graph;
    const double w = mrf.edge_weight();
    std::vector<std::vector<std::pair<std::size_t, std::size_t>>> adj(g.node_count()); // (neighbor, edge)
    for (std::size_t e = 0; e < g.edge_count(); ++e) {
        adj[g.edge(e).a].push_back({static_cast<std::size_t>(g.edge(e).b), e});
        adj[g.edge(e).b].push_back({static_cast<std::size_t>(g.edge(e).a), e});
    }
    auto pair_cost = [&](std::size_t e, std::size_t from, std::size_t lf, std::size_t lt) {
        return static_cast<int>(from) == g.edge(e).a ? mrf.pairwise(e, lf, lt) : mrf.pairwise(e, lt, lf);
    };
    std::vector<int> parent(g.node_count(), -2), parent_edge(g.node_count(), -1), order;
    for (std::size_t root = 0; root < g.node_count(); ++root) {
        if (parent[root] != -2) continue;
        parent[root] = -1;
        std::vector<std::size_t> stack{root};
        while (!stack.empty()) {
            const std::size_t n = stack.back();
            stack.pop_back();
            order.push_back(n);
            for (auto [m, e] : adj[n])
                if (parent[m] == -2) {
                    parent[m] = static_cast<int>(n);
                    parent_edge[m] = static_cast<int>(e);
                    stack.push_back(m);
                }
        }
    }
    // cost[n][l]: best energy of n's subtree with n at label l.
    std::vector<std::vector<double>> cost(g.node_count());
    for (std::size_t n = 0; n < g.node_count(); ++n)
        for (std::size_t l = 0; l < g.labels(n); ++l) cost[n].push_back((1.0 - mrf.alpha) * mrf.unary[g.label_offset(n) + l]);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        const std::size_t n = *it;
        if (parent[n] < 0) continue;
        const auto p = static_cast<std::size_t>(parent[n]);
        const auto e = static_cast<std::size_t>(parent_edge[n]);
        for (std::size_t lp = 0; lp < g.labels(p); ++lp) {
            double best = std::numeric_limits<double>::infinity();
            for (std::size_t l = 0; l < g.labels(n); ++l) best = std::min(best, cost[n][l] + w * pair_cost(e, n, l, lp));
            cost[p][lp] += best;
        }
    }
    std::vector<int> label(g.node_count(), 0);
    for (std::size_t n : order) {
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t l = 0; l < g.labels(n); ++l) {
            double c = cost[n][l];
            if (parent[n] >= 0)
                c += w * pair_cost(static_cast<std::size_t>(parent_edge[n]), n, l,
                                   static_cast<std::size_t>(label[static_cast<std::size_t>(parent[n])]));
            if (c < best) best = c, label[n] = static_cast<int>(l);
        }
    }
    return label;
}

} // namespace

TEST(SmoothnessS1, Examples) {
    const Vec3 n = Vec3(1, 2, -2).normalized();
    EXPECT_EQ(smoothness_s1(n, n), 0.0);
    EXPECT_NEAR(smoothness_s1(n, -n), 1.0, 1e-12);
    EXPECT_NEAR(smoothness_s1(Vec3::UnitX(), Vec3::UnitY()), 0.5, 1e-15);
}

TEST(SmoothnessS1, SymmetricAndBounded) {
    std::mt19937_64 rng(1);
    std::normal_distribution<double> g(0.0, 1.0);
    for (int i = 0; i < 200; ++i) {
        const Vec3 a = Vec3(g(rng), g(rng), g(rng)).normalized();
        const Vec3 b = Vec3(g(rng), g(rng), g(rng)).normalized();
        EXPECT_EQ(smoothness_s1(a, b), smoothness_s1(b, a));
        EXPECT_GE(smoothness_s1(a, b), 0.0);
        EXPECT_LE(smoothness_s1(a, b), 1.0);
    }
}

TEST(SmoothnessS2, Examples) {
    EXPECT_EQ(smoothness_s2(3.0, 2.5, 1.2, 0.7), 0.0);
    EXPECT_EQ(smoothness_s2(2.0, 2.0, 0.4, 0.4), 0.0);
    EXPECT_EQ(smoothness_s2(3.0, 1.0, 0.0, 0.0, 1.0), 4.0);
    EXPECT_EQ(smoothness_s2(3.0, 1.0, 0.0, 0.0, 2.0), 1.0);
}

TEST(SmoothnessS2, SymmetricUnderPairExchange) {
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(-3.0, 3.0);
    for (int i = 0; i < 200; ++i) {
        const double zp = u(rng), zq = u(rng), ip = u(rng), iq = u(rng);
        EXPECT_DOUBLE_EQ(smoothness_s2(zp, zq, ip, iq), smoothness_s2(zq, zp, iq, ip));
        EXPECT_DOUBLE_EQ(smoothness_s2(zp, zp, ip, iq), smoothness_s2_literal(ip, iq));
    }
}

TEST(Pairwise, NormalTableMatchesS1) {
    const MrfGraph g = dense_graph(2, 2, 2);
    std::vector<Vec3> normals;
    for (int i = 0; i < 8; ++i) normals.push_back(Vec3(std::cos(i), std::sin(i), -1.0).normalized());
    const auto table = normal_pairwise(g, normals);
    for (std::size_t e = 0; e < g.edge_count(); ++e)
        for (std::size_t a = 0; a < 2; ++a)
            for (std::size_t b = 0; b < 2; ++b)
                EXPECT_NEAR(table(e, a, b),
                            smoothness_s1(normals[g.label_offset(g.edge(e).a) + a], normals[g.label_offset(g.edge(e).b) + b]),
                            1e-6);
}

TEST(Pairwise, IntegratedDepthUsesUnionSpan) {
    const std::vector<std::size_t> counts{2, 2};
    const MrfGraph g(Mask(2, 1, 1), counts);
    ASSERT_EQ(g.edge_count(), 1u);
    const IntegratedDepthPairwise s2(g, {1.0, 2.0, 1.5, 3.0}, {0.25, 0.75}, false);
    EXPECT_DOUBLE_EQ(s2(0, 0, 1), smoothness_s2(1.0, 3.0, 0.25, 0.75, 2.0));
    EXPECT_DOUBLE_EQ(s2(0, 1, 0), smoothness_s2(2.0, 1.5, 0.25, 0.75, 2.0));
    const IntegratedDepthPairwise lit(g, {1.0, 2.0, 1.5, 3.0}, {0.25, 0.75}, true);
    EXPECT_DOUBLE_EQ(lit(0, 0, 1), lit(0, 1, 0));
    EXPECT_DOUBLE_EQ(lit(0, 0, 1), smoothness_s2_literal(0.25, 0.75, 2.0));
}

TEST(Graph, EdgesJoinMaskedNeighborsOnly) {
    Mask m(3, 3, 1);
    m(1, 1) = 0;
    const MrfGraph g(m, std::vector<std::size_t>(9, 1));
    EXPECT_EQ(g.node_count(), 8u);
    EXPECT_EQ(g.edge_count(), 8u); // ring around the hole
    EXPECT_EQ(g.node_of_pixel(4), -1);
    EXPECT_THROW(MrfGraph(m, std::vector<std::size_t>(9, 0)), Error);
}

TEST(SendMessage, AlphaZeroIsConstant) {
    const MrfGraph g = dense_graph(2, 1, 3);
    GridMrf<Table> mrf{g, {0.3, 0.1, 0.9, 0.5, 0.2, 0.7}, absolute_pairwise(g), 0.0, Neighborhood::Four};
    const MessageField field(g, Neighborhood::Four, 0.5);
    std::vector<double> raw(3), scratch;
    for (std::size_t m = 0; m < field.messages().size(); ++m) {
        compute_message(mrf, field, m, raw, scratch);
        const std::size_t from = static_cast<std::size_t>(field.messages()[m].from);
        const double lo = *std::min_element(mrf.unary.begin() + g.label_offset(from), mrf.unary.begin() + g.label_offset(from) + 3);
        for (double v : raw) EXPECT_DOUBLE_EQ(v, lo);
        for (double v : send_message(mrf, field, m)) EXPECT_EQ(v, 0.0);
    }
}

TEST(SendMessage, TwoNodeHandExample) {
    const MrfGraph g = dense_graph(2, 1, 2);
    GridMrf<Table> mrf{g, {0.0, 1.0, 1.0, 0.0}, absolute_pairwise(g), 0.5, Neighborhood::Four};
    const MessageField field(g, Neighborhood::Four, 0.0);
    std::size_t p_to_q = 0;
    for (std::size_t m = 0; m < field.messages().size(); ++m)
        if (field.messages()[m].from == 0) p_to_q = m;
    std::vector<double> raw(2), scratch;
    compute_message(mrf, field, p_to_q, raw, scratch);
    EXPECT_DOUBLE_EQ(raw[0], 0.0);
    EXPECT_DOUBLE_EQ(raw[1], 0.5);
    const auto sent = send_message(mrf, field, p_to_q);
    EXPECT_EQ(*std::min_element(sent.begin(), sent.end()), 0.0);

    const MapSolution best = brute_force_map(mrf);
    EXPECT_DOUBLE_EQ(best.energy, 0.5);
    EXPECT_EQ(best.labeling, (std::vector<int>{0, 0}));
    const BeliefResult bp = run_bp(mrf, 5, 0.0);
    EXPECT_NEAR(energy(mrf, bp.chosen), best.energy, 1e-12);
}

TEST(SendMessage, NormalizedToMinZero) {
    const MrfGraph g = dense_graph(3, 3, 4);
    GridMrf<Table> mrf = random_mrf(g, 9, 0.5);
    const BeliefResult r = run_bp(mrf, 3);
    for (std::size_t m = 0; m < r.messages.messages().size(); ++m) {
        const auto v = r.messages.message(m, g);
        EXPECT_EQ(*std::min_element(v.begin(), v.end()), 0.0);
    }
    EXPECT_EQ(r.messages.iteration(), 3);
}

TEST(RunBp, AlphaZeroIsPointwiseArgmin) {
    const MrfGraph g = dense_graph(5, 4, 6);
    GridMrf<Table> mrf = random_mrf(g, 4, 0.0);
    for (int t : {1, 4, 10}) {
        const BeliefResult r = run_bp(mrf, t);
        for (std::size_t n = 0; n < g.node_count(); ++n) {
            const auto first = mrf.unary.begin() + g.label_offset(n);
            EXPECT_EQ(r.chosen[n], static_cast<int>(std::min_element(first, first + 6) - first));
        }
    }
}

TEST(RunBp, ExactOnStrip) {
    const MrfGraph g = dense_graph(9, 1, 4);
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        GridMrf<Table> mrf = random_mrf(g, seed, 0.6);
        const BeliefResult r = run_bp(mrf, 9, 0.0);
        EXPECT_EQ(r.chosen, tree_oracle(mrf)) << seed;
        EXPECT_EQ(r.chosen, brute_force_map(mrf).labeling) << seed;
    }
}

TEST(RunBp, ExactOnCombTree) {
    // Column 0 is the spine, every other row a tooth.
    Mask m(5, 7, 0);
    for (int y = 0; y < 7; ++y) {
        m(0, y) = 1;
        if (y % 2 == 0)
            for (int x = 1; x < 5; ++x) m(x, y) = 1;
    }
    std::vector<std::size_t> counts(m.size());
    for (std::size_t p = 0; p < m.size(); ++p) counts[p] = 2 + p % 3;
    const MrfGraph g(m, counts);
    ASSERT_EQ(g.edge_count() + 1, g.node_count());
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        GridMrf<Table> mrf = random_mrf(g, 100 + seed, 0.5);
        const BeliefResult r = run_bp(mrf, 12, 0.0);
        EXPECT_EQ(r.chosen, tree_oracle(mrf)) << seed;
    }
}

TEST(RunBp, LoopyThreeByThree) {
    const MrfGraph g = dense_graph(3, 3, 3);
    int exact = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        GridMrf<Table> mrf = random_mrf(g, 200 + seed, 0.5);
        const BeliefResult r = run_bp(mrf, 50);
        const MapSolution best = brute_force_map(mrf);
        const double e = energy(mrf, r.chosen);
        EXPECT_LE(best.energy, e + 1e-12);
        if (e <= best.energy + 1e-9) ++exact;
        else std::printf("loopy gap seed %llu: %.6g\n", static_cast<unsigned long long>(seed), e - best.energy);
    }
    EXPECT_GE(exact, 10);
}

TEST(RunBp, FinalEnergyNotAboveDataTerm) {
    // Smooth ramp labeling observed through noisy unaries.
    const MrfGraph g = dense_graph(8, 8, 8);
    std::mt19937_64 rng(17);
    std::normal_distribution<double> noise(0.0, 0.3);
    GridMrf<Table> mrf{g, std::vector<double>(g.total_labels()), absolute_pairwise(g), 0.5, Neighborhood::Four};
    for (std::size_t n = 0; n < g.node_count(); ++n) {
        const int truth = static_cast<int>(g.pixel_of_node(n) % 8);
        for (std::size_t l = 0; l < 8; ++l)
            mrf.unary[g.label_offset(n) + l] = std::max(0.0, 0.2 * std::abs(static_cast<double>(l) - truth) + noise(rng) + 1.0);
    }
    const BeliefResult r = run_bp(mrf, 10);
    ASSERT_EQ(r.energy_trace.size(), 11u);
    EXPECT_LE(r.energy_trace.back(), r.energy_trace.front());
    EXPECT_DOUBLE_EQ(r.energy_trace.back(), energy(mrf, r.chosen));
}

TEST(RunBp, UnaryOffsetInvariance) {
    const MrfGraph g = dense_graph(4, 4, 5);
    GridMrf<Table> mrf = random_mrf(g, 33, 0.5);
    const BeliefResult base = run_bp(mrf, 10);
    GridMrf<Table> shifted = mrf;
    for (std::size_t n = 0; n < g.node_count(); ++n)
        for (std::size_t l = 0; l < 5; ++l) shifted.unary[g.label_offset(n) + l] += 0.25 * static_cast<double>(n % 3);
    EXPECT_EQ(run_bp(shifted, 10).chosen, base.chosen);
}

TEST(RunBp, TiesGoToSmallestLabel) {
    const MrfGraph g = dense_graph(2, 2, 3);
    GridMrf<Table> mrf{g, std::vector<double>(12, 0.5), Table(g), 0.5, Neighborhood::Four};
    const BeliefResult r = run_bp(mrf, 4);
    for (int c : r.chosen) EXPECT_EQ(c, 0);
}

TEST(RunBp, ForwardTwoReceivesFromRightAndBelow) {
    const MrfGraph g = dense_graph(3, 2, 2);
    const MessageField f(g, Neighborhood::ForwardTwo, 0.5);
    EXPECT_EQ(f.messages().size(), g.edge_count());
    for (const auto& m : f.messages()) {
        const std::size_t from = g.pixel_of_node(static_cast<std::size_t>(m.from));
        const std::size_t to = g.pixel_of_node(static_cast<std::size_t>(m.to));
        EXPECT_TRUE(from == to + 1 || from == to + 3);
    }
    EXPECT_EQ(MessageField(g, Neighborhood::Four, 0.5).messages().size(), 2 * g.edge_count());
}

TEST(RunBp, OverflowIsNonFinite) {
    const MrfGraph g = dense_graph(3, 1, 2);
    GridMrf<Table> mrf{g, std::vector<double>(6, 0.0), Table(g), 0.9, Neighborhood::Four};
    for (std::size_t e = 0; e < g.edge_count(); ++e)
        for (std::size_t a = 0; a < 2; ++a)
            for (std::size_t b = 0; b < 2; ++b) mrf.pairwise.set(e, a, b, 1e308);
    try {
        run_bp(mrf, 2);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::NonFinite);
    }
}

TEST(RunBp, RejectsBadArguments) {
    const MrfGraph g = dense_graph(2, 1, 2);
    GridMrf<Table> mrf{g, std::vector<double>(4, 0.1), Table(g), 0.5, Neighborhood::Four};
    EXPECT_THROW(run_bp(mrf, 0), Error);
    EXPECT_THROW(run_bp(mrf, 3, 1.0), Error);
    mrf.alpha = 1.0;
    EXPECT_THROW(run_bp(mrf, 3), Error);
    mrf.alpha = 0.5;
    mrf.unary[1] = -1.0;
    EXPECT_THROW(run_bp(mrf, 3), Error);
}

TEST(BruteForce, SinglePixel) {
    const MrfGraph g = dense_graph(1, 1, 2);
    for (double alpha : {0.0, 0.3, 0.5}) {
        GridMrf<Table> mrf{g, {0.2, 0.7}, Table(g), alpha, Neighborhood::Four};
        const MapSolution s = brute_force_map(mrf);
        EXPECT_EQ(s.labeling, std::vector<int>{0});
        EXPECT_DOUBLE_EQ(s.energy, 0.2 * (1.0 - alpha));
    }
}

TEST(BruteForce, NeverWorseThanBp) {
    const MrfGraph g = dense_graph(4, 2, 3);
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        GridMrf<Table> mrf = random_mrf(g, 300 + seed, 0.7);
        EXPECT_LE(brute_force_map(mrf).energy, energy(mrf, run_bp(mrf, 10).chosen) + 1e-12);
    }
}

TEST(BruteForce, TooLarge) {
    const MrfGraph g = dense_graph(3, 3, 10);
    GridMrf<Table> mrf{g, std::vector<double>(90, 0.0), Table(g), 0.5, Neighborhood::Four};
    try {
        brute_force_map(mrf);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::TooLarge);
    }
}

TEST(Energy, EdgeWeightsPerNeighborhood) {
    const MrfGraph g = dense_graph(2, 1, 2);
    GridMrf<Table> mrf{g, {0.0, 1.0, 1.0, 0.0}, absolute_pairwise(g), 0.25, Neighborhood::Four};
    const std::vector<int> l{0, 0};
    EXPECT_DOUBLE_EQ(energy(mrf, l), 0.75 * 1.0);
    const std::vector<int> mixed{0, 1};
    EXPECT_DOUBLE_EQ(energy(mrf, mixed), 0.5 * 1.0);
    mrf.neighborhood = Neighborhood::ForwardTwo;
    EXPECT_DOUBLE_EQ(energy(mrf, mixed), 0.25 * 1.0);
}

TEST(Messages, DumpHasHeaderAndValues) {
    const MrfGraph g = dense_graph(3, 2, 3);
    GridMrf<Table> mrf = random_mrf(g, 5, 0.5);
    const BeliefResult r = run_bp(mrf, 2);
    const auto dir = fixtures::temp_dir("messages");
    write_messages(dir / "messages.json", g, r.messages);
    const Json j = detail::parse_json_file(dir / "messages.json");
    EXPECT_EQ(j.at("width").get<int>(), 3);
    EXPECT_EQ(std::filesystem::file_size(dir / "messages.bin"), r.messages.values().size() * sizeof(double));
}

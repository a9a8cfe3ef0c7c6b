#include "relforge/rg_agent.hpp"
#include "relforge/scene.hpp"
#include "relforge/srg.hpp"

#include <doctest.h>

#include <cmath>
#include <numeric>
#include <stdexcept>

using namespace relforge;

namespace {

SceneClip tiny_clip(int n, int t, int d, uint64_t seed, int label = 0) {
    SceneClip clip;
    clip.clip_id = static_cast<int>(seed);
    clip.n_persons = n;
    clip.n_frames = t;
    clip.d_feature = d;
    clip.activity_label = label;
    clip.positions = Tensor({n, t, 2});
    clip.person_features = Tensor({n, t, d});
    Rng rng(seed);
    for (int64_t i = 0; i < clip.positions.numel(); ++i) clip.positions[i] = rng.uniform(-3, 3);
    for (int64_t i = 0; i < clip.person_features.numel(); ++i)
        clip.person_features[i] = rng.normal();
    clip.informative_frames.resize(static_cast<size_t>(t));
    std::iota(clip.informative_frames.begin(), clip.informative_frames.end(), 0);
    return clip;
}

RgConfig tiny_rg(int d_v, int d_e, int k) {
    RgConfig cfg;
    cfg.d_v = d_v;
    cfg.d_e = d_e;
    cfg.n_classes = k;
    cfg.width = 8;
    cfg.lstm_hidden = 8;
    return cfg;
}

RelationGraph graph_for(const SrgModel& srg, const SceneClip& clip, const Tensor& gates) {
    RelationGraph g = srg.init_graph(clip, 0, gates);
    srg.propagate(g);
    return g;
}

} // namespace

TEST_CASE("l21 norm unit examples") {
    CHECK(l21_norm(Tensor::zeros({3, 3})) == 0.0);

    Tensor ones2 = ones_gates(2); // off-diagonal ones
    CHECK(l21_norm(ones2) == doctest::Approx(2.0).epsilon(1e-12));

    // off-diagonal row 0 = [3, 4], rows 1-2 zero -> 3-4-5 triangle
    Tensor g = Tensor::zeros({3, 3});
    g.at(0, 1) = 3.0;
    g.at(0, 2) = 4.0;
    CHECK(l21_norm(g) == doctest::Approx(5.0).epsilon(1e-12));
}

TEST_CASE("l21 <= l1 with equality exactly on <=1-nonzero rows") {
    Rng rng(77);
    for (int rep = 0; rep < 1000; ++rep) {
        const int n = 2 + static_cast<int>(rng.uniform_int(4));
        Tensor g = Tensor::zeros({n, n});
        bool sparse_rows = true;
        for (int i = 0; i < n; ++i) {
            int nonzero = 0;
            for (int j = 0; j < n; ++j) {
                if (i == j) continue;
                if (rng.uniform() < 0.5) {
                    g.at(i, j) = rng.uniform();
                    if (g.at(i, j) != 0.0) ++nonzero;
                }
            }
            if (nonzero > 1) sparse_rows = false;
        }
        double l1 = 0.0;
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j)
                if (i != j) l1 += std::fabs(g.at(i, j));
        const double l21 = l21_norm(g);
        CHECK(l21 <= l1 + 1e-12);
        if (sparse_rows)
            CHECK(l21 == doctest::Approx(l1).epsilon(1e-12));
        else
            CHECK(l21 < l1 - 1e-12);
    }
}

TEST_CASE("apply_gates") {
    ParamStore store;
    SrgConfig scfg;
    scfg.n_classes = 2;
    scfg.d_v = 4;
    scfg.d_e = 3;
    scfg.d_feature = 5;
    scfg.m_iters = 1;
    Rng rng(5);
    SrgModel srg(scfg, store, &rng);
    const SceneClip clip = tiny_clip(3, 1, scfg.d_feature, 6);

    SUBCASE("asymmetric input is symmetrized: 0.4/0.8 -> 0.6") {
        RelationGraph g = srg.init_graph(clip, 0, ones_gates(3));
        Tensor gates = ones_gates(3);
        gates.at(0, 1) = 0.4;
        gates.at(1, 0) = 0.8;
        apply_gates(g, gates);
        CHECK(g.gate(0, 1) == doctest::Approx(0.6).epsilon(1e-12));
        CHECK(g.gate(1, 0) == doctest::Approx(0.6).epsilon(1e-12));
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) CHECK(g.gates.at(i, j) == g.gates.at(j, i));
    }
    SUBCASE("all-ones gates leave edges unchanged") {
        RelationGraph g = srg.init_graph(clip, 0, ones_gates(3));
        const Tensor before = g.h_e;
        apply_gates(g, ones_gates(3));
        CHECK(g.h_e.values() == before.values());
    }
    SUBCASE("zero gate zeroes the edge attribute") {
        RelationGraph g = srg.init_graph(clip, 0, ones_gates(3));
        Tensor gates = ones_gates(3);
        gates.at(0, 2) = gates.at(2, 0) = 0.0;
        apply_gates(g, gates);
        for (double v : g.edge_attr(0, 2)) CHECK(v == 0.0);
        for (double v : g.edge_attr(2, 0)) CHECK(v == 0.0);
    }
    SUBCASE("idempotent on binary gates") {
        RelationGraph g = srg.init_graph(clip, 0, ones_gates(3));
        Tensor gates = ones_gates(3);
        gates.at(0, 1) = gates.at(1, 0) = 0.0;
        apply_gates(g, gates);
        const Tensor once = g.h_e;
        apply_gates(g, gates);
        CHECK(g.h_e.values() == once.values());
    }
    SUBCASE("shrinking a gate never grows an edge magnitude") {
        RelationGraph g1 = srg.init_graph(clip, 0, ones_gates(3));
        RelationGraph g2 = srg.init_graph(clip, 0, ones_gates(3));
        Tensor gates = ones_gates(3);
        gates.at(0, 1) = gates.at(1, 0) = 0.7;
        apply_gates(g1, gates);
        gates.at(0, 1) = gates.at(1, 0) = 0.3;
        apply_gates(g2, gates);
        for (int64_t i = 0; i < g1.h_e.numel(); ++i)
            CHECK(std::fabs(g2.h_e[i]) <= std::fabs(g1.h_e[i]) + 1e-15);
    }
    SUBCASE("out-of-range gates are rejected") {
        RelationGraph g = srg.init_graph(clip, 0, ones_gates(3));
        Tensor gates = ones_gates(3);
        gates.at(0, 1) = 1.5;
        CHECK_THROWS_AS(apply_gates(g, gates), std::invalid_argument);
    }
}

TEST_CASE("rg_reward worked examples and bounds") {
    // sparsity 3.0 -> 2.0, p 0.4 -> 0.6, wrong -> correct, omega 15
    CHECK(rg_reward(2.0, 3.0, 0.6, 0.4, 1, 0, 1, 15.0) == 17.0);
    // no change at all
    CHECK(rg_reward(2.0, 2.0, 0.5, 0.5, 1, 1, 1, 15.0) == 0.0);
    // sparsity up, p down, correct -> wrong
    CHECK(rg_reward(3.0, 2.0, 0.4, 0.6, 0, 1, 1, 15.0) == -17.0);

    CHECK_THROWS_AS(rg_reward(1, 1, 0.5, 0.5, 0, 0, 0, -1.0), std::invalid_argument);

    Rng rng(31);
    const double omega = 15.0;
    for (int rep = 0; rep < 100000; ++rep) {
        const double r = rg_reward(rng.uniform(0, 20), rng.uniform(0, 20), rng.uniform(),
                                   rng.uniform(), static_cast<int>(rng.uniform_int(3)),
                                   static_cast<int>(rng.uniform_int(3)),
                                   static_cast<int>(rng.uniform_int(3)), omega);
        CHECK(r >= -2.0 - omega);
        CHECK(r <= 2.0 + omega);
    }
}

TEST_CASE("unordered pairs are lexicographic") {
    const auto p3 = unordered_pairs(3);
    REQUIRE(p3.size() == 3);
    CHECK(p3[0] == std::pair<int, int>{0, 1});
    CHECK(p3[1] == std::pair<int, int>{0, 2});
    CHECK(p3[2] == std::pair<int, int>{1, 2});
    CHECK(unordered_pairs(6).size() == 15);
}

TEST_CASE("build_rg_state concatenates the relation triplet") {
    ParamStore store;
    SrgConfig scfg;
    scfg.n_classes = 2;
    scfg.d_v = 4;
    scfg.d_e = 3;
    scfg.d_feature = 5;
    scfg.m_iters = 1;
    Rng rng(7);
    SrgModel srg(scfg, store, &rng);
    const SceneClip clip = tiny_clip(3, 1, scfg.d_feature, 8);
    const RelationGraph g = graph_for(srg, clip, ones_gates(3));

    const RgState st = build_rg_state(g, 0, 2);
    REQUIRE(st.s_l.numel() == 2 * scfg.d_v + scfg.d_e);
    for (int k = 0; k < scfg.d_v; ++k) CHECK(st.s_l[k] == g.h_v.at(0, k));
    const auto he = g.edge_attr(0, 2);
    for (int k = 0; k < scfg.d_e; ++k) CHECK(st.s_l[scfg.d_v + k] == he[static_cast<size_t>(k)]);
    for (int k = 0; k < scfg.d_v; ++k)
        CHECK(st.s_l[scfg.d_v + scfg.d_e + k] == g.h_v.at(2, k));

    CHECK(st.s_g.dim(0) == 3); // one row per unordered edge
    CHECK(st.s_g.dim(1) == st.s_l.numel());
    CHECK(st.s_u.numel() == scfg.n_classes);
    for (int k = 0; k < scfg.n_classes; ++k) CHECK(st.s_u[k] == g.u[k]);

    // the state is canonical in the unordered pair
    const RgState rev = build_rg_state(g, 2, 0);
    CHECK(rev.s_l.values() == st.s_l.values());
    CHECK(rev.edge_i == 0);
    CHECK(rev.edge_j == 2);

    // N=2 stacks a single row
    const SceneClip c2 = tiny_clip(2, 1, scfg.d_feature, 9);
    const RelationGraph g2 = graph_for(srg, c2, ones_gates(2));
    CHECK(build_rg_state(g2, 0, 1).s_g.dim(0) == 1);

    CHECK_THROWS_AS(build_rg_state(g, 1, 1), std::invalid_argument);
    CHECK_THROWS_AS(build_rg_state(g, 0, 5), std::invalid_argument);
}

TEST_CASE("zero-parameter policy outputs") {
    const RgConfig cfg = tiny_rg(4, 3, 2);
    ParamStore store;
    const RgAgent agent(cfg, store, nullptr);

    RgState st;
    st.s_g = Tensor::full({3, 11}, 0.4);
    st.s_l = Tensor::full({11}, -0.2);
    st.s_u = Tensor::full({2}, 1.0);
    RgMemory mem = RgMemory::zero(cfg.lstm_hidden);
    const RgOutput out = agent.forward(st, mem);
    CHECK(out.mu == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(out.sigma == doctest::Approx(std::log(2.0) + cfg.sigma_min).epsilon(1e-12));
    CHECK(out.value == 0.0);
}

TEST_CASE("policy forward is deterministic and advances memory") {
    const RgConfig cfg = tiny_rg(4, 3, 2);
    ParamStore store;
    Rng rng(12);
    const RgAgent agent(cfg, store, &rng);

    RgState st;
    st.s_g = Tensor::full({3, 11}, 0.3);
    st.s_l = Tensor::full({11}, 0.1);
    st.s_u = Tensor({2}, {0.4, -0.4});

    RgMemory m1 = RgMemory::zero(cfg.lstm_hidden);
    RgMemory m2 = RgMemory::zero(cfg.lstm_hidden);
    const RgOutput a = agent.forward(st, m1);
    const RgOutput b = agent.forward(st, m2);
    CHECK(a.mu == b.mu);
    CHECK(a.sigma == b.sigma);
    CHECK(a.value == b.value);
    CHECK(m1.h.values() == m2.h.values());

    // second emission sees the advanced memory
    const RgOutput c = agent.forward(st, m1);
    CHECK(c.mu != a.mu);

    CHECK(a.sigma >= cfg.sigma_min);
    CHECK(a.sigma <= cfg.sigma_max);
}

TEST_CASE("gaussian helpers match closed forms") {
    CHECK(gaussian_entropy(1.0) == doctest::Approx(0.5 * std::log(2.0 * M_PI * std::exp(1.0)))
                                       .epsilon(1e-12));
    CHECK(gaussian_entropy(1.0) == doctest::Approx(1.4189).epsilon(1e-4));
    // standard normal at the mean: ln(1/sqrt(2 pi))
    CHECK(gaussian_log_pdf(0.0, 0.0, 1.0) ==
          doctest::Approx(-0.5 * std::log(2.0 * M_PI)).epsilon(1e-12));
}

TEST_CASE("gate sampling") {
    RgOutput out;
    out.mu = 0.5;
    out.sigma = 0.1;

    SUBCASE("test mode returns the mean") {
        const GateSample s = sample_gate(out, nullptr);
        CHECK(s.g == 0.5);
    }
    SUBCASE("samples are clamped to [0,1]") {
        RgOutput wide;
        wide.mu = 0.9;
        wide.sigma = 1.0;
        Rng rng(3);
        for (int i = 0; i < 2000; ++i) {
            const GateSample s = sample_gate(wide, &rng);
            CHECK(s.g >= 0.0);
            CHECK(s.g <= 1.0);
            CHECK(std::isfinite(s.log_prob));
        }
    }
    SUBCASE("sample mean approaches mu") {
        Rng rng(4);
        double sum = 0.0;
        const int n = 100000;
        for (int i = 0; i < n; ++i) sum += sample_gate(out, &rng).g;
        CHECK(sum / n == doctest::Approx(0.5).epsilon(0.02));
    }
    SUBCASE("tiny sigma concentrates at mu") {
        RgOutput tight;
        tight.mu = 0.7;
        tight.sigma = 1e-6;
        Rng rng(5);
        for (int i = 0; i < 100; ++i)
            CHECK(sample_gate(tight, &rng).g == doctest::Approx(0.7).epsilon(1e-4));
    }
}

TEST_CASE("rg_episode mechanics") {
    ParamStore store;
    SrgConfig scfg;
    scfg.n_classes = 2;
    scfg.d_v = 4;
    scfg.d_e = 3;
    scfg.d_feature = 5;
    scfg.m_iters = 1;
    Rng rng(21);
    SrgModel srg(scfg, store, &rng);
    const RgConfig rcfg = tiny_rg(scfg.d_v, scfg.d_e, scfg.n_classes);
    ParamStore astore;
    Rng arng(22);
    const RgAgent agent(rcfg, astore, &arng);
    const SceneClip clip = tiny_clip(3, 2, scfg.d_feature, 23, 1);
    const std::vector<int> mask = {0, 1};

    SUBCASE("n_steps=0 leaves the all-ones gates untouched") {
        const RgEpisodeResult res = rg_episode(clip, srg, agent, mask, 0, 15.0, nullptr);
        CHECK(res.steps.empty());
        CHECK(res.total_reward == 0.0);
        CHECK(res.l21_end == res.l21_start);
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j)
                CHECK(res.final_gates.at(i, j) == (i == j ? 0.0 : 1.0));
    }
    SUBCASE("N=3 emits one gate per unordered edge per step") {
        const RgEpisodeResult res = rg_episode(clip, srg, agent, mask, 4, 15.0, nullptr);
        REQUIRE(res.steps.size() == 4);
        for (const auto& step : res.steps) {
            CHECK(step.samples.size() == 3);
            CHECK(step.caches.empty()); // test mode keeps no tapes
            for (int i = 0; i < 3; ++i)
                for (int j = 0; j < 3; ++j) CHECK(step.gates.at(i, j) == step.gates.at(j, i));
        }
        CHECK(res.l21_start == doctest::Approx(l21_norm(ones_gates(3))));
        CHECK(res.l21_end == doctest::Approx(res.steps.back().l21));
    }
    SUBCASE("test mode is deterministic") {
        const RgEpisodeResult a = rg_episode(clip, srg, agent, mask, 3, 15.0, nullptr);
        const RgEpisodeResult b = rg_episode(clip, srg, agent, mask, 3, 15.0, nullptr);
        CHECK(a.final_gates.values() == b.final_gates.values());
        CHECK(a.total_reward == b.total_reward);
    }
    SUBCASE("training mode requires an rng") {
        const RgWindowFn fn = [](std::vector<RgStep>&, double, bool) {};
        CHECK_THROWS_AS(rg_episode(clip, srg, agent, mask, 2, 15.0, nullptr, 5, fn),
                        std::invalid_argument);
    }
}

TEST_CASE("zero advantage and zero entropy weight give zero gradients") {
    const RgConfig cfg = tiny_rg(4, 3, 2);
    ParamStore store;
    Rng rng(31);
    const RgAgent agent(cfg, store, &rng);

    RgState st;
    st.s_g = Tensor::full({2, 11}, 0.2);
    st.s_l = Tensor::full({11}, 0.4);
    st.s_u = Tensor({2}, {0.1, -0.1});
    RgMemory mem = RgMemory::zero(cfg.lstm_hidden);

    RgStep step;
    RgForwardCache cache;
    const RgOutput out = agent.forward(st, mem, &cache);
    Rng srng(32);
    step.samples.push_back(sample_gate(out, &srng));
    step.caches.push_back(std::move(cache));
    step.value = out.value;

    std::vector<RgStep> window;
    window.push_back(std::move(step));
    store.zero_grads();
    rg_accumulate_window(agent, window, {window[0].value}, 0.0);
    store.for_each([](const std::string&, const Tensor& t) {
        for (double g : t.grad_values()) CHECK(g == 0.0);
    });
}

TEST_CASE("one positive-advantage update raises the action log-prob") {
    const RgConfig cfg = tiny_rg(4, 3, 2);
    ParamStore store;
    Rng rng(41);
    const RgAgent agent(cfg, store, &rng);

    RgState st;
    st.s_g = Tensor::full({2, 11}, 0.3);
    st.s_l = Tensor::full({11}, -0.1);
    st.s_u = Tensor({2}, {0.2, 0.6});

    auto roll = [&](double* logp_out) {
        RgMemory mem = RgMemory::zero(cfg.lstm_hidden);
        RgForwardCache cache;
        const RgOutput out = agent.forward(st, mem, &cache);
        if (logp_out) *logp_out = gaussian_log_pdf(0.9, out.mu, out.sigma);
        RgStep step;
        GateSample s;
        s.g = 0.9; // fixed action with positive advantage
        step.samples.push_back(s);
        step.caches.push_back(std::move(cache));
        step.value = out.value;
        return step;
    };

    double before = 0.0;
    std::vector<RgStep> window;
    window.push_back(roll(&before));
    store.zero_grads();
    rg_accumulate_window(agent, window, {window[0].value + 1.0}, 0.0);
    OptimConfig opt;
    opt.lr = 1e-3;
    store.step(opt);

    double after = 0.0;
    (void)roll(&after);
    CHECK(after > before);
}

#include "relforge/fd_agent.hpp"
#include "relforge/scene.hpp"
#include "relforge/srg.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <deque>
#include <numeric>
#include <set>
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

FdConfig tiny_fd(int t, int t_d, int d) {
    FdConfig cfg;
    cfg.n_frames = t;
    cfg.t_distill = t_d;
    cfg.d_feature = d;
    cfg.c_squeeze = 4;
    cfg.c_extract = 5;
    cfg.mask_fc = 4;
    cfg.trunk = 8;
    cfg.lstm_hidden = 8;
    return cfg;
}

// Reference queue model: a deque plus explicit slot-order bookkeeping.
struct RefApply {
    std::vector<int> mask, queue, applied;
};

RefApply ref_apply(std::vector<int> mask, const std::vector<int>& queue,
                   const std::vector<int>& actions) {
    std::deque<int> q(queue.begin(), queue.end());
    RefApply out;
    out.applied.assign(actions.size(), 0);
    for (size_t k = 0; k < actions.size(); ++k) {
        if (actions[k] == 1 && !q.empty()) {
            const int head = q.front();
            q.pop_front();
            q.push_back(mask[k]);
            mask[k] = head;
            out.applied[k] = 1;
        }
    }
    std::sort(mask.begin(), mask.end());
    out.mask = std::move(mask);
    out.queue.assign(q.begin(), q.end());
    return out;
}

} // namespace

TEST_CASE("init_selection spacing") {
    const auto [m5, q5] = init_selection(10, 5);
    CHECK(m5 == std::vector<int>{0, 2, 4, 6, 8});
    CHECK(q5 == std::vector<int>{1, 3, 5, 7, 9});

    const auto [m1, q1] = init_selection(10, 1);
    CHECK(m1 == std::vector<int>{0});
    CHECK(q1 == std::vector<int>{1, 2, 3, 4, 5, 6, 7, 8, 9});

    const auto [mall, qall] = init_selection(10, 10);
    CHECK(mall.size() == 10);
    CHECK(qall.empty());

    const auto [m3, q3] = init_selection(7, 3);
    CHECK(m3 == std::vector<int>{0, 2, 4});
    CHECK(q3 == std::vector<int>{1, 3, 5, 6});

    CHECK_THROWS_AS(init_selection(10, 11), std::invalid_argument);
    CHECK_THROWS_AS(init_selection(10, 0), std::invalid_argument);
}

TEST_CASE("build_fd_state gathers the retained slice") {
    const SceneClip clip = tiny_clip(3, 6, 4, 51);
    const std::vector<int> mask = {0, 3, 5};
    const FdState st = build_fd_state(clip, mask);

    CHECK(st.features.values() == clip.person_features.values());
    CHECK(st.mask_ids == mask);
    CHECK(st.mask_bits == std::vector<double>{1, 0, 0, 1, 0, 1});
    REQUIRE(st.distilled.shape() == std::vector<int64_t>{3, 3, 4});
    for (int p = 0; p < 3; ++p)
        for (int s = 0; s < 3; ++s)
            for (int k = 0; k < 4; ++k)
                CHECK(st.distilled.at(p, s, k) == clip.person_features.at(p, mask[s], k));

    CHECK_THROWS_AS(build_fd_state(clip, {}), std::invalid_argument);
    CHECK_THROWS_AS(build_fd_state(clip, {0, 6}), std::invalid_argument);
    CHECK_THROWS_AS(build_fd_state(clip, {3, 1}), std::invalid_argument);
    CHECK_THROWS_AS(build_fd_state(clip, {2, 2}), std::invalid_argument);
}

TEST_CASE("zero-parameter policy is uniform") {
    const FdConfig cfg = tiny_fd(6, 3, 4);
    ParamStore store;
    const FdAgent agent(cfg, store, nullptr);
    const SceneClip clip = tiny_clip(3, 6, 4, 52);
    const FdState st = build_fd_state(clip, {0, 2, 4});
    FdMemory mem = FdMemory::zero(cfg.lstm_hidden);
    const FdOutput out = agent.forward(st, mem);

    REQUIRE(out.probs.size() == 3);
    for (const auto& p : out.probs) {
        CHECK(p[0] == doctest::Approx(0.5).epsilon(1e-12));
        CHECK(p[1] == doctest::Approx(0.5).epsilon(1e-12));
    }
    CHECK(out.value == 0.0);

    SUBCASE("argmax sampling resolves ties to stay") {
        const FdActionSample s = sample_actions(out, nullptr);
        CHECK(s.actions == std::vector<int>{0, 0, 0});
        CHECK(s.log_prob_sum == doctest::Approx(3.0 * std::log(0.5)).epsilon(1e-12));
        CHECK(s.entropy_sum == doctest::Approx(3.0 * std::log(2.0)).epsilon(1e-12));
    }
    SUBCASE("sampled actions are fair coin flips") {
        Rng rng(9);
        int shifts = 0;
        const int n = 20000;
        for (int i = 0; i < n; ++i) {
            const FdActionSample s = sample_actions(out, &rng);
            for (int a : s.actions) shifts += a;
        }
        CHECK(static_cast<double>(shifts) / (3 * n) == doctest::Approx(0.5).epsilon(0.03));
    }
}

TEST_CASE("policy forward is deterministic and shape-checked") {
    const FdConfig cfg = tiny_fd(6, 3, 4);
    ParamStore store;
    Rng rng(53);
    const FdAgent agent(cfg, store, &rng);
    const SceneClip clip = tiny_clip(3, 6, 4, 54);
    const FdState st = build_fd_state(clip, {1, 2, 5});

    FdMemory m1 = FdMemory::zero(cfg.lstm_hidden);
    FdMemory m2 = FdMemory::zero(cfg.lstm_hidden);
    const FdOutput a = agent.forward(st, m1);
    const FdOutput b = agent.forward(st, m2);
    CHECK(a.logits.values() == b.logits.values());
    CHECK(a.value == b.value);
    for (size_t s = 0; s < a.probs.size(); ++s)
        CHECK(a.probs[s][0] + a.probs[s][1] == doctest::Approx(1.0).epsilon(1e-12));

    // wrong slot count
    const FdState bad = build_fd_state(clip, {0, 4});
    FdMemory m3 = FdMemory::zero(cfg.lstm_hidden);
    CHECK_THROWS_AS(agent.forward(bad, m3), std::invalid_argument);
}

TEST_CASE("fd_apply worked examples") {
    const std::vector<int> mask = {0, 2, 4, 6, 8};
    const std::vector<int> queue = {1, 3, 5, 7, 9};

    SUBCASE("all stay") {
        const FdApplyResult r = fd_apply(mask, queue, {0, 0, 0, 0, 0});
        CHECK(r.mask == mask);
        CHECK(r.queue == queue);
        CHECK(r.applied == std::vector<int>{0, 0, 0, 0, 0});
    }
    SUBCASE("shift the middle slot") {
        const FdApplyResult r = fd_apply(mask, queue, {0, 0, 1, 0, 0});
        CHECK(r.mask == std::vector<int>{0, 1, 2, 6, 8});
        CHECK(r.queue == std::vector<int>{3, 5, 7, 9, 4});
        CHECK(r.applied == std::vector<int>{0, 0, 1, 0, 0});
    }
    SUBCASE("shift every slot") {
        const FdApplyResult r = fd_apply(mask, queue, {1, 1, 1, 1, 1});
        CHECK(r.mask == std::vector<int>{1, 3, 5, 7, 9});
        CHECK(r.queue == std::vector<int>{0, 2, 4, 6, 8});
        CHECK(r.applied == std::vector<int>{1, 1, 1, 1, 1});
    }
    SUBCASE("empty queue turns shifts into stays") {
        const FdApplyResult r = fd_apply({0, 1, 2}, {}, {1, 1, 1});
        CHECK(r.mask == std::vector<int>{0, 1, 2});
        CHECK(r.queue.empty());
        CHECK(r.applied == std::vector<int>{0, 0, 0});
    }
    SUBCASE("invalid inputs") {
        CHECK_THROWS_AS(fd_apply(mask, queue, {0, 0}), std::invalid_argument);
        CHECK_THROWS_AS(fd_apply(mask, queue, {0, 0, 2, 0, 0}), std::invalid_argument);
        CHECK_THROWS_AS(fd_apply({2, 1, 3}, queue, {0, 0, 0}), std::invalid_argument);
        CHECK_THROWS_AS(fd_apply({0, 1}, {1, 2}, {0, 0}), std::invalid_argument);
    }
}

TEST_CASE("fd_apply matches a reference queue model") {
    Rng rng(61);
    for (int rep = 0; rep < 10000; ++rep) {
        const int t = 1 + static_cast<int>(rng.uniform_int(12));
        const int t_d = 1 + static_cast<int>(rng.uniform_int(t));

        // random retained subset, complement shuffled into a queue
        std::vector<int> frames(static_cast<size_t>(t));
        std::iota(frames.begin(), frames.end(), 0);
        for (size_t i = frames.size(); i > 1; --i)
            std::swap(frames[i - 1], frames[static_cast<size_t>(rng.uniform_int(
                                         static_cast<int64_t>(i)))]);
        std::vector<int> mask(frames.begin(), frames.begin() + t_d);
        std::sort(mask.begin(), mask.end());
        std::vector<int> queue(frames.begin() + t_d, frames.end());

        std::vector<int> actions(static_cast<size_t>(t_d));
        for (auto& a : actions) a = static_cast<int>(rng.uniform_int(2));

        const FdApplyResult got = fd_apply(mask, queue, actions);
        const RefApply want = ref_apply(mask, queue, actions);
        CHECK(got.mask == want.mask);
        CHECK(got.queue == want.queue);
        CHECK(got.applied == want.applied);

        // partition invariants
        CHECK(std::is_sorted(got.mask.begin(), got.mask.end()));
        CHECK(got.mask.size() == mask.size());
        CHECK(got.queue.size() == queue.size());
        std::set<int> all(got.mask.begin(), got.mask.end());
        all.insert(got.queue.begin(), got.queue.end());
        CHECK(all.size() == static_cast<size_t>(t));
        CHECK(*all.begin() == 0);
        CHECK(*all.rbegin() == t - 1);
    }
}

TEST_CASE("fd_reward worked examples and bounds") {
    CHECK(fd_reward(0.6, 0.4, 1, 0, 1, 20.0) == 21.0);
    CHECK(fd_reward(0.5, 0.5, 1, 1, 1, 20.0) == 0.0);
    CHECK(fd_reward(0.4, 0.6, 0, 1, 1, 20.0) == -21.0);

    CHECK_THROWS_AS(fd_reward(0.5, 0.5, 0, 0, 0, -2.0), std::invalid_argument);
    CHECK_THROWS_AS(fd_reward(std::nan(""), 0.5, 0, 0, 0, 20.0), std::invalid_argument);

    Rng rng(62);
    const double omega = 20.0;
    for (int rep = 0; rep < 100000; ++rep) {
        const double r =
            fd_reward(rng.uniform(), rng.uniform(), static_cast<int>(rng.uniform_int(3)),
                      static_cast<int>(rng.uniform_int(3)), static_cast<int>(rng.uniform_int(3)),
                      omega);
        CHECK(r >= -1.0 - omega);
        CHECK(r <= 1.0 + omega);
    }
}

TEST_CASE("fd_episode mechanics") {
    SrgConfig scfg;
    scfg.n_classes = 2;
    scfg.d_v = 4;
    scfg.d_e = 3;
    scfg.d_feature = 4;
    scfg.m_iters = 1;
    ParamStore sstore;
    Rng srng(63);
    const SrgModel srg(scfg, sstore, &srng);
    const SceneClip clip = tiny_clip(3, 6, 4, 64, 1);
    const FdEvaluator eval = [&](const std::vector<int>& m) {
        return srg.forward_classify(clip, ones_gates(clip.n_persons), m);
    };

    const FdConfig fcfg = tiny_fd(6, 3, 4);
    ParamStore astore;
    Rng arng(65);
    const FdAgent agent(fcfg, astore, &arng);

    SUBCASE("n_steps=0 returns the evenly spaced mask") {
        const FdEpisodeResult res = fd_episode(clip, eval, agent, 0, 20.0, nullptr);
        CHECK(res.steps.empty());
        CHECK(res.final_mask == std::vector<int>{0, 2, 4});
        CHECK(res.total_reward == 0.0);
        CHECK(res.p_end == res.p_start);
    }
    SUBCASE("test mode is deterministic and masks stay valid") {
        const FdEpisodeResult a = fd_episode(clip, eval, agent, 4, 20.0, nullptr);
        const FdEpisodeResult b = fd_episode(clip, eval, agent, 4, 20.0, nullptr);
        REQUIRE(a.steps.size() == 4);
        CHECK(a.final_mask == b.final_mask);
        CHECK(a.total_reward == b.total_reward);
        for (const auto& step : a.steps) {
            CHECK(step.mask_after.size() == 3);
            CHECK(std::is_sorted(step.mask_after.begin(), step.mask_after.end()));
            CHECK_FALSE(step.has_cache);
            CHECK(step.applied.size() == 3);
        }
        CHECK(a.steps.back().mask_after == a.final_mask);
    }
    SUBCASE("retaining every frame pins the mask") {
        const FdConfig full_cfg = tiny_fd(6, 6, 4);
        ParamStore fstore;
        Rng frng(66);
        const FdAgent full_agent(full_cfg, fstore, &frng);
        Rng episode_rng(67);
        const FdEpisodeResult res = fd_episode(clip, eval, full_agent, 3, 20.0, &episode_rng);
        const std::vector<int> all = {0, 1, 2, 3, 4, 5};
        CHECK(res.final_mask == all);
        for (const auto& step : res.steps) CHECK(step.mask_after == all);
    }
    SUBCASE("a null evaluator is rejected") {
        CHECK_THROWS_AS(fd_episode(clip, nullptr, agent, 1, 20.0, nullptr),
                        std::invalid_argument);
    }
    SUBCASE("training mode requires an rng") {
        const FdWindowFn fn = [](std::vector<FdStep>&, double, bool) {};
        CHECK_THROWS_AS(fd_episode(clip, eval, agent, 2, 20.0, nullptr, 5, fn),
                        std::invalid_argument);
    }
}

TEST_CASE("zero advantage and zero entropy weight give zero gradients") {
    const FdConfig cfg = tiny_fd(6, 3, 4);
    ParamStore store;
    Rng rng(71);
    const FdAgent agent(cfg, store, &rng);
    const SceneClip clip = tiny_clip(3, 6, 4, 72);
    const FdState st = build_fd_state(clip, {0, 2, 4});

    FdStep step;
    FdMemory mem = FdMemory::zero(cfg.lstm_hidden);
    const FdOutput out = agent.forward(st, mem, &step.cache);
    step.has_cache = true;
    step.probs = out.probs;
    step.value = out.value;
    Rng srng(73);
    step.actions = sample_actions(out, &srng).actions;

    std::vector<FdStep> window;
    window.push_back(std::move(step));
    store.zero_grads();
    fd_accumulate_window(agent, window, {window[0].value}, 0.0);
    store.for_each([](const std::string&, const Tensor& t) {
        for (double g : t.grad_values()) CHECK(g == 0.0);
    });
}

TEST_CASE("one positive-advantage update raises the action log-prob") {
    const FdConfig cfg = tiny_fd(6, 3, 4);
    ParamStore store;
    Rng rng(74);
    const FdAgent agent(cfg, store, &rng);
    const SceneClip clip = tiny_clip(3, 6, 4, 75);
    const FdState st = build_fd_state(clip, {0, 2, 4});
    const std::vector<int> actions = {1, 0, 1};

    auto logp_of = [&](const FdOutput& out) {
        double lp = 0.0;
        for (size_t k = 0; k < actions.size(); ++k)
            lp += std::log(out.probs[k][static_cast<size_t>(actions[k])]);
        return lp;
    };

    FdStep step;
    FdMemory mem = FdMemory::zero(cfg.lstm_hidden);
    const FdOutput out = agent.forward(st, mem, &step.cache);
    step.has_cache = true;
    step.probs = out.probs;
    step.value = out.value;
    step.actions = actions;
    const double before = logp_of(out);

    std::vector<FdStep> window;
    window.push_back(std::move(step));
    store.zero_grads();
    fd_accumulate_window(agent, window, {window[0].value + 1.0}, 0.0);
    OptimConfig opt;
    opt.lr = 1e-3;
    store.step(opt);

    FdMemory mem2 = FdMemory::zero(cfg.lstm_hidden);
    const double after = logp_of(agent.forward(st, mem2));
    CHECK(after > before);
}

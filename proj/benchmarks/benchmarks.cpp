// Throughput benchmarks for the hot paths: cell kernels, graph passes,
// scene generation, and full policy rollouts.

#include <benchmark/benchmark.h>

#include <relforge/config.hpp>

using namespace relforge;

namespace {

SceneClip bench_clip(int n_persons, int n_frames, int d_feature, uint64_t seed) {
    SceneConfig sc;
    sc.n_classes = 4;
    sc.n_persons = n_persons;
    sc.n_frames = n_frames;
    sc.d_feature = d_feature;
    sc.n_clips = 1;
    sc.noise_frames = 2;
    sc.distractor_persons = 1;
    return generate_dataset(sc, seed)[0];
}

void bm_lstm_cell(benchmark::State& state) {
    const int batch = static_cast<int>(state.range(0));
    ParamStore store;
    Rng rng(1);
    const LstmParams p = make_lstm(store, "cell", 32, 64, &rng);
    Tensor x({batch, 32}), h0({batch, 64}), c0({batch, 64});
    for (Tensor* t : {&x, &h0, &c0})
        for (double& v : t->values()) v = rng.normal();
    for (auto _ : state) {
        Tensor h, c;
        lstm_forward(p, x, h0, c0, h, c, nullptr);
        benchmark::DoNotOptimize(h.values().data());
    }
}
BENCHMARK(bm_lstm_cell)->Arg(1)->Arg(8)->Arg(32);

void bm_generate_clip(benchmark::State& state) {
    SceneConfig sc;
    sc.n_classes = 8;
    sc.n_persons = static_cast<int>(state.range(0));
    sc.n_frames = 10;
    sc.d_feature = 16;
    sc.n_clips = 1;
    sc.noise_frames = 3;
    sc.distractor_persons = 2;
    uint64_t seed = 1;
    for (auto _ : state) {
        const auto clips = generate_dataset(sc, seed++);
        benchmark::DoNotOptimize(clips[0].person_features.values().data());
    }
}
BENCHMARK(bm_generate_clip)->Arg(6)->Arg(12);

void bm_srg_forward(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0));
    const SceneClip clip = bench_clip(n, 10, 16, 17);
    SrgConfig cfg;
    cfg.n_classes = 4;
    cfg.d_v = 32;
    cfg.d_e = 16;
    cfg.d_feature = 16;
    cfg.m_iters = 3;
    ParamStore store;
    Rng rng(2);
    const SrgModel srg(cfg, store, &rng);
    const Tensor gates = ones_gates(n);
    const std::vector<int> mask = all_frames(10);
    for (auto _ : state) {
        const SrgForward fwd = srg.forward_classify(clip, gates, mask);
        benchmark::DoNotOptimize(fwd.loss);
    }
}
BENCHMARK(bm_srg_forward)->Arg(4)->Arg(6)->Arg(12);

void bm_srg_train_step(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0));
    const SceneClip clip = bench_clip(n, 10, 16, 18);
    SrgConfig cfg;
    cfg.n_classes = 4;
    cfg.d_v = 32;
    cfg.d_e = 16;
    cfg.d_feature = 16;
    cfg.m_iters = 3;
    ParamStore store;
    Rng rng(3);
    SrgModel srg(cfg, store, &rng);
    const Tensor gates = ones_gates(n);
    const std::vector<int> mask = all_frames(10);
    for (auto _ : state) {
        SrgForward fwd = srg.forward_classify(clip, gates, mask, true);
        srg.backward(fwd);
        store.zero_grads();
        benchmark::DoNotOptimize(fwd.loss);
    }
}
BENCHMARK(bm_srg_train_step)->Arg(6);

void bm_rg_episode(benchmark::State& state) {
    const SceneClip clip = bench_clip(6, 10, 16, 19);
    SrgConfig cfg;
    cfg.n_classes = 4;
    cfg.d_v = 32;
    cfg.d_e = 16;
    cfg.d_feature = 16;
    cfg.m_iters = 3;
    ParamStore srg_store;
    Rng r1(4);
    const SrgModel srg(cfg, srg_store, &r1);
    RgConfig rcfg;
    rcfg.d_v = 32;
    rcfg.d_e = 16;
    rcfg.n_classes = 4;
    ParamStore rg_store;
    Rng r2(5);
    const RgAgent agent(rcfg, rg_store, &r2);
    const std::vector<int> mask = all_frames(10);
    Rng rng(6);
    uint64_t episode = 0;
    for (auto _ : state) {
        Rng ep = rng.fork(episode++);
        const RgEpisodeResult res = rg_episode(clip, srg, agent, mask, 10, 15.0, &ep, 5);
        benchmark::DoNotOptimize(res.total_reward);
    }
}
BENCHMARK(bm_rg_episode);

void bm_fd_episode(benchmark::State& state) {
    const SceneClip clip = bench_clip(6, 10, 16, 20);
    SrgConfig cfg;
    cfg.n_classes = 4;
    cfg.d_v = 32;
    cfg.d_e = 16;
    cfg.d_feature = 16;
    cfg.m_iters = 3;
    ParamStore srg_store;
    Rng r1(7);
    const SrgModel srg(cfg, srg_store, &r1);
    FdConfig fcfg;
    fcfg.n_frames = 10;
    fcfg.t_distill = 5;
    fcfg.d_feature = 16;
    ParamStore fd_store;
    Rng r2(8);
    const FdAgent agent(fcfg, fd_store, &r2);
    const Tensor gates = ones_gates(6);
    const FdEvaluator evaluate = [&](const std::vector<int>& mask) {
        return srg.forward_classify(clip, gates, mask);
    };
    Rng rng(9);
    uint64_t episode = 0;
    for (auto _ : state) {
        Rng ep = rng.fork(episode++);
        const FdEpisodeResult res = fd_episode(clip, evaluate, agent, 5, 20.0, &ep, 5);
        benchmark::DoNotOptimize(res.total_reward);
    }
}
BENCHMARK(bm_fd_episode);

} // namespace

BENCHMARK_MAIN();

#include "relforge/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <mutex>
#include <numeric>
#include <stdexcept>
#include <thread>

namespace relforge {

std::vector<int> all_frames(int t_frames) {
    if (t_frames < 1) throw std::invalid_argument("need at least one frame");
    std::vector<int> mask(static_cast<size_t>(t_frames));
    std::iota(mask.begin(), mask.end(), 0);
    return mask;
}

double mask_recall(const std::vector<int>& mask, const std::vector<int>& informative) {
    const size_t denom = std::min(mask.size(), informative.size());
    if (denom == 0) return 1.0;
    size_t hit = 0;
    for (int f : mask)
        if (std::find(informative.begin(), informative.end(), f) != informative.end()) ++hit;
    return static_cast<double>(hit) / static_cast<double>(denom);
}

Selection select_frames_and_gates(const SceneClip& clip, const SrgModel& srg, const FdAgent* fd,
                                  const RgAgent* rg, int fd_steps, int rg_steps) {
    Selection sel;
    if (fd) {
        FdEvaluator evaluate = [&](const std::vector<int>& mask) {
            return srg.forward_classify(clip, ones_gates(clip.n_persons), mask);
        };
        sel.mask = fd_episode(clip, evaluate, *fd, fd_steps, 0.0, nullptr).final_mask;
    } else {
        sel.mask = all_frames(clip.n_frames);
    }
    if (rg)
        sel.gates = rg_episode(clip, srg, *rg, sel.mask, rg_steps, 0.0, nullptr).final_gates;
    else
        sel.gates = ones_gates(clip.n_persons);
    return sel;
}

SystemForward system_forward(const SceneClip& clip, const SrgModel& srg, const FdAgent* fd,
                             const RgAgent* rg, int fd_steps, int rg_steps) {
    SystemForward out;
    out.sel = select_frames_and_gates(clip, srg, fd, rg, fd_steps, rg_steps);
    out.fwd = srg.forward_classify(clip, out.sel.gates, out.sel.mask);
    return out;
}

double evaluate_accuracy(const std::vector<SceneClip>& clips, const SrgModel& srg,
                         const FdAgent* fd, const RgAgent* rg, int fd_steps, int rg_steps) {
    if (clips.empty()) throw std::invalid_argument("cannot evaluate on an empty clip set");
    int correct = 0;
    for (const auto& clip : clips) {
        const SystemForward out = system_forward(clip, srg, fd, rg, fd_steps, rg_steps);
        if (out.fwd.predicted == clip.activity_label) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(clips.size());
}

SrgTrainStats train_srg(SrgModel& srg, const std::vector<SceneClip>& clips,
                        const FdAgent* frozen_fd, const RgAgent* frozen_rg,
                        const SrgTrainConfig& cfg, MetricsWriter* metrics,
                        const std::string& stage) {
    if (clips.empty()) throw std::invalid_argument("cannot train on an empty clip set");
    if (cfg.epochs < 0) throw std::invalid_argument("epochs must be >= 0");
    if (cfg.batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");

    // Selections are fixed for the whole stage: the frozen policies are
    // deterministic against the classifier as it stands at stage start.
    std::vector<Selection> selections;
    selections.reserve(clips.size());
    for (const auto& clip : clips)
        selections.push_back(
            select_frames_and_gates(clip, srg, frozen_fd, frozen_rg, cfg.fd_steps, cfg.rg_steps));

    SrgTrainStats stats;
    Rng shuffle_rng = Rng(cfg.seed).fork(0x5f1e);
    std::vector<size_t> order(clips.size());
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[static_cast<size_t>(shuffle_rng.uniform_int(
                                        static_cast<int64_t>(i)))]);
        double loss_sum = 0.0;
        int correct = 0;
        for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.batch_size)) {
            const size_t end = std::min(order.size(), start + static_cast<size_t>(cfg.batch_size));
            const double scale = 1.0 / static_cast<double>(end - start);
            for (size_t k = start; k < end; ++k) {
                const SceneClip& clip = clips[order[k]];
                const Selection& sel = selections[order[k]];
                SrgForward fwd = srg.forward_classify(clip, sel.gates, sel.mask, true);
                srg.backward(fwd, scale);
                loss_sum += fwd.loss;
                if (fwd.predicted == clip.activity_label) ++correct;
            }
            if (!srg.store().grads_finite())
                throw std::runtime_error("non-finite classifier gradient in stage " + stage);
            srg.store().step(cfg.opt);
        }
        stats.epoch_loss.push_back(loss_sum / static_cast<double>(clips.size()));
        stats.epoch_acc.push_back(static_cast<double>(correct) /
                                  static_cast<double>(clips.size()));
        if (metrics)
            metrics->write("srg_epoch", {{"stage", stage},
                                         {"epoch", epoch},
                                         {"loss", stats.epoch_loss.back()},
                                         {"acc", stats.epoch_acc.back()}});
    }
    return stats;
}

namespace {

struct SharedTrainState {
    std::mutex mu;
    std::atomic<int> next_episode{0};
    std::atomic<bool> failed{false};
    std::string failure_message;
};

} // namespace

AsyncTrainStats train_agent_async(AgentKind kind, ParamStore& shared_agent, const SrgModel& srg,
                                  const FdAgent* frozen_fd, const std::vector<SceneClip>& clips,
                                  const RgConfig& rg_cfg, const FdConfig& fd_cfg,
                                  const AsyncTrainConfig& cfg, MetricsWriter* metrics,
                                  const std::string& stage) {
    if (clips.empty()) throw std::invalid_argument("cannot train on an empty clip set");
    if (cfg.n_workers < 1) throw std::invalid_argument("n_workers must be >= 1");
    if (cfg.episodes < 0) throw std::invalid_argument("episodes must be >= 0");

    // The gating agent trains on the frames the frozen distillation policy
    // keeps; those picks are deterministic, so compute them once.
    std::vector<std::vector<int>> masks(clips.size());
    if (kind == AgentKind::Gating) {
        for (size_t i = 0; i < clips.size(); ++i) {
            if (frozen_fd) {
                FdEvaluator evaluate = [&, i](const std::vector<int>& mask) {
                    return srg.forward_classify(clips[i], ones_gates(clips[i].n_persons), mask);
                };
                masks[i] = fd_episode(clips[i], evaluate, *frozen_fd, cfg.fd_steps, 0.0, nullptr)
                               .final_mask;
            } else {
                masks[i] = all_frames(clips[i].n_frames);
            }
        }
    }

    SharedTrainState shared;
    AsyncTrainStats stats;
    stats.episode_rewards.assign(static_cast<size_t>(cfg.episodes), 0.0);
    stats.episode_confidence.assign(static_cast<size_t>(cfg.episodes), 0.0);
    std::vector<char> done(static_cast<size_t>(cfg.episodes), 0);
    const Rng episode_root(cfg.seed);

    auto worker = [&](int worker_id) {
        try {
            ParamStore local;
            RgAgent* rg_local = nullptr;
            FdAgent* fd_local = nullptr;
            std::unique_ptr<RgAgent> rg_holder;
            std::unique_ptr<FdAgent> fd_holder;
            if (kind == AgentKind::Gating) {
                rg_holder = std::make_unique<RgAgent>(rg_cfg, local, nullptr);
                rg_local = rg_holder.get();
            } else {
                fd_holder = std::make_unique<FdAgent>(fd_cfg, local, nullptr);
                fd_local = fd_holder.get();
            }
            {
                std::lock_guard<std::mutex> lock(shared.mu);
                local.copy_params_from(shared_agent);
            }

            while (!shared.failed.load()) {
                const int e = shared.next_episode.fetch_add(1);
                if (e >= cfg.episodes) break;
                const SceneClip& clip = clips[static_cast<size_t>(e) % clips.size()];
                Rng ep_rng = episode_root.fork(static_cast<uint64_t>(e) + 1);

                auto apply_window = [&](const std::vector<double>& rewards, double bootstrap,
                                        auto&& accumulate) {
                    const std::vector<double> returns =
                        n_step_returns(rewards, cfg.gamma, bootstrap);
                    local.zero_grads();
                    accumulate(returns);
                    if (!local.grads_finite())
                        throw std::runtime_error("non-finite policy gradient in stage " + stage);
                    std::lock_guard<std::mutex> lock(shared.mu);
                    shared_agent.add_grads_from(local);
                    shared_agent.step(cfg.opt);
                    local.copy_params_from(shared_agent);
                };

                double total_reward = 0.0, confidence = 0.0;
                nlohmann::json extra = nlohmann::json::object();
                if (kind == AgentKind::Gating) {
                    RgWindowFn window_fn = [&](std::vector<RgStep>& window, double bootstrap,
                                               bool) {
                        std::vector<double> rewards;
                        rewards.reserve(window.size());
                        for (const auto& s : window) rewards.push_back(s.reward);
                        apply_window(rewards, bootstrap, [&](const std::vector<double>& returns) {
                            rg_accumulate_window(*rg_local, window, returns, cfg.beta);
                        });
                    };
                    const RgEpisodeResult res = rg_episode(
                        clip, srg, *rg_local, masks[static_cast<size_t>(e) % clips.size()],
                        cfg.episode_steps, cfg.omega, &ep_rng, cfg.tau_max, window_fn);
                    total_reward = res.total_reward;
                    confidence = res.p_end;
                    extra["l21"] = res.l21_end;
                } else {
                    FdEvaluator evaluate = [&](const std::vector<int>& mask) {
                        return srg.forward_classify(clip, ones_gates(clip.n_persons), mask);
                    };
                    FdWindowFn window_fn = [&](std::vector<FdStep>& window, double bootstrap,
                                               bool) {
                        std::vector<double> rewards;
                        rewards.reserve(window.size());
                        for (const auto& s : window) rewards.push_back(s.reward);
                        apply_window(rewards, bootstrap, [&](const std::vector<double>& returns) {
                            fd_accumulate_window(*fd_local, window, returns, cfg.beta);
                        });
                    };
                    const FdEpisodeResult res =
                        fd_episode(clip, evaluate, *fd_local, cfg.episode_steps, cfg.omega,
                                   &ep_rng, cfg.tau_max, window_fn);
                    total_reward = res.total_reward;
                    confidence = res.p_end;
                    extra["mask"] = res.final_mask;
                    extra["informative_frames"] = clip.informative_frames;
                    extra["recall"] = mask_recall(res.final_mask, clip.informative_frames);
                }

                stats.episode_rewards[static_cast<size_t>(e)] = total_reward;
                stats.episode_confidence[static_cast<size_t>(e)] = confidence;
                done[static_cast<size_t>(e)] = 1;
                if (metrics) {
                    nlohmann::json fields = {
                        {"stage", stage},
                        {"agent", kind == AgentKind::Gating ? "gating" : "distill"},
                        {"episode", e},
                        {"clip_id", clip.clip_id},
                        {"worker", worker_id},
                        {"reward", total_reward},
                        {"confidence", confidence}};
                    fields.update(extra);
                    metrics->write("episode", fields);
                }
            }
        } catch (const std::exception& ex) {
            std::lock_guard<std::mutex> lock(shared.mu);
            if (!shared.failed.exchange(true)) shared.failure_message = ex.what();
        }
    };

    std::vector<std::thread> threads;
    threads.reserve(static_cast<size_t>(cfg.n_workers));
    for (int w = 0; w < cfg.n_workers; ++w) threads.emplace_back(worker, w);
    for (auto& t : threads) t.join();

    for (char d : done)
        if (d) ++stats.episodes_run;

    if (shared.failed.load()) {
        std::string note;
        if (!cfg.failure_checkpoint.empty()) {
            Checkpoint::from_stores({&shared_agent}).write(cfg.failure_checkpoint);
            note = "; partial checkpoint written to " + cfg.failure_checkpoint;
        }
        throw std::runtime_error("training worker failed: " + shared.failure_message + note);
    }
    return stats;
}

std::vector<StageResult> alternate_training(SrgModel& srg, FdAgent& fd, RgAgent& rg,
                                            const std::vector<SceneClip>& train_clips,
                                            const std::vector<SceneClip>& eval_clips,
                                            const AlternateConfig& cfg, MetricsWriter* metrics) {
    if (cfg.cycles < 1) throw std::invalid_argument("cycles must be >= 1");
    if (!cfg.out_dir.empty()) std::filesystem::create_directories(cfg.out_dir);

    std::vector<StageResult> results;
    bool fd_trained = false, rg_trained = false;
    int stage_idx = 0;

    auto finish_stage = [&](const std::string& name) {
        StageResult res;
        res.stage = name;
        res.eval_acc = evaluate_accuracy(eval_clips, srg, fd_trained ? &fd : nullptr,
                                         rg_trained ? &rg : nullptr, cfg.eval_fd_steps,
                                         cfg.eval_rg_steps);
        if (!cfg.out_dir.empty()) {
            res.checkpoint_path =
                cfg.out_dir + "/stage_" + std::to_string(stage_idx) + "_" + name + ".ckpt";
            Checkpoint::from_stores({&srg.store(), &fd.store(), &rg.store()})
                .write(res.checkpoint_path);
        }
        if (metrics)
            metrics->write("stage", {{"stage", name},
                                     {"index", stage_idx},
                                     {"eval_acc", res.eval_acc},
                                     {"checkpoint", res.checkpoint_path}});
        results.push_back(res);
        ++stage_idx;
    };

    for (int cycle = 0; cycle < cfg.cycles; ++cycle) {
        const std::string tag = "cycle" + std::to_string(cycle);

        SrgTrainConfig srg_cfg = cfg.srg;
        srg_cfg.seed = cfg.srg.seed + static_cast<uint64_t>(cycle);
        train_srg(srg, train_clips, fd_trained ? &fd : nullptr, rg_trained ? &rg : nullptr,
                  srg_cfg, metrics, tag + ".srg");
        finish_stage(tag + ".srg");

        AsyncTrainConfig fd_cfg = cfg.fd;
        fd_cfg.seed = cfg.fd.seed + static_cast<uint64_t>(cycle);
        train_agent_async(AgentKind::Distill, fd.store(), srg, nullptr, train_clips, RgConfig{},
                          fd.config(), fd_cfg, metrics, tag + ".fd");
        fd_trained = true;
        finish_stage(tag + ".fd");

        AsyncTrainConfig rg_cfg = cfg.rg;
        rg_cfg.seed = cfg.rg.seed + static_cast<uint64_t>(cycle);
        train_agent_async(AgentKind::Gating, rg.store(), srg, &fd, train_clips, rg.config(),
                          FdConfig{}, rg_cfg, metrics, tag + ".rg");
        rg_trained = true;
        finish_stage(tag + ".rg");
    }
    return results;
}

} // namespace relforge

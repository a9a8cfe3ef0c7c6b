#pragma once

#include "relforge/fd_agent.hpp"
#include "relforge/metrics.hpp"
#include "relforge/param_store.hpp"
#include "relforge/rg_agent.hpp"
#include "relforge/srg.hpp"
#include "relforge/trajectory.hpp"

#include <string>
#include <vector>

namespace relforge {

enum class AgentKind { Distill, Gating };

std::vector<int> all_frames(int t_frames);

// |mask ∩ informative| / min(|mask|, |informative|); 1 when either side is empty.
double mask_recall(const std::vector<int>& mask, const std::vector<int>& informative);

// Deployment-mode selection: the distillation policy picks the retained
// frames (all frames when absent), then the gating policy sets the relation
// gates on them (all ones when absent). Both run deterministically.
struct Selection {
    std::vector<int> mask;
    Tensor gates;
};

Selection select_frames_and_gates(const SceneClip& clip, const SrgModel& srg, const FdAgent* fd,
                                  const RgAgent* rg, int fd_steps, int rg_steps);

struct SystemForward {
    Selection sel;
    SrgForward fwd;
};

SystemForward system_forward(const SceneClip& clip, const SrgModel& srg, const FdAgent* fd,
                             const RgAgent* rg, int fd_steps, int rg_steps);

double evaluate_accuracy(const std::vector<SceneClip>& clips, const SrgModel& srg,
                         const FdAgent* fd, const RgAgent* rg, int fd_steps, int rg_steps);

struct SrgTrainConfig {
    int epochs = 5;
    int batch_size = 8;
    OptimConfig opt;
    int fd_steps = 5;  // frozen-policy episode lengths
    int rg_steps = 10;
    uint64_t seed = 1;
};

struct SrgTrainStats {
    std::vector<double> epoch_loss;
    std::vector<double> epoch_acc;
};

// Supervised classifier stage. Frozen policies (either may be null) pick
// each clip's frames and gates once up front; batches use the mean loss.
SrgTrainStats train_srg(SrgModel& srg, const std::vector<SceneClip>& clips,
                        const FdAgent* frozen_fd, const RgAgent* frozen_rg,
                        const SrgTrainConfig& cfg, MetricsWriter* metrics,
                        const std::string& stage);

struct AsyncTrainConfig {
    int n_workers = 16;
    int episodes = 200; // total across workers
    int episode_steps = 10;
    int tau_max = 5;
    double gamma = 0.99;
    double beta = 0.01;
    double omega = 15.0;
    OptimConfig opt;
    uint64_t seed = 1;
    int fd_steps = 5; // frozen-distill episode length when training the gating agent
    std::string failure_checkpoint; // partial snapshot on worker failure; "" = skip
};

struct AsyncTrainStats {
    std::vector<double> episode_rewards;    // by episode id
    std::vector<double> episode_confidence; // p(correct class) after the episode
    int episodes_run = 0;
};

// Asynchronous advantage actor-critic over a frozen classifier. Workers
// hold local parameter copies, roll episodes, and apply each update window
// under a shared lock: add local gradients, step the shared optimizer,
// refresh the local copy. A worker exception stops the run; the shared
// parameters so far are snapshotted to `failure_checkpoint` if set.
AsyncTrainStats train_agent_async(AgentKind kind, ParamStore& shared_agent, const SrgModel& srg,
                                  const FdAgent* frozen_fd, const std::vector<SceneClip>& clips,
                                  const RgConfig& rg_cfg, const FdConfig& fd_cfg,
                                  const AsyncTrainConfig& cfg, MetricsWriter* metrics,
                                  const std::string& stage);

struct AlternateConfig {
    int cycles = 3;
    SrgTrainConfig srg;
    AsyncTrainConfig fd;
    AsyncTrainConfig rg;
    int eval_fd_steps = 5;
    int eval_rg_steps = 10;
    std::string out_dir;
};

struct StageResult {
    std::string stage;
    double eval_acc = 0.0;
    std::string checkpoint_path;
};

// Alternating schedule: per cycle, classifier stage, then distillation
// agent, then gating agent. The classifier stage uses the frozen agents
// from the second cycle on; agent weights persist across cycles. Every
// stage ends with an evaluation pass and a full-system checkpoint.
std::vector<StageResult> alternate_training(SrgModel& srg, FdAgent& fd, RgAgent& rg,
                                            const std::vector<SceneClip>& train_clips,
                                            const std::vector<SceneClip>& eval_clips,
                                            const AlternateConfig& cfg, MetricsWriter* metrics);

} // namespace relforge

#pragma once

#include "relforge/nn.hpp"
#include "relforge/param_store.hpp"
#include "relforge/rng.hpp"
#include "relforge/srg.hpp"

#include <array>
#include <functional>
#include <utility>
#include <vector>

namespace relforge {

struct FdConfig {
    int n_frames = 10;  // T
    int t_distill = 5;  // retained slots
    int d_feature = 16;
    int c_squeeze = 8;
    int c_extract = 16;
    int mask_fc = 16;
    int trunk = 32;
    int lstm_hidden = 32;
};

// Evenly spaced initial retained frames plus the FIFO queue of the rest,
// both ascending. E.g. T=10, T_d=5 -> {0,2,4,6,8} and [1,3,5,7,9].
std::pair<std::vector<int>, std::vector<int>> init_selection(int t_frames, int t_distill);

// Observation: the full feature volume, the gathered retained slice, and
// the binary retain mask.
struct FdState {
    Tensor features;  // [N, T, D_F]
    Tensor distilled; // [N, T_d, D_F], slots in ascending frame order
    std::vector<double> mask_bits; // [T], 1 = retained
    std::vector<int> mask_ids;     // ascending
};

FdState build_fd_state(const SceneClip& clip, const std::vector<int>& mask_ids);

struct FdMemory {
    Tensor h, c; // [1, lstm_hidden]
    static FdMemory zero(int hidden);
};

struct FdOutput {
    Tensor logits; // [T_d, 2]: per slot, column 0 = stay, 1 = shift
    std::vector<std::array<double, 2>> probs;
    double value = 0.0;
};

struct FdForwardCache {
    AffineCache g_sq, g_conv, d_sq, d_conv, m1, m2, trunk, critic;
    std::vector<AffineCache> actor; // one per slot
    ReluCache g_sq_r, g_conv_r, d_sq_r, d_conv_r, m1_r, m2_r, trunk_r;
    LstmCache lstm;
    int n_persons = 0, t_frames = 0, t_distill = 0;
};

// Stay/shift policy over the retained slots with a critic head.
// Wiring: the full volume and the retained slice each run a per-frame
// squeeze layer (person mean-pooled), then a 3-tap temporal layer; the
// full-volume branch is time-pooled to one vector, the retained branch
// keeps its per-slot rows plus a pooled vector. The binary mask runs two
// small layers. Pooled global, pooled retained, and mask features feed the
// trunk and an LSTM; each slot's stay/shift logits come from a shared head
// on [lstm hidden, that slot's row].
class FdAgent {
public:
    FdAgent(const FdConfig& cfg, ParamStore& store, Rng* init_rng,
            const std::string& prefix = "fd");

    const FdConfig& config() const { return cfg_; }
    ParamStore& store() { return *store_; }

    FdOutput forward(const FdState& state, FdMemory& memory, FdForwardCache* cache = nullptr) const;

    // dlogits: [T_d, 2]. dmem_h/dmem_c behave as in the gating agent.
    void backward(const FdForwardCache& cache, const Tensor& dlogits, double dvalue,
                  Tensor& dmem_h, Tensor& dmem_c) const;

private:
    FdConfig cfg_;
    ParamStore* store_;
    AffineParams g_sq_, g_conv_, d_sq_, d_conv_, m1_, m2_, trunk_, actor_, critic_;
    LstmParams lstm_;
};

struct FdActionSample {
    std::vector<int> actions; // 0 = stay, 1 = shift
    std::vector<double> log_probs;
    double log_prob_sum = 0.0;
    double entropy_sum = 0.0;
};

// Training: per-slot categorical sampling. rng == nullptr: argmax with ties
// resolved to stay.
FdActionSample sample_actions(const FdOutput& out, Rng* rng);

struct FdApplyResult {
    std::vector<int> mask;    // ascending
    std::vector<int> queue;   // FIFO
    std::vector<int> applied; // per slot; a shift on an empty queue records a stay
};

// Applies stay/shift per slot in temporal order: a shift dequeues the head
// as the replacement and appends the discarded frame to the queue.
FdApplyResult fd_apply(const std::vector<int>& mask, const std::vector<int>& queue,
                       const std::vector<int>& actions);

// Step reward: confidence ascent + prediction shift. sgn(0) = 0.
double fd_reward(double p_new, double p_old, int pred_new, int pred_old, int label, double omega);

struct FdStep {
    std::vector<int> actions;
    std::vector<int> applied;
    std::vector<int> mask_after;
    std::vector<std::array<double, 2>> probs;
    std::vector<double> log_probs;
    double log_prob_sum = 0.0;
    double entropy_sum = 0.0;
    double value = 0.0;
    double reward = 0.0;
    double p_correct = 0.0;
    int predicted = 0;
    FdForwardCache cache; // training only
    bool has_cache = false;
};

struct FdEpisodeResult {
    std::vector<FdStep> steps;
    std::vector<int> final_mask;
    double p_start = 0.0, p_end = 0.0;
    int pred_start = 0, pred_end = 0;
    double total_reward = 0.0;
};

// Scores a candidate retained-frame set; wraps the classifier and any
// frozen gating policy the caller wants applied.
using FdEvaluator = std::function<SrgForward(const std::vector<int>& mask)>;

using FdWindowFn = std::function<void(std::vector<FdStep>& window, double bootstrap_value,
                                      bool terminal)>;

FdEpisodeResult fd_episode(const SceneClip& clip, const FdEvaluator& evaluate,
                           const FdAgent& agent, int n_steps, double omega, Rng* rng,
                           int tau_max = 0, const FdWindowFn& window_fn = nullptr);

void fd_accumulate_window(const FdAgent& agent, std::vector<FdStep>& window,
                          const std::vector<double>& returns, double beta);

} // namespace relforge

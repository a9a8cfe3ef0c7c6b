#pragma once

#include "relforge/nn.hpp"
#include "relforge/param_store.hpp"
#include "relforge/rng.hpp"
#include "relforge/srg.hpp"

#include <functional>
#include <vector>

namespace relforge {

// Row-structured sparsity: sum over persons of the euclidean norm of the
// off-diagonal gate row.
double l21_norm(const Tensor& gates);

// Symmetrizes G, scales the edge attributes, and stores the gates on the
// graph. Entries must lie in [0, 1].
void apply_gates(RelationGraph& g, const Tensor& gates);

// Step reward: sparsity descent + confidence ascent + prediction shift.
// sgn(0) = 0; the shift bonus/penalty is +-omega.
double rg_reward(double l21_new, double l21_old, double p_new, double p_old, int pred_new,
                 int pred_old, int label, double omega);

// Unordered pairs (i, j), i < j, in lexicographic order. This is both the
// emission order of the agent and the row order of the stacked state.
std::vector<std::pair<int, int>> unordered_pairs(int n);

struct RgConfig {
    int d_v = 32;
    int d_e = 16;
    int n_classes = 4;
    int width = 32;       // branch and trunk width
    int lstm_hidden = 32;
    double sigma_min = 1e-3;
    double sigma_max = 1.0;
};

// Observation for one edge decision: the stack of all relation triplets,
// the triplet of the edge under consideration, and the activity scores.
struct RgState {
    Tensor s_g; // [E_u, 2 D_v + D_e]
    Tensor s_l; // [2 D_v + D_e]
    Tensor s_u; // [K]
    int edge_i = 0, edge_j = 0;
};

RgState build_rg_state(const RelationGraph& graph, int i, int j);

struct RgMemory {
    Tensor h, c; // [1, lstm_hidden]
    static RgMemory zero(int hidden);
};

struct RgOutput {
    double mu = 0.0;
    double sigma = 0.0;
    double value = 0.0;
};

struct RgForwardCache {
    AffineCache ag1, ag2, al1, al2, au, atrunk, aactor, acritic;
    ReluCache rg1, rg2, rl1, rl2, ru, rtrunk;
    LstmCache lstm;
    int64_t stack_rows = 0;
    double mu = 0.0, sigma = 0.0;
    double actor_raw_mu = 0.0, actor_raw_sigma = 0.0;
    bool sigma_clamped = false;
};

// Gaussian edge-gating policy with a critic head. The stacked triplets are
// passed through a shared per-edge layer and mean-pooled; the local triplet
// and the activity scores run through their own branches; the concatenated
// trunk feeds an LSTM whose hidden state carries the within-episode memory.
class RgAgent {
public:
    RgAgent(const RgConfig& cfg, ParamStore& store, Rng* init_rng,
            const std::string& prefix = "rg");

    const RgConfig& config() const { return cfg_; }
    ParamStore& store() { return *store_; }

    // Advances `memory`; fills `cache` when training.
    RgOutput forward(const RgState& state, RgMemory& memory, RgForwardCache* cache = nullptr) const;

    // One-emission backward. dmem_h/dmem_c carry the gradient wrt this
    // emission's output memory in, and its input memory out.
    void backward(const RgForwardCache& cache, double dmu, double dsigma, double dvalue,
                  Tensor& dmem_h, Tensor& dmem_c) const;

private:
    RgConfig cfg_;
    ParamStore* store_;
    AffineParams fc_g1_, fc_g2_, fc_l1_, fc_l2_, fc_u_, fc_trunk_, fc_actor_, fc_critic_;
    LstmParams lstm_;
};

struct GateSample {
    double g = 0.0;
    double log_prob = 0.0;
    double entropy = 0.0;
};

double gaussian_log_pdf(double x, double mu, double sigma);
double gaussian_entropy(double sigma);

// Training: sample, clamp to [0,1], log-prob of the unclamped density at the
// clamped value. Deterministic mode returns mu.
GateSample sample_gate(const RgOutput& out, Rng* rng);

// One reinforcement step: a full cycle of gate emissions plus its reward.
struct RgStep {
    Tensor gates; // symmetric gate matrix applied after the cycle
    std::vector<GateSample> samples;       // one per unordered edge
    std::vector<RgForwardCache> caches;    // training only
    double log_prob_sum = 0.0;
    double entropy_sum = 0.0;
    double value = 0.0; // mean critic value over the cycle
    double reward = 0.0;
    double l21 = 0.0;
    double p_correct = 0.0;
    int predicted = 0;
};

struct RgEpisodeResult {
    std::vector<RgStep> steps;
    Tensor final_gates;
    double l21_start = 0.0, l21_end = 0.0;
    double p_start = 0.0, p_end = 0.0;
    int pred_start = 0, pred_end = 0;
    double total_reward = 0.0;
};

// Called after every tau_max steps and at the terminal step.
using RgWindowFn = std::function<void(std::vector<RgStep>& window, double bootstrap_value,
                                      bool terminal)>;

// Runs an episode against a frozen classifier on the given retained frames.
// rng == nullptr selects deterministic gates (test mode). When `window_fn`
// is set (training), windows are handed over for the gradient update and
// their caches are released afterwards.
RgEpisodeResult rg_episode(const SceneClip& clip, const SrgModel& srg, const RgAgent& agent,
                           const std::vector<int>& mask, int n_steps, double omega, Rng* rng,
                           int tau_max = 0, const RgWindowFn& window_fn = nullptr);

// Accumulates policy, entropy, and value gradients for one window into the
// agent's store. The advantage is treated as a constant in the policy term.
void rg_accumulate_window(const RgAgent& agent, std::vector<RgStep>& window,
                          const std::vector<double>& returns, double beta);

} // namespace relforge

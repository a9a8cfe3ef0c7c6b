#pragma once

#include "relforge/nn.hpp"
#include "relforge/param_store.hpp"
#include "relforge/rng.hpp"
#include "relforge/scene.hpp"
#include "relforge/tensor.hpp"

#include <memory>
#include <vector>

namespace relforge {

struct SrgConfig {
    int n_classes = 4;
    int d_v = 32;     // node attribute width
    int d_e = 16;     // edge attribute width
    int d_feature = 16;
    int m_iters = 3;  // propagation iterations per frame
};

// Row index of the directed pair (i, j), i != j, in compact edge storage.
inline int64_t pair_index(int i, int j, int n) {
    return static_cast<int64_t>(i) * (n - 1) + (j < i ? j : j - 1);
}
inline int64_t pair_count(int n) { return static_cast<int64_t>(n) * (n - 1); }

// Graph state for a single frame. Edge attributes are stored per directed
// pair; rows (i,j) and (j,i) hold equal values after every edge update.
// The *_h/*_c tensors are the recurrent cell states of the three update
// networks; they are zeroed whenever a frame is (re)initialized.
struct RelationGraph {
    int n = 0;
    Tensor h_v;   // [N, D_v]
    Tensor h_e;   // [E, D_e], E = N(N-1)
    Tensor gates; // [N, N], symmetric, diagonal unused
    Tensor u;     // [K], refreshed by update_global
    Tensor msg_h, msg_c;   // [E, D_v]
    Tensor node_h, node_c; // [N, D_v]
    Tensor edge_h, edge_c; // [E, D_e]

    std::vector<double> edge_attr(int i, int j) const;
    double gate(int i, int j) const { return gates.at(i, j); }
};

// All-ones gate matrix with a zeroed (unused) diagonal.
Tensor ones_gates(int n);

// Backward-pass records. One iteration tape per propagation iteration,
// one frame tape per retained frame.
struct SrgIterTape {
    LstmCache msg, node, edge;
};

struct SrgFrameTape {
    int frame = -1;
    AffineCache embed_v, embed_e; // embed_e.x holds the raw geometry channels
    std::vector<SrgIterTape> iters;
    AffineCache head; // head.x holds the gate-weighted edge sum
};

struct SrgTape {
    int n = 0;
    Tensor gates;
    std::vector<SrgFrameTape> frames;
};

struct SrgForward {
    double loss = 0.0;
    int label = 0;
    int predicted = 0;
    std::vector<double> logits;            // [K], sum of per-frame globals
    std::vector<double> probs;             // softmax(logits)
    std::vector<std::vector<double>> frame_u; // per retained frame
    RelationGraph summary;                 // attributes averaged over retained frames
    std::unique_ptr<SrgTape> tape;         // present when requested
};

// Relation-graph classifier: embeds persons and pairwise geometry, runs
// m gated propagation iterations per retained frame, and reads the class
// scores off the gate-weighted edge sum. Messages and the global edge sum
// are weighted by the gates so a fully gated-off person cannot influence
// the output.
class SrgModel {
public:
    SrgModel(const SrgConfig& cfg, ParamStore& store, Rng* init_rng,
             const std::string& prefix = "srg");

    const SrgConfig& config() const { return cfg_; }
    ParamStore& store() { return *store_; }

    // Embeds one frame, applies the gates, zeroes recurrent state.
    RelationGraph init_graph(const SceneClip& clip, int frame, const Tensor& gates) const;

    // Gate-weighted aggregate of the per-neighbor messages for one node.
    // Pure query: recurrent states are not advanced.
    Tensor collect_aggregate(const RelationGraph& g, int node) const;

    // One propagation stage each; propagate() runs all three in order.
    void update_nodes(RelationGraph& g) const;
    void update_edges(RelationGraph& g) const;
    void update_global(RelationGraph& g) const;
    void propagate(RelationGraph& g) const;

    // Full classifier pass over the retained frames of a clip.
    SrgForward forward_classify(const SceneClip& clip, const Tensor& gates,
                                const std::vector<int>& mask, bool want_tape = false) const;

    // Accumulates dLoss/dparams into the store; forward must carry a tape.
    // `scale` multiplies the loss, e.g. 1/B for batch means.
    void backward(const SrgForward& fwd, double scale = 1.0) const;

private:
    RelationGraph init_graph_impl(const SceneClip& clip, int frame, const Tensor& gates,
                                  AffineCache* ev, AffineCache* ee) const;
    void run_messages(const RelationGraph& g, Tensor& msgs, Tensor& agg, Tensor& msg_h,
                      Tensor& msg_c, LstmCache* cache) const;
    void run_nodes(RelationGraph& g, const Tensor& agg, LstmCache* cache) const;
    void run_edges(RelationGraph& g, Tensor* edge_hat_out, LstmCache* cache) const;
    void run_global(RelationGraph& g, Tensor* wsum_out, AffineCache* head_cache) const;

    SrgConfig cfg_;
    ParamStore* store_;
    AffineParams embed_v_; // D_F -> D_v
    AffineParams embed_e_; // 6 -> D_e
    LstmParams msg_net_;   // [h_e, h_v_j] -> D_v
    LstmParams node_net_;  // [agg, h_v_i] -> D_v
    LstmParams edge_net_;  // [h_v_i, h_v_j, h_e] -> D_e
    AffineParams head_;    // D_e -> K
};

} // namespace relforge

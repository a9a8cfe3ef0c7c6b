#include "relforge/srg.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace relforge {

namespace {

void check_gates(const Tensor& gates, int n) {
    if (gates.rank() != 2 || gates.dim(0) != n || gates.dim(1) != n)
        throw std::invalid_argument("gates must be [" + std::to_string(n) + "," +
                                    std::to_string(n) + "], got " + gates.shape_str());
}

} // namespace

std::vector<double> RelationGraph::edge_attr(int i, int j) const {
    if (i == j || i < 0 || j < 0 || i >= n || j >= n)
        throw std::invalid_argument("edge_attr: invalid pair (" + std::to_string(i) + "," +
                                    std::to_string(j) + ") for n=" + std::to_string(n));
    const int64_t d = h_e.dim(1);
    const int64_t row = pair_index(i, j, n);
    std::vector<double> out(static_cast<size_t>(d));
    for (int64_t k = 0; k < d; ++k) out[static_cast<size_t>(k)] = h_e[row * d + k];
    return out;
}

Tensor ones_gates(int n) {
    Tensor g = Tensor::full({n, n}, 1.0);
    for (int i = 0; i < n; ++i) g.at(i, i) = 0.0;
    return g;
}

SrgModel::SrgModel(const SrgConfig& cfg, ParamStore& store, Rng* init_rng,
                   const std::string& prefix)
    : cfg_(cfg), store_(&store) {
    if (cfg_.n_classes < 2 || cfg_.d_v < 1 || cfg_.d_e < 1 || cfg_.d_feature < 1 ||
        cfg_.m_iters < 1)
        throw std::invalid_argument("SrgModel: bad dimensions");
    embed_v_ = make_affine(store, prefix + ".embed_v", cfg_.d_feature, cfg_.d_v, init_rng);
    embed_e_ = make_affine(store, prefix + ".embed_e", 6, cfg_.d_e, init_rng);
    msg_net_ = make_lstm(store, prefix + ".msg", cfg_.d_e + cfg_.d_v, cfg_.d_v, init_rng);
    node_net_ = make_lstm(store, prefix + ".node", 2 * cfg_.d_v, cfg_.d_v, init_rng);
    edge_net_ = make_lstm(store, prefix + ".edge", 2 * cfg_.d_v + cfg_.d_e, cfg_.d_e, init_rng);
    head_ = make_affine(store, prefix + ".head", cfg_.d_e, cfg_.n_classes, init_rng);
}

RelationGraph SrgModel::init_graph(const SceneClip& clip, int frame, const Tensor& gates) const {
    return init_graph_impl(clip, frame, gates, nullptr, nullptr);
}

RelationGraph SrgModel::init_graph_impl(const SceneClip& clip, int frame, const Tensor& gates,
                                        AffineCache* ev, AffineCache* ee) const {
    const int n = clip.n_persons;
    if (n < 2)
        throw std::invalid_argument("init_graph: degenerate graph, n_persons=" +
                                    std::to_string(n));
    if (frame < 0 || frame >= clip.n_frames)
        throw std::invalid_argument("init_graph: frame " + std::to_string(frame) +
                                    " out of range [0," + std::to_string(clip.n_frames) + ")");
    if (clip.d_feature != cfg_.d_feature)
        throw std::invalid_argument("init_graph: clip feature width " +
                                    std::to_string(clip.d_feature) + " != model width " +
                                    std::to_string(cfg_.d_feature));
    check_gates(gates, n);

    RelationGraph g;
    g.n = n;
    g.gates = gates;
    const int64_t E = pair_count(n);

    Tensor x_p({n, cfg_.d_feature});
    for (int p = 0; p < n; ++p)
        for (int d = 0; d < cfg_.d_feature; ++d)
            x_p.at(p, d) = clip.person_features.at(p, frame, d);
    g.h_v = affine_forward(embed_v_, x_p, ev);

    Tensor x_e({E, 6});
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            if (i == j) continue;
            const auto f = interaction_features(clip.positions.at(i, frame, 0),
                                                clip.positions.at(i, frame, 1),
                                                clip.positions.at(j, frame, 0),
                                                clip.positions.at(j, frame, 1));
            const int64_t r = pair_index(i, j, n);
            for (int64_t k = 0; k < 6; ++k) x_e[r * 6 + k] = f[static_cast<size_t>(k)];
        }
    g.h_e = affine_forward(embed_e_, x_e, ee);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            if (i == j) continue;
            const int64_t r = pair_index(i, j, n);
            const double gv = gates.at(i, j);
            for (int64_t k = 0; k < cfg_.d_e; ++k) g.h_e[r * cfg_.d_e + k] *= gv;
        }

    g.u = Tensor({cfg_.n_classes});
    g.msg_h = Tensor({E, cfg_.d_v});
    g.msg_c = Tensor({E, cfg_.d_v});
    g.node_h = Tensor({n, cfg_.d_v});
    g.node_c = Tensor({n, cfg_.d_v});
    g.edge_h = Tensor({E, cfg_.d_e});
    g.edge_c = Tensor({E, cfg_.d_e});
    return g;
}

void SrgModel::run_messages(const RelationGraph& g, Tensor& msgs, Tensor& agg, Tensor& msg_h,
                            Tensor& msg_c, LstmCache* cache) const {
    const int n = g.n;
    const int64_t E = pair_count(n);
    const int64_t dv = cfg_.d_v, de = cfg_.d_e;
    Tensor x({E, de + dv});
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            if (i == j) continue;
            const int64_t r = pair_index(i, j, n);
            for (int64_t k = 0; k < de; ++k) x[r * (de + dv) + k] = g.h_e[r * de + k];
            for (int64_t k = 0; k < dv; ++k) x[r * (de + dv) + de + k] = g.h_v.at(j, k);
        }
    Tensor h_new, c_new;
    lstm_forward(msg_net_, x, msg_h, msg_c, h_new, c_new, cache);
    msg_h = h_new;
    msg_c = std::move(c_new);
    msgs = std::move(h_new);

    // masked relations contribute nothing: messages enter gate-weighted
    agg = Tensor({n, dv});
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            if (i == j) continue;
            const int64_t r = pair_index(i, j, n);
            const double gv = g.gates.at(i, j);
            for (int64_t k = 0; k < dv; ++k) agg.at(i, k) += gv * msgs[r * dv + k];
        }
}

Tensor SrgModel::collect_aggregate(const RelationGraph& g, int node) const {
    if (g.n < 2)
        throw std::invalid_argument("collect_aggregate: degenerate graph, n=" +
                                    std::to_string(g.n));
    if (node < 0 || node >= g.n)
        throw std::invalid_argument("collect_aggregate: node " + std::to_string(node) +
                                    " out of range");
    Tensor msg_h = g.msg_h, msg_c = g.msg_c; // pure query: advance copies only
    Tensor msgs, agg;
    run_messages(g, msgs, agg, msg_h, msg_c, nullptr);
    Tensor out({cfg_.d_v});
    for (int64_t k = 0; k < cfg_.d_v; ++k) out[k] = agg.at(node, k);
    return out;
}

void SrgModel::run_nodes(RelationGraph& g, const Tensor& agg, LstmCache* cache) const {
    const int64_t dv = cfg_.d_v;
    Tensor x({g.n, 2 * dv});
    for (int i = 0; i < g.n; ++i) {
        for (int64_t k = 0; k < dv; ++k) x.at(i, k) = agg.at(i, k);
        for (int64_t k = 0; k < dv; ++k) x.at(i, dv + k) = g.h_v.at(i, k);
    }
    Tensor h_new, c_new;
    lstm_forward(node_net_, x, g.node_h, g.node_c, h_new, c_new, cache);
    g.node_h = h_new;
    g.node_c = std::move(c_new);
    g.h_v = std::move(h_new);
}

void SrgModel::update_nodes(RelationGraph& g) const {
    Tensor msgs, agg;
    run_messages(g, msgs, agg, g.msg_h, g.msg_c, nullptr);
    run_nodes(g, agg, nullptr);
}

void SrgModel::run_edges(RelationGraph& g, Tensor* edge_hat_out, LstmCache* cache) const {
    const int n = g.n;
    const int64_t E = pair_count(n);
    const int64_t dv = cfg_.d_v, de = cfg_.d_e;
    Tensor x({E, 2 * dv + de});
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            if (i == j) continue;
            const int64_t r = pair_index(i, j, n);
            double* row = x.data() + r * (2 * dv + de);
            for (int64_t k = 0; k < dv; ++k) row[k] = g.h_v.at(i, k);
            for (int64_t k = 0; k < dv; ++k) row[dv + k] = g.h_v.at(j, k);
            for (int64_t k = 0; k < de; ++k) row[2 * dv + k] = g.h_e[r * de + k];
        }
    Tensor hat, c_new;
    lstm_forward(edge_net_, x, g.edge_h, g.edge_c, hat, c_new, cache);
    g.edge_h = hat;
    g.edge_c = std::move(c_new);
    // h'_e_ij = h'_e_ji = (hat_ij + hat_ji) / 2
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
            const int64_t r1 = pair_index(i, j, n), r2 = pair_index(j, i, n);
            for (int64_t k = 0; k < de; ++k) {
                const double v = 0.5 * (hat[r1 * de + k] + hat[r2 * de + k]);
                g.h_e[r1 * de + k] = v;
                g.h_e[r2 * de + k] = v;
            }
        }
    if (edge_hat_out) *edge_hat_out = std::move(hat);
}

void SrgModel::update_edges(RelationGraph& g) const { run_edges(g, nullptr, nullptr); }

void SrgModel::run_global(RelationGraph& g, Tensor* wsum_out, AffineCache* head_cache) const {
    const int64_t de = cfg_.d_e;
    Tensor wsum({de});
    for (int i = 0; i < g.n; ++i)
        for (int j = i + 1; j < g.n; ++j) {
            const int64_t r = pair_index(i, j, g.n);
            const double gv = g.gates.at(i, j);
            for (int64_t k = 0; k < de; ++k) wsum[k] += gv * g.h_e[r * de + k];
        }
    g.u = affine_forward(head_, wsum, head_cache);
    if (wsum_out) *wsum_out = std::move(wsum);
}

void SrgModel::update_global(RelationGraph& g) const { run_global(g, nullptr, nullptr); }

void SrgModel::propagate(RelationGraph& g) const {
    update_nodes(g);
    update_edges(g);
    update_global(g);
}

SrgForward SrgModel::forward_classify(const SceneClip& clip, const Tensor& gates,
                                      const std::vector<int>& mask, bool want_tape) const {
    if (mask.empty()) throw std::invalid_argument("forward_classify: empty frame mask");
    for (size_t k = 0; k < mask.size(); ++k) {
        if (mask[k] < 0 || mask[k] >= clip.n_frames)
            throw std::invalid_argument("forward_classify: frame " + std::to_string(mask[k]) +
                                        " out of range [0," + std::to_string(clip.n_frames) + ")");
        if (k > 0 && mask[k] <= mask[k - 1])
            throw std::invalid_argument("forward_classify: mask must be strictly ascending");
    }
    if (clip.activity_label < 0 || clip.activity_label >= cfg_.n_classes)
        throw std::invalid_argument("forward_classify: label " +
                                    std::to_string(clip.activity_label) + " out of range for " +
                                    std::to_string(cfg_.n_classes) + " classes");

    SrgForward out;
    out.label = clip.activity_label;
    out.logits.assign(static_cast<size_t>(cfg_.n_classes), 0.0);
    if (want_tape) {
        out.tape = std::make_unique<SrgTape>();
        out.tape->gates = gates;
        out.tape->n = clip.n_persons;
    }

    const int n = clip.n_persons;
    const int64_t E = pair_count(n);
    out.summary.n = n;
    out.summary.gates = gates;
    out.summary.h_v = Tensor({n, cfg_.d_v});
    out.summary.h_e = Tensor({E, cfg_.d_e});

    for (int t : mask) {
        SrgFrameTape* ft = nullptr;
        if (out.tape) {
            out.tape->frames.emplace_back();
            ft = &out.tape->frames.back();
            ft->frame = t;
        }
        RelationGraph g = init_graph_impl(clip, t, gates, ft ? &ft->embed_v : nullptr,
                                          ft ? &ft->embed_e : nullptr);
        for (int k = 0; k < cfg_.m_iters; ++k) {
            SrgIterTape* it = nullptr;
            if (ft) {
                ft->iters.emplace_back();
                it = &ft->iters.back();
            }
            Tensor msgs, agg;
            run_messages(g, msgs, agg, g.msg_h, g.msg_c, it ? &it->msg : nullptr);
            run_nodes(g, agg, it ? &it->node : nullptr);
            run_edges(g, nullptr, it ? &it->edge : nullptr);
        }
        run_global(g, nullptr, ft ? &ft->head : nullptr);

        out.frame_u.push_back(g.u.values());
        for (int k = 0; k < cfg_.n_classes; ++k) out.logits[static_cast<size_t>(k)] += g.u[k];
        for (int64_t i = 0; i < out.summary.h_v.numel(); ++i) out.summary.h_v[i] += g.h_v[i];
        for (int64_t i = 0; i < out.summary.h_e.numel(); ++i) out.summary.h_e[i] += g.h_e[i];
    }

    const double inv = 1.0 / static_cast<double>(mask.size());
    for (int64_t i = 0; i < out.summary.h_v.numel(); ++i) out.summary.h_v[i] *= inv;
    for (int64_t i = 0; i < out.summary.h_e.numel(); ++i) out.summary.h_e[i] *= inv;

    const SoftmaxXent sx = softmax_xent(out.logits, out.label);
    out.loss = sx.loss;
    out.probs = sx.probs;
    out.predicted = static_cast<int>(
        std::max_element(out.probs.begin(), out.probs.end()) - out.probs.begin());
    out.summary.u = Tensor({cfg_.n_classes}, out.logits);
    return out;
}

void SrgModel::backward(const SrgForward& fwd, double scale) const {
    if (!fwd.tape)
        throw std::logic_error("SrgModel::backward: forward pass was run without a tape");
    const SrgTape& tape = *fwd.tape;
    const int n = tape.n;
    const int64_t E = pair_count(n);
    const int64_t dv = cfg_.d_v, de = cfg_.d_e;
    const Tensor& gates = tape.gates;

    SoftmaxXent sx;
    sx.probs = fwd.probs;
    const std::vector<double> dlogits = softmax_xent_grad(sx, fwd.label, scale);

    for (auto it_frame = tape.frames.rbegin(); it_frame != tape.frames.rend(); ++it_frame) {
        const SrgFrameTape& ft = *it_frame;
        const Tensor du({cfg_.n_classes}, dlogits);
        const Tensor dwsum = affine_backward(head_, ft.head, du);

        Tensor dh_e({E, de}); // grad wrt symmetrized edge attrs leaving the iteration
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j) {
                const int64_t r = pair_index(i, j, n);
                const double gv = gates.at(i, j);
                for (int64_t k = 0; k < de; ++k) dh_e[r * de + k] = gv * dwsum[k];
            }
        Tensor dh_v({n, dv});
        Tensor dmsg_h({E, dv}), dmsg_c({E, dv});
        Tensor dnode_h({n, dv}), dnode_c({n, dv});
        Tensor dedge_h({E, de}), dedge_c({E, de});

        for (int k = static_cast<int>(ft.iters.size()) - 1; k >= 0; --k) {
            const SrgIterTape& it = ft.iters[static_cast<size_t>(k)];

            // symmetrization: each hat row feeds both stored directions at 1/2
            Tensor dhat({E, de});
            for (int i = 0; i < n; ++i)
                for (int j = i + 1; j < n; ++j) {
                    const int64_t r1 = pair_index(i, j, n), r2 = pair_index(j, i, n);
                    for (int64_t d = 0; d < de; ++d) {
                        const double v = 0.5 * (dh_e[r1 * de + d] + dh_e[r2 * de + d]);
                        dhat[r1 * de + d] = v;
                        dhat[r2 * de + d] = v;
                    }
                }
            for (int64_t i = 0; i < dhat.numel(); ++i) dhat[i] += dedge_h[i];

            Tensor dx_edge, deh_prev, dec_prev;
            lstm_backward(edge_net_, it.edge, dhat, dedge_c, dx_edge, deh_prev, dec_prev);
            dedge_h = std::move(deh_prev);
            dedge_c = std::move(dec_prev);

            Tensor dh_e_in({E, de});
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < n; ++j) {
                    if (i == j) continue;
                    const int64_t r = pair_index(i, j, n);
                    const double* row = dx_edge.data() + r * (2 * dv + de);
                    for (int64_t d = 0; d < dv; ++d) dh_v.at(i, d) += row[d];
                    for (int64_t d = 0; d < dv; ++d) dh_v.at(j, d) += row[dv + d];
                    for (int64_t d = 0; d < de; ++d) dh_e_in[r * de + d] += row[2 * dv + d];
                }

            Tensor dh_node({n, dv});
            for (int64_t i = 0; i < dh_node.numel(); ++i) dh_node[i] = dh_v[i] + dnode_h[i];
            Tensor dx_node, dnh_prev, dnc_prev;
            lstm_backward(node_net_, it.node, dh_node, dnode_c, dx_node, dnh_prev, dnc_prev);
            dnode_h = std::move(dnh_prev);
            dnode_c = std::move(dnc_prev);

            Tensor dh_v_in({n, dv});
            Tensor dmsgs({E, dv});
            for (int i = 0; i < n; ++i) {
                const double* row = dx_node.data() + i * 2 * dv;
                for (int64_t d = 0; d < dv; ++d) dh_v_in.at(i, d) += row[dv + d];
                // agg backward: dmsg_ij = g_ij * dagg_i
                for (int j = 0; j < n; ++j) {
                    if (i == j) continue;
                    const int64_t r = pair_index(i, j, n);
                    const double gv = gates.at(i, j);
                    for (int64_t d = 0; d < dv; ++d) dmsgs[r * dv + d] = gv * row[d];
                }
            }
            for (int64_t i = 0; i < dmsgs.numel(); ++i) dmsgs[i] += dmsg_h[i];

            Tensor dx_msg, dmh_prev, dmc_prev;
            lstm_backward(msg_net_, it.msg, dmsgs, dmsg_c, dx_msg, dmh_prev, dmc_prev);
            dmsg_h = std::move(dmh_prev);
            dmsg_c = std::move(dmc_prev);

            for (int i = 0; i < n; ++i)
                for (int j = 0; j < n; ++j) {
                    if (i == j) continue;
                    const int64_t r = pair_index(i, j, n);
                    const double* row = dx_msg.data() + r * (de + dv);
                    for (int64_t d = 0; d < de; ++d) dh_e_in[r * de + d] += row[d];
                    for (int64_t d = 0; d < dv; ++d) dh_v_in.at(j, d) += row[de + d];
                }

            dh_v = std::move(dh_v_in);
            dh_e = std::move(dh_e_in);
        }

        // undo the initial gating, then the two embeddings
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) {
                if (i == j) continue;
                const int64_t r = pair_index(i, j, n);
                const double gv = gates.at(i, j);
                for (int64_t d = 0; d < de; ++d) dh_e[r * de + d] *= gv;
            }
        affine_backward(embed_e_, ft.embed_e, dh_e);
        affine_backward(embed_v_, ft.embed_v, dh_v);
    }
}

} // namespace relforge

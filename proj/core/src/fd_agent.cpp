#include "relforge/fd_agent.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace relforge {

namespace {

double sgn(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

// [T, c] -> [T, 3c]: rows are [x_{t-1} | x_t | x_{t+1}] with zero pads.
Tensor taps3(const Tensor& x) {
    const int64_t t_len = x.dim(0), c = x.dim(1);
    Tensor y = Tensor::zeros({t_len, 3 * c});
    for (int64_t t = 0; t < t_len; ++t)
        for (int64_t k = 0; k < c; ++k) {
            if (t > 0) y.at(t, k) = x.at(t - 1, k);
            y.at(t, c + k) = x.at(t, k);
            if (t + 1 < t_len) y.at(t, 2 * c + k) = x.at(t + 1, k);
        }
    return y;
}

void taps3_backward(const Tensor& dy, Tensor& dx) {
    const int64_t t_len = dx.dim(0), c = dx.dim(1);
    for (int64_t t = 0; t < t_len; ++t)
        for (int64_t k = 0; k < c; ++k) {
            if (t > 0) dx.at(t - 1, k) += dy.at(t, k);
            dx.at(t, k) += dy.at(t, c + k);
            if (t + 1 < t_len) dx.at(t + 1, k) += dy.at(t, 2 * c + k);
        }
}

void check_mask(const std::vector<int>& mask, int t_frames) {
    if (mask.empty()) throw std::invalid_argument("retained-frame set is empty");
    for (size_t k = 0; k < mask.size(); ++k) {
        if (mask[k] < 0 || mask[k] >= t_frames)
            throw std::invalid_argument("frame id " + std::to_string(mask[k]) +
                                        " out of range for " + std::to_string(t_frames) +
                                        " frames");
        if (k > 0 && mask[k] <= mask[k - 1])
            throw std::invalid_argument("retained frames must be strictly ascending");
    }
}

} // namespace

std::pair<std::vector<int>, std::vector<int>> init_selection(int t_frames, int t_distill) {
    if (t_distill < 1 || t_distill > t_frames)
        throw std::invalid_argument("t_distill must lie in [1, t_frames], got " +
                                    std::to_string(t_distill) + " of " +
                                    std::to_string(t_frames));
    std::vector<int> mask(static_cast<size_t>(t_distill));
    for (int k = 0; k < t_distill; ++k) mask[static_cast<size_t>(k)] = k * t_frames / t_distill;
    std::vector<int> queue;
    queue.reserve(static_cast<size_t>(t_frames - t_distill));
    size_t next = 0;
    for (int t = 0; t < t_frames; ++t) {
        if (next < mask.size() && mask[next] == t)
            ++next;
        else
            queue.push_back(t);
    }
    return {std::move(mask), std::move(queue)};
}

FdState build_fd_state(const SceneClip& clip, const std::vector<int>& mask_ids) {
    check_mask(mask_ids, clip.n_frames);
    const int64_t n = clip.n_persons, t_len = clip.n_frames, d_f = clip.d_feature;
    FdState state;
    state.features = clip.person_features;
    state.mask_ids = mask_ids;
    state.mask_bits.assign(static_cast<size_t>(t_len), 0.0);
    for (int f : mask_ids) state.mask_bits[static_cast<size_t>(f)] = 1.0;
    const auto t_d = static_cast<int64_t>(mask_ids.size());
    state.distilled = Tensor::zeros({n, t_d, d_f});
    for (int64_t p = 0; p < n; ++p)
        for (int64_t s = 0; s < t_d; ++s)
            for (int64_t k = 0; k < d_f; ++k)
                state.distilled.at(p, s, k) =
                    clip.person_features.at(p, mask_ids[static_cast<size_t>(s)], k);
    return state;
}

FdMemory FdMemory::zero(int hidden) {
    FdMemory m;
    m.h = Tensor::zeros({1, hidden});
    m.c = Tensor::zeros({1, hidden});
    return m;
}

FdAgent::FdAgent(const FdConfig& cfg, ParamStore& store, Rng* init_rng, const std::string& prefix)
    : cfg_(cfg), store_(&store) {
    g_sq_ = make_affine(store, prefix + ".squeeze_full", cfg.d_feature, cfg.c_squeeze, init_rng);
    g_conv_ =
        make_affine(store, prefix + ".temporal_full", 3 * cfg.c_squeeze, cfg.c_extract, init_rng);
    d_sq_ = make_affine(store, prefix + ".squeeze_kept", cfg.d_feature, cfg.c_squeeze, init_rng);
    d_conv_ =
        make_affine(store, prefix + ".temporal_kept", 3 * cfg.c_squeeze, cfg.c_extract, init_rng);
    m1_ = make_affine(store, prefix + ".mask1", cfg.n_frames, cfg.mask_fc, init_rng);
    m2_ = make_affine(store, prefix + ".mask2", cfg.mask_fc, cfg.mask_fc, init_rng);
    trunk_ = make_affine(store, prefix + ".trunk", 2 * cfg.c_extract + cfg.mask_fc, cfg.trunk,
                         init_rng);
    lstm_ = make_lstm(store, prefix + ".lstm", cfg.trunk, cfg.lstm_hidden, init_rng);
    actor_ = make_affine(store, prefix + ".actor", cfg.lstm_hidden + cfg.c_extract, 2, init_rng);
    critic_ = make_affine(store, prefix + ".critic", cfg.lstm_hidden, 1, init_rng);
}

FdOutput FdAgent::forward(const FdState& state, FdMemory& memory, FdForwardCache* cache) const {
    const int64_t n = state.features.dim(0);
    const int64_t t_len = cfg_.n_frames, t_d = cfg_.t_distill, d_f = cfg_.d_feature;
    const int64_t c_sq = cfg_.c_squeeze, c_ex = cfg_.c_extract;
    if (state.features.rank() != 3 || state.features.dim(1) != t_len ||
        state.features.dim(2) != d_f)
        throw std::invalid_argument("feature volume shape " + state.features.shape_str() +
                                    " does not match the configured frames/features");
    if (state.distilled.rank() != 3 || state.distilled.dim(0) != n ||
        state.distilled.dim(1) != t_d || state.distilled.dim(2) != d_f)
        throw std::invalid_argument("retained slice shape " + state.distilled.shape_str() +
                                    " does not match " + std::to_string(t_d) + " slots");
    if (static_cast<int64_t>(state.mask_bits.size()) != t_len)
        throw std::invalid_argument("mask vector has " + std::to_string(state.mask_bits.size()) +
                                    " bits, expected " + std::to_string(t_len));

    auto person_pool = [n](const Tensor& rows, int64_t t_count, int64_t c) {
        Tensor pooled = Tensor::zeros({t_count, c});
        for (int64_t p = 0; p < n; ++p)
            for (int64_t t = 0; t < t_count; ++t)
                for (int64_t k = 0; k < c; ++k) pooled.at(t, k) += rows.at(p * t_count + t, k);
        const double inv = 1.0 / static_cast<double>(n);
        for (int64_t i = 0; i < pooled.numel(); ++i) pooled[i] *= inv;
        return pooled;
    };
    auto flatten = [d_f](const Tensor& volume) {
        Tensor rows({volume.dim(0) * volume.dim(1), d_f});
        std::copy(volume.data(), volume.data() + volume.numel(), rows.data());
        return rows;
    };

    Tensor sq_full = relu_forward(
        affine_forward(g_sq_, flatten(state.features), cache ? &cache->g_sq : nullptr),
        cache ? &cache->g_sq_r : nullptr);
    Tensor per_frame = person_pool(sq_full, t_len, c_sq);
    Tensor conv_full =
        relu_forward(affine_forward(g_conv_, taps3(per_frame), cache ? &cache->g_conv : nullptr),
                     cache ? &cache->g_conv_r : nullptr);

    Tensor sq_kept = relu_forward(
        affine_forward(d_sq_, flatten(state.distilled), cache ? &cache->d_sq : nullptr),
        cache ? &cache->d_sq_r : nullptr);
    Tensor per_slot = person_pool(sq_kept, t_d, c_sq);
    Tensor conv_kept =
        relu_forward(affine_forward(d_conv_, taps3(per_slot), cache ? &cache->d_conv : nullptr),
                     cache ? &cache->d_conv_r : nullptr);

    Tensor mask_row({1, t_len});
    std::copy(state.mask_bits.begin(), state.mask_bits.end(), mask_row.data());
    Tensor m_hidden = relu_forward(affine_forward(m1_, mask_row, cache ? &cache->m1 : nullptr),
                                   cache ? &cache->m1_r : nullptr);
    Tensor m_feat = relu_forward(affine_forward(m2_, m_hidden, cache ? &cache->m2 : nullptr),
                                 cache ? &cache->m2_r : nullptr);

    Tensor cat({1, 2 * c_ex + cfg_.mask_fc});
    for (int64_t k = 0; k < c_ex; ++k) {
        double g = 0.0, d = 0.0;
        for (int64_t t = 0; t < t_len; ++t) g += conv_full.at(t, k);
        for (int64_t s = 0; s < t_d; ++s) d += conv_kept.at(s, k);
        cat.at(0, k) = g / static_cast<double>(t_len);
        cat.at(0, c_ex + k) = d / static_cast<double>(t_d);
    }
    for (int64_t k = 0; k < cfg_.mask_fc; ++k) cat.at(0, 2 * c_ex + k) = m_feat.at(0, k);

    Tensor trunk = relu_forward(affine_forward(trunk_, cat, cache ? &cache->trunk : nullptr),
                                cache ? &cache->trunk_r : nullptr);
    Tensor h_new, c_new;
    lstm_forward(lstm_, trunk, memory.h, memory.c, h_new, c_new, cache ? &cache->lstm : nullptr);
    memory.h = h_new;
    memory.c = c_new;

    FdOutput out;
    out.logits = Tensor::zeros({t_d, 2});
    if (cache) cache->actor.resize(static_cast<size_t>(t_d));
    Tensor slot_in({1, cfg_.lstm_hidden + c_ex});
    for (int64_t s = 0; s < t_d; ++s) {
        for (int64_t k = 0; k < cfg_.lstm_hidden; ++k) slot_in.at(0, k) = h_new.at(0, k);
        for (int64_t k = 0; k < c_ex; ++k) slot_in.at(0, cfg_.lstm_hidden + k) = conv_kept.at(s, k);
        Tensor z = affine_forward(actor_, slot_in,
                                  cache ? &cache->actor[static_cast<size_t>(s)] : nullptr);
        out.logits.at(s, 0) = z.at(0, 0);
        out.logits.at(s, 1) = z.at(0, 1);
    }
    Tensor v = affine_forward(critic_, h_new, cache ? &cache->critic : nullptr);
    out.value = v.at(0, 0);

    out.probs.resize(static_cast<size_t>(t_d));
    for (int64_t s = 0; s < t_d; ++s) {
        const double m = std::max(out.logits.at(s, 0), out.logits.at(s, 1));
        const double e0 = std::exp(out.logits.at(s, 0) - m);
        const double e1 = std::exp(out.logits.at(s, 1) - m);
        out.probs[static_cast<size_t>(s)] = {e0 / (e0 + e1), e1 / (e0 + e1)};
    }
    if (cache) {
        cache->n_persons = static_cast<int>(n);
        cache->t_frames = static_cast<int>(t_len);
        cache->t_distill = static_cast<int>(t_d);
    }
    return out;
}

void FdAgent::backward(const FdForwardCache& cache, const Tensor& dlogits, double dvalue,
                       Tensor& dmem_h, Tensor& dmem_c) const {
    const int64_t n = cache.n_persons, t_len = cache.t_frames, t_d = cache.t_distill;
    const int64_t c_sq = cfg_.c_squeeze, c_ex = cfg_.c_extract, hid = cfg_.lstm_hidden;
    if (dlogits.rank() != 2 || dlogits.dim(0) != t_d || dlogits.dim(1) != 2)
        throw std::invalid_argument("dlogits shape " + dlogits.shape_str() + " must be [" +
                                    std::to_string(t_d) + ", 2]");

    Tensor dh = affine_backward(critic_, cache.critic, Tensor({1, 1}, {dvalue}));
    Tensor dconv_kept = Tensor::zeros({t_d, c_ex});
    Tensor dz({1, 2});
    for (int64_t s = t_d - 1; s >= 0; --s) {
        dz.at(0, 0) = dlogits.at(s, 0);
        dz.at(0, 1) = dlogits.at(s, 1);
        Tensor dslot = affine_backward(actor_, cache.actor[static_cast<size_t>(s)], dz);
        for (int64_t k = 0; k < hid; ++k) dh.at(0, k) += dslot.at(0, k);
        for (int64_t k = 0; k < c_ex; ++k) dconv_kept.at(s, k) += dslot.at(0, hid + k);
    }
    for (int64_t k = 0; k < hid; ++k) dh.at(0, k) += dmem_h.at(0, k);

    Tensor dtrunk_x, dh_prev, dc_prev;
    lstm_backward(lstm_, cache.lstm, dh, dmem_c, dtrunk_x, dh_prev, dc_prev);
    dmem_h = dh_prev;
    dmem_c = dc_prev;

    Tensor dcat = affine_backward(trunk_, cache.trunk, relu_backward(cache.trunk_r, dtrunk_x));

    Tensor dm_feat({1, cfg_.mask_fc});
    for (int64_t k = 0; k < cfg_.mask_fc; ++k) dm_feat.at(0, k) = dcat.at(0, 2 * c_ex + k);
    Tensor dm_hidden = affine_backward(m2_, cache.m2, relu_backward(cache.m2_r, dm_feat));
    affine_backward(m1_, cache.m1, relu_backward(cache.m1_r, dm_hidden));

    auto branch_backward = [&](const AffineParams& conv, const AffineCache& conv_cache,
                               const ReluCache& conv_relu, const AffineParams& sq,
                               const AffineCache& sq_cache, const ReluCache& sq_relu,
                               const Tensor& dconv_rows, int64_t t_count) {
        Tensor dx3 = affine_backward(conv, conv_cache, relu_backward(conv_relu, dconv_rows));
        Tensor dper = Tensor::zeros({t_count, c_sq});
        taps3_backward(dx3, dper);
        Tensor dsq({n * t_count, c_sq});
        const double inv = 1.0 / static_cast<double>(n);
        for (int64_t p = 0; p < n; ++p)
            for (int64_t t = 0; t < t_count; ++t)
                for (int64_t k = 0; k < c_sq; ++k)
                    dsq.at(p * t_count + t, k) = dper.at(t, k) * inv;
        affine_backward(sq, sq_cache, relu_backward(sq_relu, dsq));
    };

    Tensor dconv_full({t_len, c_ex});
    const double inv_t = 1.0 / static_cast<double>(t_len);
    for (int64_t t = 0; t < t_len; ++t)
        for (int64_t k = 0; k < c_ex; ++k) dconv_full.at(t, k) = dcat.at(0, k) * inv_t;
    branch_backward(g_conv_, cache.g_conv, cache.g_conv_r, g_sq_, cache.g_sq, cache.g_sq_r,
                    dconv_full, t_len);

    const double inv_d = 1.0 / static_cast<double>(t_d);
    for (int64_t s = 0; s < t_d; ++s)
        for (int64_t k = 0; k < c_ex; ++k) dconv_kept.at(s, k) += dcat.at(0, c_ex + k) * inv_d;
    branch_backward(d_conv_, cache.d_conv, cache.d_conv_r, d_sq_, cache.d_sq, cache.d_sq_r,
                    dconv_kept, t_d);
}

FdActionSample sample_actions(const FdOutput& out, Rng* rng) {
    FdActionSample s;
    const int64_t t_d = out.logits.dim(0);
    s.actions.resize(static_cast<size_t>(t_d));
    s.log_probs.resize(static_cast<size_t>(t_d));
    for (int64_t k = 0; k < t_d; ++k) {
        const auto& p = out.probs[static_cast<size_t>(k)];
        int a;
        if (rng)
            a = rng->uniform() < p[0] ? 0 : 1;
        else
            a = p[1] > p[0] ? 1 : 0; // ties stay
        const double m = std::max(out.logits.at(k, 0), out.logits.at(k, 1));
        const double lse =
            m + std::log(std::exp(out.logits.at(k, 0) - m) + std::exp(out.logits.at(k, 1) - m));
        const double lp = out.logits.at(k, a) - lse;
        s.actions[static_cast<size_t>(k)] = a;
        s.log_probs[static_cast<size_t>(k)] = lp;
        s.log_prob_sum += lp;
        for (double q : p)
            if (q > 0.0) s.entropy_sum -= q * std::log(q);
    }
    return s;
}

FdApplyResult fd_apply(const std::vector<int>& mask, const std::vector<int>& queue,
                       const std::vector<int>& actions) {
    if (actions.size() != mask.size())
        throw std::invalid_argument("one action per retained slot: got " +
                                    std::to_string(actions.size()) + " for " +
                                    std::to_string(mask.size()) + " slots");
    for (size_t k = 0; k < mask.size(); ++k)
        if (k > 0 && mask[k] <= mask[k - 1])
            throw std::invalid_argument("retained frames must be strictly ascending");
    for (int a : actions)
        if (a != 0 && a != 1) throw std::invalid_argument("actions must be 0 (stay) or 1 (shift)");
    for (int q : queue)
        if (std::find(mask.begin(), mask.end(), q) != mask.end())
            throw std::invalid_argument("frame " + std::to_string(q) +
                                        " is both retained and queued");

    FdApplyResult res;
    res.mask = mask;
    res.queue = queue;
    res.applied.assign(actions.size(), 0);
    for (size_t k = 0; k < actions.size(); ++k) {
        if (actions[k] != 1 || res.queue.empty()) continue;
        const int incoming = res.queue.front();
        res.queue.erase(res.queue.begin());
        res.queue.push_back(mask[k]);
        res.mask[k] = incoming;
        res.applied[k] = 1;
    }
    std::sort(res.mask.begin(), res.mask.end());
    return res;
}

double fd_reward(double p_new, double p_old, int pred_new, int pred_old, int label, double omega) {
    if (!(omega >= 0.0)) throw std::invalid_argument("omega must be >= 0");
    if (!std::isfinite(p_new) || !std::isfinite(p_old))
        throw std::invalid_argument("non-finite reward inputs");
    double r = sgn(p_new - p_old);
    if (pred_old != label && pred_new == label)
        r += omega;
    else if (pred_old == label && pred_new != label)
        r -= omega;
    return r;
}

FdEpisodeResult fd_episode(const SceneClip& clip, const FdEvaluator& evaluate,
                           const FdAgent& agent, int n_steps, double omega, Rng* rng, int tau_max,
                           const FdWindowFn& window_fn) {
    if (n_steps < 0) throw std::invalid_argument("n_steps must be >= 0");
    if (!evaluate) throw std::invalid_argument("fd_episode needs an evaluator");
    if (window_fn && !rng)
        throw std::invalid_argument("update windows require a sampling rng (training mode)");
    if (window_fn && tau_max < 1)
        throw std::invalid_argument("tau_max must be >= 1 when updating");
    const bool train = rng != nullptr;

    auto [mask, queue] = init_selection(clip.n_frames, agent.config().t_distill);
    FdEpisodeResult res;
    SrgForward fwd = evaluate(mask);
    res.p_start = fwd.probs[static_cast<size_t>(clip.activity_label)];
    res.pred_start = fwd.predicted;

    double p_prev = res.p_start;
    int pred_prev = res.pred_start;
    FdMemory memory = FdMemory::zero(agent.config().lstm_hidden);
    std::vector<FdStep> window;
    res.steps.reserve(static_cast<size_t>(n_steps));

    for (int tau = 1; tau <= n_steps; ++tau) {
        const FdState state = build_fd_state(clip, mask);
        FdStep step;
        const FdOutput out =
            agent.forward(state, memory, train ? &step.cache : nullptr);
        step.has_cache = train;
        const FdActionSample sample = sample_actions(out, rng);
        FdApplyResult applied = fd_apply(mask, queue, sample.actions);
        mask = applied.mask;
        queue = applied.queue;

        fwd = evaluate(mask);
        const double p = fwd.probs[static_cast<size_t>(clip.activity_label)];
        step.actions = sample.actions;
        step.applied = std::move(applied.applied);
        step.mask_after = mask;
        step.probs = out.probs;
        step.log_probs = sample.log_probs;
        step.log_prob_sum = sample.log_prob_sum;
        step.entropy_sum = sample.entropy_sum;
        step.value = out.value;
        step.reward = fd_reward(p, p_prev, fwd.predicted, pred_prev, clip.activity_label, omega);
        step.p_correct = p;
        step.predicted = fwd.predicted;
        res.total_reward += step.reward;
        p_prev = p;
        pred_prev = fwd.predicted;

        window.push_back(std::move(step));
        const bool terminal = tau == n_steps;
        if (window_fn && (static_cast<int>(window.size()) == tau_max || terminal)) {
            double bootstrap = 0.0;
            if (!terminal) {
                FdMemory peek = memory;
                bootstrap = agent.forward(build_fd_state(clip, mask), peek).value;
            }
            window_fn(window, bootstrap, terminal);
            for (auto& s : window) {
                s.cache = FdForwardCache{};
                s.has_cache = false;
                res.steps.push_back(std::move(s));
            }
            window.clear();
        }
    }
    for (auto& s : window) res.steps.push_back(std::move(s));

    res.final_mask = mask;
    res.p_end = p_prev;
    res.pred_end = pred_prev;
    return res;
}

void fd_accumulate_window(const FdAgent& agent, std::vector<FdStep>& window,
                          const std::vector<double>& returns, double beta) {
    if (returns.size() != window.size())
        throw std::invalid_argument("returns/window length mismatch: " +
                                    std::to_string(returns.size()) + " vs " +
                                    std::to_string(window.size()));
    const int hidden = agent.config().lstm_hidden;
    Tensor dmem_h = Tensor::zeros({1, hidden});
    Tensor dmem_c = Tensor::zeros({1, hidden});
    for (size_t t = window.size(); t-- > 0;) {
        FdStep& step = window[t];
        if (!step.has_cache) throw std::logic_error("update window lacks training caches");
        const double advantage = returns[t] - step.value;
        const double dvalue = step.value - returns[t];
        const auto t_d = static_cast<int64_t>(step.actions.size());
        Tensor dlogits = Tensor::zeros({t_d, 2});
        for (int64_t k = 0; k < t_d; ++k) {
            const auto& p = step.probs[static_cast<size_t>(k)];
            const int a = step.actions[static_cast<size_t>(k)];
            double entropy = 0.0;
            for (double q : p)
                if (q > 0.0) entropy -= q * std::log(q);
            for (int i = 0; i < 2; ++i) {
                const double onehot = i == a ? 1.0 : 0.0;
                const double lp = std::log(std::max(p[static_cast<size_t>(i)], 1e-300));
                dlogits.at(k, i) = -advantage * (onehot - p[static_cast<size_t>(i)]) +
                                   beta * p[static_cast<size_t>(i)] * (lp + entropy);
            }
        }
        agent.backward(step.cache, dlogits, dvalue, dmem_h, dmem_c);
    }
}

} // namespace relforge

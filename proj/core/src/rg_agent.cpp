#include "relforge/rg_agent.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace relforge {

namespace {

double sgn(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

Tensor as_row(const Tensor& x) {
    Tensor r({1, x.numel()});
    std::copy(x.data(), x.data() + x.numel(), r.data());
    return r;
}

void add_into(Tensor& dst, const Tensor& src) {
    if (!dst.same_shape(src)) shape_error("add", dst, src);
    for (int64_t i = 0; i < dst.numel(); ++i) dst[i] += src[i];
}

} // namespace

double l21_norm(const Tensor& gates) {
    if (gates.rank() != 2 || gates.dim(0) != gates.dim(1))
        throw std::invalid_argument("l21_norm expects a square gate matrix, got " +
                                    gates.shape_str());
    const int n = static_cast<int>(gates.dim(0));
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
        double row = 0.0;
        for (int j = 0; j < n; ++j) {
            if (j == i) continue;
            const double g = gates.at(i, j);
            row += g * g;
        }
        total += std::sqrt(row);
    }
    return total;
}

void apply_gates(RelationGraph& g, const Tensor& gates) {
    if (gates.rank() != 2 || gates.dim(0) != g.n || gates.dim(1) != g.n)
        throw std::invalid_argument("gate matrix shape " + gates.shape_str() +
                                    " does not match graph of " + std::to_string(g.n) +
                                    " persons");
    for (int i = 0; i < g.n; ++i)
        for (int j = 0; j < g.n; ++j) {
            if (i == j) continue;
            const double v = gates.at(i, j);
            if (!(v >= 0.0 && v <= 1.0))
                throw std::invalid_argument("gate outside [0, 1]: g(" + std::to_string(i) + "," +
                                            std::to_string(j) + ") = " + std::to_string(v));
        }
    g.gates = Tensor::zeros({g.n, g.n});
    const int64_t d_e = g.h_e.dim(1);
    for (int i = 0; i < g.n; ++i)
        for (int j = 0; j < g.n; ++j) {
            if (i == j) continue;
            const double sym = 0.5 * (gates.at(i, j) + gates.at(j, i));
            g.gates.at(i, j) = sym;
            const int64_t row = pair_index(i, j, g.n);
            for (int64_t k = 0; k < d_e; ++k) g.h_e.at(row, k) *= sym;
        }
}

double rg_reward(double l21_new, double l21_old, double p_new, double p_old, int pred_new,
                 int pred_old, int label, double omega) {
    if (!(omega >= 0.0)) throw std::invalid_argument("omega must be >= 0");
    if (!std::isfinite(l21_new) || !std::isfinite(l21_old) || !std::isfinite(p_new) ||
        !std::isfinite(p_old))
        throw std::invalid_argument("non-finite reward inputs");
    double r = -sgn(l21_new - l21_old) + sgn(p_new - p_old);
    if (pred_old != label && pred_new == label)
        r += omega;
    else if (pred_old == label && pred_new != label)
        r -= omega;
    return r;
}

std::vector<std::pair<int, int>> unordered_pairs(int n) {
    if (n < 2) throw std::invalid_argument("need at least 2 persons, got " + std::to_string(n));
    std::vector<std::pair<int, int>> pairs;
    pairs.reserve(static_cast<size_t>(n) * (n - 1) / 2);
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) pairs.emplace_back(i, j);
    return pairs;
}

RgState build_rg_state(const RelationGraph& graph, int i, int j) {
    if (i == j)
        throw std::invalid_argument("relation state needs two distinct persons, got i == j == " +
                                    std::to_string(i));
    if (i < 0 || j < 0 || i >= graph.n || j >= graph.n)
        throw std::invalid_argument("person index out of range for graph of " +
                                    std::to_string(graph.n) + " persons");
    const int lo = std::min(i, j), hi = std::max(i, j);
    const int64_t d_v = graph.h_v.dim(1);
    const int64_t d_e = graph.h_e.dim(1);
    const int64_t width = 2 * d_v + d_e;
    const auto pairs = unordered_pairs(graph.n);

    RgState state;
    state.edge_i = lo;
    state.edge_j = hi;
    state.s_g = Tensor::zeros({static_cast<int64_t>(pairs.size()), width});
    for (size_t r = 0; r < pairs.size(); ++r) {
        const auto [a, b] = pairs[r];
        const int64_t e = pair_index(a, b, graph.n);
        double* row = state.s_g.data() + static_cast<int64_t>(r) * width;
        for (int64_t k = 0; k < d_v; ++k) row[k] = graph.h_v.at(a, k);
        for (int64_t k = 0; k < d_e; ++k) row[d_v + k] = graph.h_e.at(e, k);
        for (int64_t k = 0; k < d_v; ++k) row[d_v + d_e + k] = graph.h_v.at(b, k);
    }
    state.s_l = Tensor::zeros({width});
    const int64_t r_lo = pair_index(lo, hi, graph.n);
    for (int64_t k = 0; k < d_v; ++k) state.s_l[k] = graph.h_v.at(lo, k);
    for (int64_t k = 0; k < d_e; ++k) state.s_l[d_v + k] = graph.h_e.at(r_lo, k);
    for (int64_t k = 0; k < d_v; ++k) state.s_l[d_v + d_e + k] = graph.h_v.at(hi, k);
    state.s_u = graph.u;
    return state;
}

RgMemory RgMemory::zero(int hidden) {
    RgMemory m;
    m.h = Tensor::zeros({1, hidden});
    m.c = Tensor::zeros({1, hidden});
    return m;
}

RgAgent::RgAgent(const RgConfig& cfg, ParamStore& store, Rng* init_rng, const std::string& prefix)
    : cfg_(cfg), store_(&store) {
    const int64_t triplet = 2 * cfg.d_v + cfg.d_e;
    const int64_t w = cfg.width;
    fc_g1_ = make_affine(store, prefix + ".stack1", triplet, w, init_rng);
    fc_g2_ = make_affine(store, prefix + ".stack2", w, w, init_rng);
    fc_l1_ = make_affine(store, prefix + ".local1", triplet, w, init_rng);
    fc_l2_ = make_affine(store, prefix + ".local2", w, w, init_rng);
    fc_u_ = make_affine(store, prefix + ".scores", cfg.n_classes, w, init_rng);
    fc_trunk_ = make_affine(store, prefix + ".trunk", 3 * w, w, init_rng);
    lstm_ = make_lstm(store, prefix + ".lstm", w, cfg.lstm_hidden, init_rng);
    fc_actor_ = make_affine(store, prefix + ".actor", cfg.lstm_hidden, 2, init_rng);
    fc_critic_ = make_affine(store, prefix + ".critic", cfg.lstm_hidden, 1, init_rng);
}

RgOutput RgAgent::forward(const RgState& state, RgMemory& memory, RgForwardCache* cache) const {
    const int64_t triplet = 2 * cfg_.d_v + cfg_.d_e;
    if (state.s_g.rank() != 2 || state.s_g.dim(1) != triplet)
        throw std::invalid_argument("relation stack shape " + state.s_g.shape_str() +
                                    " does not match triplet width " + std::to_string(triplet));
    if (state.s_l.numel() != triplet)
        throw std::invalid_argument("local triplet has " + std::to_string(state.s_l.numel()) +
                                    " values, expected " + std::to_string(triplet));
    if (state.s_u.numel() != cfg_.n_classes)
        throw std::invalid_argument("score vector has " + std::to_string(state.s_u.numel()) +
                                    " values, expected " + std::to_string(cfg_.n_classes));

    const int64_t rows = state.s_g.dim(0);
    const int64_t w = cfg_.width;
    Tensor g1 = relu_forward(affine_forward(fc_g1_, state.s_g, cache ? &cache->ag1 : nullptr),
                             cache ? &cache->rg1 : nullptr);
    Tensor pooled({1, w});
    for (int64_t k = 0; k < w; ++k) {
        double s = 0.0;
        for (int64_t r = 0; r < rows; ++r) s += g1.at(r, k);
        pooled.at(0, k) = s / static_cast<double>(rows);
    }
    Tensor g2 = relu_forward(affine_forward(fc_g2_, pooled, cache ? &cache->ag2 : nullptr),
                             cache ? &cache->rg2 : nullptr);
    Tensor l1 = relu_forward(affine_forward(fc_l1_, as_row(state.s_l), cache ? &cache->al1 : nullptr),
                             cache ? &cache->rl1 : nullptr);
    Tensor l2 = relu_forward(affine_forward(fc_l2_, l1, cache ? &cache->al2 : nullptr),
                             cache ? &cache->rl2 : nullptr);
    Tensor uu = relu_forward(affine_forward(fc_u_, as_row(state.s_u), cache ? &cache->au : nullptr),
                             cache ? &cache->ru : nullptr);

    Tensor cat({1, 3 * w});
    for (int64_t k = 0; k < w; ++k) {
        cat.at(0, k) = g2.at(0, k);
        cat.at(0, w + k) = l2.at(0, k);
        cat.at(0, 2 * w + k) = uu.at(0, k);
    }
    Tensor trunk = relu_forward(affine_forward(fc_trunk_, cat, cache ? &cache->atrunk : nullptr),
                                cache ? &cache->rtrunk : nullptr);
    Tensor h_new, c_new;
    lstm_forward(lstm_, trunk, memory.h, memory.c, h_new, c_new, cache ? &cache->lstm : nullptr);
    memory.h = h_new;
    memory.c = c_new;

    Tensor actor = affine_forward(fc_actor_, h_new, cache ? &cache->aactor : nullptr);
    Tensor critic = affine_forward(fc_critic_, h_new, cache ? &cache->acritic : nullptr);

    RgOutput out;
    const double mu_raw = actor.at(0, 0);
    const double sigma_raw = actor.at(0, 1);
    out.mu = sigmoid(mu_raw);
    const double sp = softplus(sigma_raw) + cfg_.sigma_min;
    const bool clamped = sp > cfg_.sigma_max;
    out.sigma = clamped ? cfg_.sigma_max : sp;
    out.value = critic.at(0, 0);
    if (cache) {
        cache->stack_rows = rows;
        cache->mu = out.mu;
        cache->sigma = out.sigma;
        cache->actor_raw_mu = mu_raw;
        cache->actor_raw_sigma = sigma_raw;
        cache->sigma_clamped = clamped;
    }
    return out;
}

void RgAgent::backward(const RgForwardCache& cache, double dmu, double dsigma, double dvalue,
                       Tensor& dmem_h, Tensor& dmem_c) const {
    const int64_t w = cfg_.width;
    Tensor dactor = Tensor::zeros({1, 2});
    dactor.at(0, 0) = dmu * cache.mu * (1.0 - cache.mu);
    dactor.at(0, 1) = cache.sigma_clamped ? 0.0 : dsigma * sigmoid(cache.actor_raw_sigma);
    Tensor dcritic({1, 1}, {dvalue});

    Tensor dh = affine_backward(fc_actor_, cache.aactor, dactor);
    add_into(dh, affine_backward(fc_critic_, cache.acritic, dcritic));
    add_into(dh, dmem_h);

    Tensor dx, dh_prev, dc_prev;
    lstm_backward(lstm_, cache.lstm, dh, dmem_c, dx, dh_prev, dc_prev);
    dmem_h = dh_prev;
    dmem_c = dc_prev;

    Tensor dcat = affine_backward(fc_trunk_, cache.atrunk, relu_backward(cache.rtrunk, dx));
    Tensor dg2({1, w}), dl2({1, w}), duu({1, w});
    for (int64_t k = 0; k < w; ++k) {
        dg2.at(0, k) = dcat.at(0, k);
        dl2.at(0, k) = dcat.at(0, w + k);
        duu.at(0, k) = dcat.at(0, 2 * w + k);
    }

    Tensor dpooled = affine_backward(fc_g2_, cache.ag2, relu_backward(cache.rg2, dg2));
    Tensor dg1({cache.stack_rows, w});
    const double inv = 1.0 / static_cast<double>(cache.stack_rows);
    for (int64_t r = 0; r < cache.stack_rows; ++r)
        for (int64_t k = 0; k < w; ++k) dg1.at(r, k) = dpooled.at(0, k) * inv;
    affine_backward(fc_g1_, cache.ag1, relu_backward(cache.rg1, dg1));

    Tensor dl1 = affine_backward(fc_l2_, cache.al2, relu_backward(cache.rl2, dl2));
    affine_backward(fc_l1_, cache.al1, relu_backward(cache.rl1, dl1));
    affine_backward(fc_u_, cache.au, relu_backward(cache.ru, duu));
}

double gaussian_log_pdf(double x, double mu, double sigma) {
    static const double half_log_2pi = 0.5 * std::log(2.0 * M_PI);
    const double z = (x - mu) / sigma;
    return -half_log_2pi - std::log(sigma) - 0.5 * z * z;
}

double gaussian_entropy(double sigma) {
    // 0.5 ln(2 pi e) + ln sigma
    return 0.5 * (1.0 + std::log(2.0 * M_PI)) + std::log(sigma);
}

GateSample sample_gate(const RgOutput& out, Rng* rng) {
    GateSample s;
    double g = rng ? out.mu + out.sigma * rng->normal() : out.mu;
    s.g = std::clamp(g, 0.0, 1.0);
    s.log_prob = gaussian_log_pdf(s.g, out.mu, out.sigma);
    s.entropy = gaussian_entropy(out.sigma);
    return s;
}

namespace {

// Mean critic value of the follow-up state, advancing a scratch copy of the
// memory; used to bootstrap non-terminal update windows.
double next_state_value(const RelationGraph& summary,
                        const std::vector<std::pair<int, int>>& pairs, const RgAgent& agent,
                        RgMemory memory) {
    double v = 0.0;
    for (const auto& [i, j] : pairs) {
        const RgState state = build_rg_state(summary, i, j);
        v += agent.forward(state, memory).value;
    }
    return v / static_cast<double>(pairs.size());
}

} // namespace

RgEpisodeResult rg_episode(const SceneClip& clip, const SrgModel& srg, const RgAgent& agent,
                           const std::vector<int>& mask, int n_steps, double omega, Rng* rng,
                           int tau_max, const RgWindowFn& window_fn) {
    if (n_steps < 0) throw std::invalid_argument("n_steps must be >= 0");
    if (window_fn && !rng)
        throw std::invalid_argument("update windows require a sampling rng (training mode)");
    if (window_fn && tau_max < 1)
        throw std::invalid_argument("tau_max must be >= 1 when updating");

    const int n = clip.n_persons;
    const auto pairs = unordered_pairs(n);
    const auto n_edges = static_cast<double>(pairs.size());
    const bool train = rng != nullptr;

    RgEpisodeResult res;
    Tensor gates = ones_gates(n);
    SrgForward fwd = srg.forward_classify(clip, gates, mask);
    res.l21_start = l21_norm(gates);
    res.p_start = fwd.probs[static_cast<size_t>(clip.activity_label)];
    res.pred_start = fwd.predicted;

    double l21_prev = res.l21_start;
    double p_prev = res.p_start;
    int pred_prev = res.pred_start;
    RgMemory memory = RgMemory::zero(agent.config().lstm_hidden);
    std::vector<RgStep> window;
    res.steps.reserve(static_cast<size_t>(n_steps));

    for (int tau = 1; tau <= n_steps; ++tau) {
        RgStep step;
        step.samples.reserve(pairs.size());
        if (train) step.caches.reserve(pairs.size());
        Tensor next_gates = Tensor::zeros({n, n});
        for (const auto& [i, j] : pairs) {
            const RgState state = build_rg_state(fwd.summary, i, j);
            RgForwardCache cache;
            const RgOutput out = agent.forward(state, memory, train ? &cache : nullptr);
            const GateSample s = sample_gate(out, rng);
            next_gates.at(i, j) = s.g;
            next_gates.at(j, i) = s.g;
            step.log_prob_sum += s.log_prob;
            step.entropy_sum += s.entropy;
            step.value += out.value;
            step.samples.push_back(s);
            if (train) step.caches.push_back(std::move(cache));
        }
        step.value /= n_edges;

        gates = next_gates;
        fwd = srg.forward_classify(clip, gates, mask);
        const double p = fwd.probs[static_cast<size_t>(clip.activity_label)];
        const double l21 = l21_norm(gates);
        step.reward =
            rg_reward(l21, l21_prev, p, p_prev, fwd.predicted, pred_prev, clip.activity_label, omega);
        step.l21 = l21;
        step.p_correct = p;
        step.predicted = fwd.predicted;
        step.gates = gates;
        res.total_reward += step.reward;
        l21_prev = l21;
        p_prev = p;
        pred_prev = fwd.predicted;

        window.push_back(std::move(step));
        const bool terminal = tau == n_steps;
        if (window_fn && (static_cast<int>(window.size()) == tau_max || terminal)) {
            const double bootstrap =
                terminal ? 0.0 : next_state_value(fwd.summary, pairs, agent, memory);
            window_fn(window, bootstrap, terminal);
            for (auto& s : window) s.caches.clear();
            for (auto& s : window) res.steps.push_back(std::move(s));
            window.clear();
        }
    }
    for (auto& s : window) res.steps.push_back(std::move(s));

    res.final_gates = gates;
    res.l21_end = l21_prev;
    res.p_end = p_prev;
    res.pred_end = pred_prev;
    return res;
}

void rg_accumulate_window(const RgAgent& agent, std::vector<RgStep>& window,
                          const std::vector<double>& returns, double beta) {
    if (returns.size() != window.size())
        throw std::invalid_argument("returns/window length mismatch: " +
                                    std::to_string(returns.size()) + " vs " +
                                    std::to_string(window.size()));
    const int hidden = agent.config().lstm_hidden;
    Tensor dmem_h = Tensor::zeros({1, hidden});
    Tensor dmem_c = Tensor::zeros({1, hidden});
    for (size_t t = window.size(); t-- > 0;) {
        RgStep& step = window[t];
        if (step.caches.size() != step.samples.size())
            throw std::logic_error("update window lacks training caches");
        const auto n_edges = static_cast<double>(step.samples.size());
        const double advantage = returns[t] - step.value;
        const double dvalue = (step.value - returns[t]) / n_edges;
        for (size_t e = step.caches.size(); e-- > 0;) {
            const RgForwardCache& cache = step.caches[e];
            const double mu = cache.mu, sigma = cache.sigma;
            const double g = step.samples[e].g;
            const double dmu = -advantage * (g - mu) / (sigma * sigma);
            const double dsigma =
                -advantage * ((g - mu) * (g - mu) - sigma * sigma) / (sigma * sigma * sigma) -
                beta / sigma;
            agent.backward(cache, dmu, dsigma, dvalue, dmem_h, dmem_c);
        }
    }
}

} // namespace relforge

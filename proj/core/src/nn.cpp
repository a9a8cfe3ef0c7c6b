#include "relforge/nn.hpp"

#include <algorithm>
#include <stdexcept>

namespace relforge {

namespace {

void uniform_init(Tensor& t, Rng& rng, double scale) {
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(-scale, scale);
}

// Flattened [B, cols] view; rank-1 tensors are a single row.
std::pair<int64_t, int64_t> rows_cols(const Tensor& t) {
    if (t.rank() == 1) return {1, t.dim(0)};
    int64_t rows = 1;
    for (int i = 0; i + 1 < t.rank(); ++i) rows *= t.dim(i);
    return {rows, t.dim(static_cast<int>(t.rank()) - 1)};
}

} // namespace

AffineParams make_affine(ParamStore& store, const std::string& name, int64_t in, int64_t out,
                         Rng* rng) {
    AffineParams p;
    p.w = &store.add(name + ".w", {out, in});
    p.b = &store.add(name + ".b", {out});
    p.in = in;
    p.out = out;
    if (rng) uniform_init(*p.w, *rng, std::sqrt(1.0 / static_cast<double>(in)));
    return p;
}

Tensor affine_forward(const AffineParams& p, const Tensor& x, AffineCache* cache) {
    auto [rows, cols] = rows_cols(x);
    if (cols != p.in) shape_error("affine_forward", x, *p.w);
    Tensor y = (x.rank() == 1) ? Tensor({p.out}) : Tensor({rows, p.out});
    matmul_nt(x.data(), p.w->data(), y.data(), rows, p.in, p.out);
    double* yd = y.data();
    const double* bd = p.b->data();
    for (int64_t r = 0; r < rows; ++r)
        for (int64_t c = 0; c < p.out; ++c) yd[r * p.out + c] += bd[c];
    if (cache) cache->x = x;
    return y;
}

Tensor affine_backward(const AffineParams& p, const AffineCache& cache, const Tensor& dy) {
    auto [rows, cols] = rows_cols(dy);
    if (cols != p.out) shape_error("affine_backward", dy, *p.w);
    auto [xrows, xcols] = rows_cols(cache.x);
    if (xrows != rows || xcols != p.in) shape_error("affine_backward", cache.x, dy);
    matmul_tn_acc(dy.data(), cache.x.data(), p.w->grad(), rows, p.in, p.out);
    double* dbd = p.b->grad();
    const double* dyd = dy.data();
    for (int64_t r = 0; r < rows; ++r)
        for (int64_t c = 0; c < p.out; ++c) dbd[c] += dyd[r * p.out + c];
    Tensor dx = (cache.x.rank() == 1) ? Tensor({p.in}) : Tensor({rows, p.in});
    matmul_nn_acc(dy.data(), p.w->data(), dx.data(), rows, p.in, p.out);
    return dx;
}

LstmParams make_lstm(ParamStore& store, const std::string& name, int64_t in, int64_t hidden,
                     Rng* rng) {
    LstmParams p;
    p.wx = &store.add(name + ".wx", {4 * hidden, in});
    p.wh = &store.add(name + ".wh", {4 * hidden, hidden});
    p.b = &store.add(name + ".b", {4 * hidden});
    p.in = in;
    p.hidden = hidden;
    if (rng) {
        uniform_init(*p.wx, *rng, std::sqrt(1.0 / static_cast<double>(in)));
        uniform_init(*p.wh, *rng, std::sqrt(1.0 / static_cast<double>(hidden)));
        // forget gate bias at 1 so early cell state survives
        for (int64_t i = hidden; i < 2 * hidden; ++i) (*p.b)[i] = 1.0;
    }
    return p;
}

void lstm_forward(const LstmParams& p, const Tensor& x, const Tensor& h_prev,
                  const Tensor& c_prev, Tensor& h_out, Tensor& c_out, LstmCache* cache) {
    auto [rows, cols] = rows_cols(x);
    if (cols != p.in) shape_error("lstm_forward", x, *p.wx);
    auto [hrows, hcols] = rows_cols(h_prev);
    if (hrows != rows || hcols != p.hidden) shape_error("lstm_forward", h_prev, x);
    if (!c_prev.same_shape(h_prev)) shape_error("lstm_forward", c_prev, h_prev);

    const int64_t H = p.hidden;
    Tensor z({rows, 4 * H});
    matmul_nt(x.data(), p.wx->data(), z.data(), rows, p.in, 4 * H);
    {
        Tensor zh({rows, 4 * H});
        matmul_nt(h_prev.data(), p.wh->data(), zh.data(), rows, H, 4 * H);
        for (int64_t i = 0; i < z.numel(); ++i) z[i] += zh[i];
    }
    const double* bd = p.b->data();
    for (int64_t r = 0; r < rows; ++r)
        for (int64_t c = 0; c < 4 * H; ++c) z[r * 4 * H + c] += bd[c];

    Tensor gi({rows, H}), gf({rows, H}), gc({rows, H}), go({rows, H});
    Tensor c_new({rows, H}), tanhc({rows, H}), h_new({rows, H});
    for (int64_t r = 0; r < rows; ++r) {
        const double* zr = z.data() + r * 4 * H;
        for (int64_t k = 0; k < H; ++k) {
            const double i_g = sigmoid(zr[k]);
            const double f_g = sigmoid(zr[H + k]);
            const double c_g = std::tanh(zr[2 * H + k]);
            const double o_g = sigmoid(zr[3 * H + k]);
            const double c_v = f_g * c_prev[r * H + k] + i_g * c_g;
            const double t_v = std::tanh(c_v);
            gi[r * H + k] = i_g;
            gf[r * H + k] = f_g;
            gc[r * H + k] = c_g;
            go[r * H + k] = o_g;
            c_new[r * H + k] = c_v;
            tanhc[r * H + k] = t_v;
            h_new[r * H + k] = o_g * t_v; // h_t = o_t * tanh(c_t)
        }
    }
    if (cache) {
        cache->x = x;
        cache->h_prev = h_prev;
        cache->c_prev = c_prev;
        cache->gi = gi;
        cache->gf = gf;
        cache->gc = gc;
        cache->go = go;
        cache->c = c_new;
        cache->tanhc = tanhc;
    }
    h_out = std::move(h_new);
    c_out = std::move(c_new);
}

void lstm_backward(const LstmParams& p, const LstmCache& cache, const Tensor& dh,
                   const Tensor& dc, Tensor& dx, Tensor& dh_prev, Tensor& dc_prev) {
    const int64_t H = p.hidden;
    auto [rows, cols] = rows_cols(dh);
    if (cols != H) shape_error("lstm_backward", dh, *p.wh);

    Tensor dz({rows, 4 * H});
    dc_prev = Tensor({rows, H});
    for (int64_t r = 0; r < rows; ++r) {
        for (int64_t k = 0; k < H; ++k) {
            const int64_t idx = r * H + k;
            const double i_g = cache.gi[idx], f_g = cache.gf[idx];
            const double c_g = cache.gc[idx], o_g = cache.go[idx];
            const double t_v = cache.tanhc[idx];
            // dc_total picks up the tanh branch of h = o * tanh(c)
            const double dct = dc[idx] + dh[idx] * o_g * (1.0 - t_v * t_v);
            const double dzo = dh[idx] * t_v * o_g * (1.0 - o_g);
            const double dzf = dct * cache.c_prev[idx] * f_g * (1.0 - f_g);
            const double dzi = dct * c_g * i_g * (1.0 - i_g);
            const double dzg = dct * i_g * (1.0 - c_g * c_g);
            dz[r * 4 * H + k] = dzi;
            dz[r * 4 * H + H + k] = dzf;
            dz[r * 4 * H + 2 * H + k] = dzg;
            dz[r * 4 * H + 3 * H + k] = dzo;
            dc_prev[idx] = dct * f_g;
        }
    }

    matmul_tn_acc(dz.data(), cache.x.data(), p.wx->grad(), rows, p.in, 4 * H);
    matmul_tn_acc(dz.data(), cache.h_prev.data(), p.wh->grad(), rows, H, 4 * H);
    double* dbd = p.b->grad();
    for (int64_t r = 0; r < rows; ++r)
        for (int64_t c = 0; c < 4 * H; ++c) dbd[c] += dz[r * 4 * H + c];

    dx = Tensor({rows, p.in});
    matmul_nn_acc(dz.data(), p.wx->data(), dx.data(), rows, p.in, 4 * H);
    dh_prev = Tensor({rows, H});
    matmul_nn_acc(dz.data(), p.wh->data(), dh_prev.data(), rows, H, 4 * H);
}

SoftmaxXent softmax_xent(const std::vector<double>& logits, int label) {
    if (logits.empty()) throw std::invalid_argument("softmax_xent: empty logits");
    if (label < 0 || label >= static_cast<int>(logits.size()))
        throw std::invalid_argument("softmax_xent: label " + std::to_string(label) +
                                    " out of range for " + std::to_string(logits.size()) +
                                    " classes");
    const double mx = *std::max_element(logits.begin(), logits.end());
    double denom = 0.0;
    SoftmaxXent out;
    out.probs.resize(logits.size());
    for (size_t k = 0; k < logits.size(); ++k) {
        out.probs[k] = std::exp(logits[k] - mx);
        denom += out.probs[k];
    }
    for (double& v : out.probs) v /= denom;
    out.loss = std::log(denom) - (logits[static_cast<size_t>(label)] - mx);
    return out;
}

std::vector<double> softmax_xent_grad(const SoftmaxXent& out, int label, double scale) {
    std::vector<double> d(out.probs);
    d[static_cast<size_t>(label)] -= 1.0;
    for (double& v : d) v *= scale;
    return d;
}

Tensor relu_forward(const Tensor& x, ReluCache* cache) {
    Tensor y = x;
    if (cache) cache->active.assign(static_cast<size_t>(x.numel()), false);
    for (int64_t i = 0; i < y.numel(); ++i) {
        if (y[i] > 0.0) {
            if (cache) cache->active[static_cast<size_t>(i)] = true;
        } else {
            y[i] = 0.0;
        }
    }
    return y;
}

Tensor relu_backward(const ReluCache& cache, const Tensor& dy) {
    Tensor dx = dy;
    for (int64_t i = 0; i < dx.numel(); ++i)
        if (!cache.active[static_cast<size_t>(i)]) dx[i] = 0.0;
    return dx;
}

} // namespace relforge

#pragma once

#include "relforge/param_store.hpp"
#include "relforge/rng.hpp"
#include "relforge/tensor.hpp"

#include <cmath>
#include <vector>

namespace relforge {

inline double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

inline double softplus(double x) {
    // log(1 + e^x), stable both directions
    return std::log1p(std::exp(-std::fabs(x))) + std::max(x, 0.0);
}

// w: [out, in], b: [out]; registered in the store under <name>.w / <name>.b.
struct AffineParams {
    Tensor* w = nullptr;
    Tensor* b = nullptr;
    int64_t in = 0, out = 0;
};

AffineParams make_affine(ParamStore& store, const std::string& name, int64_t in, int64_t out,
                         Rng* rng = nullptr);

struct AffineCache {
    Tensor x;
};

// x: [B, in] (rank 1 treated as B=1), y: [B, out].
Tensor affine_forward(const AffineParams& p, const Tensor& x, AffineCache* cache = nullptr);
// Accumulates dw/db into the param grads, returns dx.
Tensor affine_backward(const AffineParams& p, const AffineCache& cache, const Tensor& dy);

// Single-layer LSTM cell; weights stacked [i; f; g; o].
// wx: [4H, in], wh: [4H, H], b: [4H].
struct LstmParams {
    Tensor* wx = nullptr;
    Tensor* wh = nullptr;
    Tensor* b = nullptr;
    int64_t in = 0, hidden = 0;
};

LstmParams make_lstm(ParamStore& store, const std::string& name, int64_t in, int64_t hidden,
                     Rng* rng = nullptr);

struct LstmCache {
    Tensor x, h_prev, c_prev;
    Tensor gi, gf, gc, go; // post-activation gates, [B, H]
    Tensor c, tanhc;
};

// x: [B, in], h_prev/c_prev: [B, H] -> h/c: [B, H].
void lstm_forward(const LstmParams& p, const Tensor& x, const Tensor& h_prev,
                  const Tensor& c_prev, Tensor& h_out, Tensor& c_out,
                  LstmCache* cache = nullptr);
// Accumulates param grads; dx/dh_prev/dc_prev are overwritten.
void lstm_backward(const LstmParams& p, const LstmCache& cache, const Tensor& dh,
                   const Tensor& dc, Tensor& dx, Tensor& dh_prev, Tensor& dc_prev);

struct SoftmaxXent {
    double loss = 0.0;
    std::vector<double> probs;
};

// Numerically stable cross-entropy on raw logits.
SoftmaxXent softmax_xent(const std::vector<double>& logits, int label);
// dloss/dlogits = scale * (probs - onehot(label)).
std::vector<double> softmax_xent_grad(const SoftmaxXent& out, int label, double scale = 1.0);

struct ReluCache {
    std::vector<bool> active;
};

Tensor relu_forward(const Tensor& x, ReluCache* cache = nullptr);
Tensor relu_backward(const ReluCache& cache, const Tensor& dy);

} // namespace relforge

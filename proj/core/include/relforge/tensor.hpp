#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace relforge {

// Dense row-major tensor of doubles. Shapes are fixed at construction;
// the grad buffer is allocated lazily on first accumulation.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<int64_t> shape);
    Tensor(std::vector<int64_t> shape, std::vector<double> values);

    static Tensor zeros(std::vector<int64_t> shape) { return Tensor(std::move(shape)); }
    static Tensor full(std::vector<int64_t> shape, double value);

    const std::vector<int64_t>& shape() const { return shape_; }
    int64_t rank() const { return static_cast<int64_t>(shape_.size()); }
    int64_t numel() const { return numel_; }
    int64_t dim(int i) const;

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& values() { return data_; }
    const std::vector<double>& values() const { return data_; }

    bool has_grad() const { return !grad_.empty(); }
    double* grad();                   // allocates zeroed storage on first use
    const std::vector<double>& grad_values() const { return grad_; }
    void zero_grad();
    void ensure_grad() { (void)grad(); }

    double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
    double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }
    double& at(int64_t i, int64_t j);
    double at(int64_t i, int64_t j) const;
    double& at(int64_t i, int64_t j, int64_t k);
    double at(int64_t i, int64_t j, int64_t k) const;

    void fill(double value);
    bool all_finite() const;
    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
    std::string shape_str() const;

private:
    std::vector<int64_t> shape_;
    std::vector<double> data_;
    std::vector<double> grad_;
    int64_t numel_ = 0;
};

// y = x * W^T + b_broadcast, x: [B, in], w: [out, in], y: [B, out].
void matmul_nt(const double* x, const double* w, double* y,
               int64_t rows, int64_t in, int64_t out);
// dW += dy^T * x, dy: [B, out], x: [B, in], dw: [out, in].
void matmul_tn_acc(const double* dy, const double* x, double* dw,
                   int64_t rows, int64_t in, int64_t out);
// dx += dy * W, dy: [B, out], w: [out, in], dx: [B, in].
void matmul_nn_acc(const double* dy, const double* w, double* dx,
                   int64_t rows, int64_t in, int64_t out);

[[noreturn]] void shape_error(const std::string& op, const Tensor& a, const Tensor& b);

} // namespace relforge

#include "relforge/tensor.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace relforge {

namespace {

int64_t checked_numel(const std::vector<int64_t>& shape) {
    int64_t n = 1;
    for (int64_t d : shape) {
        if (d <= 0) throw std::invalid_argument("Tensor: dimensions must be positive");
        n *= d;
    }
    return n;
}

using MatMap = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using ConstMatMap = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

} // namespace

Tensor::Tensor(std::vector<int64_t> shape)
    : shape_(std::move(shape)), numel_(checked_numel(shape_)) {
    data_.assign(static_cast<size_t>(numel_), 0.0);
}

Tensor::Tensor(std::vector<int64_t> shape, std::vector<double> values)
    : shape_(std::move(shape)), data_(std::move(values)), numel_(checked_numel(shape_)) {
    if (static_cast<int64_t>(data_.size()) != numel_)
        throw std::invalid_argument("Tensor: value count does not match shape " + shape_str());
}

Tensor Tensor::full(std::vector<int64_t> shape, double value) {
    Tensor t(std::move(shape));
    t.fill(value);
    return t;
}

int64_t Tensor::dim(int i) const {
    if (i < 0 || i >= static_cast<int>(shape_.size()))
        throw std::out_of_range("Tensor::dim: axis " + std::to_string(i) + " for " + shape_str());
    return shape_[static_cast<size_t>(i)];
}

double* Tensor::grad() {
    if (grad_.empty()) grad_.assign(static_cast<size_t>(numel_), 0.0);
    return grad_.data();
}

void Tensor::zero_grad() {
    if (!grad_.empty()) std::fill(grad_.begin(), grad_.end(), 0.0);
}

double& Tensor::at(int64_t i, int64_t j) {
    return data_[static_cast<size_t>(i * shape_[1] + j)];
}
double Tensor::at(int64_t i, int64_t j) const {
    return data_[static_cast<size_t>(i * shape_[1] + j)];
}
double& Tensor::at(int64_t i, int64_t j, int64_t k) {
    return data_[static_cast<size_t>((i * shape_[1] + j) * shape_[2] + k)];
}
double Tensor::at(int64_t i, int64_t j, int64_t k) const {
    return data_[static_cast<size_t>((i * shape_[1] + j) * shape_[2] + k)];
}

void Tensor::fill(double value) {
    std::fill(data_.begin(), data_.end(), value);
}

bool Tensor::all_finite() const {
    for (double v : data_)
        if (!std::isfinite(v)) return false;
    return true;
}

std::string Tensor::shape_str() const {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape_.size(); ++i)
        os << (i ? "," : "") << shape_[i];
    os << "]";
    return os.str();
}

void matmul_nt(const double* x, const double* w, double* y,
               int64_t rows, int64_t in, int64_t out) {
    ConstMatMap xm(x, rows, in), wm(w, out, in);
    MatMap ym(y, rows, out);
    ym.noalias() = xm * wm.transpose();
}

void matmul_tn_acc(const double* dy, const double* x, double* dw,
                   int64_t rows, int64_t in, int64_t out) {
    ConstMatMap dym(dy, rows, out), xm(x, rows, in);
    MatMap dwm(dw, out, in);
    dwm.noalias() += dym.transpose() * xm;
}

void matmul_nn_acc(const double* dy, const double* w, double* dx,
                   int64_t rows, int64_t in, int64_t out) {
    ConstMatMap dym(dy, rows, out), wm(w, out, in);
    MatMap dxm(dx, rows, in);
    dxm.noalias() += dym * wm;
}

void shape_error(const std::string& op, const Tensor& a, const Tensor& b) {
    throw std::invalid_argument(op + ": incompatible shapes " + a.shape_str() + " and " + b.shape_str());
}

} // namespace relforge

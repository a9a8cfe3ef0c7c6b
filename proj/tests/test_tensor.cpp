#include "relforge/tensor.hpp"

#include <doctest.h>

#include <limits>
#include <stdexcept>

using namespace relforge;

TEST_CASE("tensor shape and element access") {
    Tensor t({2, 3});
    CHECK(t.rank() == 2);
    CHECK(t.numel() == 6);
    CHECK(t.dim(0) == 2);
    CHECK(t.dim(1) == 3);
    for (int64_t i = 0; i < t.numel(); ++i) CHECK(t[i] == 0.0);

    t.at(1, 2) = 7.0;
    CHECK(t[5] == 7.0); // row-major
    t.at(0, 1) = -2.5;
    CHECK(t[1] == -2.5);

    Tensor r3({2, 2, 2});
    r3.at(1, 0, 1) = 4.0;
    CHECK(r3[5] == 4.0);
}

TEST_CASE("tensor construction from values and full") {
    Tensor t({2, 2}, {1.0, 2.0, 3.0, 4.0});
    CHECK(t.at(0, 0) == 1.0);
    CHECK(t.at(1, 1) == 4.0);

    Tensor f = Tensor::full({3}, 0.5);
    CHECK(f.numel() == 3);
    for (int64_t i = 0; i < 3; ++i) CHECK(f[i] == 0.5);

    CHECK_THROWS_AS(Tensor({2, 2}, {1.0}), std::invalid_argument);
}

TEST_CASE("grad storage is lazy and zeroable") {
    Tensor t({2});
    CHECK_FALSE(t.has_grad());
    t.grad()[0] = 3.0;
    CHECK(t.has_grad());
    CHECK(t.grad_values()[0] == 3.0);
    CHECK(t.grad_values()[1] == 0.0);
    t.zero_grad();
    CHECK(t.has_grad());
    CHECK(t.grad_values()[0] == 0.0);
}

TEST_CASE("all_finite flags nan and inf") {
    Tensor t({2}, {1.0, 2.0});
    CHECK(t.all_finite());
    t[1] = std::numeric_limits<double>::quiet_NaN();
    CHECK_FALSE(t.all_finite());
    t[1] = std::numeric_limits<double>::infinity();
    CHECK_FALSE(t.all_finite());
}

TEST_CASE("matmul_nt matches hand arithmetic") {
    // x: [2,3], w: [2,3], y = x w^T: [2,2]
    const double x[] = {1, 2, 3, 4, 5, 6};
    const double w[] = {1, 0, -1, 2, 1, 0};
    double y[4] = {};
    matmul_nt(x, w, y, 2, 3, 2);
    CHECK(y[0] == doctest::Approx(1 - 3));
    CHECK(y[1] == doctest::Approx(2 + 2));
    CHECK(y[2] == doctest::Approx(4 - 6));
    CHECK(y[3] == doctest::Approx(8 + 5));
}

TEST_CASE("matmul backward helpers accumulate transposed products") {
    // dW += dy^T x with dy: [1,2], x: [1,3]
    const double dy[] = {2, -1};
    const double x[] = {1, 2, 3};
    double dw[6] = {1, 1, 1, 1, 1, 1};
    matmul_tn_acc(dy, x, dw, 1, 3, 2);
    CHECK(dw[0] == doctest::Approx(1 + 2 * 1));
    CHECK(dw[2] == doctest::Approx(1 + 2 * 3));
    CHECK(dw[3] == doctest::Approx(1 - 1));
    CHECK(dw[5] == doctest::Approx(1 - 3));

    // dx += dy W with w: [2,3]
    const double w[] = {1, 0, -1, 2, 1, 0};
    double dx[3] = {};
    matmul_nn_acc(dy, w, dx, 1, 3, 2);
    CHECK(dx[0] == doctest::Approx(2 * 1 - 1 * 2));
    CHECK(dx[1] == doctest::Approx(2 * 0 - 1 * 1));
    CHECK(dx[2] == doctest::Approx(2 * -1 - 1 * 0));
}

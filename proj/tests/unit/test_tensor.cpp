#include <gtest/gtest.h>

#include <cmath>

#include "kernelayers/error.hpp"
#include "kernelayers/tensor.hpp"

using namespace kl;

namespace {

Tensor naive_matmul(const Tensor& a, const Tensor& b) {
    Tensor out({a.dim(0), b.dim(1)});
    for (std::size_t i = 0; i < a.dim(0); ++i)
        for (std::size_t j = 0; j < b.dim(1); ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < a.dim(1); ++k) s += a.at(i, k) * b.at(k, j);
            out.at(i, j) = s;
        }
    return out;
}

double rel_diff(const Tensor& a, const Tensor& b) {
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        num = std::max(num, std::abs(a[i] - b[i]));
        den = std::max(den, std::abs(b[i]));
    }
    return num / std::max(den, 1e-300);
}

} // namespace

TEST(Tensor, ZerosAndOnes) {
    const Tensor z = Tensor::zeros({2, 2});
    EXPECT_EQ(z.shape(), (Shape{2, 2}));
    for (double v : z.data()) EXPECT_EQ(v, 0.0);
    const Tensor o = Tensor::ones({3});
    EXPECT_EQ(o.size(), 3u);
    for (double v : o.data()) EXPECT_EQ(v, 1.0);
}

TEST(Tensor, RejectsDegenerateShapes) {
    EXPECT_THROW(Tensor::zeros({2, 0}), ShapeError);
    EXPECT_THROW(Tensor::zeros({}), ShapeError);
    EXPECT_THROW(Tensor({2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
}

TEST(Tensor, MatmulExamples) {
    const Tensor eye({2, 2}, {1, 0, 0, 1});
    const Tensor b({2, 2}, {5, 6, 7, 8});
    const Tensor p = matmul(eye, b);
    for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(p[i], b[i]);

    const Tensor row({1, 2}, {1, 2});
    const Tensor col({2, 1}, {3, 4});
    const Tensor s = matmul(row, col);
    EXPECT_EQ(s.shape(), (Shape{1, 1}));
    EXPECT_EQ(s[0], 11.0);

    EXPECT_THROW(matmul(Tensor::zeros({2, 3}), Tensor::zeros({4, 5})), ShapeError);
}

TEST(Tensor, MatmulAgreesWithTripleLoop) {
    Rng rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        const Tensor a = random_normal(rng, {8, 8});
        const Tensor b = random_normal(rng, {8, 8});
        EXPECT_LT(rel_diff(matmul(a, b), naive_matmul(a, b)), 1e-12);
    }
}

TEST(Tensor, GemmTransposeFlags) {
    Rng rng(6);
    const Tensor a = random_normal(rng, {4, 3});
    const Tensor b = random_normal(rng, {5, 3});
    EXPECT_LT(rel_diff(gemm(a, false, b, true), naive_matmul(a, transpose(b))), 1e-12);
    EXPECT_LT(rel_diff(gemm(b, false, a, true), naive_matmul(b, transpose(a))), 1e-12);
    const Tensor c = random_normal(rng, {4, 5});
    EXPECT_LT(rel_diff(gemm(a, true, c, false), naive_matmul(transpose(a), c)), 1e-12);

    Tensor out = Tensor::ones({4, 5});
    gemm_into(out, 2.0, a, false, b, true, 1.0);
    Tensor expect = naive_matmul(a, transpose(b));
    expect *= 2.0;
    expect = add_scalar(expect, 1.0);
    EXPECT_LT(rel_diff(out, expect), 1e-12);
}

TEST(Tensor, ReshapeAndTranspose) {
    Rng rng(7);
    const Tensor a = random_normal(rng, {3, 4});
    const Tensor r = a.reshape({2, 6});
    EXPECT_EQ(r.shape(), (Shape{2, 6}));
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(r[i], a[i]);
    EXPECT_THROW(a.reshape({5, 2}), ShapeError);

    const Tensor tt = transpose(transpose(a));
    EXPECT_EQ(tt.shape(), a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(tt[i], a[i]);
}

TEST(Tensor, ElementwiseOps) {
    const Tensor a({2, 2}, {1, 2, 3, 4});
    const Tensor b({2, 2}, {4, 3, 2, 1});
    EXPECT_EQ(sum(a + b), 20.0);
    EXPECT_EQ(sum(mul(a, b)), 4 + 6 + 6 + 4);
    EXPECT_EQ(sum(a - b), 0.0);
    EXPECT_EQ(pow(a, 3)[3], 64.0);
    EXPECT_DOUBLE_EQ(exp(a)[0], std::exp(1.0));
    EXPECT_EQ(dot(a, b), 20.0);
    EXPECT_EQ(max_abs(scale(a, -2.0)), 8.0);
    EXPECT_THROW(add(a, Tensor::zeros({4})), ShapeError);

    const Tensor rows = add_rowwise(a, Tensor::from({10, 20}));
    EXPECT_EQ(rows.at(1, 1), 24.0);
}

TEST(Tensor, AxisReductions) {
    const Tensor a({2, 3}, {1, 2, 3, 4, 5, 6});
    const Tensor s0 = sum(a, 0);
    EXPECT_EQ(s0.shape(), (Shape{3}));
    EXPECT_EQ(s0[2], 9.0);
    const Tensor m1 = mean(a, 1);
    EXPECT_EQ(m1.shape(), (Shape{2}));
    EXPECT_DOUBLE_EQ(m1[1], 5.0);
}

TEST(Tensor, ArgmaxFirstIndexWinsTies) {
    const Tensor a({2, 3}, {1, 5, 5, 7, 2, 7});
    const auto idx = argmax_last(a);
    EXPECT_EQ(idx[0], 1u);
    EXPECT_EQ(idx[1], 0u);
}

TEST(Tensor, AllFinite) {
    Tensor a = Tensor::ones({3});
    EXPECT_TRUE(all_finite(a));
    a[1] = std::nan("");
    EXPECT_FALSE(all_finite(a));
}

TEST(Im2col, HandExample) {
    const Tensor x({1, 1, 2, 2}, {1, 2, 3, 4});
    const Tensor cols = im2col(x, 2, 2, 1, 0);
    EXPECT_EQ(cols.shape(), (Shape{1, 1, 4}));
    for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(cols[i], x[i]);
}

TEST(Im2col, UnitKernelIsScanOrder) {
    Rng rng(8);
    const Tensor x = random_normal(rng, {2, 1, 3, 4});
    const Tensor cols = im2col(x, 1, 1, 1, 0);
    EXPECT_EQ(cols.shape(), (Shape{2, 12, 1}));
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(cols[i], x[i]);
}

TEST(Im2col, PaddingReadsZero) {
    const Tensor x({1, 1, 2, 2}, {1, 2, 3, 4});
    const Tensor cols = im2col(x, 3, 3, 1, 1);
    EXPECT_EQ(cols.shape(), (Shape{1, 4, 9}));
    // First patch is centred on (0,0): top row and left column are padding.
    const double expect[9] = {0, 0, 0, 0, 1, 2, 0, 3, 4};
    for (std::size_t i = 0; i < 9; ++i) EXPECT_EQ(cols[i], expect[i]);
}

TEST(Im2col, KernelLargerThanInput) {
    EXPECT_THROW(im2col(Tensor::zeros({1, 1, 2, 2}), 3, 3, 1, 0), ShapeError);
}

TEST(Im2col, Col2imIsAdjoint) {
    Rng rng(9);
    struct Case {
        Shape shape;
        std::size_t k, stride, pad;
    };
    for (const Case& c : {Case{{2, 3, 7, 6}, 3, 1, 1}, Case{{1, 2, 8, 8}, 3, 2, 0}, Case{{3, 1, 5, 5}, 2, 2, 1}}) {
        const Tensor x = random_normal(rng, c.shape);
        const Tensor cols = im2col(x, c.k, c.k, c.stride, c.pad);
        const Tensor y = random_normal(rng, cols.shape());
        const double lhs = dot(cols, y);
        const double rhs = dot(x, col2im(y, c.shape, c.k, c.k, c.stride, c.pad));
        EXPECT_LT(std::abs(lhs - rhs), 1e-12 * std::max(1.0, std::abs(lhs)));
    }
}

TEST(Init, HeStatistics) {
    Rng rng(10);
    const Tensor w = init_he(rng, {100000}, 2);
    const double m = sum(w) / 1e5;
    double var = 0.0;
    for (double v : w.data()) var += (v - m) * (v - m);
    EXPECT_NEAR(m, 0.0, 0.01);
    EXPECT_NEAR(std::sqrt(var / 1e5), 1.0, 0.02);
}

TEST(Init, SameSeedSameTensor) {
    Rng a(42), b(42);
    const Tensor x = init_he(a, {4, 5}, 3);
    const Tensor y = init_he(b, {4, 5}, 3);
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(x[i], y[i]);
}

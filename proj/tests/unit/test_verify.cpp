#include <gtest/gtest.h>

#include <cmath>
#include <algorithm>
#include <limits>

#include "equivalence.hpp"
#include "kernelayers/error.hpp"
#include "kernelayers/verify.hpp"

using namespace kl;

TEST(FiniteDifference, SumOfSquares) {
    const Tensor x = Tensor::from({1.0, 2.0});
    const Tensor g = fd_gradient([](const Tensor& t) { return dot(t, t); }, x);
    EXPECT_NEAR(g[0], 2.0, 1e-8);
    EXPECT_NEAR(g[1], 4.0, 1e-8);
}

TEST(FiniteDifference, ConstantFunction) {
    const Tensor g = fd_gradient([](const Tensor&) { return 3.5; }, Tensor::ones({2, 3}));
    for (double v : g.data()) EXPECT_EQ(v, 0.0);
}

TEST(FiniteDifference, Errors) {
    const Tensor x = Tensor::from({1.0});
    EXPECT_THROW(fd_gradient([](const Tensor& t) { return t[0]; }, x, 0.0), OracleError);
    EXPECT_THROW(fd_gradient([](const Tensor& t) { return t[0]; }, x, -1e-4), OracleError);
    EXPECT_THROW(fd_gradient([](const Tensor& t) { return std::log(t[0] - 1.0); }, x), OracleError);
}

TEST(FiniteDifference, SelectedCoordinates) {
    const Tensor x = Tensor::from({1.0, -2.0, 3.0});
    const auto g = fd_gradient_at([](const Tensor& t) { return t[0] * t[2]; }, x, {2, 1});
    ASSERT_EQ(g.size(), 2u);
    EXPECT_NEAR(g[0], 1.0, 1e-9);
    EXPECT_NEAR(g[1], 0.0, 1e-12);
}

TEST(RelativeError, Definition) {
    EXPECT_DOUBLE_EQ(relative_error(1.0, 1.1), (1.1 - 1.0) / 1.1);
    EXPECT_DOUBLE_EQ(relative_error(0.0, 0.0), 0.0);
    EXPECT_DOUBLE_EQ(relative_error(1e-10, 0.0), 1e-10 / 1e-8);
}

TEST(NaiveConv, IdentityKernel) {
    Rng rng(1);
    const Tensor x = random_normal(rng, {2, 1, 4, 5});
    const Tensor y = naive_conv2d(x, Tensor::ones({1, 1, 1, 1}), Tensor::zeros({1}), 1, 0);
    ASSERT_EQ(y.shape(), x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(y[i], x[i]);
}

TEST(NaiveConv, ZeroInputGivesBias) {
    Rng rng(2);
    const Tensor w = random_normal(rng, {3, 2, 3, 3});
    const Tensor y = naive_conv2d(Tensor::zeros({1, 2, 5, 5}), w, Tensor::from({0.5, -1.0, 2.0}), 1, 1);
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < 5; ++i)
            for (std::size_t j = 0; j < 5; ++j) EXPECT_EQ(y.at(0, c, i, j), (c == 0 ? 0.5 : c == 1 ? -1.0 : 2.0));
}

TEST(NaiveConv, AgreesWithLayerOnRandomCases) {
    const auto gap = testutil::kervolution_reduction_gap(100, 21);
    EXPECT_LT(gap.max_abs, 1e-12) << gap.worst;
}

TEST(NaiveKervolution, AgreesWithLayerOnRandomCases) {
    const auto gap = testutil::kervolution_oracle_gap(100, 22);
    EXPECT_LT(gap.max_abs, 1e-12) << gap.worst;
}

TEST(NaivePool, AgreesWithLayerOnRandomCases) {
    const auto gap = testutil::pool_oracle_gap(100, 23);
    EXPECT_LT(gap.max_abs, 1e-12) << gap.worst;
}

TEST(NaivePool, UniformWeightsAverage) {
    Rng rng(3);
    const Tensor x = random_uniform(rng, {1, 2, 4, 4}, 0, 1);
    const PoolOptions opts{2, 2, 2};
    const Tensor w = Tensor::full({2, 2, 2, 2}, 0.25);
    const Tensor y = naive_learnable_pool(x, w, 0.0, LinearKernel{}, PoolSharing::per_location, opts);
    AvgPool2D ap(opts);
    const Tensor a = ap.forward(x, Mode::eval);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(y[i], a[i], 1e-15);
}

TEST(NaivePool, SharingDegeneracy) {
    Rng rng(4);
    const Tensor x = random_uniform(rng, {2, 3, 6, 6}, 0, 1);
    const PoolOptions opts{3, 3, 3};
    const Tensor slice = random_uniform(rng, {1, 1, 3, 3}, -1, 1);
    Tensor per({2, 2, 3, 3});
    for (std::size_t i = 0; i < per.size(); ++i) per[i] = slice[i % 9];
    for (const KernelKind& k : {KernelKind{LinearKernel{}}, KernelKind{PolynomialKernel{3}}, KernelKind{RbfKernel{}}}) {
        const Tensor a = naive_learnable_pool(x, per, 0.3, k, PoolSharing::per_location, opts);
        const Tensor b = naive_learnable_pool(x, slice, 0.3, k, PoolSharing::global, opts);
        for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i], b[i]) << kernel_name(k);
    }
}

TEST(Reductions, PoolAndDense) {
    const auto pool = testutil::pool_reduction_gap(100, 24);
    EXPECT_LT(pool.max_abs, 1e-12) << pool.worst;
    const auto dense = testutil::dense_reduction_gap(100, 25);
    EXPECT_LT(dense.max_abs, 1e-12) << dense.worst;
}

TEST(GradCheck, KdlPoly3Scope) {
    const auto reports = run_gradcheck("kdl-poly-3");
    ASSERT_EQ(reports.size(), 3u);
    for (const auto& r : reports) {
        EXPECT_TRUE(r.passed()) << r.shape << " " << r.max_rel_error();
        EXPECT_LT(r.max_rel_error(), 1e-5);
        for (const auto& t : r.tensors) EXPECT_GT(t.checked, 0u);
    }
}

TEST(GradCheck, UnknownScope) { EXPECT_THROW(run_gradcheck("bogus-layer"), std::invalid_argument); }

TEST(GradCheck, DetectsWrongGradient) {
    // A layer whose backward is off by a factor must fail the check.
    class Scaled : public ReLU {
    public:
        Tensor backward(const Tensor& g) override { return scale(ReLU::backward(g), 1.01); }
    };
    Scaled layer;
    Rng rng(5);
    const auto report = gradcheck_layer("scaled", layer, random_uniform(rng, {3, 4}, 0.1, 1.0), {});
    EXPECT_FALSE(report.passed());
    EXPECT_NEAR(report.max_rel_error(), 0.01 / 1.01, 1e-6);
}

TEST(GradCheck, ReportFormats) {
    const auto reports = run_gradcheck("relu");
    const std::string table = format_report_table(reports);
    const std::string csv = format_report_csv(reports);
    EXPECT_NE(table.find("relu"), std::string::npos);
    EXPECT_NE(table.find(" ok"), std::string::npos);
    EXPECT_EQ(csv.substr(0, csv.find('\n')).find("scope"), 0u);
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1 + 3);
}

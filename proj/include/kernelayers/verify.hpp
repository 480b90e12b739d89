#pragma once

#include <functional>
#include <string>
#include <vector>

#include "kernelayers/layers.hpp"

namespace kl {

using ScalarFn = std::function<double(const Tensor&)>;

/// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h for every element.
/// Throws OracleError if f returns a non-finite value or h <= 0.
Tensor fd_gradient(const ScalarFn& f, const Tensor& x, double h = 1e-4);

/// Same, restricted to the listed flat indices.
std::vector<double> fd_gradient_at(const ScalarFn& f, const Tensor& x, const std::vector<std::size_t>& indices,
                                   double h = 1e-4);

/// |a - n| / max(|a|, |n|, 1e-8)
double relative_error(double analytic, double numeric);

/// Direct nested-loop kervolution. Padded positions read as zero. Bias may
/// be empty (RBF); c is ignored for non-polynomial kernels.
Tensor naive_kervolution(const Tensor& x, const Tensor& weight, const Tensor& bias, double c, const KernelKind& kernel,
                         std::size_t stride, std::size_t padding);

/// Linear-kernel special case: ordinary cross-correlation plus bias.
Tensor naive_conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride,
                    std::size_t padding);

/// Direct loop learnable pooling. weight is [oh, ow, g, h] or [1, 1, g, h].
Tensor naive_learnable_pool(const Tensor& x, const Tensor& weight, double c, const KernelKind& kernel,
                            PoolSharing sharing, const PoolOptions& opts);

/// Direct loop kernelized dense layer: out[m,o] = k(x_m, w_o) + b_o.
Tensor naive_kernelized_dense(const Tensor& x, const Tensor& weight, const Tensor& bias, double c,
                              const KernelKind& kernel);

struct TensorCheck {
    std::string name;         // "input" or a parameter name
    std::size_t checked = 0;  // coordinates compared
    double max_rel_error = 0.0;
    std::size_t worst_index = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
};

struct GradCheckReport {
    std::string scope;
    std::string shape;
    double tolerance = 1e-5;
    std::vector<TensorCheck> tensors;

    bool passed() const;
    double max_rel_error() const;
};

struct GradCheckOptions {
    double h = 1e-4;
    double tolerance = 1e-5;
    std::size_t samples = 200;  // coordinates per tensor; all if fewer
    std::uint64_t seed = 7;
};

/// Checks a layer's input and parameter gradients on loss = sum(R * layer(x)),
/// with R a fixed random tensor in [0.5, 1.5], using training-mode forwards.
GradCheckReport gradcheck_layer(const std::string& scope, Layer& layer, const Tensor& x, const GradCheckOptions& opts);

/// Softmax cross-entropy composite: gradient w.r.t. logits.
GradCheckReport gradcheck_softmax_ce(const Tensor& logits, const std::vector<std::int32_t>& labels,
                                     const GradCheckOptions& opts);

/// Named suites: conv, kerv-poly-2, kerv-poly-3, kerv-poly-5, kerv-rbf,
/// kerv-poly-3-classical, pool-linear, pool-poly-3, pool-rbf, kdl-linear,
/// kdl-poly-3, kdl-rbf, batchnorm, dense, relu, maxpool, avgpool, softmax-ce.
/// Each runs three small random shapes.
std::vector<std::string> gradcheck_scopes();

/// Runs one scope, or every scope for "all". Throws std::invalid_argument
/// for an unknown scope.
std::vector<GradCheckReport> run_gradcheck(const std::string& scope, const GradCheckOptions& opts = {});

std::string format_report_table(const std::vector<GradCheckReport>& reports);
std::string format_report_csv(const std::vector<GradCheckReport>& reports);

} // namespace kl

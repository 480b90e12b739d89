#pragma once

#include <string>
#include <variant>

#include "kernelayers/tensor.hpp"

namespace kl {

/// How a polynomial kernel combines a patch with a weight vector.
///
/// elementwise: sum_p (x_p * w_p + c)^n   (the kernelized-layer formula)
/// classical:   (<x, w> + c)^n            (textbook polynomial kernel)
enum class PolyMode { elementwise, classical };

struct LinearKernel {};

struct PolynomialKernel {
    int order = 2;
    PolyMode mode = PolyMode::elementwise;
    /// Starting value of the layer's learnable constant c.
    double c_init = 1.0;
};

struct RbfKernel {
    double sigma = 0.9;
};

using KernelKind = std::variant<LinearKernel, PolynomialKernel, RbfKernel>;

/// Throws BuildError if n < 1, c_init < 0 or sigma <= 0.
void validate_kernel(const KernelKind& kernel);

/// "linear", "poly-3", "poly-3-classical", "rbf".
std::string kernel_name(const KernelKind& kernel);

bool is_linear(const KernelKind& kernel);
bool is_polynomial(const KernelKind& kernel);
bool is_rbf(const KernelKind& kernel);

/// True when the kernel carries the learnable constant c.
inline bool has_constant(const KernelKind& kernel) { return is_polynomial(kernel); }

/// Pairwise kernel between the rows of x [M, K] and the rows of w [O, K].
/// Returns [M, O]. `c` is ignored by the linear and RBF kernels.
///
/// All products are routed through GEMM. The elementwise polynomial uses the
/// binomial expansion
///   sum_p (x_p w_p + c)^n = sum_k C(n,k) c^(n-k) <x^k, w^k>,
/// so an order-n kernel costs n matrix products.
Tensor kernel_response(const KernelKind& kernel, const Tensor& x, const Tensor& w, double c);

struct KernelGrads {
    Tensor dx;        // [M, K]
    Tensor dw;        // [O, K]
    double dc = 0.0;  // zero unless the kernel is polynomial
};

/// Gradients of sum(grad * kernel_response(x, w, c)). `response` must be the
/// forward output for the same arguments (the RBF gradient reuses it).
KernelGrads kernel_response_backward(const KernelKind& kernel, const Tensor& x, const Tensor& w, double c,
                                     const Tensor& response, const Tensor& grad);

} // namespace kl

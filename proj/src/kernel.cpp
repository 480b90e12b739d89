#include "kernelayers/kernel.hpp"

#include <cmath>

#include "kernelayers/error.hpp"

namespace kl {

namespace {

double binomial(int n, int k) {
    double r = 1.0;
    for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
    return r;
}

// x^e with 0^0 = 1.
double ipow(double x, int e) {
    double r = 1.0;
    for (int i = 0; i < e; ++i) r *= x;
    return r;
}

void check_operands(const Tensor& x, const Tensor& w) {
    if (x.rank() != 2 || w.rank() != 2 || x.dim(1) != w.dim(1)) {
        throw ShapeError("kernel response: rows " + shape_str(x.shape()) + " and weights " + shape_str(w.shape()) +
                         " must be [M,K] and [O,K]");
    }
}

// out[i] = a[i] * b[i] in place on a.
void hadamard_inplace(Tensor& a, const Tensor& b) {
    double* pa = a.ptr();
    const double* pb = b.ptr();
    for (std::size_t i = 0; i < a.size(); ++i) pa[i] *= pb[i];
}

// acc += alpha * a * b (elementwise).
void axpy_hadamard(Tensor& acc, double alpha, const Tensor& a, const Tensor& b) {
    double* out = acc.ptr();
    const double* pa = a.ptr();
    const double* pb = b.ptr();
    for (std::size_t i = 0; i < acc.size(); ++i) out[i] += alpha * pa[i] * pb[i];
}

std::vector<double> row_sq_norms(const Tensor& t) {
    const std::size_t rows = t.dim(0), cols = t.dim(1);
    std::vector<double> norms(rows, 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = t.ptr() + r * cols;
        double s = 0.0;
        for (std::size_t k = 0; k < cols; ++k) s += row[k] * row[k];
        norms[r] = s;
    }
    return norms;
}

Tensor poly_elementwise_forward(int n, const Tensor& x, const Tensor& w, double c) {
    const double patch = static_cast<double>(x.dim(1));
    Tensor out({x.dim(0), w.dim(0)}, ipow(c, n) * patch);
    Tensor xk = x;
    Tensor wk = w;
    for (int k = 1; k <= n; ++k) {
        if (k > 1) {
            hadamard_inplace(xk, x);
            hadamard_inplace(wk, w);
        }
        const double coef = binomial(n, k) * ipow(c, n - k);
        if (coef != 0.0) gemm_into(out, coef, xk, false, wk, true);
    }
    return out;
}

KernelGrads poly_elementwise_backward(int n, const Tensor& x, const Tensor& w, double c, const Tensor& grad) {
    const std::size_t rows = x.dim(0), outs = w.dim(0), patch = x.dim(1);
    KernelGrads g{Tensor(x.shape()), Tensor(w.shape()), 0.0};

    // A_j = grad^T x^j is needed at j (for dc) and j+1 (for dw); A_0 is the
    // column sum of grad broadcast over the patch.
    std::vector<double> grad_colsum(outs, 0.0);
    for (std::size_t m = 0; m < rows; ++m)
        for (std::size_t o = 0; o < outs; ++o) grad_colsum[o] += grad[m * outs + o];

    Tensor x_pow = Tensor::ones(x.shape());  // x^j
    Tensor w_pow = Tensor::ones(w.shape());  // w^j
    Tensor a_prev;                           // A_j for j >= 1
    for (int j = 0; j < n; ++j) {
        Tensor x_next = j == 0 ? x : mul(x_pow, x);
        Tensor w_next = j == 0 ? w : mul(w_pow, w);
        const double coef = n * binomial(n - 1, j) * ipow(c, n - 1 - j);

        Tensor a_next = gemm(grad, true, x_next, false);  // [O, K]
        Tensor b_next = gemm(grad, false, w_next, false); // [M, K]
        axpy_hadamard(g.dw, coef, w_pow, a_next);
        axpy_hadamard(g.dx, coef, x_pow, b_next);

        double term = 0.0;
        if (j == 0) {
            for (std::size_t o = 0; o < outs; ++o) term += grad_colsum[o] * static_cast<double>(patch);
        } else {
            term = dot(w_pow, a_prev);
        }
        g.dc += coef * term;

        a_prev = std::move(a_next);
        x_pow = std::move(x_next);
        w_pow = std::move(w_next);
    }
    return g;
}

Tensor poly_classical_forward(int n, const Tensor& x, const Tensor& w, double c) {
    Tensor s = gemm(x, false, w, true);
    for (double& v : s.data()) v = ipow(v + c, n);
    return s;
}

KernelGrads poly_classical_backward(int n, const Tensor& x, const Tensor& w, double c, const Tensor& grad) {
    Tensor t = gemm(x, false, w, true);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = n * ipow(t[i] + c, n - 1) * grad[i];
    KernelGrads g;
    g.dx = gemm(t, false, w, false);
    g.dw = gemm(t, true, x, false);
    g.dc = sum(t);
    return g;
}

Tensor rbf_forward(double sigma, const Tensor& x, const Tensor& w) {
    const std::size_t rows = x.dim(0), outs = w.dim(0);
    const std::vector<double> xn = row_sq_norms(x);
    const std::vector<double> wn = row_sq_norms(w);
    Tensor out = gemm(x, false, w, true);
    const double inv = 1.0 / (2.0 * sigma * sigma);
    for (std::size_t m = 0; m < rows; ++m) {
        double* row = out.ptr() + m * outs;
        for (std::size_t o = 0; o < outs; ++o) {
            // Expanded distance can round slightly below zero when x == w.
            const double dist = std::max(0.0, xn[m] + wn[o] - 2.0 * row[o]);
            row[o] = std::exp(-dist * inv);
        }
    }
    return out;
}

KernelGrads rbf_backward(double sigma, const Tensor& x, const Tensor& w, const Tensor& response,
                         const Tensor& grad) {
    const std::size_t rows = x.dim(0), outs = w.dim(0), patch = x.dim(1);
    Tensor h = mul(grad, response);
    std::vector<double> h_rows(rows, 0.0), h_cols(outs, 0.0);
    for (std::size_t m = 0; m < rows; ++m)
        for (std::size_t o = 0; o < outs; ++o) {
            h_rows[m] += h[m * outs + o];
            h_cols[o] += h[m * outs + o];
        }
    const double inv_var = 1.0 / (sigma * sigma);

    KernelGrads g;
    g.dw = gemm(h, true, x, false);
    for (std::size_t o = 0; o < outs; ++o)
        for (std::size_t k = 0; k < patch; ++k)
            g.dw[o * patch + k] = (g.dw[o * patch + k] - h_cols[o] * w[o * patch + k]) * inv_var;
    g.dx = gemm(h, false, w, false);
    for (std::size_t m = 0; m < rows; ++m)
        for (std::size_t k = 0; k < patch; ++k)
            g.dx[m * patch + k] = (g.dx[m * patch + k] - h_rows[m] * x[m * patch + k]) * inv_var;
    return g;
}

template <class... Ts>
struct overloaded : Ts... {
    using Ts::operator()...;
};

} // namespace

void validate_kernel(const KernelKind& kernel) {
    if (const auto* p = std::get_if<PolynomialKernel>(&kernel)) {
        if (p->order < 1) throw BuildError("polynomial order must be a positive integer");
        if (!(p->c_init >= 0.0)) throw BuildError("polynomial constant must be >= 0");
    } else if (const auto* r = std::get_if<RbfKernel>(&kernel)) {
        if (!(r->sigma > 0.0)) throw BuildError("rbf sigma must be > 0");
    }
}

std::string kernel_name(const KernelKind& kernel) {
    return std::visit(overloaded{
                          [](const LinearKernel&) { return std::string("linear"); },
                          [](const PolynomialKernel& p) {
                              return "poly-" + std::to_string(p.order) +
                                     (p.mode == PolyMode::classical ? "-classical" : "");
                          },
                          [](const RbfKernel&) { return std::string("rbf"); },
                      },
                      kernel);
}

bool is_linear(const KernelKind& kernel) { return std::holds_alternative<LinearKernel>(kernel); }
bool is_polynomial(const KernelKind& kernel) { return std::holds_alternative<PolynomialKernel>(kernel); }
bool is_rbf(const KernelKind& kernel) { return std::holds_alternative<RbfKernel>(kernel); }

Tensor kernel_response(const KernelKind& kernel, const Tensor& x, const Tensor& w, double c) {
    check_operands(x, w);
    return std::visit(overloaded{
                          [&](const LinearKernel&) { return gemm(x, false, w, true); },
                          [&](const PolynomialKernel& p) {
                              return p.mode == PolyMode::elementwise ? poly_elementwise_forward(p.order, x, w, c)
                                                                     : poly_classical_forward(p.order, x, w, c);
                          },
                          [&](const RbfKernel& r) { return rbf_forward(r.sigma, x, w); },
                      },
                      kernel);
}

KernelGrads kernel_response_backward(const KernelKind& kernel, const Tensor& x, const Tensor& w, double c,
                                     const Tensor& response, const Tensor& grad) {
    check_operands(x, w);
    const Shape out_shape{x.dim(0), w.dim(0)};
    if (grad.shape() != out_shape) {
        throw ShapeError("kernel response backward: gradient " + shape_str(grad.shape()) + " expected " +
                         shape_str(out_shape));
    }
    return std::visit(overloaded{
                          [&](const LinearKernel&) {
                              KernelGrads g;
                              g.dx = gemm(grad, false, w, false);
                              g.dw = gemm(grad, true, x, false);
                              return g;
                          },
                          [&](const PolynomialKernel& p) {
                              return p.mode == PolyMode::elementwise
                                         ? poly_elementwise_backward(p.order, x, w, c, grad)
                                         : poly_classical_backward(p.order, x, w, c, grad);
                          },
                          [&](const RbfKernel& r) { return rbf_backward(r.sigma, x, w, response, grad); },
                      },
                      kernel);
}

} // namespace kl

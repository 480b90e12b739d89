#pragma once

// Randomized equivalence instances: reduced kernels against their classical
// counterparts, and fast layers against the loop oracles.

#include <algorithm>
#include <cmath>
#include <string>

#include "kernelayers/layers.hpp"
#include "kernelayers/verify.hpp"

namespace kl::testutil {

struct Gap {
    double max_abs = 0.0;
    std::string worst;  // instance description for the largest gap

    void update(double d, const std::string& where) {
        if (d > max_abs || (std::isnan(d) && !std::isnan(max_abs))) {
            max_abs = d;
            worst = where;
        }
    }
};

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) return INFINITY;
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

struct ConvCase {
    Conv2DOptions opts;
    Shape input;
};

inline ConvCase random_conv_case(Rng& rng) {
    ConvCase c;
    c.opts.in_channels = 1 + rng.below(3);
    c.opts.out_channels = 1 + rng.below(4);
    c.opts.kernel_h = 1 + rng.below(3);
    c.opts.kernel_w = 1 + rng.below(3);
    c.opts.stride = 1 + rng.below(2);
    c.opts.padding = rng.below(2);
    const std::size_t h = std::max<std::size_t>(c.opts.kernel_h, 3 + rng.below(5));
    const std::size_t w = std::max<std::size_t>(c.opts.kernel_w, 3 + rng.below(5));
    c.input = {1 + rng.below(3), c.opts.in_channels, h, w};
    return c;
}

inline std::string describe(const ConvCase& c) {
    return shape_str(c.input) + " out" + std::to_string(c.opts.out_channels) + " k" + std::to_string(c.opts.kernel_h) +
           "x" + std::to_string(c.opts.kernel_w) + " s" + std::to_string(c.opts.stride) + " p" +
           std::to_string(c.opts.padding);
}

/// Kervolution[linear], Kervolution[poly n=1, c=0] and a hand-written
/// cross-correlation: forward, input gradient, weight gradient, bias gradient.
inline Gap kervolution_reduction_gap(std::size_t instances, std::uint64_t seed) {
    Rng rng(seed);
    Gap gap;
    for (std::size_t t = 0; t < instances; ++t) {
        const ConvCase cc = random_conv_case(rng);
        const Tensor x = random_uniform(rng, cc.input, -1, 1);
        Kervolution2D lin(cc.opts, LinearKernel{}, rng);
        Kervolution2D poly(cc.opts, PolynomialKernel{1}, rng);
        lin.bias().value = random_uniform(rng, lin.bias().value.shape(), -1, 1);
        poly.weight().value = lin.weight().value;
        poly.bias().value = lin.bias().value;
        poly.constant().value[0] = 0.0;

        const Tensor y_lin = lin.forward(x, Mode::train);
        const Tensor y_poly = poly.forward(x, Mode::train);
        const Tensor y_ref = naive_conv2d(x, lin.weight().value, lin.bias().value, cc.opts.stride, cc.opts.padding);
        const Tensor g = random_uniform(rng, y_lin.shape(), -1, 1);
        const Tensor dx_lin = lin.backward(g);
        const Tensor dx_poly = poly.backward(g);

        // Reference gradients of sum(g * conv(x)) through the explicit loops.
        const auto& o = cc.opts;
        Tensor dx_ref = Tensor::zeros(x.shape()), dw_ref = Tensor::zeros(lin.weight().value.shape());
        Tensor db_ref = Tensor::zeros({o.out_channels});
        const std::size_t oh = g.dim(2), ow = g.dim(3);
        for (std::size_t n = 0; n < x.dim(0); ++n)
            for (std::size_t oc = 0; oc < o.out_channels; ++oc)
                for (std::size_t i = 0; i < oh; ++i)
                    for (std::size_t j = 0; j < ow; ++j) {
                        const double go = g.at(n, oc, i, j);
                        db_ref[oc] += go;
                        for (std::size_t ic = 0; ic < o.in_channels; ++ic)
                            for (std::size_t u = 0; u < o.kernel_h; ++u)
                                for (std::size_t v = 0; v < o.kernel_w; ++v) {
                                    const long r = static_cast<long>(i * o.stride + u) - static_cast<long>(o.padding);
                                    const long s = static_cast<long>(j * o.stride + v) - static_cast<long>(o.padding);
                                    if (r < 0 || s < 0 || r >= static_cast<long>(x.dim(2)) ||
                                        s >= static_cast<long>(x.dim(3)))
                                        continue;
                                    dx_ref.at(n, ic, r, s) += go * lin.weight().value.at(oc, ic, u, v);
                                    dw_ref.at(oc, ic, u, v) += go * x.at(n, ic, r, s);
                                }
                    }

        const std::string where = "instance " + std::to_string(t) + " " + describe(cc);
        gap.update(max_abs_diff(y_lin, y_ref), where + " forward linear/loops");
        gap.update(max_abs_diff(y_poly, y_lin), where + " forward poly1/linear");
        gap.update(max_abs_diff(dx_lin, dx_ref), where + " dx linear/loops");
        gap.update(max_abs_diff(dx_poly, dx_lin), where + " dx poly1/linear");
        gap.update(max_abs_diff(lin.weight().grad, dw_ref), where + " dW linear/loops");
        gap.update(max_abs_diff(poly.weight().grad, lin.weight().grad), where + " dW poly1/linear");
        gap.update(max_abs_diff(lin.bias().grad, db_ref), where + " db linear/loops");
        gap.update(max_abs_diff(poly.bias().grad, lin.bias().grad), where + " db poly1/linear");
    }
    return gap;
}

struct PoolCase {
    PoolOptions opts;
    Shape input;
};

inline PoolCase random_pool_case(Rng& rng) {
    PoolCase c;
    c.opts.window_h = 1 + rng.below(3);
    c.opts.window_w = 1 + rng.below(3);
    c.opts.stride = 1 + rng.below(3);
    const std::size_t h = c.opts.window_h + rng.below(6);
    const std::size_t w = c.opts.window_w + rng.below(6);
    c.input = {1 + rng.below(3), 1 + rng.below(3), h, w};
    return c;
}

inline std::string describe(const PoolCase& c) {
    return shape_str(c.input) + " w" + std::to_string(c.opts.window_h) + "x" + std::to_string(c.opts.window_w) + " s" +
           std::to_string(c.opts.stride);
}

/// LearnablePool[linear, uniform 1/(gh), c=0] against AvgPool, forward and input gradient.
inline Gap pool_reduction_gap(std::size_t instances, std::uint64_t seed) {
    Rng rng(seed);
    Gap gap;
    for (std::size_t t = 0; t < instances; ++t) {
        const PoolCase pc = random_pool_case(rng);
        const Tensor x = random_uniform(rng, pc.input, -1, 1);
        const PoolSharing sharing = rng.below(2) ? PoolSharing::global : PoolSharing::per_location;
        LearnablePool2D lp(pc.opts, LinearKernel{}, sharing, pc.input[2], pc.input[3]);
        const double u = 1.0 / static_cast<double>(pc.opts.window_h * pc.opts.window_w);
        for (double& w : lp.weight().value.data()) w = u;
        lp.constant().value[0] = 0.0;
        AvgPool2D ap(pc.opts);
        const Tensor y_lp = lp.forward(x, Mode::train);
        const Tensor y_ap = ap.forward(x, Mode::train);
        const Tensor g = random_uniform(rng, y_ap.shape(), -1, 1);
        const std::string where = "instance " + std::to_string(t) + " " + describe(pc);
        gap.update(max_abs_diff(y_lp, y_ap), where + " forward");
        gap.update(max_abs_diff(lp.backward(g), ap.backward(g)), where + " dx");
    }
    return gap;
}

/// KernelizedDense[linear] against x W^T + b written with explicit loops.
inline Gap dense_reduction_gap(std::size_t instances, std::uint64_t seed) {
    Rng rng(seed);
    Gap gap;
    for (std::size_t t = 0; t < instances; ++t) {
        const std::size_t m = 1 + rng.below(6), in = 1 + rng.below(20), out = 1 + rng.below(10);
        KernelizedDense kd(in, out, LinearKernel{}, rng);
        kd.bias().value = random_uniform(rng, {out}, -1, 1);
        const Tensor x = random_uniform(rng, {m, in}, -1, 1);
        const Tensor y = kd.forward(x, Mode::train);
        const Tensor g = random_uniform(rng, y.shape(), -1, 1);
        const Tensor dx = kd.backward(g);
        const Tensor& w = kd.weight().value;
        Tensor y_ref({m, out}), dx_ref = Tensor::zeros({m, in}), dw_ref = Tensor::zeros({out, in});
        Tensor db_ref = Tensor::zeros({out});
        for (std::size_t r = 0; r < m; ++r)
            for (std::size_t o = 0; o < out; ++o) {
                double s = kd.bias().value[o];
                for (std::size_t i = 0; i < in; ++i) {
                    s += x.at(r, i) * w.at(o, i);
                    dx_ref.at(r, i) += g.at(r, o) * w.at(o, i);
                    dw_ref.at(o, i) += g.at(r, o) * x.at(r, i);
                }
                y_ref.at(r, o) = s;
                db_ref[o] += g.at(r, o);
            }
        const std::string where = "instance " + std::to_string(t) + " [" + std::to_string(m) + "," +
                                  std::to_string(in) + "]->" + std::to_string(out);
        gap.update(max_abs_diff(y, y_ref), where + " forward");
        gap.update(max_abs_diff(dx, dx_ref), where + " dx");
        gap.update(max_abs_diff(kd.weight().grad, dw_ref), where + " dW");
        gap.update(max_abs_diff(kd.bias().grad, db_ref), where + " db");
    }
    return gap;
}

inline KernelKind random_kernel(Rng& rng) {
    switch (rng.below(4)) {
    case 0: return LinearKernel{};
    case 1: return PolynomialKernel{static_cast<int>(1 + rng.below(4))};
    case 2: return PolynomialKernel{static_cast<int>(1 + rng.below(3)), PolyMode::classical};
    default: return RbfKernel{0.5 + rng.uniform()};
    }
}

/// im2col kervolution (every kernel) against the nested-loop oracle.
inline Gap kervolution_oracle_gap(std::size_t instances, std::uint64_t seed) {
    Rng rng(seed);
    Gap gap;
    for (std::size_t t = 0; t < instances; ++t) {
        const ConvCase cc = random_conv_case(rng);
        const KernelKind k = random_kernel(rng);
        Kervolution2D layer(cc.opts, k, rng);
        if (layer.has_bias()) layer.bias().value = random_uniform(rng, layer.bias().value.shape(), -1, 1);
        double c = 0.0;
        if (is_polynomial(k)) {
            c = rng.uniform();
            layer.constant().value[0] = c;
        }
        const Tensor x = random_uniform(rng, cc.input, -1, 1);
        const Tensor fast = layer.forward(x, Mode::eval);
        const Tensor slow = naive_kervolution(x, layer.weight().value, layer.has_bias() ? layer.bias().value : Tensor(),
                                              c, k, cc.opts.stride, cc.opts.padding);
        gap.update(max_abs_diff(fast, slow), "instance " + std::to_string(t) + " " + kernel_name(k) + " " + describe(cc));
    }
    return gap;
}

/// Learnable pooling (every kernel, both sharing modes) against the loop oracle.
inline Gap pool_oracle_gap(std::size_t instances, std::uint64_t seed) {
    Rng rng(seed);
    Gap gap;
    for (std::size_t t = 0; t < instances; ++t) {
        const PoolCase pc = random_pool_case(rng);
        const KernelKind k = random_kernel(rng);
        const PoolSharing sharing = rng.below(2) ? PoolSharing::global : PoolSharing::per_location;
        LearnablePool2D layer(pc.opts, k, sharing, pc.input[2], pc.input[3]);
        layer.weight().value = random_uniform(rng, layer.weight().value.shape(), -1, 1);
        double c = 0.0;
        if (layer.has_constant()) {
            c = rng.uniform();
            layer.constant().value[0] = c;
        }
        const Tensor x = random_uniform(rng, pc.input, -1, 1);
        const Tensor fast = layer.forward(x, Mode::eval);
        const Tensor slow = naive_learnable_pool(x, layer.weight().value, c, k, sharing, pc.opts);
        gap.update(max_abs_diff(fast, slow), "instance " + std::to_string(t) + " " + kernel_name(k) + " " + describe(pc));
    }
    return gap;
}

} // namespace kl::testutil

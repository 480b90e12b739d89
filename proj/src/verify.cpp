#include "kernelayers/verify.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "kernelayers/error.hpp"
#include "kernelayers/optim.hpp"

namespace kl {

namespace {

double checked_eval(const ScalarFn& f, const Tensor& x) {
    const double v = f(x);
    if (!std::isfinite(v)) throw OracleError("oracle function returned a non-finite value");
    return v;
}

// Brute-force kernel between two equally long vectors.
double kernel_value(const KernelKind& kernel, const double* x, const double* w, std::size_t len, double c) {
    if (is_linear(kernel)) {
        double acc = 0.0;
        for (std::size_t i = 0; i < len; ++i) acc += x[i] * w[i];
        return acc;
    }
    if (const auto* p = std::get_if<PolynomialKernel>(&kernel)) {
        if (p->mode == PolyMode::classical) {
            double acc = c;
            for (std::size_t i = 0; i < len; ++i) acc += x[i] * w[i];
            return std::pow(acc, p->order);
        }
        double acc = 0.0;
        for (std::size_t i = 0; i < len; ++i) acc += std::pow(x[i] * w[i] + c, p->order);
        return acc;
    }
    const double sigma = std::get<RbfKernel>(kernel).sigma;
    double dist = 0.0;
    for (std::size_t i = 0; i < len; ++i) dist += (x[i] - w[i]) * (x[i] - w[i]);
    return std::exp(-dist / (2.0 * sigma * sigma));
}

// Neumaier-compensated sum(a * b). Outputs untouched by a perturbation are
// bitwise equal in both evaluations, so an accurate sum cancels them exactly.
double compensated_dot(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "gradcheck loss");
    double sum = 0.0, carry = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double term = a[i] * b[i];
        const double t = sum + term;
        carry += std::abs(sum) >= std::abs(term) ? (sum - t) + term : (term - t) + sum;
        sum = t;
    }
    return sum + carry;
}

std::vector<std::size_t> sample_indices(std::size_t size, std::size_t samples, Rng& rng) {
    std::vector<std::size_t> idx(size);
    std::iota(idx.begin(), idx.end(), 0);
    if (size <= samples) return idx;
    for (std::size_t i = 0; i < samples; ++i) std::swap(idx[i], idx[i + rng.below(size - i)]);
    idx.resize(samples);
    std::sort(idx.begin(), idx.end());
    return idx;
}

TensorCheck compare(const std::string& name, const Tensor& analytic, const ScalarFn& f, const Tensor& at,
                    const GradCheckOptions& opts, Rng& rng) {
    TensorCheck check;
    check.name = name;
    const auto idx = sample_indices(at.size(), opts.samples, rng);
    const auto numeric = fd_gradient_at(f, at, idx, opts.h);
    check.checked = idx.size();
    for (std::size_t k = 0; k < idx.size(); ++k) {
        const double err = relative_error(analytic[idx[k]], numeric[k]);
        if (k == 0 || err > check.max_rel_error) {
            check.max_rel_error = err;
            check.worst_index = idx[k];
            check.worst_analytic = analytic[idx[k]];
            check.worst_numeric = numeric[k];
        }
    }
    return check;
}

// Moves parameters off their initial values so every gradient term is exercised.
void jitter_parameters(Layer& layer, Rng& rng) {
    for (Parameter* p : layer.parameters()) {
        for (double& v : p->value.data()) {
            if (p->nonnegative)
                v = rng.uniform(0.8, 1.2);
            else
                v += rng.uniform(-0.1, 0.1);
        }
    }
}

void resample_near_zero(Tensor& x, Rng& rng) {
    for (double& v : x.data())
        while (std::abs(v) < 1e-3) v = rng.uniform(-1.0, 1.0);
}

// Redraws window entries until every window's maximum is unique by a margin.
void separate_window_maxima(Tensor& x, const PoolOptions& opts, Rng& rng) {
    const Shape& s = x.shape();
    const std::size_t oh = (s[2] - opts.window_h) / opts.stride + 1, ow = (s[3] - opts.window_w) / opts.stride + 1;
    for (int attempt = 0; attempt < 10000; ++attempt) {
        bool clean = true;
        for (std::size_t plane = 0; plane < s[0] * s[1]; ++plane) {
            double* src = x.ptr() + plane * s[2] * s[3];
            for (std::size_t i = 0; i < oh; ++i)
                for (std::size_t j = 0; j < ow; ++j) {
                    double best = -1e300, second = -1e300;
                    std::size_t second_at = 0;
                    for (std::size_t a = 0; a < opts.window_h; ++a)
                        for (std::size_t b = 0; b < opts.window_w; ++b) {
                            const std::size_t at = (i * opts.stride + a) * s[3] + j * opts.stride + b;
                            if (src[at] > best) {
                                second = best;
                                best = src[at];
                                second_at = at;
                            } else if (src[at] > second) {
                                second = src[at];
                                second_at = at;
                            }
                        }
                    if (best - second < 1e-3) {
                        src[second_at] = rng.uniform(-1.0, 1.0);
                        clean = false;
                    }
                }
        }
        if (clean) return;
    }
    throw OracleError("could not separate pooling window maxima");
}

Tensor random_input(const Shape& shape, double half_width, Rng& rng) {
    Tensor x(shape);
    for (double& v : x.data()) v = rng.uniform(-half_width, half_width);
    return x;
}

// Kernelized layers only ever see images or pooled ReLU outputs, so their
// inputs are drawn from [0, 1]. Without sign cancellation the O(h^2)
// truncation of high polynomial orders stays far below tolerance.
Tensor activation_input(const Shape& shape, Rng& rng) {
    Tensor x(shape);
    for (double& v : x.data()) v = rng.uniform(0.0, 1.0);
    return x;
}

struct ConvCase {
    Shape input;
    std::size_t out_channels, kernel, stride, padding;
};

const ConvCase kConvCases[] = {
    {{2, 3, 8, 8}, 4, 3, 1, 1},
    {{1, 4, 9, 9}, 3, 3, 2, 0},
    {{3, 2, 6, 7}, 5, 2, 1, 1},
};

struct PoolCase {
    Shape input;
    PoolOptions opts;
};

const PoolCase kPoolCases[] = {
    {{2, 3, 8, 8}, {2, 2, 2}},
    {{1, 4, 9, 9}, {3, 3, 2}},
    {{2, 3, 6, 8}, {2, 2, 1}},
};

struct DenseCase {
    std::size_t batch, in, out;
};

const DenseCase kDenseCases[] = {{8, 30, 20}, {10, 25, 12}, {6, 40, 8}};

std::string shape_label(const Shape& in, const std::string& extra) {
    return shape_str(in) + (extra.empty() ? "" : " " + extra);
}

std::vector<GradCheckReport> conv_scope(const std::string& scope, const KernelKind& kernel,
                                        const GradCheckOptions& opts, Rng& rng) {
    std::vector<GradCheckReport> out;
    for (const ConvCase& c : kConvCases) {
        Kervolution2D layer({c.input[1], c.out_channels, c.kernel, c.kernel, c.stride, c.padding}, kernel, rng);
        jitter_parameters(layer, rng);
        Tensor x = activation_input(c.input, rng);
        GradCheckReport r = gradcheck_layer(scope, layer, x, opts);
        r.shape = shape_label(c.input, "k" + std::to_string(c.kernel) + " s" + std::to_string(c.stride) + " p" +
                                           std::to_string(c.padding) + " out" + std::to_string(c.out_channels));
        out.push_back(std::move(r));
    }
    return out;
}

std::vector<GradCheckReport> pool_scope(const std::string& scope, const KernelKind& kernel,
                                        const GradCheckOptions& opts, Rng& rng) {
    std::vector<GradCheckReport> out;
    std::size_t i = 0;
    for (const PoolCase& c : kPoolCases) {
        const PoolSharing sharing = (i++ == 1) ? PoolSharing::global : PoolSharing::per_location;
        LearnablePool2D layer(c.opts, kernel, sharing, c.input[2], c.input[3]);
        jitter_parameters(layer, rng);
        Tensor x = activation_input(c.input, rng);
        GradCheckReport r = gradcheck_layer(scope, layer, x, opts);
        r.shape = shape_label(c.input, std::to_string(c.opts.window_h) + "x" + std::to_string(c.opts.window_w) + " s" +
                                           std::to_string(c.opts.stride) +
                                           (sharing == PoolSharing::global ? " global" : " per_location"));
        out.push_back(std::move(r));
    }
    return out;
}

std::vector<GradCheckReport> dense_scope(const std::string& scope, const KernelKind& kernel,
                                         const GradCheckOptions& opts, Rng& rng) {
    std::vector<GradCheckReport> out;
    for (const DenseCase& c : kDenseCases) {
        KernelizedDense layer(c.in, c.out, kernel, rng);
        jitter_parameters(layer, rng);
        Tensor x = activation_input({c.batch, c.in}, rng);
        GradCheckReport r = gradcheck_layer(scope, layer, x, opts);
        r.shape = shape_label(x.shape(), "out" + std::to_string(c.out));
        out.push_back(std::move(r));
    }
    return out;
}

std::vector<GradCheckReport> fixed_pool_scope(const std::string& scope, bool max, const GradCheckOptions& opts,
                                              Rng& rng) {
    std::vector<GradCheckReport> out;
    for (const PoolCase& c : kPoolCases) {
        Tensor x = random_input(c.input, 1.0, rng);
        GradCheckReport r;
        if (max) {
            separate_window_maxima(x, c.opts, rng);
            MaxPool2D layer(c.opts);
            r = gradcheck_layer(scope, layer, x, opts);
        } else {
            AvgPool2D layer(c.opts);
            r = gradcheck_layer(scope, layer, x, opts);
        }
        r.shape = shape_label(c.input, std::to_string(c.opts.window_h) + "x" + std::to_string(c.opts.window_w) + " s" +
                                           std::to_string(c.opts.stride));
        out.push_back(std::move(r));
    }
    return out;
}

} // namespace

Tensor fd_gradient(const ScalarFn& f, const Tensor& x, double h) {
    std::vector<std::size_t> all(x.size());
    std::iota(all.begin(), all.end(), 0);
    const auto values = fd_gradient_at(f, x, all, h);
    return Tensor(x.shape(), values);
}

std::vector<double> fd_gradient_at(const ScalarFn& f, const Tensor& x, const std::vector<std::size_t>& indices,
                                   double h) {
    if (!(h > 0.0)) throw OracleError("finite-difference step must be positive");
    Tensor probe = x;
    std::vector<double> out;
    out.reserve(indices.size());
    for (std::size_t i : indices) {
        const double saved = probe[i];
        probe[i] = saved + h;
        const double plus = checked_eval(f, probe);
        probe[i] = saved - h;
        const double minus = checked_eval(f, probe);
        probe[i] = saved;
        out.push_back((plus - minus) / (2.0 * h));
    }
    return out;
}

double relative_error(double analytic, double numeric) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-8});
}

Tensor naive_kervolution(const Tensor& x, const Tensor& weight, const Tensor& bias, double c, const KernelKind& kernel,
                         std::size_t stride, std::size_t padding) {
    if (x.rank() != 4 || weight.rank() != 4 || x.dim(1) != weight.dim(1))
        throw ShapeError("naive_kervolution: incompatible input " + shape_str(x.shape()) + " and weight " +
                         shape_str(weight.shape()));
    const std::size_t n = x.dim(0), ci = x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::size_t co = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
    const ConvGeometry geo{h, w, kh, kw, stride, padding};
    geo.validate();
    const std::size_t oh = geo.out_h(), ow = geo.out_w();
    if (!bias.empty() && bias.size() != co) throw ShapeError("naive_kervolution: bias size mismatch");

    Tensor out({n, co, oh, ow});
    std::vector<double> patch(ci * kh * kw);
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t i = 0; i < oh; ++i)
            for (std::size_t j = 0; j < ow; ++j) {
                std::size_t p = 0;
                for (std::size_t ch = 0; ch < ci; ++ch)
                    for (std::size_t a = 0; a < kh; ++a)
                        for (std::size_t e = 0; e < kw; ++e, ++p) {
                            const long r = static_cast<long>(i * stride + a) - static_cast<long>(padding);
                            const long q = static_cast<long>(j * stride + e) - static_cast<long>(padding);
                            const bool inside = r >= 0 && q >= 0 && r < static_cast<long>(h) && q < static_cast<long>(w);
                            patch[p] = inside ? x.at(b, ch, static_cast<std::size_t>(r), static_cast<std::size_t>(q)) : 0.0;
                        }
                for (std::size_t o = 0; o < co; ++o) {
                    double v = kernel_value(kernel, patch.data(), weight.ptr() + o * patch.size(), patch.size(), c);
                    if (!bias.empty()) v += bias[o];
                    out.at(b, o, i, j) = v;
                }
            }
    return out;
}

Tensor naive_conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride,
                    std::size_t padding) {
    return naive_kervolution(x, weight, bias, 0.0, LinearKernel{}, stride, padding);
}

Tensor naive_learnable_pool(const Tensor& x, const Tensor& weight, double c, const KernelKind& kernel,
                            PoolSharing sharing, const PoolOptions& opts) {
    if (x.rank() != 4) throw ShapeError("naive_learnable_pool expects NCHW input");
    const std::size_t h = x.dim(2), w = x.dim(3);
    if (h < opts.window_h || w < opts.window_w) throw ShapeError("naive_learnable_pool: window larger than input");
    const std::size_t oh = (h - opts.window_h) / opts.stride + 1, ow = (w - opts.window_w) / opts.stride + 1;
    const std::size_t window = opts.window_h * opts.window_w;
    const std::size_t lh = sharing == PoolSharing::per_location ? oh : 1;
    const std::size_t lw = sharing == PoolSharing::per_location ? ow : 1;
    if (weight.shape() != Shape{lh, lw, opts.window_h, opts.window_w})
        throw ShapeError("naive_learnable_pool: weight shape " + shape_str(weight.shape()));

    // The linear pool adds c once per window element.
    const bool linear = is_linear(kernel);
    Tensor out({x.dim(0), x.dim(1), oh, ow});
    std::vector<double> patch(window);
    for (std::size_t b = 0; b < x.dim(0); ++b)
        for (std::size_t ch = 0; ch < x.dim(1); ++ch)
            for (std::size_t i = 0; i < oh; ++i)
                for (std::size_t j = 0; j < ow; ++j) {
                    for (std::size_t a = 0; a < opts.window_h; ++a)
                        for (std::size_t e = 0; e < opts.window_w; ++e)
                            patch[a * opts.window_w + e] = x.at(b, ch, i * opts.stride + a, j * opts.stride + e);
                    const std::size_t loc = sharing == PoolSharing::per_location ? i * ow + j : 0;
                    double v = kernel_value(kernel, patch.data(), weight.ptr() + loc * window, window, c);
                    if (linear) v += c * static_cast<double>(window);
                    out.at(b, ch, i, j) = v;
                }
    return out;
}

Tensor naive_kernelized_dense(const Tensor& x, const Tensor& weight, const Tensor& bias, double c,
                              const KernelKind& kernel) {
    if (x.rank() != 2 || weight.rank() != 2 || x.dim(1) != weight.dim(1))
        throw ShapeError("naive_kernelized_dense: incompatible shapes");
    Tensor out({x.dim(0), weight.dim(0)});
    for (std::size_t m = 0; m < x.dim(0); ++m)
        for (std::size_t o = 0; o < weight.dim(0); ++o) {
            double v = kernel_value(kernel, x.ptr() + m * x.dim(1), weight.ptr() + o * x.dim(1), x.dim(1), c);
            if (!bias.empty()) v += bias[o];
            out.at(m, o) = v;
        }
    return out;
}

bool GradCheckReport::passed() const {
    return std::all_of(tensors.begin(), tensors.end(),
                       [&](const TensorCheck& t) { return t.max_rel_error < tolerance; });
}

double GradCheckReport::max_rel_error() const {
    double m = 0.0;
    for (const auto& t : tensors) m = std::max(m, t.max_rel_error);
    return m;
}

GradCheckReport gradcheck_layer(const std::string& scope, Layer& layer, const Tensor& x,
                                const GradCheckOptions& opts) {
    Rng rng = Rng::derive(opts.seed, 0x9c);
    const Tensor probe = random_uniform(rng, layer.output_shape(x.shape()), 0.5, 1.5);
    // Centred on the unperturbed output so the loss stays near zero and its rounding does not swamp
    // small differences. The offset is constant, so the gradient is unchanged.
    const Tensor y0 = layer.forward(x, Mode::train);
    auto loss_at = [&](const Tensor& input) {
        Tensor y = layer.forward(input, Mode::train);
        for (std::size_t i = 0; i < y.size(); ++i) y[i] -= y0[i];
        return compensated_dot(probe, y);
    };

    layer.zero_grad();
    layer.forward(x, Mode::train);
    const Tensor dx = layer.backward(probe);

    GradCheckReport report;
    report.scope = scope;
    report.shape = shape_str(x.shape());
    report.tolerance = opts.tolerance;
    report.tensors.push_back(compare("input", dx, loss_at, x, opts, rng));

    for (Parameter* p : layer.parameters()) {
        const Tensor analytic = p->grad;
        const Tensor original = p->value;
        auto loss_param = [&](const Tensor& value) {
            p->value = value;
            const double l = loss_at(x);
            p->value = original;
            return l;
        };
        report.tensors.push_back(compare(p->name, analytic, loss_param, original, opts, rng));
    }
    return report;
}

GradCheckReport gradcheck_softmax_ce(const Tensor& logits, const std::vector<std::int32_t>& labels,
                                     const GradCheckOptions& opts) {
    Rng rng = Rng::derive(opts.seed, 0xce);
    const LossResult analytic = cross_entropy(logits, labels);
    auto f = [&](const Tensor& z) { return cross_entropy(z, labels).loss; };
    GradCheckReport report;
    report.scope = "softmax-ce";
    report.shape = shape_str(logits.shape());
    report.tolerance = opts.tolerance;
    report.tensors.push_back(compare("logits", analytic.grad, f, logits, opts, rng));
    return report;
}

std::vector<std::string> gradcheck_scopes() {
    return {"conv",        "kerv-poly-2", "kerv-poly-3", "kerv-poly-5", "kerv-rbf",   "kerv-poly-3-classical",
            "pool-linear", "pool-poly-3", "pool-rbf",    "kdl-linear",  "kdl-poly-3", "kdl-rbf",
            "batchnorm",   "dense",       "relu",        "maxpool",     "avgpool",    "softmax-ce"};
}

std::vector<GradCheckReport> run_gradcheck(const std::string& scope, const GradCheckOptions& opts) {
    if (scope == "all") {
        std::vector<GradCheckReport> all;
        for (const auto& s : gradcheck_scopes()) {
            auto part = run_gradcheck(s, opts);
            all.insert(all.end(), part.begin(), part.end());
        }
        return all;
    }
    const auto names = gradcheck_scopes();
    const auto pos = static_cast<std::uint64_t>(std::find(names.begin(), names.end(), scope) - names.begin());
    Rng rng = Rng::derive(opts.seed, 0x100 + pos);
    const RbfKernel rbf{0.9};
    auto poly = [](int n) { return PolynomialKernel{n, PolyMode::elementwise, 1.0}; };

    if (scope == "conv") return conv_scope(scope, LinearKernel{}, opts, rng);
    if (scope == "kerv-poly-2") return conv_scope(scope, poly(2), opts, rng);
    if (scope == "kerv-poly-3") return conv_scope(scope, poly(3), opts, rng);
    if (scope == "kerv-poly-5") return conv_scope(scope, poly(5), opts, rng);
    if (scope == "kerv-rbf") return conv_scope(scope, rbf, opts, rng);
    if (scope == "kerv-poly-3-classical")
        return conv_scope(scope, PolynomialKernel{3, PolyMode::classical, 1.0}, opts, rng);
    if (scope == "pool-linear") return pool_scope(scope, LinearKernel{}, opts, rng);
    if (scope == "pool-poly-3") return pool_scope(scope, poly(3), opts, rng);
    if (scope == "pool-rbf") return pool_scope(scope, rbf, opts, rng);
    if (scope == "kdl-linear" || scope == "dense") return dense_scope(scope, LinearKernel{}, opts, rng);
    if (scope == "kdl-poly-3") return dense_scope(scope, poly(3), opts, rng);
    if (scope == "kdl-rbf") return dense_scope(scope, rbf, opts, rng);
    if (scope == "maxpool") return fixed_pool_scope(scope, true, opts, rng);
    if (scope == "avgpool") return fixed_pool_scope(scope, false, opts, rng);

    std::vector<GradCheckReport> out;
    if (scope == "batchnorm") {
        for (const Shape& s : {Shape{4, 3, 5, 5}, Shape{40, 6}, Shape{3, 4, 6, 5}}) {
            BatchNorm2D layer(s[1]);
            jitter_parameters(layer, rng);
            Tensor x = random_input(s, 1.0, rng);
            out.push_back(gradcheck_layer(scope, layer, x, opts));
        }
        return out;
    }
    if (scope == "relu") {
        for (const Shape& s : {Shape{2, 3, 8, 8}, Shape{25, 12}, Shape{1, 5, 7, 9}}) {
            ReLU layer;
            Tensor x = random_input(s, 1.0, rng);
            resample_near_zero(x, rng);
            out.push_back(gradcheck_layer(scope, layer, x, opts));
        }
        return out;
    }
    if (scope == "softmax-ce") {
        for (const auto& [rows, classes] : {std::pair<std::size_t, std::size_t>{32, 10}, {20, 7}, {1, 3}}) {
            Tensor z = random_input({rows, classes}, 3.0, rng);
            std::vector<std::int32_t> labels(rows);
            for (auto& l : labels) l = static_cast<std::int32_t>(rng.below(classes));
            out.push_back(gradcheck_softmax_ce(z, labels, opts));
        }
        return out;
    }
    throw std::invalid_argument("unknown gradcheck scope '" + scope + "'");
}

std::string format_report_table(const std::vector<GradCheckReport>& reports) {
    std::ostringstream os;
    char line[256];
    std::snprintf(line, sizeof(line), "%-22s %-34s %-8s %7s %12s  %s\n", "scope", "shape", "tensor", "checked",
                  "max_rel_err", "result");
    os << line;
    for (const auto& r : reports)
        for (const auto& t : r.tensors) {
            std::snprintf(line, sizeof(line), "%-22s %-34s %-8s %7zu %12.3e  %s\n", r.scope.c_str(), r.shape.c_str(),
                          t.name.c_str(), t.checked, t.max_rel_error,
                          t.max_rel_error < r.tolerance ? "ok" : "FAIL");
            os << line;
        }
    return os.str();
}

std::string format_report_csv(const std::vector<GradCheckReport>& reports) {
    std::ostringstream os;
    os << "scope,shape,tensor,checked,max_rel_error,worst_index,analytic,numeric,tolerance,passed\n";
    char buf[512];
    for (const auto& r : reports)
        for (const auto& t : r.tensors) {
            std::snprintf(buf, sizeof(buf), "%s,\"%s\",%s,%zu,%.6e,%zu,%.12e,%.12e,%.1e,%s\n", r.scope.c_str(),
                          r.shape.c_str(), t.name.c_str(), t.checked, t.max_rel_error, t.worst_index,
                          t.worst_analytic, t.worst_numeric, r.tolerance,
                          t.max_rel_error < r.tolerance ? "true" : "false");
            os << buf;
        }
    return os.str();
}

} // namespace kl

#include <cmath>
#include <sstream>

#include "kernelayers/error.hpp"
#include "kernelayers/layers.hpp"

namespace kl {

namespace {

Shape pooled_shape(const Shape& input, const PoolOptions& opts, const char* name) {
    if (input.size() != 4) throw ShapeError(std::string(name) + " expects NCHW input, got " + shape_str(input));
    if (opts.window_h == 0 || opts.window_w == 0 || opts.stride == 0)
        throw ShapeError(std::string(name) + ": window and stride must be >= 1");
    if (opts.window_h > input[2] || opts.window_w > input[3]) {
        throw ShapeError(std::string(name) + ": window " + std::to_string(opts.window_h) + "x" +
                         std::to_string(opts.window_w) + " exceeds input " + shape_str(input));
    }
    return {input[0], input[1], (input[2] - opts.window_h) / opts.stride + 1,
            (input[3] - opts.window_w) / opts.stride + 1};
}

double ipow(double x, int e) {
    double r = 1.0;
    for (int i = 0; i < e; ++i) r *= x;
    return r;
}

} // namespace

MaxPool2D::MaxPool2D(const PoolOptions& opts) : opts_(opts) {}

Shape MaxPool2D::output_shape(const Shape& input) const { return pooled_shape(input, opts_, "maxpool2d"); }

Tensor MaxPool2D::forward(const Tensor& x, Mode mode) {
    const Shape os = output_shape(x.shape());
    const std::size_t h = x.dim(2), w = x.dim(3), oh = os[2], ow = os[3];
    Tensor out(os);
    std::vector<std::size_t> argmax(out.size());
    std::size_t k = 0;
    for (std::size_t plane = 0; plane < os[0] * os[1]; ++plane) {
        const std::size_t base = plane * h * w;
        for (std::size_t i = 0; i < oh; ++i) {
            for (std::size_t j = 0; j < ow; ++j, ++k) {
                std::size_t best = base + (i * opts_.stride) * w + j * opts_.stride;
                for (std::size_t a = 0; a < opts_.window_h; ++a) {
                    for (std::size_t b = 0; b < opts_.window_w; ++b) {
                        const std::size_t idx = base + (i * opts_.stride + a) * w + j * opts_.stride + b;
                        if (x[idx] > x[best]) best = idx;  // ties keep the first in scan order
                    }
                }
                out[k] = x[best];
                argmax[k] = best;
            }
        }
    }
    if (mode == Mode::train) {
        input_shape_ = x.shape();
        argmax_ = std::move(argmax);
    } else {
        input_shape_.clear();
        argmax_.clear();
    }
    return out;
}

Tensor MaxPool2D::backward(const Tensor& grad_out) {
    if (input_shape_.empty()) throw StateError("maxpool2d: backward called without a training-mode forward");
    if (grad_out.size() != argmax_.size()) throw ShapeError("maxpool2d backward: gradient shape mismatch");
    Tensor dx(input_shape_);
    for (std::size_t k = 0; k < argmax_.size(); ++k) dx[argmax_[k]] += grad_out[k];
    return dx;
}

AvgPool2D::AvgPool2D(const PoolOptions& opts) : opts_(opts) {}

Shape AvgPool2D::output_shape(const Shape& input) const { return pooled_shape(input, opts_, "avgpool2d"); }

Tensor AvgPool2D::forward(const Tensor& x, Mode mode) {
    const Shape os = output_shape(x.shape());
    const std::size_t h = x.dim(2), w = x.dim(3), oh = os[2], ow = os[3];
    const double inv = 1.0 / static_cast<double>(opts_.window_h * opts_.window_w);
    Tensor out(os);
    std::size_t k = 0;
    for (std::size_t plane = 0; plane < os[0] * os[1]; ++plane) {
        const double* src = x.ptr() + plane * h * w;
        for (std::size_t i = 0; i < oh; ++i) {
            for (std::size_t j = 0; j < ow; ++j, ++k) {
                double s = 0.0;
                for (std::size_t a = 0; a < opts_.window_h; ++a)
                    for (std::size_t b = 0; b < opts_.window_w; ++b)
                        s += src[(i * opts_.stride + a) * w + j * opts_.stride + b];
                out[k] = s * inv;
            }
        }
    }
    if (mode == Mode::train) input_shape_ = x.shape();
    else input_shape_.clear();
    return out;
}

Tensor AvgPool2D::backward(const Tensor& grad_out) {
    if (input_shape_.empty()) throw StateError("avgpool2d: backward called without a training-mode forward");
    const Shape os = output_shape(input_shape_);
    if (grad_out.shape() != os) throw ShapeError("avgpool2d backward: gradient shape mismatch");
    const std::size_t h = input_shape_[2], w = input_shape_[3], oh = os[2], ow = os[3];
    const double inv = 1.0 / static_cast<double>(opts_.window_h * opts_.window_w);
    Tensor dx(input_shape_);
    std::size_t k = 0;
    for (std::size_t plane = 0; plane < os[0] * os[1]; ++plane) {
        double* dst = dx.ptr() + plane * h * w;
        for (std::size_t i = 0; i < oh; ++i)
            for (std::size_t j = 0; j < ow; ++j, ++k)
                for (std::size_t a = 0; a < opts_.window_h; ++a)
                    for (std::size_t b = 0; b < opts_.window_w; ++b)
                        dst[(i * opts_.stride + a) * w + j * opts_.stride + b] += grad_out[k] * inv;
    }
    return dx;
}

LearnablePool2D::LearnablePool2D(const PoolOptions& opts, KernelKind kernel, PoolSharing sharing, std::size_t in_h,
                                 std::size_t in_w)
    : opts_(opts), kernel_(std::move(kernel)), sharing_(sharing), in_h_(in_h), in_w_(in_w) {
    validate_kernel(kernel_);
    const Shape os = pooled_shape({1, 1, in_h, in_w}, opts_, "learnablepool2d");
    out_h_ = os[2];
    out_w_ = os[3];
    const std::size_t locations_h = sharing_ == PoolSharing::per_location ? out_h_ : 1;
    const std::size_t locations_w = sharing_ == PoolSharing::per_location ? out_w_ : 1;
    const double uniform = 1.0 / static_cast<double>(opts_.window_h * opts_.window_w);
    weight_ = Parameter("weight", Tensor::full({locations_h, locations_w, opts_.window_h, opts_.window_w}, uniform));
    if (has_constant()) {
        const auto* poly = std::get_if<PolynomialKernel>(&kernel_);
        constant_ = Parameter("c", Tensor::full({1}, poly ? poly->c_init : 0.0), true);
    }
}

std::string LearnablePool2D::describe() const {
    std::ostringstream os;
    os << "learnablepool2d[" << kernel_name(kernel_) << "] " << opts_.window_h << "x" << opts_.window_w << " s"
       << opts_.stride << (sharing_ == PoolSharing::global ? " global" : " per_location");
    return os.str();
}

Shape LearnablePool2D::output_shape(const Shape& input) const {
    const Shape os = pooled_shape(input, opts_, "learnablepool2d");
    if (input[2] != in_h_ || input[3] != in_w_) {
        throw ShapeError("learnablepool2d was built for " + std::to_string(in_h_) + "x" + std::to_string(in_w_) +
                         " inputs, got " + shape_str(input));
    }
    return os;
}

Tensor LearnablePool2D::forward(const Tensor& x, Mode mode) {
    const Shape os = output_shape(x.shape());
    const std::size_t gh = opts_.window_h, gw = opts_.window_w, window = gh * gw;
    const double c = has_constant() ? constant_.value[0] : 0.0;
    Tensor out(os);

    std::size_t k = 0;
    for (std::size_t plane = 0; plane < os[0] * os[1]; ++plane) {
        const double* src = x.ptr() + plane * in_h_ * in_w_;
        for (std::size_t i = 0; i < out_h_; ++i) {
            for (std::size_t j = 0; j < out_w_; ++j, ++k) {
                const std::size_t loc = sharing_ == PoolSharing::per_location ? i * out_w_ + j : 0;
                const double* wv = weight_.value.ptr() + loc * window;
                const double* xv = src + (i * opts_.stride) * in_w_ + j * opts_.stride;
                double acc = 0.0;
                if (is_linear(kernel_)) {
                    for (std::size_t a = 0; a < gh; ++a)
                        for (std::size_t b = 0; b < gw; ++b) acc += xv[a * in_w_ + b] * wv[a * gw + b] + c;
                } else if (const auto* p = std::get_if<PolynomialKernel>(&kernel_)) {
                    if (p->mode == PolyMode::elementwise) {
                        for (std::size_t a = 0; a < gh; ++a)
                            for (std::size_t b = 0; b < gw; ++b)
                                acc += ipow(xv[a * in_w_ + b] * wv[a * gw + b] + c, p->order);
                    } else {
                        for (std::size_t a = 0; a < gh; ++a)
                            for (std::size_t b = 0; b < gw; ++b) acc += xv[a * in_w_ + b] * wv[a * gw + b];
                        acc = ipow(acc + c, p->order);
                    }
                } else {
                    const double sigma = std::get<RbfKernel>(kernel_).sigma;
                    for (std::size_t a = 0; a < gh; ++a)
                        for (std::size_t b = 0; b < gw; ++b) {
                            const double d = xv[a * in_w_ + b] - wv[a * gw + b];
                            acc += d * d;
                        }
                    acc = std::exp(-acc / (2.0 * sigma * sigma));
                }
                out[k] = acc;
            }
        }
    }

    if (mode == Mode::train) {
        input_ = x;
        response_ = is_rbf(kernel_) ? out : Tensor();
    } else {
        input_ = Tensor();
        response_ = Tensor();
    }
    return out;
}

Tensor LearnablePool2D::backward(const Tensor& grad_out) {
    if (input_.empty()) throw StateError("learnablepool2d: backward called without a training-mode forward");
    const Shape os = output_shape(input_.shape());
    if (grad_out.shape() != os) throw ShapeError("learnablepool2d backward: gradient shape mismatch");
    const std::size_t gh = opts_.window_h, gw = opts_.window_w, window = gh * gw;
    const double c = has_constant() ? constant_.value[0] : 0.0;
    Tensor dx(input_.shape());
    double dc = 0.0;

    std::size_t k = 0;
    for (std::size_t plane = 0; plane < os[0] * os[1]; ++plane) {
        const double* src = input_.ptr() + plane * in_h_ * in_w_;
        double* dsrc = dx.ptr() + plane * in_h_ * in_w_;
        for (std::size_t i = 0; i < out_h_; ++i) {
            for (std::size_t j = 0; j < out_w_; ++j, ++k) {
                const double g = grad_out[k];
                const std::size_t loc = sharing_ == PoolSharing::per_location ? i * out_w_ + j : 0;
                const double* wv = weight_.value.ptr() + loc * window;
                double* dw = weight_.grad.ptr() + loc * window;
                const std::size_t offset = (i * opts_.stride) * in_w_ + j * opts_.stride;
                const double* xv = src + offset;
                double* dxv = dsrc + offset;

                if (is_linear(kernel_)) {
                    for (std::size_t a = 0; a < gh; ++a)
                        for (std::size_t b = 0; b < gw; ++b) {
                            dxv[a * in_w_ + b] += g * wv[a * gw + b];
                            dw[a * gw + b] += g * xv[a * in_w_ + b];
                        }
                    dc += g * static_cast<double>(window);
                } else if (const auto* p = std::get_if<PolynomialKernel>(&kernel_)) {
                    const int n = p->order;
                    if (p->mode == PolyMode::elementwise) {
                        for (std::size_t a = 0; a < gh; ++a)
                            for (std::size_t b = 0; b < gw; ++b) {
                                const double xe = xv[a * in_w_ + b], we = wv[a * gw + b];
                                const double d = g * n * ipow(xe * we + c, n - 1);
                                dxv[a * in_w_ + b] += d * we;
                                dw[a * gw + b] += d * xe;
                                dc += d;
                            }
                    } else {
                        double s = c;
                        for (std::size_t a = 0; a < gh; ++a)
                            for (std::size_t b = 0; b < gw; ++b) s += xv[a * in_w_ + b] * wv[a * gw + b];
                        const double d = g * n * ipow(s, n - 1);
                        for (std::size_t a = 0; a < gh; ++a)
                            for (std::size_t b = 0; b < gw; ++b) {
                                dxv[a * in_w_ + b] += d * wv[a * gw + b];
                                dw[a * gw + b] += d * xv[a * in_w_ + b];
                            }
                        dc += d;
                    }
                } else {
                    const double sigma = std::get<RbfKernel>(kernel_).sigma;
                    const double scale_factor = g * response_[k] / (sigma * sigma);
                    for (std::size_t a = 0; a < gh; ++a)
                        for (std::size_t b = 0; b < gw; ++b) {
                            const double d = scale_factor * (xv[a * in_w_ + b] - wv[a * gw + b]);
                            dxv[a * in_w_ + b] -= d;
                            dw[a * gw + b] += d;
                        }
                }
            }
        }
    }
    if (has_constant()) constant_.grad[0] += dc;
    return dx;
}

std::vector<Parameter*> LearnablePool2D::parameters() {
    std::vector<Parameter*> params{&weight_};
    if (has_constant()) params.push_back(&constant_);
    return params;
}

} // namespace kl

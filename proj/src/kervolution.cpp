#include <sstream>

#include "kernelayers/error.hpp"
#include "kernelayers/layers.hpp"

namespace kl {

void Layer::zero_grad() {
    for (Parameter* p : parameters()) p->grad.fill(0.0);
}

namespace {

double constant_init(const KernelKind& kernel) {
    if (const auto* p = std::get_if<PolynomialKernel>(&kernel)) return p->c_init;
    return 0.0;
}

} // namespace

Kervolution2D::Kervolution2D(const Conv2DOptions& opts, KernelKind kernel, Rng& rng)
    : opts_(opts), kernel_(std::move(kernel)) {
    validate_kernel(kernel_);
    if (opts_.in_channels == 0 || opts_.out_channels == 0) throw BuildError("channel counts must be >= 1");
    if (opts_.kernel_h == 0 || opts_.kernel_w == 0 || opts_.stride == 0)
        throw BuildError("kernel size and stride must be >= 1");
    const std::size_t fan_in = opts_.in_channels * opts_.kernel_h * opts_.kernel_w;
    weight_ = Parameter("weight", init_he(rng, {opts_.out_channels, opts_.in_channels, opts_.kernel_h, opts_.kernel_w},
                                          fan_in));
    if (has_bias()) bias_ = Parameter("bias", Tensor::zeros({opts_.out_channels}));
    if (has_constant(kernel_)) constant_ = Parameter("c", Tensor::full({1}, constant_init(kernel_)), true);
}

std::unique_ptr<Kervolution2D> make_conv2d(const Conv2DOptions& opts, Rng& rng) {
    return std::make_unique<Kervolution2D>(opts, LinearKernel{}, rng);
}

std::string Kervolution2D::describe() const {
    std::ostringstream os;
    os << "kervolution2d[" << kernel_name(kernel_) << "] " << opts_.in_channels << "->" << opts_.out_channels << " "
       << opts_.kernel_h << "x" << opts_.kernel_w << " s" << opts_.stride << " p" << opts_.padding;
    return os.str();
}

Shape Kervolution2D::output_shape(const Shape& input) const {
    if (input.size() != 4 || input[1] != opts_.in_channels) {
        throw ShapeError("kervolution2d expects [N," + std::to_string(opts_.in_channels) + ",H,W], got " +
                         shape_str(input));
    }
    const ConvGeometry g{input[2], input[3], opts_.kernel_h, opts_.kernel_w, opts_.stride, opts_.padding};
    g.validate();
    return {input[0], opts_.out_channels, g.out_h(), g.out_w()};
}

Tensor Kervolution2D::forward(const Tensor& x, Mode mode) {
    const Shape out_shape = output_shape(x.shape());
    const std::size_t batch = out_shape[0], outs = out_shape[1];
    const std::size_t positions = out_shape[2] * out_shape[3];
    const std::size_t patch = opts_.in_channels * opts_.kernel_h * opts_.kernel_w;

    Tensor cols = im2col(x, opts_.kernel_h, opts_.kernel_w, opts_.stride, opts_.padding).reshape({batch * positions, patch});
    const Tensor w = weight_.value.reshape({outs, patch});
    const double c = has_constant(kernel_) ? constant_.value[0] : 0.0;
    Tensor response = kernel_response(kernel_, cols, w, c);

    Tensor out(out_shape);
    for (std::size_t n = 0; n < batch; ++n) {
        for (std::size_t o = 0; o < outs; ++o) {
            const double b = has_bias() ? bias_.value[o] : 0.0;
            double* dst = out.ptr() + (n * outs + o) * positions;
            const double* src = response.ptr() + n * positions * outs + o;
            for (std::size_t p = 0; p < positions; ++p) dst[p] = src[p * outs] + b;
        }
    }

    if (mode == Mode::train) {
        input_shape_ = x.shape();
        cols_ = std::move(cols);
        response_ = is_rbf(kernel_) ? std::move(response) : Tensor();
    } else {
        cols_ = Tensor();
        response_ = Tensor();
    }
    return out;
}

Tensor Kervolution2D::backward(const Tensor& grad_out) {
    if (cols_.empty()) throw StateError("kervolution2d: backward called without a training-mode forward");
    const Shape out_shape = output_shape(input_shape_);
    if (grad_out.shape() != out_shape) {
        throw ShapeError("kervolution2d backward: gradient " + shape_str(grad_out.shape()) + " expected " +
                         shape_str(out_shape));
    }
    const std::size_t batch = out_shape[0], outs = out_shape[1];
    const std::size_t positions = out_shape[2] * out_shape[3];
    const std::size_t patch = cols_.dim(1);

    Tensor grad({batch * positions, outs});
    for (std::size_t n = 0; n < batch; ++n) {
        for (std::size_t o = 0; o < outs; ++o) {
            const double* src = grad_out.ptr() + (n * outs + o) * positions;
            double* dst = grad.ptr() + n * positions * outs + o;
            double bias_sum = 0.0;
            for (std::size_t p = 0; p < positions; ++p) {
                dst[p * outs] = src[p];
                bias_sum += src[p];
            }
            if (has_bias()) bias_.grad[o] += bias_sum;
        }
    }

    const Tensor w = weight_.value.reshape({outs, patch});
    const double c = has_constant(kernel_) ? constant_.value[0] : 0.0;
    KernelGrads g = kernel_response_backward(kernel_, cols_, w, c, response_, grad);
    weight_.grad += g.dw.reshape(weight_.value.shape());
    if (has_constant(kernel_)) constant_.grad[0] += g.dc;
    return col2im(std::move(g.dx).reshape({batch, positions, patch}), input_shape_, opts_.kernel_h, opts_.kernel_w,
                  opts_.stride, opts_.padding);
}

std::vector<Parameter*> Kervolution2D::parameters() {
    std::vector<Parameter*> params{&weight_};
    if (has_bias()) params.push_back(&bias_);
    if (has_constant(kernel_)) params.push_back(&constant_);
    return params;
}

KernelizedDense::KernelizedDense(std::size_t in_units, std::size_t out_units, KernelKind kernel, Rng& rng)
    : in_units_(in_units), out_units_(out_units), kernel_(std::move(kernel)) {
    validate_kernel(kernel_);
    if (in_units == 0 || out_units == 0) throw BuildError("dense layer sizes must be >= 1");
    weight_ = Parameter("weight", init_he(rng, {out_units, in_units}, in_units));
    if (has_bias()) bias_ = Parameter("bias", Tensor::zeros({out_units}));
    if (has_constant(kernel_)) constant_ = Parameter("c", Tensor::full({1}, constant_init(kernel_)), true);
}

std::unique_ptr<KernelizedDense> make_dense(std::size_t in_units, std::size_t out_units, Rng& rng) {
    return std::make_unique<KernelizedDense>(in_units, out_units, LinearKernel{}, rng);
}

std::string KernelizedDense::describe() const {
    std::ostringstream os;
    os << "kernelized_dense[" << kernel_name(kernel_) << "] " << in_units_ << "->" << out_units_;
    return os.str();
}

Shape KernelizedDense::output_shape(const Shape& input) const {
    if (input.size() != 2 || input[1] != in_units_) {
        throw ShapeError("kernelized_dense expects [N," + std::to_string(in_units_) + "], got " + shape_str(input));
    }
    return {input[0], out_units_};
}

Tensor KernelizedDense::forward(const Tensor& x, Mode mode) {
    output_shape(x.shape());
    const double c = has_constant(kernel_) ? constant_.value[0] : 0.0;
    Tensor response = kernel_response(kernel_, x, weight_.value, c);
    Tensor out = has_bias() ? add_rowwise(response, bias_.value) : response;
    if (mode == Mode::train) {
        input_ = x;
        response_ = is_rbf(kernel_) ? std::move(response) : Tensor();
    } else {
        input_ = Tensor();
        response_ = Tensor();
    }
    return out;
}

Tensor KernelizedDense::backward(const Tensor& grad_out) {
    if (input_.empty()) throw StateError("kernelized_dense: backward called without a training-mode forward");
    const Shape out_shape{input_.dim(0), out_units_};
    if (grad_out.shape() != out_shape) {
        throw ShapeError("kernelized_dense backward: gradient " + shape_str(grad_out.shape()) + " expected " +
                         shape_str(out_shape));
    }
    if (has_bias()) bias_.grad += sum(grad_out, 0);
    const double c = has_constant(kernel_) ? constant_.value[0] : 0.0;
    KernelGrads g = kernel_response_backward(kernel_, input_, weight_.value, c, response_, grad_out);
    weight_.grad += g.dw;
    if (has_constant(kernel_)) constant_.grad[0] += g.dc;
    return std::move(g.dx);
}

std::vector<Parameter*> KernelizedDense::parameters() {
    std::vector<Parameter*> params{&weight_};
    if (has_bias()) params.push_back(&bias_);
    if (has_constant(kernel_)) params.push_back(&constant_);
    return params;
}

} // namespace kl

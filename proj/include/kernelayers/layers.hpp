#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "kernelayers/kernel.hpp"
#include "kernelayers/rng.hpp"
#include "kernelayers/tensor.hpp"

namespace kl {

enum class Mode { train, eval };

/// A trainable tensor and its accumulated gradient (same shape).
struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;
    /// Projected onto [0, inf) after every optimizer step.
    bool nonnegative = false;

    Parameter() = default;
    Parameter(std::string n, Tensor v, bool nonneg = false)
        : name(std::move(n)), value(std::move(v)), grad(Tensor::zeros(value.shape())), nonnegative(nonneg) {}
};

/// Non-trainable state that must survive a checkpoint (running statistics).
struct Buffer {
    std::string name;
    Tensor* value;
};

class Layer {
public:
    virtual ~Layer() = default;

    /// Short type tag, e.g. "kervolution2d" or "maxpool2d".
    virtual std::string kind() const = 0;
    virtual std::string describe() const { return kind(); }

    /// Shape of the output for a full input shape (batch axis included).
    /// Throws ShapeError for incompatible inputs.
    virtual Shape output_shape(const Shape& input) const = 0;

    virtual Tensor forward(const Tensor& x, Mode mode) = 0;

    /// Accumulates parameter gradients and returns the gradient w.r.t. the
    /// input of the last training-mode forward. Throws StateError otherwise.
    virtual Tensor backward(const Tensor& grad_out) = 0;

    virtual std::vector<Parameter*> parameters() { return {}; }
    virtual std::vector<Buffer> buffers() { return {}; }

    void zero_grad();
};

using LayerPtr = std::unique_ptr<Layer>;

struct Conv2DOptions {
    std::size_t in_channels = 1;
    std::size_t out_channels = 1;
    std::size_t kernel_h = 3;
    std::size_t kernel_w = 3;
    std::size_t stride = 1;
    std::size_t padding = 0;
};

/// Sliding-window layer whose patch/filter similarity is a kernel function.
///
/// Linear kernel: ordinary convolution, out = <patch, w_o> + b_o.
/// Polynomial:    out = sum_p (x_p w_{o,p} + c)^n + b_o, c learnable and >= 0.
/// Gaussian RBF:  out = exp(-|patch - w_o|^2 / (2 sigma^2)), no bias.
///
/// Input channels are summed inside the patch. Patches are extracted with
/// im2col and every kernel reduces to matrix products.
class Kervolution2D : public Layer {
public:
    Kervolution2D(const Conv2DOptions& opts, KernelKind kernel, Rng& rng);

    std::string kind() const override { return "kervolution2d"; }
    std::string describe() const override;
    Shape output_shape(const Shape& input) const override;
    Tensor forward(const Tensor& x, Mode mode) override;
    Tensor backward(const Tensor& grad_out) override;
    std::vector<Parameter*> parameters() override;

    const KernelKind& kernel() const { return kernel_; }
    const Conv2DOptions& options() const { return opts_; }
    Parameter& weight() { return weight_; }
    Parameter& bias() { return bias_; }
    Parameter& constant() { return constant_; }
    bool has_bias() const { return !is_rbf(kernel_); }

private:
    Conv2DOptions opts_;
    KernelKind kernel_;
    Parameter weight_;    // [out, in, kh, kw]
    Parameter bias_;      // [out], absent for RBF
    Parameter constant_;  // [1], polynomial only
    Shape input_shape_;
    Tensor cols_;         // [N*P, in*kh*kw]
    Tensor response_;     // [N*P, out]
};

/// Convolution is kervolution with the linear kernel.
std::unique_ptr<Kervolution2D> make_conv2d(const Conv2DOptions& opts, Rng& rng);

struct PoolOptions {
    std::size_t window_h = 2;
    std::size_t window_w = 2;
    std::size_t stride = 2;
};

class MaxPool2D : public Layer {
public:
    explicit MaxPool2D(const PoolOptions& opts);
    std::string kind() const override { return "maxpool2d"; }
    Shape output_shape(const Shape& input) const override;
    Tensor forward(const Tensor& x, Mode mode) override;
    Tensor backward(const Tensor& grad_out) override;

private:
    PoolOptions opts_;
    Shape input_shape_;
    std::vector<std::size_t> argmax_;  // flat input index per output element
};

class AvgPool2D : public Layer {
public:
    explicit AvgPool2D(const PoolOptions& opts);
    std::string kind() const override { return "avgpool2d"; }
    Shape output_shape(const Shape& input) const override;
    Tensor forward(const Tensor& x, Mode mode) override;
    Tensor backward(const Tensor& grad_out) override;

private:
    PoolOptions opts_;
    Shape input_shape_;
};

enum class PoolSharing { per_location, global };

/// Down-sampling with trainable window weights combined through a kernel.
///
/// For output location (i, j) with window weights w_ij (shared by every channel):
///   linear:     P = sum_{g,h} (x_gh w_ij,gh + c)
///   polynomial: P = sum_{g,h} (x_gh w_ij,gh + c)^n
///   RBF:        P = exp(-|x - w_ij|^2 / (2 sigma^2))
/// Weights start at 1/(g*h). The linear constant starts at 0 so a fresh
/// linear layer is exactly average pooling.
class LearnablePool2D : public Layer {
public:
    LearnablePool2D(const PoolOptions& opts, KernelKind kernel, PoolSharing sharing, std::size_t in_h,
                    std::size_t in_w);

    std::string kind() const override { return "learnablepool2d"; }
    std::string describe() const override;
    Shape output_shape(const Shape& input) const override;
    Tensor forward(const Tensor& x, Mode mode) override;
    Tensor backward(const Tensor& grad_out) override;
    std::vector<Parameter*> parameters() override;

    const KernelKind& kernel() const { return kernel_; }
    PoolSharing sharing() const { return sharing_; }
    const PoolOptions& options() const { return opts_; }
    Parameter& weight() { return weight_; }
    Parameter& constant() { return constant_; }
    bool has_constant() const { return !is_rbf(kernel_); }

private:
    PoolOptions opts_;
    KernelKind kernel_;
    PoolSharing sharing_;
    std::size_t in_h_, in_w_, out_h_, out_w_;
    Parameter weight_;    // [out_h, out_w, g, h] or [1, 1, g, h]
    Parameter constant_;  // [1], linear and polynomial
    Tensor input_;
    Tensor response_;
};

/// Fully-connected layer whose neurons evaluate a kernel between the input
/// row and their weight row. Linear kernel: ordinary dense layer.
class KernelizedDense : public Layer {
public:
    KernelizedDense(std::size_t in_units, std::size_t out_units, KernelKind kernel, Rng& rng);

    std::string kind() const override { return "kernelized_dense"; }
    std::string describe() const override;
    Shape output_shape(const Shape& input) const override;
    Tensor forward(const Tensor& x, Mode mode) override;
    Tensor backward(const Tensor& grad_out) override;
    std::vector<Parameter*> parameters() override;

    const KernelKind& kernel() const { return kernel_; }
    std::size_t in_units() const { return in_units_; }
    std::size_t out_units() const { return out_units_; }
    Parameter& weight() { return weight_; }
    Parameter& bias() { return bias_; }
    Parameter& constant() { return constant_; }
    bool has_bias() const { return !is_rbf(kernel_); }

private:
    std::size_t in_units_, out_units_;
    KernelKind kernel_;
    Parameter weight_;  // [out, in]
    Parameter bias_;    // [out]
    Parameter constant_;
    Tensor input_;
    Tensor response_;
};

std::unique_ptr<KernelizedDense> make_dense(std::size_t in_units, std::size_t out_units, Rng& rng);

struct BatchNormOptions {
    double eps = 1e-5;
    /// running = momentum * running + (1 - momentum) * batch
    double momentum = 0.9;
};

/// Per-channel batch normalization over (N, H, W) for NCHW input, or over N
/// for [N, C] input. Eval mode uses the running statistics.
class BatchNorm2D : public Layer {
public:
    BatchNorm2D(std::size_t channels, const BatchNormOptions& opts = {});

    std::string kind() const override { return "batchnorm2d"; }
    Shape output_shape(const Shape& input) const override;
    Tensor forward(const Tensor& x, Mode mode) override;
    Tensor backward(const Tensor& grad_out) override;
    std::vector<Parameter*> parameters() override;
    std::vector<Buffer> buffers() override;

    Parameter& gamma() { return gamma_; }
    Parameter& beta() { return beta_; }
    const Tensor& running_mean() const { return running_mean_; }
    const Tensor& running_var() const { return running_var_; }

private:
    std::size_t channels_;
    BatchNormOptions opts_;
    Parameter gamma_, beta_;
    Tensor running_mean_, running_var_;
    Shape input_shape_;
    Tensor normalized_;            // x_hat
    std::vector<double> inv_std_;  // per channel
};

/// Inverted dropout; identity in eval mode. Masks come from the layer's own stream.
class Dropout : public Layer {
public:
    Dropout(double rate, std::uint64_t seed);

    std::string kind() const override { return "dropout"; }
    std::string describe() const override;
    Shape output_shape(const Shape& input) const override { return input; }
    Tensor forward(const Tensor& x, Mode mode) override;
    Tensor backward(const Tensor& grad_out) override;

    double rate() const { return rate_; }

private:
    double rate_;
    Rng rng_;
    Tensor mask_;
    bool active_ = false;
    bool ready_ = false;
};

class ReLU : public Layer {
public:
    std::string kind() const override { return "relu"; }
    Shape output_shape(const Shape& input) const override { return input; }
    Tensor forward(const Tensor& x, Mode mode) override;
    Tensor backward(const Tensor& grad_out) override;

private:
    Tensor input_;
};

class Flatten : public Layer {
public:
    std::string kind() const override { return "flatten"; }
    Shape output_shape(const Shape& input) const override;
    Tensor forward(const Tensor& x, Mode mode) override;
    Tensor backward(const Tensor& grad_out) override;

private:
    Shape input_shape_;
};

/// Row-wise softmax of [N, K] logits with max subtraction.
Tensor softmax_forward(const Tensor& logits);

} // namespace kl

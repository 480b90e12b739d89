#include <algorithm>
#include <cmath>
#include <sstream>

#include "kernelayers/error.hpp"
#include "kernelayers/layers.hpp"

namespace kl {

namespace {

// View of an [N, C, ...] tensor as N x C x spatial.
struct ChannelLayout {
    std::size_t batch, channels, spatial;
};

ChannelLayout channel_layout(const Shape& s) {
    if (s.size() == 2) return {s[0], s[1], 1};
    if (s.size() == 4) return {s[0], s[1], s[2] * s[3]};
    throw ShapeError("batchnorm expects [N,C] or [N,C,H,W], got " + shape_str(s));
}

} // namespace

BatchNorm2D::BatchNorm2D(std::size_t channels, const BatchNormOptions& opts)
    : channels_(channels),
      opts_(opts),
      gamma_("gamma", Tensor::ones({channels})),
      beta_("beta", Tensor::zeros({channels})),
      running_mean_(Tensor::zeros({channels})),
      running_var_(Tensor::ones({channels})) {
    if (!(opts_.eps > 0.0)) throw BuildError("batchnorm eps must be > 0");
    if (!(opts_.momentum >= 0.0 && opts_.momentum < 1.0)) throw BuildError("batchnorm momentum must be in [0,1)");
}

Shape BatchNorm2D::output_shape(const Shape& input) const {
    const ChannelLayout l = channel_layout(input);
    if (l.channels != channels_) {
        throw ShapeError("batchnorm built for " + std::to_string(channels_) + " channels, got " + shape_str(input));
    }
    return input;
}

Tensor BatchNorm2D::forward(const Tensor& x, Mode mode) {
    output_shape(x.shape());
    const ChannelLayout l = channel_layout(x.shape());
    Tensor out(x.shape());

    if (mode == Mode::eval) {
        normalized_ = Tensor();
        input_shape_.clear();
        for (std::size_t c = 0; c < channels_; ++c) {
            const double inv = 1.0 / std::sqrt(running_var_[c] + opts_.eps);
            const double g = gamma_.value[c], b = beta_.value[c], mu = running_mean_[c];
            for (std::size_t n = 0; n < l.batch; ++n) {
                const std::size_t base = (n * channels_ + c) * l.spatial;
                for (std::size_t s = 0; s < l.spatial; ++s) out[base + s] = g * (x[base + s] - mu) * inv + b;
            }
        }
        return out;
    }

    if (l.batch < 2) throw StateError("batchnorm: training mode needs a batch of at least 2 samples");
    const double count = static_cast<double>(l.batch * l.spatial);
    normalized_ = Tensor(x.shape());
    inv_std_.assign(channels_, 0.0);
    for (std::size_t c = 0; c < channels_; ++c) {
        double mu = 0.0;
        for (std::size_t n = 0; n < l.batch; ++n) {
            const std::size_t base = (n * channels_ + c) * l.spatial;
            for (std::size_t s = 0; s < l.spatial; ++s) mu += x[base + s];
        }
        mu /= count;
        double var = 0.0;
        for (std::size_t n = 0; n < l.batch; ++n) {
            const std::size_t base = (n * channels_ + c) * l.spatial;
            for (std::size_t s = 0; s < l.spatial; ++s) {
                const double d = x[base + s] - mu;
                var += d * d;
            }
        }
        var /= count;
        const double inv = 1.0 / std::sqrt(var + opts_.eps);
        inv_std_[c] = inv;
        const double g = gamma_.value[c], b = beta_.value[c];
        for (std::size_t n = 0; n < l.batch; ++n) {
            const std::size_t base = (n * channels_ + c) * l.spatial;
            for (std::size_t s = 0; s < l.spatial; ++s) {
                const double xh = (x[base + s] - mu) * inv;
                normalized_[base + s] = xh;
                out[base + s] = g * xh + b;
            }
        }
        const double m = opts_.momentum;
        running_mean_[c] = m * running_mean_[c] + (1.0 - m) * mu;
        running_var_[c] = m * running_var_[c] + (1.0 - m) * var * count / (count - 1.0);
    }
    input_shape_ = x.shape();
    return out;
}

Tensor BatchNorm2D::backward(const Tensor& grad_out) {
    if (normalized_.empty()) throw StateError("batchnorm: backward called without a training-mode forward");
    require_same_shape(grad_out, normalized_, "batchnorm backward");
    const ChannelLayout l = channel_layout(input_shape_);
    const double count = static_cast<double>(l.batch * l.spatial);
    Tensor dx(input_shape_);
    for (std::size_t c = 0; c < channels_; ++c) {
        double sum_dy = 0.0, sum_dy_xh = 0.0;
        for (std::size_t n = 0; n < l.batch; ++n) {
            const std::size_t base = (n * channels_ + c) * l.spatial;
            for (std::size_t s = 0; s < l.spatial; ++s) {
                sum_dy += grad_out[base + s];
                sum_dy_xh += grad_out[base + s] * normalized_[base + s];
            }
        }
        gamma_.grad[c] += sum_dy_xh;
        beta_.grad[c] += sum_dy;
        const double k = gamma_.value[c] * inv_std_[c] / count;
        for (std::size_t n = 0; n < l.batch; ++n) {
            const std::size_t base = (n * channels_ + c) * l.spatial;
            for (std::size_t s = 0; s < l.spatial; ++s) {
                dx[base + s] = k * (count * grad_out[base + s] - sum_dy - normalized_[base + s] * sum_dy_xh);
            }
        }
    }
    return dx;
}

std::vector<Parameter*> BatchNorm2D::parameters() { return {&gamma_, &beta_}; }

std::vector<Buffer> BatchNorm2D::buffers() {
    return {{"running_mean", &running_mean_}, {"running_var", &running_var_}};
}

Dropout::Dropout(double rate, std::uint64_t seed) : rate_(rate), rng_(seed) {
    if (!(rate >= 0.0 && rate < 1.0)) throw BuildError("dropout rate must be in [0,1)");
}

std::string Dropout::describe() const {
    std::ostringstream os;
    os << "dropout(" << rate_ << ")";
    return os.str();
}

Tensor Dropout::forward(const Tensor& x, Mode mode) {
    if (mode == Mode::eval || rate_ == 0.0) {
        ready_ = mode == Mode::train;
        active_ = false;
        mask_ = Tensor();
        return x;
    }
    const double keep_scale = 1.0 / (1.0 - rate_);
    mask_ = Tensor(x.shape());
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
        mask_[i] = rng_.uniform() >= rate_ ? keep_scale : 0.0;
        out[i] = x[i] * mask_[i];
    }
    active_ = true;
    ready_ = true;
    return out;
}

Tensor Dropout::backward(const Tensor& grad_out) {
    if (!ready_) throw StateError("dropout: backward called without a training-mode forward");
    if (!active_) return grad_out;
    return mul(grad_out, mask_);
}

Tensor ReLU::forward(const Tensor& x, Mode mode) {
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
    input_ = mode == Mode::train ? x : Tensor();
    return out;
}

Tensor ReLU::backward(const Tensor& grad_out) {
    if (input_.empty()) throw StateError("relu: backward called without a training-mode forward");
    require_same_shape(grad_out, input_, "relu backward");
    Tensor dx(input_.shape());
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = input_[i] > 0.0 ? grad_out[i] : 0.0;
    return dx;
}

Shape Flatten::output_shape(const Shape& input) const {
    if (input.size() < 2) throw ShapeError("flatten expects a batch axis plus features, got " + shape_str(input));
    std::size_t features = 1;
    for (std::size_t i = 1; i < input.size(); ++i) features *= input[i];
    return {input[0], features};
}

Tensor Flatten::forward(const Tensor& x, Mode mode) {
    Shape os = output_shape(x.shape());
    if (mode == Mode::train) input_shape_ = x.shape();
    else input_shape_.clear();
    return x.reshape(std::move(os));
}

Tensor Flatten::backward(const Tensor& grad_out) {
    if (input_shape_.empty()) throw StateError("flatten: backward called without a training-mode forward");
    return grad_out.reshape(input_shape_);
}

Tensor softmax_forward(const Tensor& logits) {
    if (logits.rank() != 2) throw ShapeError("softmax expects [N,K], got " + shape_str(logits.shape()));
    const std::size_t rows = logits.dim(0), k = logits.dim(1);
    Tensor out(logits.shape());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* in = logits.ptr() + r * k;
        double* dst = out.ptr() + r * k;
        const double m = *std::max_element(in, in + k);
        double z = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            dst[j] = std::exp(in[j] - m);
            z += dst[j];
        }
        for (std::size_t j = 0; j < k; ++j) dst[j] /= z;
    }
    return out;
}

} // namespace kl

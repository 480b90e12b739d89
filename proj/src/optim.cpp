#include "kernelayers/optim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "kernelayers/error.hpp"

namespace kl {

LossResult cross_entropy(const Tensor& logits, std::span<const std::int32_t> labels) {
    if (logits.rank() != 2) throw ShapeError("cross_entropy expects [N,K] logits, got " + shape_str(logits.shape()));
    const std::size_t rows = logits.dim(0), k = logits.dim(1);
    if (labels.size() != rows) {
        throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for " + std::to_string(rows) +
                         " rows");
    }
    for (std::size_t r = 0; r < rows; ++r) {
        if (labels[r] < 0 || static_cast<std::size_t>(labels[r]) >= k) {
            throw LabelError("label " + std::to_string(labels[r]) + " at row " + std::to_string(r) +
                             " outside [0," + std::to_string(k) + ")");
        }
    }

    LossResult result;
    result.grad = Tensor(logits.shape());
    const double inv_rows = 1.0 / static_cast<double>(rows);
    double total = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
        const double* z = logits.ptr() + r * k;
        double* g = result.grad.ptr() + r * k;
        const double m = *std::max_element(z, z + k);
        double denom = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            g[j] = std::exp(z[j] - m);
            denom += g[j];
        }
        const double log_denom = std::log(denom);
        total += -(z[labels[r]] - m - log_denom);
        for (std::size_t j = 0; j < k; ++j) g[j] = g[j] / denom * inv_rows;
        g[labels[r]] -= inv_rows;
    }
    result.loss = total * inv_rows;
    return result;
}

Adam::Adam(std::vector<Parameter*> params, const AdamOptions& opts) : opts_(opts), params_(std::move(params)) {
    for (Parameter* p : params_) {
        first_moment_.push_back(Tensor::zeros(p->value.shape()));
        second_moment_.push_back(Tensor::zeros(p->value.shape()));
    }
}

void Adam::step() {
    for (Parameter* p : params_) {
        require_same_shape(p->value, p->grad, "adam");
        if (!all_finite(p->grad)) throw DivergenceError("non-finite gradient in parameter " + p->name);
    }
    ++steps_;
    const double t = static_cast<double>(steps_);
    const double bias1 = 1.0 - std::pow(opts_.beta1, t);
    const double bias2 = 1.0 - std::pow(opts_.beta2, t);
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Parameter& p = *params_[i];
        double* value = p.value.ptr();
        const double* grad = p.grad.ptr();
        double* m = first_moment_[i].ptr();
        double* v = second_moment_[i].ptr();
        for (std::size_t j = 0; j < p.value.size(); ++j) {
            m[j] = opts_.beta1 * m[j] + (1.0 - opts_.beta1) * grad[j];
            v[j] = opts_.beta2 * v[j] + (1.0 - opts_.beta2) * grad[j] * grad[j];
            const double m_hat = m[j] / bias1;
            const double v_hat = v[j] / bias2;
            value[j] -= opts_.lr * m_hat / (std::sqrt(v_hat) + opts_.eps);
            if (p.nonnegative && value[j] < 0.0) value[j] = 0.0;
        }
    }
}

PlateauScheduler::PlateauScheduler(double initial_lr, const PlateauOptions& opts)
    : opts_(opts), lr_(initial_lr), best_(-std::numeric_limits<double>::infinity()) {}

double PlateauScheduler::epoch_end(double metric) {
    if (metric > best_ + opts_.threshold) {
        best_ = metric;
        bad_epochs_ = 0;
    } else {
        ++bad_epochs_;
    }
    if (bad_epochs_ >= opts_.patience) {
        lr_ = std::max(lr_ * opts_.factor, std::min(lr_, opts_.min_lr));
        bad_epochs_ = 0;
    }
    return lr_;
}

} // namespace kl

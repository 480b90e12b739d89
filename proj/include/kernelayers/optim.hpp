#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "kernelayers/layers.hpp"

namespace kl {

struct LossResult {
    double loss = 0.0;
    Tensor grad;  // d loss / d logits
};

/// Mean softmax cross-entropy over the batch, max-subtracted.
/// Gradient is (softmax - onehot) / N. Throws LabelError for labels outside [0, K).
LossResult cross_entropy(const Tensor& logits, std::span<const std::int32_t> labels);

struct AdamOptions {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Bias-corrected Adam. Parameters flagged nonnegative are clamped at 0 after
/// each step.
class Adam {
public:
    Adam(std::vector<Parameter*> params, const AdamOptions& opts = {});

    /// Applies one update from the accumulated gradients. Throws
    /// DivergenceError, leaving every parameter untouched, if any gradient
    /// is non-finite.
    void step();

    double lr() const { return opts_.lr; }
    void set_lr(double lr) { opts_.lr = lr; }
    std::uint64_t steps() const { return steps_; }
    const AdamOptions& options() const { return opts_; }

private:
    AdamOptions opts_;
    std::vector<Parameter*> params_;
    std::vector<Tensor> first_moment_;
    std::vector<Tensor> second_moment_;
    std::uint64_t steps_ = 0;
};

struct PlateauOptions {
    double factor = 0.5;
    int patience = 2;
    double min_lr = 1e-6;
    /// An epoch improves only if the metric beats the best by more than this.
    double threshold = 1e-12;
};

/// Reduce-on-plateau for a maximized metric (validation accuracy).
///
/// After `patience` consecutive epochs without improvement the rate is
/// multiplied by `factor` (never below `min_lr`) and the counter restarts.
class PlateauScheduler {
public:
    PlateauScheduler(double initial_lr, const PlateauOptions& opts = {});

    /// Records one epoch's metric and returns the learning rate for the next epoch.
    double epoch_end(double metric);

    double lr() const { return lr_; }
    double best() const { return best_; }
    int bad_epochs() const { return bad_epochs_; }

private:
    PlateauOptions opts_;
    double lr_;
    double best_;
    int bad_epochs_ = 0;
};

} // namespace kl

#pragma once

#include <string>
#include <utility>
#include <vector>

#include "kernelayers/layers.hpp"

namespace kl {

/// A named tensor inside a network, e.g. "3.weight" or "1.running_mean".
struct NamedTensor {
    std::string name;
    Tensor* value;
};

/// Ordered layer stack.
class Network {
public:
    void add(LayerPtr layer);

    std::size_t size() const { return layers_.size(); }
    Layer& layer(std::size_t i) { return *layers_.at(i); }
    const Layer& layer(std::size_t i) const { return *layers_.at(i); }

    /// Runs every layer. In training mode each intermediate activation is
    /// checked against the guard; a non-finite value or a magnitude above it
    /// throws DivergenceError naming the layer. A guard of 0 disables the check.
    Tensor forward(const Tensor& x, Mode mode);
    Tensor backward(const Tensor& grad_out);

    Shape output_shape(const Shape& input) const;

    std::vector<Parameter*> parameters();
    std::size_t parameter_count();
    void zero_grad();

    /// Parameters followed by buffers, in layer order. Names are "<layer index>.<name>".
    std::vector<NamedTensor> state();

    void set_activation_guard(double threshold) { guard_ = threshold; }
    double activation_guard() const { return guard_; }

    /// One line per layer.
    std::string summary() const;

private:
    std::vector<LayerPtr> layers_;
    double guard_ = 0.0;
};

} // namespace kl

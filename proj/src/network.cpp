#include "kernelayers/network.hpp"

#include <cmath>
#include <sstream>

#include "kernelayers/error.hpp"

namespace kl {

void Network::add(LayerPtr layer) { layers_.push_back(std::move(layer)); }

Tensor Network::forward(const Tensor& x, Mode mode) {
    Tensor h = x;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        h = layers_[i]->forward(h, mode);
        if (mode == Mode::train && guard_ > 0.0) {
            for (double v : h.data()) {
                if (!std::isfinite(v) || std::abs(v) > guard_) {
                    std::ostringstream os;
                    os << "activation " << v << " after layer " << i << " (" << layers_[i]->describe()
                       << ") exceeds guard " << guard_;
                    throw DivergenceError(os.str());
                }
            }
        }
    }
    return h;
}

Tensor Network::backward(const Tensor& grad_out) {
    Tensor g = grad_out;
    for (std::size_t i = layers_.size(); i-- > 0;) g = layers_[i]->backward(g);
    return g;
}

Shape Network::output_shape(const Shape& input) const {
    Shape s = input;
    for (const auto& layer : layers_) s = layer->output_shape(s);
    return s;
}

std::vector<Parameter*> Network::parameters() {
    std::vector<Parameter*> params;
    for (auto& layer : layers_)
        for (Parameter* p : layer->parameters()) params.push_back(p);
    return params;
}

std::size_t Network::parameter_count() {
    std::size_t n = 0;
    for (Parameter* p : parameters()) n += p->value.size();
    return n;
}

void Network::zero_grad() {
    for (auto& layer : layers_) layer->zero_grad();
}

std::vector<NamedTensor> Network::state() {
    std::vector<NamedTensor> out;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        for (Parameter* p : layers_[i]->parameters()) out.push_back({std::to_string(i) + "." + p->name, &p->value});
        for (Buffer b : layers_[i]->buffers()) out.push_back({std::to_string(i) + "." + b.name, b.value});
    }
    return out;
}

std::string Network::summary() const {
    std::ostringstream os;
    for (std::size_t i = 0; i < layers_.size(); ++i) os << i << ": " << layers_[i]->describe() << '\n';
    return os.str();
}

} // namespace kl

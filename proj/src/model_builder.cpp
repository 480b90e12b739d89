#include <string>

#include "kernelayers/config.hpp"
#include "kernelayers/error.hpp"

namespace kl {

namespace {

KernelKind kernel_of(KernelType type, const ModelConfig& c) {
    switch (type) {
    case KernelType::linear: return LinearKernel{};
    case KernelType::poly: return PolynomialKernel{c.poly_order, c.poly_mode, c.c_init};
    case KernelType::rbf: return RbfKernel{c.sigma};
    }
    return LinearKernel{};
}

bool placed(Placement p, std::size_t block, std::size_t blocks) {
    switch (p) {
    case Placement::none: return false;
    case Placement::first: return block == 0;
    case Placement::last: return block + 1 == blocks;
    case Placement::all: return true;
    }
    return false;
}

} // namespace

KernelKind ModelConfig::layer_kernel() const { return kernel_of(kernel, *this); }

KernelKind ModelConfig::dense_kernel() const { return kernel_of(dense_kind, *this); }

bool ModelConfig::kervolution_at(std::size_t block) const {
    return placed(conv_placement, block, block_count());
}

bool ModelConfig::learnable_pool_at(std::size_t block) const {
    return placed(pool_placement, block, block_count());
}

Network build_model(const ModelConfig& c, std::uint64_t seed) {
    if (c.input_shape.size() != 3) throw BuildError("input shape must be CxHxW");
    if (c.conv_filters.size() != c.block_count()) {
        throw BuildError(std::to_string(c.conv_filters.size()) + " filter counts for " +
                         std::to_string(c.block_count()) + " blocks");
    }
    try {
        validate_kernel(c.layer_kernel());
        validate_kernel(c.dense_kernel());
    } catch (const Error& e) {
        throw BuildError(e.what());
    }

    Network net;
    Rng rng(seed);
    std::uint64_t dropout_stream = 1000;
    auto dropout = [&](double rate) { return std::make_unique<Dropout>(rate, Rng::derive(seed, dropout_stream++).next_u64()); };

    Shape shape{1, c.input_shape[0], c.input_shape[1], c.input_shape[2]};
    auto push = [&](LayerPtr layer) {
        try {
            shape = layer->output_shape(shape);
        } catch (const Error& e) {
            throw BuildError("layer " + std::to_string(net.size()) + " (" + layer->describe() + "): " + e.what());
        }
        net.add(std::move(layer));
    };

    for (std::size_t b = 0; b < c.block_count(); ++b) {
        Conv2DOptions conv{shape[1], c.conv_filters[b], c.kernel_size, c.kernel_size, c.conv_stride, c.conv_padding};
        push(std::make_unique<Kervolution2D>(conv, c.kervolution_at(b) ? c.layer_kernel() : KernelKind{LinearKernel{}},
                                             rng));
        push(std::make_unique<BatchNorm2D>(shape[1], BatchNormOptions{c.bn_eps, c.bn_momentum}));
        push(dropout(c.dropout_block));
        push(std::make_unique<ReLU>());

        const PoolOptions pool{c.pool_size, c.pool_size, c.pool_stride};
        if (shape[2] < c.pool_size || shape[3] < c.pool_size) {
            throw BuildError("block " + std::to_string(b) + ": " + std::to_string(shape[2]) + "x" +
                             std::to_string(shape[3]) + " feature map is smaller than the pooling window");
        }
        if (c.learnable_pool_at(b))
            push(std::make_unique<LearnablePool2D>(pool, c.layer_kernel(), c.pool_sharing, shape[2], shape[3]));
        else if (c.baseline_pool == BaselinePool::max)
            push(std::make_unique<MaxPool2D>(pool));
        else
            push(std::make_unique<AvgPool2D>(pool));
    }

    push(std::make_unique<Flatten>());
    push(std::make_unique<KernelizedDense>(shape[1], c.dense_units, c.dense_kernel(), rng));
    if (c.dense_kind == KernelType::linear) push(std::make_unique<ReLU>());
    push(dropout(c.dropout_dense));
    push(make_dense(shape[1], c.class_count, rng));
    return net;
}

} // namespace kl

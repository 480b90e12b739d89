#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "kernelayers/kernel.hpp"
#include "kernelayers/layers.hpp"
#include "kernelayers/network.hpp"

namespace kl {

enum class Architecture { model1, model2 };

/// Which blocks receive the kernelized variant of a layer.
enum class Placement { none, first, last, all };

enum class BaselinePool { max, avg };

enum class KernelType { linear, poly, rbf };

enum class DatasetId { mnist, fashion_mnist, cifar10 };

struct ModelConfig {
    Architecture architecture = Architecture::model1;
    Placement conv_placement = Placement::none;
    Placement pool_placement = Placement::none;
    BaselinePool baseline_pool = BaselinePool::max;
    KernelType kernel = KernelType::linear;
    KernelType dense_kind = KernelType::linear;
    int poly_order = 2;
    double c_init = 1.0;
    double sigma = 0.9;
    PolyMode poly_mode = PolyMode::elementwise;
    PoolSharing pool_sharing = PoolSharing::per_location;

    std::size_t class_count = 10;
    Shape input_shape{1, 28, 28};  // C, H, W
    std::vector<std::size_t> conv_filters{32, 64};
    std::size_t dense_units = 320;
    std::size_t kernel_size = 3;
    std::size_t conv_stride = 1;
    std::size_t conv_padding = 1;
    std::size_t pool_size = 2;
    std::size_t pool_stride = 2;
    double dropout_block = 0.25;
    double dropout_dense = 0.5;
    double bn_eps = 1e-5;
    double bn_momentum = 0.9;

    std::size_t block_count() const { return architecture == Architecture::model1 ? 2 : 5; }
    KernelKind layer_kernel() const;
    KernelKind dense_kernel() const;
    bool kervolution_at(std::size_t block) const;
    bool learnable_pool_at(std::size_t block) const;
};

struct RunConfig {
    DatasetId dataset = DatasetId::mnist;
    std::string data_root;  // empty: KERNELAYERS_DATA
    std::uint64_t seed = 1;
    int epochs = 10;
    std::size_t batch_size = 64;
    std::size_t eval_batch_size = 256;
    double lr = 1e-3;
    int patience = 2;
    double lr_factor = 0.5;
    double min_lr = 1e-6;
    double val_fraction = 0.1;
    double divergence_threshold = 1e6;
    double convergence_threshold = 0.97;
    std::string output_dir = "runs/default";
    bool record_wall_time = false;
    std::size_t train_limit = 0;  // 0: full split
    std::size_t test_limit = 0;
};

/// Outcome fields written into a resolved-config snapshot.
struct RunStatus {
    bool diverged = false;
    int completed_epochs = 0;
};

struct ExperimentConfig {
    ModelConfig model;
    RunConfig run;
    RunStatus status;
};

/// Flat sectioned key/value text:
///
///   # comment
///   [model]
///   architecture = model1
///   conv = kerv-first
///
/// Sections are [model], [train], [data] and, in snapshots, [status].
/// Unknown sections or keys, repeated keys and invalid values are ParseErrors
/// carrying the line number.
class ConfigSource {
public:
    static ConfigSource parse(std::string_view text);

    /// Sets "section.key" to value, validating the key name. Used for CLI
    /// flags and sweep overrides.
    void set(const std::string& dotted_key, const std::string& value);

    /// Applies an assignment of the form "section.key=value".
    void apply_override(std::string_view assignment);

    /// Fills dependent defaults (epochs, patience, filter counts, input
    /// shape) and validates every value.
    ExperimentConfig resolve() const;

    bool has(const std::string& dotted_key) const { return entries_.count(dotted_key) > 0; }

private:
    struct Entry {
        std::string value;
        int line = 0;
    };
    std::map<std::string, Entry> entries_;
};

ExperimentConfig parse_config(std::string_view text);

/// Serializes every key with its resolved value; parse_config(to_text(c)) == c.
std::string to_text(const ExperimentConfig& config);

/// Human-readable schema: every key with its default and allowed values.
std::string schema_text();

std::string to_string(Architecture a);
std::string to_string(Placement p, bool pool);
std::string to_string(KernelType k);
std::string to_string(DatasetId d);

/// Input shape and class count of a dataset.
Shape dataset_input_shape(DatasetId d);
std::size_t dataset_class_count(DatasetId d);

/// Compiles the layer stack. Throws BuildError if the stack cannot process
/// the configured input shape.
Network build_model(const ModelConfig& config, std::uint64_t seed);

} // namespace kl

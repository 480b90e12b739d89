#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "kernelayers/config.hpp"
#include "kernelayers/data.hpp"
#include "kernelayers/network.hpp"

namespace kl {

struct EpochMetrics {
    int epoch = 0;  // 1-based
    double train_loss = 0.0;
    double train_acc = 0.0;
    double val_loss = 0.0;
    double val_acc = 0.0;
    double lr = 0.0;  // rate used during the epoch
    double seconds = 0.0;
};

struct EvalResult {
    double loss = 0.0;
    double accuracy = 0.0;
    std::size_t count = 0;
};

struct TrainResult {
    std::vector<EpochMetrics> epochs;
    bool diverged = false;
    std::string divergence_reason;
    std::optional<EvalResult> test;  // absent after divergence
    std::size_t param_count = 0;
    int epochs_to_threshold = -1;  // first epoch with val_acc >= threshold, -1 if never
};

/// Eval-mode pass over a dataset in order, in batches of batch_size.
EvalResult evaluate(Network& net, const Dataset& ds, std::size_t batch_size);

/// Header and row formatting of metrics.csv (6-decimal fixed).
std::string metrics_header();
std::string metrics_row(const EpochMetrics& m);

/// Full training run writing into out_dir:
///   metrics.csv       one row per completed epoch, flushed as it is written
///   timing.csv        measured wall seconds per epoch
///   config.resolved   resolved configuration with a [status] section
///   model.ckpt        final checkpoint (not written after divergence)
///   summary.json      test accuracy, parameter count, convergence epoch
/// Progress lines go to log when non-null.
TrainResult train(const ExperimentConfig& config, const DatasetFiles& data, const std::filesystem::path& out_dir,
                  std::ostream* log = nullptr);

/// Applies train_limit/test_limit and the validation carve-out.
struct PreparedData {
    Dataset train, val, test;
};
PreparedData prepare_data(const ExperimentConfig& config, const DatasetFiles& data);

/// Binary checkpoint container, little-endian:
///   "KLCKPT\0\0"  8-byte magic
///   u32           format version (1)
///   u64, bytes    resolved config text
///   u64           tensor count
///   per tensor:   u32 name length, name, u32 rank, u64 dims[rank], f64 data
void save_checkpoint(const std::filesystem::path& path, const ExperimentConfig& config, Network& net);

struct LoadedModel {
    ExperimentConfig config;
    Network net;
};

/// Rebuilds the network from the embedded config and restores every tensor.
/// Throws CheckpointError on a malformed file or any name/shape mismatch.
LoadedModel load_checkpoint(const std::filesystem::path& path);

/// Throws CheckpointError if the model cannot consume images of this shape.
void require_compatible(const ModelConfig& model, const Shape& image_shape);

/// One run of a sweep grid. Grid files hold one run per line:
///   <run id> <config path | -> [section.key=value ...]
/// '#' starts a comment; config paths are relative to the grid file.
struct SweepEntry {
    std::string id;
    std::string config_path;  // empty: defaults only
    std::vector<std::string> overrides;
};

std::vector<SweepEntry> parse_grid(std::string_view text);

struct SweepRow {
    std::string id;
    std::string kernel;     // e.g. "poly-3", "rbf", "linear"
    std::string placement;  // e.g. "conv=kerv-all pool=max dense=linear"
    std::optional<double> test_acc;
    int epochs_to_threshold = -1;
    bool diverged = false;
    std::string error;  // non-empty when the run failed
};

struct SweepOptions {
    std::filesystem::path grid_dir;  // base for relative config paths
    std::filesystem::path out_dir;
    std::vector<std::string> extra_overrides;  // applied to every run after its own
    unsigned jobs = 1;
    std::ostream* log = nullptr;
};

/// Runs every entry; a failing run is recorded and the sweep continues.
/// Writes summary.csv and summary.md into out_dir. Throws std::invalid_argument
/// for an empty grid, duplicate run ids, or (with jobs > 1) repeated seeds.
std::vector<SweepRow> run_sweep(const std::vector<SweepEntry>& grid, const SweepOptions& opts);

std::string sweep_csv(const std::vector<SweepRow>& rows);
std::string sweep_markdown(const std::vector<SweepRow>& rows);

/// Short kernel label of the kernelized layers of a model ("linear" if none).
std::string kernel_label(const ModelConfig& m);
std::string placement_label(const ModelConfig& m);

} // namespace kl

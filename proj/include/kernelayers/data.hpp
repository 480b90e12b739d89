#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "kernelayers/config.hpp"
#include "kernelayers/tensor.hpp"

namespace kl {

/// Images in [0,1] as [N, C, H, W] with one label per image.
struct Dataset {
    Tensor images;
    std::vector<std::int32_t> labels;
    std::size_t class_count = 10;

    std::size_t size() const { return labels.size(); }
    Shape image_shape() const { return {images.dim(1), images.dim(2), images.dim(3)}; }

    /// Copies the listed rows, in the given order.
    Dataset subset(const std::vector<std::size_t>& indices) const;
    /// First n rows (all rows if n is 0 or exceeds the size).
    Dataset head(std::size_t n) const;
};

/// Reads an IDX image file (magic 0x00000803) and label file (0x00000801).
/// Throws FormatError naming the byte offset of the problem.
Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path);

/// Reads CIFAR-10 binary batches: records of 1 label byte and 3072 plane-major pixels.
Dataset load_cifar10(const std::vector<std::filesystem::path>& batch_files);

struct Split {
    Dataset train;
    Dataset val;
};

/// Seeded shuffle, then the last round(N * val_fraction) shuffled rows become
/// validation. Throws std::invalid_argument if either side would be empty.
Split split_train_val(const Dataset& ds, double val_fraction, std::uint64_t seed);

/// Index sets of split_train_val, exposed for partition checks.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(std::size_t n, double val_fraction,
                                                                            std::uint64_t seed);

/// Reproducible per-epoch mini-batch order.
///
/// Epoch e permutes all indices with a stream derived from (seed, e). A
/// trailing batch of a single row is merged into the previous one, since
/// batch normalization cannot train on it.
class BatchIterator {
public:
    BatchIterator(std::size_t count, std::size_t batch_size, std::uint64_t seed);

    std::vector<std::vector<std::size_t>> epoch(std::size_t e) const;
    std::size_t batches_per_epoch() const;

private:
    std::size_t count_, batch_size_;
    std::uint64_t seed_;
};

/// Gathers rows into a contiguous batch tensor and label vector.
std::pair<Tensor, std::vector<std::int32_t>> gather(const Dataset& ds, const std::vector<std::size_t>& indices);

struct DatasetFiles {
    Dataset train;
    Dataset test;
};

/// Loads the official train/test splits under root:
///   mnist/            train-images-idx3-ubyte, train-labels-idx1-ubyte, t10k-*
///   fashion-mnist/    same names
///   cifar-10-batches-bin/  data_batch_1..5.bin, test_batch.bin
DatasetFiles load_dataset(DatasetId id, const std::filesystem::path& root);

/// root if non-empty, else $KERNELAYERS_DATA, else "data".
std::filesystem::path resolve_data_root(const std::string& root);

} // namespace kl

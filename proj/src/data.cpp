#include "kernelayers/data.hpp"

#include <cmath>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "kernelayers/error.hpp"
#include "kernelayers/rng.hpp"

namespace kl {

namespace {

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return bytes;
}

std::uint32_t read_be32(const std::vector<unsigned char>& b, std::size_t offset, const std::filesystem::path& path) {
    if (offset + 4 > b.size()) {
        throw FormatError(path.string() + ": truncated header at offset " + std::to_string(offset) + " (file is " +
                          std::to_string(b.size()) + " bytes)");
    }
    return (std::uint32_t(b[offset]) << 24) | (std::uint32_t(b[offset + 1]) << 16) |
           (std::uint32_t(b[offset + 2]) << 8) | std::uint32_t(b[offset + 3]);
}

std::string hex32(std::uint32_t v) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "0x%08x", v);
    return buf;
}

void shuffle(std::vector<std::size_t>& v, Rng& rng) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
}

} // namespace

Dataset Dataset::subset(const std::vector<std::size_t>& indices) const {
    auto [images_out, labels_out] = gather(*this, indices);
    return Dataset{std::move(images_out), std::move(labels_out), class_count};
}

Dataset Dataset::head(std::size_t n) const {
    if (n == 0 || n >= size()) return *this;
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    return subset(idx);
}

Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path) {
    const auto img = read_file(images_path);
    const auto lab = read_file(labels_path);

    const std::uint32_t img_magic = read_be32(img, 0, images_path);
    if (img_magic != 0x00000803)
        throw FormatError(images_path.string() + ": bad magic " + hex32(img_magic) + " at offset 0, expected 0x00000803");
    const std::uint32_t lab_magic = read_be32(lab, 0, labels_path);
    if (lab_magic != 0x00000801)
        throw FormatError(labels_path.string() + ": bad magic " + hex32(lab_magic) + " at offset 0, expected 0x00000801");

    const std::size_t count = read_be32(img, 4, images_path);
    const std::size_t rows = read_be32(img, 8, images_path);
    const std::size_t cols = read_be32(img, 12, images_path);
    const std::size_t label_count = read_be32(lab, 4, labels_path);
    if (count != label_count) {
        throw FormatError("count mismatch: " + images_path.string() + " declares " + std::to_string(count) +
                          " images at offset 4, " + labels_path.string() + " declares " + std::to_string(label_count) +
                          " labels at offset 4");
    }
    if (count == 0 || rows == 0 || cols == 0) throw FormatError(images_path.string() + ": empty dimension at offset 4");

    const std::size_t pixels = rows * cols;
    const std::size_t img_need = 16 + count * pixels;
    if (img.size() < img_need) {
        throw FormatError(images_path.string() + ": truncated at offset " + std::to_string(img.size()) + ", expected " +
                          std::to_string(img_need) + " bytes");
    }
    if (lab.size() < 8 + count) {
        throw FormatError(labels_path.string() + ": truncated at offset " + std::to_string(lab.size()) + ", expected " +
                          std::to_string(8 + count) + " bytes");
    }

    Dataset ds;
    ds.images = Tensor({count, 1, rows, cols});
    double* out = ds.images.ptr();
    for (std::size_t i = 0; i < count * pixels; ++i) out[i] = img[16 + i] / 255.0;
    ds.labels.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
        ds.labels[i] = lab[8 + i];
        if (ds.labels[i] >= static_cast<std::int32_t>(ds.class_count)) {
            throw FormatError(labels_path.string() + ": label " + std::to_string(ds.labels[i]) + " at offset " +
                              std::to_string(8 + i) + " outside [0,10)");
        }
    }
    return ds;
}

Dataset load_cifar10(const std::vector<std::filesystem::path>& batch_files) {
    constexpr std::size_t kPixels = 3 * 32 * 32;
    constexpr std::size_t kRecord = 1 + kPixels;
    if (batch_files.empty()) throw FormatError("no CIFAR-10 batch files given");

    std::vector<std::vector<unsigned char>> files;
    std::size_t total = 0;
    for (const auto& path : batch_files) {
        files.push_back(read_file(path));
        const auto& b = files.back();
        if (b.empty() || b.size() % kRecord != 0) {
            throw FormatError(path.string() + ": length " + std::to_string(b.size()) + " is not a multiple of " +
                              std::to_string(kRecord) + "; last whole record ends at offset " +
                              std::to_string(b.size() / kRecord * kRecord));
        }
        total += b.size() / kRecord;
    }

    Dataset ds;
    ds.images = Tensor({total, 3, 32, 32});
    ds.labels.resize(total);
    std::size_t row = 0;
    for (std::size_t f = 0; f < files.size(); ++f) {
        const auto& b = files[f];
        for (std::size_t off = 0; off < b.size(); off += kRecord, ++row) {
            if (b[off] >= 10) {
                throw FormatError(batch_files[f].string() + ": label " + std::to_string(b[off]) + " at offset " +
                                  std::to_string(off) + " outside [0,10)");
            }
            ds.labels[row] = b[off];
            double* out = ds.images.ptr() + row * kPixels;
            for (std::size_t i = 0; i < kPixels; ++i) out[i] = b[off + 1 + i] / 255.0;
        }
    }
    return ds;
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(std::size_t n, double val_fraction,
                                                                            std::uint64_t seed) {
    if (!(val_fraction > 0.0 && val_fraction < 1.0))
        throw std::invalid_argument("val_fraction must be in (0,1), got " + std::to_string(val_fraction));
    const auto val_count = static_cast<std::size_t>(std::llround(static_cast<double>(n) * val_fraction));
    if (val_count == 0 || val_count >= n) {
        throw std::invalid_argument("val_fraction " + std::to_string(val_fraction) + " of " + std::to_string(n) +
                                    " rows leaves an empty split");
    }
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng = Rng::derive(seed, 0x5eed5b17);
    shuffle(idx, rng);
    std::vector<std::size_t> train(idx.begin(), idx.end() - static_cast<std::ptrdiff_t>(val_count));
    std::vector<std::size_t> val(idx.end() - static_cast<std::ptrdiff_t>(val_count), idx.end());
    return {std::move(train), std::move(val)};
}

Split split_train_val(const Dataset& ds, double val_fraction, std::uint64_t seed) {
    auto [train, val] = split_indices(ds.size(), val_fraction, seed);
    return Split{ds.subset(train), ds.subset(val)};
}

BatchIterator::BatchIterator(std::size_t count, std::size_t batch_size, std::uint64_t seed)
    : count_(count), batch_size_(batch_size), seed_(seed) {
    if (batch_size == 0) throw std::invalid_argument("batch size must be positive");
}

std::size_t BatchIterator::batches_per_epoch() const {
    std::size_t n = (count_ + batch_size_ - 1) / batch_size_;
    if (n > 1 && count_ % batch_size_ == 1) --n;
    return n;
}

std::vector<std::vector<std::size_t>> BatchIterator::epoch(std::size_t e) const {
    std::vector<std::size_t> order(count_);
    std::iota(order.begin(), order.end(), 0);
    Rng rng = Rng::derive(seed_, 0xba7c0000ULL + e);
    shuffle(order, rng);

    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t start = 0; start < count_; start += batch_size_) {
        const std::size_t end = std::min(start + batch_size_, count_);
        if (end - start == 1 && !batches.empty()) {
            batches.back().push_back(order[start]);
            break;
        }
        batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                             order.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return batches;
}

std::pair<Tensor, std::vector<std::int32_t>> gather(const Dataset& ds, const std::vector<std::size_t>& indices) {
    if (indices.empty()) throw ShapeError("gather: empty index list");
    Shape shape = ds.images.shape();
    const std::size_t row = shape_numel(shape) / shape[0];
    shape[0] = indices.size();
    Tensor images(shape);
    std::vector<std::int32_t> labels(indices.size());
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] >= ds.size()) throw ShapeError("gather: index " + std::to_string(indices[i]) + " out of range");
        std::memcpy(images.ptr() + i * row, ds.images.ptr() + indices[i] * row, row * sizeof(double));
        labels[i] = ds.labels[indices[i]];
    }
    return {std::move(images), std::move(labels)};
}

DatasetFiles load_dataset(DatasetId id, const std::filesystem::path& root) {
    if (id == DatasetId::cifar10) {
        const auto dir = root / "cifar-10-batches-bin";
        std::vector<std::filesystem::path> train;
        for (int i = 1; i <= 5; ++i) train.push_back(dir / ("data_batch_" + std::to_string(i) + ".bin"));
        return {load_cifar10(train), load_cifar10({dir / "test_batch.bin"})};
    }
    const auto dir = root / (id == DatasetId::mnist ? "mnist" : "fashion-mnist");
    return {load_idx(dir / "train-images-idx3-ubyte", dir / "train-labels-idx1-ubyte"),
            load_idx(dir / "t10k-images-idx3-ubyte", dir / "t10k-labels-idx1-ubyte")};
}

std::filesystem::path resolve_data_root(const std::string& root) {
    if (!root.empty()) return root;
    if (const char* env = std::getenv("KERNELAYERS_DATA"); env && *env) return env;
    return "data";
}

} // namespace kl

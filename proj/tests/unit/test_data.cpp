#include <gtest/gtest.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>

#include "kernelayers/data.hpp"
#include "kernelayers/error.hpp"

using namespace kl;
namespace fs = std::filesystem;

namespace {

using Bytes = std::vector<unsigned char>;

void put_be32(Bytes& b, std::uint32_t v) {
    for (int s = 24; s >= 0; s -= 8) b.push_back(static_cast<unsigned char>(v >> s));
}

Bytes idx_images(std::uint32_t n, std::uint32_t rows, std::uint32_t cols, unsigned char fill) {
    Bytes b;
    put_be32(b, 0x803);
    put_be32(b, n);
    put_be32(b, rows);
    put_be32(b, cols);
    b.insert(b.end(), std::size_t{n} * rows * cols, fill);
    return b;
}

Bytes idx_labels(const std::vector<unsigned char>& labels) {
    Bytes b;
    put_be32(b, 0x801);
    put_be32(b, static_cast<std::uint32_t>(labels.size()));
    b.insert(b.end(), labels.begin(), labels.end());
    return b;
}

class TempDir : public ::testing::Test {
protected:
    void SetUp() override {
        dir_ = fs::temp_directory_path() /
               ("kl_data_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
        fs::remove_all(dir_);
        fs::create_directories(dir_);
    }
    void TearDown() override { fs::remove_all(dir_); }

    fs::path write(const std::string& name, const Bytes& bytes) {
        const fs::path p = dir_ / name;
        std::ofstream(p, std::ios::binary).write(reinterpret_cast<const char*>(bytes.data()),
                                                  static_cast<std::streamsize>(bytes.size()));
        return p;
    }

    fs::path dir_;
};

std::string format_message(const std::function<void()>& f) {
    try {
        f();
    } catch (const FormatError& e) {
        return e.what();
    }
    return {};
}

Dataset synthetic(std::size_t n) {
    Dataset d;
    d.images = Tensor::zeros({n, 1, 2, 2});
    for (std::size_t i = 0; i < n; ++i) {
        d.images[i * 4] = static_cast<double>(i);
        d.labels.push_back(static_cast<std::int32_t>(i % 10));
    }
    return d;
}

} // namespace

using IdxFiles = TempDir;
using CifarFiles = TempDir;

TEST_F(IdxFiles, ReadsPixelsAndLabels) {
    Bytes img = idx_images(2, 3, 3, 0);
    img[16] = 255;
    img[16 + 9 + 4] = 51;
    const auto ip = write("img", img);
    const auto lp = write("lbl", idx_labels({7, 2}));
    const Dataset d = load_idx(ip, lp);
    EXPECT_EQ(d.images.shape(), (Shape{2, 1, 3, 3}));
    EXPECT_EQ(d.images[0], 1.0);
    EXPECT_EQ(d.images[13], 51.0 / 255.0);
    EXPECT_EQ(d.labels, (std::vector<std::int32_t>{7, 2}));
}

TEST_F(IdxFiles, AllZeroImages) {
    const Dataset d = load_idx(write("img", idx_images(4, 28, 28, 0)), write("lbl", idx_labels({0, 1, 2, 3})));
    EXPECT_EQ(d.images.shape(), (Shape{4, 1, 28, 28}));
    for (double v : d.images.data()) EXPECT_EQ(v, 0.0);
}

TEST_F(IdxFiles, BadMagic) {
    Bytes img = idx_images(1, 2, 2, 0);
    img[2] = 0;
    img[3] = 0;
    const auto lp = write("lbl", idx_labels({1}));
    const auto ip = write("img", img);
    const std::string msg = format_message([&] { load_idx(ip, lp); });
    EXPECT_NE(msg.find("magic"), std::string::npos) << msg;
    EXPECT_NE(msg.find("offset 0"), std::string::npos) << msg;

    Bytes lbl = idx_labels({1});
    lbl[3] = 0x03;
    const auto lp2 = write("lbl2", lbl);
    const auto ip2 = write("img2", idx_images(1, 2, 2, 0));
    EXPECT_THROW(load_idx(ip2, lp2), FormatError);
}

TEST_F(IdxFiles, TruncatedPixels) {
    Bytes img = idx_images(3, 4, 4, 9);
    img.resize(img.size() - 5);
    const auto ip = write("img", img);
    const auto lp = write("lbl", idx_labels({1, 2, 3}));
    const std::string msg = format_message([&] { load_idx(ip, lp); });
    EXPECT_NE(msg.find("offset"), std::string::npos) << msg;

    const auto ip2 = write("img2", Bytes{0, 0, 8});
    EXPECT_THROW(load_idx(ip2, lp), FormatError);
}

TEST_F(IdxFiles, CountMismatch) {
    const auto ip = write("img", idx_images(3, 2, 2, 0));
    const auto lp = write("lbl", idx_labels({1, 2}));
    EXPECT_THROW(load_idx(ip, lp), FormatError);
}

TEST_F(IdxFiles, LabelOutOfRange) {
    const auto ip = write("img", idx_images(1, 2, 2, 0));
    const auto lp = write("lbl", idx_labels({10}));
    EXPECT_THROW(load_idx(ip, lp), FormatError);
}

TEST_F(IdxFiles, MissingFile) { EXPECT_THROW(load_idx(dir_ / "nope", dir_ / "nope2"), FormatError); }

TEST_F(CifarFiles, SingleRecord) {
    Bytes rec{3};
    rec.insert(rec.end(), 3072, 255);
    const Dataset d = load_cifar10({write("b.bin", rec)});
    EXPECT_EQ(d.images.shape(), (Shape{1, 3, 32, 32}));
    EXPECT_EQ(d.labels, (std::vector<std::int32_t>{3}));
    for (double v : d.images.data()) EXPECT_EQ(v, 1.0);
}

TEST_F(CifarFiles, PlaneOrder) {
    Bytes rec{0};
    rec.insert(rec.end(), 3072, 0);
    rec[1 + 1024 + 5] = 255;  // green plane, pixel (0, 5)
    const Dataset d = load_cifar10({write("a.bin", rec), write("b.bin", rec)});
    EXPECT_EQ(d.size(), 2u);
    EXPECT_EQ(d.images[1024 + 5], 1.0);
    EXPECT_EQ(d.images[3072 + 1024 + 5], 1.0);
    EXPECT_EQ(sum(d.images), 2.0);
}

TEST_F(CifarFiles, TruncatedRecord) {
    Bytes rec{1};
    rec.insert(rec.end(), 3000, 7);
    const auto p = write("t.bin", rec);
    EXPECT_THROW(load_cifar10({p}), FormatError);
}

TEST(Split, NinetyTen) {
    const auto [train, val] = split_indices(100, 0.1, 4);
    EXPECT_EQ(train.size(), 90u);
    EXPECT_EQ(val.size(), 10u);
}

TEST(Split, PartitionProperty) {
    for (std::uint64_t seed : {1, 2, 3}) {
        const auto [train, val] = split_indices(257, 0.2, seed);
        std::set<std::size_t> all(train.begin(), train.end());
        for (std::size_t v : val) EXPECT_TRUE(all.insert(v).second) << "index in both sides";
        EXPECT_EQ(all.size(), 257u);
        EXPECT_EQ(*all.rbegin(), 256u);
    }
}

TEST(Split, Deterministic) {
    EXPECT_EQ(split_indices(500, 0.1, 9), split_indices(500, 0.1, 9));
    EXPECT_NE(split_indices(500, 0.1, 9), split_indices(500, 0.1, 10));
    const Split a = split_train_val(synthetic(50), 0.1, 3);
    const Split b = split_train_val(synthetic(50), 0.1, 3);
    EXPECT_EQ(a.val.labels, b.val.labels);
    EXPECT_TRUE(std::ranges::equal(a.train.images.data(), b.train.images.data()));
}

TEST(Split, DegenerateFractions) {
    EXPECT_THROW(split_indices(100, 0.0, 1), std::invalid_argument);
    EXPECT_THROW(split_indices(100, 1.0, 1), std::invalid_argument);
    EXPECT_THROW(split_indices(100, -0.5, 1), std::invalid_argument);
    EXPECT_THROW(split_indices(5, 0.01, 1), std::invalid_argument);
}

TEST(Batches, EveryIndexOncePerEpoch) {
    const BatchIterator it(103, 10, 5);
    for (std::size_t e = 0; e < 3; ++e) {
        std::vector<int> seen(103, 0);
        for (const auto& batch : it.epoch(e)) {
            EXPECT_GE(batch.size(), 2u);
            for (std::size_t i : batch) ++seen[i];
        }
        for (int s : seen) EXPECT_EQ(s, 1);
    }
}

TEST(Batches, SingletonTailIsMerged) {
    const BatchIterator it(21, 10, 5);
    const auto batches = it.epoch(0);
    ASSERT_EQ(batches.size(), 2u);
    EXPECT_EQ(batches.back().size(), 11u);
    EXPECT_EQ(it.batches_per_epoch(), 2u);
}

TEST(Batches, OrderReproducibleAndVaries) {
    const BatchIterator a(64, 8, 11), b(64, 8, 11);
    EXPECT_EQ(a.epoch(2), b.epoch(2));
    EXPECT_NE(a.epoch(2), a.epoch(3));
}

TEST(Batches, GatherCopiesRows) {
    const Dataset d = synthetic(6);
    const auto [x, y] = gather(d, {4, 1});
    EXPECT_EQ(x.shape(), (Shape{2, 1, 2, 2}));
    EXPECT_EQ(x[0], 4.0);
    EXPECT_EQ(x[4], 1.0);
    EXPECT_EQ(y, (std::vector<std::int32_t>{4, 1}));
}

TEST(RealMnist, TrainSplitHeader) {
    const char* env = std::getenv("KERNELAYERS_DATA");
    const fs::path root = env && *env ? fs::path(env) : fs::path(KL_DATA_ROOT);
    const fs::path dir = root / "mnist";
    if (!fs::exists(dir / "train-images-idx3-ubyte")) GTEST_SKIP() << "MNIST not found under " << root;
    const Dataset a = load_idx(dir / "train-images-idx3-ubyte", dir / "train-labels-idx1-ubyte");
    EXPECT_EQ(a.size(), 60000u);
    EXPECT_EQ(a.labels[0], 5);
    EXPECT_EQ(a.images.shape(), (Shape{60000, 1, 28, 28}));
    double lo = 1.0, hi = 0.0;
    for (double v : a.images.data()) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    EXPECT_EQ(lo, 0.0);
    EXPECT_EQ(hi, 1.0);
    const Dataset b = load_idx(dir / "train-images-idx3-ubyte", dir / "train-labels-idx1-ubyte");
    EXPECT_TRUE(std::ranges::equal(a.images.data(), b.images.data()));
    EXPECT_EQ(a.labels, b.labels);
}

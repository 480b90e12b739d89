#include "kernelayers/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <Eigen/Core>

#include "kernelayers/error.hpp"

namespace kl {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
using MutMap = Eigen::Map<RowMatrix>;

void validate_shape(const Shape& shape) {
    if (shape.empty()) throw ShapeError("tensor shape must have at least one dimension");
    for (std::size_t d : shape) {
        if (d == 0) throw ShapeError("tensor dimension of size 0 in " + shape_str(shape));
    }
}

template <typename F>
Tensor map_unary(const Tensor& a, F f) {
    Tensor out(a.shape());
    const double* src = a.ptr();
    double* dst = out.ptr();
    for (std::size_t i = 0; i < a.size(); ++i) dst[i] = f(src[i]);
    return out;
}

template <typename F>
Tensor map_binary(const Tensor& a, const Tensor& b, const char* op, F f) {
    require_same_shape(a, b, op);
    Tensor out(a.shape());
    const double* x = a.ptr();
    const double* y = b.ptr();
    double* dst = out.ptr();
    for (std::size_t i = 0; i < a.size(); ++i) dst[i] = f(x[i], y[i]);
    return out;
}

void require_rank(const Tensor& a, std::size_t rank, const char* op) {
    if (a.rank() != rank) {
        throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_str(a.shape()));
    }
}

} // namespace

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return shape.empty() ? 0 : n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
    validate_shape(shape_);
    data_.assign(shape_numel(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    validate_shape(shape_);
    if (data_.size() != shape_numel(shape_)) {
        throw ShapeError("buffer of " + std::to_string(data_.size()) + " elements does not match shape " +
                         shape_str(shape_));
    }
}

Tensor Tensor::from(std::initializer_list<double> values) {
    return Tensor({values.size()}, std::vector<double>(values));
}

std::size_t Tensor::dim(std::size_t axis) const {
    if (axis >= shape_.size()) throw ShapeError("axis out of range for shape " + shape_str(shape_));
    return shape_[axis];
}

Tensor Tensor::reshape(Shape shape) const& {
    Tensor copy = *this;
    return std::move(copy).reshape(std::move(shape));
}

Tensor Tensor::reshape(Shape shape) && {
    validate_shape(shape);
    if (shape_numel(shape) != data_.size()) {
        throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    }
    Tensor out;
    out.shape_ = std::move(shape);
    out.data_ = std::move(data_);
    shape_.clear();
    return out;
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

Tensor& Tensor::operator+=(const Tensor& other) {
    require_same_shape(*this, other, "+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
    return *this;
}

Tensor& Tensor::operator-=(const Tensor& other) {
    require_same_shape(*this, other, "-=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
    return *this;
}

Tensor& Tensor::operator*=(double scalar) {
    for (double& v : data_) v *= scalar;
    return *this;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
}

Tensor add(const Tensor& a, const Tensor& b) {
    return map_binary(a, b, "add", [](double x, double y) { return x + y; });
}
Tensor sub(const Tensor& a, const Tensor& b) {
    return map_binary(a, b, "sub", [](double x, double y) { return x - y; });
}
Tensor mul(const Tensor& a, const Tensor& b) {
    return map_binary(a, b, "mul", [](double x, double y) { return x * y; });
}
Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }

Tensor scale(const Tensor& a, double s) {
    return map_unary(a, [s](double x) { return x * s; });
}
Tensor add_scalar(const Tensor& a, double s) {
    return map_unary(a, [s](double x) { return x + s; });
}
Tensor pow(const Tensor& a, int exponent) {
    return map_unary(a, [exponent](double x) { return std::pow(x, exponent); });
}
Tensor exp(const Tensor& a) {
    return map_unary(a, [](double x) { return std::exp(x); });
}

Tensor add_rowwise(const Tensor& a, const Tensor& row) {
    require_rank(a, 2, "add_rowwise");
    if (row.size() != a.dim(1)) {
        throw ShapeError("add_rowwise: row of " + std::to_string(row.size()) + " does not match " +
                         shape_str(a.shape()));
    }
    Tensor out = a;
    const std::size_t cols = a.dim(1);
    for (std::size_t i = 0; i < a.dim(0); ++i)
        for (std::size_t j = 0; j < cols; ++j) out[i * cols + j] += row[j];
    return out;
}

double sum(const Tensor& a) {
    double s = 0.0;
    for (double v : a.data()) s += v;
    return s;
}

double dot(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "dot");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double max_abs(const Tensor& a) {
    double m = 0.0;
    for (double v : a.data()) m = std::max(m, std::abs(v));
    return m;
}

bool all_finite(const Tensor& a) {
    return std::all_of(a.data().begin(), a.data().end(), [](double v) { return std::isfinite(v); });
}

Tensor sum(const Tensor& a, std::size_t axis) {
    if (axis >= a.rank()) throw ShapeError("sum: axis out of range for " + shape_str(a.shape()));
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= a.dim(i);
    for (std::size_t i = axis + 1; i < a.rank(); ++i) inner *= a.dim(i);
    const std::size_t len = a.dim(axis);

    Shape out_shape;
    for (std::size_t i = 0; i < a.rank(); ++i)
        if (i != axis) out_shape.push_back(a.dim(i));
    if (out_shape.empty()) out_shape.push_back(1);

    Tensor out(out_shape);
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t k = 0; k < len; ++k)
            for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += a[(o * len + k) * inner + i];
    return out;
}

Tensor mean(const Tensor& a, std::size_t axis) {
    Tensor s = sum(a, axis);
    s *= 1.0 / static_cast<double>(a.dim(axis));
    return s;
}

Tensor transpose(const Tensor& a) {
    require_rank(a, 2, "transpose");
    const std::size_t rows = a.dim(0), cols = a.dim(1);
    Tensor out({cols, rows});
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j) out[j * rows + i] = a[i * cols + j];
    return out;
}

std::vector<std::size_t> argmax_last(const Tensor& a) {
    const std::size_t k = a.shape().back();
    const std::size_t rows = a.size() / k;
    std::vector<std::size_t> idx(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = a.ptr() + r * k;
        std::size_t best = 0;
        for (std::size_t j = 1; j < k; ++j)
            if (row[j] > row[best]) best = j;
        idx[r] = best;
    }
    return idx;
}

Tensor matmul(const Tensor& a, const Tensor& b) { return gemm(a, false, b, false); }

Tensor gemm(const Tensor& a, bool transpose_a, const Tensor& b, bool transpose_b) {
    require_rank(a, 2, "gemm");
    require_rank(b, 2, "gemm");
    const std::size_t m = transpose_a ? a.dim(1) : a.dim(0);
    const std::size_t n = transpose_b ? b.dim(0) : b.dim(1);
    Tensor out({m, n});
    gemm_into(out, 1.0, a, transpose_a, b, transpose_b, 0.0);
    return out;
}

void gemm_into(Tensor& out, double alpha, const Tensor& a, bool transpose_a, const Tensor& b, bool transpose_b,
               double beta) {
    require_rank(a, 2, "gemm");
    require_rank(b, 2, "gemm");
    const std::size_t m = transpose_a ? a.dim(1) : a.dim(0);
    const std::size_t ka = transpose_a ? a.dim(0) : a.dim(1);
    const std::size_t kb = transpose_b ? b.dim(1) : b.dim(0);
    const std::size_t n = transpose_b ? b.dim(0) : b.dim(1);
    if (ka != kb) {
        throw ShapeError("matmul: inner dimensions differ: " + shape_str(a.shape()) +
                         (transpose_a ? "^T" : "") + " x " + shape_str(b.shape()) + (transpose_b ? "^T" : ""));
    }
    if (out.shape() != Shape{m, n}) {
        throw ShapeError("gemm: output " + shape_str(out.shape()) + " does not match " + shape_str({m, n}));
    }

    ConstMap ma(a.ptr(), static_cast<Eigen::Index>(a.dim(0)), static_cast<Eigen::Index>(a.dim(1)));
    ConstMap mb(b.ptr(), static_cast<Eigen::Index>(b.dim(0)), static_cast<Eigen::Index>(b.dim(1)));
    MutMap mc(out.ptr(), static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
    if (beta == 0.0) mc.setZero();
    else if (beta != 1.0) mc *= beta;
    if (!transpose_a && !transpose_b) mc.noalias() += alpha * ma * mb;
    else if (!transpose_a && transpose_b) mc.noalias() += alpha * ma * mb.transpose();
    else if (transpose_a && !transpose_b) mc.noalias() += alpha * ma.transpose() * mb;
    else mc.noalias() += alpha * ma.transpose() * mb.transpose();
}

std::size_t ConvGeometry::out_h() const { return (in_h + 2 * padding - kernel_h) / stride + 1; }
std::size_t ConvGeometry::out_w() const { return (in_w + 2 * padding - kernel_w) / stride + 1; }

void ConvGeometry::validate() const {
    if (kernel_h == 0 || kernel_w == 0 || stride == 0) throw ShapeError("kernel size and stride must be >= 1");
    if (kernel_h > in_h + 2 * padding || kernel_w > in_w + 2 * padding) {
        throw ShapeError("window " + std::to_string(kernel_h) + "x" + std::to_string(kernel_w) +
                         " exceeds padded input " + std::to_string(in_h + 2 * padding) + "x" +
                         std::to_string(in_w + 2 * padding));
    }
}

Tensor im2col(const Tensor& x, std::size_t kernel_h, std::size_t kernel_w, std::size_t stride,
              std::size_t padding) {
    require_rank(x, 4, "im2col");
    const std::size_t batch = x.dim(0), channels = x.dim(1);
    const ConvGeometry g{x.dim(2), x.dim(3), kernel_h, kernel_w, stride, padding};
    g.validate();
    const std::size_t oh = g.out_h(), ow = g.out_w();
    const std::size_t patch = channels * kernel_h * kernel_w;

    Tensor cols({batch, oh * ow, patch});
    double* dst = cols.ptr();
    for (std::size_t n = 0; n < batch; ++n) {
        for (std::size_t i = 0; i < oh; ++i) {
            for (std::size_t j = 0; j < ow; ++j) {
                for (std::size_t c = 0; c < channels; ++c) {
                    const double* plane = x.ptr() + (n * channels + c) * g.in_h * g.in_w;
                    for (std::size_t ki = 0; ki < kernel_h; ++ki) {
                        const std::ptrdiff_t r = static_cast<std::ptrdiff_t>(i * stride + ki) -
                                                 static_cast<std::ptrdiff_t>(padding);
                        for (std::size_t kj = 0; kj < kernel_w; ++kj) {
                            const std::ptrdiff_t s = static_cast<std::ptrdiff_t>(j * stride + kj) -
                                                     static_cast<std::ptrdiff_t>(padding);
                            const bool inside = r >= 0 && s >= 0 && r < static_cast<std::ptrdiff_t>(g.in_h) &&
                                                s < static_cast<std::ptrdiff_t>(g.in_w);
                            *dst++ = inside ? plane[r * static_cast<std::ptrdiff_t>(g.in_w) + s] : 0.0;
                        }
                    }
                }
            }
        }
    }
    return cols;
}

Tensor col2im(const Tensor& cols, const Shape& input_shape, std::size_t kernel_h, std::size_t kernel_w,
              std::size_t stride, std::size_t padding) {
    if (input_shape.size() != 4) throw ShapeError("col2im: input shape must be NCHW");
    const std::size_t batch = input_shape[0], channels = input_shape[1];
    const ConvGeometry g{input_shape[2], input_shape[3], kernel_h, kernel_w, stride, padding};
    g.validate();
    const std::size_t oh = g.out_h(), ow = g.out_w();
    const Shape expected{batch, oh * ow, channels * kernel_h * kernel_w};
    if (cols.shape() != expected) {
        throw ShapeError("col2im: columns " + shape_str(cols.shape()) + " do not match " + shape_str(expected));
    }

    Tensor x(input_shape);
    const double* src = cols.ptr();
    for (std::size_t n = 0; n < batch; ++n) {
        for (std::size_t i = 0; i < oh; ++i) {
            for (std::size_t j = 0; j < ow; ++j) {
                for (std::size_t c = 0; c < channels; ++c) {
                    double* plane = x.ptr() + (n * channels + c) * g.in_h * g.in_w;
                    for (std::size_t ki = 0; ki < kernel_h; ++ki) {
                        const std::ptrdiff_t r = static_cast<std::ptrdiff_t>(i * stride + ki) -
                                                 static_cast<std::ptrdiff_t>(padding);
                        for (std::size_t kj = 0; kj < kernel_w; ++kj, ++src) {
                            const std::ptrdiff_t s = static_cast<std::ptrdiff_t>(j * stride + kj) -
                                                     static_cast<std::ptrdiff_t>(padding);
                            if (r >= 0 && s >= 0 && r < static_cast<std::ptrdiff_t>(g.in_h) &&
                                s < static_cast<std::ptrdiff_t>(g.in_w)) {
                                plane[r * static_cast<std::ptrdiff_t>(g.in_w) + s] += *src;
                            }
                        }
                    }
                }
            }
        }
    }
    return x;
}

Tensor init_he(Rng& rng, Shape shape, std::size_t fan_in) {
    if (fan_in == 0) throw ShapeError("init_he: fan_in must be >= 1");
    return random_normal(rng, std::move(shape), 0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
}

Tensor random_uniform(Rng& rng, Shape shape, double lo, double hi) {
    Tensor t(std::move(shape));
    for (double& v : t.data()) v = rng.uniform(lo, hi);
    return t;
}

Tensor random_normal(Rng& rng, Shape shape, double mean, double stddev) {
    Tensor t(std::move(shape));
    for (double& v : t.data()) v = mean + stddev * rng.normal();
    return t;
}

} // namespace kl

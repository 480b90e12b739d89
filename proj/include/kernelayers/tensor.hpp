#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "kernelayers/rng.hpp"

namespace kl {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense row-major array of doubles.
///
/// A default-constructed tensor is "null": rank 0 and no storage. Every other
/// tensor has at least one dimension and all dimensions are >= 1.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> data);

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }
    static Tensor ones(Shape shape) { return Tensor(std::move(shape), 1.0); }
    static Tensor full(Shape shape, double value) { return Tensor(std::move(shape), value); }
    static Tensor from(std::initializer_list<double> values);

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t axis) const;
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }
    double* ptr() noexcept { return data_.data(); }
    const double* ptr() const noexcept { return data_.data(); }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    double& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
    double at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
    double& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
        return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
    }
    double at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
        return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
    }

    /// Same buffer, new shape. Element count must match.
    Tensor reshape(Shape shape) const&;
    Tensor reshape(Shape shape) &&;

    void fill(double value);

    Tensor& operator+=(const Tensor& other);
    Tensor& operator-=(const Tensor& other);
    Tensor& operator*=(double scalar);

private:
    Shape shape_;
    std::vector<double> data_;
};

void require_same_shape(const Tensor& a, const Tensor& b, const char* op);

// Elementwise arithmetic. Shapes must agree exactly.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor operator+(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor pow(const Tensor& a, int exponent);
Tensor exp(const Tensor& a);

/// Adds a row vector [k] to every row of a [m, k] (leading-axis broadcast).
Tensor add_rowwise(const Tensor& a, const Tensor& row);

double sum(const Tensor& a);
double dot(const Tensor& a, const Tensor& b);
double max_abs(const Tensor& a);
bool all_finite(const Tensor& a);

/// Reductions over one axis; the axis is removed from the result shape
/// (a rank-1 input reduces to shape [1]).
Tensor sum(const Tensor& a, std::size_t axis);
Tensor mean(const Tensor& a, std::size_t axis);

/// 2-D transpose.
Tensor transpose(const Tensor& a);

/// Index of the maximum along the last axis; ties resolve to the first index.
std::vector<std::size_t> argmax_last(const Tensor& a);

Tensor matmul(const Tensor& a, const Tensor& b);

/// General product op(a) * op(b) where op transposes when the flag is set.
Tensor gemm(const Tensor& a, bool transpose_a, const Tensor& b, bool transpose_b);

/// out = beta * out + alpha * op(a) * op(b). `out` must already have the result shape.
void gemm_into(Tensor& out, double alpha, const Tensor& a, bool transpose_a, const Tensor& b, bool transpose_b,
               double beta = 1.0);

struct ConvGeometry {
    std::size_t in_h, in_w, kernel_h, kernel_w, stride, padding;

    std::size_t out_h() const;
    std::size_t out_w() const;
    /// Throws ShapeError when no output position fits.
    void validate() const;
};

/// Sliding patches of an NCHW tensor as rows: [N, out_h*out_w, C*kh*kw].
/// Column order is (channel, row, col); padded positions read as 0.
Tensor im2col(const Tensor& x, std::size_t kernel_h, std::size_t kernel_w, std::size_t stride,
              std::size_t padding);

/// Adjoint of im2col: scatters patch rows back into an NCHW tensor, summing overlaps.
Tensor col2im(const Tensor& cols, const Shape& input_shape, std::size_t kernel_h, std::size_t kernel_w,
              std::size_t stride, std::size_t padding);

/// He-normal initialization: N(0, 2 / fan_in).
Tensor init_he(Rng& rng, Shape shape, std::size_t fan_in);
Tensor random_uniform(Rng& rng, Shape shape, double lo, double hi);
Tensor random_normal(Rng& rng, Shape shape, double mean = 0.0, double stddev = 1.0);

} // namespace kl

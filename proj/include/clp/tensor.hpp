#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace clp {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

/// Dense row-major float32 array with an explicit shape.
///
/// Every dimension is positive and `size() == product(shape())`. A
/// default-constructed tensor is empty (rank 0, no elements) and is only a
/// placeholder; no kernel accepts it.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f);
  Tensor(Shape shape, std::vector<float> data);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t i) const;
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<float> data() noexcept { return data_; }
  std::span<const float> data() const noexcept { return data_; }
  const std::vector<float>& values() const noexcept { return data_; }

  float& operator[](std::size_t i) noexcept { return data_[i]; }
  float operator[](std::size_t i) const noexcept { return data_[i]; }

  // NCHW / KCHW element access, bounds-checked. Throws DimensionError unless
  // the tensor has rank 4.
  float& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w);
  float at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const;

  Tensor reshaped(Shape shape) const;
  void fill(float v);

  // Copy of rows [begin, end) along the leading axis.
  Tensor slice_batch(std::size_t begin, std::size_t end) const;

  bool all_finite() const noexcept;

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  std::size_t offset(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const;

  Shape shape_;
  std::vector<float> data_;
};

/// Row-major float32 matrix.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, float fill = 0.0f);
  Matrix(std::size_t rows, std::size_t cols, std::vector<float> data);
  Matrix(std::initializer_list<std::initializer_list<float>> rows);

  static Matrix identity(std::size_t n);
  static Matrix diagonal(std::span<const float> diag);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::span<float> data() noexcept { return data_; }
  std::span<const float> data() const noexcept { return data_; }

  float& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  float operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  Matrix transposed() const;

  friend bool operator==(const Matrix& a, const Matrix& b) {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<float> data_;
};

// c[m x n] = a[m x k] * b[k x n], all row-major. Products are accumulated in
// double and rounded once. Rows of `c` are computed independently, so the
// result does not depend on the thread count.
void gemm(std::size_t m, std::size_t k, std::size_t n, const float* a,
          const float* b, float* c);

Matrix matmul(const Matrix& a, const Matrix& b);

/// Largest singular value by Lanczos-accelerated power iteration on mᵀm
/// (Golub-Kahan bidiagonalization with full reorthogonalization).
///
/// Starts from the normalized all-ones vector and stops once two successive
/// estimates differ by less than `tol` relative, after `max_iter` steps, or
/// when the Krylov space becomes invariant (the estimate is then exact up to
/// rounding). An all-zero matrix returns exactly 0 without iterating; a matrix
/// with a NaN or infinite entry returns NaN. If the start vector is
/// annihilated by `m`, iteration restarts from the largest-norm row.
float spectral_norm(const Matrix& m, double tol = 1e-6, int max_iter = 200);

// 2-D cross-correlation. input (N,C,H,W), kernel (K,C,kh,kw), bias (K).
Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias,
              std::size_t stride, std::size_t padding);

// floor((in + 2*padding - kernel) / stride) + 1. Throws DimensionError when
// the kernel does not fit the padded input or stride is 0.
std::size_t conv_output_extent(std::size_t in, std::size_t kernel,
                               std::size_t stride, std::size_t padding);

Tensor relu(const Tensor& t);
Tensor max_pool(const Tensor& t, std::size_t window, std::size_t stride);
Tensor avg_pool(const Tensor& t, std::size_t window, std::size_t stride);

// x (N, in), weight (out, in), bias (out) -> (N, out).
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

// Unfolds one (C,H,W) sample into a (C*kh*kw) x (Ho*Wo) column matrix.
void im2col(const float* image, std::size_t channels, std::size_t height,
            std::size_t width, std::size_t kh, std::size_t kw,
            std::size_t stride, std::size_t padding, float* cols);

// Adjoint of im2col: scatters columns back into (C,H,W), accumulating.
void col2im(const float* cols, std::size_t channels, std::size_t height,
            std::size_t width, std::size_t kh, std::size_t kw,
            std::size_t stride, std::size_t padding, float* image);

}  // namespace clp

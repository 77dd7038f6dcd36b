#include "clp/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "clp/errors.hpp"
#include "clp/parallel.hpp"
#include "kernels.hpp"

namespace clp {

std::size_t shape_numel(const Shape& shape) {
  if (shape.empty()) return 0;
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ')';
  return os.str();
}

namespace {

void check_shape(const Shape& shape) {
  if (shape.empty()) throw DimensionError("tensor shape must have at least one dimension");
  for (auto d : shape) {
    if (d == 0) throw DimensionError("tensor dimensions must be positive: " + shape_to_string(shape));
  }
}

void require_rank(const Tensor& t, std::size_t rank, const char* what) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(what) + ": expected rank " + std::to_string(rank) +
                         ", got shape " + shape_to_string(t.shape()));
  }
}

}  // namespace

Tensor::Tensor(Shape shape, float fill) : shape_(std::move(shape)) {
  check_shape(shape_);
  data_.assign(shape_numel(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<float> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  check_shape(shape_);
  if (shape_numel(shape_) != data_.size()) {
    throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                         " does not match shape " + shape_to_string(shape_));
  }
}

std::size_t Tensor::dim(std::size_t i) const {
  if (i >= shape_.size()) throw IndexError("dimension index out of range");
  return shape_[i];
}

std::size_t Tensor::offset(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
  if (shape_.size() != 4) throw DimensionError("at() needs a rank-4 tensor, got " + shape_to_string(shape_));
  if (n >= shape_[0] || c >= shape_[1] || h >= shape_[2] || w >= shape_[3]) {
    throw IndexError("index out of range for " + shape_to_string(shape_));
  }
  return ((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w;
}

float& Tensor::at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) { return data_[offset(n, c, h, w)]; }

float Tensor::at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const { return data_[offset(n, c, h, w)]; }

Tensor Tensor::reshaped(Shape shape) const {
  check_shape(shape);
  if (shape_numel(shape) != data_.size()) {
    throw DimensionError("cannot reshape " + shape_to_string(shape_) + " to " +
                         shape_to_string(shape));
  }
  return Tensor(std::move(shape), data_);
}

void Tensor::fill(float v) { std::fill(data_.begin(), data_.end(), v); }

Tensor Tensor::slice_batch(std::size_t begin, std::size_t end) const {
  if (shape_.empty() || begin >= end || end > shape_[0]) {
    throw IndexError("batch slice [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") out of range for " + shape_to_string(shape_));
  }
  const std::size_t row = data_.size() / shape_[0];
  Shape s = shape_;
  s[0] = end - begin;
  return Tensor(std::move(s), std::vector<float>(data_.begin() + begin * row,
                                                 data_.begin() + end * row));
}

bool Tensor::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); });
}

Matrix::Matrix(std::size_t rows, std::size_t cols, float fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {
  if (rows == 0 || cols == 0) throw DimensionError("matrix dimensions must be positive");
}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<float> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (rows == 0 || cols == 0) throw DimensionError("matrix dimensions must be positive");
  if (data_.size() != rows * cols) throw DimensionError("matrix data length mismatch");
}

Matrix::Matrix(std::initializer_list<std::initializer_list<float>> rows) {
  rows_ = rows.size();
  cols_ = rows_ ? rows.begin()->size() : 0;
  if (rows_ == 0 || cols_ == 0) throw DimensionError("matrix dimensions must be positive");
  data_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    if (r.size() != cols_) throw DimensionError("ragged matrix literal");
    data_.insert(data_.end(), r.begin(), r.end());
  }
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0f;
  return m;
}

Matrix Matrix::diagonal(std::span<const float> diag) {
  Matrix m(diag.size(), diag.size());
  for (std::size_t i = 0; i < diag.size(); ++i) m(i, i) = diag[i];
  return m;
}

Matrix Matrix::transposed() const {
  Matrix t(cols_, rows_);
  for (std::size_t r = 0; r < rows_; ++r)
    for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
  return t;
}

namespace {

constexpr std::size_t kTileRows = 8;
constexpr std::size_t kTileCols = 8;

// Full 8x8 register tile; the compiler keeps `acc` in vector registers.
inline void gemm_tile(std::size_t k, std::size_t n, const float* a, std::size_t lda,
                      const float* b, float* c) {
  double acc[kTileRows][kTileCols] = {};
  for (std::size_t p = 0; p < k; ++p) {
    const float* brow = b + p * n;
    double bv[kTileCols];
    for (std::size_t j = 0; j < kTileCols; ++j) bv[j] = brow[j];
    for (std::size_t r = 0; r < kTileRows; ++r) {
      const double av = a[r * lda + p];
      for (std::size_t j = 0; j < kTileCols; ++j) acc[r][j] += av * bv[j];
    }
  }
  for (std::size_t r = 0; r < kTileRows; ++r)
    for (std::size_t j = 0; j < kTileCols; ++j) c[r * n + j] = static_cast<float>(acc[r][j]);
}

// Ragged edge: pads the block to a full tile so every output element goes
// through the exact same arithmetic as in gemm_tile.
void gemm_edge(std::size_t rows, std::size_t cols, std::size_t k, std::size_t n,
               const float* a, std::size_t lda, const float* b, float* c) {
  std::vector<float> pa(kTileRows * k, 0.0f);
  std::vector<float> pb(k * kTileCols, 0.0f);
  for (std::size_t r = 0; r < rows; ++r) std::copy(a + r * lda, a + r * lda + k, pa.begin() + r * k);
  for (std::size_t p = 0; p < k; ++p) std::copy(b + p * n, b + p * n + cols, pb.begin() + p * kTileCols);
  float pc[kTileRows * kTileCols];
  gemm_tile(k, kTileCols, pa.data(), k, pb.data(), pc);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < cols; ++j) c[r * n + j] = pc[r * kTileCols + j];
}

void gemm_rows(std::size_t row_begin, std::size_t row_end, std::size_t k, std::size_t n,
               const float* a, const float* b, float* c) {
  for (std::size_t j0 = 0; j0 < n; j0 += kTileCols) {
    const std::size_t cols = std::min(kTileCols, n - j0);
    for (std::size_t i0 = row_begin; i0 < row_end; i0 += kTileRows) {
      const std::size_t rows = std::min(kTileRows, row_end - i0);
      const float* ablk = a + i0 * k;
      float* cblk = c + i0 * n + j0;
      if (rows == kTileRows && cols == kTileCols) {
        gemm_tile(k, n, ablk, k, b + j0, cblk);
      } else {
        gemm_edge(rows, cols, k, n, ablk, k, b + j0, cblk);
      }
    }
  }
}

}  // namespace

void gemm(std::size_t m, std::size_t k, std::size_t n, const float* a, const float* b,
          float* c) {
  if (m == 0 || n == 0) return;
  if (k == 0) {
    std::fill(c, c + m * n, 0.0f);
    return;
  }
  // Work is split along whole row tiles; each output element sees the same
  // reduction order regardless of how tiles are assigned to workers.
  const std::size_t tiles = (m + kTileRows - 1) / kTileRows;
  if (m * n * k < (1u << 16) || thread_count() == 1) {
    gemm_rows(0, m, k, n, a, b, c);
    return;
  }
  parallel_for(tiles, [&](std::size_t t0, std::size_t t1) {
    gemm_rows(t0 * kTileRows, std::min(m, t1 * kTileRows), k, n, a, b, c);
  });
}

namespace detail {

void gemm_serial(std::size_t m, std::size_t k, std::size_t n, const float* a, const float* b,
                 float* c) {
  if (m == 0 || n == 0) return;
  if (k == 0) {
    std::fill(c, c + m * n, 0.0f);
    return;
  }
  gemm_rows(0, m, k, n, a, b, c);
}

}  // namespace detail

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                         " times " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
  }
  Matrix c(a.rows(), b.cols());
  gemm(a.rows(), a.cols(), b.cols(), a.data().data(), b.data().data(), c.data().data());
  return c;
}

namespace {

// y = m x  (rows)
void mat_vec(const Matrix& m, const std::vector<double>& x, std::vector<double>& y) {
  const std::size_t cols = m.cols();
  const float* d = m.data().data();
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const float* row = d + r * cols;
    double s = 0.0;
#pragma omp simd reduction(+ : s)
    for (std::size_t c = 0; c < cols; ++c) s += static_cast<double>(row[c]) * x[c];
    y[r] = s;
  }
}

// x = mᵀ y
void mat_t_vec(const Matrix& m, const std::vector<double>& y, std::vector<double>& x) {
  const std::size_t cols = m.cols();
  const float* d = m.data().data();
  std::fill(x.begin(), x.end(), 0.0);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const float* row = d + r * cols;
    const double yr = y[r];
    double* xp = x.data();
#pragma omp simd
    for (std::size_t c = 0; c < cols; ++c) xp[c] += yr * static_cast<double>(row[c]);
  }
}

double norm2(const std::vector<double>& v) {
  double s = 0.0;
  for (double e : v) s += e * e;
  return std::sqrt(s);
}

void axpy(double a, const std::vector<double>& x, std::vector<double>& y) {
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += a * x[i];
}

double dot(const std::vector<double>& x, const std::vector<double>& y) {
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * y[i];
  return s;
}

// Full reorthogonalization, classical Gram-Schmidt applied twice.
void orthogonalize(std::vector<double>& w, const std::vector<std::vector<double>>& basis) {
  for (int pass = 0; pass < 2; ++pass)
    for (const auto& q : basis) axpy(-dot(q, w), q, w);
}

// Largest eigenvalue of the symmetric tridiagonal matrix with diagonal `a` and
// off-diagonal `b`, by Sturm-sequence bisection.
double tridiagonal_max_eigenvalue(const std::vector<double>& a, const std::vector<double>& b) {
  const std::size_t k = a.size();
  double lo = a[0], hi = a[0];
  for (std::size_t i = 0; i < k; ++i) {
    const double r = (i > 0 ? std::abs(b[i - 1]) : 0.0) + (i + 1 < k ? std::abs(b[i]) : 0.0);
    lo = std::min(lo, a[i] - r);
    hi = std::max(hi, a[i] + r);
  }
  auto count_below = [&](double x) {
    std::size_t count = 0;
    double q = 1.0;
    for (std::size_t i = 0; i < k; ++i) {
      q = a[i] - x - (i > 0 ? b[i - 1] * b[i - 1] / q : 0.0);
      if (q == 0.0) q = -std::numeric_limits<double>::min();
      count += q < 0.0;
    }
    return count;
  };
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    (count_below(mid) == k ? hi : lo) = mid;
  }
  return hi;
}

// Largest singular value of the upper bidiagonal matrix with diagonal `alpha`
// and superdiagonal `beta`, from the eigenvalues of its Gram matrix.
double bidiagonal_max_singular(const std::vector<double>& alpha, const std::vector<double>& beta) {
  const std::size_t k = alpha.size();
  std::vector<double> diag(k), off(k > 0 ? k - 1 : 0);
  for (std::size_t j = 0; j < k; ++j) {
    diag[j] = alpha[j] * alpha[j] + (j > 0 ? beta[j - 1] * beta[j - 1] : 0.0);
    if (j + 1 < k) off[j] = alpha[j] * beta[j];
  }
  return std::sqrt(std::max(0.0, tridiagonal_max_eigenvalue(diag, off)));
}

}  // namespace

float spectral_norm(const Matrix& m, double tol, int max_iter) {
  if (m.rows() == 0 || m.cols() == 0) throw DimensionError("spectral_norm: empty matrix");
  if (!(tol > 0.0)) throw ConfigError("spectral_norm: tol must be positive");
  const auto d = m.data();
  if (!std::all_of(d.begin(), d.end(), [](float v) { return std::isfinite(v); }))
    return std::numeric_limits<float>::quiet_NaN();
  if (std::all_of(d.begin(), d.end(), [](float v) { return v == 0.0f; })) return 0.0f;

  const std::size_t cols = m.cols();
  std::vector<double> v(cols, 1.0 / std::sqrt(static_cast<double>(cols)));
  std::vector<double> u(m.rows());

  mat_vec(m, v, u);
  double alpha = norm2(u);
  if (alpha == 0.0) {
    // The all-ones start lies in the null space; the largest row is never
    // annihilated since <row, row> > 0.
    std::size_t best = 0;
    double best_norm = -1.0;
    for (std::size_t r = 0; r < m.rows(); ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < cols; ++c) s += static_cast<double>(m(r, c)) * m(r, c);
      if (s > best_norm) {
        best_norm = s;
        best = r;
      }
    }
    const double inv = 1.0 / std::sqrt(best_norm);
    for (std::size_t c = 0; c < cols; ++c) v[c] = m(best, c) * inv;
    mat_vec(m, v, u);
    alpha = norm2(u);
  }
  for (double& e : u) e /= alpha;

  // Golub-Kahan bidiagonalization: the same Krylov space as power iteration on
  // mᵀm, with the estimate taken from the bidiagonal projection.
  constexpr double kBreakdown = 1e-13;
  std::vector<std::vector<double>> vs{v}, us{u};
  std::vector<double> alphas{alpha}, betas;
  double sigma = alpha;
  std::vector<double> w(cols), z(m.rows());
  for (int it = 0; it < max_iter; ++it) {
    mat_t_vec(m, u, w);
    axpy(-alpha, v, w);
    orthogonalize(w, vs);
    const double beta = norm2(w);
    if (beta <= kBreakdown * sigma) break;  // invariant subspace: the estimate is exact
    for (double& e : w) e /= beta;
    v = w;
    vs.push_back(v);

    mat_vec(m, v, z);
    axpy(-beta, u, z);
    orthogonalize(z, us);
    alpha = norm2(z);
    betas.push_back(beta);
    alphas.push_back(alpha);
    const double next = bidiagonal_max_singular(alphas, betas);
    const double diff = std::abs(next - sigma);
    sigma = next;
    if (alpha <= kBreakdown * sigma || diff < tol * sigma) break;
    for (double& e : z) e /= alpha;
    u = z;
    us.push_back(u);
  }
  return static_cast<float>(sigma);
}

std::size_t conv_output_extent(std::size_t in, std::size_t kernel, std::size_t stride,
                               std::size_t padding) {
  if (stride == 0) throw DimensionError("stride must be positive");
  const std::size_t padded = in + 2 * padding;
  if (kernel == 0 || kernel > padded) {
    throw DimensionError("kernel extent " + std::to_string(kernel) +
                         " does not fit padded input " + std::to_string(padded));
  }
  return (padded - kernel) / stride + 1;
}

void im2col(const float* image, std::size_t channels, std::size_t height, std::size_t width,
            std::size_t kh, std::size_t kw, std::size_t stride, std::size_t padding,
            float* cols) {
  const std::size_t ho = conv_output_extent(height, kh, stride, padding);
  const std::size_t wo = conv_output_extent(width, kw, stride, padding);
  const std::size_t plane = ho * wo;
  for (std::size_t c = 0; c < channels; ++c) {
    const float* src = image + c * height * width;
    for (std::size_t i = 0; i < kh; ++i) {
      for (std::size_t j = 0; j < kw; ++j) {
        float* dst = cols + ((c * kh + i) * kw + j) * plane;
        for (std::size_t y = 0; y < ho; ++y) {
          const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y * stride + i) -
                                    static_cast<std::ptrdiff_t>(padding);
          float* drow = dst + y * wo;
          if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(height)) {
            std::fill(drow, drow + wo, 0.0f);
            continue;
          }
          const float* srow = src + static_cast<std::size_t>(sy) * width;
          for (std::size_t x = 0; x < wo; ++x) {
            const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(x * stride + j) -
                                      static_cast<std::ptrdiff_t>(padding);
            drow[x] = (sx < 0 || sx >= static_cast<std::ptrdiff_t>(width))
                          ? 0.0f
                          : srow[static_cast<std::size_t>(sx)];
          }
        }
      }
    }
  }
}

void col2im(const float* cols, std::size_t channels, std::size_t height, std::size_t width,
            std::size_t kh, std::size_t kw, std::size_t stride, std::size_t padding,
            float* image) {
  const std::size_t ho = conv_output_extent(height, kh, stride, padding);
  const std::size_t wo = conv_output_extent(width, kw, stride, padding);
  const std::size_t plane = ho * wo;
  for (std::size_t c = 0; c < channels; ++c) {
    float* dst = image + c * height * width;
    for (std::size_t i = 0; i < kh; ++i) {
      for (std::size_t j = 0; j < kw; ++j) {
        const float* src = cols + ((c * kh + i) * kw + j) * plane;
        for (std::size_t y = 0; y < ho; ++y) {
          const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y * stride + i) -
                                    static_cast<std::ptrdiff_t>(padding);
          if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(height)) continue;
          float* drow = dst + static_cast<std::size_t>(sy) * width;
          for (std::size_t x = 0; x < wo; ++x) {
            const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(x * stride + j) -
                                      static_cast<std::ptrdiff_t>(padding);
            if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(width)) continue;
            drow[static_cast<std::size_t>(sx)] += src[y * wo + x];
          }
        }
      }
    }
  }
}

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, std::size_t stride,
              std::size_t padding) {
  require_rank(input, 4, "conv2d input");
  require_rank(kernel, 4, "conv2d kernel");
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::size_t k = kernel.dim(0), kh = kernel.dim(2), kw = kernel.dim(3);
  if (kernel.dim(1) != c) {
    throw DimensionError("conv2d: input has " + std::to_string(c) + " channels, kernel expects " +
                         std::to_string(kernel.dim(1)));
  }
  if (bias.rank() != 1 || bias.dim(0) != k) {
    throw DimensionError("conv2d: bias shape " + shape_to_string(bias.shape()) +
                         " does not match " + std::to_string(k) + " output channels");
  }
  const std::size_t ho = conv_output_extent(h, kh, stride, padding);
  const std::size_t wo = conv_output_extent(w, kw, stride, padding);
  const std::size_t plane = ho * wo;
  const std::size_t ckk = c * kh * kw;

  Tensor out({n, k, ho, wo});
  // Samples are independent, so splitting the batch never changes results.
  parallel_for(n, [&](std::size_t s0, std::size_t s1) {
    std::vector<float> cols(ckk * plane);
    for (std::size_t s = s0; s < s1; ++s) {
      im2col(input.data().data() + s * c * h * w, c, h, w, kh, kw, stride, padding, cols.data());
      float* dst = out.data().data() + s * k * plane;
      detail::gemm_serial(k, ckk, plane, kernel.data().data(), cols.data(), dst);
      for (std::size_t ch = 0; ch < k; ++ch) {
        const float b = bias[ch];
        float* p = dst + ch * plane;
        for (std::size_t i = 0; i < plane; ++i) p[i] += b;
      }
    }
  });
  return out;
}

Tensor relu(const Tensor& t) {
  Tensor out = t;
  for (float& v : out.data()) v = v > 0.0f ? v : 0.0f;
  return out;
}

namespace {

template <typename Reduce>
Tensor pool(const Tensor& t, std::size_t window, std::size_t stride, const char* name,
            Reduce reduce) {
  require_rank(t, 4, name);
  if (window == 0 || stride == 0) throw DimensionError(std::string(name) + ": zero window or stride");
  const std::size_t n = t.dim(0), c = t.dim(1), h = t.dim(2), w = t.dim(3);
  const std::size_t ho = conv_output_extent(h, window, stride, 0);
  const std::size_t wo = conv_output_extent(w, window, stride, 0);
  Tensor out({n, c, ho, wo});
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const float* src = t.data().data() + (s * c + ch) * h * w;
      float* dst = out.data().data() + (s * c + ch) * ho * wo;
      for (std::size_t y = 0; y < ho; ++y)
        for (std::size_t x = 0; x < wo; ++x)
          dst[y * wo + x] = reduce(src, w, y * stride, x * stride, window);
    }
  return out;
}

}  // namespace

Tensor max_pool(const Tensor& t, std::size_t window, std::size_t stride) {
  return pool(t, window, stride, "max_pool",
              [](const float* src, std::size_t w, std::size_t y0, std::size_t x0, std::size_t win) {
                float m = src[y0 * w + x0];
                for (std::size_t i = 0; i < win; ++i)
                  for (std::size_t j = 0; j < win; ++j) m = std::max(m, src[(y0 + i) * w + x0 + j]);
                return m;
              });
}

Tensor avg_pool(const Tensor& t, std::size_t window, std::size_t stride) {
  return pool(t, window, stride, "avg_pool",
              [](const float* src, std::size_t w, std::size_t y0, std::size_t x0, std::size_t win) {
                double s = 0.0;
                for (std::size_t i = 0; i < win; ++i)
                  for (std::size_t j = 0; j < win; ++j) s += src[(y0 + i) * w + x0 + j];
                return static_cast<float>(s / static_cast<double>(win * win));
              });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_rank(x, 2, "linear input");
  require_rank(weight, 2, "linear weight");
  const std::size_t n = x.dim(0), in = x.dim(1), out = weight.dim(0);
  if (weight.dim(1) != in) {
    throw DimensionError("linear: input width " + std::to_string(in) + " vs weight " +
                         shape_to_string(weight.shape()));
  }
  if (bias.rank() != 1 || bias.dim(0) != out) {
    throw DimensionError("linear: bias shape " + shape_to_string(bias.shape()));
  }
  Tensor y({n, out});
  const float* xd = x.data().data();
  const float* wd = weight.data().data();
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t o = 0; o < out; ++o) {
      const float* wr = wd + o * in;
      const float* xr = xd + s * in;
      double acc = 0.0;
#pragma omp simd reduction(+ : acc)
      for (std::size_t i = 0; i < in; ++i) acc += static_cast<double>(wr[i]) * xr[i];
      y[s * out + o] = static_cast<float>(acc + bias[o]);
    }
  }
  return y;
}

}  // namespace clp

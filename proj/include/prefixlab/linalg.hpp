#pragma once

// Dense real linear algebra: row-major matrices, thin SVD (one-sided Jacobi),
// numerical rank, orthonormal subspaces, projectors and principal angles.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <limits>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace prefixlab {

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::string shape_str(std::size_t r, std::size_t c) {
  return std::to_string(r) + "x" + std::to_string(c);
}

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  /// Takes ownership of row-major `data`; rejects wrong length or non-finite entries.
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw ShapeError("Matrix: data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_str(rows_, cols_));
    }
    for (double v : data_) {
      if (!std::isfinite(v)) throw std::invalid_argument("Matrix: non-finite entry");
    }
  }

  Matrix(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ == 0 ? 0 : rows.begin()->size();
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
      if (r.size() != cols_) throw ShapeError("Matrix: ragged initializer");
      data_.insert(data_.end(), r.begin(), r.end());
    }
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::span<double> row(std::size_t i) { return {data_.data() + i * cols_, cols_}; }
  std::span<const double> row(std::size_t i) const { return {data_.data() + i * cols_, cols_}; }

  bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }
  bool operator==(const Matrix& o) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// ---------------------------------------------------------------------------
// Elementary operations

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: " + shape_str(a.rows(), a.cols()) + " x " +
                     shape_str(b.rows(), b.cols()));
  }
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto crow = c.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      auto brow = b.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j) crow[j] += aik * brow[j];
    }
  }
  return c;
}

inline Matrix transpose(const Matrix& a) {
  Matrix t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

inline Matrix operator+(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) {
    throw ShapeError("add: " + shape_str(a.rows(), a.cols()) + " vs " +
                     shape_str(b.rows(), b.cols()));
  }
  Matrix c = a;
  auto cd = c.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < cd.size(); ++i) cd[i] += bd[i];
  return c;
}

inline Matrix operator-(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) {
    throw ShapeError("sub: " + shape_str(a.rows(), a.cols()) + " vs " +
                     shape_str(b.rows(), b.cols()));
  }
  Matrix c = a;
  auto cd = c.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < cd.size(); ++i) cd[i] -= bd[i];
  return c;
}

inline Matrix operator*(double s, const Matrix& a) {
  Matrix c = a;
  for (double& v : c.data()) v *= s;
  return c;
}

inline double frobenius_norm(const Matrix& a) {
  double s = 0.0;
  for (double v : a.data()) s += v * v;
  return std::sqrt(s);
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) {
    throw ShapeError("max_abs_diff: " + shape_str(a.rows(), a.cols()) + " vs " +
                     shape_str(b.rows(), b.cols()));
  }
  double m = 0.0;
  auto ad = a.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < ad.size(); ++i) m = std::max(m, std::abs(ad[i] - bd[i]));
  return m;
}

inline double trace(const Matrix& a) {
  double t = 0.0;
  for (std::size_t i = 0; i < std::min(a.rows(), a.cols()); ++i) t += a(i, i);
  return t;
}

inline Matrix stack_rows(const Matrix& top, const Matrix& bottom) {
  if (top.rows() == 0) return bottom;
  if (bottom.rows() == 0) return top;
  if (top.cols() != bottom.cols()) {
    throw ShapeError("stack_rows: " + shape_str(top.rows(), top.cols()) + " over " +
                     shape_str(bottom.rows(), bottom.cols()));
  }
  Matrix out(top.rows() + bottom.rows(), top.cols());
  std::copy(top.data().begin(), top.data().end(), out.data().begin());
  std::copy(bottom.data().begin(), bottom.data().end(), out.data().begin() + top.size());
  return out;
}

/// Rows [begin, begin+count).
inline Matrix row_block(const Matrix& a, std::size_t begin, std::size_t count) {
  if (begin + count > a.rows()) throw ShapeError("row_block: out of range");
  Matrix out(count, a.cols());
  std::copy_n(a.data().begin() + begin * a.cols(), count * a.cols(), out.data().begin());
  return out;
}

/// Columns [begin, begin+count).
inline Matrix col_block(const Matrix& a, std::size_t begin, std::size_t count) {
  if (begin + count > a.cols()) throw ShapeError("col_block: out of range");
  Matrix out(a.rows(), count);
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < count; ++j) out(i, j) = a(i, begin + j);
  return out;
}

// ---------------------------------------------------------------------------
// SVD

struct SVDResult {
  Matrix U;               // m x k, orthonormal columns
  std::vector<double> S;  // k values, non-increasing
  Matrix Vt;              // k x n, orthonormal rows
};

namespace detail {

// Completes the columns of `q` flagged in `missing` to an orthonormal set by
// Gram-Schmidt against canonical basis vectors.
inline void complete_orthonormal_columns(Matrix& q, const std::vector<bool>& missing) {
  const std::size_t m = q.rows();
  std::size_t candidate = 0;
  for (std::size_t c = 0; c < q.cols(); ++c) {
    if (!missing[c]) continue;
    while (true) {
      if (candidate >= m) throw NumericalError("svd: cannot complete orthonormal basis");
      std::vector<double> v(m, 0.0);
      v[candidate++] = 1.0;
      for (int pass = 0; pass < 2; ++pass) {
        for (std::size_t o = 0; o < q.cols(); ++o) {
          if (o == c || (missing[o] && o > c)) continue;
          double dot = 0.0;
          for (std::size_t i = 0; i < m; ++i) dot += q(i, o) * v[i];
          for (std::size_t i = 0; i < m; ++i) v[i] -= dot * q(i, o);
        }
      }
      double nrm = 0.0;
      for (double x : v) nrm += x * x;
      nrm = std::sqrt(nrm);
      if (nrm > 1e-6) {
        for (std::size_t i = 0; i < m; ++i) q(i, c) = v[i] / nrm;
        break;
      }
    }
  }
}

// One-sided Jacobi on a tall matrix (rows >= cols).
inline SVDResult jacobi_svd_tall(const Matrix& a) {
  const std::size_t m = a.rows();
  const std::size_t n = a.cols();
  // Work on columns stored contiguously.
  std::vector<std::vector<double>> u(n, std::vector<double>(m));
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) u[j][i] = a(i, j);
  std::vector<std::vector<double>> v(n, std::vector<double>(n, 0.0));
  for (std::size_t j = 0; j < n; ++j) v[j][j] = 1.0;

  constexpr int kMaxSweeps = 80;
  constexpr double kTol = 1e-15;
  double frob2 = 0.0;
  for (double x : a.data()) frob2 += x * x;
  // Pairs whose inner product is below rounding noise of the whole matrix are
  // already orthogonal; without this floor, null-space columns never settle.
  const double gamma_floor = kTol * kTol * frob2;
  bool converged = (n < 2);
  for (int sweep = 0; sweep < kMaxSweeps && !converged; ++sweep) {
    bool rotated = false;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        double alpha = 0.0, beta = 0.0, gamma = 0.0;
        const auto& up = u[p];
        const auto& uq = u[q];
        for (std::size_t i = 0; i < m; ++i) {
          alpha += up[i] * up[i];
          beta += uq[i] * uq[i];
          gamma += up[i] * uq[i];
        }
        if (std::abs(gamma) <= gamma_floor || std::abs(gamma) <= kTol * std::sqrt(alpha * beta)) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        auto& upm = u[p];
        auto& uqm = u[q];
        for (std::size_t i = 0; i < m; ++i) {
          const double x = upm[i];
          const double y = uqm[i];
          upm[i] = c * x - s * y;
          uqm[i] = s * x + c * y;
        }
        auto& vp = v[p];
        auto& vq = v[q];
        for (std::size_t i = 0; i < n; ++i) {
          const double x = vp[i];
          const double y = vq[i];
          vp[i] = c * x - s * y;
          vq[i] = s * x + c * y;
        }
      }
    }
    converged = !rotated;
  }
  if (!converged) {
    throw NumericalError("svd: no convergence for " + shape_str(m, n) + " matrix");
  }

  std::vector<double> sigma(n);
  for (std::size_t j = 0; j < n; ++j) {
    double s = 0.0;
    for (double x : u[j]) s += x * x;
    sigma[j] = std::sqrt(s);
  }
  std::vector<std::size_t> order(n);
  for (std::size_t j = 0; j < n; ++j) order[j] = j;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return sigma[x] > sigma[y]; });

  SVDResult r{Matrix(m, n), std::vector<double>(n), Matrix(n, n)};
  const double smax = n == 0 ? 0.0 : sigma[order[0]];
  const double floor = smax * std::numeric_limits<double>::epsilon() * static_cast<double>(std::max(m, n));
  std::vector<bool> missing(n, false);
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t j = order[k];
    r.S[k] = sigma[j];
    for (std::size_t i = 0; i < n; ++i) r.Vt(k, i) = v[j][i];
    if (sigma[j] > floor && sigma[j] > 0.0) {
      for (std::size_t i = 0; i < m; ++i) r.U(i, k) = u[j][i] / sigma[j];
    } else {
      missing[k] = true;
    }
  }
  if (std::find(missing.begin(), missing.end(), true) != missing.end()) {
    complete_orthonormal_columns(r.U, missing);
  }
  return r;
}

}  // namespace detail

/// Thin SVD: A (m x n) = U diag(S) Vt with k = min(m, n) singular values.
inline SVDResult svd(const Matrix& a) {
  for (double x : a.data()) {
    if (!std::isfinite(x)) throw std::invalid_argument("svd: non-finite input");
  }
  if (a.rows() >= a.cols()) return detail::jacobi_svd_tall(a);
  SVDResult t = detail::jacobi_svd_tall(transpose(a));
  return SVDResult{transpose(t.Vt), std::move(t.S), transpose(t.U)};
}

inline double rank_tolerance(const Matrix& a, double sigma_max) {
  return static_cast<double>(std::max(a.rows(), a.cols())) * sigma_max * 1e-12;
}

inline std::size_t rank_from_singular_values(const Matrix& a, std::span<const double> s) {
  if (s.empty()) return 0;
  const double tol = rank_tolerance(a, s.front());
  return static_cast<std::size_t>(
      std::count_if(s.begin(), s.end(), [tol](double x) { return x > tol; }));
}

/// Number of singular values above max(rows, cols) * sigma_max * 1e-12.
inline std::size_t numerical_rank(const Matrix& a) {
  if (a.empty()) return 0;
  const SVDResult r = svd(a);
  return rank_from_singular_values(a, r.S);
}

/// Rank with the tolerance taken relative to `reference` instead of sigma_max;
/// use when `a` is a product whose entries may cancel far below its factors.
inline std::size_t numerical_rank(const Matrix& a, double reference) {
  if (a.empty()) return 0;
  const SVDResult r = svd(a);
  if (r.S.empty()) return 0;
  const double tol = rank_tolerance(a, std::max(reference, r.S.front()));
  return static_cast<std::size_t>(std::count_if(r.S.begin(), r.S.end(), [tol](double x) { return x > tol; }));
}

// ---------------------------------------------------------------------------
// Subspaces

/// Subspace of R^ambient stored as an orthonormal basis (ambient x dim).
class Subspace {
 public:
  explicit Subspace(std::size_t ambient_dim = 0) : ambient_(ambient_dim), basis_(ambient_dim, 0) {}

  /// Orthonormalizes the columns of `spanning` (modified Gram-Schmidt, two
  /// passes). Columns must be linearly independent.
  Subspace(std::size_t ambient_dim, const Matrix& spanning) : ambient_(ambient_dim) {
    if (spanning.rows() != ambient_dim) {
      throw ShapeError("Subspace: basis has " + std::to_string(spanning.rows()) +
                       " rows, ambient dim is " + std::to_string(ambient_dim));
    }
    if (spanning.cols() > ambient_dim) throw ShapeError("Subspace: dim exceeds ambient dim");
    basis_ = spanning;
    const std::size_t k = basis_.cols();
    for (std::size_t c = 0; c < k; ++c) {
      double orig = 0.0;
      for (std::size_t i = 0; i < ambient_; ++i) orig += basis_(i, c) * basis_(i, c);
      orig = std::sqrt(orig);
      for (int pass = 0; pass < 2; ++pass) {
        for (std::size_t o = 0; o < c; ++o) {
          double dot = 0.0;
          for (std::size_t i = 0; i < ambient_; ++i) dot += basis_(i, o) * basis_(i, c);
          for (std::size_t i = 0; i < ambient_; ++i) basis_(i, c) -= dot * basis_(i, o);
        }
      }
      double nrm = 0.0;
      for (std::size_t i = 0; i < ambient_; ++i) nrm += basis_(i, c) * basis_(i, c);
      nrm = std::sqrt(nrm);
      if (nrm <= 1e-10 * std::max(orig, 1e-300)) {
        throw NumericalError("Subspace: spanning columns are linearly dependent");
      }
      for (std::size_t i = 0; i < ambient_; ++i) basis_(i, c) /= nrm;
    }
  }

  std::size_t ambient_dim() const { return ambient_; }
  std::size_t dim() const { return basis_.cols(); }
  const Matrix& basis() const { return basis_; }

 private:
  std::size_t ambient_;
  Matrix basis_;
};

/// Orthonormal basis of the row span of `a`; dim equals numerical_rank(a).
inline Subspace span_of_rows(const Matrix& a) {
  const std::size_t d = a.cols();
  if (a.rows() == 0 || d == 0) return Subspace(d);
  const SVDResult r = svd(a);
  const std::size_t k = rank_from_singular_values(a, r.S);
  Matrix b(d, k);
  for (std::size_t j = 0; j < k; ++j)
    for (std::size_t i = 0; i < d; ++i) b(i, j) = r.Vt(j, i);
  return Subspace(d, b);
}

inline Subspace span_of_columns(const Matrix& a) { return span_of_rows(transpose(a)); }

/// I - B B^T.
inline Matrix complement_projector(const Subspace& s) {
  const Matrix& b = s.basis();
  Matrix p = Matrix::identity(s.ambient_dim());
  for (std::size_t i = 0; i < p.rows(); ++i)
    for (std::size_t j = 0; j < p.cols(); ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < b.cols(); ++k) acc += b(i, k) * b(j, k);
      p(i, j) -= acc;
    }
  return p;
}

inline Subspace orthogonal_complement(const Subspace& s) {
  if (s.dim() == 0) return Subspace(s.ambient_dim(), Matrix::identity(s.ambient_dim()));
  return span_of_rows(complement_projector(s));
}

/// Image of `s` under the symmetric projector `p` (e.g. Pi_X applied to a span).
inline Subspace project_subspace(const Matrix& p, const Subspace& s) {
  if (s.dim() == 0) return Subspace(s.ambient_dim());
  return span_of_rows(matmul(transpose(s.basis()), p));
}

/// Geodesic-style distance between subspaces: sqrt(sum theta_i^2) over the
/// principal angles plus pi/2 for every unmatched dimension. Small angles are
/// taken from sines so identical subspaces give ~1e-16, not sqrt(eps).
inline double principal_angle_distance(const Subspace& u1, const Subspace& u2) {
  if (u1.ambient_dim() != u2.ambient_dim()) {
    throw ShapeError("principal_angle_distance: ambient dims " +
                     std::to_string(u1.ambient_dim()) + " vs " + std::to_string(u2.ambient_dim()));
  }
  const Subspace& big = u1.dim() >= u2.dim() ? u1 : u2;
  const Subspace& small = u1.dim() >= u2.dim() ? u2 : u1;
  const std::size_t k = small.dim();
  const double half_pi = std::numbers::pi / 2.0;
  double sum = static_cast<double>(big.dim() - k) * half_pi * half_pi;
  if (k > 0) {
    const Matrix cross = matmul(transpose(big.basis()), small.basis());  // dim_big x k
    std::vector<double> cosines = svd(cross).S;                          // descending
    const Matrix resid = small.basis() - matmul(big.basis(), cross);     // d x k
    std::vector<double> sines = svd(resid).S;                            // descending
    std::reverse(sines.begin(), sines.end());
    for (std::size_t i = 0; i < k; ++i) {
      const double c = i < cosines.size() ? std::min(cosines[i], 1.0) : 0.0;
      const double s = i < sines.size() ? std::min(sines[i], 1.0) : 1.0;
      const double theta = std::atan2(s, c);
      sum += theta * theta;
    }
  }
  return std::sqrt(sum);
}

}  // namespace prefixlab

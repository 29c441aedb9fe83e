#include "ncal/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace ncal {

namespace {

void require_same_shape(const CMatrix& a, const CMatrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionMismatch(std::string(op) + ": shapes " + shape_string(a) +
                            " and " + shape_string(b) + " differ");
  }
}

}  // namespace

SingularMatrix::SingularMatrix(std::size_t pivot_index, double pivot_magnitude)
    : std::runtime_error("singular matrix: pivot " + std::to_string(pivot_index) +
                         " has magnitude " + std::to_string(pivot_magnitude)),
      pivot_index_(pivot_index),
      pivot_magnitude_(pivot_magnitude) {}

CMatrix::CMatrix(std::size_t rows, std::size_t cols)
    : rows_(rows), cols_(cols), entries_(rows * cols) {}

CMatrix::CMatrix(std::size_t rows, std::size_t cols, std::vector<cdouble> entries)
    : rows_(rows), cols_(cols), entries_(std::move(entries)) {
  if (entries_.size() != rows * cols) {
    throw DimensionMismatch("CMatrix: " + std::to_string(entries_.size()) +
                            " entries for shape " + std::to_string(rows) + "x" +
                            std::to_string(cols));
  }
}

CMatrix::CMatrix(std::initializer_list<std::initializer_list<cdouble>> rows)
    : rows_(rows.size()), cols_(rows.size() ? rows.begin()->size() : 0) {
  entries_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    if (r.size() != cols_) throw DimensionMismatch("CMatrix: ragged initializer");
    entries_.insert(entries_.end(), r.begin(), r.end());
  }
}

CMatrix CMatrix::identity(std::size_t n) {
  CMatrix out(n, n);
  for (std::size_t i = 0; i < n; ++i) out(i, i) = 1.0;
  return out;
}

CMatrix CMatrix::column(std::span<const cdouble> values) {
  return CMatrix(values.size(), 1, std::vector<cdouble>(values.begin(), values.end()));
}

std::vector<cdouble> CMatrix::col(std::size_t c) const {
  std::vector<cdouble> out(rows_);
  for (std::size_t r = 0; r < rows_; ++r) out[r] = (*this)(r, c);
  return out;
}

void CMatrix::set_col(std::size_t c, std::span<const cdouble> values) {
  if (values.size() != rows_) throw DimensionMismatch("set_col: length mismatch");
  for (std::size_t r = 0; r < rows_; ++r) (*this)(r, c) = values[r];
}

std::vector<cdouble> CMatrix::row(std::size_t r) const {
  auto first = entries_.begin() + static_cast<std::ptrdiff_t>(r * cols_);
  return {first, first + static_cast<std::ptrdiff_t>(cols_)};
}

bool CMatrix::all_finite() const {
  return std::all_of(entries_.begin(), entries_.end(), [](cdouble z) {
    return std::isfinite(z.real()) && std::isfinite(z.imag());
  });
}

CMatrix& CMatrix::operator+=(const CMatrix& other) {
  require_same_shape(*this, other, "add");
  for (std::size_t i = 0; i < entries_.size(); ++i) entries_[i] += other.entries_[i];
  return *this;
}

CMatrix& CMatrix::operator-=(const CMatrix& other) {
  require_same_shape(*this, other, "subtract");
  for (std::size_t i = 0; i < entries_.size(); ++i) entries_[i] -= other.entries_[i];
  return *this;
}

CMatrix& CMatrix::operator*=(cdouble s) {
  for (auto& z : entries_) z *= s;
  return *this;
}

CMatrix operator+(CMatrix a, const CMatrix& b) { return a += b; }
CMatrix operator-(CMatrix a, const CMatrix& b) { return a -= b; }
CMatrix operator*(cdouble s, CMatrix a) { return a *= s; }

std::string shape_string(const CMatrix& a) {
  std::ostringstream os;
  os << a.rows() << "x" << a.cols();
  return os.str();
}

CMatrix matmul(const CMatrix& a, const CMatrix& b) {
  if (a.cols() != b.rows()) {
    throw DimensionMismatch("matmul: cannot multiply " + shape_string(a) + " by " +
                            shape_string(b));
  }
  CMatrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const cdouble aik = a(i, k);
      if (aik == cdouble{}) continue;
      for (std::size_t j = 0; j < b.cols(); ++j) out(i, j) += aik * b(k, j);
    }
  }
  return out;
}

CMatrix hermitian(const CMatrix& a) {
  CMatrix out(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = std::conj(a(i, j));
  }
  return out;
}

CMatrix inverse(const CMatrix& a) {
  if (a.rows() != a.cols()) {
    throw DimensionMismatch("inverse: matrix " + shape_string(a) + " is not square");
  }
  const std::size_t n = a.rows();
  const double threshold = 1e-12 * frob_norm(a);

  CMatrix lu = a;
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;

  for (std::size_t k = 0; k < n; ++k) {
    std::size_t pivot = k;
    double best = std::abs(lu(k, k));
    for (std::size_t i = k + 1; i < n; ++i) {
      const double mag = std::abs(lu(i, k));
      if (mag > best) {
        best = mag;
        pivot = i;
      }
    }
    if (!(best >= threshold) || best == 0.0) throw SingularMatrix(k, best);
    if (pivot != k) {
      for (std::size_t j = 0; j < n; ++j) std::swap(lu(k, j), lu(pivot, j));
      std::swap(perm[k], perm[pivot]);
    }
    const cdouble inv_pivot = 1.0 / lu(k, k);
    for (std::size_t i = k + 1; i < n; ++i) {
      const cdouble factor = lu(i, k) * inv_pivot;
      lu(i, k) = factor;
      if (factor == cdouble{}) continue;
      for (std::size_t j = k + 1; j < n; ++j) lu(i, j) -= factor * lu(k, j);
    }
  }

  // Solve L U x = P e_c for every column c.
  CMatrix out(n, n);
  std::vector<cdouble> work(n);
  for (std::size_t c = 0; c < n; ++c) {
    for (std::size_t i = 0; i < n; ++i) work[i] = perm[i] == c ? 1.0 : 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      cdouble acc = work[i];
      for (std::size_t j = 0; j < i; ++j) acc -= lu(i, j) * work[j];
      work[i] = acc;
    }
    for (std::size_t i = n; i-- > 0;) {
      cdouble acc = work[i];
      for (std::size_t j = i + 1; j < n; ++j) acc -= lu(i, j) * work[j];
      work[i] = acc / lu(i, i);
    }
    for (std::size_t i = 0; i < n; ++i) out(i, c) = work[i];
  }
  return out;
}

CMatrix right_pinv(const CMatrix& x) {
  const CMatrix xh = hermitian(x);
  return matmul(xh, inverse(matmul(x, xh)));
}

double frob_norm_sq(const CMatrix& a) {
  double acc = 0.0;
  for (cdouble z : a.entries()) acc += std::norm(z);
  return acc;
}

double frob_norm(const CMatrix& a) { return std::sqrt(frob_norm_sq(a)); }

double real_inner(const CMatrix& a, const CMatrix& b) {
  require_same_shape(a, b, "real_inner");
  double acc = 0.0;
  auto ea = a.entries();
  auto eb = b.entries();
  for (std::size_t i = 0; i < ea.size(); ++i) {
    acc += ea[i].real() * eb[i].real() + ea[i].imag() * eb[i].imag();
  }
  return acc;
}

cdouble trace(const CMatrix& a) {
  cdouble acc{};
  for (std::size_t i = 0; i < std::min(a.rows(), a.cols()); ++i) acc += a(i, i);
  return acc;
}

double max_abs_diff(const CMatrix& a, const CMatrix& b) {
  require_same_shape(a, b, "max_abs_diff");
  double out = 0.0;
  auto ea = a.entries();
  auto eb = b.entries();
  for (std::size_t i = 0; i < ea.size(); ++i) out = std::max(out, std::abs(ea[i] - eb[i]));
  return out;
}

}  // namespace ncal

#ifndef NCAL_NUMERICS_HPP_
#define NCAL_NUMERICS_HPP_

#include <complex>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ncal {

using cdouble = std::complex<double>;

class DimensionMismatch : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised by LU factorization when a pivot falls below the relative
/// threshold 1e-12 * ||A||_F.
class SingularMatrix : public std::runtime_error {
 public:
  SingularMatrix(std::size_t pivot_index, double pivot_magnitude);
  std::size_t pivot_index() const { return pivot_index_; }
  double pivot_magnitude() const { return pivot_magnitude_; }

 private:
  std::size_t pivot_index_;
  double pivot_magnitude_;
};

/// Dense complex matrix, row-major, double precision.
class CMatrix {
 public:
  CMatrix() = default;
  CMatrix(std::size_t rows, std::size_t cols);
  CMatrix(std::size_t rows, std::size_t cols, std::vector<cdouble> entries);
  CMatrix(std::initializer_list<std::initializer_list<cdouble>> rows);

  static CMatrix identity(std::size_t n);
  static CMatrix column(std::span<const cdouble> values);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

  cdouble& operator()(std::size_t r, std::size_t c) { return entries_[r * cols_ + c]; }
  const cdouble& operator()(std::size_t r, std::size_t c) const {
    return entries_[r * cols_ + c];
  }

  std::span<cdouble> entries() { return entries_; }
  std::span<const cdouble> entries() const { return entries_; }

  std::vector<cdouble> col(std::size_t c) const;
  void set_col(std::size_t c, std::span<const cdouble> values);
  std::vector<cdouble> row(std::size_t r) const;

  bool all_finite() const;

  CMatrix& operator+=(const CMatrix& other);
  CMatrix& operator-=(const CMatrix& other);
  CMatrix& operator*=(cdouble s);

  friend bool operator==(const CMatrix&, const CMatrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<cdouble> entries_;
};

CMatrix operator+(CMatrix a, const CMatrix& b);
CMatrix operator-(CMatrix a, const CMatrix& b);
CMatrix operator*(cdouble s, CMatrix a);

std::string shape_string(const CMatrix& a);

CMatrix matmul(const CMatrix& a, const CMatrix& b);
CMatrix hermitian(const CMatrix& a);

/// LU with partial pivoting.
CMatrix inverse(const CMatrix& a);

/// x^H (x x^H)^{-1} for full-row-rank x.
CMatrix right_pinv(const CMatrix& x);

double frob_norm_sq(const CMatrix& a);
double frob_norm(const CMatrix& a);

/// Re tr(a^H b), the real inner product on complex matrices.
double real_inner(const CMatrix& a, const CMatrix& b);

cdouble trace(const CMatrix& a);

/// Largest entrywise modulus of a - b.
double max_abs_diff(const CMatrix& a, const CMatrix& b);

}  // namespace ncal

#endif  // NCAL_NUMERICS_HPP_

#ifndef AMIL_NUMKERNEL_HPP_
#define AMIL_NUMKERNEL_HPP_

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace amil {

using Vector = std::vector<double>;

/// Dense row-major matrix of doubles. Every weight tensor and every bag of
/// instance features in the library is one of these.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> values);

  static Matrix identity(std::size_t n);
  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);
  static Matrix row_vector(std::span<const double> values);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return values_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return values_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {values_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const {
    return {values_.data() + r * cols_, cols_};
  }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  const std::vector<double>& data() const { return values_; }

  std::string shape_string() const;

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> values_;
};

Matrix matmul(const Matrix& a, const Matrix& b);
// aᵀ·b without materializing the transpose.
Matrix matmul_transpose_a(const Matrix& a, const Matrix& b);
// a·bᵀ without materializing the transpose.
Matrix matmul_transpose_b(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& a);

// Row-wise: out(r, :) = a(r, :) + bias.
void add_row_bias(Matrix& a, std::span<const double> bias);
Vector column_sums(const Matrix& a);

double dot(std::span<const double> a, std::span<const double> b);
double l2_norm(std::span<const double> v);
// y += alpha * x
void axpy(double alpha, std::span<const double> x, std::span<double> y);

/// Numerically stable softmax (max-shifted). Throws DomainError on empty input.
Vector softmax(std::span<const double> v);

Vector relu(std::span<const double> v);
Matrix relu(const Matrix& a);

bool all_finite(std::span<const double> v);

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::size_t param_count = 0;
  std::size_t worst_index = 0;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
};

inline constexpr double kGradCheckStep = 1e-5;
inline constexpr double kGradCheckFloor = 1e-8;

// |analytic − numeric| / max(|analytic|, |numeric|, 1e-8)
double relative_error(double analytic, double numeric);

using ScalarFunction = std::function<double(std::span<const double>)>;

/// Central-difference check of `analytic_grad` against `f` at `params`.
/// Throws NumericError naming the coordinate if `f` is not finite there.
GradCheckReport finite_diff_check(const ScalarFunction& f,
                                  std::span<const double> params,
                                  std::span<const double> analytic_grad,
                                  double step = kGradCheckStep);

GradCheckReport finite_diff_check(const std::function<double(const Matrix&)>& f,
                                  const Matrix& params, const Matrix& analytic_grad,
                                  double step = kGradCheckStep);

}  // namespace amil

#endif  // AMIL_NUMKERNEL_HPP_

#include "amil/numkernel.hpp"

#include <algorithm>
#include <cmath>

#include "amil/errors.hpp"

namespace amil {

DivergenceError::DivergenceError(std::size_t iteration, double l_real,
                                 double l_fake, double gen_loss)
    : Error("training diverged at iteration " + std::to_string(iteration) +
            ": l_real=" + std::to_string(l_real) +
            " l_fake=" + std::to_string(l_fake) +
            " gen_loss=" + std::to_string(gen_loss)),
      iteration_(iteration),
      l_real_(l_real),
      l_fake_(l_fake),
      gen_loss_(gen_loss) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), values_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> values)
    : rows_(rows), cols_(cols), values_(std::move(values)) {
  if (values_.size() != rows_ * cols_) {
    throw ShapeError("matrix " + shape_string() + " given " +
                     std::to_string(values_.size()) + " values");
  }
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  std::vector<double> values;
  values.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw ShapeError("ragged row list");
    values.insert(values.end(), row.begin(), row.end());
  }
  return Matrix(r, c, std::move(values));
}

Matrix Matrix::row_vector(std::span<const double> values) {
  return Matrix(1, values.size(), std::vector<double>(values.begin(), values.end()));
}

std::string Matrix::shape_string() const {
  return "(" + std::to_string(rows_) + "x" + std::to_string(cols_) + ")";
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul shape mismatch: " + a.shape_string() + " x " +
                     b.shape_string());
  }
  Matrix out(a.rows(), b.cols());
  const std::size_t n = b.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double* o = out.row(i).data();
    const double* ar = a.row(i).data();
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = ar[k];
      if (aik == 0.0) continue;
      const double* br = b.row(k).data();
      for (std::size_t j = 0; j < n; ++j) o[j] += aik * br[j];
    }
  }
  return out;
}

Matrix matmul_transpose_a(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) {
    throw ShapeError("matmul_transpose_a shape mismatch: " + a.shape_string() +
                     "^T x " + b.shape_string());
  }
  Matrix out(a.cols(), b.cols());
  const std::size_t n = b.cols();
  for (std::size_t k = 0; k < a.rows(); ++k) {
    const double* ar = a.row(k).data();
    const double* br = b.row(k).data();
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double aki = ar[i];
      if (aki == 0.0) continue;
      double* o = out.row(i).data();
      for (std::size_t j = 0; j < n; ++j) o[j] += aki * br[j];
    }
  }
  return out;
}

Matrix matmul_transpose_b(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) {
    throw ShapeError("matmul_transpose_b shape mismatch: " + a.shape_string() +
                     " x " + b.shape_string() + "^T");
  }
  Matrix out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const auto ar = a.row(i);
    for (std::size_t j = 0; j < b.rows(); ++j) out(i, j) = dot(ar, b.row(j));
  }
  return out;
}

Matrix transpose(const Matrix& a) {
  Matrix out(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  return out;
}

void add_row_bias(Matrix& a, std::span<const double> bias) {
  if (bias.size() != a.cols()) {
    throw ShapeError("bias of length " + std::to_string(bias.size()) +
                     " for matrix " + a.shape_string());
  }
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto r = a.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) r[j] += bias[j];
  }
}

Vector column_sums(const Matrix& a) {
  Vector out(a.cols(), 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i) axpy(1.0, a.row(i), out);
  return out;
}

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw ShapeError("dot of lengths " + std::to_string(a.size()) + " and " +
                     std::to_string(b.size()));
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

double l2_norm(std::span<const double> v) {
  // Scaled accumulation so huge or tiny components neither overflow nor underflow.
  double scale = 0.0;
  for (double x : v) scale = std::max(scale, std::abs(x));
  if (scale == 0.0 || !std::isfinite(scale)) return scale;
  double acc = 0.0;
  for (double x : v) {
    const double y = x / scale;
    acc += y * y;
  }
  return scale * std::sqrt(acc);
}

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  if (x.size() != y.size()) {
    throw ShapeError("axpy of lengths " + std::to_string(x.size()) + " and " +
                     std::to_string(y.size()));
  }
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

Vector softmax(std::span<const double> v) {
  if (v.empty()) throw DomainError("softmax of an empty vector");
  const double shift = *std::max_element(v.begin(), v.end());
  Vector out(v.size());
  double total = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = std::exp(v[i] - shift);
    total += out[i];
  }
  for (double& x : out) x /= total;
  return out;
}

Vector relu(std::span<const double> v) {
  Vector out(v.begin(), v.end());
  for (double& x : out) x = x > 0.0 ? x : 0.0;
  return out;
}

Matrix relu(const Matrix& a) {
  return Matrix(a.rows(), a.cols(), relu(a.values()));
}

bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

double relative_error(double analytic, double numeric) {
  const double denom =
      std::max({std::abs(analytic), std::abs(numeric), kGradCheckFloor});
  return std::abs(analytic - numeric) / denom;
}

GradCheckReport finite_diff_check(const ScalarFunction& f,
                                  std::span<const double> params,
                                  std::span<const double> analytic_grad,
                                  double step) {
  if (!(step > 0.0)) throw DomainError("finite difference step must be positive");
  if (params.size() != analytic_grad.size()) {
    throw ShapeError("gradient has " + std::to_string(analytic_grad.size()) +
                     " entries for " + std::to_string(params.size()) + " parameters");
  }
  GradCheckReport report;
  report.param_count = params.size();
  Vector probe(params.begin(), params.end());
  for (std::size_t i = 0; i < probe.size(); ++i) {
    const double saved = probe[i];
    probe[i] = saved + step;
    const double plus = f(probe);
    probe[i] = saved - step;
    const double minus = f(probe);
    probe[i] = saved;
    if (!std::isfinite(plus) || !std::isfinite(minus)) {
      throw NumericError("non-finite function value when perturbing coordinate " +
                             std::to_string(i),
                         i);
    }
    const double numeric = (plus - minus) / (2.0 * step);
    const double err = relative_error(analytic_grad[i], numeric);
    if (i == 0 || err > report.max_relative_error) {
      report.max_relative_error = err;
      report.worst_index = i;
      report.analytic_at_worst = analytic_grad[i];
      report.numeric_at_worst = numeric;
    }
  }
  return report;
}

GradCheckReport finite_diff_check(const std::function<double(const Matrix&)>& f,
                                  const Matrix& params, const Matrix& analytic_grad,
                                  double step) {
  if (params.rows() != analytic_grad.rows() || params.cols() != analytic_grad.cols()) {
    throw ShapeError("gradient shape " + analytic_grad.shape_string() +
                     " does not match parameters " + params.shape_string());
  }
  Matrix probe = params;
  return finite_diff_check(
      [&](std::span<const double> x) {
        std::copy(x.begin(), x.end(), probe.values().begin());
        return f(probe);
      },
      params.values(), analytic_grad.values(), step);
}

}  // namespace amil

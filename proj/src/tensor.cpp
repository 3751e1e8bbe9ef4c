#include "ecm_sphere/tensor.hpp"

#include <algorithm>
#include <cmath>

#include "ecm_sphere/error.hpp"
#include "ecm_sphere/kernels.hpp"

namespace ecm_sphere {

Tensor::Tensor(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Tensor::Tensor(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  require(data_.size() == rows * cols, ErrorKind::dimension,
          "data length " + std::to_string(data_.size()) + " does not match shape [" +
              std::to_string(rows) + ", " + std::to_string(cols) + "]");
}

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    require(row.size() == c, ErrorKind::dimension, "ragged rows");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor(r, c, std::move(data));
}

Tensor Tensor::row_vector(std::vector<double> values) {
  const std::size_t n = values.size();
  return Tensor(1, n, std::move(values));
}

Tensor Tensor::identity(std::size_t n) {
  Tensor t(n, n);
  for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
  return t;
}

std::string Tensor::shape_string() const {
  return "[" + std::to_string(rows_) + ", " + std::to_string(cols_) + "]";
}

double Tensor::item() const {
  require(rows_ == 1 && cols_ == 1, ErrorKind::contract, "item() on non-scalar tensor " + shape_string());
  return data_[0];
}

bool Tensor::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Tensor Tensor::transposed() const {
  Tensor t(cols_, rows_);
  for (std::size_t r = 0; r < rows_; ++r)
    for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
  return t;
}

const Tensor& Tensor::check_finite(const std::string& what) const {
  require(all_finite(), ErrorKind::contract, what + " contains NaN or infinite entries");
  return *this;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require(a.cols() == b.rows(), ErrorKind::dimension,
          "matmul " + a.shape_string() + " x " + b.shape_string());
  Tensor c(a.rows(), b.cols());
  kernels::gemm_nn(a.data(), b.data(), c.data(), a.rows(), a.cols(), b.cols());
  return c;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require(a.cols() == b.cols(), ErrorKind::dimension,
          "matmul_nt " + a.shape_string() + " x " + b.shape_string() + "^T");
  Tensor c(a.rows(), b.rows());
  kernels::gemm_nt(a.data(), b.data(), c.data(), a.rows(), a.cols(), b.rows());
  return c;
}

double row_norm(const Tensor& t, std::size_t r) {
  const auto row = t.row(r);
  return std::sqrt(kernels::active().dot(row.data(), row.data(), row.size()));
}

Tensor normalized_rows(const Tensor& t) {
  Tensor out = t;
  for (std::size_t r = 0; r < t.rows(); ++r) {
    const double n = row_norm(t, r);
    require(n > 0.0, ErrorKind::degenerate_norm, "row " + std::to_string(r) + " has zero norm");
    kernels::active().scale(1.0 / n, out.row(r).data(), t.cols());
  }
  return out;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  require(a.same_shape(b), ErrorKind::dimension, "max_abs_diff shape mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace ecm_sphere

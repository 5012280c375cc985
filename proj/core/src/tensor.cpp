#include "peftkit/tensor.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

namespace peftkit {

namespace {

thread_local int g_nonfinite_depth = 0;

std::size_t shape_product(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t s : shape) n *= s;
  return n;
}

void check_finite(const std::vector<double>& data) {
  if (g_nonfinite_depth > 0) return;
  for (double v : data) {
    if (!std::isfinite(v)) {
      throw NumericError("tensor holds a non-finite entry");
    }
  }
}

}  // namespace

const char* nonlinearity_name(Nonlinearity f) {
  switch (f) {
    case Nonlinearity::identity: return "identity";
    case Nonlinearity::relu: return "relu";
    case Nonlinearity::gelu: return "gelu";
  }
  return "?";
}

Nonlinearity nonlinearity_from_name(const std::string& name) {
  if (name == "identity") return Nonlinearity::identity;
  if (name == "relu") return Nonlinearity::relu;
  if (name == "gelu") return Nonlinearity::gelu;
  throw ConfigError("unknown nonlinearity kind: " + name);
}

NonFiniteGuard::NonFiniteGuard() { ++g_nonfinite_depth; }
NonFiniteGuard::~NonFiniteGuard() { --g_nonfinite_depth; }
bool nonfinite_allowed() { return g_nonfinite_depth > 0; }

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_.empty()) throw DimensionError("tensor rank must be >= 1");
  for (std::size_t s : shape_) {
    if (s == 0) throw DimensionError("tensor dimensions must be positive");
  }
  if (shape_product(shape_) != data_.size()) {
    std::ostringstream os;
    os << "shape " << shape_str() << " expects " << shape_product(shape_)
       << " entries, got " << data_.size();
    throw DimensionError(os.str());
  }
  check_finite(data_);
  cols_ = shape_.size() == 2 ? shape_[1] : 1;
}

Tensor Tensor::zeros(std::vector<std::size_t> shape) {
  std::size_t n = shape_product(shape);
  return Tensor(std::move(shape), std::vector<double>(n, 0.0));
}

Tensor Tensor::full(std::vector<std::size_t> shape, double value) {
  std::size_t n = shape_product(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::scalar(double v) { return Tensor({1}, {v}); }

Tensor Tensor::row_vector(std::vector<double> values) {
  std::size_t n = values.size();
  return Tensor({n}, std::move(values));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
  return Tensor({rows, cols}, std::move(values));
}

std::size_t Tensor::rows() const {
  if (rank() != 2) throw DimensionError("rows() on tensor of shape " + shape_str());
  return shape_[0];
}

std::size_t Tensor::cols() const {
  if (rank() != 2) throw DimensionError("cols() on tensor of shape " + shape_str());
  return shape_[1];
}

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape_.size(); ++i) {
    if (i) os << "x";
    os << shape_[i];
  }
  os << "]";
  return os.str();
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows()) {
    throw DimensionError("matmul shape mismatch: " + a.shape_str() + " x " + b.shape_str());
  }
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a.at(i, p);
      const double* brow = b.data().data() + p * n;
      double* orow = out.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += aip * brow[j];
    }
  }
  return Tensor({m, n}, std::move(out));
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw DimensionError("transpose expects rank 2, got " + a.shape_str());
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a.at(i, j);
  return Tensor({n, m}, std::move(out));
}

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) {
    throw DimensionError(std::string(op) + " shape mismatch: " + a.shape_str() + " vs " + b.shape_str());
  }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) + b.at(i);
  return Tensor(a.shape(), std::move(out));
}

Tensor subtract(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "subtract");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) - b.at(i);
  return Tensor(a.shape(), std::move(out));
}

Tensor hadamard(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "hadamard");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) * b.at(i);
  return Tensor(a.shape(), std::move(out));
}

Tensor scale(const Tensor& a, double c) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) * c;
  return Tensor(a.shape(), std::move(out));
}

Tensor add_row_bias(const Tensor& x, const Tensor& bias) {
  if (x.rank() != 2 || bias.rank() != 1 || bias.numel() != x.cols()) {
    throw DimensionError("add_row_bias shape mismatch: " + x.shape_str() + " + " + bias.shape_str());
  }
  std::vector<double> out(x.numel());
  const std::size_t m = x.rows(), n = x.cols();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = x.at(i, j) + bias.at(j);
  return Tensor(x.shape(), std::move(out));
}

namespace {

// tanh form of GeLU; derivative matches the same approximation.
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

}  // namespace

double nonlinearity_scalar(double x, Nonlinearity f) {
  switch (f) {
    case Nonlinearity::identity: return x;
    case Nonlinearity::relu: return x > 0.0 ? x : 0.0;
    case Nonlinearity::gelu: {
      const double u = kGeluC * (x + kGeluA * x * x * x);
      return 0.5 * x * (1.0 + std::tanh(u));
    }
  }
  return x;
}

double nonlinearity_grad_scalar(double x, Nonlinearity f) {
  switch (f) {
    case Nonlinearity::identity: return 1.0;
    case Nonlinearity::relu: return x > 0.0 ? 1.0 : 0.0;
    case Nonlinearity::gelu: {
      const double u = kGeluC * (x + kGeluA * x * x * x);
      const double t = std::tanh(u);
      const double du = kGeluC * (1.0 + 3.0 * kGeluA * x * x);
      return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
    }
  }
  return 1.0;
}

Tensor nonlinearity(const Tensor& x, Nonlinearity f) {
  if (f == Nonlinearity::identity) return x;  // bit-exact no-op
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = nonlinearity_scalar(x.at(i), f);
  return Tensor(x.shape(), std::move(out));
}

}  // namespace peftkit

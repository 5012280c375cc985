#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "peftkit/errors.hpp"

namespace peftkit {

enum class Nonlinearity { identity, relu, gelu };

const char* nonlinearity_name(Nonlinearity f);
Nonlinearity nonlinearity_from_name(const std::string& name);

// Dense row-major tensor of 64-bit floats. The toy stack only needs ranks
// 1 and 2. Construction rejects NaN/Inf unless a NonFiniteGuard is live on
// the current thread.
class Tensor {
public:
  Tensor() = default;
  Tensor(std::vector<std::size_t> shape, std::vector<double> data);

  static Tensor zeros(std::vector<std::size_t> shape);
  static Tensor full(std::vector<std::size_t> shape, double value);
  static Tensor scalar(double v);
  static Tensor row_vector(std::vector<double> values);           // shape {n}
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t numel() const { return data_.size(); }
  std::size_t rows() const;   // rank-2 only
  std::size_t cols() const;   // rank-2 only

  double at(std::size_t i) const { return data_[i]; }
  double& at(std::size_t i) { return data_[i]; }
  double at(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }
  double& at(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }

  const std::vector<double>& data() const { return data_; }
  std::vector<double>& data() { return data_; }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  std::string shape_str() const;

private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
  std::size_t cols_ = 0;  // cached for rank-2 indexing (1 otherwise)
};

// RAII switch admitting non-finite tensor entries on this thread. Used by
// tests of the error paths and by divergence probes.
class NonFiniteGuard {
public:
  NonFiniteGuard();
  ~NonFiniteGuard();
  NonFiniteGuard(const NonFiniteGuard&) = delete;
  NonFiniteGuard& operator=(const NonFiniteGuard&) = delete;
};

bool nonfinite_allowed();

// -- raw kernels (shared by the autodiff graph and the merge paths) --------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor add(const Tensor& a, const Tensor& b);
Tensor subtract(const Tensor& a, const Tensor& b);
Tensor hadamard(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
// [m,n] + [n], broadcast over the leading dimension (the only broadcast).
Tensor add_row_bias(const Tensor& x, const Tensor& bias);

double nonlinearity_scalar(double x, Nonlinearity f);
double nonlinearity_grad_scalar(double x, Nonlinearity f);
Tensor nonlinearity(const Tensor& x, Nonlinearity f);

}  // namespace peftkit

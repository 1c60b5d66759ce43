// Copyright (c) 2026 The fastfwd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace fastfwd {

using Shape = std::vector<std::size_t>;
using Rng = std::mt19937_64;

std::size_t element_count(const Shape& shape);
std::string to_string(const Shape& shape);

// Dense row-major float64 array. Scalars have shape {1}.
//
// The gradient buffer is allocated only once something writes a gradient;
// has_grad() distinguishes "never touched" from "zero".
class Tensor {
 public:
  Tensor();
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double value);
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor vector(std::initializer_list<double> values);
  static Tensor randn(Shape shape, double stddev, Rng& rng);
  static Tensor identity(std::size_t n);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool is_scalar() const noexcept { return data_.size() == 1; }
  bool is_matrix() const noexcept { return shape_.size() == 2; }
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> data() const noexcept { return data_; }
  std::span<double> data() noexcept { return data_; }
  double item() const;

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

  bool requires_grad() const noexcept { return requires_grad_; }
  void set_requires_grad(bool on) noexcept { requires_grad_ = on; }

  bool has_grad() const noexcept { return has_grad_; }
  std::span<const double> grad() const noexcept { return grad_; }
  // Allocates (zero-filled) on first use.
  std::span<double> mutable_grad();
  void zero_grad();
  void clear_grad() noexcept;

  // Throws NumericError naming `what` on the first NaN/Inf.
  void check_finite(const std::string& what) const;

 private:
  Shape shape_;
  std::vector<double> data_;
  std::vector<double> grad_;
  bool requires_grad_ = false;
  bool has_grad_ = false;
};

// Same shape and identical bit patterns in data (gradients ignored).
bool bitwise_equal(const Tensor& a, const Tensor& b);
bool bitwise_equal(std::span<const double> a, std::span<const double> b);

double dot(std::span<const double> a, std::span<const double> b);
double l2_norm(std::span<const double> a);

}  // namespace fastfwd

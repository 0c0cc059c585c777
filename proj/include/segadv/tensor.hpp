#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace segadv {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major array of doubles. A rank-0 shape holds one scalar.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double value) { return Tensor(Shape{}, value); }
  static Tensor vector(std::initializer_list<double> values);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  const std::vector<double>& values() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  /// Value of a single-element tensor.
  double item() const;

  Tensor reshaped(Shape shape) const;

 private:
  Shape shape_;
  std::vector<double> data_;
};

/// Same shape and same bit pattern in every element.
bool bit_identical(const Tensor& a, const Tensor& b);

bool all_finite(const Tensor& t);
double max_abs(const Tensor& t);
double l1_norm(const Tensor& t);
double max_abs_difference(const Tensor& a, const Tensor& b);

/// Three-valued sign, sign(0) == 0.
double sign(double v);
Tensor sign(const Tensor& t);

/// Softmax along the last axis.
Tensor softmax(const Tensor& logits);

}  // namespace segadv

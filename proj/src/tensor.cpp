#include "segadv/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

#include "segadv/error.hpp"

namespace segadv {

std::string_view error_kind_name(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kInvalidArgument: return "invalid argument";
    case ErrorKind::kShapeMismatch: return "shape mismatch";
    case ErrorKind::kUndefinedLoss: return "undefined loss";
    case ErrorKind::kUndefinedGain: return "undefined gain";
    case ErrorKind::kUndefinedMetric: return "undefined metric";
    case ErrorKind::kBadMagic: return "bad magic";
    case ErrorKind::kUnsupportedVersion: return "unsupported version";
    case ErrorKind::kTruncated: return "truncated";
    case ErrorKind::kCountMismatch: return "count mismatch";
    case ErrorKind::kIo: return "io error";
  }
  return "error";
}

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t extent : shape) n *= extent;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i != 0) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_size(shape_) != data_.size()) {
    throw Error(ErrorKind::kShapeMismatch,
                "shape " + shape_string(shape_) + " needs " +
                    std::to_string(shape_size(shape_)) + " values, got " +
                    std::to_string(data_.size()));
  }
}

Tensor Tensor::vector(std::initializer_list<double> values) {
  return Tensor(Shape{values.size()}, std::vector<double>(values));
}

double Tensor::item() const {
  if (data_.size() != 1) {
    throw Error(ErrorKind::kShapeMismatch,
                "item() on tensor of shape " + shape_string(shape_));
  }
  return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const {
  return Tensor(std::move(shape), data_);
}

bool bit_identical(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  return std::memcmp(a.data().data(), b.data().data(),
                     a.size() * sizeof(double)) == 0;
}

bool all_finite(const Tensor& t) {
  return std::all_of(t.data().begin(), t.data().end(),
                     [](double v) { return std::isfinite(v); });
}

double max_abs(const Tensor& t) {
  double m = 0.0;
  for (double v : t.data()) m = std::max(m, std::abs(v));
  return m;
}

double l1_norm(const Tensor& t) {
  double s = 0.0;
  for (double v : t.data()) s += std::abs(v);
  return s;
}

double max_abs_difference(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw Error(ErrorKind::kShapeMismatch,
                shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    m = std::max(m, std::abs(a[i] - b[i]));
  }
  return m;
}

double sign(double v) {
  if (v > 0.0) return 1.0;
  if (v < 0.0) return -1.0;
  return 0.0;
}

Tensor sign(const Tensor& t) {
  Tensor out(t.shape());
  for (std::size_t i = 0; i < t.size(); ++i) out[i] = sign(t[i]);
  return out;
}

Tensor softmax(const Tensor& logits) {
  if (logits.rank() == 0) {
    throw Error(ErrorKind::kShapeMismatch, "softmax needs rank >= 1");
  }
  const std::size_t m = logits.shape().back();
  Tensor out(logits.shape());
  for (std::size_t row = 0; row < logits.size() / m; ++row) {
    const double* z = logits.data().data() + row * m;
    double* p = out.data().data() + row * m;
    const double zmax = *std::max_element(z, z + m);
    double total = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      p[i] = std::exp(z[i] - zmax);
      total += p[i];
    }
    for (std::size_t i = 0; i < m; ++i) p[i] /= total;
  }
  return out;
}

}  // namespace segadv

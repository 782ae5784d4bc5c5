#pragma once

#include <cmath>
#include <cstddef>
#include <cstring>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace fedmtl {

/// Dense row-major tensor of doubles. Shapes are fixed after construction;
/// product(shape) always equals data.size().
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> s)
      : shape(std::move(s)), data(count(shape), 0.0) {}

  Tensor(std::vector<std::size_t> s, std::vector<double> values)
      : shape(std::move(s)), data(std::move(values)) {
    if (count(shape) != data.size()) {
      throw std::invalid_argument("tensor: shape does not match value count");
    }
  }

  static std::size_t count(const std::vector<std::size_t>& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
  }

  static Tensor zeros(std::initializer_list<std::size_t> s) {
    return Tensor(std::vector<std::size_t>(s));
  }

  std::size_t numel() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t dim(std::size_t i) const { return shape.at(i); }

  double& operator()(std::size_t i) { return data[i]; }
  double operator()(std::size_t i) const { return data[i]; }
  double& operator()(std::size_t i, std::size_t j) {
    return data[i * shape[1] + j];
  }
  double operator()(std::size_t i, std::size_t j) const {
    return data[i * shape[1] + j];
  }
  double& operator()(std::size_t i, std::size_t j, std::size_t k) {
    return data[(i * shape[1] + j) * shape[2] + k];
  }
  double operator()(std::size_t i, std::size_t j, std::size_t k) const {
    return data[(i * shape[1] + j) * shape[2] + k];
  }

  bool same_shape(const Tensor& other) const { return shape == other.shape; }

  bool all_finite() const {
    for (double v : data) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  /// Bitwise equality (exact representation, not numeric tolerance).
  bool bit_equal(const Tensor& other) const {
    if (shape != other.shape) return false;
    for (std::size_t i = 0; i < data.size(); ++i) {
      // memcmp-style comparison via the byte pattern; distinguishes -0.0
      // from 0.0 and treats identical NaN payloads as equal.
      if (std::memcmp(&data[i], &other.data[i], sizeof(double)) != 0) {
        return false;
      }
    }
    return true;
  }

  std::string shape_str() const {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
      if (i) os << 'x';
      os << shape[i];
    }
    os << ']';
    return os.str();
  }
};

inline void require_shape(const Tensor& t, std::vector<std::size_t> expected,
                          const std::string& what) {
  if (t.shape != expected) {
    throw std::invalid_argument(what + ": expected shape " +
                                Tensor(std::move(expected)).shape_str() +
                                ", got " + t.shape_str());
  }
}

}  // namespace fedmtl

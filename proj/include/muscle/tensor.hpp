#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace muscle {

/// Dense row-major tensor of 64-bit reals.
struct Tensor {
  std::vector<int> shape;
  std::vector<double> values;

  Tensor() = default;

  explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
    values.assign(static_cast<size_t>(checked_numel(shape)), 0.0);
  }

  Tensor(std::vector<int> s, std::vector<double> v)
      : shape(std::move(s)), values(std::move(v)) {
    if (checked_numel(shape) != static_cast<long long>(values.size()))
      throw std::invalid_argument("tensor: value count does not match shape");
  }

  static Tensor scalar(double v) { return Tensor({1}, {v}); }
  static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }

  static Tensor full(std::vector<int> s, double v) {
    Tensor t(std::move(s));
    for (auto& x : t.values) x = v;
    return t;
  }

  int rank() const { return static_cast<int>(shape.size()); }
  long long numel() const { return static_cast<long long>(values.size()); }
  int dim(int i) const { return shape[static_cast<size_t>(i)]; }

  // rank-2 accessors
  int rows() const { return shape[0]; }
  int cols() const { return shape[1]; }
  double& at(int r, int c) { return values[static_cast<size_t>(r) * cols() + c]; }
  double at(int r, int c) const { return values[static_cast<size_t>(r) * cols() + c]; }

  const double* data() const { return values.data(); }
  double* data() { return values.data(); }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  bool all_finite() const {
    for (double v : values)
      if (!std::isfinite(v)) return false;
    return true;
  }

  bool operator==(const Tensor& o) const {
    return shape == o.shape && values == o.values;
  }

  static long long checked_numel(const std::vector<int>& s) {
    long long n = 1;
    for (int d : s) {
      if (d <= 0) throw std::invalid_argument("tensor: non-positive dimension");
      n *= d;
    }
    return n;
  }
};

inline std::string shape_str(const std::vector<int>& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

}  // namespace muscle

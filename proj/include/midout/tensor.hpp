#pragma once

#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include "midout/check.hpp"

namespace midout {

// Extents of a (rank <= 2) array. Empty shape = scalar.
using Shape = std::vector<int>;

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (int d : s) n *= static_cast<std::size_t>(d);
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

// Shaped numeric array with an optional gradient. Row-major doubles.
struct Tensor {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // same size as values when requires_grad
  bool requires_grad = false;

  Tensor() = default;
  explicit Tensor(Shape s, double fill = 0.0)
      : shape(std::move(s)), values(shape_numel(shape), fill) {}
  Tensor(Shape s, std::vector<double> v) : shape(std::move(s)), values(std::move(v)) {
    MIDOUT_CHECK(values.size() == shape_numel(shape),
                 "tensor value count " << values.size() << " != numel of " << shape_str(shape));
  }

  std::size_t numel() const { return values.size(); }
  int rows() const { return shape.empty() ? 1 : shape[0]; }
  int cols() const { return shape.size() < 2 ? 1 : shape[1]; }

  void set_requires_grad() {
    requires_grad = true;
    grad.assign(values.size(), 0.0);
  }
  void zero_grad() { grad.assign(grad.size(), 0.0); }

  double& at(int i) { return values[static_cast<std::size_t>(i)]; }
  double at(int i) const { return values[static_cast<std::size_t>(i)]; }
  double& at(int r, int c) { return values[static_cast<std::size_t>(r) * cols() + c]; }
  double at(int r, int c) const { return values[static_cast<std::size_t>(r) * cols() + c]; }
};

inline Tensor scalar_tensor(double v) { return Tensor(Shape{}, std::vector<double>{v}); }
inline Tensor vector_tensor(std::vector<double> v) {
  int n = static_cast<int>(v.size());
  return Tensor(Shape{n}, std::move(v));
}

}  // namespace midout

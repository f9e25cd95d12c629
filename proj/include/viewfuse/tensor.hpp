#pragma once

#include <cassert>
#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

#include "viewfuse/errors.hpp"

namespace vf::nn {

using Shape = std::vector<int>;

std::string shape_str(const Shape& s);

// Dense row-major tensor of doubles. Feature maps are C×H×W, pose features
// are flat vectors, sampling grids are H×W×2.
struct Tensor {
  Shape shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(Shape s) : shape(std::move(s)), data(count(shape), 0.0) {}
  Tensor(Shape s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
    if (static_cast<std::size_t>(count(shape)) != data.size())
      throw ConfigError("tensor data size does not match shape " + shape_str(shape));
  }

  static int count(const Shape& s) {
    int n = 1;
    for (int e : s) {
      if (e <= 0) throw ConfigError("non-positive tensor extent in shape " + shape_str(s));
      n *= e;
    }
    return n;
  }

  static Tensor zeros(Shape s) { return Tensor(std::move(s)); }
  static Tensor full(Shape s, double v) {
    Tensor t(std::move(s));
    for (double& x : t.data) x = v;
    return t;
  }
  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  int numel() const { return static_cast<int>(data.size()); }
  int rank() const { return static_cast<int>(shape.size()); }
  bool empty() const { return data.empty(); }

  double& operator[](int i) { return data[static_cast<std::size_t>(i)]; }
  double operator[](int i) const { return data[static_cast<std::size_t>(i)]; }

  // C×H×W access.
  double& at3(int c, int y, int x) {
    assert(rank() == 3);
    return data[(static_cast<std::size_t>(c) * shape[1] + y) * shape[2] + x];
  }
  double at3(int c, int y, int x) const {
    assert(rank() == 3);
    return data[(static_cast<std::size_t>(c) * shape[1] + y) * shape[2] + x];
  }
  // H×W access.
  double& at2(int y, int x) {
    assert(rank() == 2);
    return data[static_cast<std::size_t>(y) * shape[1] + x];
  }
  double at2(int y, int x) const {
    assert(rank() == 2);
    return data[static_cast<std::size_t>(y) * shape[1] + x];
  }
  // rank-4 access (conv weights C_out×C_in×kh×kw).
  double& at4(int a, int b, int c, int d) {
    assert(rank() == 4);
    return data[((static_cast<std::size_t>(a) * shape[1] + b) * shape[2] + c) * shape[3] + d];
  }
  double at4(int a, int b, int c, int d) const {
    assert(rank() == 4);
    return data[((static_cast<std::size_t>(a) * shape[1] + b) * shape[2] + c) * shape[3] + d];
  }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }
  bool all_finite() const;
  double max_abs() const;
};

inline bool operator==(const Tensor& a, const Tensor& b) {
  return a.shape == b.shape && a.data == b.data;
}

}  // namespace vf::nn

#pragma once

#include <cmath>
#include <cstring>
#include <string>
#include <vector>

#include "fuseser/common.hpp"

namespace fuseser {

// Dense row-major matrix. Vectors are 1xN, scalars 1x1.
template <typename T>
struct Mat {
  int rows = 0;
  int cols = 0;
  std::vector<T> v;

  Mat() = default;
  Mat(int r, int c) : rows(r), cols(c), v(static_cast<std::size_t>(r) * c, T(0)) {}
  Mat(int r, int c, std::vector<T> values) : rows(r), cols(c), v(std::move(values)) {}

  static Mat zeros(int r, int c) { return Mat(r, c); }
  static Mat filled(int r, int c, T x) {
    Mat m(r, c);
    std::fill(m.v.begin(), m.v.end(), x);
    return m;
  }

  T& at(int r, int c) { return v[static_cast<std::size_t>(r) * cols + c]; }
  const T& at(int r, int c) const { return v[static_cast<std::size_t>(r) * cols + c]; }

  T* data() { return v.data(); }
  const T* data() const { return v.data(); }
  std::size_t size() const { return v.size(); }
  bool empty() const { return v.empty(); }

  bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }

  bool all_finite() const {
    for (const T& x : v)
      if (!std::isfinite(static_cast<double>(x))) return false;
    return true;
  }

  std::string shape_str() const {
    return std::to_string(rows) + "x" + std::to_string(cols);
  }
};

template <typename T>
Mat<T> random_uniform(int r, int c, T lo, T hi, Rng& rng) {
  Mat<T> m(r, c);
  for (auto& x : m.v) x = lo + static_cast<T>(rng.uniform()) * (hi - lo);
  return m;
}

template <typename T>
Mat<T> random_normal(int r, int c, Rng& rng, T mean = T(0), T stddev = T(1)) {
  Mat<T> m(r, c);
  for (auto& x : m.v) x = mean + stddev * static_cast<T>(rng.normal());
  return m;
}

template <typename To, typename From>
Mat<To> cast_mat(const Mat<From>& a) {
  Mat<To> out(a.rows, a.cols);
  for (std::size_t i = 0; i < a.size(); ++i) out.v[i] = static_cast<To>(a.v[i]);
  return out;
}

}  // namespace fuseser

#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "catsg/core/errors.hpp"
#include "catsg/core/rng.hpp"

namespace catsg {

// Dense row-major tensor. Series data uses the [N, C, T] convention
// (sample, channel, time); matrices are [N, F].
template <class S>
struct Tensor {
  std::vector<int> shape;
  std::vector<S> v;

  Tensor() = default;
  explicit Tensor(std::vector<int> shp) : shape(std::move(shp)) {
    v.assign(numel_of(shape), S(0));
  }
  Tensor(std::vector<int> shp, std::vector<S> data)
      : shape(std::move(shp)), v(std::move(data)) {
    CATSG_CHECK(v.size() == numel_of(shape), NumericError,
                "tensor data does not match shape");
  }

  static size_t numel_of(const std::vector<int>& shp) {
    size_t n = 1;
    for (int d : shp) n *= static_cast<size_t>(d);
    return n;
  }

  size_t numel() const { return v.size(); }
  int dim(int i) const { return shape[static_cast<size_t>(i)]; }
  int rank() const { return static_cast<int>(shape.size()); }

  S* data() { return v.data(); }
  const S* data() const { return v.data(); }

  S& at(int i) { return v[static_cast<size_t>(i)]; }
  S at(int i) const { return v[static_cast<size_t>(i)]; }
  S& at(int i, int j) { return v[static_cast<size_t>(i) * dim(1) + j]; }
  S at(int i, int j) const { return v[static_cast<size_t>(i) * dim(1) + j]; }
  S& at(int i, int j, int k) {
    return v[(static_cast<size_t>(i) * dim(1) + j) * dim(2) + k];
  }
  S at(int i, int j, int k) const {
    return v[(static_cast<size_t>(i) * dim(1) + j) * dim(2) + k];
  }

  static Tensor zeros(std::vector<int> shp) { return Tensor(std::move(shp)); }

  static Tensor full(std::vector<int> shp, S value) {
    Tensor t(std::move(shp));
    std::fill(t.v.begin(), t.v.end(), value);
    return t;
  }

  static Tensor randn(std::vector<int> shp, Rng& rng, S stddev = S(1)) {
    Tensor t(std::move(shp));
    for (auto& x : t.v) x = static_cast<S>(rng.normal()) * stddev;
    return t;
  }

  static Tensor uniform(std::vector<int> shp, Rng& rng, S lo, S hi) {
    Tensor t(std::move(shp));
    for (auto& x : t.v) x = static_cast<S>(rng.uniform(lo, hi));
    return t;
  }

  Tensor reshaped(std::vector<int> shp) const {
    CATSG_CHECK(numel_of(shp) == numel(), NumericError, "reshape size mismatch");
    return Tensor(std::move(shp), v);
  }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  bool all_finite() const {
    for (S x : v)
      if (!std::isfinite(static_cast<double>(x))) return false;
    return true;
  }

  template <class T>
  Tensor<T> cast() const {
    Tensor<T> out;
    out.shape = shape;
    out.v.resize(v.size());
    for (size_t i = 0; i < v.size(); ++i) out.v[i] = static_cast<T>(v[i]);
    return out;
  }

  std::string shape_str() const {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i)
      os << (i ? "," : "") << shape[i];
    os << "]";
    return os.str();
  }
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

}  // namespace catsg

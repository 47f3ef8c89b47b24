#pragma once

// Small layer building blocks and generic helpers over models that expose
// `template <class F> void visit(F&& f)` calling f(name, ag::Var<T>&) for
// every trainable tensor.

#include "best/autograd.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <random>
#include <string>
#include <vector>

namespace best {

template <typename T, typename Rng>
Matrix<T> xavier_uniform(Index in, Index out, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
  std::uniform_real_distribution<double> u(-bound, bound);
  Matrix<T> w(in, out);
  for (Index i = 0; i < w.size(); ++i) w.data()[i] = static_cast<T>(u(rng));
  return w;
}

template <typename T>
struct Linear {
  ag::Var<T> weight;  ///< in x out
  ag::Var<T> bias;    ///< 1 x out

  template <typename Rng>
  static Linear init(Index in, Index out, Rng& rng) {
    return {ag::parameter<T>(xavier_uniform<T>(in, out, rng)), ag::parameter<T>(Matrix<T>::Zero(1, out))};
  }

  ag::Var<T> operator()(const ag::Var<T>& x) const { return ag::linear(x, weight, bias); }
  bool defined() const { return weight.defined(); }
  Index in_features() const { return weight.rows(); }
  Index out_features() const { return weight.cols(); }

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    if (!defined()) return;
    f(prefix + ".weight", weight);
    f(prefix + ".bias", bias);
  }
};

template <typename T>
struct LayerNorm {
  ag::Var<T> gain;
  ag::Var<T> bias;

  static LayerNorm init(Index dim) {
    return {ag::parameter<T>(Matrix<T>::Ones(1, dim)), ag::parameter<T>(Matrix<T>::Zero(1, dim))};
  }
  ag::Var<T> operator()(const ag::Var<T>& x) const { return ag::layer_norm(x, gain, bias); }

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + ".gain", gain);
    f(prefix + ".bias", bias);
  }
};

template <typename T, typename Model>
std::vector<ag::Var<T>> parameters_of(Model& m) {
  std::vector<ag::Var<T>> out;
  m.visit([&out](const std::string&, ag::Var<T>& v) { out.push_back(v); });
  return out;
}

/// Deep copy: the clone owns fresh parameter leaves with equal values.
template <typename T, typename Model>
Model clone_model(const Model& m) {
  Model c = m;
  c.visit([](const std::string&, ag::Var<T>& v) { v = ag::parameter<T>(Matrix<T>(v.value())); });
  return c;
}

/// FNV-1a over parameter names, shapes and raw bytes.
template <typename T, typename Model>
std::uint64_t parameter_hash(const Model& m) {
  Model view = m;
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&h](const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 1099511628211ull;
    }
  };
  view.visit([&](const std::string& name, ag::Var<T>& v) {
    mix(name.data(), name.size());
    const Index shape[2] = {v.rows(), v.cols()};
    mix(shape, sizeof shape);
    mix(v.value().data(), static_cast<std::size_t>(v.value().size()) * sizeof(T));
  });
  return h;
}

template <typename T, typename Model>
void zero_grads(Model& m) {
  m.visit([](const std::string&, ag::Var<T>& v) { v.zero_grad(); });
}

}  // namespace best

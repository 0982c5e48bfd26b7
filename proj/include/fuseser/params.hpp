#pragma once

#include <cmath>
#include <string>
#include <unordered_map>
#include <vector>

#include "fuseser/mat.hpp"
#include "fuseser/tape.hpp"

namespace fuseser {

enum class Init { Glorot, Zeros, Ones };

// Named trainable tensor with its gradient accumulator.
template <typename T>
struct Param {
  std::string name;
  Mat<T> value;
  Mat<T> grad;
};

// Ordered parameter collection; order fixes gradient-reduction and optimizer
// iteration order, which keeps runs bit-reproducible.
template <typename T>
struct ParamSet {
  std::vector<Param<T>> items;
  std::unordered_map<std::string, int> index;

  int add(const std::string& name, int rows, int cols, Init init, Rng& rng) {
    if (index.count(name)) throw ConfigError("duplicate parameter name: " + name);
    Mat<T> value;
    switch (init) {
      case Init::Glorot: {
        const T bound = std::sqrt(T(6) / T(rows + cols));
        value = random_uniform<T>(rows, cols, -bound, bound, rng);
        break;
      }
      case Init::Zeros:
        value = Mat<T>::zeros(rows, cols);
        break;
      case Init::Ones:
        value = Mat<T>::filled(rows, cols, T(1));
        break;
    }
    items.push_back(Param<T>{name, std::move(value), Mat<T>::zeros(rows, cols)});
    index.emplace(name, static_cast<int>(items.size()) - 1);
    return static_cast<int>(items.size()) - 1;
  }

  Param<T>& operator[](const std::string& name) {
    auto it = index.find(name);
    if (it == index.end()) throw ConfigError("unknown parameter: " + name);
    return items[it->second];
  }
  const Param<T>& operator[](const std::string& name) const {
    auto it = index.find(name);
    if (it == index.end()) throw ConfigError("unknown parameter: " + name);
    return items[it->second];
  }

  std::size_t size() const { return items.size(); }

  void zero_grads() {
    for (auto& p : items) std::fill(p.grad.v.begin(), p.grad.v.end(), T(0));
  }

  std::size_t num_elements() const {
    std::size_t n = 0;
    for (const auto& p : items) n += p.value.size();
    return n;
  }

  std::vector<Mat<T>> snapshot_values() const {
    std::vector<Mat<T>> out;
    out.reserve(items.size());
    for (const auto& p : items) out.push_back(p.value);
    return out;
  }

  void restore_values(const std::vector<Mat<T>>& values) {
    if (values.size() != items.size()) throw ConfigError("parameter snapshot size mismatch");
    for (std::size_t i = 0; i < items.size(); ++i) items[i].value = values[i];
  }
};

// Per-tape binding: leaf vars for every parameter, in set order.
template <typename T>
struct Bound {
  const ParamSet<T>* set = nullptr;
  std::vector<Var> vars;

  Var operator()(const std::string& name) const {
    auto it = set->index.find(name);
    if (it == set->index.end()) throw ConfigError("unknown parameter: " + name);
    return vars[it->second];
  }
};

template <typename T>
Bound<T> bind(Tape<T>& tape, const ParamSet<T>& params) {
  Bound<T> b;
  b.set = &params;
  b.vars.reserve(params.items.size());
  for (const auto& p : params.items) b.vars.push_back(tape.leaf(p.value, true));
  return b;
}

// Adds scale * (tape gradient of each bound param) into the set's grad
// buffers. Called in a fixed example order after parallel backward passes.
template <typename T>
void accumulate_grads(const Tape<T>& tape, const Bound<T>& bound, ParamSet<T>& params, T scale) {
  for (std::size_t i = 0; i < params.items.size(); ++i) {
    const Mat<T>* g = tape.grad_ptr(bound.vars[i]);
    if (!g) continue;
    Mat<T>& acc = params.items[i].grad;
    for (std::size_t j = 0; j < acc.size(); ++j) acc.v[j] += scale * g->v[j];
  }
}

}  // namespace fuseser

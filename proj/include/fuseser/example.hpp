#pragma once

#include <optional>
#include <string>
#include <vector>

#include "fuseser/mat.hpp"

namespace fuseser {

enum class RunMode { Train, Eval };

// One utterance. Storage precision is float (matching the feature-file
// payload); training/checking code casts to its working precision.
template <typename T>
struct ExampleT {
  std::string id;
  int label = -1;
  Mat<T> speech;  // frames x speech_dim
  Mat<T> text;    // tokens x text_dim
  std::vector<T> f0;
  Mat<T> mel;     // frames x bands
  std::optional<std::vector<T>> spectral;
};

using Example = ExampleT<float>;

template <typename To, typename From>
ExampleT<To> example_cast(const ExampleT<From>& e) {
  ExampleT<To> out;
  out.id = e.id;
  out.label = e.label;
  out.speech = cast_mat<To>(e.speech);
  out.text = cast_mat<To>(e.text);
  out.f0.assign(e.f0.begin(), e.f0.end());
  out.mel = cast_mat<To>(e.mel);
  if (e.spectral) out.spectral = std::vector<To>(e.spectral->begin(), e.spectral->end());
  return out;
}

}  // namespace fuseser

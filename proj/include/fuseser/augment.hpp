#pragma once

// Modified SeqAug: per-modality coin flip, then an independent temporal
// permutation of each selected feature dimension. Column multisets are
// preserved exactly; everything is a pure function of (input, cfg, stream).

#include <cmath>

#include "fuseser/example.hpp"
#include "fuseser/mat.hpp"

namespace fuseser {

struct AugmentConfig {
  double apply_prob = 0.5;
  double beta_a = 0.5;
  double beta_b = 0.5;
  std::uint64_t seed = 0;

  void validate() const {
    if (apply_prob < 0.0 || apply_prob > 1.0)
      throw ConfigError("augment.apply_prob: must be in [0, 1]");
    if (!(beta_a > 0.0) || !(beta_b > 0.0))
      throw ConfigError("augment.beta_a/beta_b: must be > 0");
  }
};

template <typename T>
void seqaug_inplace(Mat<T>& x, const AugmentConfig& cfg, Rng& rng) {
  if (x.rows <= 1) return;  // only the identity permutation exists
  if (rng.uniform() >= cfg.apply_prob) return;
  const double rho = rng.beta(cfg.beta_a, cfg.beta_b);
  const int n_sel = std::min(x.cols, static_cast<int>(std::ceil(rho * x.cols)));
  if (n_sel <= 0) return;
  const std::vector<int> dims = rng.sample_without_replacement(x.cols, n_sel);
  std::vector<T> col(x.rows);
  for (const int d : dims) {
    const std::vector<int> perm = rng.permutation(x.rows);
    for (int t = 0; t < x.rows; ++t) col[t] = x.at(perm[t], d);
    for (int t = 0; t < x.rows; ++t) x.at(t, d) = col[t];
  }
}

template <typename T>
Mat<T> seqaug(const Mat<T>& x, const AugmentConfig& cfg, Rng& rng) {
  Mat<T> out = x;
  seqaug_inplace(out, cfg, rng);
  return out;
}

// Independent coin flips and rng streams per modality; the streams derive
// from (cfg.seed, salt, utterance id) so worker count never changes results.
// F0 and mel are never touched.
template <typename T>
void augment_example(ExampleT<T>& ex, const AugmentConfig& cfg, std::uint64_t salt = 0) {
  const std::uint64_t base = splitmix64(cfg.seed ^ fnv1a(ex.id) ^ splitmix64(salt));
  Rng speech_rng(derive_seed(base, "seqaug.speech"));
  Rng text_rng(derive_seed(base, "seqaug.text"));
  seqaug_inplace(ex.speech, cfg, speech_rng);
  seqaug_inplace(ex.text, cfg, text_rng);
}

}  // namespace fuseser

#pragma once

// Prosodic (F0) and spectral branches. Each produces one fixed-width vector
// per utterance for concatenation ahead of the classifier.

#include <string>
#include <utility>
#include <vector>

#include "fuseser/layers.hpp"
#include "fuseser/params.hpp"
#include "fuseser/tape.hpp"

namespace fuseser {

// HTK mel scale
double hz_to_mel(double hz);

// Mel-scales voiced frames and maps them to uniform bins over
// [mel(fmin), mel(fmax)], clipped to [0, bins-1]. Unvoiced frames (hz <= 0)
// map to the padding index == bins.
std::vector<int> quantize_f0(const std::vector<double>& hz, double fmin, double fmax, int bins);

template <typename T>
std::vector<int> quantize_f0(const std::vector<T>& hz, double fmin, double fmax, int bins) {
  return quantize_f0(std::vector<double>(hz.begin(), hz.end()), fmin, fmax, bins);
}

// --- quantized-F0 embedding branch ----------------------------------------

struct F0EmbedVars {
  Var table;
  LinearVars proj;
};

// (bins+1) x embed_dim table; the padding row starts at zero but trains.
template <typename T>
void add_f0_embed_params(ParamSet<T>& ps, const std::string& prefix, int bins, int embed_dim,
                         int out_dim, Rng& rng) {
  const int row = ps.add(prefix + ".table", bins + 1, embed_dim, Init::Glorot, rng);
  Mat<T>& table = ps.items[row].value;
  for (int j = 0; j < embed_dim; ++j) table.at(bins, j) = T(0);
  add_linear_params(ps, prefix + ".proj", embed_dim, out_dim, rng);
}

template <typename T>
F0EmbedVars bind_f0_embed(const Bound<T>& b, const std::string& prefix) {
  return {b(prefix + ".table"), bind_linear(b, prefix + ".proj")};
}

// lookup -> per-frame projection -> mean over time
template <typename T>
Var f0_embed_branch(Tape<T>& tp, const std::vector<int>& indices, int bins,
                    const F0EmbedVars& fv) {
  if (indices.empty()) throw DataError("f0_embed_branch: empty index sequence");
  for (std::size_t i = 0; i < indices.size(); ++i)
    if (indices[i] < 0 || indices[i] > bins)
      throw DataError("f0_embed_branch: index " + std::to_string(indices[i]) + " at frame " +
                      std::to_string(i) + " outside [0," + std::to_string(bins) + "]");
  const Var emb = tp.gather_rows(fv.table, indices);
  return tp.mean_rows(linear(tp, emb, fv.proj));
}

// --- CNN baseline branch -----------------------------------------------

struct F0CnnVars {
  Var conv_w, conv_b, bn_g, bn_b;
  LinearVars proj;
};

template <typename T>
struct BnBuffers {
  Mat<T> running_mean;
  Mat<T> running_var;

  explicit BnBuffers(int channels = 0)
      : running_mean(Mat<T>::zeros(1, channels)), running_var(Mat<T>::filled(1, channels, T(1))) {}
};

template <typename T>
void add_f0_cnn_params(ParamSet<T>& ps, const std::string& prefix, int channels, int out_dim,
                       Rng& rng) {
  ps.add(prefix + ".conv.w", 3, channels, Init::Glorot, rng);  // kernel 3, 1 input channel
  ps.add(prefix + ".conv.b", 1, channels, Init::Zeros, rng);
  ps.add(prefix + ".bn.g", 1, channels, Init::Ones, rng);
  ps.add(prefix + ".bn.b", 1, channels, Init::Zeros, rng);
  add_linear_params(ps, prefix + ".proj", channels, out_dim, rng);
}

template <typename T>
F0CnnVars bind_f0_cnn(const Bound<T>& b, const std::string& prefix) {
  return {b(prefix + ".conv.w"), b(prefix + ".conv.b"), b(prefix + ".bn.g"), b(prefix + ".bn.b"),
          bind_linear(b, prefix + ".proj")};
}

// conv1d(k=3, stride 1, zero pad 1) -> batch norm -> ReLU -> linear -> mean
// pool. Training-mode batch stats are reported through *bn_stats so the
// caller can fold them into the running buffers in a deterministic order.
template <typename T>
Var f0_cnn_branch(Tape<T>& tp, Var track, const F0CnnVars& cv, const BnBuffers<T>& bn,
                  bool training, std::pair<Mat<T>, Mat<T>>* bn_stats = nullptr) {
  if (tp.val(track).rows < 3)
    throw DataError("f0_cnn_branch: needs at least 3 frames, got " +
                    std::to_string(tp.val(track).rows));
  const Var conv = tp.conv1d_same(track, cv.conv_w, cv.conv_b, 3);
  const Var normed = tp.batchnorm_cols(conv, cv.bn_g, cv.bn_b, bn.running_mean, bn.running_var,
                                       training, bn_stats);
  return tp.mean_rows(linear(tp, tp.relu(normed), cv.proj));
}

// r <- (1 - momentum) * r + momentum * batch_stat
template <typename T>
void bn_update_running(BnBuffers<T>& bn, const std::pair<Mat<T>, Mat<T>>& stats,
                       T momentum = T(0.1)) {
  for (std::size_t i = 0; i < bn.running_mean.size(); ++i) {
    bn.running_mean.v[i] = (T(1) - momentum) * bn.running_mean.v[i] + momentum * stats.first.v[i];
    bn.running_var.v[i] = (T(1) - momentum) * bn.running_var.v[i] + momentum * stats.second.v[i];
  }
}

// --- spectral branch (local stand-in encoder) ---------------------------

struct SpectralLocalVars {
  LinearVars band_proj;
  TransformerVars enc;
  LinearVars out_proj;
};

template <typename T>
void add_spectral_local_params(ParamSet<T>& ps, const std::string& prefix, int bands,
                               int local_dim, int out_dim, Rng& rng) {
  add_linear_params(ps, prefix + ".bands", bands, local_dim, rng);
  add_transformer_params(ps, prefix + ".enc", local_dim, rng);
  add_linear_params(ps, prefix + ".out", local_dim, out_dim, rng);
}

template <typename T>
SpectralLocalVars bind_spectral_local(const Bound<T>& b, const std::string& prefix) {
  return {bind_linear(b, prefix + ".bands"), bind_transformer(b, prefix + ".enc"),
          bind_linear(b, prefix + ".out")};
}

template <typename T>
Var spectral_local_branch(Tape<T>& tp, Var mel, int heads, const SpectralLocalVars& sv,
                          const DropoutCtx<T>& drop = {}) {
  const Var proj = linear(tp, mel, sv.band_proj);
  const Var enc = transformer_encoder_layer(tp, proj, heads, sv.enc, drop);
  return linear(tp, tp.mean_rows(enc), sv.out_proj);
}

}  // namespace fuseser

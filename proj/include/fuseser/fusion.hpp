#pragma once

// Speech-text fusion heads. All four strategies produce a pooled vector the
// same classifier consumes, so strategy and branch choices are plain config
// switches.

#include <optional>
#include <string>
#include <utility>

#include "fuseser/example.hpp"
#include "fuseser/features.hpp"
#include "fuseser/layers.hpp"

namespace fuseser {

enum class Strategy { Simple, Transformer, Hcam, Mdat };
enum class F0Variant { Quant, Cnn };
enum class MlpKind { ReluDefault, Swiglu };
enum class SpectralMode { Precomputed, Local };

std::string to_string(Strategy s);
Strategy strategy_from_string(const std::string& s);

struct HeadConfig {
  Strategy strategy = Strategy::Simple;
  int model_dim = 64;
  int heads = 0;  // 0 = strategy default (8 for MDAT, 4 otherwise)
  bool use_f0 = false;
  F0Variant f0_variant = F0Variant::Quant;
  bool use_spectral = false;
  SpectralMode spectral_mode = SpectralMode::Local;
  MlpKind mlp = MlpKind::ReluDefault;
  int num_classes = 0;
  double dropout = 0.1;

  // prosodic / spectral branch geometry
  int f0_bins = 256;
  double f0_fmin = 50.0;
  double f0_fmax = 1100.0;
  int f0_embed_dim = 256;
  int branch_dim = 512;  // output width of both branches
  int cnn_channels = 256;
  int spectral_local_dim = 128;
  int spectral_local_heads = 4;

  int resolved_heads() const {
    if (heads > 0) return heads;
    return strategy == Strategy::Mdat ? 8 : 4;
  }

  void validate() const;
};

// Refined per-modality sequences plus the pooled joint vector.
struct FusedVars {
  Var speech_refined;
  Var text_refined;
  Var pooled;
};

// Side outputs of one forward pass that the trainer must merge back into
// model state in a deterministic order (batch-norm statistics).
template <typename T>
struct ForwardAux {
  bool has_bn_stats = false;
  std::pair<Mat<T>, Mat<T>> bn_stats;
};

template <typename T>
class HeadModel {
public:
  HeadModel(HeadConfig cfg, int speech_dim, int text_dim, int mel_bands, std::uint64_t seed);

  const HeadConfig& config() const { return cfg_; }
  int speech_dim() const { return speech_dim_; }
  int text_dim() const { return text_dim_; }
  int mel_bands() const { return mel_bands_; }

  ParamSet<T>& params() { return params_; }
  const ParamSet<T>& params() const { return params_; }
  BnBuffers<T>& bn_buffers() { return bn_; }
  const BnBuffers<T>& bn_buffers() const { return bn_; }

  // Full assembly: project -> fuse -> branches -> classify. drop_rng must be
  // non-null in training mode whenever dropout > 0.
  Var forward(Tape<T>& tp, const Bound<T>& b, const ExampleT<T>& ex, RunMode mode,
              Rng* drop_rng = nullptr, ForwardAux<T>* aux = nullptr) const;

  // pieces, exposed so each contract is testable in isolation
  std::pair<Var, Var> project(Tape<T>& tp, const Bound<T>& b, const ExampleT<T>& ex) const;
  FusedVars fuse(Tape<T>& tp, const Bound<T>& b, Var speech, Var text, RunMode mode,
                 Rng* drop_rng) const;
  Var f0_branch(Tape<T>& tp, const Bound<T>& b, const ExampleT<T>& ex, RunMode mode,
                ForwardAux<T>* aux) const;
  Var spectral_branch(Tape<T>& tp, const Bound<T>& b, const ExampleT<T>& ex, RunMode mode,
                      Rng* drop_rng) const;
  Var classify(Tape<T>& tp, const Bound<T>& b, Var pooled, std::optional<Var> f0,
               std::optional<Var> spec, RunMode mode, Rng* drop_rng) const;

private:
  DropoutCtx<T> drop_ctx(RunMode mode, Rng* drop_rng) const {
    if (mode != RunMode::Train || !drop_rng) return {};
    return {static_cast<T>(cfg_.dropout), drop_rng};
  }

  HeadConfig cfg_;
  int speech_dim_;
  int text_dim_;
  int mel_bands_;
  ParamSet<T> params_;
  BnBuffers<T> bn_;
};

template <typename T>
HeadModel<T>::HeadModel(HeadConfig cfg, int speech_dim, int text_dim, int mel_bands,
                        std::uint64_t seed)
    : cfg_(std::move(cfg)), speech_dim_(speech_dim), text_dim_(text_dim), mel_bands_(mel_bands) {
  cfg_.validate();
  if (speech_dim_ < 1 || text_dim_ < 1)
    throw ConfigError("HeadModel: modality dims must be >= 1");
  Rng rng(derive_seed(seed, "head.init"));
  const int d = cfg_.model_dim;

  add_linear_params(params_, "proj.speech", speech_dim_, d, rng);
  add_linear_params(params_, "proj.text", text_dim_, d, rng);

  switch (cfg_.strategy) {
    case Strategy::Simple:
      break;
    case Strategy::Transformer:
      params_.add("fuse.type.speech", 1, d, Init::Zeros, rng);
      params_.add("fuse.type.text", 1, d, Init::Zeros, rng);
      add_transformer_params(params_, "fuse.enc", d, rng);
      break;
    case Strategy::Hcam:
      add_bigru_params(params_, "fuse.gru.speech", d, d / 2, rng);
      add_bigru_params(params_, "fuse.gru.text", d, d / 2, rng);
      add_mha_params(params_, "fuse.self.speech", d, rng);
      add_mha_params(params_, "fuse.self.text", d, rng);
      add_mha_params(params_, "fuse.cross.st", d, rng);
      add_mha_params(params_, "fuse.cross.ts", d, rng);
      add_attentive_pool_params(params_, "fuse.pool.speech", d, rng);
      add_attentive_pool_params(params_, "fuse.pool.text", d, rng);
      break;
    case Strategy::Mdat:
      add_gat_params(params_, "fuse.gat.speech", d, d, rng);
      add_gat_params(params_, "fuse.gat.text", d, d, rng);
      add_mha_params(params_, "fuse.cross.st", d, rng);
      add_mha_params(params_, "fuse.cross.ts", d, rng);
      add_transformer_params(params_, "fuse.enc.speech", d, rng);
      add_transformer_params(params_, "fuse.enc.text", d, rng);
      break;
  }

  if (cfg_.use_f0) {
    if (cfg_.f0_variant == F0Variant::Quant) {
      add_f0_embed_params(params_, "f0", cfg_.f0_bins, cfg_.f0_embed_dim, cfg_.branch_dim, rng);
    } else {
      add_f0_cnn_params(params_, "f0", cfg_.cnn_channels, cfg_.branch_dim, rng);
      bn_ = BnBuffers<T>(cfg_.cnn_channels);
    }
  }
  if (cfg_.use_spectral && cfg_.spectral_mode == SpectralMode::Local)
    add_spectral_local_params(params_, "spec", mel_bands_, cfg_.spectral_local_dim,
                              cfg_.branch_dim, rng);

  int cls_in = 2 * d;
  if (cfg_.use_f0) cls_in += cfg_.branch_dim;
  if (cfg_.use_spectral) cls_in += cfg_.branch_dim;
  if (cfg_.mlp == MlpKind::ReluDefault) {
    add_linear_params(params_, "cls.hidden", cls_in, d, rng);
    add_linear_params(params_, "cls.out", d, cfg_.num_classes, rng);
  } else {
    add_swiglu_params(params_, "cls", cls_in, d, cfg_.num_classes, rng);
  }
}

template <typename T>
std::pair<Var, Var> HeadModel<T>::project(Tape<T>& tp, const Bound<T>& b,
                                          const ExampleT<T>& ex) const {
  if (ex.speech.cols != speech_dim_)
    throw DataError("example '" + ex.id + "': speech dim " + std::to_string(ex.speech.cols) +
                    " does not match manifest dim " + std::to_string(speech_dim_));
  if (ex.text.cols != text_dim_)
    throw DataError("example '" + ex.id + "': text dim " + std::to_string(ex.text.cols) +
                    " does not match manifest dim " + std::to_string(text_dim_));
  const Var s = linear(tp, tp.constant(ex.speech), bind_linear(b, "proj.speech"));
  const Var t = linear(tp, tp.constant(ex.text), bind_linear(b, "proj.text"));
  return {s, t};
}

template <typename T>
FusedVars HeadModel<T>::fuse(Tape<T>& tp, const Bound<T>& b, Var speech, Var text, RunMode mode,
                             Rng* drop_rng) const {
  const int heads = cfg_.resolved_heads();
  const DropoutCtx<T> drop = drop_ctx(mode, drop_rng);
  switch (cfg_.strategy) {
    case Strategy::Simple: {
      const Var pooled = tp.concat_cols(mean_pool(tp, speech), mean_pool(tp, text));
      return {speech, text, pooled};
    }
    case Strategy::Transformer: {
      const int ts = tp.val(speech).rows;
      const int tt = tp.val(text).rows;
      const Var s_typed = tp.add_rowvec(speech, b("fuse.type.speech"));
      const Var t_typed = tp.add_rowvec(text, b("fuse.type.text"));
      const Var joint = tp.stack_rows({s_typed, t_typed});
      const Var enc =
          transformer_encoder_layer(tp, joint, heads, bind_transformer(b, "fuse.enc"), drop);
      const Var s_ref = tp.slice_rows(enc, 0, ts);
      const Var t_ref = tp.slice_rows(enc, ts, ts + tt);
      const Var pooled = tp.concat_cols(mean_pool(tp, s_ref), mean_pool(tp, t_ref));
      return {s_ref, t_ref, pooled};
    }
    case Strategy::Hcam: {
      const int hidden = cfg_.model_dim / 2;
      const Var s1 = bigru(tp, speech, hidden, bind_bigru(b, "fuse.gru.speech"));
      const Var t1 = bigru(tp, text, hidden, bind_bigru(b, "fuse.gru.text"));
      const Var s2 =
          tp.add(s1, multihead_attention(tp, s1, s1, s1, 1, bind_mha(b, "fuse.self.speech")));
      const Var t2 =
          tp.add(t1, multihead_attention(tp, t1, t1, t1, 1, bind_mha(b, "fuse.self.text")));
      const Var s3 =
          tp.add(s2, multihead_attention(tp, s2, t2, t2, heads, bind_mha(b, "fuse.cross.st")));
      const Var t3 =
          tp.add(t2, multihead_attention(tp, t2, s2, s2, heads, bind_mha(b, "fuse.cross.ts")));
      const Var pooled =
          tp.concat_cols(attentive_pool(tp, s3, bind_attentive_pool(b, "fuse.pool.speech")),
                         attentive_pool(tp, t3, bind_attentive_pool(b, "fuse.pool.text")));
      return {s3, t3, pooled};
    }
    case Strategy::Mdat: {
      const Var s1 = gat_layer(tp, speech, full_adjacency(tp.val(speech).rows),
                               bind_gat(b, "fuse.gat.speech"));
      const Var t1 =
          gat_layer(tp, text, full_adjacency(tp.val(text).rows), bind_gat(b, "fuse.gat.text"));
      const Var s2 = multihead_attention(tp, s1, t1, t1, heads, bind_mha(b, "fuse.cross.st"));
      const Var t2 = multihead_attention(tp, t1, s1, s1, heads, bind_mha(b, "fuse.cross.ts"));
      const Var s3 = transformer_encoder_layer(tp, s2, heads,
                                               bind_transformer(b, "fuse.enc.speech"), drop);
      const Var t3 =
          transformer_encoder_layer(tp, t2, heads, bind_transformer(b, "fuse.enc.text"), drop);
      const Var pooled = tp.concat_cols(mean_pool(tp, s3), mean_pool(tp, t3));
      return {s3, t3, pooled};
    }
  }
  throw ConfigError("fuse: unknown strategy");
}

template <typename T>
Var HeadModel<T>::f0_branch(Tape<T>& tp, const Bound<T>& b, const ExampleT<T>& ex, RunMode mode,
                            ForwardAux<T>* aux) const {
  if (ex.f0.empty()) throw DataError("example '" + ex.id + "': empty F0 track");
  if (cfg_.f0_variant == F0Variant::Quant) {
    const auto indices = quantize_f0(ex.f0, cfg_.f0_fmin, cfg_.f0_fmax, cfg_.f0_bins);
    return f0_embed_branch(tp, indices, cfg_.f0_bins, bind_f0_embed(b, "f0"));
  }
  Mat<T> track(static_cast<int>(ex.f0.size()), 1);
  for (std::size_t i = 0; i < ex.f0.size(); ++i) track.at(static_cast<int>(i), 0) = ex.f0[i];
  std::pair<Mat<T>, Mat<T>> stats;
  const bool training = mode == RunMode::Train;
  const Var out = f0_cnn_branch(tp, tp.constant(std::move(track)), bind_f0_cnn(b, "f0"), bn_,
                                training, training && aux ? &stats : nullptr);
  if (training && aux) {
    aux->has_bn_stats = true;
    aux->bn_stats = std::move(stats);
  }
  return out;
}

template <typename T>
Var HeadModel<T>::spectral_branch(Tape<T>& tp, const Bound<T>& b, const ExampleT<T>& ex,
                                  RunMode mode, Rng* drop_rng) const {
  if (cfg_.spectral_mode == SpectralMode::Precomputed) {
    if (!ex.spectral)
      throw DataError("example '" + ex.id + "': no precomputed spectral embedding");
    if (static_cast<int>(ex.spectral->size()) != cfg_.branch_dim)
      throw DataError("example '" + ex.id + "': spectral embedding dim " +
                      std::to_string(ex.spectral->size()) + " != " +
                      std::to_string(cfg_.branch_dim));
    Mat<T> v(1, cfg_.branch_dim);
    for (int j = 0; j < cfg_.branch_dim; ++j) v.at(0, j) = (*ex.spectral)[j];
    return tp.constant(std::move(v));
  }
  if (ex.mel.rows < 1) throw DataError("example '" + ex.id + "': empty mel bank");
  if (ex.mel.cols != mel_bands_)
    throw DataError("example '" + ex.id + "': mel bands " + std::to_string(ex.mel.cols) +
                    " does not match manifest bands " + std::to_string(mel_bands_));
  return spectral_local_branch(tp, tp.constant(ex.mel), cfg_.spectral_local_heads,
                               bind_spectral_local(b, "spec"), drop_ctx(mode, drop_rng));
}

template <typename T>
Var HeadModel<T>::classify(Tape<T>& tp, const Bound<T>& b, Var pooled, std::optional<Var> f0,
                           std::optional<Var> spec, RunMode mode, Rng* drop_rng) const {
  if (cfg_.use_f0 && !f0) throw DataError("classify: F0 branch enabled but missing");
  if (cfg_.use_spectral && !spec) throw DataError("classify: spectral branch enabled but missing");
  if (!cfg_.use_f0 && f0) throw ConfigError("classify: F0 branch supplied but disabled");
  if (!cfg_.use_spectral && spec)
    throw ConfigError("classify: spectral branch supplied but disabled");
  Var in = pooled;
  if (f0) in = tp.concat_cols(in, *f0);
  if (spec) in = tp.concat_cols(in, *spec);
  if (cfg_.mlp == MlpKind::ReluDefault) {
    const Var h = tp.relu(linear(tp, in, bind_linear(b, "cls.hidden")));
    const Var hd = drop_ctx(mode, drop_rng).apply(tp, h);
    return linear(tp, hd, bind_linear(b, "cls.out"));
  }
  return swiglu_mlp(tp, in, bind_swiglu(b, "cls"));
}

template <typename T>
Var HeadModel<T>::forward(Tape<T>& tp, const Bound<T>& b, const ExampleT<T>& ex, RunMode mode,
                          Rng* drop_rng, ForwardAux<T>* aux) const {
  const auto [s, t] = project(tp, b, ex);
  const FusedVars fused = fuse(tp, b, s, t, mode, drop_rng);
  std::optional<Var> f0v, specv;
  if (cfg_.use_f0) f0v = f0_branch(tp, b, ex, mode, aux);
  if (cfg_.use_spectral) specv = spectral_branch(tp, b, ex, mode, drop_rng);
  return classify(tp, b, fused.pooled, f0v, specv, mode, drop_rng);
}

}  // namespace fuseser

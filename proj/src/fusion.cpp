#include "fuseser/fusion.hpp"

namespace fuseser {

std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::Simple: return "SIMPLE";
    case Strategy::Transformer: return "TRANSFORMER";
    case Strategy::Hcam: return "HCAM";
    case Strategy::Mdat: return "MDAT";
  }
  return "?";
}

Strategy strategy_from_string(const std::string& s) {
  if (s == "SIMPLE") return Strategy::Simple;
  if (s == "TRANSFORMER") return Strategy::Transformer;
  if (s == "HCAM") return Strategy::Hcam;
  if (s == "MDAT") return Strategy::Mdat;
  throw ConfigError("unknown fusion strategy '" + s +
                    "' (expected SIMPLE, TRANSFORMER, HCAM or MDAT)");
}

void HeadConfig::validate() const {
  if (num_classes < 2) throw ConfigError("head.num_classes: must be >= 2");
  if (model_dim < 1) throw ConfigError("head.model_dim: must be >= 1");
  const int h = resolved_heads();
  if (model_dim % h != 0)
    throw ConfigError("head.model_dim: " + std::to_string(model_dim) + " not divisible by " +
                      std::to_string(h) + " attention heads");
  if (strategy == Strategy::Hcam && model_dim % 2 != 0)
    throw ConfigError("head.model_dim: HCAM needs an even model_dim for the BiGRU halves");
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("head.dropout: must be in [0, 1)");
  if (use_f0) {
    if (f0_bins < 2) throw ConfigError("head.f0_bins: must be >= 2");
    if (!(f0_fmin > 0.0) || !(f0_fmax > f0_fmin))
      throw ConfigError("head.f0_fmin/f0_fmax: need 0 < fmin < fmax");
    if (f0_embed_dim < 1) throw ConfigError("head.f0_embed_dim: must be >= 1");
    if (cnn_channels < 1) throw ConfigError("head.cnn_channels: must be >= 1");
  }
  if (branch_dim < 1) throw ConfigError("head.branch_dim: must be >= 1");
  if (use_spectral && spectral_mode == SpectralMode::Local) {
    if (spectral_local_dim < 1 || spectral_local_heads < 1 ||
        spectral_local_dim % spectral_local_heads != 0)
      throw ConfigError("head.spectral_local_dim: must be divisible by spectral_local_heads");
  }
}

}  // namespace fuseser

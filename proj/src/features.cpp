#include "fuseser/features.hpp"

#include <cmath>

namespace fuseser {

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }

std::vector<int> quantize_f0(const std::vector<double>& hz, double fmin, double fmax, int bins) {
  if (!(fmin > 0.0) || !(fmax > fmin))
    throw ConfigError("quantize_f0: need 0 < fmin < fmax, got fmin=" + std::to_string(fmin) +
                      " fmax=" + std::to_string(fmax));
  if (bins < 2) throw ConfigError("quantize_f0: need at least 2 bins");
  if (hz.empty()) throw DataError("quantize_f0: empty F0 track");

  const double mel_lo = hz_to_mel(fmin);
  const double mel_hi = hz_to_mel(fmax);
  std::vector<int> out(hz.size());
  for (std::size_t i = 0; i < hz.size(); ++i) {
    const double f = hz[i];
    if (!std::isfinite(f) || f < 0.0)
      throw DataError("quantize_f0: invalid F0 value at frame " + std::to_string(i));
    if (f <= 0.0) {
      out[i] = bins;  // padding index for unvoiced
      continue;
    }
    const double pos = (hz_to_mel(f) - mel_lo) / (mel_hi - mel_lo);
    int b = static_cast<int>(std::floor(pos * bins));
    b = std::max(0, std::min(bins - 1, b));
    out[i] = b;
  }
  return out;
}

}  // namespace fuseser

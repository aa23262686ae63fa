#include "pipeline/noise.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace tbsn {

void NoiseSpec::validate() const {
  // sigma 0 is allowed so the no-noise limit stays expressible in configs.
  if (!(sigma >= 0.0) || sigma > 1.0)
    throw std::invalid_argument("noise sigma must lie in [0, 1] image units");
  if (kernel.size() > 0) {
    if (kernel.n != 1 || kernel.c != 1 || kernel.h % 2 == 0 || kernel.w % 2 == 0)
      throw std::invalid_argument("correlation kernel must be 1x1xKhxKw with odd sides");
    double sum = 0.0;
    for (float v : kernel.v) {
      if (v < 0.0f) throw std::invalid_argument("correlation kernel must be nonnegative");
      sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-5)
      throw std::invalid_argument("correlation kernel must sum to 1");
  }
}

Tensor<float> default_correlation_kernel() {
  Tensor<float> k(1, 1, 3, 3);
  const float w[9] = {1, 2, 1, 2, 4, 2, 1, 2, 1};
  for (int i = 0; i < 9; ++i) k.v[i] = w[i] / 16.0f;
  return k;
}

Tensor<float> synthesize_noise_field(int n, int c, int h, int w, const NoiseSpec& spec,
                                     Rng& rng) {
  spec.validate();
  Tensor<float> field(n, c, h, w);
  for (auto& v : field.v) v = static_cast<float>(rng.normal());
  if (spec.kind == NoiseKind::gaussian_white) {
    for (auto& v : field.v) v *= static_cast<float>(spec.sigma);
    return field;
  }

  const Tensor<float> k = spec.kernel.size() > 0 ? spec.kernel : default_correlation_kernel();
  // Circular convolution keeps the field stationary, so one scalar rescale
  // restores the marginal standard deviation everywhere.
  double k2 = 0.0;
  for (float v : k.v) k2 += static_cast<double>(v) * v;
  const float gain = static_cast<float>(spec.sigma / std::sqrt(k2));
  const int ry = k.h / 2, rx = k.w / 2;

  Tensor<float> out(n, c, h, w);
  for (int in = 0; in < n; ++in)
    for (int ic = 0; ic < c; ++ic) {
      const float* src = field.plane(in, ic);
      float* dst = out.plane(in, ic);
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          double acc = 0.0;
          for (int i = -ry; i <= ry; ++i)
            for (int j = -rx; j <= rx; ++j) {
              const int sy = (y + i + h) % h;
              const int sx = (x + j + w) % w;
              acc += k.at(0, 0, i + ry, j + rx) * src[sy * w + sx];
            }
          dst[y * w + x] = static_cast<float>(acc) * gain;
        }
    }
  return out;
}

Tensor<float> synthesize_noisy(const Tensor<float>& clean, const NoiseSpec& spec,
                               Rng& rng) {
  Tensor<float> noise = synthesize_noise_field(clean.n, clean.c, clean.h, clean.w, spec, rng);
  for (size_t i = 0; i < clean.size(); ++i) noise.v[i] += clean.v[i];
  return noise;
}

Tensor<float> synthesize_noisy(const Tensor<float>& clean, const NoiseSpec& spec) {
  Rng rng(spec.seed);
  return synthesize_noisy(clean, spec, rng);
}

std::string noise_kind_name(NoiseKind k) {
  return k == NoiseKind::gaussian_white ? "gaussian_white" : "gaussian_correlated";
}

NoiseKind noise_kind_from_name(const std::string& s) {
  if (s == "gaussian_white") return NoiseKind::gaussian_white;
  if (s == "gaussian_correlated") return NoiseKind::gaussian_correlated;
  throw std::invalid_argument("unknown noise kind: " + s);
}

}  // namespace tbsn

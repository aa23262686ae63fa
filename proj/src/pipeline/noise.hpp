#pragma once

#include <cstdint>

#include "core/rng.hpp"
#include "core/tensor.hpp"

namespace tbsn {

enum class NoiseKind { gaussian_white, gaussian_correlated };

// Synthetic stand-in for camera noise. The correlated variant filters white
// Gaussian noise with a small normalized kernel (circular boundary, so the
// field is stationary) and rescales it back to the requested marginal sigma.
struct NoiseSpec {
  NoiseKind kind = NoiseKind::gaussian_correlated;
  double sigma = 25.0 / 255.0;
  Tensor<float> kernel;  // used by the correlated kind; empty selects default
  uint64_t seed = 0;

  void validate() const;
};

// Bilinear weights [[1,2,1],[2,4,2],[1,2,1]] / 16.
Tensor<float> default_correlation_kernel();

// One noise field, N(0, sigma^2) marginals, channels independent.
Tensor<float> synthesize_noise_field(int n, int c, int h, int w, const NoiseSpec& spec,
                                     Rng& rng);

// clean + noise. Not clipped: clipping would bias training targets, so it
// happens only at image I/O boundaries.
Tensor<float> synthesize_noisy(const Tensor<float>& clean, const NoiseSpec& spec,
                               Rng& rng);
Tensor<float> synthesize_noisy(const Tensor<float>& clean, const NoiseSpec& spec);

std::string noise_kind_name(NoiseKind k);
NoiseKind noise_kind_from_name(const std::string& s);

}  // namespace tbsn

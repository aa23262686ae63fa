#pragma once

#include "core/tensor.hpp"

namespace tbsn {

inline constexpr double kPsnrCap = 100.0;

// Both metrics clip their inputs to [0, peak] first, matching how the
// images would be written to disk.
double psnr(const Tensor<float>& a, const Tensor<float>& b, double peak = 1.0);

// Single-scale structural similarity, 11x11 Gaussian window (sigma 1.5),
// evaluated where the window fits entirely, averaged over channels.
double ssim(const Tensor<float>& a, const Tensor<float>& b, double peak = 1.0);

Tensor<float> clip01(const Tensor<float>& x);

}  // namespace tbsn

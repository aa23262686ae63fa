#include "pipeline/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace tbsn {

namespace {

float clipf(float v, float peak) { return std::clamp(v, 0.0f, peak); }

std::vector<double> gaussian_window(int radius, double sigma) {
  std::vector<double> w(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    w[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    sum += w[i + radius];
  }
  for (auto& v : w) v /= sum;
  return w;
}

// Separable Gaussian filtering restricted to fully covered positions.
std::vector<double> gauss_filter_valid(const float* img, int h, int w,
                                       const std::vector<double>& win, int* oh, int* ow) {
  const int r = static_cast<int>(win.size()) / 2;
  *oh = h - 2 * r;
  *ow = w - 2 * r;
  std::vector<double> rows(static_cast<size_t>(h) * *ow);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < *ow; ++x) {
      double acc = 0.0;
      for (int j = 0; j < 2 * r + 1; ++j) acc += win[j] * img[y * w + x + j];
      rows[static_cast<size_t>(y) * *ow + x] = acc;
    }
  std::vector<double> out(static_cast<size_t>(*oh) * *ow);
  for (int y = 0; y < *oh; ++y)
    for (int x = 0; x < *ow; ++x) {
      double acc = 0.0;
      for (int i = 0; i < 2 * r + 1; ++i) acc += win[i] * rows[static_cast<size_t>(y + i) * *ow + x];
      out[static_cast<size_t>(y) * *ow + x] = acc;
    }
  return out;
}

}  // namespace

Tensor<float> clip01(const Tensor<float>& x) {
  Tensor<float> out = x;
  for (auto& v : out.v) v = clipf(v, 1.0f);
  return out;
}

double psnr(const Tensor<float>& a, const Tensor<float>& b, double peak) {
  check_same_shape(a, b, "psnr");
  double mse = 0.0;
  const float p = static_cast<float>(peak);
  for (size_t i = 0; i < a.size(); ++i) {
    const double d = clipf(a.v[i], p) - clipf(b.v[i], p);
    mse += d * d;
  }
  mse /= static_cast<double>(a.size());
  if (mse <= 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(peak * peak / mse));
}

double ssim(const Tensor<float>& a, const Tensor<float>& b, double peak) {
  check_same_shape(a, b, "ssim");
  const int radius = 5;  // 11x11 window
  if (a.h < 2 * radius + 1 || a.w < 2 * radius + 1)
    throw std::invalid_argument("ssim: image smaller than the 11x11 window");
  const std::vector<double> win = gaussian_window(radius, 1.5);
  const double c1 = (0.01 * peak) * (0.01 * peak);
  const double c2 = (0.03 * peak) * (0.03 * peak);
  const float p = static_cast<float>(peak);

  double total = 0.0;
  for (int n = 0; n < a.n; ++n)
    for (int c = 0; c < a.c; ++c) {
      std::vector<float> xa(a.h * static_cast<size_t>(a.w)), xb(xa.size()),
          xaa(xa.size()), xbb(xa.size()), xab(xa.size());
      const float* pa = a.plane(n, c);
      const float* pb = b.plane(n, c);
      for (size_t i = 0; i < xa.size(); ++i) {
        xa[i] = clipf(pa[i], p);
        xb[i] = clipf(pb[i], p);
        xaa[i] = xa[i] * xa[i];
        xbb[i] = xb[i] * xb[i];
        xab[i] = xa[i] * xb[i];
      }
      int oh = 0, ow = 0;
      const auto mu_a = gauss_filter_valid(xa.data(), a.h, a.w, win, &oh, &ow);
      const auto mu_b = gauss_filter_valid(xb.data(), a.h, a.w, win, &oh, &ow);
      const auto m_aa = gauss_filter_valid(xaa.data(), a.h, a.w, win, &oh, &ow);
      const auto m_bb = gauss_filter_valid(xbb.data(), a.h, a.w, win, &oh, &ow);
      const auto m_ab = gauss_filter_valid(xab.data(), a.h, a.w, win, &oh, &ow);
      double acc = 0.0;
      for (size_t i = 0; i < mu_a.size(); ++i) {
        const double va = m_aa[i] - mu_a[i] * mu_a[i];
        const double vb = m_bb[i] - mu_b[i] * mu_b[i];
        const double cov = m_ab[i] - mu_a[i] * mu_b[i];
        acc += ((2 * mu_a[i] * mu_b[i] + c1) * (2 * cov + c2)) /
               ((mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + c1) * (va + vb + c2));
      }
      total += acc / static_cast<double>(mu_a.size());
    }
  return total / (static_cast<double>(a.n) * a.c);
}

}  // namespace tbsn

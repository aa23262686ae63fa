#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace tbsn {

// Dense 4-axis array in (batch, channel, height, width) order, row-major,
// contiguous. Carries images in [0,1] and intermediate features alike.
template <typename T>
struct Tensor {
  int n = 0, c = 0, h = 0, w = 0;
  std::vector<T> v;

  Tensor() = default;
  Tensor(int n_, int c_, int h_, int w_)
      : n(n_), c(c_), h(h_), w(w_), v(static_cast<size_t>(n_) * c_ * h_ * w_, T(0)) {
    if (n_ < 1 || c_ < 1 || h_ < 1 || w_ < 1)
      throw std::invalid_argument("Tensor: all dims must be >= 1");
  }

  size_t size() const { return v.size(); }
  bool same_shape(const Tensor& o) const {
    return n == o.n && c == o.c && h == o.h && w == o.w;
  }
  std::string shape_str() const {
    return "(" + std::to_string(n) + "," + std::to_string(c) + "," +
           std::to_string(h) + "," + std::to_string(w) + ")";
  }

  T* data() { return v.data(); }
  const T* data() const { return v.data(); }

  size_t idx(int in, int ic, int iy, int ix) const {
    return ((static_cast<size_t>(in) * c + ic) * h + iy) * w + ix;
  }
  T& at(int in, int ic, int iy, int ix) { return v[idx(in, ic, iy, ix)]; }
  const T& at(int in, int ic, int iy, int ix) const { return v[idx(in, ic, iy, ix)]; }

  // Pointer to one (n, c) plane of h*w contiguous values.
  T* plane(int in, int ic) { return v.data() + (static_cast<size_t>(in) * c + ic) * h * w; }
  const T* plane(int in, int ic) const {
    return v.data() + (static_cast<size_t>(in) * c + ic) * h * w;
  }

  void fill(T x) { std::fill(v.begin(), v.end(), x); }

  bool all_finite() const {
    for (T x : v)
      if (!std::isfinite(static_cast<double>(x))) return false;
    return true;
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(n, c, h, w);
    for (size_t i = 0; i < v.size(); ++i) out.v[i] = static_cast<U>(v[i]);
    return out;
  }
};

template <typename T>
inline void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* where) {
  if (!a.same_shape(b))
    throw std::invalid_argument(std::string(where) + ": shape mismatch " + a.shape_str() +
                                " vs " + b.shape_str());
}

// Zero-pads spatially by (top, bottom, left, right).
template <typename T>
Tensor<T> pad_zero(const Tensor<T>& x, int top, int bottom, int left, int right) {
  Tensor<T> out(x.n, x.c, x.h + top + bottom, x.w + left + right);
  for (int in = 0; in < x.n; ++in)
    for (int ic = 0; ic < x.c; ++ic)
      for (int iy = 0; iy < x.h; ++iy)
        std::copy_n(&x.at(in, ic, iy, 0), x.w, &out.at(in, ic, iy + top, left));
  return out;
}

template <typename T>
Tensor<T> crop(const Tensor<T>& x, int top, int left, int out_h, int out_w) {
  if (top + out_h > x.h || left + out_w > x.w)
    throw std::invalid_argument("crop: region outside tensor");
  Tensor<T> out(x.n, x.c, out_h, out_w);
  for (int in = 0; in < x.n; ++in)
    for (int ic = 0; ic < x.c; ++ic)
      for (int iy = 0; iy < out_h; ++iy)
        std::copy_n(&x.at(in, ic, top + iy, left), out_w, &out.at(in, ic, iy, 0));
  return out;
}

// Accumulates the interior of `g` (as produced against a zero-padded tensor)
// back onto the unpadded gradient. Inverse of pad_zero for gradients.
template <typename T>
Tensor<T> unpad_grad(const Tensor<T>& g, int top, int left, int out_h, int out_w) {
  return crop(g, top, left, out_h, out_w);
}

}  // namespace tbsn

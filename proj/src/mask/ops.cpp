#include "mask/ops.hpp"

#include <stdexcept>
#include <string>

#include "core/gemm.hpp"

namespace tbsn {

namespace {

template <typename T>
void check_conv_args(const Tensor<T>& x, const Tensor<T>& w, const std::vector<T>* bias,
                     int dilation, int groups) {
  if (w.h % 2 == 0 || w.w % 2 == 0)
    throw std::invalid_argument("conv2d: kernel dims must be odd, got " + w.shape_str());
  if (dilation < 1) throw std::invalid_argument("conv2d: dilation must be >= 1");
  if (groups < 1 || x.c % groups != 0 || w.n % groups != 0)
    throw std::invalid_argument("conv2d: groups must divide both channel counts");
  if (w.c != x.c / groups)
    throw std::invalid_argument("conv2d: weight expects " + std::to_string(w.c) +
                                " input channels per group, input has " +
                                std::to_string(x.c / groups));
  if (bias && static_cast<int>(bias->size()) != w.n)
    throw std::invalid_argument("conv2d: bias length mismatch");
}

// Unfolds channels [c0, c0+cn) of item n into a (cn*kh*kw) x (H*W) matrix
// with same-size zero padding.
template <typename T>
void im2col(const Tensor<T>& x, int n, int c0, int cn, int kh, int kw, int dilation,
            T* col) {
  const int H = x.h, W = x.w;
  const int ph = dilation * (kh / 2), pw = dilation * (kw / 2);
  size_t r = 0;
  for (int c = 0; c < cn; ++c) {
    const T* plane = x.plane(n, c0 + c);
    for (int i = 0; i < kh; ++i)
      for (int j = 0; j < kw; ++j, ++r) {
        T* dst = col + r * static_cast<size_t>(H) * W;
        const int dy = dilation * i - ph, dx = dilation * j - pw;
        for (int y = 0; y < H; ++y) {
          const int sy = y + dy;
          T* row = dst + static_cast<size_t>(y) * W;
          if (sy < 0 || sy >= H) {
            for (int xx = 0; xx < W; ++xx) row[xx] = 0;
            continue;
          }
          const T* src = plane + static_cast<size_t>(sy) * W;
          for (int xx = 0; xx < W; ++xx) {
            const int sx = xx + dx;
            row[xx] = (sx < 0 || sx >= W) ? T(0) : src[sx];
          }
        }
      }
  }
}

// Scatters a column matrix back, accumulating into d_x.
template <typename T>
void col2im_acc(const T* col, int n, int c0, int cn, int kh, int kw, int dilation,
                Tensor<T>& d_x) {
  const int H = d_x.h, W = d_x.w;
  const int ph = dilation * (kh / 2), pw = dilation * (kw / 2);
  size_t r = 0;
  for (int c = 0; c < cn; ++c) {
    T* plane = d_x.plane(n, c0 + c);
    for (int i = 0; i < kh; ++i)
      for (int j = 0; j < kw; ++j, ++r) {
        const T* src = col + r * static_cast<size_t>(H) * W;
        const int dy = dilation * i - ph, dx = dilation * j - pw;
        for (int y = 0; y < H; ++y) {
          const int sy = y + dy;
          if (sy < 0 || sy >= H) continue;
          T* row = plane + static_cast<size_t>(sy) * W;
          const T* srow = src + static_cast<size_t>(y) * W;
          for (int xx = 0; xx < W; ++xx) {
            const int sx = xx + dx;
            if (sx >= 0 && sx < W) row[sx] += srow[xx];
          }
        }
      }
  }
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const std::vector<T>* bias,
                 int dilation, int groups) {
  check_conv_args(x, w, bias, dilation, groups);
  const int cin_g = x.c / groups, cout_g = w.n / groups;
  const int hw = x.h * x.w;
  Tensor<T> out(x.n, w.n, x.h, x.w);

  if (w.h == 1 && w.w == 1) {
    for (int n = 0; n < x.n; ++n)
      for (int g = 0; g < groups; ++g)
        matmul<T>(false, false, cout_g, hw, cin_g,
                  w.data() + static_cast<size_t>(g) * cout_g * cin_g,
                  x.plane(n, g * cin_g), out.plane(n, g * cout_g));
  } else if (cin_g == 1) {
    const int ph = dilation * (w.h / 2), pw = dilation * (w.w / 2);
    for (int n = 0; n < x.n; ++n)
      for (int co = 0; co < w.n; ++co) {
        const int ci = co / cout_g;
        const T* src = x.plane(n, ci);
        const T* ker = w.data() + static_cast<size_t>(co) * w.h * w.w;
        T* dst = out.plane(n, co);
        for (int y = 0; y < x.h; ++y)
          for (int xx = 0; xx < x.w; ++xx) {
            T acc = 0;
            for (int i = 0; i < w.h; ++i) {
              const int sy = y + dilation * i - ph;
              if (sy < 0 || sy >= x.h) continue;
              for (int j = 0; j < w.w; ++j) {
                const int sx = xx + dilation * j - pw;
                if (sx < 0 || sx >= x.w) continue;
                acc += ker[i * w.w + j] * src[static_cast<size_t>(sy) * x.w + sx];
              }
            }
            dst[static_cast<size_t>(y) * x.w + xx] = acc;
          }
      }
  } else {
    const int krows = cin_g * w.h * w.w;
    std::vector<T> col(static_cast<size_t>(krows) * hw);
    for (int n = 0; n < x.n; ++n)
      for (int g = 0; g < groups; ++g) {
        im2col(x, n, g * cin_g, cin_g, w.h, w.w, dilation, col.data());
        matmul<T>(false, false, cout_g, hw, krows,
                  w.data() + static_cast<size_t>(g) * cout_g * krows, col.data(),
                  out.plane(n, g * cout_g));
      }
  }

  if (bias)
    for (int n = 0; n < out.n; ++n)
      for (int co = 0; co < out.c; ++co) {
        T* dst = out.plane(n, co);
        const T b = (*bias)[co];
        for (int i = 0; i < hw; ++i) dst[i] += b;
      }
  return out;
}

template <typename T>
void conv2d_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& d_out,
                     int dilation, int groups, Tensor<T>* d_x, Tensor<T>* d_w,
                     std::vector<T>* d_bias) {
  check_conv_args<T>(x, w, nullptr, dilation, groups);
  if (d_out.n != x.n || d_out.c != w.n || d_out.h != x.h || d_out.w != x.w)
    throw std::invalid_argument("conv2d_backward: d_out shape mismatch");
  if (d_w && !d_w->same_shape(w))
    throw std::invalid_argument("conv2d_backward: d_w shape mismatch");
  const int cin_g = x.c / groups, cout_g = w.n / groups;
  const int hw = x.h * x.w;

  if (d_bias) {
    for (int n = 0; n < d_out.n; ++n)
      for (int co = 0; co < d_out.c; ++co) {
        const T* src = d_out.plane(n, co);
        T acc = 0;
        for (int i = 0; i < hw; ++i) acc += src[i];
        (*d_bias)[co] += acc;
      }
  }

  if (w.h == 1 && w.w == 1) {
    if (d_x) {
      for (int n = 0; n < x.n; ++n)
        for (int g = 0; g < groups; ++g)
          matmul<T>(true, false, cin_g, hw, cout_g,
                    w.data() + static_cast<size_t>(g) * cout_g * cin_g,
                    d_out.plane(n, g * cout_g), d_x->plane(n, g * cin_g));
    }
    if (d_w) {
      for (int n = 0; n < x.n; ++n)
        for (int g = 0; g < groups; ++g)
          matmul<T>(false, true, cout_g, cin_g, hw, d_out.plane(n, g * cout_g),
                    x.plane(n, g * cin_g),
                    d_w->data() + static_cast<size_t>(g) * cout_g * cin_g, T(1), T(1));
    }
    return;
  }

  if (cin_g == 1) {
    const int ph = dilation * (w.h / 2), pw = dilation * (w.w / 2);
    if (d_x) d_x->fill(T(0));
    for (int n = 0; n < x.n; ++n)
      for (int co = 0; co < w.n; ++co) {
        const int ci = co / cout_g;
        const T* src = x.plane(n, ci);
        const T* gout = d_out.plane(n, co);
        T* gker = d_w ? d_w->data() + static_cast<size_t>(co) * w.h * w.w : nullptr;
        T* gsrc = d_x ? d_x->plane(n, ci) : nullptr;
        const T* ker = w.data() + static_cast<size_t>(co) * w.h * w.w;
        for (int y = 0; y < x.h; ++y)
          for (int xx = 0; xx < x.w; ++xx) {
            const T g = gout[static_cast<size_t>(y) * x.w + xx];
            if (g == T(0)) continue;
            for (int i = 0; i < w.h; ++i) {
              const int sy = y + dilation * i - ph;
              if (sy < 0 || sy >= x.h) continue;
              for (int j = 0; j < w.w; ++j) {
                const int sx = xx + dilation * j - pw;
                if (sx < 0 || sx >= x.w) continue;
                const size_t si = static_cast<size_t>(sy) * x.w + sx;
                if (gker) gker[i * w.w + j] += g * src[si];
                if (gsrc) gsrc[si] += g * ker[i * w.w + j];
              }
            }
          }
      }
    return;
  }

  const int krows = cin_g * w.h * w.w;
  std::vector<T> col(static_cast<size_t>(krows) * hw);
  std::vector<T> d_col(static_cast<size_t>(krows) * hw);
  if (d_x) d_x->fill(T(0));
  for (int n = 0; n < x.n; ++n)
    for (int g = 0; g < groups; ++g) {
      if (d_w) {
        im2col(x, n, g * cin_g, cin_g, w.h, w.w, dilation, col.data());
        matmul<T>(false, true, cout_g, krows, hw, d_out.plane(n, g * cout_g), col.data(),
                  d_w->data() + static_cast<size_t>(g) * cout_g * krows, T(1), T(1));
      }
      if (d_x) {
        matmul<T>(true, false, krows, hw, cout_g,
                  w.data() + static_cast<size_t>(g) * cout_g * krows,
                  d_out.plane(n, g * cout_g), d_col.data());
        col2im_acc(d_col.data(), n, g * cin_g, cin_g, w.h, w.w, dilation, *d_x);
      }
    }
}

template <typename T>
void zero_center_tap(Tensor<T>& w) {
  if (w.h != 3 || w.w != 3)
    throw std::invalid_argument("zero_center_tap expects a 3x3 kernel, got " +
                                w.shape_str());
  for (int co = 0; co < w.n; ++co)
    for (int ci = 0; ci < w.c; ++ci) w.at(co, ci, 1, 1) = T(0);
}

template <typename T>
Tensor<T> centrally_masked_conv(const Tensor<T>& x, const Tensor<T>& w,
                                const std::vector<T>* bias) {
  Tensor<T> wm = w;
  zero_center_tap(wm);
  return conv2d(x, wm, bias, 1, 1);
}

template <typename T>
void centrally_masked_conv_backward(const Tensor<T>& x, const Tensor<T>& w,
                                    const Tensor<T>& d_out, Tensor<T>* d_x, Tensor<T>* d_w,
                                    std::vector<T>* d_bias) {
  Tensor<T> wm = w;
  zero_center_tap(wm);
  if (d_w) {
    // The center parameter is structurally outside the function; its gradient
    // contribution must stay zero.
    Tensor<T> local(d_w->n, d_w->c, d_w->h, d_w->w);
    local.fill(T(0));
    conv2d_backward(x, wm, d_out, 1, 1, d_x, &local, d_bias);
    zero_center_tap(local);
    for (size_t i = 0; i < local.v.size(); ++i) d_w->v[i] += local.v[i];
  } else {
    conv2d_backward<T>(x, wm, d_out, 1, 1, d_x, nullptr, d_bias);
  }
}

template <typename T>
std::pair<Tensor<T>, PDLayout> pd_down(const Tensor<T>& x, int f) {
  if (f < 1) throw std::invalid_argument("pd_down: factor must be >= 1");
  PDLayout lay;
  lay.factor = f;
  lay.orig_height = x.h;
  lay.orig_width = x.w;
  lay.pad_bottom = (f - x.h % f) % f;
  lay.pad_right = (f - x.w % f) % f;
  lay.padded_height = x.h + lay.pad_bottom;
  lay.padded_width = x.w + lay.pad_right;
  if (lay.pad_bottom > x.h - 1 || lay.pad_right > x.w - 1)
    throw std::invalid_argument("pd_down: image too small to reflect-pad to a multiple of " +
                                std::to_string(f));
  const int hf = lay.padded_height / f, wf = lay.padded_width / f;
  Tensor<T> out(x.n, x.c, lay.padded_height, lay.padded_width);
  for (int n = 0; n < x.n; ++n)
    for (int c = 0; c < x.c; ++c) {
      const T* src = x.plane(n, c);
      T* dst = out.plane(n, c);
      for (int i = 0; i < lay.padded_height; ++i) {
        const int si = i < x.h ? i : 2 * x.h - 2 - i;
        const int oy = i / f + (i % f) * hf;
        for (int j = 0; j < lay.padded_width; ++j) {
          const int sj = j < x.w ? j : 2 * x.w - 2 - j;
          const int ox = j / f + (j % f) * wf;
          dst[static_cast<size_t>(oy) * lay.padded_width + ox] =
              src[static_cast<size_t>(si) * x.w + sj];
        }
      }
    }
  return {std::move(out), lay};
}

template <typename T>
Tensor<T> pd_up(const Tensor<T>& y, const PDLayout& lay) {
  if (y.h != lay.padded_height || y.w != lay.padded_width)
    throw std::invalid_argument("pd_up: tensor does not match layout, got " + y.shape_str());
  const int f = lay.factor;
  const int hf = lay.padded_height / f, wf = lay.padded_width / f;
  Tensor<T> out(y.n, y.c, lay.orig_height, lay.orig_width);
  for (int n = 0; n < y.n; ++n)
    for (int c = 0; c < y.c; ++c) {
      const T* src = y.plane(n, c);
      T* dst = out.plane(n, c);
      for (int i = 0; i < lay.orig_height; ++i) {
        const int sy = i / f + (i % f) * hf;
        for (int j = 0; j < lay.orig_width; ++j) {
          const int sx = j / f + (j % f) * wf;
          dst[static_cast<size_t>(i) * lay.orig_width + j] =
              src[static_cast<size_t>(sy) * lay.padded_width + sx];
        }
      }
    }
  return out;
}

template <typename T>
Tensor<T> parity_down(const Tensor<T>& x) {
  if (x.h % 2 != 0 || x.w % 2 != 0)
    throw std::invalid_argument("parity_down: spatial dims must be even, got " +
                                x.shape_str());
  const int hh = x.h / 2, hw = x.w / 2;
  Tensor<T> out(x.n * 4, x.c, hh, hw);
  for (int n = 0; n < x.n; ++n)
    for (int pr = 0; pr < 2; ++pr)
      for (int pc = 0; pc < 2; ++pc) {
        const int on = n * 4 + pr * 2 + pc;
        for (int c = 0; c < x.c; ++c) {
          const T* src = x.plane(n, c);
          T* dst = out.plane(on, c);
          for (int i = 0; i < hh; ++i)
            for (int j = 0; j < hw; ++j)
              dst[static_cast<size_t>(i) * hw + j] =
                  src[static_cast<size_t>(2 * i + pr) * x.w + (2 * j + pc)];
        }
      }
  return out;
}

template <typename T>
Tensor<T> parity_up(const Tensor<T>& y) {
  if (y.n % 4 != 0)
    throw std::invalid_argument("parity_up: batch must be divisible by 4, got " +
                                y.shape_str());
  Tensor<T> out(y.n / 4, y.c, y.h * 2, y.w * 2);
  for (int n = 0; n < out.n; ++n)
    for (int pr = 0; pr < 2; ++pr)
      for (int pc = 0; pc < 2; ++pc) {
        const int sn = n * 4 + pr * 2 + pc;
        for (int c = 0; c < y.c; ++c) {
          const T* src = y.plane(sn, c);
          T* dst = out.plane(n, c);
          for (int i = 0; i < y.h; ++i)
            for (int j = 0; j < y.w; ++j)
              dst[static_cast<size_t>(2 * i + pr) * out.w + (2 * j + pc)] =
                  src[static_cast<size_t>(i) * y.w + j];
        }
      }
  return out;
}

template <typename T>
Tensor<T> pixel_unshuffle_down(const Tensor<T>& x) {
  if (x.h % 2 != 0 || x.w % 2 != 0)
    throw std::invalid_argument("pixel_unshuffle_down: spatial dims must be even, got " +
                                x.shape_str());
  const int hh = x.h / 2, hw = x.w / 2;
  Tensor<T> out(x.n, x.c * 4, hh, hw);
  for (int n = 0; n < x.n; ++n)
    for (int c = 0; c < x.c; ++c)
      for (int pr = 0; pr < 2; ++pr)
        for (int pc = 0; pc < 2; ++pc) {
          const T* src = x.plane(n, c);
          T* dst = out.plane(n, c * 4 + pr * 2 + pc);
          for (int i = 0; i < hh; ++i)
            for (int j = 0; j < hw; ++j)
              dst[static_cast<size_t>(i) * hw + j] =
                  src[static_cast<size_t>(2 * i + pr) * x.w + (2 * j + pc)];
        }
  return out;
}

template <typename T>
Tensor<T> pixel_shuffle_up(const Tensor<T>& y) {
  if (y.c % 4 != 0)
    throw std::invalid_argument("pixel_shuffle_up: channels must be divisible by 4, got " +
                                y.shape_str());
  Tensor<T> out(y.n, y.c / 4, y.h * 2, y.w * 2);
  for (int n = 0; n < y.n; ++n)
    for (int c = 0; c < out.c; ++c)
      for (int pr = 0; pr < 2; ++pr)
        for (int pc = 0; pc < 2; ++pc) {
          const T* src = y.plane(n, c * 4 + pr * 2 + pc);
          T* dst = out.plane(n, c);
          for (int i = 0; i < y.h; ++i)
            for (int j = 0; j < y.w; ++j)
              dst[static_cast<size_t>(2 * i + pr) * out.w + (2 * j + pc)] =
                  src[static_cast<size_t>(i) * y.w + j];
        }
  return out;
}

#define TBSN_INSTANTIATE(T)                                                               \
  template Tensor<T> conv2d<T>(const Tensor<T>&, const Tensor<T>&, const std::vector<T>*, \
                               int, int);                                                 \
  template void conv2d_backward<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,  \
                                   int, int, Tensor<T>*, Tensor<T>*, std::vector<T>*);    \
  template void zero_center_tap<T>(Tensor<T>&);                                           \
  template Tensor<T> centrally_masked_conv<T>(const Tensor<T>&, const Tensor<T>&,         \
                                              const std::vector<T>*);                     \
  template void centrally_masked_conv_backward<T>(const Tensor<T>&, const Tensor<T>&,     \
                                                  const Tensor<T>&, Tensor<T>*,           \
                                                  Tensor<T>*, std::vector<T>*);           \
  template std::pair<Tensor<T>, PDLayout> pd_down<T>(const Tensor<T>&, int);              \
  template Tensor<T> pd_up<T>(const Tensor<T>&, const PDLayout&);                         \
  template Tensor<T> parity_down<T>(const Tensor<T>&);                                    \
  template Tensor<T> parity_up<T>(const Tensor<T>&);                                      \
  template Tensor<T> pixel_unshuffle_down<T>(const Tensor<T>&);                           \
  template Tensor<T> pixel_shuffle_up<T>(const Tensor<T>&);

TBSN_INSTANTIATE(float)
TBSN_INSTANTIATE(double)
#undef TBSN_INSTANTIATE

}  // namespace tbsn

#include "arch/layers.hpp"

#include <cmath>
#include <stdexcept>

#include "core/gemm.hpp"
#include "mask/attention.hpp"

namespace tbsn {

namespace {

template <typename T>
void add_into(Tensor<T>& a, const Tensor<T>& b) {
  check_same_shape(a, b, "add_into");
  for (size_t i = 0; i < a.v.size(); ++i) a.v[i] += b.v[i];
}

template <typename T>
T gelu(T x) {
  return T(0.5) * x * (T(1) + std::erf(x * T(0.70710678118654752440)));
}

template <typename T>
T gelu_grad(T x) {
  const T cdf = T(0.5) * (T(1) + std::erf(x * T(0.70710678118654752440)));
  const T pdf = std::exp(T(-0.5) * x * x) * T(0.39894228040143267794);
  return cdf + x * pdf;
}

constexpr double kNormEps = 1e-12;

}  // namespace

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.n != b.n || a.h != b.h || a.w != b.w)
    throw std::invalid_argument("concat_channels: shape mismatch " + a.shape_str() + " vs " +
                                b.shape_str());
  Tensor<T> out(a.n, a.c + b.c, a.h, a.w);
  const size_t plane = static_cast<size_t>(a.h) * a.w;
  for (int n = 0; n < a.n; ++n) {
    for (int c = 0; c < a.c; ++c)
      std::copy_n(a.plane(n, c), plane, out.plane(n, c));
    for (int c = 0; c < b.c; ++c)
      std::copy_n(b.plane(n, c), plane, out.plane(n, a.c + c));
  }
  return out;
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>& d, int c_first) {
  Tensor<T> a(d.n, c_first, d.h, d.w), b(d.n, d.c - c_first, d.h, d.w);
  const size_t plane = static_cast<size_t>(d.h) * d.w;
  for (int n = 0; n < d.n; ++n) {
    for (int c = 0; c < a.c; ++c) std::copy_n(d.plane(n, c), plane, a.plane(n, c));
    for (int c = 0; c < b.c; ++c)
      std::copy_n(d.plane(n, c_first + c), plane, b.plane(n, c));
  }
  return {std::move(a), std::move(b)};
}

// ---- Conv2dLayer ----

template <typename T>
Conv2dLayer<T>::Conv2dLayer(ParameterStore<T>& store, const std::string& prefix, int c_in,
                            int c_out, int kernel, int dilation, int groups, bool bias,
                            bool zero_init, bool center_masked)
    : c_in_(c_in),
      c_out_(c_out),
      kernel_(kernel),
      dilation_(dilation),
      groups_(groups),
      center_masked_(center_masked) {
  if (center_masked && kernel != 3)
    throw std::invalid_argument("center-masked conv requires a 3x3 kernel");
  const int fan_in = (c_in / groups) * kernel * kernel;
  w_ = store.add(prefix + ".weight", {c_out, c_in / groups, kernel, kernel},
                 zero_init ? ParamInit::zeros : ParamInit::uniform_fanin, fan_in);
  if (bias) b_ = store.add(prefix + ".bias", {c_out}, ParamInit::zeros, 1, false);
}

template <typename T>
Tensor<T> Conv2dLayer<T>::weight_tensor() const {
  Tensor<T> w(c_out_, c_in_ / groups_, kernel_, kernel_);
  w.v = w_->value;
  return w;
}

template <typename T>
Tensor<T> Conv2dLayer<T>::forward(const Tensor<T>& x) {
  x_cache_ = x;
  const Tensor<T> w = weight_tensor();
  const std::vector<T>* bias = b_ ? &b_->value : nullptr;
  if (center_masked_) return centrally_masked_conv(x, w, bias);
  return conv2d(x, w, bias, dilation_, groups_);
}

template <typename T>
Tensor<T> Conv2dLayer<T>::backward(const Tensor<T>& d_out) {
  const Tensor<T> w = weight_tensor();
  Tensor<T> d_x(x_cache_.n, x_cache_.c, x_cache_.h, x_cache_.w);
  Tensor<T> d_w(w.n, w.c, w.h, w.w);
  d_w.fill(T(0));
  std::vector<T>* d_bias = b_ ? &b_->grad : nullptr;
  if (center_masked_)
    centrally_masked_conv_backward(x_cache_, w, d_out, &d_x, &d_w, d_bias);
  else
    conv2d_backward(x_cache_, w, d_out, dilation_, groups_, &d_x, &d_w, d_bias);
  for (size_t i = 0; i < d_w.v.size(); ++i) w_->grad[i] += d_w.v[i];
  return d_x;
}

// ---- LayerNormChannel ----

template <typename T>
LayerNormChannel<T>::LayerNormChannel(ParameterStore<T>& store, const std::string& prefix,
                                      int channels, T eps)
    : channels_(channels), eps_(eps) {
  gamma_ = store.add(prefix + ".gamma", {channels}, ParamInit::ones, 1, false);
  beta_ = store.add(prefix + ".beta", {channels}, ParamInit::zeros, 1, false);
}

template <typename T>
Tensor<T> LayerNormChannel<T>::forward(const Tensor<T>& x) {
  if (x.c != channels_)
    throw std::invalid_argument("layernorm channel mismatch: " + x.shape_str());
  const int hw = x.h * x.w;
  Tensor<T> out(x.n, x.c, x.h, x.w);
  xhat_cache_ = Tensor<T>(x.n, x.c, x.h, x.w);
  inv_std_cache_.assign(static_cast<size_t>(x.n) * hw, T(0));
  for (int n = 0; n < x.n; ++n)
    for (int i = 0; i < hw; ++i) {
      T mu = 0;
      for (int c = 0; c < x.c; ++c) mu += x.plane(n, c)[i];
      mu /= x.c;
      T var = 0;
      for (int c = 0; c < x.c; ++c) {
        const T d = x.plane(n, c)[i] - mu;
        var += d * d;
      }
      var /= x.c;
      const T inv = T(1) / std::sqrt(var + eps_);
      inv_std_cache_[static_cast<size_t>(n) * hw + i] = inv;
      for (int c = 0; c < x.c; ++c) {
        const T xh = (x.plane(n, c)[i] - mu) * inv;
        xhat_cache_.plane(n, c)[i] = xh;
        out.plane(n, c)[i] = gamma_->value[c] * xh + beta_->value[c];
      }
    }
  return out;
}

template <typename T>
Tensor<T> LayerNormChannel<T>::backward(const Tensor<T>& d_out) {
  const int hw = d_out.h * d_out.w;
  const int C = channels_;
  Tensor<T> d_x(d_out.n, d_out.c, d_out.h, d_out.w);
  for (int n = 0; n < d_out.n; ++n)
    for (int i = 0; i < hw; ++i) {
      T m1 = 0, m2 = 0;
      for (int c = 0; c < C; ++c) {
        const T g = d_out.plane(n, c)[i] * gamma_->value[c];
        const T xh = xhat_cache_.plane(n, c)[i];
        m1 += g;
        m2 += g * xh;
        gamma_->grad[c] += d_out.plane(n, c)[i] * xh;
        beta_->grad[c] += d_out.plane(n, c)[i];
      }
      m1 /= C;
      m2 /= C;
      const T inv = inv_std_cache_[static_cast<size_t>(n) * hw + i];
      for (int c = 0; c < C; ++c) {
        const T g = d_out.plane(n, c)[i] * gamma_->value[c];
        const T xh = xhat_cache_.plane(n, c)[i];
        d_x.plane(n, c)[i] = inv * (g - m1 - xh * m2);
      }
    }
  return d_x;
}

// ---- ReLU / pooling / upsampling ----

template <typename T>
Tensor<T> ReLULayer<T>::forward(const Tensor<T>& x) {
  Tensor<T> out = x;
  mask_.assign(x.v.size(), 0);
  for (size_t i = 0; i < x.v.size(); ++i) {
    if (x.v[i] > T(0))
      mask_[i] = 1;
    else
      out.v[i] = T(0);
  }
  return out;
}

template <typename T>
Tensor<T> ReLULayer<T>::backward(const Tensor<T>& d_out) {
  Tensor<T> d_x = d_out;
  for (size_t i = 0; i < d_x.v.size(); ++i)
    if (!mask_[i]) d_x.v[i] = T(0);
  return d_x;
}

template <typename T>
Tensor<T> AvgPool2Layer<T>::forward(const Tensor<T>& x) {
  if (x.h % 2 || x.w % 2)
    throw std::invalid_argument("avgpool2 requires even spatial dims: " + x.shape_str());
  in_h_ = x.h;
  in_w_ = x.w;
  Tensor<T> out(x.n, x.c, x.h / 2, x.w / 2);
  for (int n = 0; n < x.n; ++n)
    for (int c = 0; c < x.c; ++c) {
      const T* src = x.plane(n, c);
      T* dst = out.plane(n, c);
      for (int i = 0; i < out.h; ++i)
        for (int j = 0; j < out.w; ++j)
          dst[static_cast<size_t>(i) * out.w + j] =
              T(0.25) * (src[static_cast<size_t>(2 * i) * x.w + 2 * j] +
                         src[static_cast<size_t>(2 * i) * x.w + 2 * j + 1] +
                         src[static_cast<size_t>(2 * i + 1) * x.w + 2 * j] +
                         src[static_cast<size_t>(2 * i + 1) * x.w + 2 * j + 1]);
    }
  return out;
}

template <typename T>
Tensor<T> AvgPool2Layer<T>::backward(const Tensor<T>& d_out) {
  Tensor<T> d_x(d_out.n, d_out.c, in_h_, in_w_);
  for (int n = 0; n < d_out.n; ++n)
    for (int c = 0; c < d_out.c; ++c) {
      const T* src = d_out.plane(n, c);
      T* dst = d_x.plane(n, c);
      for (int i = 0; i < d_out.h; ++i)
        for (int j = 0; j < d_out.w; ++j) {
          const T g = T(0.25) * src[static_cast<size_t>(i) * d_out.w + j];
          dst[static_cast<size_t>(2 * i) * in_w_ + 2 * j] = g;
          dst[static_cast<size_t>(2 * i) * in_w_ + 2 * j + 1] = g;
          dst[static_cast<size_t>(2 * i + 1) * in_w_ + 2 * j] = g;
          dst[static_cast<size_t>(2 * i + 1) * in_w_ + 2 * j + 1] = g;
        }
    }
  return d_x;
}

template <typename T>
Tensor<T> NearestUp2Layer<T>::forward(const Tensor<T>& x) {
  Tensor<T> out(x.n, x.c, x.h * 2, x.w * 2);
  for (int n = 0; n < x.n; ++n)
    for (int c = 0; c < x.c; ++c) {
      const T* src = x.plane(n, c);
      T* dst = out.plane(n, c);
      for (int i = 0; i < out.h; ++i)
        for (int j = 0; j < out.w; ++j)
          dst[static_cast<size_t>(i) * out.w + j] =
              src[static_cast<size_t>(i / 2) * x.w + j / 2];
    }
  return out;
}

template <typename T>
Tensor<T> NearestUp2Layer<T>::backward(const Tensor<T>& d_out) {
  Tensor<T> d_x(d_out.n, d_out.c, d_out.h / 2, d_out.w / 2);
  d_x.fill(T(0));
  for (int n = 0; n < d_out.n; ++n)
    for (int c = 0; c < d_out.c; ++c) {
      const T* src = d_out.plane(n, c);
      T* dst = d_x.plane(n, c);
      for (int i = 0; i < d_out.h; ++i)
        for (int j = 0; j < d_out.w; ++j)
          dst[static_cast<size_t>(i / 2) * d_x.w + j / 2] +=
              src[static_cast<size_t>(i) * d_out.w + j];
    }
  return d_x;
}

// ---- MWSALayer ----

template <typename T>
MWSALayer<T>::MWSALayer(ParameterStore<T>& store, const std::string& prefix, int channels,
                        const WindowSpec& window)
    : window_(window), channels_(channels) {
  if (channels % window.head_dim != 0)
    throw std::invalid_argument("attention channels must be divisible by head_dim");
  window_.heads = channels / window.head_dim;
  window_.validate();
  mask_ = build_attention_mask(window_);
  conv_q_ = std::make_unique<Conv2dLayer<T>>(store, prefix + ".q", channels, channels, 1);
  conv_k_ = std::make_unique<Conv2dLayer<T>>(store, prefix + ".k", channels, channels, 1);
  conv_v_ = std::make_unique<Conv2dLayer<T>>(store, prefix + ".v", channels, channels, 1);
  conv_o_ = std::make_unique<Conv2dLayer<T>>(store, prefix + ".o", channels, channels, 1,
                                             1, 1, true, /*zero_init=*/true);
}

template <typename T>
Tensor<T> MWSALayer<T>::forward(const Tensor<T>& x) {
  in_h_ = x.h;
  in_w_ = x.w;
  const int M = window_.window_size, K = window_.kv_size, off = (K - M) / 2;
  const int d = window_.head_dim, heads = window_.heads;
  const int hp = (x.h + M - 1) / M * M, wp = (x.w + M - 1) / M * M;

  Tensor<T> q = conv_q_->forward(x);
  Tensor<T> k = conv_k_->forward(x);
  Tensor<T> v = conv_v_->forward(x);
  qp_cache_ = (hp == x.h && wp == x.w) ? std::move(q)
                                       : pad_zero(q, 0, hp - x.h, 0, wp - x.w);
  Tensor<T> kp = (hp == x.h && wp == x.w) ? std::move(k)
                                          : pad_zero(k, 0, hp - x.h, 0, wp - x.w);
  Tensor<T> vp = (hp == x.h && wp == x.w) ? std::move(v)
                                          : pad_zero(v, 0, hp - x.h, 0, wp - x.w);
  kpp_cache_ = pad_zero(kp, off, off, off, off);
  vpp_cache_ = pad_zero(vp, off, off, off, off);

  const int nwy = hp / M, nwx = wp / M;
  const int mm = M * M, kk = K * K;
  attn_cache_.assign(static_cast<size_t>(x.n) * nwy * nwx * heads * mm * kk, T(0));

  Tensor<T> out_p(x.n, channels_, hp, wp);
  std::vector<T> qwin(static_cast<size_t>(mm) * d), kwin(static_cast<size_t>(kk) * d),
      vwin(static_cast<size_t>(kk) * d), owin(static_cast<size_t>(mm) * d);
  for (int n = 0; n < x.n; ++n)
    for (int wy = 0; wy < nwy; ++wy)
      for (int wx = 0; wx < nwx; ++wx)
        for (int h = 0; h < heads; ++h) {
          for (int r = 0; r < M; ++r)
            for (int c = 0; c < M; ++c)
              for (int l = 0; l < d; ++l)
                qwin[static_cast<size_t>(r * M + c) * d + l] =
                    qp_cache_.at(n, h * d + l, wy * M + r, wx * M + c);
          for (int r = 0; r < K; ++r)
            for (int c = 0; c < K; ++c)
              for (int l = 0; l < d; ++l) {
                kwin[static_cast<size_t>(r * K + c) * d + l] =
                    kpp_cache_.at(n, h * d + l, wy * M + r, wx * M + c);
                vwin[static_cast<size_t>(r * K + c) * d + l] =
                    vpp_cache_.at(n, h * d + l, wy * M + r, wx * M + c);
              }
          T* attn = attn_cache_.data() +
                    ((static_cast<size_t>(n) * nwy * nwx + static_cast<size_t>(wy) * nwx +
                      wx) *
                         heads +
                     h) *
                        mm * kk;
          attention_forward<T>(qwin.data(), kwin.data(), vwin.data(), mm, kk, d,
                               mask_.values.data(), attn, owin.data());
          for (int r = 0; r < M; ++r)
            for (int c = 0; c < M; ++c)
              for (int l = 0; l < d; ++l)
                out_p.at(n, h * d + l, wy * M + r, wx * M + c) =
                    owin[static_cast<size_t>(r * M + c) * d + l];
        }
  Tensor<T> merged =
      (hp == x.h && wp == x.w) ? std::move(out_p) : crop(out_p, 0, 0, x.h, x.w);
  return conv_o_->forward(merged);
}

template <typename T>
Tensor<T> MWSALayer<T>::backward(const Tensor<T>& d_out) {
  const int M = window_.window_size, K = window_.kv_size, off = (K - M) / 2;
  const int d = window_.head_dim, heads = window_.heads;
  const int hp = qp_cache_.h, wp = qp_cache_.w;
  const int nwy = hp / M, nwx = wp / M;
  const int mm = M * M, kk = K * K;

  Tensor<T> d_merged = conv_o_->backward(d_out);
  Tensor<T> d_out_p = (hp == in_h_ && wp == in_w_)
                          ? std::move(d_merged)
                          : pad_zero(d_merged, 0, hp - in_h_, 0, wp - in_w_);

  Tensor<T> d_qp(d_out_p.n, channels_, hp, wp);
  Tensor<T> d_kpp(d_out_p.n, channels_, hp + 2 * off, wp + 2 * off);
  Tensor<T> d_vpp(d_out_p.n, channels_, hp + 2 * off, wp + 2 * off);
  d_qp.fill(T(0));
  d_kpp.fill(T(0));
  d_vpp.fill(T(0));

  std::vector<T> qwin(static_cast<size_t>(mm) * d), kwin(static_cast<size_t>(kk) * d),
      vwin(static_cast<size_t>(kk) * d), dwin(static_cast<size_t>(mm) * d),
      dq(static_cast<size_t>(mm) * d), dk(static_cast<size_t>(kk) * d),
      dv(static_cast<size_t>(kk) * d);
  for (int n = 0; n < d_out_p.n; ++n)
    for (int wy = 0; wy < nwy; ++wy)
      for (int wx = 0; wx < nwx; ++wx)
        for (int h = 0; h < heads; ++h) {
          for (int r = 0; r < M; ++r)
            for (int c = 0; c < M; ++c)
              for (int l = 0; l < d; ++l) {
                qwin[static_cast<size_t>(r * M + c) * d + l] =
                    qp_cache_.at(n, h * d + l, wy * M + r, wx * M + c);
                dwin[static_cast<size_t>(r * M + c) * d + l] =
                    d_out_p.at(n, h * d + l, wy * M + r, wx * M + c);
              }
          for (int r = 0; r < K; ++r)
            for (int c = 0; c < K; ++c)
              for (int l = 0; l < d; ++l) {
                kwin[static_cast<size_t>(r * K + c) * d + l] =
                    kpp_cache_.at(n, h * d + l, wy * M + r, wx * M + c);
                vwin[static_cast<size_t>(r * K + c) * d + l] =
                    vpp_cache_.at(n, h * d + l, wy * M + r, wx * M + c);
              }
          const T* attn = attn_cache_.data() +
                          ((static_cast<size_t>(n) * nwy * nwx +
                            static_cast<size_t>(wy) * nwx + wx) *
                               heads +
                           h) *
                              mm * kk;
          attention_backward<T>(qwin.data(), kwin.data(), vwin.data(), attn, dwin.data(),
                                mm, kk, d, dq.data(), dk.data(), dv.data());
          for (int r = 0; r < M; ++r)
            for (int c = 0; c < M; ++c)
              for (int l = 0; l < d; ++l)
                d_qp.at(n, h * d + l, wy * M + r, wx * M + c) +=
                    dq[static_cast<size_t>(r * M + c) * d + l];
          for (int r = 0; r < K; ++r)
            for (int c = 0; c < K; ++c)
              for (int l = 0; l < d; ++l) {
                d_kpp.at(n, h * d + l, wy * M + r, wx * M + c) +=
                    dk[static_cast<size_t>(r * K + c) * d + l];
                d_vpp.at(n, h * d + l, wy * M + r, wx * M + c) +=
                    dv[static_cast<size_t>(r * K + c) * d + l];
              }
        }

  Tensor<T> d_q = crop(d_qp, 0, 0, in_h_, in_w_);
  Tensor<T> d_k = crop(d_kpp, off, off, hp, wp);
  d_k = crop(d_k, 0, 0, in_h_, in_w_);
  Tensor<T> d_v = crop(d_vpp, off, off, hp, wp);
  d_v = crop(d_v, 0, 0, in_h_, in_w_);

  Tensor<T> d_x = conv_q_->backward(d_q);
  add_into(d_x, conv_k_->backward(d_k));
  add_into(d_x, conv_v_->backward(d_v));
  return d_x;
}

// ---- GCSALayer ----

template <typename T>
GCSALayer<T>::GCSALayer(ParameterStore<T>& store, const std::string& prefix, int channels,
                        int groups, int dilation, int phases)
    : channels_(channels), groups_(groups), phases_(phases) {
  if (groups < 1 || channels % groups != 0)
    throw std::invalid_argument("channel attention groups must divide channels");
  if (phases < 1)
    throw std::invalid_argument("channel attention phase fold must be >= 1");
  group_width_ = channels / groups;
  conv_qkv_ = std::make_unique<Conv2dLayer<T>>(store, prefix + ".qkv", channels,
                                               3 * channels, 1, 1, groups);
  dconv_ = std::make_unique<Conv2dLayer<T>>(store, prefix + ".dconv", 3 * channels,
                                            3 * channels, 3, dilation, 3 * channels);
  conv_o_ = std::make_unique<Conv2dLayer<T>>(store, prefix + ".o", channels, channels, 1,
                                             1, groups, true, /*zero_init=*/true);
  temperature_ =
      store.add(prefix + ".temperature", {groups}, ParamInit::ones, 1, false);
}

template <typename T>
Tensor<T> GCSALayer<T>::forward(const Tensor<T>& x) {
  const int W = group_width_;
  const int hw = x.h * x.w;
  if (x.n % phases_ != 0)
    throw std::invalid_argument("channel attention batch not divisible by phase fold");
  const int nt = x.n / phases_;  // images; each spans phases_ adjacent entries
  const int R = phases_ * W;     // attention rows per group
  Tensor<T> qkv = conv_qkv_->forward(x);
  qkvd_cache_ = dconv_->forward(qkv);

  const size_t rows = static_cast<size_t>(nt) * groups_ * R;
  qn_cache_.assign(rows * hw, T(0));
  kn_cache_.assign(rows * hw, T(0));
  qnorm_cache_.assign(rows, T(0));
  knorm_cache_.assign(rows, T(0));
  attn_cache_.assign(static_cast<size_t>(nt) * groups_ * R * R, T(0));
  s0_cache_.assign(attn_cache_.size(), T(0));

  std::vector<T> vrows(static_cast<size_t>(R) * hw), orows(static_cast<size_t>(R) * hw);
  Tensor<T> mixed(x.n, channels_, x.h, x.w);
  for (int n = 0; n < nt; ++n)
    for (int g = 0; g < groups_; ++g) {
      const size_t row0 = (static_cast<size_t>(n) * groups_ + g) * R;
      T* qn = qn_cache_.data() + row0 * hw;
      T* kn = kn_cache_.data() + row0 * hw;
      for (int r = 0; r < R; ++r) {
        const int entry = n * phases_ + r / W;
        const int c = r % W;
        const T* Q = qkvd_cache_.plane(entry, g * 3 * W + c);
        const T* Kp = qkvd_cache_.plane(entry, g * 3 * W + W + c);
        const T* V = qkvd_cache_.plane(entry, g * 3 * W + 2 * W + c);
        std::copy(V, V + hw, vrows.data() + static_cast<size_t>(r) * hw);
        T qs = 0, ks = 0;
        for (int i = 0; i < hw; ++i) {
          qs += Q[i] * Q[i];
          ks += Kp[i] * Kp[i];
        }
        const T qr = std::max(std::sqrt(qs), static_cast<T>(kNormEps));
        const T kr = std::max(std::sqrt(ks), static_cast<T>(kNormEps));
        qnorm_cache_[row0 + r] = qr;
        knorm_cache_[row0 + r] = kr;
        for (int i = 0; i < hw; ++i) {
          qn[static_cast<size_t>(r) * hw + i] = Q[i] / qr;
          kn[static_cast<size_t>(r) * hw + i] = Kp[i] / kr;
        }
      }
      T* s0 = s0_cache_.data() + (static_cast<size_t>(n) * groups_ + g) * R * R;
      T* attn = attn_cache_.data() + (static_cast<size_t>(n) * groups_ + g) * R * R;
      matmul<T>(false, true, R, R, hw, qn, kn, s0);
      const T tau = temperature_->value[g];
      for (int i = 0; i < R; ++i) {
        T mx = -std::numeric_limits<T>::infinity();
        for (int j = 0; j < R; ++j) mx = std::max(mx, tau * s0[i * R + j]);
        T sum = 0;
        for (int j = 0; j < R; ++j) {
          attn[i * R + j] = std::exp(tau * s0[i * R + j] - mx);
          sum += attn[i * R + j];
        }
        for (int j = 0; j < R; ++j) attn[i * R + j] /= sum;
      }
      matmul<T>(false, false, R, hw, R, attn, vrows.data(), orows.data());
      for (int r = 0; r < R; ++r) {
        const T* src = orows.data() + static_cast<size_t>(r) * hw;
        std::copy(src, src + hw, mixed.plane(n * phases_ + r / W, g * W + r % W));
      }
    }
  return conv_o_->forward(mixed);
}

template <typename T>
Tensor<T> GCSALayer<T>::backward(const Tensor<T>& d_out) {
  const int W = group_width_;
  const Tensor<T>& qkvd = qkvd_cache_;
  const int hw = qkvd.h * qkvd.w;
  const int nt = qkvd.n / phases_;
  const int R = phases_ * W;
  Tensor<T> d_mixed = conv_o_->backward(d_out);

  Tensor<T> d_qkvd(qkvd.n, qkvd.c, qkvd.h, qkvd.w);
  std::vector<T> dA(static_cast<size_t>(R) * R), dS0(static_cast<size_t>(R) * R);
  std::vector<T> dqn(static_cast<size_t>(R) * hw), dkn(static_cast<size_t>(R) * hw);
  std::vector<T> vrows(static_cast<size_t>(R) * hw), dOrows(static_cast<size_t>(R) * hw);
  std::vector<T> dVrows(static_cast<size_t>(R) * hw);
  for (int n = 0; n < nt; ++n)
    for (int g = 0; g < groups_; ++g) {
      const size_t row0 = (static_cast<size_t>(n) * groups_ + g) * R;
      const T* qn = qn_cache_.data() + row0 * hw;
      const T* kn = kn_cache_.data() + row0 * hw;
      const T* attn = attn_cache_.data() + (static_cast<size_t>(n) * groups_ + g) * R * R;
      const T* s0 = s0_cache_.data() + (static_cast<size_t>(n) * groups_ + g) * R * R;
      for (int r = 0; r < R; ++r) {
        const int entry = n * phases_ + r / W;
        const int c = r % W;
        const T* V = qkvd.plane(entry, g * 3 * W + 2 * W + c);
        const T* dO = d_mixed.plane(entry, g * W + c);
        std::copy(V, V + hw, vrows.data() + static_cast<size_t>(r) * hw);
        std::copy(dO, dO + hw, dOrows.data() + static_cast<size_t>(r) * hw);
      }

      // dV = attn^T dO ; dA = dO V^T
      matmul<T>(true, false, R, hw, R, attn, dOrows.data(), dVrows.data());
      matmul<T>(false, true, R, R, hw, dOrows.data(), vrows.data(), dA.data());
      for (int r = 0; r < R; ++r) {
        const T* src = dVrows.data() + static_cast<size_t>(r) * hw;
        std::copy(src, src + hw,
                  d_qkvd.plane(n * phases_ + r / W, g * 3 * W + 2 * W + r % W));
      }

      const T tau = temperature_->value[g];
      T dtau = 0;
      for (int i = 0; i < R; ++i) {
        T dot = 0;
        for (int j = 0; j < R; ++j) dot += attn[i * R + j] * dA[i * R + j];
        for (int j = 0; j < R; ++j) {
          const T dl = attn[i * R + j] * (dA[i * R + j] - dot);
          dtau += dl * s0[i * R + j];
          dS0[i * R + j] = tau * dl;
        }
      }
      temperature_->grad[g] += dtau;

      // dqn = dS0 kn ; dkn = dS0^T qn
      matmul<T>(false, false, R, hw, R, dS0.data(), kn, dqn.data());
      matmul<T>(true, false, R, hw, R, dS0.data(), qn, dkn.data());

      // L2-normalization backward per attention row.
      for (int r = 0; r < R; ++r) {
        const T qr = qnorm_cache_[row0 + r];
        const T kr = knorm_cache_[row0 + r];
        const T* qrow = qn + static_cast<size_t>(r) * hw;
        const T* krow = kn + static_cast<size_t>(r) * hw;
        const T* dqrow = dqn.data() + static_cast<size_t>(r) * hw;
        const T* dkrow = dkn.data() + static_cast<size_t>(r) * hw;
        T qdot = 0, kdot = 0;
        for (int i = 0; i < hw; ++i) {
          qdot += qrow[i] * dqrow[i];
          kdot += krow[i] * dkrow[i];
        }
        const int entry = n * phases_ + r / W;
        const int c = r % W;
        T* dQrow = d_qkvd.plane(entry, g * 3 * W + c);
        T* dKrow = d_qkvd.plane(entry, g * 3 * W + W + c);
        const bool q_clamped = qr <= static_cast<T>(kNormEps);
        const bool k_clamped = kr <= static_cast<T>(kNormEps);
        for (int i = 0; i < hw; ++i) {
          dQrow[i] = q_clamped ? dqrow[i] / qr : (dqrow[i] - qrow[i] * qdot) / qr;
          dKrow[i] = k_clamped ? dkrow[i] / kr : (dkrow[i] - krow[i] * kdot) / kr;
        }
      }
    }
  Tensor<T> d_qkv = dconv_->backward(d_qkvd);
  return conv_qkv_->backward(d_qkv);
}

// ---- GDFNLayer ----

template <typename T>
GDFNLayer<T>::GDFNLayer(ParameterStore<T>& store, const std::string& prefix, int channels,
                        double expansion, int dilation)
    : channels_(channels), hidden_(static_cast<int>(std::lround(channels * expansion))) {
  conv_in_ = std::make_unique<Conv2dLayer<T>>(store, prefix + ".in", channels,
                                              2 * hidden_, 1);
  dconv_ = std::make_unique<Conv2dLayer<T>>(store, prefix + ".dconv", 2 * hidden_,
                                            2 * hidden_, 3, dilation, 2 * hidden_);
  conv_out_ = std::make_unique<Conv2dLayer<T>>(store, prefix + ".out", hidden_, channels,
                                               1, 1, 1, true, /*zero_init=*/true);
}

template <typename T>
Tensor<T> GDFNLayer<T>::forward(const Tensor<T>& x) {
  Tensor<T> e = conv_in_->forward(x);
  gate_in_cache_ = dconv_->forward(e);
  const size_t plane = static_cast<size_t>(x.h) * x.w;
  Tensor<T> gated(x.n, hidden_, x.h, x.w);
  for (int n = 0; n < x.n; ++n)
    for (int c = 0; c < hidden_; ++c) {
      const T* a = gate_in_cache_.plane(n, c);
      const T* b = gate_in_cache_.plane(n, hidden_ + c);
      T* dst = gated.plane(n, c);
      for (size_t i = 0; i < plane; ++i) dst[i] = gelu(a[i]) * b[i];
    }
  return conv_out_->forward(gated);
}

template <typename T>
Tensor<T> GDFNLayer<T>::backward(const Tensor<T>& d_out) {
  Tensor<T> d_gated = conv_out_->backward(d_out);
  const Tensor<T>& ed = gate_in_cache_;
  Tensor<T> d_ed(ed.n, ed.c, ed.h, ed.w);
  const size_t plane = static_cast<size_t>(ed.h) * ed.w;
  for (int n = 0; n < ed.n; ++n)
    for (int c = 0; c < hidden_; ++c) {
      const T* a = ed.plane(n, c);
      const T* b = ed.plane(n, hidden_ + c);
      const T* dg = d_gated.plane(n, c);
      T* da = d_ed.plane(n, c);
      T* db = d_ed.plane(n, hidden_ + c);
      for (size_t i = 0; i < plane; ++i) {
        da[i] = dg[i] * b[i] * gelu_grad(a[i]);
        db[i] = dg[i] * gelu(a[i]);
      }
    }
  Tensor<T> d_e = dconv_->backward(d_ed);
  return conv_in_->backward(d_e);
}

// ---- DTAB ----

int DTABConfig::groups() const {
  switch (csa_mode) {
    case CsaMode::full:
      return channels / group_width;
    case CsaMode::ungrouped:
      return 1;
    case CsaMode::identity:
      return 0;
  }
  return 0;
}

void DTABConfig::validate() const {
  if (channels < 1) throw std::invalid_argument("dtab channels must be >= 1");
  if (use_csa && csa_mode == CsaMode::full &&
      (group_width < 1 || channels % group_width != 0))
    throw std::invalid_argument("group_width must divide channels in full mode");
  if (use_wsa) {
    if (channels % window.head_dim != 0)
      throw std::invalid_argument("head_dim must divide channels");
    WindowSpec w = window;
    w.heads = channels / window.head_dim;
    w.validate();
  }
  if (ffn_expansion <= 0) throw std::invalid_argument("ffn_expansion must be positive");
  if (dilation < 1 || dilation > 2)
    throw std::invalid_argument("dilation must be 1 or 2");
  if (phase_fold < 1) throw std::invalid_argument("phase_fold must be >= 1");
}

template <typename T>
DTABBlock<T>::DTABBlock(ParameterStore<T>& store, const std::string& prefix,
                        const DTABConfig& cfg)
    : cfg_(cfg) {
  cfg.validate();
  if (cfg.use_csa) {
    ln1_ = std::make_unique<LayerNormChannel<T>>(store, prefix + ".ln1", cfg.channels);
    if (cfg.csa_mode != CsaMode::identity)
      csa_ = std::make_unique<GCSALayer<T>>(store, prefix + ".csa", cfg.channels,
                                            cfg.groups(), cfg.dilation, cfg.phase_fold);
  }
  if (cfg.use_wsa) {
    ln2_ = std::make_unique<LayerNormChannel<T>>(store, prefix + ".ln2", cfg.channels);
    wsa_ = std::make_unique<MWSALayer<T>>(store, prefix + ".wsa", cfg.channels, cfg.window);
  }
  ln3_ = std::make_unique<LayerNormChannel<T>>(store, prefix + ".ln3", cfg.channels);
  ffn_ = std::make_unique<GDFNLayer<T>>(store, prefix + ".ffn", cfg.channels,
                                        cfg.ffn_expansion, cfg.dilation);
}

template <typename T>
Tensor<T> DTABBlock<T>::forward(const Tensor<T>& x) {
  Tensor<T> cur = x;
  if (cfg_.use_csa) {
    Tensor<T> t = ln1_->forward(cur);
    if (csa_) t = csa_->forward(t);
    add_into(cur, t);
  }
  if (cfg_.use_wsa) {
    Tensor<T> t = wsa_->forward(ln2_->forward(cur));
    add_into(cur, t);
  }
  Tensor<T> t = ffn_->forward(ln3_->forward(cur));
  add_into(cur, t);
  return cur;
}

template <typename T>
Tensor<T> DTABBlock<T>::backward(const Tensor<T>& d_out) {
  Tensor<T> d = d_out;
  add_into(d, ln3_->backward(ffn_->backward(d)));
  if (cfg_.use_wsa) add_into(d, ln2_->backward(wsa_->backward(d)));
  if (cfg_.use_csa) {
    Tensor<T> t = csa_ ? ln1_->backward(csa_->backward(d)) : ln1_->backward(d);
    add_into(d, t);
  }
  return d;
}

// ---- Scale transitions ----

template <typename T>
DownTransition<T>::DownTransition(ParameterStore<T>& store, const std::string& prefix,
                                  int c_in, int c_out, DownsampleMode mode)
    : mode_(mode) {
  const int post = mode == DownsampleMode::parity ? c_in : 4 * c_in;
  conv_ = std::make_unique<Conv2dLayer<T>>(store, prefix + ".proj", post, c_out, 1);
}

template <typename T>
Tensor<T> DownTransition<T>::forward(const Tensor<T>& x) {
  Tensor<T> down =
      mode_ == DownsampleMode::parity ? parity_down(x) : pixel_unshuffle_down(x);
  return conv_->forward(down);
}

template <typename T>
Tensor<T> DownTransition<T>::backward(const Tensor<T>& d_out) {
  Tensor<T> d_down = conv_->backward(d_out);
  return mode_ == DownsampleMode::parity ? parity_up(d_down) : pixel_shuffle_up(d_down);
}

template <typename T>
UpTransition<T>::UpTransition(ParameterStore<T>& store, const std::string& prefix,
                              int c_in, int c_out, DownsampleMode mode)
    : mode_(mode) {
  const int post = mode == DownsampleMode::parity ? c_out : 4 * c_out;
  conv_ = std::make_unique<Conv2dLayer<T>>(store, prefix + ".proj", c_in, post, 1);
}

template <typename T>
Tensor<T> UpTransition<T>::forward(const Tensor<T>& x) {
  Tensor<T> proj = conv_->forward(x);
  return mode_ == DownsampleMode::parity ? parity_up(proj) : pixel_shuffle_up(proj);
}

template <typename T>
Tensor<T> UpTransition<T>::backward(const Tensor<T>& d_out) {
  Tensor<T> d_proj =
      mode_ == DownsampleMode::parity ? parity_down(d_out) : pixel_unshuffle_down(d_out);
  return conv_->backward(d_proj);
}

#define TBSN_INSTANTIATE_LAYERS(T)                                      \
  template Tensor<T> concat_channels<T>(const Tensor<T>&, const Tensor<T>&); \
  template std::pair<Tensor<T>, Tensor<T>> split_channels<T>(const Tensor<T>&, int); \
  template class Conv2dLayer<T>;                                        \
  template class LayerNormChannel<T>;                                   \
  template class ReLULayer<T>;                                          \
  template class AvgPool2Layer<T>;                                      \
  template class NearestUp2Layer<T>;                                    \
  template class MWSALayer<T>;                                          \
  template class GCSALayer<T>;                                          \
  template class GDFNLayer<T>;                                          \
  template class DTABBlock<T>;                                          \
  template class DownTransition<T>;                                     \
  template class UpTransition<T>;

TBSN_INSTANTIATE_LAYERS(float)
TBSN_INSTANTIATE_LAYERS(double)
#undef TBSN_INSTANTIATE_LAYERS

}  // namespace tbsn

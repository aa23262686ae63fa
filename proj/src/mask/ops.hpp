#pragma once

#include <utility>
#include <vector>

#include "core/tensor.hpp"

namespace tbsn {

// 2D convolution with odd kernel, same-size zero padding, optional dilation
// and channel groups. Weight layout is (c_out, c_in/groups, kh, kw).
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const std::vector<T>* bias,
                 int dilation = 1, int groups = 1);

// Gradients of conv2d. d_x is overwritten; d_w and d_bias are accumulated
// into (callers zero them at step start). Null outputs are skipped.
template <typename T>
void conv2d_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& d_out,
                     int dilation, int groups, Tensor<T>* d_x, Tensor<T>* d_w,
                     std::vector<T>* d_bias);

// Forces the center tap of a 3x3 kernel to zero for every channel pair.
template <typename T>
void zero_center_tap(Tensor<T>& w);

// Standard 3x3 convolution whose center tap is structurally zero, so the
// output at p never depends on the input at p. Weight center entries are
// ignored (treated as zero) regardless of their stored values.
template <typename T>
Tensor<T> centrally_masked_conv(const Tensor<T>& x, const Tensor<T>& w,
                                const std::vector<T>* bias);

template <typename T>
void centrally_masked_conv_backward(const Tensor<T>& x, const Tensor<T>& w,
                                    const Tensor<T>& d_out, Tensor<T>* d_x, Tensor<T>* d_w,
                                    std::vector<T>* d_bias);

// Pixel-shuffle downsampling bookkeeping: reflect padding (bottom/right) to a
// multiple of the factor, then the in-place f x f mosaic rearrangement.
struct PDLayout {
  int factor = 1;
  int orig_height = 0, orig_width = 0;
  int padded_height = 0, padded_width = 0;
  int pad_bottom = 0, pad_right = 0;  // top/left padding is always zero
};

// Maps padded pixel (i, j) to (i/f + (i%f)*Hf, j/f + (j%f)*Wf) with
// Hf = padded_height/f, producing an f x f mosaic of phase sub-images.
template <typename T>
std::pair<Tensor<T>, PDLayout> pd_down(const Tensor<T>& x, int f);

// Exact inverse of pd_down followed by cropping the padding away.
template <typename T>
Tensor<T> pd_up(const Tensor<T>& y, const PDLayout& layout);

// Factor-2 downsampling by phase separation: the four parity phases become
// four independent half-resolution items along the batch axis, in phase
// order (0,0),(0,1),(1,0),(1,1); item n occupies output batch slots
// 4n..4n+3. Channel count is unchanged. Requires even spatial dims.
template <typename T>
Tensor<T> parity_down(const Tensor<T>& x);

// Exact inverse of parity_down. Requires batch divisible by 4.
template <typename T>
Tensor<T> parity_up(const Tensor<T>& y);

// Plain space-to-depth at factor 2: phases are packed into channels
// (out channel c*4 + phase). This is the deliberately parity-breaking
// downsampling used as the verifier's negative control; any following
// channel mix couples phases at odd offsets.
template <typename T>
Tensor<T> pixel_unshuffle_down(const Tensor<T>& x);

template <typename T>
Tensor<T> pixel_shuffle_up(const Tensor<T>& y);

}  // namespace tbsn

#pragma once

#include <vector>

#include "mask/parity.hpp"

namespace tbsn {

// out = A v with A = softmax(q k^T / sqrt(d) + mask) taken row-wise.
// q is m x d, k and v are n x d, out is m x d, all row-major. mask is m x n
// over {0, -inf} or nullptr for all-pass. The attention matrix A is written
// to attn (m x n) for reuse by the backward pass. A fully masked row is a
// structural impossibility and throws std::logic_error.
template <typename T>
void attention_forward(const T* q, const T* k, const T* v, int m, int n, int d,
                       const float* mask, T* attn, T* out);

// Gradients of attention_forward given the saved attention matrix. d_q, d_k,
// d_v are overwritten.
template <typename T>
void attention_backward(const T* q, const T* k, const T* v, const T* attn,
                        const T* d_out, int m, int n, int d, T* d_q, T* d_k, T* d_v);

// Allocating convenience over attention_forward for a single window.
// q: M^2 x d, k/v: K^2 x d per the mask shape.
template <typename T>
std::vector<T> masked_window_attention(const std::vector<T>& q, const std::vector<T>& k,
                                       const std::vector<T>& v, int d,
                                       const AttentionMask& mask);

// Independent unmasked oracle: softmax(q k^T / sqrt(d)) v evaluated with
// plain nested loops, no BLAS. Kept deliberately separate from
// attention_forward so the two can cross-check each other.
template <typename T>
std::vector<T> window_attention_reference(const std::vector<T>& q, const std::vector<T>& k,
                                          const std::vector<T>& v, int m, int n, int d);

}  // namespace tbsn

#include "mask/attention.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "core/gemm.hpp"

namespace tbsn {

template <typename T>
void attention_forward(const T* q, const T* k, const T* v, int m, int n, int d,
                       const float* mask, T* attn, T* out) {
  const T scale = T(1) / std::sqrt(static_cast<T>(d));
  // attn <- q k^T / sqrt(d)
  matmul<T>(false, true, m, n, d, q, k, attn, scale);

  for (int i = 0; i < m; ++i) {
    T* row = attn + static_cast<size_t>(i) * n;
    T row_max = -std::numeric_limits<T>::infinity();
    for (int j = 0; j < n; ++j) {
      if (mask) row[j] += static_cast<T>(mask[static_cast<size_t>(i) * n + j]);
      if (row[j] > row_max) row_max = row[j];
    }
    if (!(row_max > -std::numeric_limits<T>::infinity()))
      throw std::logic_error("attention row fully masked; mask construction is broken");
    T sum = 0;
    for (int j = 0; j < n; ++j) {
      row[j] = std::exp(row[j] - row_max);
      sum += row[j];
    }
    const T inv = T(1) / sum;
    for (int j = 0; j < n; ++j) row[j] *= inv;
  }
  // out <- attn v
  matmul<T>(false, false, m, d, n, attn, v, out);
}

template <typename T>
void attention_backward(const T* q, const T* k, const T* v, const T* attn,
                        const T* d_out, int m, int n, int d, T* d_q, T* d_k, T* d_v) {
  const T scale = T(1) / std::sqrt(static_cast<T>(d));
  // d_v <- attn^T d_out
  matmul<T>(true, false, n, d, m, attn, d_out, d_v);

  // d_attn <- d_out v^T, then softmax backward in place:
  // d_logits_ij = a_ij (d_attn_ij - sum_j' a_ij' d_attn_ij').
  std::vector<T> d_logits(static_cast<size_t>(m) * n);
  matmul<T>(false, true, m, n, d, d_out, v, d_logits.data());
  for (int i = 0; i < m; ++i) {
    const T* a = attn + static_cast<size_t>(i) * n;
    T* g = d_logits.data() + static_cast<size_t>(i) * n;
    T dot = 0;
    for (int j = 0; j < n; ++j) dot += a[j] * g[j];
    for (int j = 0; j < n; ++j) g[j] = a[j] * (g[j] - dot);
  }
  // d_q <- d_logits k / sqrt(d); d_k <- d_logits^T q / sqrt(d)
  matmul<T>(false, false, m, d, n, d_logits.data(), k, d_q, scale);
  matmul<T>(true, false, n, d, m, d_logits.data(), q, d_k, scale);
}

template <typename T>
std::vector<T> masked_window_attention(const std::vector<T>& q, const std::vector<T>& k,
                                       const std::vector<T>& v, int d,
                                       const AttentionMask& mask) {
  const int m = mask.q_count;
  const int n = mask.kv_count;
  if (q.size() != static_cast<size_t>(m) * d || k.size() != static_cast<size_t>(n) * d ||
      v.size() != static_cast<size_t>(n) * d)
    throw std::invalid_argument("masked_window_attention: shapes inconsistent with mask");
  std::vector<T> attn(static_cast<size_t>(m) * n), out(static_cast<size_t>(m) * d);
  attention_forward<T>(q.data(), k.data(), v.data(), m, n, d, mask.values.data(),
                       attn.data(), out.data());
  return out;
}

template <typename T>
std::vector<T> window_attention_reference(const std::vector<T>& q, const std::vector<T>& k,
                                          const std::vector<T>& v, int m, int n, int d) {
  if (q.size() != static_cast<size_t>(m) * d || k.size() != static_cast<size_t>(n) * d ||
      v.size() != static_cast<size_t>(n) * d)
    throw std::invalid_argument("window_attention_reference: dimension mismatch");
  std::vector<T> out(static_cast<size_t>(m) * d, T(0));
  const T scale = T(1) / std::sqrt(static_cast<T>(d));
  std::vector<T> logits(n), weights(n);
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      T s = 0;
      for (int l = 0; l < d; ++l)
        s += q[static_cast<size_t>(i) * d + l] * k[static_cast<size_t>(j) * d + l];
      logits[j] = s * scale;
    }
    T mx = logits[0];
    for (int j = 1; j < n; ++j)
      if (logits[j] > mx) mx = logits[j];
    T sum = 0;
    for (int j = 0; j < n; ++j) {
      weights[j] = std::exp(logits[j] - mx);
      sum += weights[j];
    }
    for (int j = 0; j < n; ++j) weights[j] /= sum;
    for (int j = 0; j < n; ++j)
      for (int l = 0; l < d; ++l)
        out[static_cast<size_t>(i) * d + l] += weights[j] * v[static_cast<size_t>(j) * d + l];
  }
  return out;
}

template void attention_forward<float>(const float*, const float*, const float*, int, int,
                                       int, const float*, float*, float*);
template void attention_forward<double>(const double*, const double*, const double*, int,
                                        int, int, const float*, double*, double*);
template void attention_backward<float>(const float*, const float*, const float*,
                                        const float*, const float*, int, int, int, float*,
                                        float*, float*);
template void attention_backward<double>(const double*, const double*, const double*,
                                         const double*, const double*, int, int, int,
                                         double*, double*, double*);
template std::vector<float> masked_window_attention<float>(const std::vector<float>&,
                                                           const std::vector<float>&,
                                                           const std::vector<float>&, int,
                                                           const AttentionMask&);
template std::vector<double> masked_window_attention<double>(const std::vector<double>&,
                                                             const std::vector<double>&,
                                                             const std::vector<double>&,
                                                             int, const AttentionMask&);
template std::vector<float> window_attention_reference<float>(const std::vector<float>&,
                                                              const std::vector<float>&,
                                                              const std::vector<float>&,
                                                              int, int, int);
template std::vector<double> window_attention_reference<double>(const std::vector<double>&,
                                                                const std::vector<double>&,
                                                                const std::vector<double>&,
                                                                int, int, int);

}  // namespace tbsn

#include "mask/parity.hpp"

#include <limits>
#include <stdexcept>
#include <string>

namespace tbsn {

ParityLookup build_parity_lookup(int window_size) {
  if (window_size < 1)
    throw std::invalid_argument("parity lookup window_size must be >= 1, got " +
                                std::to_string(window_size));
  ParityLookup lut;
  lut.window_size = window_size;
  const int span = 2 * window_size - 1;
  lut.table.resize(static_cast<size_t>(span) * span);
  for (int dy = -(window_size - 1); dy <= window_size - 1; ++dy)
    for (int dx = -(window_size - 1); dx <= window_size - 1; ++dx) {
      const bool even_even = (dy % 2 == 0) && (dx % 2 == 0);
      lut.table[static_cast<size_t>(dy + window_size - 1) * span + (dx + window_size - 1)] =
          even_even ? 0 : 1;
    }
  return lut;
}

void WindowSpec::validate() const {
  if (window_size < 1)
    throw std::invalid_argument("window_size must be >= 1, got " +
                                std::to_string(window_size));
  if (kv_size < window_size)
    throw std::invalid_argument("kv_size must be >= window_size, got K=" +
                                std::to_string(kv_size) + " M=" +
                                std::to_string(window_size));
  if ((kv_size - window_size) % 2 != 0)
    throw std::invalid_argument("kv field must extend the query window evenly: K-M=" +
                                std::to_string(kv_size - window_size) + " is odd");
  if (heads < 1) throw std::invalid_argument("heads must be >= 1");
  if (head_dim < 1) throw std::invalid_argument("head_dim must be >= 1");
}

AttentionMask build_attention_mask(const WindowSpec& spec) {
  spec.validate();
  const int m = spec.window_size;
  const int k = spec.kv_size;
  const int off = (k - m) / 2;
  const ParityLookup lut = build_parity_lookup(std::max(m, k));
  constexpr float kNegInf = -std::numeric_limits<float>::infinity();

  AttentionMask mask;
  mask.q_count = m * m;
  mask.kv_count = k * k;
  mask.values.resize(static_cast<size_t>(mask.q_count) * mask.kv_count);
  mask.q_coords.reserve(mask.q_count);
  mask.kv_coords.reserve(mask.kv_count);
  for (int r = 0; r < m; ++r)
    for (int c = 0; c < m; ++c) mask.q_coords.emplace_back(r, c);
  for (int r = 0; r < k; ++r)
    for (int c = 0; c < k; ++c) mask.kv_coords.emplace_back(r - off, c - off);

  for (int i = 0; i < mask.q_count; ++i)
    for (int j = 0; j < mask.kv_count; ++j) {
      const int dy = mask.q_coords[i].first - mask.kv_coords[j].first;
      const int dx = mask.q_coords[i].second - mask.kv_coords[j].second;
      mask.values[static_cast<size_t>(i) * mask.kv_count + j] =
          lut.at(dy, dx) ? kNegInf : 0.0f;
    }
  return mask;
}

}  // namespace tbsn

#pragma once

#include <cstdint>
#include <utility>
#include <vector>

namespace tbsn {

// Binary relative-offset table over [-(L-1), L-1]^2. Entry 0 means the offset
// has both components even (attention allowed), 1 means blocked.
struct ParityLookup {
  int window_size = 0;          // L
  std::vector<uint8_t> table;   // (2L-1)^2 row-major, indexed by (dy, dx)

  uint8_t at(int dy, int dx) const {
    const int l = window_size;
    return table[static_cast<size_t>(dy + l - 1) * (2 * l - 1) + (dx + l - 1)];
  }
};

ParityLookup build_parity_lookup(int window_size);

// Geometry of one attention window: an M x M query grid with a K x K
// key/value field centered on it (K >= M, same parity).
struct WindowSpec {
  int window_size = 8;  // M, query window edge
  int kv_size = 12;     // K, key/value field edge
  int heads = 1;
  int head_dim = 16;    // d

  // Throws std::invalid_argument when the invariants are violated.
  void validate() const;
};

// Additive logit mask between every query position and every key/value
// position of one window. Entries are 0 where the pixel offset is even-even
// and -inf elsewhere. Coordinates live on the pixel grid of the query window
// (query (0,0) is the window's top-left pixel; the kv field extends
// (K-M)/2 pixels beyond each edge).
struct AttentionMask {
  int q_count = 0;   // M^2
  int kv_count = 0;  // K^2
  std::vector<float> values;                    // q_count x kv_count
  std::vector<std::pair<int, int>> q_coords;    // (row, col), row-major order
  std::vector<std::pair<int, int>> kv_coords;   // (row, col), row-major order

  float at(int i, int j) const { return values[static_cast<size_t>(i) * kv_count + j]; }
};

AttentionMask build_attention_mask(const WindowSpec& spec);

}  // namespace tbsn

#pragma once

#include <string>

#include "core/tensor.hpp"

namespace tbsn {

// Reads an 8-bit PNG into a 1 x C x H x W tensor scaled to [0, 1].
// Grayscale and palette images are expanded; C is 3 for RGB inputs and 1 for
// grayscale. Throws std::runtime_error on failure.
Tensor<float> read_png(const std::string& path);

// Writes a 1 x C x H x W tensor (C = 1 or 3) as an 8-bit PNG. Values are
// clipped to [0, 1] then rounded to the nearest of 256 levels.
void write_png(const std::string& path, const Tensor<float>& img);

// PFM: little-endian 32-bit float, bottom-up scanline order, 'PF' for 3
// channels and 'Pf' for 1 channel. Lossless carrier for intermediate float
// images (teacher caches, receptive-field maps).
Tensor<float> read_pfm(const std::string& path);
void write_pfm(const std::string& path, const Tensor<float>& img);

}  // namespace tbsn

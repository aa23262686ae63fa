#pragma once

#include <string>
#include <utility>
#include <vector>

#include "core/rng.hpp"
#include "core/tensor.hpp"

namespace tbsn {

struct ImageDataset {
  std::vector<std::string> paths;  // absolute or cwd-relative, sorted

  size_t size() const { return paths.size(); }
  bool empty() const { return paths.empty(); }
};

// All *.png directly inside dir, sorted by filename.
ImageDataset list_pngs(const std::string& dir);

// Deterministic 90/10 split keyed on the file name hash, independent of the
// directory the data happens to live in.
std::pair<ImageDataset, ImageDataset> split_train_val(const ImageDataset& all);

uint64_t filename_hash(const std::string& path);

// Random crop plus one of the eight dihedral flips/rotations.
Tensor<float> sample_patch(const Tensor<float>& img, int patch, Rng& rng);

// Small procedurally generated clean corpus: smooth color fields, overlaid
// soft-edged shapes, and banded textures. Stands in for a photographic
// dataset at desk scale; every image is deterministic in (seed, index).
Tensor<float> render_synthetic_image(int size, uint64_t seed);
void generate_synthetic_dataset(const std::string& dir, int count, int size, uint64_t seed);

}  // namespace tbsn

#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "arch/model.hpp"
#include "json.hpp"

namespace tbsn {

// On-disk container: 8-byte magic "TBSNCKPT", u32 format version, u64
// manifest length, JSON manifest, then raw little-endian float32 blobs at
// the offsets the manifest records (relative to the blob section start).
inline constexpr uint32_t kCheckpointVersion = 1;

struct CheckpointMeta {
  std::string kind;  // "tbsn" or "student"
  nlohmann::json config;
  uint64_t seed = 0;
  int64_t iteration = 0;
  nlohmann::json metrics = nlohmann::json::object();
};

template <typename T>
void save_checkpoint(const std::string& path, const CheckpointMeta& meta,
                     const ParameterStore<T>& store);

struct LoadedParam {
  std::vector<int> shape;
  std::vector<float> values;
};

struct LoadedCheckpoint {
  CheckpointMeta meta;
  std::map<std::string, LoadedParam> params;
};

// Throws std::runtime_error on malformed files and version mismatches.
LoadedCheckpoint load_checkpoint(const std::string& path);

// Copies loaded values into a store by name; every store parameter must be
// present with a matching shape.
template <typename T>
void apply_params(const LoadedCheckpoint& ckpt, ParameterStore<T>& store);

// Convenience loaders that rebuild the model from the embedded config.
template <typename T>
std::unique_ptr<TBSNModel<T>> load_tbsn_model(const std::string& path,
                                              CheckpointMeta* meta_out = nullptr);
template <typename T>
std::unique_ptr<StudentModel<T>> load_student_model(const std::string& path,
                                                    CheckpointMeta* meta_out = nullptr);

}  // namespace tbsn

#pragma once

#include <string>

#include "config/serde.hpp"
#include "pipeline/train.hpp"

namespace tbsn {

struct DataConfig {
  std::string dir = "data/clean";
  // When the directory is missing, commands may synthesize a corpus with
  // these parameters instead of failing (explicit opt-in via count > 0).
  int synth_count = 0;
  int synth_size = 96;
  uint64_t synth_seed = 1234;
};

struct VerifyProbeConfig {
  std::string mode = "parity";  // "strict" or "parity"
  int size = 32;
  double tolerance = 1e-6;
  uint64_t probe_seed = 7;
};

struct IoConfig {
  std::string out_dir = "runs/default";
};

// One JSON document drives every command; unknown keys anywhere are an
// error, and the fully resolved form is echoed into the run directory.
struct RunConfig {
  uint64_t seed = 1;
  TBSNConfig model;
  StudentUNetConfig student;
  TrainConfig train;
  NoiseSpec noise;
  DataConfig data;
  VerifyProbeConfig verify;
  IoConfig io;

  void validate() const;
};

RunConfig run_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const RunConfig& cfg);

RunConfig load_run_config(const std::string& path);

nlohmann::json to_json(const NoiseSpec& spec);
NoiseSpec noise_spec_from_json(const nlohmann::json& j, NoiseSpec defaults = {});

nlohmann::json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig defaults = {});

}  // namespace tbsn

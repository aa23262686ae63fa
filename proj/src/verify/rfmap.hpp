#pragma once

#include <string>
#include <utility>
#include <vector>

#include "arch/layers.hpp"
#include "arch/params.hpp"
#include "json.hpp"

namespace tbsn {

enum class RFMode { autodiff, perturbation };
enum class BlindSpotMode { strict_center, parity_class };

// Effective receptive field of the output center: per input pixel, the
// channel-summed magnitude of the center's sensitivity to that pixel.
struct RFMap {
  int height = 0, width = 0;
  int center_row = 0, center_col = 0;
  RFMode mode = RFMode::autodiff;
  uint64_t seed = 0;
  std::string fingerprint;
  std::vector<double> magnitudes;  // height x width, all finite and >= 0

  double at(int r, int c) const {
    return magnitudes[static_cast<size_t>(r) * width + c];
  }
  double max_value() const;
  void validate() const;  // throws NumericError on negative/non-finite entries
};

struct BlindSpotReport {
  BlindSpotMode mode = BlindSpotMode::parity_class;
  double max_blocked = 0.0;
  double max_overall = 0.0;
  double leakage_ratio = 0.0;
  double tolerance = 0.0;
  bool degenerate = false;  // all-zero map: reported but never passed
  bool pass = false;

  nlohmann::json to_json() const;
};

// Probes the model with a seeded uniform [0,1] input, takes the mean over
// output channels at the center pixel as the scalar, and reads the map off
// the input gradient.
RFMap rf_map_autodiff(Module<double>& model, int input_channels, int input_size,
                      std::pair<int, int> center, uint64_t seed,
                      const std::string& fingerprint = "");

// Independent oracle: same scalar, measured by re-running the forward pass
// with each input coordinate nudged by eps (one forward per channel and
// pixel, so keep input_size small). Catches dependence that any bug in the
// backward pass would hide.
RFMap rf_map_perturbation(Module<double>& model, int input_channels, int input_size,
                          std::pair<int, int> center, double eps, uint64_t seed,
                          const std::string& fingerprint = "");

// strict_center blocks only the center pixel; parity_class blocks every
// pixel whose offset from the center is even in both coordinates.
BlindSpotReport blind_spot_report(const RFMap& map, BlindSpotMode mode, double tolerance);

// pfm keeps raw float magnitudes; png is an 8-bit log-scaled heatmap with
// the center cross-marked (unless the map is identically zero).
void export_rf_map(const RFMap& map, const std::string& path, const std::string& format);

// Map-wide relative L-infinity distance, normalized by the larger map max.
double rf_map_rel_linf(const RFMap& a, const RFMap& b);

// Stable identity of a set of weights: kind, config and parameter bytes
// hashed into a short hex string. Changes whenever any of them change.
template <typename T>
std::string model_fingerprint(const std::string& kind, const nlohmann::json& config,
                              const ParameterStore<T>& store);

// Fills every parameter (including projections that initialize to zero) with
// name-keyed random values, so certification exercises each architectural
// path instead of the degenerate fresh-init function.
template <typename T>
void randomize_for_certification(ParameterStore<T>& store, uint64_t seed);

std::string rf_mode_name(RFMode m);
std::string blind_spot_mode_name(BlindSpotMode m);
BlindSpotMode blind_spot_mode_from_name(const std::string& s);

}  // namespace tbsn

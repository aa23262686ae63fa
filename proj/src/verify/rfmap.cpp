#include "verify/rfmap.hpp"

#include <algorithm>
#include <cmath>

#include "core/errors.hpp"
#include "core/image_io.hpp"
#include "core/rng.hpp"

namespace tbsn {

namespace {

constexpr double kRatioFloor = 1e-12;

Tensor<double> probe_input(int channels, int size, uint64_t seed) {
  Tensor<double> x(1, channels, size, size);
  Rng rng(seed);
  for (auto& v : x.v) v = rng.uniform();
  return x;
}

void check_probe_args(int input_channels, int input_size, std::pair<int, int> center) {
  if (input_channels < 1 || input_size < 1)
    throw std::invalid_argument("receptive-field probe needs positive channels and size");
  if (center.first < 0 || center.first >= input_size || center.second < 0 ||
      center.second >= input_size)
    throw std::invalid_argument("probe center lies outside the input");
}

double center_mean(const Tensor<double>& out, int row, int col) {
  double s = 0.0;
  for (int c = 0; c < out.c; ++c) s += out.at(0, c, row, col);
  return s / out.c;
}

}  // namespace

double RFMap::max_value() const {
  double m = 0.0;
  for (double v : magnitudes) m = std::max(m, v);
  return m;
}

void RFMap::validate() const {
  if (static_cast<int>(magnitudes.size()) != height * width)
    throw std::invalid_argument("receptive-field map size does not match its shape");
  for (double v : magnitudes)
    if (!std::isfinite(v) || v < 0.0)
      throw NumericError("receptive-field map contains negative or non-finite entries");
}

RFMap rf_map_autodiff(Module<double>& model, int input_channels, int input_size,
                      std::pair<int, int> center, uint64_t seed,
                      const std::string& fingerprint) {
  check_probe_args(input_channels, input_size, center);
  Tensor<double> x = probe_input(input_channels, input_size, seed);
  Tensor<double> out = model.forward(x);
  if (!out.all_finite()) throw NumericError("model output is non-finite during probing");
  if (center.first >= out.h || center.second >= out.w)
    throw std::invalid_argument("probe center lies outside the model output");

  Tensor<double> d_out(out.n, out.c, out.h, out.w);
  for (int c = 0; c < out.c; ++c)
    d_out.at(0, c, center.first, center.second) = 1.0 / out.c;
  Tensor<double> d_in = model.backward(d_out);
  if (!d_in.all_finite()) throw NumericError("input gradient is non-finite");

  RFMap map;
  map.height = input_size;
  map.width = input_size;
  map.center_row = center.first;
  map.center_col = center.second;
  map.mode = RFMode::autodiff;
  map.seed = seed;
  map.fingerprint = fingerprint;
  map.magnitudes.assign(static_cast<size_t>(input_size) * input_size, 0.0);
  for (int c = 0; c < d_in.c; ++c)
    for (int y = 0; y < input_size; ++y)
      for (int xx = 0; xx < input_size; ++xx)
        map.magnitudes[static_cast<size_t>(y) * input_size + xx] +=
            std::abs(d_in.at(0, c, y, xx));
  map.validate();
  return map;
}

RFMap rf_map_perturbation(Module<double>& model, int input_channels, int input_size,
                          std::pair<int, int> center, double eps, uint64_t seed,
                          const std::string& fingerprint) {
  check_probe_args(input_channels, input_size, center);
  if (eps <= 0.0) throw std::invalid_argument("perturbation eps must be positive");
  Tensor<double> x = probe_input(input_channels, input_size, seed);
  Tensor<double> base = model.forward(x);
  if (!base.all_finite()) throw NumericError("model output is non-finite during probing");
  if (center.first >= base.h || center.second >= base.w)
    throw std::invalid_argument("probe center lies outside the model output");
  const double s0 = center_mean(base, center.first, center.second);

  RFMap map;
  map.height = input_size;
  map.width = input_size;
  map.center_row = center.first;
  map.center_col = center.second;
  map.mode = RFMode::perturbation;
  map.seed = seed;
  map.fingerprint = fingerprint;
  map.magnitudes.assign(static_cast<size_t>(input_size) * input_size, 0.0);
  for (int y = 0; y < input_size; ++y)
    for (int xx = 0; xx < input_size; ++xx) {
      double acc = 0.0;
      for (int c = 0; c < input_channels; ++c) {
        const size_t i = x.idx(0, c, y, xx);
        const double saved = x.v[i];
        x.v[i] = saved + eps;
        Tensor<double> out = model.forward(x);
        x.v[i] = saved;
        if (!out.all_finite())
          throw NumericError("model output is non-finite during perturbation");
        acc += std::abs(center_mean(out, center.first, center.second) - s0);
      }
      map.magnitudes[static_cast<size_t>(y) * input_size + xx] = acc / eps;
    }
  map.validate();
  return map;
}

BlindSpotReport blind_spot_report(const RFMap& map, BlindSpotMode mode, double tolerance) {
  map.validate();
  BlindSpotReport rep;
  rep.mode = mode;
  rep.tolerance = tolerance;
  rep.max_overall = map.max_value();
  for (int y = 0; y < map.height; ++y)
    for (int xx = 0; xx < map.width; ++xx) {
      const bool blocked =
          mode == BlindSpotMode::strict_center
              ? (y == map.center_row && xx == map.center_col)
              : ((y - map.center_row) % 2 == 0 && (xx - map.center_col) % 2 == 0);
      if (blocked) rep.max_blocked = std::max(rep.max_blocked, map.at(y, xx));
    }
  rep.leakage_ratio = rep.max_blocked / std::max(rep.max_overall, kRatioFloor);
  rep.degenerate = rep.max_overall == 0.0;
  rep.pass = !rep.degenerate && rep.leakage_ratio <= tolerance;
  return rep;
}

nlohmann::json BlindSpotReport::to_json() const {
  return {{"mode", blind_spot_mode_name(mode)},
          {"max_blocked", max_blocked},
          {"max_overall", max_overall},
          {"leakage_ratio", leakage_ratio},
          {"tolerance", tolerance},
          {"degenerate", degenerate},
          {"pass", pass}};
}

void export_rf_map(const RFMap& map, const std::string& path, const std::string& format) {
  map.validate();
  if (format == "pfm") {
    Tensor<float> img(1, 1, map.height, map.width);
    for (size_t i = 0; i < map.magnitudes.size(); ++i)
      img.v[i] = static_cast<float>(map.magnitudes[i]);
    write_pfm(path, img);
    return;
  }
  if (format != "png")
    throw std::invalid_argument("unknown receptive-field export format: " + format);

  // Log scaling spans three decades below the max, which keeps faint but
  // real dependence visible next to the dominant taps.
  const double mx = map.max_value();
  const double a = 999.0;
  Tensor<float> img(1, 3, map.height, map.width);
  for (int y = 0; y < map.height; ++y)
    for (int xx = 0; xx < map.width; ++xx) {
      const double norm = mx > 0.0 ? map.at(y, xx) / mx : 0.0;
      const float level = static_cast<float>(std::log1p(a * norm) / std::log1p(a));
      for (int c = 0; c < 3; ++c) img.at(0, c, y, xx) = level;
    }
  if (mx > 0.0) {
    // Red crosshair two pixels out from the center; the center pixel itself
    // stays untouched since its value is the whole point of the picture.
    const int arms[4][2] = {{-2, 0}, {2, 0}, {0, -2}, {0, 2}};
    for (const auto& arm : arms) {
      const int y = map.center_row + arm[0], xx = map.center_col + arm[1];
      if (y < 0 || y >= map.height || xx < 0 || xx >= map.width) continue;
      img.at(0, 0, y, xx) = 1.0f;
      img.at(0, 1, y, xx) = 0.0f;
      img.at(0, 2, y, xx) = 0.0f;
    }
  }
  write_png(path, img);
}

double rf_map_rel_linf(const RFMap& a, const RFMap& b) {
  if (a.height != b.height || a.width != b.width)
    throw std::invalid_argument("receptive-field maps have different shapes");
  const double scale = std::max({a.max_value(), b.max_value(), kRatioFloor});
  double d = 0.0;
  for (size_t i = 0; i < a.magnitudes.size(); ++i)
    d = std::max(d, std::abs(a.magnitudes[i] - b.magnitudes[i]));
  return d / scale;
}

template <typename T>
std::string model_fingerprint(const std::string& kind, const nlohmann::json& config,
                              const ParameterStore<T>& store) {
  uint64_t h = fnv1a(kind.data(), kind.size());
  const std::string cfg = config.dump();
  h = mix_seed(h, fnv1a(cfg.data(), cfg.size()));
  std::vector<float> buf;
  for (const auto& p : store.all()) {
    h = mix_seed(h, fnv1a(p->name.data(), p->name.size()));
    buf.resize(p->size());
    for (size_t i = 0; i < p->size(); ++i) buf[i] = static_cast<float>(p->value[i]);
    h = mix_seed(h, fnv1a(buf.data(), buf.size() * sizeof(float)));
  }
  char out[17];
  std::snprintf(out, sizeof(out), "%016llx", static_cast<unsigned long long>(h));
  return std::string(out);
}

std::string rf_mode_name(RFMode m) {
  return m == RFMode::autodiff ? "autodiff" : "perturbation";
}

std::string blind_spot_mode_name(BlindSpotMode m) {
  return m == BlindSpotMode::strict_center ? "strict_center" : "parity_class";
}

BlindSpotMode blind_spot_mode_from_name(const std::string& s) {
  if (s == "strict_center" || s == "strict") return BlindSpotMode::strict_center;
  if (s == "parity_class" || s == "parity") return BlindSpotMode::parity_class;
  throw std::invalid_argument("unknown blind-spot mode: " + s);
}

template <typename T>
void randomize_for_certification(ParameterStore<T>& store, uint64_t seed) {
  for (auto& p : store.all()) {
    Rng rng(mix_seed(seed, fnv1a(p->name.data(), p->name.size())));
    for (auto& v : p->value) v = static_cast<T>(rng.uniform(-0.5, 0.5));
  }
}

template std::string model_fingerprint<float>(const std::string&, const nlohmann::json&,
                                              const ParameterStore<float>&);
template std::string model_fingerprint<double>(const std::string&, const nlohmann::json&,
                                               const ParameterStore<double>&);
template void randomize_for_certification<float>(ParameterStore<float>&, uint64_t);
template void randomize_for_certification<double>(ParameterStore<double>&, uint64_t);

}  // namespace tbsn

#include "config/serde.hpp"

#include <stdexcept>

namespace tbsn {

using nlohmann::json;

void reject_unknown_keys(const json& j, const std::set<std::string>& allowed,
                         const std::string& context) {
  if (!j.is_object())
    throw std::invalid_argument(context + ": expected a JSON object");
  for (const auto& [key, _] : j.items())
    if (!allowed.count(key))
      throw std::invalid_argument(context + ": unknown key \"" + key + "\"");
}

std::string csa_mode_name(CsaMode m) {
  switch (m) {
    case CsaMode::full: return "full";
    case CsaMode::ungrouped: return "ungrouped";
    case CsaMode::identity: return "identity";
  }
  return "full";
}

CsaMode csa_mode_from_name(const std::string& s) {
  if (s == "full") return CsaMode::full;
  if (s == "ungrouped") return CsaMode::ungrouped;
  if (s == "identity") return CsaMode::identity;
  throw std::invalid_argument("csa_mode must be full|ungrouped|identity, got \"" + s +
                              "\"");
}

std::string downsample_name(DownsampleMode m) {
  return m == DownsampleMode::parity ? "parity" : "pixel_unshuffle";
}

DownsampleMode downsample_from_name(const std::string& s) {
  if (s == "parity") return DownsampleMode::parity;
  if (s == "pixel_unshuffle") return DownsampleMode::pixel_unshuffle;
  throw std::invalid_argument("downsample must be parity|pixel_unshuffle, got \"" + s +
                              "\"");
}

json to_json(const TBSNConfig& cfg) {
  return json{
      {"scales", cfg.scales},
      {"base_channels", cfg.base_channels},
      {"channel_multiplier", cfg.channel_multiplier},
      {"blocks_per_scale", cfg.blocks_per_scale},
      {"input_channels", cfg.input_channels},
      {"downsample", downsample_name(cfg.downsample)},
      {"dtab",
       {{"group_width", cfg.dtab.group_width},
        {"ffn_expansion", cfg.dtab.ffn_expansion},
        {"dilation", cfg.dtab.dilation},
        {"csa_mode", csa_mode_name(cfg.dtab.csa_mode)},
        {"use_csa", cfg.dtab.use_csa},
        {"use_wsa", cfg.dtab.use_wsa},
        {"window",
         {{"window_size", cfg.dtab.window.window_size},
          {"kv_size", cfg.dtab.window.kv_size},
          {"head_dim", cfg.dtab.window.head_dim}}}}},
  };
}

json to_json(const StudentUNetConfig& cfg) {
  return json{{"scales", cfg.scales},
              {"base_channels", cfg.base_channels},
              {"channel_multiplier", cfg.channel_multiplier},
              {"blocks_per_scale", cfg.blocks_per_scale},
              {"input_channels", cfg.input_channels}};
}

TBSNConfig tbsn_config_from_json(const json& j, TBSNConfig cfg) {
  reject_unknown_keys(j,
                      {"scales", "base_channels", "channel_multiplier", "blocks_per_scale",
                       "input_channels", "downsample", "dtab"},
                      "model");
  if (j.contains("scales")) cfg.scales = j.at("scales").get<int>();
  if (j.contains("base_channels")) cfg.base_channels = j.at("base_channels").get<int>();
  if (j.contains("channel_multiplier"))
    cfg.channel_multiplier = j.at("channel_multiplier").get<int>();
  if (j.contains("blocks_per_scale"))
    cfg.blocks_per_scale = j.at("blocks_per_scale").get<std::vector<int>>();
  else if (j.contains("scales"))
    cfg.blocks_per_scale.assign(cfg.scales, 2);
  if (j.contains("input_channels"))
    cfg.input_channels = j.at("input_channels").get<int>();
  if (j.contains("downsample"))
    cfg.downsample = downsample_from_name(j.at("downsample").get<std::string>());
  if (j.contains("dtab")) {
    const json& d = j.at("dtab");
    reject_unknown_keys(d,
                        {"group_width", "ffn_expansion", "dilation", "csa_mode", "use_csa",
                         "use_wsa", "window"},
                        "model.dtab");
    if (d.contains("group_width")) cfg.dtab.group_width = d.at("group_width").get<int>();
    if (d.contains("ffn_expansion"))
      cfg.dtab.ffn_expansion = d.at("ffn_expansion").get<double>();
    if (d.contains("dilation")) cfg.dtab.dilation = d.at("dilation").get<int>();
    if (d.contains("csa_mode"))
      cfg.dtab.csa_mode = csa_mode_from_name(d.at("csa_mode").get<std::string>());
    if (d.contains("use_csa")) cfg.dtab.use_csa = d.at("use_csa").get<bool>();
    if (d.contains("use_wsa")) cfg.dtab.use_wsa = d.at("use_wsa").get<bool>();
    if (d.contains("window")) {
      const json& w = d.at("window");
      reject_unknown_keys(w, {"window_size", "kv_size", "head_dim"}, "model.dtab.window");
      if (w.contains("window_size"))
        cfg.dtab.window.window_size = w.at("window_size").get<int>();
      if (w.contains("kv_size")) cfg.dtab.window.kv_size = w.at("kv_size").get<int>();
      if (w.contains("head_dim")) cfg.dtab.window.head_dim = w.at("head_dim").get<int>();
    }
  }
  cfg.validate();
  return cfg;
}

StudentUNetConfig student_config_from_json(const json& j, StudentUNetConfig cfg) {
  reject_unknown_keys(j,
                      {"scales", "base_channels", "channel_multiplier", "blocks_per_scale",
                       "input_channels"},
                      "student");
  if (j.contains("scales")) cfg.scales = j.at("scales").get<int>();
  if (j.contains("base_channels")) cfg.base_channels = j.at("base_channels").get<int>();
  if (j.contains("channel_multiplier"))
    cfg.channel_multiplier = j.at("channel_multiplier").get<int>();
  if (j.contains("blocks_per_scale"))
    cfg.blocks_per_scale = j.at("blocks_per_scale").get<std::vector<int>>();
  else if (j.contains("scales"))
    cfg.blocks_per_scale.assign(cfg.scales, 2);
  if (j.contains("input_channels"))
    cfg.input_channels = j.at("input_channels").get<int>();
  cfg.validate();
  return cfg;
}

}  // namespace tbsn

#include "config/runconfig.hpp"

#include <fstream>

namespace tbsn {

using nlohmann::json;

json to_json(const NoiseSpec& spec) {
  json j{{"kind", noise_kind_name(spec.kind)},
         {"sigma", spec.sigma},
         {"seed", spec.seed}};
  const Tensor<float> k =
      spec.kernel.size() > 0 ? spec.kernel : default_correlation_kernel();
  json rows = json::array();
  for (int y = 0; y < k.h; ++y) {
    json row = json::array();
    for (int x = 0; x < k.w; ++x) row.push_back(k.at(0, 0, y, x));
    rows.push_back(row);
  }
  j["kernel"] = rows;
  return j;
}

NoiseSpec noise_spec_from_json(const json& j, NoiseSpec spec) {
  reject_unknown_keys(j, {"kind", "sigma", "seed", "kernel"}, "noise");
  if (j.contains("kind"))
    spec.kind = noise_kind_from_name(j.at("kind").get<std::string>());
  if (j.contains("sigma")) spec.sigma = j.at("sigma").get<double>();
  if (j.contains("seed")) spec.seed = j.at("seed").get<uint64_t>();
  if (j.contains("kernel")) {
    const auto rows = j.at("kernel").get<std::vector<std::vector<float>>>();
    if (rows.empty() || rows.front().empty())
      throw std::invalid_argument("noise.kernel: empty kernel");
    Tensor<float> k(1, 1, static_cast<int>(rows.size()),
                    static_cast<int>(rows.front().size()));
    for (int y = 0; y < k.h; ++y) {
      if (static_cast<int>(rows[y].size()) != k.w)
        throw std::invalid_argument("noise.kernel: ragged rows");
      for (int x = 0; x < k.w; ++x) k.at(0, 0, y, x) = rows[y][x];
    }
    spec.kernel = k;
  }
  spec.validate();
  return spec;
}

json to_json(const TrainConfig& cfg) {
  return json{{"batch_size", cfg.batch_size},
              {"patch_size", cfg.patch_size},
              {"total_iters", cfg.total_iters},
              {"lr0", cfg.optim.lr0},
              {"weight_decay", cfg.optim.weight_decay},
              {"lr_decay_every", cfg.optim.lr_decay_every},
              {"lr_decay", cfg.optim.lr_decay},
              {"pd_train", cfg.pd_train},
              {"pd_infer", cfg.pd_infer},
              {"r3", {{"enabled", cfg.r3.enabled}, {"replicas", cfg.r3.replicas}, {"p", cfg.r3.p}}},
              {"log_every", cfg.log_every},
              {"eval_every", cfg.eval_every},
              {"checkpoint_every", cfg.checkpoint_every},
              {"val_max_images", cfg.val_max_images}};
}

TrainConfig train_config_from_json(const json& j, TrainConfig cfg) {
  reject_unknown_keys(j,
                      {"desk_scale", "batch_size", "patch_size", "total_iters", "lr0",
                       "weight_decay", "lr_decay_every", "lr_decay", "pd_train", "pd_infer",
                       "r3", "log_every", "eval_every", "checkpoint_every",
                       "val_max_images"},
                      "train");
  // The desk-scale block swaps in the scaled-down horizon before any
  // explicit keys are applied on top.
  if (j.contains("desk_scale") && j.at("desk_scale").get<bool>())
    cfg = desk_scale_train_defaults();
  if (j.contains("batch_size")) cfg.batch_size = j.at("batch_size").get<int>();
  if (j.contains("patch_size")) cfg.patch_size = j.at("patch_size").get<int>();
  if (j.contains("total_iters")) cfg.total_iters = j.at("total_iters").get<int64_t>();
  if (j.contains("lr0")) cfg.optim.lr0 = j.at("lr0").get<double>();
  if (j.contains("weight_decay"))
    cfg.optim.weight_decay = j.at("weight_decay").get<double>();
  if (j.contains("lr_decay_every"))
    cfg.optim.lr_decay_every = j.at("lr_decay_every").get<int64_t>();
  if (j.contains("lr_decay")) cfg.optim.lr_decay = j.at("lr_decay").get<double>();
  if (j.contains("pd_train")) cfg.pd_train = j.at("pd_train").get<int>();
  if (j.contains("pd_infer")) cfg.pd_infer = j.at("pd_infer").get<int>();
  if (j.contains("r3")) {
    const json& r = j.at("r3");
    reject_unknown_keys(r, {"enabled", "replicas", "p"}, "train.r3");
    if (r.contains("enabled")) cfg.r3.enabled = r.at("enabled").get<bool>();
    if (r.contains("replicas")) cfg.r3.replicas = r.at("replicas").get<int>();
    if (r.contains("p")) cfg.r3.p = r.at("p").get<double>();
  }
  if (j.contains("log_every")) cfg.log_every = j.at("log_every").get<int64_t>();
  if (j.contains("eval_every")) cfg.eval_every = j.at("eval_every").get<int64_t>();
  if (j.contains("checkpoint_every"))
    cfg.checkpoint_every = j.at("checkpoint_every").get<int64_t>();
  if (j.contains("val_max_images"))
    cfg.val_max_images = j.at("val_max_images").get<int>();
  cfg.validate();
  return cfg;
}

void RunConfig::validate() const {
  model.validate();
  student.validate();
  train.validate();
  noise.validate();
  if (verify.mode != "strict" && verify.mode != "parity")
    throw std::invalid_argument("verify.mode must be strict|parity");
  if (verify.size < 4) throw std::invalid_argument("verify.size must be >= 4");
  if (verify.tolerance < 0) throw std::invalid_argument("verify.tolerance must be >= 0");
  if (data.synth_count < 0 || data.synth_size < 16)
    throw std::invalid_argument("data synthesis fields out of range");
}

RunConfig run_config_from_json(const json& j) {
  reject_unknown_keys(
      j, {"seed", "model", "student", "train", "noise", "data", "verify", "io"}, "config");
  RunConfig cfg;
  if (j.contains("seed")) cfg.seed = j.at("seed").get<uint64_t>();
  if (j.contains("model")) cfg.model = tbsn_config_from_json(j.at("model"));
  if (j.contains("student")) cfg.student = student_config_from_json(j.at("student"));
  if (j.contains("train")) cfg.train = train_config_from_json(j.at("train"));
  if (j.contains("noise")) cfg.noise = noise_spec_from_json(j.at("noise"));
  if (j.contains("data")) {
    const json& d = j.at("data");
    reject_unknown_keys(d, {"dir", "synth_count", "synth_size", "synth_seed"}, "data");
    if (d.contains("dir")) cfg.data.dir = d.at("dir").get<std::string>();
    if (d.contains("synth_count")) cfg.data.synth_count = d.at("synth_count").get<int>();
    if (d.contains("synth_size")) cfg.data.synth_size = d.at("synth_size").get<int>();
    if (d.contains("synth_seed"))
      cfg.data.synth_seed = d.at("synth_seed").get<uint64_t>();
  }
  if (j.contains("verify")) {
    const json& v = j.at("verify");
    reject_unknown_keys(v, {"mode", "size", "tolerance", "probe_seed"}, "verify");
    if (v.contains("mode")) cfg.verify.mode = v.at("mode").get<std::string>();
    if (v.contains("size")) cfg.verify.size = v.at("size").get<int>();
    if (v.contains("tolerance")) cfg.verify.tolerance = v.at("tolerance").get<double>();
    if (v.contains("probe_seed"))
      cfg.verify.probe_seed = v.at("probe_seed").get<uint64_t>();
  }
  if (j.contains("io")) {
    const json& io = j.at("io");
    reject_unknown_keys(io, {"out_dir"}, "io");
    if (io.contains("out_dir")) cfg.io.out_dir = io.at("out_dir").get<std::string>();
  }
  cfg.validate();
  return cfg;
}

json to_json(const RunConfig& cfg) {
  return json{{"seed", cfg.seed},
              {"model", to_json(cfg.model)},
              {"student", to_json(cfg.student)},
              {"train", to_json(cfg.train)},
              {"noise", to_json(cfg.noise)},
              {"data",
               {{"dir", cfg.data.dir},
                {"synth_count", cfg.data.synth_count},
                {"synth_size", cfg.data.synth_size},
                {"synth_seed", cfg.data.synth_seed}}},
              {"verify",
               {{"mode", cfg.verify.mode},
                {"size", cfg.verify.size},
                {"tolerance", cfg.verify.tolerance},
                {"probe_seed", cfg.verify.probe_seed}}},
              {"io", {{"out_dir", cfg.io.out_dir}}}};
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open config file: " + path);
  json j;
  try {
    j = json::parse(f);
  } catch (const json::exception& e) {
    throw std::invalid_argument("config " + path + " is not valid JSON: " + e.what());
  }
  return run_config_from_json(j);
}

}  // namespace tbsn

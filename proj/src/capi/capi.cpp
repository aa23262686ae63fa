#include "tbsn/tbsn.h"

#include <algorithm>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>

#include "arch/checkpoint.hpp"
#include "config/runconfig.hpp"
#include "core/errors.hpp"
#include "core/gemm.hpp"
#include "core/image_io.hpp"
#include "pipeline/metrics.hpp"
#include "pipeline/train.hpp"
#include "verify/rfmap.hpp"

namespace {

thread_local std::string g_last_error;

void set_error(const std::string& msg) { g_last_error = msg; }

// One handle wraps the raw checkpoint payload plus lazily built typed nets:
// float for inference-style calls, double for certification.
struct ModelState {
  std::string kind;  // "tbsn" or "student"
  nlohmann::json config;
  uint64_t seed = 0;

  std::unique_ptr<tbsn::TBSNModel<float>> tbsn_f;
  std::unique_ptr<tbsn::StudentModel<float>> student_f;
  std::unique_ptr<tbsn::TBSNModel<double>> tbsn_d;
  std::unique_ptr<tbsn::StudentModel<double>> student_d;

  tbsn::Module<float>& net_f() {
    return tbsn_f ? static_cast<tbsn::Module<float>&>(*tbsn_f->net)
                  : static_cast<tbsn::Module<float>&>(*student_f->net);
  }

  // Double-precision twin with identical weights, built on first use.
  tbsn::Module<double>& net_d() {
    if (!tbsn_d && !student_d) {
      if (tbsn_f) {
        tbsn_d = tbsn::TBSNModel<double>::build(tbsn_f->cfg, seed);
        copy_params(tbsn_f->store, tbsn_d->store);
      } else {
        student_d = tbsn::StudentModel<double>::build(student_f->cfg, seed);
        copy_params(student_f->store, student_d->store);
      }
    }
    return tbsn_d ? static_cast<tbsn::Module<double>&>(*tbsn_d->net)
                  : static_cast<tbsn::Module<double>&>(*student_d->net);
  }

  size_t param_count() const {
    return tbsn_f ? tbsn_f->store.count_scalars() : student_f->store.count_scalars();
  }

  std::string fingerprint() const {
    return tbsn_f ? tbsn::model_fingerprint(kind, config, tbsn_f->store)
                  : tbsn::model_fingerprint(kind, config, student_f->store);
  }

  int input_channels() const {
    return tbsn_f ? tbsn_f->cfg.input_channels : student_f->cfg.input_channels;
  }

 private:
  static void copy_params(const tbsn::ParameterStore<float>& src,
                          tbsn::ParameterStore<double>& dst) {
    const auto& a = src.all();
    auto& b = dst.all();
    for (size_t i = 0; i < a.size(); ++i)
      for (size_t j = 0; j < a[i]->size(); ++j)
        b[i]->value[j] = static_cast<double>(a[i]->value[j]);
  }
};

tbsn_status map_exception() {
  try {
    throw;
  } catch (const tbsn::NumericError& e) {
    set_error(e.what());
    return TBSN_NUMERIC_ERROR;
  } catch (const nlohmann::json::exception& e) {
    set_error(e.what());
    return TBSN_CONFIG_ERROR;
  } catch (const std::invalid_argument& e) {
    set_error(e.what());
    return TBSN_CONFIG_ERROR;
  } catch (const std::logic_error& e) {
    set_error(e.what());
    return TBSN_CONFIG_ERROR;
  } catch (const std::exception& e) {
    set_error(e.what());
    return TBSN_IO_ERROR;
  }
}

tbsn_status copy_string(const std::string& s, char* buf, size_t buflen) {
  if (!buf || buflen == 0) {
    set_error("output buffer is null or empty");
    return TBSN_INVALID_ARGUMENT;
  }
  if (s.size() + 1 > buflen) {
    set_error("output buffer too small");
    return TBSN_INVALID_ARGUMENT;
  }
  std::memcpy(buf, s.c_str(), s.size() + 1);
  return TBSN_OK;
}

tbsn::RunConfig parse_run_config(const char* text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("run config is not valid JSON: ") + e.what());
  }
  return tbsn::run_config_from_json(j);
}

// The data directory named by the config, synthesizing the corpus first
// when the config asks for it and the directory is absent or empty.
std::string ensure_data_dir(const tbsn::RunConfig& cfg) {
  namespace fs = std::filesystem;
  const bool have_pngs =
      fs::is_directory(cfg.data.dir) && !tbsn::list_pngs(cfg.data.dir).empty();
  if (!have_pngs) {
    if (cfg.data.synth_count <= 0)
      throw std::invalid_argument("data.dir has no PNG images and data.synth_count is 0: " +
                                  cfg.data.dir);
    tbsn::generate_synthetic_dataset(cfg.data.dir, cfg.data.synth_count,
                                     cfg.data.synth_size, cfg.data.synth_seed);
  }
  return cfg.data.dir;
}

void echo_resolved_config(const tbsn::RunConfig& cfg) {
  namespace fs = std::filesystem;
  fs::create_directories(cfg.io.out_dir);
  std::ofstream f(fs::path(cfg.io.out_dir) / "resolved-config.json");
  f << tbsn::to_json(cfg).dump(2) << "\n";
}

struct BlasInit {
  BlasInit() { tbsn::init_blas_single_thread(); }
} g_blas_init;

}  // namespace

extern "C" {

struct tbsn_model {
  ModelState state;
};

const char* tbsn_last_error(void) { return g_last_error.c_str(); }

tbsn_status tbsn_model_load(const char* checkpoint_path, tbsn_model** out) {
  if (!checkpoint_path || !out) {
    set_error("null argument");
    return TBSN_INVALID_ARGUMENT;
  }
  *out = nullptr;
  try {
    tbsn::LoadedCheckpoint ckpt = tbsn::load_checkpoint(checkpoint_path);
    auto m = std::make_unique<tbsn_model>();
    m->state.kind = ckpt.meta.kind;
    m->state.config = ckpt.meta.config;
    m->state.seed = ckpt.meta.seed;
    if (ckpt.meta.kind == "tbsn") {
      m->state.tbsn_f = tbsn::load_tbsn_model<float>(checkpoint_path);
    } else if (ckpt.meta.kind == "student") {
      m->state.student_f = tbsn::load_student_model<float>(checkpoint_path);
    } else {
      set_error("unknown checkpoint kind: " + ckpt.meta.kind);
      return TBSN_IO_ERROR;
    }
    *out = m.release();
    return TBSN_OK;
  } catch (...) {
    return map_exception();
  }
}

tbsn_status tbsn_model_build_random(const char* run_config_json, uint64_t seed,
                                    tbsn_model** out) {
  if (!run_config_json || !out) {
    set_error("null argument");
    return TBSN_INVALID_ARGUMENT;
  }
  *out = nullptr;
  try {
    const tbsn::RunConfig cfg = parse_run_config(run_config_json);
    auto m = std::make_unique<tbsn_model>();
    m->state.kind = "tbsn";
    m->state.config = tbsn::to_json(cfg.model);
    m->state.seed = seed;
    m->state.tbsn_f = tbsn::TBSNModel<float>::build(cfg.model, seed);
    tbsn::randomize_for_certification(m->state.tbsn_f->store, seed);
    *out = m.release();
    return TBSN_OK;
  } catch (...) {
    return map_exception();
  }
}

void tbsn_model_free(tbsn_model* model) { delete model; }

tbsn_status tbsn_model_kind(const tbsn_model* model, char* buf, size_t buflen) {
  if (!model) {
    set_error("null model");
    return TBSN_INVALID_ARGUMENT;
  }
  return copy_string(model->state.kind, buf, buflen);
}

tbsn_status tbsn_model_param_count(const tbsn_model* model, uint64_t* count) {
  if (!model || !count) {
    set_error("null argument");
    return TBSN_INVALID_ARGUMENT;
  }
  *count = model->state.param_count();
  return TBSN_OK;
}

tbsn_status tbsn_model_fingerprint(const tbsn_model* model, char* buf, size_t buflen) {
  if (!model) {
    set_error("null model");
    return TBSN_INVALID_ARGUMENT;
  }
  try {
    return copy_string(model->state.fingerprint(), buf, buflen);
  } catch (...) {
    return map_exception();
  }
}

tbsn_status tbsn_denoise_image(tbsn_model* model, const char* input_png,
                               const char* output_png, int pd_factor, int r3_replicas,
                               double r3_p, uint64_t seed) {
  if (!model || !input_png || !output_png) {
    set_error("null argument");
    return TBSN_INVALID_ARGUMENT;
  }
  try {
    tbsn::Tensor<float> noisy = tbsn::read_png(input_png);
    if (noisy.c != model->state.input_channels())
      throw std::invalid_argument("image has " + std::to_string(noisy.c) +
                                  " channels, model expects " +
                                  std::to_string(model->state.input_channels()));
    tbsn::R3Config r3;
    r3.enabled = r3_replicas > 0;
    r3.replicas = r3.enabled ? r3_replicas : 1;
    r3.p = r3_p;
    tbsn::Tensor<float> out =
        tbsn::full_inference(model->state.net_f(), noisy, pd_factor, r3, seed);
    tbsn::write_png(output_png, tbsn::clip01(out));
    return TBSN_OK;
  } catch (...) {
    return map_exception();
  }
}

tbsn_status tbsn_verify(tbsn_model* model, const char* mode, int size, double tolerance,
                        uint64_t probe_seed, const char* report_path, int* passed,
                        double* leakage_ratio) {
  if (!model || !mode || !passed) {
    set_error("null argument");
    return TBSN_INVALID_ARGUMENT;
  }
  try {
    const tbsn::BlindSpotMode bs_mode = tbsn::blind_spot_mode_from_name(mode);
    const std::string fp = model->state.fingerprint();
    tbsn::Module<double>& net = model->state.net_d();
    const int c = model->state.input_channels();
    const std::pair<int, int> center{size / 2, size / 2};

    tbsn::RFMap grad_map =
        tbsn::rf_map_autodiff(net, c, size, center, probe_seed, fp);
    tbsn::BlindSpotReport rep = tbsn::blind_spot_report(grad_map, bs_mode, tolerance);
    nlohmann::json report{{"fingerprint", fp},
                          {"size", size},
                          {"probe_seed", probe_seed},
                          {"autodiff", rep.to_json()}};

    bool ok = rep.pass;
    double ratio = rep.leakage_ratio;
    if (size <= 32) {
      tbsn::RFMap pert_map =
          tbsn::rf_map_perturbation(net, c, size, center, 1e-3, probe_seed, fp);
      tbsn::BlindSpotReport prep = tbsn::blind_spot_report(pert_map, bs_mode, tolerance);
      report["perturbation"] = prep.to_json();
      report["oracle_rel_linf"] = tbsn::rf_map_rel_linf(grad_map, pert_map);
      ok = ok && prep.pass;
      ratio = std::max(ratio, prep.leakage_ratio);
    }
    report["pass"] = ok;
    if (report_path) {
      std::ofstream f(report_path);
      if (!f) throw std::runtime_error(std::string("cannot write report: ") + report_path);
      f << report.dump(2) << "\n";
    }
    *passed = ok ? 1 : 0;
    if (leakage_ratio) *leakage_ratio = ratio;
    return TBSN_OK;
  } catch (...) {
    return map_exception();
  }
}

tbsn_status tbsn_rf_map(tbsn_model* model, int size, uint64_t probe_seed,
                        const char* out_path, const char* format) {
  if (!model || !out_path || !format) {
    set_error("null argument");
    return TBSN_INVALID_ARGUMENT;
  }
  try {
    tbsn::RFMap map = tbsn::rf_map_autodiff(model->state.net_d(),
                                            model->state.input_channels(), size,
                                            {size / 2, size / 2}, probe_seed,
                                            model->state.fingerprint());
    tbsn::export_rf_map(map, out_path, format);
    return TBSN_OK;
  } catch (...) {
    return map_exception();
  }
}

tbsn_status tbsn_train(const char* run_config_json, double* final_val_psnr,
                       double* noisy_val_psnr) {
  if (!run_config_json) {
    set_error("null config");
    return TBSN_INVALID_ARGUMENT;
  }
  try {
    const tbsn::RunConfig cfg = parse_run_config(run_config_json);
    const std::string data_dir = ensure_data_dir(cfg);
    echo_resolved_config(cfg);
    tbsn::TrainStats stats = tbsn::train_bsn(cfg.model, cfg.train, cfg.noise, data_dir,
                                             cfg.io.out_dir, cfg.seed);
    if (final_val_psnr) *final_val_psnr = stats.final_val_psnr;
    if (noisy_val_psnr) *noisy_val_psnr = stats.noisy_val_psnr;
    return TBSN_OK;
  } catch (...) {
    return map_exception();
  }
}

tbsn_status tbsn_distill(const char* run_config_json, const char* teacher_checkpoint,
                         int cache_teacher, double* student_val_psnr,
                         double* teacher_val_psnr) {
  if (!run_config_json || !teacher_checkpoint) {
    set_error("null argument");
    return TBSN_INVALID_ARGUMENT;
  }
  try {
    const tbsn::RunConfig cfg = parse_run_config(run_config_json);
    const std::string data_dir = ensure_data_dir(cfg);
    echo_resolved_config(cfg);
    tbsn::DistillOptions opts;
    opts.cache_teacher = cache_teacher != 0;
    tbsn::TrainStats stats =
        tbsn::distill_train(teacher_checkpoint, cfg.student, cfg.train, cfg.noise,
                            data_dir, cfg.io.out_dir, cfg.seed, opts);
    if (stats.teacher_fingerprint_before != stats.teacher_fingerprint_after) {
      set_error("teacher parameters changed during distillation");
      return TBSN_NUMERIC_ERROR;
    }
    if (student_val_psnr) *student_val_psnr = stats.final_val_psnr;
    if (teacher_val_psnr) *teacher_val_psnr = stats.teacher_val_psnr;
    return TBSN_OK;
  } catch (...) {
    return map_exception();
  }
}

tbsn_status tbsn_evaluate(tbsn_model* model, const char* run_config_json,
                          const char* clean_dir, int pd_factor, int r3_replicas,
                          double r3_p, const char* out_csv, double* mean_psnr,
                          double* mean_ssim) {
  if (!model || !run_config_json || !clean_dir || !out_csv) {
    set_error("null argument");
    return TBSN_INVALID_ARGUMENT;
  }
  try {
    const tbsn::RunConfig cfg = parse_run_config(run_config_json);
    tbsn::ImageDataset ds = tbsn::list_pngs(clean_dir);
    if (ds.empty()) throw std::invalid_argument("no PNG images in " + std::string(clean_dir));
    tbsn::R3Config r3;
    r3.enabled = r3_replicas > 0;
    r3.replicas = r3.enabled ? r3_replicas : 1;
    r3.p = r3_p;
    tbsn::EvalSummary s = tbsn::evaluate_model(model->state.net_f(), ds, cfg.noise,
                                               pd_factor, r3, cfg.seed);
    tbsn::write_eval_csv(out_csv, s);
    if (mean_psnr) *mean_psnr = s.mean_psnr;
    if (mean_ssim) *mean_ssim = s.mean_ssim;
    return TBSN_OK;
  } catch (...) {
    return map_exception();
  }
}

tbsn_status tbsn_generate_dataset(const char* dir, int count, int size, uint64_t seed) {
  if (!dir) {
    set_error("null directory");
    return TBSN_INVALID_ARGUMENT;
  }
  if (count < 1 || size < 16) {
    set_error("count must be >= 1 and size >= 16");
    return TBSN_INVALID_ARGUMENT;
  }
  try {
    tbsn::generate_synthetic_dataset(dir, count, size, seed);
    return TBSN_OK;
  } catch (...) {
    return map_exception();
  }
}

}  // extern "C"

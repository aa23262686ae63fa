// Operator CLI. Everything goes through the public C API in tbsn/tbsn.h;
// this translation unit never touches the core library directly.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "tbsn/tbsn.h"

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

// Stable CI contract: 0 pass, 1 verification failure, 2 usage/config/io
// error, 3 numeric failure.
int exit_code(tbsn_status s) {
  switch (s) {
    case TBSN_OK:
      return 0;
    case TBSN_VERIFY_FAIL:
      return 1;
    case TBSN_NUMERIC_ERROR:
      return 3;
    default:
      return 2;
  }
}

int fail(tbsn_status s) {
  std::fprintf(stderr, "tbsn: error: %s\n", tbsn_last_error());
  return exit_code(s);
}

// Reads and parses the config file; exits 2 on missing file or broken JSON
// before any side effect happens.
bool read_config_json(const std::string& path, json& out) {
  std::ifstream f(path);
  if (!f) {
    std::fprintf(stderr, "tbsn: error: cannot open config file: %s\n", path.c_str());
    return false;
  }
  try {
    f >> out;
  } catch (const json::exception& e) {
    std::fprintf(stderr, "tbsn: error: %s is not valid JSON: %s\n", path.c_str(),
                 e.what());
    return false;
  }
  return true;
}

struct ModelHandle {
  tbsn_model* m = nullptr;
  ~ModelHandle() { tbsn_model_free(m); }
};

std::vector<fs::path> collect_inputs(const std::string& input) {
  std::vector<fs::path> files;
  if (fs::is_directory(input)) {
    for (const auto& e : fs::directory_iterator(input))
      if (e.is_regular_file() && e.path().extension() == ".png")
        files.push_back(e.path());
    std::sort(files.begin(), files.end());
  } else {
    files.emplace_back(input);
  }
  return files;
}

struct R3Flags {
  std::string toggle = "off";
  int replicas = 8;
  double p = 0.16;

  int effective_replicas() const { return toggle == "on" ? replicas : 0; }
};

void add_r3_flags(CLI::App* cmd, R3Flags& r3) {
  cmd->add_option("--r3", r3.toggle, "random replacement refinement (on|off)")
      ->check(CLI::IsMember({"on", "off"}));
  cmd->add_option("--r3-t", r3.replicas, "R3 replica count")->check(CLI::PositiveNumber);
  cmd->add_option("--r3-p", r3.p, "R3 replacement probability");
}

int cmd_train_bsn(const std::string& config_path, const std::string& out,
                  uint64_t seed, bool has_seed) {
  json cfg;
  if (!read_config_json(config_path, cfg)) return 2;
  if (!out.empty()) cfg["io"]["out_dir"] = out;
  if (has_seed) cfg["seed"] = seed;
  double val_psnr = 0.0, noisy_psnr = 0.0;
  const tbsn_status s = tbsn_train(cfg.dump().c_str(), &val_psnr, &noisy_psnr);
  if (s != TBSN_OK) return fail(s);
  std::printf("final val PSNR %.3f dB (noisy input %.3f dB)\n", val_psnr, noisy_psnr);
  return 0;
}

int cmd_distill(const std::string& config_path, const std::string& teacher,
                const std::string& out, uint64_t seed, bool has_seed,
                bool cache_teacher) {
  json cfg;
  if (!read_config_json(config_path, cfg)) return 2;
  if (!out.empty()) cfg["io"]["out_dir"] = out;
  if (has_seed) cfg["seed"] = seed;
  double student_psnr = 0.0, teacher_psnr = 0.0;
  const tbsn_status s = tbsn_distill(cfg.dump().c_str(), teacher.c_str(),
                                     cache_teacher ? 1 : 0, &student_psnr, &teacher_psnr);
  if (s != TBSN_OK) return fail(s);
  std::printf("student val PSNR %.3f dB (teacher %.3f dB)\n", student_psnr, teacher_psnr);
  return 0;
}

int cmd_denoise(const std::string& ckpt, const std::string& input,
                const std::string& output, int pd, const R3Flags& r3, uint64_t seed) {
  ModelHandle h;
  tbsn_status s = tbsn_model_load(ckpt.c_str(), &h.m);
  if (s != TBSN_OK) return fail(s);

  const std::vector<fs::path> files = collect_inputs(input);
  if (files.empty()) {
    std::fprintf(stderr, "tbsn: error: no PNG inputs in %s\n", input.c_str());
    return 2;
  }
  std::error_code ec;
  fs::create_directories(output, ec);

  std::ofstream csv(fs::path(output) / "runtime.csv");
  csv << "name,seconds\n";
  int ok_count = 0;
  for (const auto& f : files) {
    const std::string out_path = (fs::path(output) / f.filename()).string();
    const auto t0 = std::chrono::steady_clock::now();
    s = tbsn_denoise_image(h.m, f.string().c_str(), out_path.c_str(), pd,
                           r3.effective_replicas(), r3.p, seed);
    const std::chrono::duration<double> dt = std::chrono::steady_clock::now() - t0;
    if (s != TBSN_OK) {
      std::fprintf(stderr, "tbsn: warning: skipping %s: %s\n", f.string().c_str(),
                   tbsn_last_error());
      continue;
    }
    csv << f.filename().string() << "," << dt.count() << "\n";
    ++ok_count;
  }
  if (ok_count == 0) {
    std::fprintf(stderr, "tbsn: error: no input could be denoised\n");
    return 2;
  }
  return 0;
}

// --ckpt loads trained weights; --config builds the described architecture
// with randomized weights (structural certification does not need training).
int load_or_build(const std::string& ckpt, const std::string& config_path,
                  uint64_t weight_seed, ModelHandle& h, json& cfg_out) {
  if (!ckpt.empty()) {
    const tbsn_status s = tbsn_model_load(ckpt.c_str(), &h.m);
    return s == TBSN_OK ? 0 : fail(s);
  }
  if (!read_config_json(config_path, cfg_out)) return 2;
  const uint64_t seed =
      cfg_out.contains("seed") ? cfg_out["seed"].get<uint64_t>() : weight_seed;
  const tbsn_status s = tbsn_model_build_random(cfg_out.dump().c_str(), seed, &h.m);
  return s == TBSN_OK ? 0 : fail(s);
}

int cmd_verify(const std::string& ckpt, const std::string& config_path,
               std::string mode, int size, double tol, uint64_t probe_seed,
               const std::string& report, const CLI::App* cmd) {
  ModelHandle h;
  json cfg;
  if (int rc = load_or_build(ckpt, config_path, 1, h, cfg)) return rc;

  // Config-file verify section supplies defaults that explicit flags beat.
  if (cfg.contains("verify")) {
    const json& v = cfg["verify"];
    if (cmd->count("--mode") == 0 && v.contains("mode")) mode = v["mode"].get<std::string>();
    if (cmd->count("--size") == 0 && v.contains("size")) size = v["size"].get<int>();
    if (cmd->count("--tol") == 0 && v.contains("tolerance"))
      tol = v["tolerance"].get<double>();
    if (cmd->count("--probe-seed") == 0 && v.contains("probe_seed"))
      probe_seed = v["probe_seed"].get<uint64_t>();
  }

  int passed = 0;
  double ratio = 0.0;
  const tbsn_status s =
      tbsn_verify(h.m, mode.c_str(), size, tol, probe_seed,
                  report.empty() ? nullptr : report.c_str(), &passed, &ratio);
  if (s != TBSN_OK) return fail(s);
  std::printf("%s: leakage_ratio %.3e (mode %s, size %d, tolerance %.1e)\n",
              passed ? "PASS" : "FAIL", ratio, mode.c_str(), size, tol);
  return passed ? 0 : 1;
}

int cmd_rf_map(const std::string& ckpt, const std::string& config_path, int size,
               uint64_t probe_seed, const std::string& out) {
  ModelHandle h;
  json cfg;
  if (int rc = load_or_build(ckpt, config_path, 1, h, cfg)) return rc;
  std::string format = fs::path(out).extension().string();
  if (!format.empty()) format.erase(0, 1);
  const tbsn_status s = tbsn_rf_map(h.m, size, probe_seed, out.c_str(), format.c_str());
  return s == TBSN_OK ? 0 : fail(s);
}

int cmd_eval(const std::string& ckpt, const std::string& clean,
             const std::string& noise_spec, const std::string& out, int pd,
             const R3Flags& r3, uint64_t seed) {
  ModelHandle h;
  tbsn_status s = tbsn_model_load(ckpt.c_str(), &h.m);
  if (s != TBSN_OK) return fail(s);

  json cfg;
  cfg["seed"] = seed;
  if (!noise_spec.empty()) {
    // Inline JSON object, or a path to a file containing one.
    if (noise_spec.front() == '{') {
      try {
        cfg["noise"] = json::parse(noise_spec);
      } catch (const json::exception& e) {
        std::fprintf(stderr, "tbsn: error: --noise-spec is not valid JSON: %s\n",
                     e.what());
        return 2;
      }
    } else {
      json j;
      if (!read_config_json(noise_spec, j)) return 2;
      cfg["noise"] = j;
    }
  }
  double mean_psnr = 0.0, mean_ssim = 0.0;
  s = tbsn_evaluate(h.m, cfg.dump().c_str(), clean.c_str(), pd,
                    r3.effective_replicas(), r3.p, out.c_str(), &mean_psnr, &mean_ssim);
  if (s != TBSN_OK) return fail(s);
  std::printf("mean PSNR %.3f dB, mean SSIM %.4f (%s)\n", mean_psnr, mean_ssim,
              out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Blind-spot denoiser laboratory"};
  app.require_subcommand(1);

  // Data loading is single-lane by design (deterministic batches); the
  // conventional worker-count variable is accepted but bounds at 1.
  if (const char* w = std::getenv("TBSN_NUM_WORKERS"); w && std::atoi(w) > 1)
    std::fprintf(stderr, "tbsn: note: TBSN_NUM_WORKERS > 1 requested; running with 1\n");

  std::string config_path, out, ckpt, teacher, input, clean, noise_spec, report;
  std::string mode = "parity";
  uint64_t seed = 1, probe_seed = 7;
  int pd = 1, size = 32;
  double tol = 1e-6;
  bool cache_teacher = true;
  R3Flags r3;

  CLI::App* train = app.add_subcommand("train-bsn", "self-supervised training run");
  train->add_option("--config", config_path, "run config JSON")->required();
  train->add_option("--out", out, "run directory (overrides io.out_dir)");
  train->add_option("--seed", seed, "global seed (overrides config)");

  CLI::App* distill = app.add_subcommand("distill", "distill a teacher into the student");
  distill->add_option("--config", config_path, "run config JSON")->required();
  distill->add_option("--teacher", teacher, "teacher checkpoint")->required();
  distill->add_option("--out", out, "run directory (overrides io.out_dir)");
  distill->add_option("--seed", seed, "global seed (overrides config)");
  distill->add_flag("--cache-teacher,!--no-cache-teacher", cache_teacher,
                    "cache teacher outputs across runs");

  CLI::App* denoise = app.add_subcommand("denoise", "denoise PNG images");
  denoise->add_option("--ckpt", ckpt, "model checkpoint")->required();
  denoise->add_option("--input", input, "input PNG or directory of PNGs")->required();
  denoise->add_option("--output", out, "output directory")->required();
  denoise->add_option("--pd", pd, "mosaic factor (1 = plain application)")
      ->check(CLI::PositiveNumber);
  denoise->add_option("--seed", seed, "seed for R3 replacement draws");
  add_r3_flags(denoise, r3);

  CLI::App* verify = app.add_subcommand("verify", "certify the blind-spot property");
  verify->add_option("--ckpt", ckpt, "model checkpoint");
  verify->add_option("--config", config_path, "run config JSON (randomized weights)");
  verify->add_option("--mode", mode, "blocked set: strict|parity")
      ->check(CLI::IsMember({"strict", "parity"}));
  verify->add_option("--size", size, "probe image side length");
  verify->add_option("--tol", tol, "leakage ratio tolerance");
  verify->add_option("--probe-seed", probe_seed, "probe input seed");
  verify->add_option("--report", report, "write report JSON here");

  CLI::App* rfmap = app.add_subcommand("rf-map", "export the receptive-field map");
  rfmap->add_option("--ckpt", ckpt, "model checkpoint");
  rfmap->add_option("--config", config_path, "run config JSON (randomized weights)");
  rfmap->add_option("--size", size, "probe image side length");
  rfmap->add_option("--probe-seed", probe_seed, "probe input seed");
  rfmap->add_option("--out", out, "output path (.pfm or .png)")->required();

  CLI::App* eval = app.add_subcommand("eval", "score a model on a clean directory");
  eval->add_option("--ckpt", ckpt, "model checkpoint")->required();
  eval->add_option("--clean", clean, "directory of clean PNGs")->required();
  eval->add_option("--noise-spec", noise_spec, "noise spec JSON (inline or file)");
  eval->add_option("--out", out, "output CSV path")->required();
  eval->add_option("--pd", pd, "mosaic factor (0 or 1 = plain application)");
  eval->add_option("--seed", seed, "noise synthesis seed");
  add_r3_flags(eval, r3);

  CLI::App* gen = app.add_subcommand("gen-data", "write a synthetic clean corpus");
  int count = 40, img_size = 96;
  gen->add_option("--out", out, "output directory")->required();
  gen->add_option("--count", count, "number of images")->check(CLI::PositiveNumber);
  gen->add_option("--size", img_size, "image side length");
  gen->add_option("--seed", seed, "generator seed");

  CLI11_PARSE(app, argc, argv);

  if (train->parsed())
    return cmd_train_bsn(config_path, out, seed, train->count("--seed") > 0);
  if (distill->parsed())
    return cmd_distill(config_path, teacher, out, seed, distill->count("--seed") > 0,
                       cache_teacher);
  if (denoise->parsed()) return cmd_denoise(ckpt, input, out, pd, r3, seed);
  if (verify->parsed()) {
    if (ckpt.empty() == config_path.empty()) {
      std::fprintf(stderr, "tbsn: error: verify needs exactly one of --ckpt/--config\n");
      return 2;
    }
    return cmd_verify(ckpt, config_path, mode, size, tol, probe_seed, report, verify);
  }
  if (rfmap->parsed()) {
    if (ckpt.empty() == config_path.empty()) {
      std::fprintf(stderr, "tbsn: error: rf-map needs exactly one of --ckpt/--config\n");
      return 2;
    }
    return cmd_rf_map(ckpt, config_path, size, probe_seed, out);
  }
  if (eval->parsed()) return cmd_eval(ckpt, clean, noise_spec, out, pd, r3, seed);
  if (gen->parsed()) {
    const tbsn_status s = tbsn_generate_dataset(out.c_str(), count, img_size, seed);
    return s == TBSN_OK ? 0 : fail(s);
  }
  return 2;
}

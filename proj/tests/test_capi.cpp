// Exercises the public C interface directly: status codes, error text,
// buffer discipline and handle lifecycle.

#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>

#include "core/image_io.hpp"
#include "doctest.h"
#include "json.hpp"
#include "pipeline/data.hpp"
#include "tbsn/tbsn.h"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path scratch() {
  static fs::path p = [] {
    fs::path d = fs::temp_directory_path() / "tbsn_capi_test";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return p;
}

std::string tiny_config(const std::string& csa_mode = "identity") {
  json j{{"seed", 5},
         {"model",
          {{"scales", 2},
           {"base_channels", 8},
           {"blocks_per_scale", {1, 1}},
           {"input_channels", 3},
           {"dtab",
            {{"csa_mode", csa_mode},
             {"group_width", 4},
             {"window", {{"window_size", 4}, {"kv_size", 6}, {"head_dim", 4}}}}}}}};
  return j.dump();
}

struct Handle {
  tbsn_model* m = nullptr;
  ~Handle() { tbsn_model_free(m); }
};

}  // namespace

TEST_CASE("null arguments are rejected with a diagnostic") {
  CHECK(tbsn_model_load(nullptr, nullptr) == TBSN_INVALID_ARGUMENT);
  CHECK(std::strlen(tbsn_last_error()) > 0);
  CHECK(tbsn_model_kind(nullptr, nullptr, 0) == TBSN_INVALID_ARGUMENT);
  CHECK(tbsn_train(nullptr, nullptr, nullptr) == TBSN_INVALID_ARGUMENT);
  CHECK(tbsn_generate_dataset(nullptr, 1, 64, 0) == TBSN_INVALID_ARGUMENT);
}

TEST_CASE("loading a missing checkpoint reports an io error naming the path") {
  Handle h;
  CHECK(tbsn_model_load("/no/such/file.ckpt", &h.m) == TBSN_IO_ERROR);
  CHECK(h.m == nullptr);
  CHECK(std::string(tbsn_last_error()).find("/no/such/file.ckpt") != std::string::npos);
}

TEST_CASE("config errors map to the config status") {
  Handle h;
  CHECK(tbsn_model_build_random("{ not json", 1, &h.m) == TBSN_CONFIG_ERROR);
  CHECK(tbsn_model_build_random(R"({"modell": {}})", 1, &h.m) == TBSN_CONFIG_ERROR);
  CHECK(std::string(tbsn_last_error()).find("modell") != std::string::npos);
}

TEST_CASE("randomized build exposes kind, parameter count and fingerprint") {
  Handle h;
  REQUIRE(tbsn_model_build_random(tiny_config().c_str(), 7, &h.m) == TBSN_OK);

  char kind[16];
  REQUIRE(tbsn_model_kind(h.m, kind, sizeof kind) == TBSN_OK);
  CHECK(std::string(kind) == "tbsn");

  uint64_t count = 0;
  REQUIRE(tbsn_model_param_count(h.m, &count) == TBSN_OK);
  CHECK(count > 1000);

  char fp[32];
  REQUIRE(tbsn_model_fingerprint(h.m, fp, sizeof fp) == TBSN_OK);
  CHECK(std::strlen(fp) == 16);

  // Same seed, same identity; different seed, different identity.
  Handle h2, h3;
  REQUIRE(tbsn_model_build_random(tiny_config().c_str(), 7, &h2.m) == TBSN_OK);
  REQUIRE(tbsn_model_build_random(tiny_config().c_str(), 8, &h3.m) == TBSN_OK);
  char fp2[32], fp3[32];
  REQUIRE(tbsn_model_fingerprint(h2.m, fp2, sizeof fp2) == TBSN_OK);
  REQUIRE(tbsn_model_fingerprint(h3.m, fp3, sizeof fp3) == TBSN_OK);
  CHECK(std::string(fp) == fp2);
  CHECK(std::string(fp) != fp3);

  // A buffer that cannot hold the string is refused, not truncated.
  char small[4];
  CHECK(tbsn_model_fingerprint(h.m, small, sizeof small) == TBSN_INVALID_ARGUMENT);
}

TEST_CASE("verification through the C surface certifies and reports") {
  Handle h;
  REQUIRE(tbsn_model_build_random(tiny_config("identity").c_str(), 21, &h.m) == TBSN_OK);

  const fs::path report = scratch() / "capi_report.json";
  int passed = -1;
  double ratio = -1.0;
  REQUIRE(tbsn_verify(h.m, "parity", 16, 1e-6, 11, report.string().c_str(), &passed,
                      &ratio) == TBSN_OK);
  CHECK(passed == 1);
  CHECK(ratio == 0.0);

  json rep;
  std::ifstream(report) >> rep;
  CHECK(rep["pass"] == true);
  CHECK(rep["autodiff"]["max_blocked"].get<double>() == 0.0);
  CHECK(rep.contains("perturbation"));

  // Unknown blocked-set name is a config error, not a silent default.
  CHECK(tbsn_verify(h.m, "sideways", 16, 1e-6, 11, nullptr, &passed, &ratio) ==
        TBSN_CONFIG_ERROR);

  // Probe sizes beyond the perturbation budget run the gradient oracle only.
  REQUIRE(tbsn_verify(h.m, "parity", 34, 1e-6, 11, report.string().c_str(), &passed,
                      &ratio) == TBSN_OK);
  CHECK(passed == 1);
  std::ifstream(report) >> rep;
  CHECK(!rep.contains("perturbation"));
}

TEST_CASE("receptive-field export through the C surface") {
  Handle h;
  REQUIRE(tbsn_model_build_random(tiny_config().c_str(), 3, &h.m) == TBSN_OK);
  const fs::path pfm = scratch() / "map.pfm";
  REQUIRE(tbsn_rf_map(h.m, 16, 11, pfm.string().c_str(), "pfm") == TBSN_OK);
  const tbsn::Tensor<float> map = tbsn::read_pfm(pfm.string());
  CHECK(map.h == 16);
  CHECK(map.w == 16);
  CHECK(tbsn_rf_map(h.m, 16, 11, (scratch() / "map.bmp").string().c_str(), "bmp") ==
        TBSN_CONFIG_ERROR);
}

TEST_CASE("dataset synthesis, training, denoising and evaluation round-trip") {
  const fs::path data = scratch() / "data";
  REQUIRE(tbsn_generate_dataset(data.string().c_str(), 6, 64, 3) == TBSN_OK);
  CHECK(tbsn::list_pngs(data.string()).size() == 6);
  CHECK(tbsn_generate_dataset(data.string().c_str(), 0, 64, 3) == TBSN_INVALID_ARGUMENT);

  json cfg = json::parse(tiny_config("full"));
  cfg["train"] = {{"batch_size", 2}, {"patch_size", 20}, {"total_iters", 2},
                  {"log_every", 1},  {"eval_every", 2},  {"checkpoint_every", 2},
                  {"pd_train", 5},   {"pd_infer", 2},    {"val_max_images", 2},
                  {"r3", {{"enabled", false}}}};
  cfg["noise"] = {{"sigma", 0.098}};
  cfg["data"] = {{"dir", data.string()}};
  cfg["io"] = {{"out_dir", (scratch() / "run").string()}};

  double val = 0.0, noisy = 0.0;
  REQUIRE(tbsn_train(cfg.dump().c_str(), &val, &noisy) == TBSN_OK);
  CHECK(val > 0.0);
  CHECK(noisy > 0.0);
  const fs::path ckpt = scratch() / "run" / "ckpt_final.ckpt";
  REQUIRE(fs::exists(ckpt));
  CHECK(fs::exists(scratch() / "run" / "resolved-config.json"));

  Handle h;
  REQUIRE(tbsn_model_load(ckpt.string().c_str(), &h.m) == TBSN_OK);

  const std::string in_png = (data / "img_0000.png").string();
  const std::string out_png = (scratch() / "denoised.png").string();
  REQUIRE(tbsn_denoise_image(h.m, in_png.c_str(), out_png.c_str(), 2, 2, 0.16, 4) ==
          TBSN_OK);
  const tbsn::Tensor<float> in = tbsn::read_png(in_png);
  const tbsn::Tensor<float> out = tbsn::read_png(out_png);
  CHECK(out.h == in.h);
  CHECK(out.w == in.w);

  // Grayscale input into an RGB model: channel mismatch is a config error.
  const fs::path gray = scratch() / "gray.png";
  tbsn::Tensor<float> g(1, 1, 32, 32);
  g.fill(0.5f);
  tbsn::write_png(gray.string(), g);
  CHECK(tbsn_denoise_image(h.m, gray.string().c_str(), out_png.c_str(), 1, 0, 0.0, 4) ==
        TBSN_CONFIG_ERROR);

  const fs::path csv = scratch() / "eval.csv";
  double mean_psnr = 0.0, mean_ssim = 0.0;
  json eval_cfg{{"seed", 4}, {"noise", {{"sigma", 0.098}}}};
  REQUIRE(tbsn_evaluate(h.m, eval_cfg.dump().c_str(), data.string().c_str(), 2, 0, 0.0,
                        csv.string().c_str(), &mean_psnr, &mean_ssim) == TBSN_OK);
  CHECK(mean_psnr > 0.0);
  CHECK(mean_ssim > -1.0);
  CHECK(fs::exists(csv));

  // Distillation against the frozen teacher.
  cfg["student"] = {{"scales", 2}, {"base_channels", 8}, {"blocks_per_scale", {1, 1}},
                    {"input_channels", 3}};
  cfg["io"]["out_dir"] = (scratch() / "student_run").string();
  double sval = 0.0, tval = 0.0;
  REQUIRE(tbsn_distill(cfg.dump().c_str(), ckpt.string().c_str(), 1, &sval, &tval) ==
          TBSN_OK);
  CHECK(tval > 0.0);
  Handle hs;
  REQUIRE(tbsn_model_load((scratch() / "student_run" / "ckpt_final.ckpt").string().c_str(),
                          &hs.m) == TBSN_OK);
  char kind[16];
  REQUIRE(tbsn_model_kind(hs.m, kind, sizeof kind) == TBSN_OK);
  CHECK(std::string(kind) == "student");
}

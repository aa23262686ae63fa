// Drives the installed command-line binary as a subprocess and checks the
// exit-code contract and artifact outputs.

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "arch/checkpoint.hpp"
#include "core/image_io.hpp"
#include "doctest.h"
#include "json.hpp"
#include "pipeline/metrics.hpp"
#include "pipeline/train.hpp"

using namespace tbsn;
namespace fs = std::filesystem;

namespace {

int run_cli(const std::string& args) {
  const std::string cmd = std::string(TBSN_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  REQUIRE(rc != -1);
  REQUIRE(WIFEXITED(rc));
  return WEXITSTATUS(rc);
}

fs::path scratch() {
  static fs::path p = [] {
    fs::path d = fs::temp_directory_path() / "tbsn_cli_test";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return p;
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream(path) << j.dump(2);
}

nlohmann::json tiny_model_json(const std::string& csa_mode = "full",
                               const std::string& downsample = "parity") {
  return {{"scales", 2},
          {"base_channels", 8},
          {"blocks_per_scale", {1, 1}},
          {"input_channels", 3},
          {"downsample", downsample},
          {"dtab",
           {{"csa_mode", csa_mode},
            {"group_width", 4},
            {"window", {{"window_size", 4}, {"kv_size", 6}, {"head_dim", 4}}}}}};
}

nlohmann::json tiny_train_json() {
  return {{"batch_size", 2}, {"patch_size", 20}, {"total_iters", 3},
          {"log_every", 1},  {"eval_every", 3},  {"checkpoint_every", 3},
          {"pd_train", 5},   {"pd_infer", 2},    {"val_max_images", 2},
          {"r3", {{"enabled", false}}}};
}

// One shared tiny training run; later cases reuse its checkpoint.
struct Fixture {
  fs::path dir = scratch();
  fs::path data = dir / "data";
  fs::path run = dir / "run";
  std::string ckpt() const { return (run / "ckpt_final.ckpt").string(); }

  Fixture() {
    static bool done = [this] {
      REQUIRE(run_cli("gen-data --out " + data.string() + " --count 6 --size 64 --seed 3") ==
              0);
      nlohmann::json cfg{{"seed", 9},
                         {"model", tiny_model_json()},
                         {"train", tiny_train_json()},
                         {"noise", {{"sigma", 0.098}}},
                         {"data", {{"dir", data.string()}}},
                         {"io", {{"out_dir", run.string()}}}};
      write_json(dir / "train.json", cfg);
      REQUIRE(run_cli("train-bsn --config " + (dir / "train.json").string()) == 0);
      REQUIRE(fs::exists(run / "ckpt_final.ckpt"));
      return true;
    }();
    (void)done;
  }
};

}  // namespace

TEST_CASE("missing or malformed config exits 2 with no side effects") {
  CHECK(run_cli("train-bsn --config /no/such/config.json") == 2);

  const fs::path bad = scratch() / "bad.json";
  std::ofstream(bad) << "{ definitely not json";
  CHECK(run_cli("train-bsn --config " + bad.string()) == 2);

  // Unknown schema key: rejected before any run directory appears.
  const fs::path rogue = scratch() / "rogue.json";
  write_json(rogue, {{"trian", {{"batch_size", 2}}},
                     {"io", {{"out_dir", (scratch() / "rogue_run").string()}}}});
  CHECK(run_cli("train-bsn --config " + rogue.string()) == 2);
  CHECK(!fs::exists(scratch() / "rogue_run"));
}

TEST_CASE("verify certifies the blind architecture and rejects the broken one") {
  const fs::path cfg = scratch() / "certify.json";
  write_json(cfg, {{"seed", 5},
                   {"model", tiny_model_json("identity")},
                   {"verify",
                    {{"mode", "parity"}, {"size", 16}, {"tolerance", 1e-6},
                     {"probe_seed", 11}}}});
  const fs::path report = scratch() / "report.json";
  CHECK(run_cli("verify --config " + cfg.string() + " --report " + report.string()) == 0);

  REQUIRE(fs::exists(report));
  nlohmann::json rep;
  std::ifstream(report) >> rep;
  CHECK(rep["pass"] == true);
  CHECK(rep["autodiff"]["leakage_ratio"].get<double>() == 0.0);
  // Probe size 16 runs the second oracle too, and they must agree.
  CHECK(rep.contains("perturbation"));
  CHECK(rep["oracle_rel_linf"].get<double>() < 1e-3);

  // Same architecture with the phase-mixing downsample substituted: the
  // certification gate must fail.
  const fs::path broken = scratch() / "broken.json";
  write_json(broken, {{"seed", 5},
                      {"model", tiny_model_json("identity", "pixel_unshuffle")},
                      {"verify", {{"mode", "parity"}, {"size", 16}}}});
  CHECK(run_cli("verify --config " + broken.string()) == 1);

  // Flags override the config's verify section.
  CHECK(run_cli("verify --config " + cfg.string() + " --size 12") == 0);
  CHECK(run_cli("verify --config " + cfg.string() + " --mode strict") == 0);

  // Exactly one model source.
  CHECK(run_cli("verify --config " + cfg.string() + " --ckpt x.ckpt") == 2);
  CHECK(run_cli("verify") == 2);
}

TEST_CASE("rf-map exports a reloadable PFM heatmap") {
  const fs::path cfg = scratch() / "rfmap.json";
  write_json(cfg, {{"seed", 5}, {"model", tiny_model_json("identity")}});
  const fs::path pfm = scratch() / "map.pfm";
  CHECK(run_cli("rf-map --config " + cfg.string() + " --size 16 --out " + pfm.string()) ==
        0);
  const Tensor<float> map = read_pfm(pfm.string());
  CHECK(map.h == 16);
  CHECK(map.w == 16);

  const fs::path png = scratch() / "map.png";
  CHECK(run_cli("rf-map --config " + cfg.string() + " --size 16 --out " + png.string()) ==
        0);
  CHECK(read_png(png.string()).h == 16);
}

TEST_CASE("training run artifacts and checkpoint reuse") {
  Fixture fx;
  CHECK(fs::exists(fx.run / "metrics.csv"));
  CHECK(fs::exists(fx.run / "resolved-config.json"));

  // The trained model keeps full channel attention, whose global statistics
  // carry a small diluted residue onto the blocked lattice. It passes the
  // dilution gate but not the strict one.
  CHECK(run_cli("verify --ckpt " + fx.ckpt() + " --mode parity --size 16 --tol 1e-2") ==
        0);
  CHECK(run_cli("verify --ckpt " + fx.ckpt() + " --mode parity --size 16 --tol 1e-9") ==
        1);

  // A checkpoint from the future is refused.
  const fs::path tampered = scratch() / "future.ckpt";
  fs::copy_file(fx.ckpt(), tampered, fs::copy_options::overwrite_existing);
  std::fstream f(tampered, std::ios::in | std::ios::out | std::ios::binary);
  f.seekp(8);
  const uint32_t version = 99;
  f.write(reinterpret_cast<const char*>(&version), 4);
  f.close();
  CHECK(run_cli("verify --ckpt " + tampered.string() + " --size 16") == 2);
}

TEST_CASE("resolved config reproduces the run it came from") {
  Fixture fx;
  const fs::path rerun = scratch() / "rerun";
  CHECK(run_cli("train-bsn --config " + (fx.run / "resolved-config.json").string() +
                " --out " + rerun.string()) == 0);

  std::ifstream a(fx.run / "metrics.csv"), b(rerun / "metrics.csv");
  const std::string ma((std::istreambuf_iterator<char>(a)), {});
  const std::string mb((std::istreambuf_iterator<char>(b)), {});
  CHECK(ma == mb);

  const LoadedCheckpoint c1 = load_checkpoint(fx.ckpt());
  const LoadedCheckpoint c2 = load_checkpoint((rerun / "ckpt_final.ckpt").string());
  for (const auto& [name, p] : c1.params) CHECK(p.values == c2.params.at(name).values);
}

TEST_CASE("denoise writes one output per input plus a runtime sidecar") {
  Fixture fx;
  const fs::path out = scratch() / "denoised";
  CHECK(run_cli("denoise --ckpt " + fx.ckpt() + " --input " + fx.data.string() +
                " --output " + out.string() + " --pd 2") == 0);

  int count = 0;
  for (const auto& e : fs::directory_iterator(fx.data))
    if (e.path().extension() == ".png") {
      ++count;
      const Tensor<float> in = read_png(e.path().string());
      const Tensor<float> res = read_png((out / e.path().filename()).string());
      CHECK(res.h == in.h);
      CHECK(res.w == in.w);
    }
  CHECK(count == 6);

  std::ifstream csv(out / "runtime.csv");
  std::string header;
  std::getline(csv, header);
  CHECK(header == "name,seconds");
  int rows = 0;
  for (std::string line; std::getline(csv, line);) ++rows;
  CHECK(rows == 6);
}

TEST_CASE("denoise with factor 1 equals the direct library application") {
  Fixture fx;
  const fs::path out = scratch() / "denoise_pd1";
  const std::string input = (fx.data / "img_0000.png").string();
  CHECK(run_cli("denoise --ckpt " + fx.ckpt() + " --input " + input + " --output " +
                out.string() + " --pd 1") == 0);

  auto model = load_tbsn_model<float>(fx.ckpt());
  const Tensor<float> direct = clip01(model->net->forward(read_png(input)));
  const fs::path ref = scratch() / "ref.png";
  write_png(ref.string(), direct);

  const Tensor<float> a = read_png((out / "img_0000.png").string());
  const Tensor<float> b = read_png(ref.string());
  CHECK(a.v == b.v);
}

TEST_CASE("denoise skips unreadable images and fails only when all do") {
  Fixture fx;
  const fs::path mixed = scratch() / "mixed";
  fs::create_directories(mixed);
  fs::copy_file(fx.data / "img_0001.png", mixed / "ok.png",
                fs::copy_options::overwrite_existing);
  std::ofstream(mixed / "junk.png") << "not a png";

  const fs::path out = scratch() / "mixed_out";
  CHECK(run_cli("denoise --ckpt " + fx.ckpt() + " --input " + mixed.string() +
                " --output " + out.string() + " --pd 1") == 0);
  CHECK(fs::exists(out / "ok.png"));
  CHECK(!fs::exists(out / "junk.png"));

  const fs::path junk_only = scratch() / "junk_only";
  fs::create_directories(junk_only);
  std::ofstream(junk_only / "junk.png") << "still not a png";
  CHECK(run_cli("denoise --ckpt " + fx.ckpt() + " --input " + junk_only.string() +
                " --output " + (scratch() / "junk_out").string() + " --pd 1") != 0);
}

TEST_CASE("eval writes per-image rows and is reproducible under one seed") {
  Fixture fx;
  const fs::path csv1 = scratch() / "eval1.csv";
  const fs::path csv2 = scratch() / "eval2.csv";
  const std::string common = "eval --ckpt " + fx.ckpt() + " --clean " + fx.data.string() +
                             " --pd 2 --seed 4 --out ";
  CHECK(run_cli(common + csv1.string()) == 0);
  CHECK(run_cli(common + csv2.string()) == 0);

  std::ifstream a(csv1), b(csv2);
  const std::string ca((std::istreambuf_iterator<char>(a)), {});
  const std::string cb((std::istreambuf_iterator<char>(b)), {});
  CHECK(ca == cb);
  CHECK(ca.substr(0, 15) == "name,psnr,ssim\n");

  // Empty input directory is a usage error.
  const fs::path empty = scratch() / "empty";
  fs::create_directories(empty);
  CHECK(run_cli("eval --ckpt " + fx.ckpt() + " --clean " + empty.string() + " --out " +
                (scratch() / "never.csv").string()) == 2);
}

TEST_CASE("distill runs through the CLI against a trained teacher") {
  Fixture fx;
  nlohmann::json cfg{
      {"seed", 9},
      {"student",
       {{"scales", 2}, {"base_channels", 8}, {"blocks_per_scale", {1, 1}},
        {"input_channels", 3}}},
      {"train", tiny_train_json()},
      {"noise", {{"sigma", 0.098}}},
      {"data", {{"dir", fx.data.string()}}},
      {"io", {{"out_dir", (scratch() / "student_run").string()}}}};
  write_json(scratch() / "distill.json", cfg);

  CHECK(run_cli("distill --config " + (scratch() / "distill.json").string() +
                " --teacher " + fx.ckpt()) == 0);
  const fs::path sckpt = scratch() / "student_run" / "ckpt_final.ckpt";
  REQUIRE(fs::exists(sckpt));
  const LoadedCheckpoint c = load_checkpoint(sckpt.string());
  CHECK(c.meta.kind == "student");

  // The student checkpoint drives denoise in plain mode.
  CHECK(run_cli("denoise --ckpt " + sckpt.string() + " --input " +
                (fx.data / "img_0000.png").string() + " --output " +
                (scratch() / "student_out").string() + " --pd 1") == 0);
}

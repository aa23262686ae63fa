// Acceptance gate: one pass/fail line per criterion, exit 0 only if all
// pass. Training-based criteria share artifacts through a scratch directory
// rebuilt on every run; every number they assert is printed.

#include <sys/wait.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "arch/checkpoint.hpp"
#include "arch/layers.hpp"
#include "arch/model.hpp"
#include "config/runconfig.hpp"
#include "mask/ops.hpp"
#include "mask/parity.hpp"
#include "pipeline/metrics.hpp"
#include "pipeline/optim.hpp"
#include "pipeline/train.hpp"
#include "verify/rfmap.hpp"

using namespace tbsn;
namespace fs = std::filesystem;

namespace {

char detail_buf[512];
const char* detail(const char* fmt, auto... args) {
  std::snprintf(detail_buf, sizeof detail_buf, fmt, args...);
  return detail_buf;
}

fs::path art() {
  static fs::path p = [] {
    fs::path d = fs::current_path() / "acceptance_artifacts";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return p;
}

// ---------------------------------------------------------------- fixtures

constexpr uint64_t kCorpusSeed = 11;
constexpr int kCorpusCount = 24;
constexpr int kCorpusSize = 96;
constexpr double kSigma = 25.0 / 255.0;

std::string corpus() {
  static std::string dir = [] {
    const fs::path d = art() / "data";
    generate_synthetic_dataset(d.string(), kCorpusCount, kCorpusSize, kCorpusSeed);
    return d.string();
  }();
  return dir;
}

NoiseSpec noise_spec() {
  NoiseSpec n;  // correlated, bilinear kernel
  n.sigma = kSigma;
  n.seed = 0;
  return n;
}

// Shared backbone of the training studies: a two-scale network and the
// abbreviated schedule the ablation arms all use.
TBSNConfig study_model() {
  TBSNConfig cfg;
  cfg.scales = 2;
  cfg.base_channels = 16;
  cfg.blocks_per_scale = {1, 1};
  cfg.input_channels = 3;
  cfg.dtab.group_width = 8;
  cfg.dtab.window = {4, 6, 1, 8};
  return cfg;
}

TrainConfig study_train(int64_t iters) {
  TrainConfig t;
  t.batch_size = 2;
  t.patch_size = 48;
  t.total_iters = iters;
  t.optim.lr0 = 3e-4;
  t.optim.lr_decay_every = iters > 1500 ? iters - 1500 : iters;  // late polish step
  t.log_every = 500;
  t.eval_every = iters;
  t.checkpoint_every = iters;
  t.pd_train = 5;
  t.pd_infer = 2;
  t.val_max_images = 3;
  t.r3 = {true, 4, 0.16};
  return t;
}

constexpr int64_t kStudyIters = 4000;
constexpr int64_t kLeakIters = 3000;
constexpr int64_t kDistillIters = 2500;

// The self-supervised efficacy run doubles as the ablation's full arm and
// the distillation teacher.
const TrainStats& full_arm() {
  static TrainStats stats = [] {
    return train_bsn(study_model(), study_train(kStudyIters), noise_spec(), corpus(),
                     (art() / "full").string(), 1);
  }();
  return stats;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(TBSN_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  if (rc == -1 || !WIFEXITED(rc)) return -1;
  return WEXITSTATUS(rc);
}

using Result = std::pair<bool, std::string>;

// ---------------------------------------------------------------- criteria

// Attention mask against an exhaustive enumeration of the even-even offset
// predicate, for every window/field pairing in the grid.
Result c1_mask_oracle() {
  for (int m : {2, 4, 8})
    for (int k : {m, m + 4}) {
      WindowSpec spec{m, k, 1, 4};
      const AttentionMask mask = build_attention_mask(spec);
      if (mask.q_count != m * m || mask.kv_count != k * k)
        return {false, detail("M=%d K=%d: wrong table shape", m, k)};
      const int margin = (k - m) / 2;
      for (int qy = 0; qy < m; ++qy)
        for (int qx = 0; qx < m; ++qx)
          for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
              const int dy = (ky - margin) - qy;
              const int dx = (kx - margin) - qx;
              const bool allowed = dy % 2 == 0 && dx % 2 == 0;
              const float got =
                  mask.at(qy * m + qx, ky * k + kx);
              const bool pass = allowed ? got == 0.0f
                                        : std::isinf(got) && got < 0.0f;
              if (!pass)
                return {false, detail("M=%d K=%d q=(%d,%d) kv=(%d,%d): offset "
                                      "(%d,%d) mishandled",
                                      m, k, qy, qx, ky, kx, dy, dx)};
            }
    }
  return {true, "exact match for M in {2,4,8}, K in {M, M+4}"};
}

// Default-architecture blindness on the even-even lattice when channel
// attention runs in its certified (identity) mode.
Result c2_strict_parity_blindness() {
  TBSNConfig cfg;  // default width and depth
  cfg.dtab.csa_mode = CsaMode::identity;
  double worst = 0.0;
  for (uint64_t seed : {101u, 102u, 103u}) {
    auto model = TBSNModel<double>::build(cfg, seed);
    randomize_for_certification(model->store, seed);
    const RFMap map =
        rf_map_autodiff(*model->net, cfg.input_channels, 64, {32, 32}, seed + 7);
    const BlindSpotReport rep =
        blind_spot_report(map, BlindSpotMode::parity_class, 1e-6);
    worst = std::max(worst, rep.leakage_ratio);
    if (!rep.pass || rep.degenerate)
      return {false, detail("seed %llu: leakage ratio %.3e",
                            static_cast<unsigned long long>(seed), rep.leakage_ratio)};
  }
  return {true, detail("3 seeds, 64x64 probe, worst leakage ratio %.3e <= 1e-6", worst)};
}

// The backward-pass map and the forward-only perturbation map must describe
// the same receptive field.
Result c3_oracle_cross_check() {
  TBSNConfig cfg;
  cfg.base_channels = 16;
  cfg.blocks_per_scale = {1, 1, 1};
  cfg.dtab.group_width = 16;
  auto model = TBSNModel<double>::build(cfg, 303);
  randomize_for_certification(model->store, 303);
  const RFMap grad = rf_map_autodiff(*model->net, 3, 16, {8, 8}, 9);
  const RFMap pert = rf_map_perturbation(*model->net, 3, 16, {8, 8}, 1e-3, 9);
  const double d = rf_map_rel_linf(grad, pert);
  return {d <= 1e-3,
          detail("autodiff vs perturbation relative L-inf %.3e (tolerance 1e-3)", d)};
}

// Swapping the parity-preserving downsample for plain pixel-unshuffle must
// break certification at the command-line gate.
Result c4_negative_control() {
  // Small architecture: the control is about the resampling algebra, and the
  // size <= 32 path runs the forward-only oracle too, which is quadratic in
  // the probe area.
  const char* arch = R"("scales": 2, "base_channels": 16, "blocks_per_scale": [1, 1],
    "dtab": {"csa_mode": "identity", "group_width": 8,
             "window": {"window_size": 4, "kv_size": 6, "head_dim": 8}})";
  const fs::path cfg = art() / "broken.json";
  std::ofstream(cfg) << "{\"model\": {\"downsample\": \"pixel_unshuffle\", " << arch
                     << "}, \"verify\": {\"mode\": \"parity\", \"size\": 16, "
                        "\"tolerance\": 1e-6}}";
  const int broken = run_cli("verify --config " + cfg.string());
  const fs::path good = art() / "blind.json";
  std::ofstream(good) << "{\"model\": {" << arch
                      << "}, \"verify\": {\"mode\": \"parity\", \"size\": 16, "
                         "\"tolerance\": 1e-6}}";
  const int intact = run_cli("verify --config " + good.string());
  return {broken == 1 && intact == 0,
          detail("verify exit codes: pixel-unshuffle %d (want 1), parity %d (want 0)",
                 broken, intact)};
}

// Full channel attention leaks through global statistics, but grouping
// dilutes the residue by orders of magnitude. The measured ratio is pinned
// so regressions surface immediately.
Result c5_leakage_dilution() {
  constexpr double kPinnedRatio = 5.601e-4;  // measured on this implementation
  TBSNConfig cfg;  // default: csa_mode full
  auto model = TBSNModel<double>::build(cfg, 1);
  randomize_for_certification(model->store, 1);
  const RFMap map = rf_map_autodiff(*model->net, 3, 64, {32, 32}, 8);
  const BlindSpotReport rep = blind_spot_report(map, BlindSpotMode::parity_class, 1e-2);
  const bool in_band = rep.leakage_ratio > kPinnedRatio / 2 &&
                       rep.leakage_ratio < kPinnedRatio * 2;
  return {rep.pass && !rep.degenerate && in_band,
          detail("leakage ratio %.3e (criterion <= 1e-2, pinned %.3e x/2..x2)",
                 rep.leakage_ratio, kPinnedRatio)};
}

// Undivided channel attention meets the leakage condition at the coarse
// scale and trains into the blind-spot information; grouping blocks that.
Result c6_channel_leakage_study() {
  TBSNConfig grouped;
  grouped.scales = 3;
  grouped.base_channels = 16;
  grouped.blocks_per_scale = {1, 1, 2};
  grouped.input_channels = 3;
  grouped.dtab.group_width = 8;
  grouped.dtab.window = {4, 6, 1, 8};
  TBSNConfig ungrouped = grouped;
  ungrouped.dtab.csa_mode = CsaMode::ungrouped;

  TrainConfig t = study_train(kLeakIters);
  t.patch_size = 24;
  t.optim.lr0 = 1e-3;
  t.optim.lr_decay_every = kLeakIters;

  // The study needs the leakage precondition to actually hold.
  if (ungrouped.leakage_warnings(t.patch_size).empty())
    return {false, "configuration does not meet the leakage condition"};

  const TrainStats g = train_bsn(grouped, t, noise_spec(), corpus(),
                                 (art() / "leak_grouped").string(), 1);
  const TrainStats u = train_bsn(ungrouped, t, noise_spec(), corpus(),
                                 (art() / "leak_ungrouped").string(), 1);
  const double gap = g.final_val_psnr - u.final_val_psnr;
  return {gap >= 1.0,
          detail("grouped %.2f dB vs ungrouped %.2f dB (gap %.2f, need >= 1)",
                 g.final_val_psnr, u.final_val_psnr, gap)};
}

// Component ablation: both attentions beat either alone beats neither, in
// the same order the source architecture reports.
Result c7_dtab_ablation_order() {
  const double full = full_arm().final_val_psnr;

  auto arm = [&](bool use_csa, bool use_wsa, const char* name) {
    TBSNConfig cfg = study_model();
    cfg.dtab.use_csa = use_csa;
    cfg.dtab.use_wsa = use_wsa;
    return train_bsn(cfg, study_train(kStudyIters), noise_spec(), corpus(),
                     (art() / name).string(), 1)
        .final_val_psnr;
  };
  const double csa_only = arm(true, false, "csa_only");
  const double wsa_only = arm(false, true, "wsa_only");
  const double neither = arm(false, false, "neither");

  const bool ordered = full > csa_only && csa_only > wsa_only && wsa_only > neither;
  return {ordered,
          detail("full %.2f > csa %.2f > wsa %.2f > neither %.2f dB: %s", full,
                 csa_only, wsa_only, neither, ordered ? "holds" : "violated")};
}

// Training against noisy targets alone must clear the noisy input by a wide
// margin on held-out images.
Result c8_self_supervised_efficacy() {
  const TrainStats& s = full_arm();
  const double gain = s.final_val_psnr - s.noisy_val_psnr;
  return {gain >= 5.0,
          detail("val %.2f dB vs noisy %.2f dB (gain %.2f, need >= 5)",
                 s.final_val_psnr, s.noisy_val_psnr, gain)};
}

// The compact student distilled from the frozen teacher lands within the
// paper-scale gap, at the pinned parameter budget.
Result c9_distillation_parity() {
  StudentUNetConfig scfg;  // default: the ~1.1M-parameter student
  auto probe = StudentModel<float>::build(scfg, 0);
  const auto params = probe->store.count_scalars();
  if (params < 972000 || params > 1188000)
    return {false, detail("student parameter count %zu outside 1.08M +/- 10%%", params)};

  TrainConfig t = study_train(kDistillIters);
  DistillOptions opts;
  const TrainStats s =
      distill_train(full_arm().final_checkpoint, scfg, t, noise_spec(), corpus(),
                    (art() / "distill").string(), 2, opts);
  if (s.teacher_fingerprint_before != s.teacher_fingerprint_after)
    return {false, "teacher changed during distillation"};
  const double gap = std::abs(s.teacher_val_psnr - s.final_val_psnr);
  return {gap <= 0.2,
          detail("teacher %.3f dB vs student %.3f dB (|gap| %.3f <= 0.2), %zu params",
                 s.teacher_val_psnr, s.final_val_psnr, gap, params)};
}

// Bit-exact and closed-form facts that must never drift.
Result c10_exactness_suite() {
  Rng rng(55);
  Tensor<float> x(2, 3, 37, 41);
  for (auto& v : x.v) v = static_cast<float>(rng.uniform());

  // Mosaic and parity rearrangements invert exactly.
  auto [mosaic, layout] = pd_down(x, 5);
  if (pd_up(mosaic, layout).v != x.v) return {false, "pd round trip not bit-exact"};
  Tensor<float> even(4, 3, 16, 16);
  for (auto& v : even.v) v = static_cast<float>(rng.uniform());
  if (parity_up(parity_down(even)).v != even.v)
    return {false, "parity round trip not bit-exact"};

  // The centrally masked convolution ignores the center pixel exactly.
  ParameterStore<float> store;
  Conv2dLayer<float> conv(store, "head", 3, 8, 3, 1, 1, true, false, true);
  store.init_values(3);
  Tensor<float> a(1, 3, 9, 9);
  for (auto& v : a.v) v = static_cast<float>(rng.uniform());
  Tensor<float> b = a;
  for (int c = 0; c < 3; ++c) b.at(0, c, 4, 4) += 10.0f;
  const Tensor<float> ya = conv.forward(a);
  const Tensor<float> yb = conv.forward(b);
  for (int c = 0; c < 8; ++c)
    if (ya.at(0, c, 4, 4) != yb.at(0, c, 4, 4))
      return {false, "masked convolution output depends on its center input"};

  // Learning-rate schedule at the five probe iterations.
  OptimConfig o;
  const int64_t probes[] = {0, 39999, 40000, 80000, 99999};
  const double want[] = {3e-4, 3e-4, 3e-5, 3e-6, 3e-6};
  for (int i = 0; i < 5; ++i)
    if (std::abs(lr_at(o, probes[i]) - want[i]) > 1e-15)
      return {false, detail("lr(%lld) != %.0e", static_cast<long long>(probes[i]),
                            want[i])};

  // Metric identities: the cap and perfect similarity.
  Tensor<float> img(1, 3, 16, 16);
  for (auto& v : img.v) v = static_cast<float>(rng.uniform());
  if (psnr(img, img) != kPsnrCap) return {false, "psnr(x,x) != cap"};
  if (std::abs(ssim(img, img) - 1.0) > 1e-12) return {false, "ssim(x,x) != 1"};

  return {true, "pd/parity bit-exact, masked center exact, lr and metric identities"};
}

}  // namespace

// Optional arguments select a subset of criteria by number (development
// convenience); no arguments runs the whole gate.
int main(int argc, char** argv) {
  struct Criterion {
    int id;
    const char* name;
    std::function<Result()> run;
  };
  const std::vector<Criterion> criteria{
      {1, "mask oracle equivalence", c1_mask_oracle},
      {2, "strict parity blindness", c2_strict_parity_blindness},
      {3, "oracle cross-check", c3_oracle_cross_check},
      {4, "negative control", c4_negative_control},
      {5, "leakage dilution", c5_leakage_dilution},
      {6, "channel-leakage training study", c6_channel_leakage_study},
      {7, "attention ablation ordering", c7_dtab_ablation_order},
      {8, "self-supervised efficacy", c8_self_supervised_efficacy},
      {9, "distillation parity", c9_distillation_parity},
      {10, "exactness suite", c10_exactness_suite},
  };

  std::vector<int> only;
  for (int i = 1; i < argc; ++i) only.push_back(std::atoi(argv[i]));

  bool all = true;
  for (const auto& c : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end())
      continue;
    Result r;
    try {
      r = c.run();
    } catch (const std::exception& e) {
      r = {false, std::string("exception: ") + e.what()};
    }
    all &= r.first;
    std::printf("[%s] %2d %s: %s\n", r.first ? "PASS" : "FAIL", c.id, c.name,
                r.second.c_str());
    std::fflush(stdout);
  }
  return all ? 0 : 1;
}

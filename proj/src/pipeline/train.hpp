#pragma once

#include <string>
#include <vector>

#include "arch/checkpoint.hpp"
#include "arch/model.hpp"
#include "pipeline/data.hpp"
#include "pipeline/noise.hpp"
#include "pipeline/optim.hpp"

namespace tbsn {

struct R3Config {
  bool enabled = true;
  int replicas = 8;
  double p = 0.16;

  void validate() const;
};

struct TrainConfig {
  int batch_size = 4;
  int patch_size = 128;
  int64_t total_iters = 100000;
  OptimConfig optim;  // 3e-4, x0.1 every 40000
  int pd_train = 5;
  int pd_infer = 2;
  R3Config r3;
  int64_t log_every = 100;
  int64_t eval_every = 2000;
  int64_t checkpoint_every = 10000;
  int val_max_images = 8;

  void validate() const;
};

// Same schedule shape at a fifth of the horizon: 20k iterations, 64 patches,
// lr decay every 8k.
TrainConfig desk_scale_train_defaults();

struct TrainStats {
  std::string final_checkpoint;
  int64_t iters = 0;
  double final_loss = 0.0;
  double final_val_psnr = 0.0;
  double final_val_ssim = 0.0;
  double noisy_val_psnr = 0.0;  // untouched noisy input against clean
  std::string teacher_fingerprint_before;  // distillation only
  std::string teacher_fingerprint_after;
  double teacher_val_psnr = 0.0;  // distillation only
};

// Reads images, synthesizes per-image noise once (deterministic in the image
// name), and memoizes the decoded tensors.
std::vector<Tensor<float>> load_clean_pool(const ImageDataset& ds);
std::vector<Tensor<float>> load_noisy_pool(const ImageDataset& ds, const NoiseSpec& noise);

// Deterministic patch addressing: sample_id alone decides image, window and
// dihedral pose, so batch assembly order cannot affect the data stream.
struct PatchParams {
  int image = 0, top = 0, left = 0, rot = 0;
  bool flip = false;
};
PatchParams draw_patch_params(const std::vector<Tensor<float>>& pool, int patch,
                              uint64_t seed, int64_t sample_id);
Tensor<float> extract_patch(const Tensor<float>& img, const PatchParams& p, int patch);

// Self-supervised training: L1 between the network output on the mosaicked
// noisy patch and that same mosaic. Writes metrics.csv and checkpoints under
// out_dir; throws NumericError (after dumping diagnostics) on non-finite
// loss.
TrainStats train_bsn(const TBSNConfig& mcfg, const TrainConfig& tcfg,
                     const NoiseSpec& noise, const std::string& data_dir,
                     const std::string& out_dir, uint64_t seed);

// Mosaic the input, run the network, un-mosaic. pd_factor 1 is a plain
// forward pass.
template <typename T>
Tensor<T> denoise_full(Module<T>& net, const Tensor<T>& noisy, int pd_factor);

// Random-replacement refinement: average the network over `replicas` copies
// of `base` in which each pixel reverts to the noisy value with probability
// p. No mosaicking here, per the procedure this follows.
template <typename T>
Tensor<T> r3_refine(Module<T>& net, const Tensor<T>& noisy, const Tensor<T>& base,
                    int replicas, double p, uint64_t seed);

// base = denoise_full(pd_infer), then R3 when enabled.
template <typename T>
Tensor<T> full_inference(Module<T>& net, const Tensor<T>& noisy, int pd_infer,
                         const R3Config& r3, uint64_t seed);

struct DistillOptions {
  bool cache_teacher = true;
  std::string cache_dir;   // empty: out_dir/teacher_cache
  bool teacher_r3 = true;  // apply R3 inside the teacher pass
};

// Student regression onto frozen teacher outputs (L1, stop-gradient by
// construction: the teacher is only ever run forward). Teacher outputs are
// optionally cached as PFM files keyed by the input file name hash.
TrainStats distill_train(const std::string& teacher_ckpt, const StudentUNetConfig& scfg,
                         const TrainConfig& tcfg, const NoiseSpec& noise,
                         const std::string& data_dir, const std::string& out_dir,
                         uint64_t seed, const DistillOptions& opts);

struct EvalRow {
  std::string name;
  double psnr_db = 0.0;
  double ssim_v = 0.0;
};
struct EvalSummary {
  std::vector<EvalRow> rows;
  double mean_psnr = 0.0;
  double mean_ssim = 0.0;
};

// Synthesizes noisy inputs from the clean set, runs the model, scores
// against clean. pd_infer 0 means plain application (students).
EvalSummary evaluate_model(Module<float>& net, const ImageDataset& clean_ds,
                           const NoiseSpec& noise, int pd_infer, const R3Config& r3,
                           uint64_t seed);
void write_eval_csv(const std::string& path, const EvalSummary& s);

}  // namespace tbsn

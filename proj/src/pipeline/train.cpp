#include "pipeline/train.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "config/serde.hpp"
#include "core/errors.hpp"
#include "core/image_io.hpp"
#include "mask/ops.hpp"
#include "pipeline/metrics.hpp"
#include "verify/rfmap.hpp"

namespace tbsn {

namespace fs = std::filesystem;

void R3Config::validate() const {
  if (replicas < 1) throw std::invalid_argument("r3 replicas must be >= 1");
  if (p < 0.0 || p > 1.0) throw std::invalid_argument("r3 p must lie in [0, 1]");
}

void TrainConfig::validate() const {
  if (batch_size < 1 || patch_size < 8 || total_iters < 1)
    throw std::invalid_argument("train config: batch/patch/iterations out of range");
  if (pd_train < 1 || pd_infer < 1)
    throw std::invalid_argument("train config: pd factors must be >= 1");
  if (log_every < 1 || eval_every < 1 || checkpoint_every < 1 || val_max_images < 1)
    throw std::invalid_argument("train config: schedule fields must be >= 1");
  optim.validate();
  r3.validate();
}

TrainConfig desk_scale_train_defaults() {
  TrainConfig t;
  t.total_iters = 20000;
  t.patch_size = 64;
  t.optim.lr_decay_every = 8000;
  return t;
}

std::vector<Tensor<float>> load_clean_pool(const ImageDataset& ds) {
  std::vector<Tensor<float>> out;
  out.reserve(ds.size());
  for (const auto& p : ds.paths) out.push_back(read_png(p));
  return out;
}

std::vector<Tensor<float>> load_noisy_pool(const ImageDataset& ds, const NoiseSpec& noise) {
  std::vector<Tensor<float>> out;
  out.reserve(ds.size());
  for (const auto& p : ds.paths) {
    // Per-image noise keyed by the file name: stable under reordering and
    // across train/val recombination.
    Rng rng(mix_seed(noise.seed, filename_hash(p)));
    out.push_back(synthesize_noisy(read_png(p), noise, rng));
  }
  return out;
}

PatchParams draw_patch_params(const std::vector<Tensor<float>>& pool, int patch,
                              uint64_t seed, int64_t sample_id) {
  if (pool.empty()) throw std::invalid_argument("empty training pool");
  Rng rng(mix_seed(seed, static_cast<uint64_t>(sample_id)));
  PatchParams p;
  p.image = static_cast<int>(rng.uniform_int(pool.size()));
  const Tensor<float>& img = pool[p.image];
  if (img.h < patch || img.w < patch)
    throw std::invalid_argument("training image smaller than the patch size");
  p.top = static_cast<int>(rng.uniform_int(img.h - patch + 1));
  p.left = static_cast<int>(rng.uniform_int(img.w - patch + 1));
  p.rot = static_cast<int>(rng.uniform_int(4));
  p.flip = rng.bernoulli(0.5);
  return p;
}

Tensor<float> extract_patch(const Tensor<float>& img, const PatchParams& p, int patch) {
  Tensor<float> cropped = crop(img, p.top, p.left, patch, patch);
  Tensor<float> out(cropped.n, cropped.c, patch, patch);
  for (int c = 0; c < cropped.c; ++c)
    for (int y = 0; y < patch; ++y)
      for (int x = 0; x < patch; ++x) {
        int sy = y, sx = x;
        if (p.flip) sx = patch - 1 - sx;
        for (int r = 0; r < p.rot; ++r) {
          const int t = sy;
          sy = patch - 1 - sx;
          sx = t;
        }
        out.at(0, c, y, x) = cropped.at(0, c, sy, sx);
      }
  return out;
}

namespace {

Tensor<float> stack_batch(const std::vector<Tensor<float>>& items) {
  const Tensor<float>& f = items.front();
  Tensor<float> out(static_cast<int>(items.size()), f.c, f.h, f.w);
  for (size_t i = 0; i < items.size(); ++i) {
    check_same_shape(f, items[i], "stack_batch");
    std::copy(items[i].v.begin(), items[i].v.end(),
              out.v.begin() + static_cast<ptrdiff_t>(i * f.size()));
  }
  return out;
}

// L1 with its subgradient; sign(0) = 0.
double l1_loss_and_grad(const Tensor<float>& out, const Tensor<float>& target,
                        Tensor<float>* d_out) {
  check_same_shape(out, target, "l1_loss");
  *d_out = Tensor<float>(out.n, out.c, out.h, out.w);
  const float inv = 1.0f / static_cast<float>(out.size());
  double loss = 0.0;
  for (size_t i = 0; i < out.size(); ++i) {
    const float d = out.v[i] - target.v[i];
    loss += std::abs(d);
    d_out->v[i] = d > 0 ? inv : (d < 0 ? -inv : 0.0f);
  }
  return loss / static_cast<double>(out.size());
}

struct MetricsCsv {
  std::ofstream f;
  explicit MetricsCsv(const std::string& path) : f(path) {
    if (!f) throw std::runtime_error("cannot open metrics file: " + path);
    f << "iteration,loss,psnr,ssim,lr\n";
  }
  void row(int64_t iter, double loss, double lr) {
    f << iter << "," << loss << ",,," << lr << "\n" << std::flush;
  }
  void eval_row(int64_t iter, double loss, double p, double s, double lr) {
    f << iter << "," << loss << "," << p << "," << s << "," << lr << "\n" << std::flush;
  }
};

[[noreturn]] void abort_non_finite(const std::string& out_dir, int64_t iter, double loss,
                                   double lr, const ParameterStore<float>& store) {
  double max_p = 0.0, max_g = 0.0;
  bool finite = true;
  for (const auto& p : store.all())
    for (size_t i = 0; i < p->size(); ++i) {
      max_p = std::max(max_p, std::abs(static_cast<double>(p->value[i])));
      max_g = std::max(max_g, std::abs(static_cast<double>(p->grad[i])));
      finite = finite && std::isfinite(p->value[i]) && std::isfinite(p->grad[i]);
    }
  const nlohmann::json diag{{"iteration", iter},          {"loss", loss},
                            {"lr", lr},                   {"max_abs_param", max_p},
                            {"max_abs_grad", max_g},      {"params_finite", finite}};
  const std::string path = (fs::path(out_dir) / "diagnostic.json").string();
  std::ofstream(path) << diag.dump(2) << "\n";
  throw NumericError("non-finite loss at iteration " + std::to_string(iter) +
                     "; diagnostics written to " + path);
}

// Shared by both training loops: validation scoring, checkpointing, csv.
struct ValSet {
  std::vector<Tensor<float>> clean, noisy;
  std::vector<std::string> names;
};

ValSet build_val_set(const ImageDataset& val, const NoiseSpec& noise, int cap) {
  ImageDataset capped = val;
  if (static_cast<int>(capped.paths.size()) > cap) capped.paths.resize(cap);
  ValSet v;
  v.clean = load_clean_pool(capped);
  v.noisy = load_noisy_pool(capped, noise);
  for (const auto& p : capped.paths) v.names.push_back(fs::path(p).filename().string());
  return v;
}

template <typename ScoreFn>
std::pair<double, double> score_val(const ValSet& v, ScoreFn&& denoise) {
  double sp = 0.0, ss = 0.0;
  for (size_t i = 0; i < v.clean.size(); ++i) {
    Tensor<float> den = denoise(v.noisy[i]);
    sp += psnr(den, v.clean[i]);
    ss += ssim(den, v.clean[i]);
  }
  const double n = static_cast<double>(v.clean.size());
  return {sp / n, ss / n};
}

}  // namespace

TrainStats train_bsn(const TBSNConfig& mcfg, const TrainConfig& tcfg,
                     const NoiseSpec& noise, const std::string& data_dir,
                     const std::string& out_dir, uint64_t seed) {
  mcfg.validate();
  tcfg.validate();
  noise.validate();
  fs::create_directories(out_dir);

  auto [train_ds, val_ds] = split_train_val(list_pngs(data_dir));
  if (train_ds.empty() || val_ds.empty())
    throw std::invalid_argument("dataset at " + data_dir +
                                " does not cover both train and val splits");
  const std::vector<Tensor<float>> pool = load_noisy_pool(train_ds, noise);
  const ValSet val = build_val_set(val_ds, noise, tcfg.val_max_images);

  for (const auto& warning : mcfg.leakage_warnings(tcfg.patch_size))
    std::fprintf(stderr, "[train-bsn] warning: %s\n", warning.c_str());

  auto model = TBSNModel<float>::build(mcfg, seed);
  AdamW<float> opt(model->store, tcfg.optim);
  MetricsCsv csv((fs::path(out_dir) / "metrics.csv").string());

  TrainStats stats;
  stats.noisy_val_psnr =
      score_val(val, [](const Tensor<float>& y) { return y; }).first;

  auto run_eval = [&](int64_t iter, double loss, double lr) {
    auto [p, s] = score_val(val, [&](const Tensor<float>& y) {
      return denoise_full(*model->net, y, tcfg.pd_infer);
    });
    stats.final_val_psnr = p;
    stats.final_val_ssim = s;
    csv.eval_row(iter, loss, p, s, lr);
  };
  auto save = [&](const std::string& name, int64_t iter) {
    CheckpointMeta meta;
    meta.kind = "tbsn";
    meta.config = to_json(mcfg);
    meta.seed = seed;
    meta.iteration = iter;
    meta.metrics = {{"val_psnr", stats.final_val_psnr},
                    {"val_ssim", stats.final_val_ssim},
                    {"noisy_val_psnr", stats.noisy_val_psnr}};
    const std::string path = (fs::path(out_dir) / name).string();
    save_checkpoint(path, meta, model->store);
    return path;
  };

  double loss = 0.0;
  for (int64_t iter = 0; iter < tcfg.total_iters; ++iter) {
    std::vector<Tensor<float>> patches;
    for (int b = 0; b < tcfg.batch_size; ++b) {
      const int64_t id = iter * tcfg.batch_size + b;
      const PatchParams pp = draw_patch_params(pool, tcfg.patch_size, seed, id);
      patches.push_back(extract_patch(pool[pp.image], pp, tcfg.patch_size));
    }
    Tensor<float> mosaic = pd_down(stack_batch(patches), tcfg.pd_train).first;

    model->store.zero_grad();
    Tensor<float> out = model->net->forward(mosaic);
    Tensor<float> d_out;
    loss = l1_loss_and_grad(out, mosaic, &d_out);
    const double lr = lr_at(tcfg.optim, iter);
    if (!std::isfinite(loss)) abort_non_finite(out_dir, iter, loss, lr, model->store);
    model->net->backward(d_out);
    opt.step(iter);

    const bool last = iter + 1 == tcfg.total_iters;
    if ((iter + 1) % tcfg.eval_every == 0 || last)
      run_eval(iter + 1, loss, lr);
    else if ((iter + 1) % tcfg.log_every == 0)
      csv.row(iter + 1, loss, lr);
    if ((iter + 1) % tcfg.checkpoint_every == 0 && !last)
      save("ckpt_" + std::to_string(iter + 1) + ".ckpt", iter + 1);
  }
  stats.final_loss = loss;
  stats.iters = tcfg.total_iters;
  stats.final_checkpoint = save("ckpt_final.ckpt", tcfg.total_iters);
  return stats;
}

template <typename T>
Tensor<T> denoise_full(Module<T>& net, const Tensor<T>& noisy, int pd_factor) {
  if (pd_factor < 1) throw std::invalid_argument("pd factor must be >= 1");
  if (pd_factor == 1) return net.forward(noisy);
  auto [mosaic, layout] = pd_down(noisy, pd_factor);
  Tensor<T> out = net.forward(mosaic);
  return pd_up(out, layout);
}

template <typename T>
Tensor<T> r3_refine(Module<T>& net, const Tensor<T>& noisy, const Tensor<T>& base,
                    int replicas, double p, uint64_t seed) {
  check_same_shape(noisy, base, "r3_refine");
  if (replicas < 1) throw std::invalid_argument("r3 replicas must be >= 1");
  if (p < 0.0 || p > 1.0) throw std::invalid_argument("r3 p must lie in [0, 1]");
  Tensor<T> acc(noisy.n, noisy.c, noisy.h, noisy.w);
  Rng rng(seed);
  for (int t = 0; t < replicas; ++t) {
    Tensor<T> replica = base;
    for (int n = 0; n < noisy.n; ++n)
      for (int y = 0; y < noisy.h; ++y)
        for (int x = 0; x < noisy.w; ++x)
          if (rng.bernoulli(p))
            for (int c = 0; c < noisy.c; ++c)
              replica.at(n, c, y, x) = noisy.at(n, c, y, x);
    Tensor<T> out = net.forward(replica);
    for (size_t i = 0; i < acc.size(); ++i) acc.v[i] += out.v[i];
  }
  for (auto& v : acc.v) v /= static_cast<T>(replicas);
  return acc;
}

template <typename T>
Tensor<T> full_inference(Module<T>& net, const Tensor<T>& noisy, int pd_infer,
                         const R3Config& r3, uint64_t seed) {
  Tensor<T> base = denoise_full(net, noisy, pd_infer);
  if (!r3.enabled) return base;
  return r3_refine(net, noisy, base, r3.replicas, r3.p, seed);
}

TrainStats distill_train(const std::string& teacher_ckpt, const StudentUNetConfig& scfg,
                         const TrainConfig& tcfg, const NoiseSpec& noise,
                         const std::string& data_dir, const std::string& out_dir,
                         uint64_t seed, const DistillOptions& opts) {
  scfg.validate();
  tcfg.validate();
  noise.validate();
  fs::create_directories(out_dir);

  CheckpointMeta teacher_meta;
  auto teacher = load_tbsn_model<float>(teacher_ckpt, &teacher_meta);
  TrainStats stats;
  stats.teacher_fingerprint_before =
      model_fingerprint("tbsn", teacher_meta.config, teacher->store);

  auto [train_ds, val_ds] = split_train_val(list_pngs(data_dir));
  if (train_ds.empty() || val_ds.empty())
    throw std::invalid_argument("dataset at " + data_dir +
                                " does not cover both train and val splits");
  const std::vector<Tensor<float>> noisy_pool = load_noisy_pool(train_ds, noise);
  const ValSet val = build_val_set(val_ds, noise, tcfg.val_max_images);

  const R3Config teacher_r3 = opts.teacher_r3 ? tcfg.r3 : R3Config{false, 1, 0.0};
  auto teacher_pass = [&](const Tensor<float>& y, uint64_t r3_seed) {
    return full_inference(*teacher->net, y, tcfg.pd_infer, teacher_r3, r3_seed);
  };

  // Teacher targets, computed once per image (optionally cached on disk).
  const std::string cache_dir =
      opts.cache_dir.empty() ? (fs::path(out_dir) / "teacher_cache").string()
                             : opts.cache_dir;
  if (opts.cache_teacher) fs::create_directories(cache_dir);
  std::vector<Tensor<float>> targets;
  targets.reserve(noisy_pool.size());
  for (size_t i = 0; i < noisy_pool.size(); ++i) {
    const uint64_t key = filename_hash(train_ds.paths[i]);
    char name[32];
    std::snprintf(name, sizeof(name), "%016llx.pfm", static_cast<unsigned long long>(key));
    const std::string cache_path = (fs::path(cache_dir) / name).string();
    if (opts.cache_teacher && fs::exists(cache_path)) {
      std::fprintf(stderr, "[distill] teacher cache hit: %s\n", name);
      targets.push_back(read_pfm(cache_path));
      continue;
    }
    Tensor<float> t = teacher_pass(noisy_pool[i], mix_seed(seed, key));
    if (opts.cache_teacher) write_pfm(cache_path, t);
    targets.push_back(std::move(t));
  }

  // Teacher-side validation quality, for the parity comparison.
  {
    uint64_t i = 0;
    auto [p, s] = score_val(val, [&](const Tensor<float>& y) {
      return teacher_pass(y, mix_seed(seed, 0xbeef + i++));
    });
    stats.teacher_val_psnr = p;
    (void)s;
  }

  auto student = StudentModel<float>::build(scfg, seed);
  AdamW<float> opt(student->store, tcfg.optim);
  MetricsCsv csv((fs::path(out_dir) / "metrics.csv").string());

  auto run_eval = [&](int64_t iter, double loss, double lr) {
    auto [p, s] = score_val(
        val, [&](const Tensor<float>& y) { return student->net->forward(y); });
    stats.final_val_psnr = p;
    stats.final_val_ssim = s;
    csv.eval_row(iter, loss, p, s, lr);
  };
  auto save = [&](const std::string& name, int64_t iter) {
    CheckpointMeta meta;
    meta.kind = "student";
    meta.config = to_json(scfg);
    meta.seed = seed;
    meta.iteration = iter;
    meta.metrics = {{"val_psnr", stats.final_val_psnr},
                    {"val_ssim", stats.final_val_ssim},
                    {"teacher_val_psnr", stats.teacher_val_psnr}};
    const std::string path = (fs::path(out_dir) / name).string();
    save_checkpoint(path, meta, student->store);
    return path;
  };

  double loss = 0.0;
  for (int64_t iter = 0; iter < tcfg.total_iters; ++iter) {
    std::vector<Tensor<float>> xs, ys;
    for (int b = 0; b < tcfg.batch_size; ++b) {
      const int64_t id = iter * tcfg.batch_size + b;
      const PatchParams pp = draw_patch_params(noisy_pool, tcfg.patch_size, seed, id);
      xs.push_back(extract_patch(noisy_pool[pp.image], pp, tcfg.patch_size));
      ys.push_back(extract_patch(targets[pp.image], pp, tcfg.patch_size));
    }
    student->store.zero_grad();
    Tensor<float> out = student->net->forward(stack_batch(xs));
    Tensor<float> d_out;
    loss = l1_loss_and_grad(out, stack_batch(ys), &d_out);
    const double lr = lr_at(tcfg.optim, iter);
    if (!std::isfinite(loss)) abort_non_finite(out_dir, iter, loss, lr, student->store);
    student->net->backward(d_out);
    opt.step(iter);

    const bool last = iter + 1 == tcfg.total_iters;
    if ((iter + 1) % tcfg.eval_every == 0 || last)
      run_eval(iter + 1, loss, lr);
    else if ((iter + 1) % tcfg.log_every == 0)
      csv.row(iter + 1, loss, lr);
    if ((iter + 1) % tcfg.checkpoint_every == 0 && !last)
      save("ckpt_" + std::to_string(iter + 1) + ".ckpt", iter + 1);
  }
  stats.final_loss = loss;
  stats.iters = tcfg.total_iters;
  stats.final_checkpoint = save("ckpt_final.ckpt", tcfg.total_iters);
  stats.teacher_fingerprint_after =
      model_fingerprint("tbsn", teacher_meta.config, teacher->store);
  return stats;
}

EvalSummary evaluate_model(Module<float>& net, const ImageDataset& clean_ds,
                           const NoiseSpec& noise, int pd_infer, const R3Config& r3,
                           uint64_t seed) {
  if (clean_ds.empty()) throw std::invalid_argument("evaluation set is empty");
  EvalSummary s;
  const std::vector<Tensor<float>> clean = load_clean_pool(clean_ds);
  const std::vector<Tensor<float>> noisy = load_noisy_pool(clean_ds, noise);
  for (size_t i = 0; i < clean.size(); ++i) {
    Tensor<float> den =
        pd_infer >= 1
            ? full_inference(net, noisy[i], pd_infer, r3,
                             mix_seed(seed, filename_hash(clean_ds.paths[i])))
            : net.forward(noisy[i]);
    EvalRow row;
    row.name = fs::path(clean_ds.paths[i]).filename().string();
    row.psnr_db = psnr(den, clean[i]);
    row.ssim_v = ssim(den, clean[i]);
    s.rows.push_back(row);
    s.mean_psnr += row.psnr_db;
    s.mean_ssim += row.ssim_v;
  }
  s.mean_psnr /= static_cast<double>(s.rows.size());
  s.mean_ssim /= static_cast<double>(s.rows.size());
  return s;
}

void write_eval_csv(const std::string& path, const EvalSummary& s) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open eval csv: " + path);
  f << "name,psnr,ssim\n";
  for (const auto& r : s.rows) f << r.name << "," << r.psnr_db << "," << r.ssim_v << "\n";
  f << "mean," << s.mean_psnr << "," << s.mean_ssim << "\n";
}

template Tensor<float> denoise_full<float>(Module<float>&, const Tensor<float>&, int);
template Tensor<double> denoise_full<double>(Module<double>&, const Tensor<double>&, int);
template Tensor<float> r3_refine<float>(Module<float>&, const Tensor<float>&,
                                        const Tensor<float>&, int, double, uint64_t);
template Tensor<double> r3_refine<double>(Module<double>&, const Tensor<double>&,
                                          const Tensor<double>&, int, double, uint64_t);
template Tensor<float> full_inference<float>(Module<float>&, const Tensor<float>&, int,
                                             const R3Config&, uint64_t);
template Tensor<double> full_inference<double>(Module<double>&, const Tensor<double>&, int,
                                               const R3Config&, uint64_t);

}  // namespace tbsn

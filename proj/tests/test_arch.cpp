#include <cstdio>
#include <filesystem>
#include <fstream>

#include "arch/checkpoint.hpp"
#include "arch/layers.hpp"
#include "arch/model.hpp"
#include "config/serde.hpp"
#include "doctest.h"
#include "support/naive.hpp"

using namespace tbsn;
using tbsn::testsupport::central_diff;
using tbsn::testsupport::fill_random;

namespace {

// Finite-difference check of a module against its own backward pass.
// Loss is a fixed random weighting of the output so every element matters.
// Parameters are randomized first: zero-initialized projections would
// otherwise hide broken gradient paths.
struct GradCheckResult {
  double max_err = 0.0;
  std::string where;
};

void randomize_store(ParameterStore<double>& store, uint64_t seed) {
  Rng rng(seed);
  for (auto& p : store.all())
    for (auto& v : p->value) v = rng.uniform(-0.6, 0.6);
}

GradCheckResult grad_check(Module<double>& m, ParameterStore<double>& store,
                           const Tensor<double>& x0, uint64_t seed,
                           int max_coords_per_param = 0, double h = 1e-5) {
  Tensor<double> x = x0;
  Tensor<double> probe = m.forward(x);
  Tensor<double> w(probe.n, probe.c, probe.h, probe.w);
  Rng wrng(mix_seed(seed, 0x10ad));
  fill_random(w, wrng, 0.7);

  auto loss = [&]() {
    Tensor<double> out = m.forward(x);
    double s = 0.0;
    for (size_t i = 0; i < out.size(); ++i) s += out.v[i] * w.v[i];
    return s;
  };

  store.zero_grad();
  m.forward(x);
  Tensor<double> d_in = m.backward(w);
  REQUIRE(d_in.same_shape(x));

  GradCheckResult r;
  auto record = [&](double analytic, double numeric, const std::string& where) {
    const double err =
        std::abs(analytic - numeric) / std::max({1.0, std::abs(analytic), std::abs(numeric)});
    if (err > r.max_err) {
      r.max_err = err;
      r.where = where;
    }
  };

  for (size_t i = 0; i < x.size(); ++i)
    record(d_in.v[i], central_diff(loss, &x.v[i], h), "input[" + std::to_string(i) + "]");

  Rng crng(mix_seed(seed, 0xc0ffee));
  for (auto& p : store.all()) {
    std::vector<size_t> coords;
    if (max_coords_per_param <= 0 ||
        p->size() <= static_cast<size_t>(max_coords_per_param)) {
      coords.resize(p->size());
      for (size_t i = 0; i < p->size(); ++i) coords[i] = i;
    } else {
      for (int i = 0; i < max_coords_per_param; ++i)
        coords.push_back(crng.uniform_int(p->size()));
    }
    for (size_t i : coords)
      record(p->grad[i], central_diff(loss, &p->value[i], h),
             p->name + "[" + std::to_string(i) + "]");
  }
  return r;
}

Tensor<double> random_input(int n, int c, int h, int w, uint64_t seed) {
  Tensor<double> x(n, c, h, w);
  Rng rng(seed);
  fill_random(x, rng, 0.8);
  return x;
}

DTABConfig small_dtab(int channels) {
  DTABConfig cfg;
  cfg.channels = channels;
  cfg.group_width = channels / 2;
  cfg.window = WindowSpec{4, 6, 1, 4};
  cfg.ffn_expansion = 2.0;
  cfg.dilation = 2;
  return cfg;
}

}  // namespace

TEST_CASE("conv layer gradient: dense 3x3") {
  ParameterStore<double> store;
  Conv2dLayer<double> conv(store, "c", 3, 4, 3);
  randomize_store(store, 11);
  auto r = grad_check(conv, store, random_input(2, 3, 5, 6, 21), 31);
  INFO(r.where);
  CHECK(r.max_err < 1e-6);
}

TEST_CASE("conv layer gradient: grouped 1x1") {
  ParameterStore<double> store;
  Conv2dLayer<double> conv(store, "c", 4, 6, 1, 1, 2);
  randomize_store(store, 12);
  auto r = grad_check(conv, store, random_input(1, 4, 4, 5, 22), 32);
  INFO(r.where);
  CHECK(r.max_err < 1e-6);
}

TEST_CASE("conv layer gradient: dilated depthwise, no bias") {
  ParameterStore<double> store;
  Conv2dLayer<double> conv(store, "c", 5, 5, 3, 2, 5, /*bias=*/false);
  randomize_store(store, 13);
  auto r = grad_check(conv, store, random_input(2, 5, 6, 5, 23), 33);
  INFO(r.where);
  CHECK(r.max_err < 1e-6);
}

TEST_CASE("centrally masked conv: gradient, dead center tap") {
  ParameterStore<double> store;
  Conv2dLayer<double> conv(store, "c", 2, 3, 3, 1, 1, true, false, /*center_masked=*/true);
  randomize_store(store, 14);
  auto r = grad_check(conv, store, random_input(1, 2, 5, 5, 24), 34);
  INFO(r.where);
  CHECK(r.max_err < 1e-6);

  // The center weight must neither receive gradient nor influence the output.
  Param<double>* w = store.find("c.weight");
  REQUIRE(w != nullptr);
  Tensor<double> x = random_input(1, 2, 5, 5, 25);
  Tensor<double> base = conv.forward(x);
  for (int co = 0; co < 3; ++co)
    for (int ci = 0; ci < 2; ++ci) {
      const size_t center = ((static_cast<size_t>(co) * 2 + ci) * 3 + 1) * 3 + 1;
      CHECK(w->grad[center] == 0.0);
      w->value[center] += 5.0;
      Tensor<double> bumped = conv.forward(x);
      CHECK(bumped.v == base.v);
    }
}

TEST_CASE("layer norm gradient") {
  ParameterStore<double> store;
  LayerNormChannel<double> ln(store, "ln", 6);
  randomize_store(store, 15);
  auto r = grad_check(ln, store, random_input(2, 6, 3, 4, 26), 35);
  INFO(r.where);
  CHECK(r.max_err < 1e-6);
}

TEST_CASE("relu, avgpool and nearest-up gradients") {
  ParameterStore<double> store;
  ReLULayer<double> relu;
  auto r1 = grad_check(relu, store, random_input(1, 3, 4, 4, 27), 36);
  INFO(r1.where);
  CHECK(r1.max_err < 1e-6);

  AvgPool2Layer<double> pool;
  auto r2 = grad_check(pool, store, random_input(1, 3, 6, 4, 28), 37);
  CHECK(r2.max_err < 1e-9);

  NearestUp2Layer<double> up;
  auto r3 = grad_check(up, store, random_input(1, 3, 3, 2, 29), 38);
  CHECK(r3.max_err < 1e-9);
}

TEST_CASE("masked window attention layer gradient") {
  ParameterStore<double> store;
  MWSALayer<double> wsa(store, "wsa", 8, WindowSpec{4, 6, 1, 4});
  randomize_store(store, 16);
  // 6x5 forces bottom/right window padding as well as kv-field padding.
  auto r = grad_check(wsa, store, random_input(1, 8, 6, 5, 30), 39);
  INFO(r.where);
  CHECK(r.max_err < 1e-5);
}

TEST_CASE("grouped channel attention layer gradient") {
  ParameterStore<double> store;
  GCSALayer<double> csa(store, "csa", 8, 2);
  randomize_store(store, 17);
  auto r = grad_check(csa, store, random_input(1, 8, 5, 4, 40), 41);
  INFO(r.where);
  CHECK(r.max_err < 1e-5);

  // Temperature must be among the checked parameters and carry gradient.
  Param<double>* tau = store.find("csa.temperature");
  REQUIRE(tau != nullptr);
  CHECK(tau->shape == std::vector<int>{2});
  double sum = 0.0;
  for (double g : tau->grad) sum += std::abs(g);
  CHECK(sum > 0.0);
}

TEST_CASE("channel attention phase fold: gradient and cross-sibling reach") {
  ParameterStore<double> store;
  GCSALayer<double> csa(store, "csa", 6, 1, 2, /*phases=*/4);
  randomize_store(store, 19);
  auto r = grad_check(csa, store, random_input(4, 6, 4, 3, 44), 45);
  INFO(r.where);
  CHECK(r.max_err < 1e-5);

  // Folded rows attend across the batch siblings of one image, so entry 0's
  // output reacts to entry 1's input. Without the fold, entries stay
  // independent.
  auto entry0_reacts = [](int phases) {
    ParameterStore<double> s;
    GCSALayer<double> layer(s, "csa", 6, 1, 2, phases);
    randomize_store(s, 23);
    Tensor<double> x = random_input(4, 6, 4, 3, 46);
    const Tensor<double> base = layer.forward(x);
    for (int c = 0; c < 6; ++c) x.at(1, c, 2, 1) += 0.5;
    const Tensor<double> bumped = layer.forward(x);
    const size_t plane = static_cast<size_t>(base.c) * base.h * base.w;
    for (size_t i = 0; i < plane; ++i)
      if (base.v[i] != bumped.v[i]) return true;
    return false;
  };
  CHECK(entry0_reacts(4));
  CHECK_FALSE(entry0_reacts(1));
}

TEST_CASE("gated feed-forward layer gradient") {
  ParameterStore<double> store;
  GDFNLayer<double> ffn(store, "ffn", 6, 2.0);
  randomize_store(store, 18);
  auto r = grad_check(ffn, store, random_input(1, 6, 5, 4, 42), 43);
  INFO(r.where);
  CHECK(r.max_err < 1e-5);
}

TEST_CASE("transformer block gradient: all branch configurations") {
  for (int arm = 0; arm < 4; ++arm) {
    CAPTURE(arm);
    DTABConfig cfg = small_dtab(8);
    if (arm == 1) cfg.csa_mode = CsaMode::identity;
    if (arm == 2) cfg.use_csa = false;
    if (arm == 3) cfg.use_wsa = false;
    ParameterStore<double> store;
    DTABBlock<double> block(store, "b", cfg);
    randomize_store(store, 19 + arm);
    auto r = grad_check(block, store, random_input(1, 8, 6, 5, 44 + arm), 45 + arm, 6);
    INFO(r.where);
    CHECK(r.max_err < 2e-5);
  }
}

TEST_CASE("scale transition gradients, both downsample styles") {
  for (DownsampleMode mode : {DownsampleMode::parity, DownsampleMode::pixel_unshuffle}) {
    CAPTURE(mode == DownsampleMode::parity);
    ParameterStore<double> sd;
    DownTransition<double> down(sd, "down", 3, 5, mode);
    randomize_store(sd, 50);
    auto rd = grad_check(down, sd, random_input(1, 3, 4, 6, 51), 52);
    INFO(rd.where);
    CHECK(rd.max_err < 1e-6);

    ParameterStore<double> su;
    UpTransition<double> up(su, "up", 5, 3, mode);
    randomize_store(su, 53);
    // Going up in parity mode consumes the four phase slots from the batch.
    const int nb = mode == DownsampleMode::parity ? 4 : 1;
    auto ru = grad_check(up, su, random_input(nb, 5, 2, 3, 54), 55);
    INFO(ru.where);
    CHECK(ru.max_err < 1e-6);
  }
}

TEST_CASE("full multiscale network gradient (sampled parameters)") {
  TBSNConfig cfg;
  cfg.scales = 2;
  cfg.base_channels = 8;
  cfg.blocks_per_scale = {1, 1};
  cfg.input_channels = 2;
  cfg.dtab = small_dtab(8);
  cfg.validate();
  ParameterStore<double> store;
  TBSN<double> net(cfg, store);
  randomize_store(store, 60);
  auto r = grad_check(net, store, random_input(1, 2, 6, 5, 61), 62, 3);
  INFO(r.where);
  CHECK(r.max_err < 5e-5);
}

TEST_CASE("student network gradient (sampled parameters)") {
  StudentUNetConfig cfg;
  cfg.scales = 2;
  cfg.base_channels = 4;
  cfg.blocks_per_scale = {1, 1};
  cfg.input_channels = 2;
  cfg.validate();
  ParameterStore<double> store;
  StudentUNet<double> net(cfg, store);
  randomize_store(store, 63);
  auto r = grad_check(net, store, random_input(1, 2, 6, 5, 64), 65, 4);
  INFO(r.where);
  CHECK(r.max_err < 5e-5);
}

TEST_CASE("transformer block is the identity at initialization") {
  // Every residual branch ends in a zero-initialized projection, so a fresh
  // block must pass its input through unchanged.
  DTABConfig cfg = small_dtab(8);
  ParameterStore<float> store;
  DTABBlock<float> block(store, "b", cfg);
  store.init_values(7);
  Tensor<float> x = random_input(1, 8, 8, 8, 70).cast<float>();
  Tensor<float> y = block.forward(x);
  for (size_t i = 0; i < x.size(); ++i) CHECK(y.v[i] == doctest::Approx(x.v[i]).epsilon(1e-6));
}

TEST_CASE("identity channel-attention mode adds the normalized input") {
  DTABConfig cfg = small_dtab(8);
  cfg.csa_mode = CsaMode::identity;
  ParameterStore<float> store;
  DTABBlock<float> block(store, "b", cfg);
  store.init_values(7);

  ParameterStore<float> ln_store;
  LayerNormChannel<float> ln(ln_store, "b.ln1", 8);
  ln_store.init_values(7);

  Tensor<float> x = random_input(1, 8, 8, 8, 71).cast<float>();
  Tensor<float> y = block.forward(x);
  Tensor<float> expect = ln.forward(x);
  for (size_t i = 0; i < x.size(); ++i)
    CHECK(y.v[i] == doctest::Approx(x.v[i] + expect.v[i]).epsilon(1e-5));

  // And the identity mode registers no channel-attention parameters.
  for (const auto& p : store.all()) CHECK(p->name.find("csa") == std::string::npos);
}

TEST_CASE("single-group channel attention equals the ungrouped mode") {
  DTABConfig a = small_dtab(8);
  a.group_width = 8;  // one group of all channels
  DTABConfig b = small_dtab(8);
  b.csa_mode = CsaMode::ungrouped;
  b.group_width = 4;  // ignored by the ungrouped mode
  CHECK(a.groups() == 1);
  CHECK(b.groups() == 1);

  // Name-keyed randomization: matching parameter names get matching values,
  // including the zero-initialized projections that init_values would null.
  auto randomize_by_name = [](ParameterStore<float>& s) {
    for (auto& p : s.all()) {
      Rng rng(mix_seed(991, fnv1a(p->name.data(), p->name.size())));
      for (auto& v : p->value) v = static_cast<float>(rng.uniform(-0.4, 0.4));
    }
  };

  ParameterStore<float> sa, sb;
  DTABBlock<float> ba(sa, "b", a), bb(sb, "b", b);
  REQUIRE(sa.count_scalars() == sb.count_scalars());
  randomize_by_name(sa);
  randomize_by_name(sb);

  Tensor<float> x = random_input(1, 8, 8, 8, 73).cast<float>();
  Tensor<float> ya = ba.forward(x);
  Tensor<float> yb = bb.forward(x);
  CHECK(ya.v == yb.v);
}

TEST_CASE("windows are independent when the kv field matches the window") {
  // With K == M there is no field overlap, so two side-by-side windows give
  // the same result computed jointly or separately.
  ParameterStore<float> store;
  MWSALayer<float> wsa(store, "wsa", 8, WindowSpec{4, 4, 1, 4});
  store.init_values(5);
  Param<float>* out_w = store.find("wsa.o.weight");
  REQUIRE(out_w != nullptr);
  Rng rng(123);
  for (auto& v : out_w->value) v = static_cast<float>(rng.uniform(-0.3, 0.3));

  Tensor<float> x = random_input(1, 8, 4, 8, 72).cast<float>();
  Tensor<float> joint = wsa.forward(x);
  Tensor<float> left = crop(x, 0, 0, 4, 4), right = crop(x, 0, 4, 4, 4);
  Tensor<float> jl = wsa.forward(left), jr = wsa.forward(right);
  for (int c = 0; c < 8; ++c)
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j) {
        CHECK(joint.at(0, c, i, j) == doctest::Approx(jl.at(0, c, i, j)).epsilon(1e-5));
        CHECK(joint.at(0, c, i, j + 4) == doctest::Approx(jr.at(0, c, i, j)).epsilon(1e-5));
      }
}

TEST_CASE("network preserves arbitrary spatial shapes") {
  TBSNConfig cfg;
  cfg.scales = 2;
  cfg.base_channels = 8;
  cfg.blocks_per_scale = {1, 1};
  cfg.dtab = small_dtab(8);
  auto model = TBSNModel<float>::build(cfg, 3);
  for (auto [h, w] : {std::pair{16, 16}, {17, 15}, {9, 23}}) {
    Tensor<float> x = random_input(1, 3, h, w, 80 + h).cast<float>();
    Tensor<float> y = model->net->forward(x);
    CHECK(y.n == 1);
    CHECK(y.c == 3);
    CHECK(y.h == h);
    CHECK(y.w == w);
    CHECK(y.all_finite());
  }

  auto student = StudentModel<float>::build(StudentUNetConfig{2, 6, 2, {1, 1}, 3}, 4);
  for (auto [h, w] : {std::pair{12, 12}, {13, 11}}) {
    Tensor<float> x = random_input(1, 3, h, w, 90 + h).cast<float>();
    Tensor<float> y = student->net->forward(x);
    CHECK(y.h == h);
    CHECK(y.w == w);
    CHECK(y.all_finite());
  }
}

TEST_CASE("parameter counting") {
  ParameterStore<float> store;
  Conv2dLayer<float> conv(store, "c", 1, 1, 3);
  CHECK(store.count_scalars() == 10);  // 9 weights and a bias

  StudentUNetConfig scfg;  // defaults target the compact-model budget
  ParameterStore<float> sstore;
  StudentUNet<float> student(scfg, sstore);
  CHECK(sstore.count_scalars() >= 970000);
  CHECK(sstore.count_scalars() <= 1190000);

  TBSNConfig tcfg;
  ParameterStore<float> tstore;
  TBSN<float> teacher(tcfg, tstore);
  CHECK(tstore.count_scalars() > 1000000);  // the teacher dwarfs the student
}

TEST_CASE("initialization is registration-order independent and seed-keyed") {
  TBSNConfig cfg;
  cfg.scales = 2;
  cfg.base_channels = 8;
  cfg.blocks_per_scale = {1, 1};
  cfg.dtab = small_dtab(8);

  auto a = TBSNModel<float>::build(cfg, 42);
  auto b = TBSNModel<float>::build(cfg, 42);
  auto c = TBSNModel<float>::build(cfg, 43);
  REQUIRE(a->store.count_scalars() == b->store.count_scalars());

  bool all_equal = true, any_diff_seed = false;
  const auto& pa = a->store.all();
  const auto& pb = b->store.all();
  const auto& pc = c->store.all();
  for (size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i]->name == pb[i]->name);
    CHECK(pa[i]->shape == pb[i]->shape);
    if (pa[i]->value != pb[i]->value) all_equal = false;
    if (pa[i]->value != pc[i]->value) any_diff_seed = true;
  }
  CHECK(all_equal);
  CHECK(any_diff_seed);

  // Same seed, same config: forward passes agree bitwise.
  Tensor<float> x = random_input(1, 3, 16, 16, 100).cast<float>();
  Tensor<float> ya = a->net->forward(x);
  Tensor<float> yb = b->net->forward(x);
  CHECK(ya.v == yb.v);
}

TEST_CASE("flops accounting matches the closed form") {
  CHECK(conv2d_flops(48, 48, 3, 1, 256.0 * 256) ==
        2.0 * 9 * 48 * 48 * 256 * 256);
  CHECK(conv2d_flops(48, 48, 3, 48, 256.0 * 256) ==
        2.0 * 9 * 48 * 256 * 256);

  TBSNConfig cfg;
  const double full = estimate_flops(cfg, 256, 256);
  CHECK(full > 0);
  StudentUNetConfig scfg;
  const double student = estimate_flops(scfg, 256, 256);
  CHECK(student > 0);
  CHECK(student < full);  // distillation target is the cheaper model
}

TEST_CASE("config json round trip and unknown-key rejection") {
  TBSNConfig cfg;
  cfg.scales = 2;
  cfg.base_channels = 16;
  cfg.blocks_per_scale = {1, 3};
  cfg.dtab.csa_mode = CsaMode::identity;
  cfg.dtab.group_width = 16;
  cfg.dtab.window = WindowSpec{4, 8, 1, 8};
  cfg.downsample = DownsampleMode::pixel_unshuffle;

  nlohmann::json j = to_json(cfg);
  TBSNConfig back = tbsn_config_from_json(j);
  CHECK(back.scales == 2);
  CHECK(back.base_channels == 16);
  CHECK(back.blocks_per_scale == std::vector<int>{1, 3});
  CHECK(back.dtab.csa_mode == CsaMode::identity);
  CHECK(back.dtab.window.kv_size == 8);
  CHECK(back.downsample == DownsampleMode::pixel_unshuffle);
  CHECK(to_json(back) == j);

  nlohmann::json bad = j;
  bad["optimiser"] = "adam";
  CHECK_THROWS_AS((void)tbsn_config_from_json(bad), std::invalid_argument);
  nlohmann::json bad2 = j;
  bad2["dtab"]["window"]["size"] = 4;
  CHECK_THROWS_AS((void)tbsn_config_from_json(bad2), std::invalid_argument);

  // scales alone re-derives the per-scale block list.
  TBSNConfig four = tbsn_config_from_json(nlohmann::json{{"scales", 4}});
  CHECK(four.blocks_per_scale == std::vector<int>{2, 2, 2, 2});

  CHECK_THROWS_AS(csa_mode_from_name("groupy"), std::invalid_argument);
  CHECK(csa_mode_from_name(csa_mode_name(CsaMode::ungrouped)) == CsaMode::ungrouped);
  CHECK(downsample_from_name(downsample_name(DownsampleMode::parity)) ==
        DownsampleMode::parity);

  StudentUNetConfig sc;
  sc.base_channels = 20;
  nlohmann::json sj = to_json(sc);
  CHECK(student_config_from_json(sj).base_channels == 20);
  sj["widht"] = 3;
  CHECK_THROWS_AS((void)student_config_from_json(sj), std::invalid_argument);
}

TEST_CASE("checkpoint round trip preserves every value and the metadata") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "tbsn_ckpt_test";
  fs::create_directories(dir);
  const std::string path = (dir / "model.ckpt").string();

  TBSNConfig cfg;
  cfg.scales = 2;
  cfg.base_channels = 8;
  cfg.blocks_per_scale = {1, 1};
  cfg.dtab = small_dtab(8);
  auto model = TBSNModel<float>::build(cfg, 77);

  CheckpointMeta meta;
  meta.kind = "tbsn";
  meta.config = to_json(cfg);
  meta.seed = 77;
  meta.iteration = 1234;
  meta.metrics = {{"val_psnr", 31.25}};
  save_checkpoint(path, meta, model->store);

  CheckpointMeta got;
  auto loaded = load_tbsn_model<float>(path, &got);
  CHECK(got.iteration == 1234);
  CHECK(got.seed == 77);
  CHECK(got.metrics.at("val_psnr").get<double>() == 31.25);
  const auto& pa = model->store.all();
  const auto& pb = loaded->store.all();
  REQUIRE(pa.size() == pb.size());
  for (size_t i = 0; i < pa.size(); ++i) CHECK(pa[i]->value == pb[i]->value);

  Tensor<float> x = random_input(1, 3, 16, 16, 200).cast<float>();
  CHECK(model->net->forward(x).v == loaded->net->forward(x).v);

  // Wrong-kind loads are refused.
  CHECK_THROWS_WITH_AS((void)load_student_model<float>(path), doctest::Contains("kind"),
                       std::runtime_error);

  // A store with a different architecture cannot absorb these parameters.
  TBSNConfig other = cfg;
  other.base_channels = 16;
  other.dtab.channels = 16;
  other.dtab.group_width = 8;
  auto mismatched = TBSNModel<float>::build(other, 1);
  LoadedCheckpoint raw = load_checkpoint(path);
  CHECK_THROWS_AS(apply_params(raw, mismatched->store), std::runtime_error);

  fs::remove_all(dir);
}

TEST_CASE("checkpoint loader rejects foreign and future files") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "tbsn_ckpt_bad";
  fs::create_directories(dir);

  const std::string garbage = (dir / "garbage.ckpt").string();
  {
    std::ofstream f(garbage, std::ios::binary);
    f << "PNGDATA, definitely not a checkpoint";
  }
  CHECK_THROWS_WITH_AS((void)load_checkpoint(garbage), doctest::Contains("not a checkpoint"),
                       std::runtime_error);

  // Save a valid file, then bump its version field (bytes 8..11).
  StudentUNetConfig cfg;
  cfg.scales = 2;
  cfg.base_channels = 4;
  cfg.blocks_per_scale = {1, 1};
  auto model = StudentModel<float>::build(cfg, 5);
  CheckpointMeta meta;
  meta.kind = "student";
  meta.config = to_json(cfg);
  const std::string future = (dir / "future.ckpt").string();
  save_checkpoint(future, meta, model->store);
  {
    std::fstream f(future, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(8);
    const uint32_t v2 = 2;
    f.write(reinterpret_cast<const char*>(&v2), sizeof(v2));
  }
  CHECK_THROWS_WITH_AS((void)load_checkpoint(future), doctest::Contains("version"),
                       std::runtime_error);

  fs::remove_all(dir);
}

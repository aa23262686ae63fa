#include "arch/model.hpp"

#include <cmath>
#include <stdexcept>

namespace tbsn {

namespace {

template <typename T>
void add_into(Tensor<T>& a, const Tensor<T>& b) {
  check_same_shape(a, b, "add_into");
  for (size_t i = 0; i < a.v.size(); ++i) a.v[i] += b.v[i];
}

int ceil_to(int v, int m) { return (v + m - 1) / m * m; }

}  // namespace

int TBSNConfig::channels_at(int scale) const {
  int c = base_channels;
  for (int s = 0; s < scale; ++s) c *= channel_multiplier;
  return c;
}

DTABConfig TBSNConfig::dtab_at(int scale) const {
  DTABConfig d = dtab;
  d.channels = channels_at(scale);
  // Ungrouped channel attention folds the parity siblings stacked in the
  // batch back into its rows: that is what an unconstrained channel mixer
  // sees once downsampling has moved spatial phases out of the plane.
  if (d.csa_mode == CsaMode::ungrouped && downsample == DownsampleMode::parity)
    d.phase_fold = 1 << (2 * scale);
  return d;
}

void TBSNConfig::validate() const {
  if (scales < 1) throw std::invalid_argument("scales must be >= 1");
  if (base_channels < 1) throw std::invalid_argument("base_channels must be >= 1");
  if (channel_multiplier < 1)
    throw std::invalid_argument("channel_multiplier must be >= 1");
  if (static_cast<int>(blocks_per_scale.size()) != scales)
    throw std::invalid_argument("blocks_per_scale must list one entry per scale");
  for (int b : blocks_per_scale)
    if (b < 1) throw std::invalid_argument("every scale needs at least one block");
  if (input_channels < 1) throw std::invalid_argument("input_channels must be >= 1");
  for (int s = 0; s < scales; ++s) dtab_at(s).validate();
}

std::vector<std::string> TBSNConfig::leakage_warnings(int patch_size) const {
  std::vector<std::string> out;
  if (!dtab.use_csa || dtab.csa_mode == CsaMode::identity) return out;
  for (int s = 0; s < scales; ++s) {
    const int side = patch_size >> s;
    const int positions = side * side;
    const int per_group = dtab.csa_mode == CsaMode::ungrouped
                              ? channels_at(s) * dtab_at(s).phase_fold
                              : std::min(dtab.group_width, channels_at(s));
    if (per_group >= positions)
      out.push_back("scale " + std::to_string(s) + ": " + std::to_string(per_group) +
                    " channels per attention group >= " + std::to_string(positions) +
                    " spatial positions of a " + std::to_string(patch_size) +
                    "px patch; channel statistics can leak per-pixel information");
  }
  return out;
}

int StudentUNetConfig::channels_at(int scale) const {
  int c = base_channels;
  for (int s = 0; s < scale; ++s) c *= channel_multiplier;
  return c;
}

void StudentUNetConfig::validate() const {
  if (scales < 1) throw std::invalid_argument("scales must be >= 1");
  if (base_channels < 1) throw std::invalid_argument("base_channels must be >= 1");
  if (static_cast<int>(blocks_per_scale.size()) != scales)
    throw std::invalid_argument("blocks_per_scale must list one entry per scale");
  for (int b : blocks_per_scale)
    if (b < 1) throw std::invalid_argument("every scale needs at least one block");
}

// ---- TBSN ----

template <typename T>
TBSN<T>::TBSN(const TBSNConfig& cfg, ParameterStore<T>& store) : cfg_(cfg) {
  cfg.validate();
  head_ = std::make_unique<Conv2dLayer<T>>(store, "head", cfg.input_channels,
                                           cfg.channels_at(0), 3, 1, 1, true, false,
                                           /*center_masked=*/true);
  enc_.resize(cfg.scales);
  dec_.resize(cfg.scales > 1 ? cfg.scales - 1 : 0);
  for (int s = 0; s < cfg.scales; ++s) {
    for (int b = 0; b < cfg.blocks_per_scale[s]; ++b)
      enc_[s].push_back(std::make_unique<DTABBlock<T>>(
          store, "enc" + std::to_string(s) + ".b" + std::to_string(b), cfg.dtab_at(s)));
    if (s + 1 < cfg.scales)
      down_.push_back(std::make_unique<DownTransition<T>>(
          store, "down" + std::to_string(s), cfg.channels_at(s), cfg.channels_at(s + 1),
          cfg.downsample));
  }
  for (int s = cfg.scales - 2; s >= 0; --s) {
    up_.push_back(std::make_unique<UpTransition<T>>(store, "up" + std::to_string(s),
                                                    cfg.channels_at(s + 1),
                                                    cfg.channels_at(s), cfg.downsample));
    fuse_.push_back(std::make_unique<Conv2dLayer<T>>(store, "fuse" + std::to_string(s),
                                                     2 * cfg.channels_at(s),
                                                     cfg.channels_at(s), 1));
    for (int b = 0; b < cfg.blocks_per_scale[s]; ++b)
      dec_[s].push_back(std::make_unique<DTABBlock<T>>(
          store, "dec" + std::to_string(s) + ".b" + std::to_string(b), cfg.dtab_at(s)));
  }
  tail_ = std::make_unique<Conv2dLayer<T>>(store, "tail", cfg.channels_at(0),
                                           cfg.input_channels, 1);
}

template <typename T>
int TBSN<T>::pad_multiple() const {
  return (1 << (cfg_.scales - 1)) * cfg_.dtab.window.window_size;
}

template <typename T>
Tensor<T> TBSN<T>::forward(const Tensor<T>& x) {
  if (x.c != cfg_.input_channels)
    throw std::invalid_argument("tbsn: expected " + std::to_string(cfg_.input_channels) +
                                " input channels, got " + x.shape_str());
  in_h_ = x.h;
  in_w_ = x.w;
  const int mult = pad_multiple();
  const int hp = ceil_to(x.h, mult), wp = ceil_to(x.w, mult);
  Tensor<T> cur =
      (hp == x.h && wp == x.w) ? x : pad_zero(x, 0, hp - x.h, 0, wp - x.w);

  cur = head_->forward(cur);
  std::vector<Tensor<T>> skips;
  for (int s = 0; s < cfg_.scales; ++s) {
    for (auto& blk : enc_[s]) cur = blk->forward(cur);
    if (s + 1 < cfg_.scales) {
      skips.push_back(cur);
      cur = down_[s]->forward(cur);
    }
  }
  for (int s = cfg_.scales - 2; s >= 0; --s) {
    const int i = cfg_.scales - 2 - s;  // construction order of up_/fuse_
    cur = up_[i]->forward(cur);
    cur = fuse_[i]->forward(concat_channels(skips[s], cur));
    for (auto& blk : dec_[s]) cur = blk->forward(cur);
  }
  cur = tail_->forward(cur);
  return (hp == in_h_ && wp == in_w_) ? cur : crop(cur, 0, 0, in_h_, in_w_);
}

template <typename T>
Tensor<T> TBSN<T>::backward(const Tensor<T>& d_out) {
  const int mult = pad_multiple();
  const int hp = ceil_to(in_h_, mult), wp = ceil_to(in_w_, mult);
  Tensor<T> d = (hp == in_h_ && wp == in_w_)
                    ? d_out
                    : pad_zero(d_out, 0, hp - in_h_, 0, wp - in_w_);
  d = tail_->backward(d);

  std::vector<Tensor<T>> d_skips(cfg_.scales > 1 ? cfg_.scales - 1 : 0,
                                 Tensor<T>(1, 1, 1, 1));
  for (int s = 0; s <= cfg_.scales - 2; ++s) {
    const int i = cfg_.scales - 2 - s;
    for (auto it = dec_[s].rbegin(); it != dec_[s].rend(); ++it) d = (*it)->backward(d);
    Tensor<T> d_cat = fuse_[i]->backward(d);
    auto [d_skip, d_up] = split_channels(d_cat, cfg_.channels_at(s));
    d_skips[s] = std::move(d_skip);
    d = up_[i]->backward(d_up);
  }
  for (int s = cfg_.scales - 1; s >= 0; --s) {
    if (s + 1 < cfg_.scales) {
      d = down_[s]->backward(d);
      add_into(d, d_skips[s]);
    }
    for (auto it = enc_[s].rbegin(); it != enc_[s].rend(); ++it) d = (*it)->backward(d);
  }
  Tensor<T> d_in = head_->backward(d);
  return (hp == in_h_ && wp == in_w_) ? d_in : crop(d_in, 0, 0, in_h_, in_w_);
}

// ---- StudentUNet ----

template <typename T>
typename StudentUNet<T>::ConvRelu StudentUNet<T>::make_cr(ParameterStore<T>& store,
                                                          const std::string& name, int ci,
                                                          int co) {
  ConvRelu cr;
  cr.conv = std::make_unique<Conv2dLayer<T>>(store, name, ci, co, 3);
  return cr;
}

template <typename T>
StudentUNet<T>::StudentUNet(const StudentUNetConfig& cfg, ParameterStore<T>& store)
    : cfg_(cfg) {
  cfg.validate();
  head_ = make_cr(store, "s.head", cfg.input_channels, cfg.channels_at(0));
  enc_.resize(cfg.scales);
  dec_.resize(cfg.scales > 1 ? cfg.scales - 1 : 0);
  for (int s = 0; s < cfg.scales; ++s) {
    for (int b = 0; b < cfg.blocks_per_scale[s]; ++b)
      enc_[s].push_back(make_cr(store, "s.enc" + std::to_string(s) + ".b" +
                                           std::to_string(b),
                                cfg.channels_at(s), cfg.channels_at(s)));
    if (s + 1 < cfg.scales) {
      pool_.emplace_back();
      down_conv_.push_back(make_cr(store, "s.down" + std::to_string(s),
                                   cfg.channels_at(s), cfg.channels_at(s + 1)));
    }
  }
  for (int s = cfg.scales - 2; s >= 0; --s) {
    upsample_.emplace_back();
    up_conv_.push_back(make_cr(store, "s.up" + std::to_string(s), cfg.channels_at(s + 1),
                               cfg.channels_at(s)));
    fuse_.push_back(make_cr(store, "s.fuse" + std::to_string(s), 2 * cfg.channels_at(s),
                            cfg.channels_at(s)));
    for (int b = 0; b < cfg.blocks_per_scale[s]; ++b)
      dec_[s].push_back(make_cr(store, "s.dec" + std::to_string(s) + ".b" +
                                           std::to_string(b),
                                cfg.channels_at(s), cfg.channels_at(s)));
  }
  tail_ = std::make_unique<Conv2dLayer<T>>(store, "s.tail", cfg.channels_at(0),
                                           cfg.input_channels, 3);
}

template <typename T>
int StudentUNet<T>::pad_multiple() const {
  return 1 << (cfg_.scales - 1);
}

template <typename T>
Tensor<T> StudentUNet<T>::forward(const Tensor<T>& x) {
  in_h_ = x.h;
  in_w_ = x.w;
  const int mult = pad_multiple();
  const int hp = ceil_to(x.h, mult), wp = ceil_to(x.w, mult);
  Tensor<T> cur =
      (hp == x.h && wp == x.w) ? x : pad_zero(x, 0, hp - x.h, 0, wp - x.w);

  cur = head_.relu.forward(head_.conv->forward(cur));
  std::vector<Tensor<T>> skips;
  for (int s = 0; s < cfg_.scales; ++s) {
    for (auto& cr : enc_[s]) cur = cr.relu.forward(cr.conv->forward(cur));
    if (s + 1 < cfg_.scales) {
      skips.push_back(cur);
      cur = pool_[s].forward(cur);
      cur = down_conv_[s].relu.forward(down_conv_[s].conv->forward(cur));
    }
  }
  for (int s = cfg_.scales - 2; s >= 0; --s) {
    const int i = cfg_.scales - 2 - s;
    cur = upsample_[i].forward(cur);
    cur = up_conv_[i].relu.forward(up_conv_[i].conv->forward(cur));
    cur = fuse_[i].relu.forward(fuse_[i].conv->forward(concat_channels(skips[s], cur)));
    for (auto& cr : dec_[s]) cur = cr.relu.forward(cr.conv->forward(cur));
  }
  cur = tail_->forward(cur);
  return (hp == in_h_ && wp == in_w_) ? cur : crop(cur, 0, 0, in_h_, in_w_);
}

template <typename T>
Tensor<T> StudentUNet<T>::backward(const Tensor<T>& d_out) {
  const int mult = pad_multiple();
  const int hp = ceil_to(in_h_, mult), wp = ceil_to(in_w_, mult);
  Tensor<T> d = (hp == in_h_ && wp == in_w_)
                    ? d_out
                    : pad_zero(d_out, 0, hp - in_h_, 0, wp - in_w_);
  d = tail_->backward(d);

  std::vector<Tensor<T>> d_skips(cfg_.scales > 1 ? cfg_.scales - 1 : 0,
                                 Tensor<T>(1, 1, 1, 1));
  for (int s = 0; s <= cfg_.scales - 2; ++s) {
    const int i = cfg_.scales - 2 - s;
    for (auto it = dec_[s].rbegin(); it != dec_[s].rend(); ++it)
      d = it->conv->backward(it->relu.backward(d));
    d = fuse_[i].conv->backward(fuse_[i].relu.backward(d));
    auto [d_skip, d_up] = split_channels(d, cfg_.channels_at(s));
    d_skips[s] = std::move(d_skip);
    d = up_conv_[i].conv->backward(up_conv_[i].relu.backward(d_up));
    d = upsample_[i].backward(d);
  }
  for (int s = cfg_.scales - 1; s >= 0; --s) {
    if (s + 1 < cfg_.scales) {
      d = down_conv_[s].conv->backward(down_conv_[s].relu.backward(d));
      d = pool_[s].backward(d);
      add_into(d, d_skips[s]);
    }
    for (auto it = enc_[s].rbegin(); it != enc_[s].rend(); ++it)
      d = it->conv->backward(it->relu.backward(d));
  }
  Tensor<T> d_in = head_.conv->backward(head_.relu.backward(d));
  return (hp == in_h_ && wp == in_w_) ? d_in : crop(d_in, 0, 0, in_h_, in_w_);
}

// ---- FLOPs accounting (multiply-accumulates x2, matmul/conv terms only) ----

double conv2d_flops(int c_in, int c_out, int kernel, int groups, double positions) {
  return 2.0 * (static_cast<double>(c_in) / groups) * c_out * kernel * kernel * positions;
}

namespace {

double dtab_flops(const DTABConfig& d, double positions) {
  double f = 0.0;
  const int c = d.channels;
  if (d.use_csa && d.csa_mode != CsaMode::identity) {
    const int g = d.groups();
    const int w = c / g;
    f += conv2d_flops(c, 3 * c, 1, g, positions);
    f += conv2d_flops(3 * c, 3 * c, 3, 3 * c, positions);
    f += 2.0 * 2.0 * c * w * positions;  // q k^T and attn v per group, summed
    f += conv2d_flops(c, c, 1, g, positions);
  }
  if (d.use_wsa) {
    const int heads = c / d.window.head_dim;
    f += 3 * conv2d_flops(c, c, 1, 1, positions);
    const double kk = static_cast<double>(d.window.kv_size) * d.window.kv_size;
    f += 2.0 * 2.0 * kk * d.window.head_dim * heads * positions;
    f += conv2d_flops(c, c, 1, 1, positions);
  }
  const int hidden = static_cast<int>(std::lround(c * d.ffn_expansion));
  f += conv2d_flops(c, 2 * hidden, 1, 1, positions);
  f += conv2d_flops(2 * hidden, 2 * hidden, 3, 2 * hidden, positions);
  f += conv2d_flops(hidden, c, 1, 1, positions);
  return f;
}

}  // namespace

double estimate_flops(const TBSNConfig& cfg, int height, int width) {
  cfg.validate();
  const int mult = (1 << (cfg.scales - 1)) * cfg.dtab.window.window_size;
  const double positions =
      static_cast<double>(ceil_to(height, mult)) * ceil_to(width, mult);
  double f = conv2d_flops(cfg.input_channels, cfg.channels_at(0), 3, 1, positions);
  for (int s = 0; s < cfg.scales; ++s) {
    // Phase separation keeps total positions constant across scales.
    const double p = positions;
    f += cfg.blocks_per_scale[s] * dtab_flops(cfg.dtab_at(s), p);
    if (s + 1 < cfg.scales) {
      const int post = cfg.downsample == DownsampleMode::parity ? cfg.channels_at(s)
                                                                : 4 * cfg.channels_at(s);
      f += conv2d_flops(post, cfg.channels_at(s + 1), 1, 1,
                        cfg.downsample == DownsampleMode::parity ? p : p / 4.0);
    }
  }
  for (int s = cfg.scales - 2; s >= 0; --s) {
    const double p = positions;
    const int post = cfg.downsample == DownsampleMode::parity ? cfg.channels_at(s)
                                                              : 4 * cfg.channels_at(s);
    f += conv2d_flops(cfg.channels_at(s + 1), post, 1, 1,
                      cfg.downsample == DownsampleMode::parity ? p : p / 4.0);
    f += conv2d_flops(2 * cfg.channels_at(s), cfg.channels_at(s), 1, 1, p);
    f += cfg.blocks_per_scale[s] * dtab_flops(cfg.dtab_at(s), p);
  }
  f += conv2d_flops(cfg.channels_at(0), cfg.input_channels, 1, 1, positions);
  return f;
}

double estimate_flops(const StudentUNetConfig& cfg, int height, int width) {
  cfg.validate();
  const int mult = 1 << (cfg.scales - 1);
  const double h0 = ceil_to(height, mult), w0 = ceil_to(width, mult);
  auto pos = [&](int s) { return (h0 / (1 << s)) * (w0 / (1 << s)); };
  double f = conv2d_flops(cfg.input_channels, cfg.channels_at(0), 3, 1, pos(0));
  for (int s = 0; s < cfg.scales; ++s) {
    f += cfg.blocks_per_scale[s] *
         conv2d_flops(cfg.channels_at(s), cfg.channels_at(s), 3, 1, pos(s));
    if (s + 1 < cfg.scales)
      f += conv2d_flops(cfg.channels_at(s), cfg.channels_at(s + 1), 3, 1, pos(s + 1));
  }
  for (int s = cfg.scales - 2; s >= 0; --s) {
    f += conv2d_flops(cfg.channels_at(s + 1), cfg.channels_at(s), 3, 1, pos(s));
    f += conv2d_flops(2 * cfg.channels_at(s), cfg.channels_at(s), 3, 1, pos(s));
    f += cfg.blocks_per_scale[s] *
         conv2d_flops(cfg.channels_at(s), cfg.channels_at(s), 3, 1, pos(s));
  }
  f += conv2d_flops(cfg.channels_at(0), cfg.input_channels, 3, 1, pos(0));
  return f;
}

template <typename T>
std::unique_ptr<TBSNModel<T>> TBSNModel<T>::build(const TBSNConfig& cfg, uint64_t seed) {
  auto m = std::make_unique<TBSNModel<T>>();
  m->cfg = cfg;
  m->net = std::make_unique<TBSN<T>>(cfg, m->store);
  m->store.init_values(seed);
  return m;
}

template <typename T>
std::unique_ptr<StudentModel<T>> StudentModel<T>::build(const StudentUNetConfig& cfg,
                                                        uint64_t seed) {
  auto m = std::make_unique<StudentModel<T>>();
  m->cfg = cfg;
  m->net = std::make_unique<StudentUNet<T>>(cfg, m->store);
  m->store.init_values(seed);
  return m;
}

template class TBSN<float>;
template class TBSN<double>;
template class StudentUNet<float>;
template class StudentUNet<double>;
template struct TBSNModel<float>;
template struct TBSNModel<double>;
template struct StudentModel<float>;
template struct StudentModel<double>;

}  // namespace tbsn

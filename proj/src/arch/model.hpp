#pragma once

#include <memory>
#include <string>
#include <vector>

#include "arch/layers.hpp"

namespace tbsn {

struct TBSNConfig {
  int scales = 3;
  int base_channels = 48;
  int channel_multiplier = 2;
  std::vector<int> blocks_per_scale = {2, 2, 2};
  int input_channels = 3;
  DTABConfig dtab;  // channels field is overwritten per scale
  DownsampleMode downsample = DownsampleMode::parity;

  int channels_at(int scale) const;
  DTABConfig dtab_at(int scale) const;
  void validate() const;

  // The channel-attention leakage condition: per-group channel count at some
  // scale reaches the number of coarse-scale spatial positions of a training
  // patch, letting channel statistics carry per-pixel information.
  std::vector<std::string> leakage_warnings(int patch_size) const;
};

struct StudentUNetConfig {
  int scales = 3;
  int base_channels = 38;
  int channel_multiplier = 2;
  std::vector<int> blocks_per_scale = {2, 2, 2};
  int input_channels = 3;

  int channels_at(int scale) const;
  void validate() const;
};

// Multiscale blind-spot network: centrally masked head, DTAB encoder/decoder
// with phase-separating scale changes and skip fusion, 1x1 tail. No global
// input residual (it would reintroduce the excluded pixel).
template <typename T>
class TBSN : public Module<T> {
 public:
  TBSN(const TBSNConfig& cfg, ParameterStore<T>& store);
  Tensor<T> forward(const Tensor<T>& x) override;
  Tensor<T> backward(const Tensor<T>& d_out) override;

  // Spatial sizes are padded internally to a multiple of this.
  int pad_multiple() const;
  const TBSNConfig& config() const { return cfg_; }

 private:
  TBSNConfig cfg_;
  std::unique_ptr<Conv2dLayer<T>> head_;
  std::vector<std::vector<std::unique_ptr<DTABBlock<T>>>> enc_;
  std::vector<std::unique_ptr<DownTransition<T>>> down_;
  std::vector<std::unique_ptr<UpTransition<T>>> up_;
  std::vector<std::unique_ptr<Conv2dLayer<T>>> fuse_;
  std::vector<std::vector<std::unique_ptr<DTABBlock<T>>>> dec_;
  std::unique_ptr<Conv2dLayer<T>> tail_;
  int in_h_ = 0, in_w_ = 0;
};

// Plain convolutional encoder-decoder used as the distillation student. No
// blind-spot constraints; average-pool downs, nearest-neighbor ups.
template <typename T>
class StudentUNet : public Module<T> {
 public:
  StudentUNet(const StudentUNetConfig& cfg, ParameterStore<T>& store);
  Tensor<T> forward(const Tensor<T>& x) override;
  Tensor<T> backward(const Tensor<T>& d_out) override;

  int pad_multiple() const;
  const StudentUNetConfig& config() const { return cfg_; }

 private:
  struct ConvRelu {
    std::unique_ptr<Conv2dLayer<T>> conv;
    ReLULayer<T> relu;
  };
  ConvRelu make_cr(ParameterStore<T>& store, const std::string& name, int ci, int co);

  StudentUNetConfig cfg_;
  ConvRelu head_;
  std::vector<std::vector<ConvRelu>> enc_;
  std::vector<AvgPool2Layer<T>> pool_;
  std::vector<ConvRelu> down_conv_;
  std::vector<NearestUp2Layer<T>> upsample_;
  std::vector<ConvRelu> up_conv_;
  std::vector<ConvRelu> fuse_;
  std::vector<std::vector<ConvRelu>> dec_;
  std::unique_ptr<Conv2dLayer<T>> tail_;
  int in_h_ = 0, in_w_ = 0;
};

double conv2d_flops(int c_in, int c_out, int kernel, int groups, double positions);
double estimate_flops(const TBSNConfig& cfg, int height, int width);
double estimate_flops(const StudentUNetConfig& cfg, int height, int width);

// Couples a parameter store with the network reading from it.
template <typename T>
struct TBSNModel {
  TBSNConfig cfg;
  ParameterStore<T> store;
  std::unique_ptr<TBSN<T>> net;

  static std::unique_ptr<TBSNModel<T>> build(const TBSNConfig& cfg, uint64_t seed);
};

template <typename T>
struct StudentModel {
  StudentUNetConfig cfg;
  ParameterStore<T> store;
  std::unique_ptr<StudentUNet<T>> net;

  static std::unique_ptr<StudentModel<T>> build(const StudentUNetConfig& cfg,
                                                uint64_t seed);
};

}  // namespace tbsn

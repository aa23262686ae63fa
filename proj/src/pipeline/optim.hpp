#pragma once

#include <cstdint>
#include <vector>

#include "arch/params.hpp"

namespace tbsn {

struct OptimConfig {
  double lr0 = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
  int64_t lr_decay_every = 40000;
  double lr_decay = 0.1;

  void validate() const;
};

// lr(iter) = lr0 * decay^floor(iter / every), iter counted from 0.
double lr_at(const OptimConfig& cfg, int64_t iter);

// Adaptive moments with decoupled weight decay. Decay is skipped for
// parameters flagged decay = false (biases, normalization, temperature).
template <typename T>
class AdamW {
 public:
  AdamW(ParameterStore<T>& store, const OptimConfig& cfg);

  // Consumes the gradients accumulated in the store for one step; the
  // caller zeroes them. `iter` is the 0-based step index driving the lr.
  void step(int64_t iter);

 private:
  ParameterStore<T>* store_;
  OptimConfig cfg_;
  int64_t t_ = 0;  // bias-correction counter
  std::vector<std::vector<double>> m_, v_;
};

}  // namespace tbsn

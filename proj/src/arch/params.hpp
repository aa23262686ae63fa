#pragma once

#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "core/rng.hpp"

namespace tbsn {

enum class ParamInit { uniform_fanin, zeros, ones };

template <typename T>
struct Param {
  std::string name;
  std::vector<int> shape;
  std::vector<T> value;
  std::vector<T> grad;
  ParamInit init = ParamInit::uniform_fanin;
  int fan_in = 1;
  // Decoupled weight decay skips normalization/temperature/bias parameters.
  bool decay = true;

  size_t size() const { return value.size(); }
};

// Owns every learnable array of a model in registration order. Pointers
// returned by add() stay valid for the store's lifetime.
template <typename T>
class ParameterStore {
 public:
  Param<T>* add(const std::string& name, std::vector<int> shape, ParamInit init,
                int fan_in = 1, bool decay = true) {
    size_t total = 1;
    for (int d : shape) total *= static_cast<size_t>(d);
    for (const auto& p : params_)
      if (p->name == name) throw std::logic_error("duplicate parameter name: " + name);
    auto p = std::make_unique<Param<T>>();
    p->name = name;
    p->shape = std::move(shape);
    p->value.assign(total, T(0));
    p->grad.assign(total, T(0));
    p->init = init;
    p->fan_in = fan_in;
    p->decay = decay;
    params_.push_back(std::move(p));
    return params_.back().get();
  }

  Param<T>* find(const std::string& name) {
    for (auto& p : params_)
      if (p->name == name) return p.get();
    return nullptr;
  }

  // Values are drawn from a stream keyed by (seed, name hash), so the result
  // does not depend on registration order.
  void init_values(uint64_t seed) {
    for (auto& p : params_) {
      Rng rng(mix_seed(seed, fnv1a(p->name.data(), p->name.size())));
      switch (p->init) {
        case ParamInit::zeros:
          std::fill(p->value.begin(), p->value.end(), T(0));
          break;
        case ParamInit::ones:
          std::fill(p->value.begin(), p->value.end(), T(1));
          break;
        case ParamInit::uniform_fanin: {
          const double bound = 1.0 / std::sqrt(static_cast<double>(p->fan_in));
          for (auto& v : p->value) v = static_cast<T>(rng.uniform(-bound, bound));
          break;
        }
      }
    }
  }

  void zero_grad() {
    for (auto& p : params_) std::fill(p->grad.begin(), p->grad.end(), T(0));
  }

  size_t count_scalars() const {
    size_t total = 0;
    for (const auto& p : params_) total += p->size();
    return total;
  }

  const std::vector<std::unique_ptr<Param<T>>>& all() const { return params_; }
  std::vector<std::unique_ptr<Param<T>>>& all() { return params_; }

 private:
  std::vector<std::unique_ptr<Param<T>>> params_;
};

}  // namespace tbsn

#pragma once

#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "srtod/graph.hpp"
#include "srtod/rng.hpp"

namespace srtod {

/// Named trainable tensor with its optimizer state.
template <typename T>
struct Param {
  std::string name;
  Tensor<T> value;
  Tensor<T> momentum;
  bool trainable = true;
  bool decay = true;  // subject to weight decay

  void clamp(T lo, T hi) {
    for (auto& v : value.data)
      v = v < lo ? lo : (v > hi ? hi : v);
  }
};

enum class Init { kZeros, kOnes, kHeNormal, kConstant };

/// Registry of model parameters. Initialization draws derive from
/// (seed, parameter name), so two models built with the same seed start
/// with identical weights for every identically-named parameter no matter
/// which extra modules either model carries.
template <typename T>
class ParamStore {
 public:
  explicit ParamStore(uint64_t init_seed) : seed_(init_seed) {}

  Param<T>* create(const std::string& name, std::vector<int> shape, Init init,
                   double arg = 0.0) {
    if (index_.count(name))
      throw ConfigError("duplicate parameter name: " + name);
    auto p = std::make_unique<Param<T>>();
    p->name = name;
    p->value = Tensor<T>(shape);
    p->momentum = Tensor<T>(std::move(shape));
    switch (init) {
      case Init::kZeros:
        break;
      case Init::kOnes:
        for (auto& v : p->value.data) v = T(1);
        break;
      case Init::kConstant:
        for (auto& v : p->value.data) v = T(arg);
        break;
      case Init::kHeNormal: {
        Rng rng = Rng::derive(seed_, name);
        const double stddev = std::sqrt(2.0 / arg);  // arg = fan_in
        for (auto& v : p->value.data) v = T(rng.normal(0.0, stddev));
        break;
      }
    }
    Param<T>* raw = p.get();
    index_.emplace(name, params_.size());
    params_.push_back(std::move(p));
    return raw;
  }

  Param<T>* find(const std::string& name) {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : params_[it->second].get();
  }

  const std::vector<std::unique_ptr<Param<T>>>& all() const { return params_; }

  int64_t count_values() const {
    int64_t n = 0;
    for (const auto& p : params_) n += p->value.numel();
    return n;
  }

  uint64_t init_seed() const { return seed_; }

 private:
  uint64_t seed_;
  std::vector<std::unique_ptr<Param<T>>> params_;
  std::unordered_map<std::string, size_t> index_;
};

/// Register a parameter as a graph leaf (deduplicated per graph).
template <typename T>
Var<T> use_param(Graph<T>& g, Param<T>* p) {
  return {&g, g.leaf_ref(&p->value, p->trainable)};
}

}  // namespace srtod

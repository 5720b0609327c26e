#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "agrimae/errors.hpp"
#include "agrimae/rng.hpp"
#include "agrimae/tensor.hpp"

namespace agrimae {

// A named trainable tensor plus its AdamW moment buffers.
struct Parameter {
  std::string name;
  Tensor value;
  std::vector<double> first_moment;
  std::vector<double> second_moment;
};

// Flat registry of model parameters in registration order. Names are
// path-like ("enc.s0.b0.attn.wq") and unique within a model.
class ParamStore {
 public:
  Tensor add(const std::string& name, Tensor init) {
    if (index_.count(name)) throw ValidationError("duplicate parameter name: " + name);
    init.set_requires_grad(true);
    Parameter p;
    p.name = name;
    p.value = init;
    p.first_moment.assign(init.numel(), 0.0);
    p.second_moment.assign(init.numel(), 0.0);
    index_.emplace(name, params_.size());
    params_.push_back(std::move(p));
    return init;
  }

  std::size_t count() const { return params_.size(); }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.numel();
    return n;
  }

  Parameter& at(std::size_t i) { return params_[i]; }
  const Parameter& at(std::size_t i) const { return params_[i]; }

  Parameter* find(const std::string& name) {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : &params_[it->second];
  }

  std::vector<Parameter>& all() { return params_; }
  const std::vector<Parameter>& all() const { return params_; }

  void zero_grad() {
    for (auto& p : params_) p.value.zero_grad();
  }

 private:
  std::vector<Parameter> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct OptimConfig {
  double learning_rate = 1e-3;
  double weight_decay = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t step_count = 0;

  void validate() const {
    std::string bad;
    if (!(learning_rate > 0.0)) bad += "learning_rate must be positive; ";
    if (weight_decay < 0.0) bad += "weight_decay must be non-negative; ";
    if (!(beta1 > 0.0 && beta1 < 1.0)) bad += "beta1 must be in (0,1); ";
    if (!(beta2 > 0.0 && beta2 < 1.0)) bad += "beta2 must be in (0,1); ";
    if (!(epsilon > 0.0)) bad += "epsilon must be positive; ";
    if (!bad.empty()) throw ValidationError("optimizer config: " + bad);
  }
};

// One AdamW update: bias-corrected moments, decoupled weight decay.
inline void adamw_step(ParamStore& params, OptimConfig& cfg) {
  cfg.validate();
  cfg.step_count += 1;
  const double t = static_cast<double>(cfg.step_count);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  for (auto& p : params.all()) {
    const auto& g = p.value.grad();
    auto& x = p.value.data();
    for (std::size_t i = 0; i < x.size(); ++i) {
      double& m = p.first_moment[i];
      double& v = p.second_moment[i];
      m = cfg.beta1 * m + (1.0 - cfg.beta1) * g[i];
      v = cfg.beta2 * v + (1.0 - cfg.beta2) * g[i] * g[i];
      const double mhat = m / bc1;
      const double vhat = v / bc2;
      x[i] -= cfg.learning_rate * (mhat / (std::sqrt(vhat) + cfg.epsilon) +
                                   cfg.weight_decay * x[i]);
    }
  }
}

// ---- initializers ------------------------------------------------------------

inline Tensor init_trunc_normal(Shape shape, double stddev, Rng& rng) {
  std::vector<double> d(shape_numel(shape));
  for (auto& v : d) v = rng.trunc_normal(stddev);
  return Tensor::from_data(std::move(shape), std::move(d));
}

inline Tensor init_zeros(Shape shape) { return Tensor::zeros(std::move(shape)); }

inline Tensor init_ones(Shape shape) { return Tensor::full(std::move(shape), 1.0); }

}  // namespace agrimae

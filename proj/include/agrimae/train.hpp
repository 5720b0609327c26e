#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "agrimae/anomaly.hpp"
#include "agrimae/config.hpp"
#include "agrimae/dataset.hpp"
#include "agrimae/masking.hpp"
#include "agrimae/model.hpp"
#include "agrimae/optim.hpp"
#include "agrimae/rng.hpp"

namespace agrimae {

struct TrainConfig {
  std::size_t epochs = 200;
  std::size_t batch_size = 8;
  std::size_t warmup_epochs = 20;
  std::size_t refresh_period = 5;
  std::size_t mask_window = 2;
  bool asl = true;
  bool masked_support_only = true;
  bool rescale_weights = true;
  double learning_rate = 1e-3;
  std::uint64_t seed = 1;

  void validate() const {
    std::string bad;
    if (epochs == 0) bad += "epochs must be >= 1; ";
    if (batch_size == 0) bad += "batch_size must be >= 1; ";
    if (refresh_period == 0) bad += "refresh_period must be >= 1; ";
    if (mask_window == 0) bad += "mask_window must be >= 1; ";
    if (warmup_epochs > epochs) bad += "warmup_epochs must not exceed epochs; ";
    if (!(learning_rate > 0.0)) bad += "learning_rate must be positive; ";
    if (!bad.empty()) throw ValidationError("train config: " + bad);
  }

  KeyValues to_kv() const {
    KeyValues kv;
    kv["epochs"] = std::to_string(epochs);
    kv["batch_size"] = std::to_string(batch_size);
    kv["warmup_epochs"] = std::to_string(warmup_epochs);
    kv["refresh_period"] = std::to_string(refresh_period);
    kv["mask_window"] = std::to_string(mask_window);
    kv["asl"] = asl ? "true" : "false";
    kv["masked_support_only"] = masked_support_only ? "true" : "false";
    kv["rescale_weights"] = rescale_weights ? "true" : "false";
    kv["learning_rate"] = std::to_string(learning_rate);
    kv["seed"] = std::to_string(seed);
    return kv;
  }

  static TrainConfig from_reader(KvReader& reader) {
    TrainConfig c;
    c.epochs = reader.get_size("epochs", c.epochs);
    c.batch_size = reader.get_size("batch_size", c.batch_size);
    c.warmup_epochs = reader.get_size("warmup_epochs", default_warmup(c.epochs));
    c.refresh_period = reader.get_size("refresh_period", c.refresh_period);
    c.mask_window = reader.get_size("mask_window", c.mask_window);
    c.asl = reader.get_bool("asl", c.asl);
    c.masked_support_only = reader.get_bool("masked_support_only", c.masked_support_only);
    c.rescale_weights = reader.get_bool("rescale_weights", c.rescale_weights);
    c.learning_rate = reader.get_double("learning_rate", c.learning_rate);
    c.seed = reader.get_size("seed", c.seed);
    return c;
  }

  static std::size_t default_warmup(std::size_t epochs) { return epochs / 10; }
};

struct TrainState {
  Model model;
  TrainConfig config;
  OptimConfig optim;
  Rng rng;
  std::size_t epoch = 0;
  std::vector<double> loss_history;      // per-epoch mean step loss
  std::vector<WeightMap> weight_maps;    // parallel to dataset order; filled after warmup
};

inline TrainState make_train_state(const ModelConfig& model_config, const TrainConfig& config) {
  config.validate();
  TrainState state{build(model_config, config.seed), config, OptimConfig{},
                   Rng(mix_seed(config.seed ^ 0x545241494eull))};
  state.optim.learning_rate = config.learning_rate;
  return state;
}

// Fresh per-step mask: whole windows for the windowed variant, single patches otherwise.
inline PatchMask training_mask(const ModelConfig& config, std::size_t mask_window, Rng& rng) {
  const std::size_t g = config.grid_side();
  if (config.is_swin()) return window_mask(g, g, mask_window, config.mask_ratio, rng);
  return patch_mask(g, g, config.mask_ratio, rng);
}

// Per-pixel support of a per-patch mask: a pixel participates in the loss iff
// its patch was masked.
inline std::vector<std::uint8_t> mask_pixel_support(const PatchMask& mask, std::size_t grid,
                                                    std::size_t patch) {
  if (mask.size() != grid * grid) {
    throw ShapeError("mask_pixel_support: mask length " + std::to_string(mask.size()) +
                     " != grid tokens " + std::to_string(grid * grid));
  }
  const std::size_t side = grid * patch;
  std::vector<std::uint8_t> support(side * side);
  for (std::size_t r = 0; r < side; ++r) {
    for (std::size_t c = 0; c < side; ++c) {
      support[r * side + c] = mask[(r / patch) * grid + c / patch];
    }
  }
  return support;
}

inline WeightMap unit_weights(std::size_t height, std::size_t width) {
  return WeightMap{Tensor::full({height, width}, 1.0), 0};
}

// Weight maps come from a full unmasked reconstruction of every image, in
// dataset order, with gradients off.
inline void refresh_weight_maps(TrainState& state, const std::vector<Sample>& data) {
  NoGradGuard guard;
  const ModelConfig& mc = model_config(state.model);
  const PatchMask none(mc.token_count(), 0);
  state.weight_maps.clear();
  state.weight_maps.reserve(data.size());
  for (const auto& sample : data) {
    ErrorMap err = reconstruction_error(sample.image, forward(state.model, sample.image, none));
    state.weight_maps.push_back(asl_weight_map(err, state.config.rescale_weights, state.epoch));
  }
}

inline TrainState& train(TrainState& state, const std::vector<Sample>& data) {
  state.config.validate();
  if (data.empty()) throw ValidationError("train: empty dataset");
  const ModelConfig& mc = model_config(state.model);
  const Shape want{mc.image_size, mc.image_size, mc.bands};
  for (const auto& sample : data) {
    if (sample.image.shape() != want) {
      throw ShapeError("train: sample " + sample.id + " has shape " +
                       shape_str(sample.image.shape()) + ", model expects " + shape_str(want));
    }
  }

  ParamStore& params = model_params(state.model);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (; state.epoch < state.config.epochs;) {
    const bool asl_active = state.config.asl && state.epoch >= state.config.warmup_epochs;
    if (asl_active &&
        (state.epoch - state.config.warmup_epochs) % state.config.refresh_period == 0) {
      refresh_weight_maps(state, data);
    }
    std::shuffle(order.begin(), order.end(), state.rng.engine());

    double epoch_loss = 0.0;
    std::size_t steps = 0;
    for (std::size_t start = 0; start < order.size(); start += state.config.batch_size) {
      const std::size_t stop = std::min(order.size(), start + state.config.batch_size);
      Tensor total = Tensor::scalar(0.0);
      for (std::size_t k = start; k < stop; ++k) {
        const Sample& sample = data[order[k]];
        const PatchMask mask = training_mask(mc, state.config.mask_window, state.rng);
        ErrorMap err =
            reconstruction_error(sample.image, forward(state.model, sample.image, mask));
        std::vector<std::uint8_t> support;
        const std::vector<std::uint8_t>* support_ptr = nullptr;
        if (state.config.masked_support_only) {
          support = mask_pixel_support(mask, mc.grid_side(), mc.patch_size);
          support_ptr = &support;
        }
        Tensor loss = asl_active
                          ? weighted_loss(err, state.weight_maps[order[k]], support_ptr)
                          : weighted_loss(err, unit_weights(err.height(), err.width()),
                                          support_ptr);
        total = add(total, loss);
      }
      Tensor batch_loss = scale(total, 1.0 / static_cast<double>(stop - start));
      const double value = batch_loss.data()[0];
      if (!std::isfinite(value)) {
        throw NumericError("train: non-finite loss at epoch " + std::to_string(state.epoch) +
                           ", step " + std::to_string(steps));
      }
      params.zero_grad();
      backward(batch_loss);
      adamw_step(params, state.optim);
      epoch_loss += value;
      ++steps;
    }
    state.loss_history.push_back(epoch_loss / static_cast<double>(steps));
    ++state.epoch;
  }
  return state;
}

// K forward passes, one reconstruction error per mask, averaged in a fixed
// per-pixel order so run permutations cannot change the result.
inline ErrorMap infer(const Model& model, const Tensor& image, const MaskPlan& plan) {
  const ModelConfig& mc = model_config(model);
  if (plan.rows != mc.grid_side() || plan.cols != mc.grid_side()) {
    throw ShapeError("infer: plan grid " + std::to_string(plan.rows) + "x" +
                     std::to_string(plan.cols) + " != model grid " +
                     std::to_string(mc.grid_side()) + "x" + std::to_string(mc.grid_side()));
  }
  if (plan.runs.empty()) throw ValidationError("infer: plan has no runs");
  NoGradGuard guard;
  std::vector<ErrorMap> maps;
  maps.reserve(plan.runs.size());
  for (const auto& run : plan.runs) {
    maps.push_back(reconstruction_error(image, forward(model, image, run)));
  }
  return average_error_maps(maps);
}

inline AnomalyMap detect(const ErrorMap& averaged) {
  return binarize(averaged, knee_threshold(averaged.values.data()));
}

}  // namespace agrimae

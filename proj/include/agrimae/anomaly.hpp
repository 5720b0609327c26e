#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "agrimae/errors.hpp"
#include "agrimae/tensor.hpp"

namespace agrimae {

// Per-pixel squared reconstruction error, summed over bands.
struct ErrorMap {
  Tensor values;  // [H x W]

  std::size_t height() const { return values.shape().at(0); }
  std::size_t width() const { return values.shape().at(1); }
};

struct WeightMap {
  Tensor values;  // [H x W], constant in backprop
  std::size_t source_epoch = 0;
};

struct AnomalyMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> values;
  double threshold_used = 0.0;
};

inline ErrorMap reconstruction_error(const Tensor& image, const Tensor& reconstruction) {
  if (image.shape() != reconstruction.shape()) {
    throw ShapeError("reconstruction_error: shape mismatch " + shape_str(image.shape()) + " vs " +
                     shape_str(reconstruction.shape()));
  }
  if (image.shape().size() != 3) {
    throw ShapeError("reconstruction_error: expected HxWxB, got " + shape_str(image.shape()));
  }
  const std::size_t h = image.shape()[0];
  const std::size_t w = image.shape()[1];
  const std::size_t b = image.shape()[2];
  Tensor diff = sub(reshape(reconstruction, {h * w, b}), reshape(image, {h * w, b}));
  Tensor band_sum = matmul(mul(diff, diff), Tensor::full({b, 1}, 1.0));
  return ErrorMap{reshape(band_sum, {h, w})};
}

// w = max(E) - e, optionally rescaled to mean 1 so the loss magnitude stays
// comparable to an unweighted MSE. The map is a stored constant: it never
// carries gradient.
inline WeightMap asl_weight_map(const ErrorMap& error, bool rescale = true,
                                std::size_t source_epoch = 0) {
  const auto& e = error.values.data();
  if (e.empty()) throw ValidationError("asl_weight_map: empty error map");
  const double peak = *std::max_element(e.begin(), e.end());
  std::vector<double> w(e.size());
  double total = 0.0;
  for (std::size_t i = 0; i < e.size(); ++i) {
    w[i] = peak - e[i];
    total += w[i];
  }
  const double mean_w = total / static_cast<double>(w.size());
  if (rescale && mean_w > 0.0) {
    for (double& v : w) v /= mean_w;
  }
  WeightMap out;
  out.values = Tensor::from_data(error.values.shape(), std::move(w));
  out.source_epoch = source_epoch;
  return out;
}

// Mean-form adaptive-weighted loss: sum of w*e over the support, divided by
// the support size. Gradients flow through e only.
inline Tensor weighted_loss(const ErrorMap& error, const WeightMap& weights,
                            const std::vector<std::uint8_t>* support = nullptr) {
  if (error.values.shape() != weights.values.shape()) {
    throw ShapeError("weighted_loss: error " + shape_str(error.values.shape()) + " vs weights " +
                     shape_str(weights.values.shape()));
  }
  const std::size_t n = error.values.numel();
  if (support && support->size() != n) {
    throw ShapeError("weighted_loss: support size " + std::to_string(support->size()) +
                     " != map size " + std::to_string(n));
  }
  std::size_t support_size = n;
  if (support) {
    support_size = 0;
    for (std::uint8_t s : *support) support_size += (s != 0);
  }
  if (support_size == 0) return Tensor::scalar(0.0);
  std::vector<double> coeff(n);
  const auto& w = weights.values.data();
  for (std::size_t i = 0; i < n; ++i) {
    const bool in = !support || (*support)[i] != 0;
    coeff[i] = in ? w[i] / static_cast<double>(support_size) : 0.0;
  }
  return weighted_sum(error.values, std::move(coeff));
}

// Raw-sum form of the loss (no support-size division).
inline Tensor weighted_loss_sum(const ErrorMap& error, const WeightMap& weights,
                                const std::vector<std::uint8_t>* support = nullptr) {
  Tensor mean_form = weighted_loss(error, weights, support);
  std::size_t support_size = error.values.numel();
  if (support) {
    support_size = 0;
    for (std::uint8_t s : *support) support_size += (s != 0);
  }
  return scale(mean_form, static_cast<double>(support_size));
}

// Knee of the sorted value curve (kneedle): normalize the sorted values to the
// unit square and take the value with the largest distance to the chord. When
// the curve is flat or an exact ramp there is no knee; the fallback threshold
// sits just above the maximum so the anomaly map comes out empty.
inline double knee_threshold(std::vector<double> values, double sensitivity = 1e-9) {
  if (values.size() < 2) {
    throw ValidationError("knee_threshold: need at least 2 values, got " +
                          std::to_string(values.size()));
  }
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  const double lo = values.front();
  const double hi = values.back();
  const double span = hi - lo;
  if (span <= 0.0) return std::nextafter(hi, std::numeric_limits<double>::infinity());
  double best = 0.0;
  std::size_t best_idx = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = static_cast<double>(i) / static_cast<double>(n - 1);
    const double y = (values[i] - lo) / span;
    const double d = std::abs(y - x);
    if (d > best) {
      best = d;
      best_idx = i;
    }
  }
  if (best <= sensitivity) return std::nextafter(hi, std::numeric_limits<double>::infinity());
  return values[best_idx];
}

inline AnomalyMap binarize(const ErrorMap& averaged, double threshold) {
  AnomalyMap out;
  out.height = averaged.height();
  out.width = averaged.width();
  out.threshold_used = threshold;
  const auto& e = averaged.values.data();
  out.values.resize(e.size());
  for (std::size_t i = 0; i < e.size(); ++i) out.values[i] = e[i] >= threshold ? 1 : 0;
  return out;
}

// K-run average with per-pixel sorted accumulation, so the result is
// bit-identical under any permutation of the runs.
inline ErrorMap average_error_maps(const std::vector<ErrorMap>& maps) {
  if (maps.empty()) throw ValidationError("average_error_maps: no maps");
  const Shape shape = maps[0].values.shape();
  for (const auto& m : maps) {
    if (m.values.shape() != shape) {
      throw ShapeError("average_error_maps: shape mismatch " + shape_str(m.values.shape()) +
                       " vs " + shape_str(shape));
    }
  }
  const std::size_t n = maps[0].values.numel();
  const std::size_t k = maps.size();
  std::vector<double> out(n);
  std::vector<double> slot(k);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < k; ++j) slot[j] = maps[j].values.data()[i];
    std::sort(slot.begin(), slot.end());
    double acc = 0.0;
    for (double v : slot) acc += v;
    out[i] = acc / static_cast<double>(k);
  }
  return ErrorMap{Tensor::from_data(shape, std::move(out))};
}

}  // namespace agrimae

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "agrimae/errors.hpp"
#include "agrimae/rng.hpp"

namespace agrimae {

using PatchMask = std::vector<std::uint8_t>;

struct MaskPlan {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t mask_window = 1;
  double ratio = 0.0;
  std::vector<PatchMask> runs;
};

namespace detail {

inline void check_mask_args(std::size_t rows, std::size_t cols, std::size_t mask_window,
                            double ratio) {
  if (mask_window == 0 || rows % mask_window != 0 || cols % mask_window != 0) {
    throw ShapeError("mask: grid " + std::to_string(rows) + "x" + std::to_string(cols) +
                     " not divisible by mask_window " + std::to_string(mask_window));
  }
  if (!(ratio >= 0.0 && ratio < 1.0)) {
    throw ValidationError("mask: ratio must be in [0,1), got " + std::to_string(ratio));
  }
}

inline std::size_t masked_window_count(std::size_t window_count, double ratio) {
  return static_cast<std::size_t>(std::ceil(ratio * static_cast<double>(window_count)));
}

// Expand a set of masked mask-windows into a per-patch mask.
inline PatchMask windows_to_patches(const std::vector<std::uint8_t>& window_mask, std::size_t rows,
                                    std::size_t cols, std::size_t mw) {
  const std::size_t wcols = cols / mw;
  PatchMask mask(rows * cols, 0);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      mask[r * cols + c] = window_mask[(r / mw) * wcols + c / mw];
    }
  }
  return mask;
}

// First k entries of a random permutation of 0..n-1 (partial Fisher-Yates).
inline std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k, Rng& rng) {
  std::vector<std::size_t> pool(n);
  std::iota(pool.begin(), pool.end(), std::size_t{0});
  for (std::size_t i = 0; i < k; ++i) {
    std::swap(pool[i], pool[i + rng.below(n - i)]);
  }
  pool.resize(k);
  return pool;
}

}  // namespace detail

inline PatchMask window_mask(std::size_t rows, std::size_t cols, std::size_t mask_window,
                             double ratio, Rng& rng) {
  detail::check_mask_args(rows, cols, mask_window, ratio);
  const std::size_t wc = (rows / mask_window) * (cols / mask_window);
  const std::size_t k = detail::masked_window_count(wc, ratio);
  std::vector<std::uint8_t> chosen(wc, 0);
  for (std::size_t w : detail::sample_without_replacement(wc, k, rng)) chosen[w] = 1;
  return detail::windows_to_patches(chosen, rows, cols, mask_window);
}

inline PatchMask patch_mask(std::size_t rows, std::size_t cols, double ratio, Rng& rng) {
  return window_mask(rows, cols, 1, ratio, rng);
}

// K-run schedule. The stratified variant balances exact per-window counts:
// every window lands in floor(K*m/W) or ceil(K*m/W) runs (m windows masked per
// run), which guarantees coverage and keeps the run average tight. Windows are
// assigned greedily to the runs with the most remaining capacity; with the
// capacity spread bounded by one this never dead-ends.
inline MaskPlan inference_schedule(std::size_t rows, std::size_t cols, std::size_t mask_window,
                                   double ratio, std::size_t k_runs, Rng& rng,
                                   bool stratified = true) {
  detail::check_mask_args(rows, cols, mask_window, ratio);
  if (k_runs == 0) throw ValidationError("inference_schedule: K must be >= 1");

  MaskPlan plan;
  plan.rows = rows;
  plan.cols = cols;
  plan.mask_window = mask_window;
  plan.ratio = ratio;
  plan.runs.reserve(k_runs);

  if (!stratified) {
    for (std::size_t k = 0; k < k_runs; ++k) {
      plan.runs.push_back(window_mask(rows, cols, mask_window, ratio, rng));
    }
    return plan;
  }

  const std::size_t wc = (rows / mask_window) * (cols / mask_window);
  const std::size_t m = detail::masked_window_count(wc, ratio);
  if (k_runs * m < wc) {
    throw ValidationError("inference_schedule: stratified coverage infeasible, K*" +
                          std::to_string(m) + " masked windows < " + std::to_string(wc) +
                          " windows; raise K or ratio");
  }

  const std::size_t total = k_runs * m;
  std::vector<std::size_t> count(wc, total / wc);
  for (std::size_t w : detail::sample_without_replacement(wc, total % wc, rng)) ++count[w];

  std::vector<std::vector<std::uint8_t>> members(k_runs, std::vector<std::uint8_t>(wc, 0));
  std::vector<std::size_t> capacity(k_runs, m);
  std::vector<std::size_t> window_order(wc), run_order(k_runs);
  std::iota(window_order.begin(), window_order.end(), std::size_t{0});
  std::iota(run_order.begin(), run_order.end(), std::size_t{0});
  rng.shuffle(window_order);
  for (std::size_t w : window_order) {
    rng.shuffle(run_order);
    std::stable_sort(run_order.begin(), run_order.end(),
                     [&](std::size_t a, std::size_t b) { return capacity[a] > capacity[b]; });
    for (std::size_t i = 0; i < count[w]; ++i) {
      members[run_order[i]][w] = 1;
      --capacity[run_order[i]];
    }
  }
  for (std::size_t k = 0; k < k_runs; ++k) {
    plan.runs.push_back(detail::windows_to_patches(members[k], rows, cols, mask_window));
  }
  return plan;
}

}  // namespace agrimae

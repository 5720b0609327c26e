#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <map>
#include <numeric>
#include <string>
#include <string_view>
#include <vector>

#include "agrimae/anomaly.hpp"
#include "agrimae/errors.hpp"

namespace agrimae {

struct PixelCounts {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;

  double iou() const {
    const std::size_t denom = tp + fp + fn;
    if (denom == 0) return 1.0;  // both empty: a correct all-clear
    return static_cast<double>(tp) / static_cast<double>(denom);
  }

  PixelCounts& operator+=(const PixelCounts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    tn += o.tn;
    return *this;
  }
};

inline PixelCounts count_pixels(const std::vector<std::uint8_t>& pred,
                                const std::vector<std::uint8_t>& gt) {
  if (pred.size() != gt.size()) {
    throw ShapeError("count_pixels: pred size " + std::to_string(pred.size()) + " != gt size " +
                     std::to_string(gt.size()));
  }
  PixelCounts c;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] != 0;
    const bool g = gt[i] != 0;
    if (p && g) ++c.tp;
    else if (p && !g) ++c.fp;
    else if (!p && g) ++c.fn;
    else ++c.tn;
  }
  return c;
}

inline double iou(const AnomalyMap& pred, const std::vector<std::uint8_t>& gt) {
  return count_pixels(pred.values, gt).iou();
}

inline double miou(const std::vector<double>& per_class) {
  if (per_class.empty()) throw ValidationError("miou: empty class list");
  return std::accumulate(per_class.begin(), per_class.end(), 0.0) /
         static_cast<double>(per_class.size());
}

// Rank-based AUROC with midrank tie handling.
inline double pixel_auroc(const std::vector<double>& scores,
                          const std::vector<std::uint8_t>& gt) {
  if (scores.size() != gt.size()) {
    throw ShapeError("pixel_auroc: score size " + std::to_string(scores.size()) + " != gt size " +
                     std::to_string(gt.size()));
  }
  const std::size_t n = scores.size();
  std::size_t positives = 0;
  for (auto g : gt) positives += (g != 0);
  const std::size_t negatives = n - positives;
  if (positives == 0 || negatives == 0) {
    throw ValidationError("pixel_auroc: ground truth needs at least one positive and one negative");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double positive_rank_sum = 0.0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double midrank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t k = i; k < j; ++k) {
      if (gt[order[k]] != 0) positive_rank_sum += midrank;
    }
    i = j;
  }
  const double p = static_cast<double>(positives);
  return (positive_rank_sum - p * (p + 1.0) / 2.0) / (p * static_cast<double>(negatives));
}

inline double pixel_auroc(const ErrorMap& scores, const std::vector<std::uint8_t>& gt) {
  return pixel_auroc(scores.values.data(), gt);
}

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::string fingerprint_hex(std::string_view s) {
  static const char* digits = "0123456789abcdef";
  std::uint64_t h = fnv1a(s);
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[i] = digits[h & 0xf];
    h >>= 4;
  }
  return out;
}

struct MetricReport {
  std::map<std::string, PixelCounts> class_counts;  // pooled pixels per class_tag
  std::map<std::string, double> class_iou;
  double miou = 0.0;
  double auroc = 0.0;
  std::size_t image_count = 0;
  std::string config_fingerprint;
  std::uint64_t seed = 0;
};

struct EvalItem {
  std::string class_tag;
  AnomalyMap pred;
  std::vector<std::uint8_t> gt;
  std::vector<double> scores;  // averaged error map, flattened
};

// Per-class counting over pooled pixels (default) or averaged per-image IoU;
// one AUROC over all pixels of all items either way.
inline MetricReport evaluate(const std::vector<EvalItem>& items, bool per_image = false) {
  if (items.empty()) throw ValidationError("evaluate: no items");
  MetricReport rep;
  std::map<std::string, std::pair<double, std::size_t>> per_image_acc;
  std::vector<double> all_scores;
  std::vector<std::uint8_t> all_gt;
  for (const auto& item : items) {
    const PixelCounts counts = count_pixels(item.pred.values, item.gt);
    rep.class_counts[item.class_tag] += counts;
    auto& acc = per_image_acc[item.class_tag];
    acc.first += counts.iou();
    acc.second += 1;
    all_scores.insert(all_scores.end(), item.scores.begin(), item.scores.end());
    all_gt.insert(all_gt.end(), item.gt.begin(), item.gt.end());
    ++rep.image_count;
  }
  std::vector<double> ious;
  for (const auto& [tag, counts] : rep.class_counts) {
    const auto& acc = per_image_acc.at(tag);
    rep.class_iou[tag] =
        per_image ? acc.first / static_cast<double>(acc.second) : counts.iou();
    ious.push_back(rep.class_iou[tag]);
  }
  rep.miou = miou(ious);
  rep.auroc = pixel_auroc(all_scores, all_gt);
  return rep;
}

namespace detail {

inline std::string fmt_fraction(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace detail

// Stable text rendering: sorted key = value lines, then a per-class TSV table.
inline std::string render_report(const MetricReport& rep) {
  std::string out;
  out += "auroc = " + detail::fmt_fraction(rep.auroc) + "\n";
  out += "config_fingerprint = " + rep.config_fingerprint + "\n";
  out += "image_count = " + std::to_string(rep.image_count) + "\n";
  out += "miou = " + detail::fmt_fraction(rep.miou) + "\n";
  out += "seed = " + std::to_string(rep.seed) + "\n";
  out += "\n";
  out += "class\tiou\ttp\tfp\tfn\ttn\n";
  for (const auto& [tag, counts] : rep.class_counts) {
    const auto it = rep.class_iou.find(tag);
    const double value = it == rep.class_iou.end() ? counts.iou() : it->second;
    out += tag + "\t" + detail::fmt_fraction(value) + "\t" + std::to_string(counts.tp) + "\t" +
           std::to_string(counts.fp) + "\t" + std::to_string(counts.fn) + "\t" +
           std::to_string(counts.tn) + "\n";
  }
  return out;
}

}  // namespace agrimae

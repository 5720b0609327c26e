#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "agrimae/errors.hpp"
#include "agrimae/raster.hpp"
#include "agrimae/rng.hpp"

namespace agrimae {

struct GenSpec {
  std::size_t count = 16;
  std::size_t image_size = 32;
  std::size_t bands = 4;
  double anomaly_fraction = 0.0;
  std::vector<std::string> classes = {"blob", "stripe-break", "bright-patch"};
  std::size_t blob_min = 6;
  std::size_t blob_max = 12;
  double noise = 0.05;
  std::uint64_t seed = 1;

  void validate() const {
    if (count == 0) throw ValidationError("gen: count must be positive");
    if (image_size < 8) throw ValidationError("gen: image_size must be >= 8");
    if (bands == 0) throw ValidationError("gen: bands must be positive");
    if (!(anomaly_fraction >= 0.0 && anomaly_fraction <= 1.0)) {
      throw ValidationError("gen: anomaly_fraction must be in [0,1], got " +
                            std::to_string(anomaly_fraction));
    }
    if (classes.empty()) throw ValidationError("gen: need at least one anomaly class");
    for (const auto& c : classes) {
      if (c != "blob" && c != "stripe-break" && c != "bright-patch") {
        throw ValidationError("gen: unknown anomaly class '" + c + "'");
      }
    }
    if (blob_min < 3 || blob_max < blob_min || blob_max > image_size) {
      throw ValidationError("gen: blob size range [" + std::to_string(blob_min) + "," +
                            std::to_string(blob_max) + "] invalid for image_size " +
                            std::to_string(image_size));
    }
    if (!(noise >= 0.0 && noise <= 0.5)) {
      throw ValidationError("gen: noise must be in [0,0.5], got " + std::to_string(noise));
    }
  }
};

namespace detail {

// Smooth per-band field: a coarse 5x5 grid of normal draws, bilinearly
// interpolated up to the image, corner-aligned.
inline std::vector<double> low_freq_noise(std::size_t size, double amplitude, Rng& rng) {
  constexpr std::size_t kCoarse = 5;
  double grid[kCoarse][kCoarse];
  for (auto& row : grid) {
    for (double& v : row) v = amplitude * rng.normal();
  }
  std::vector<double> out(size * size);
  const double step = static_cast<double>(kCoarse - 1) / static_cast<double>(size - 1);
  for (std::size_t r = 0; r < size; ++r) {
    const double fr = r * step;
    const std::size_t r0 = std::min<std::size_t>(static_cast<std::size_t>(fr), kCoarse - 2);
    const double tr = fr - r0;
    for (std::size_t c = 0; c < size; ++c) {
      const double fc = c * step;
      const std::size_t c0 = std::min<std::size_t>(static_cast<std::size_t>(fc), kCoarse - 2);
      const double tc = fc - c0;
      out[r * size + c] = (1 - tr) * ((1 - tc) * grid[r0][c0] + tc * grid[r0][c0 + 1]) +
                          tr * ((1 - tc) * grid[r0 + 1][c0] + tc * grid[r0 + 1][c0 + 1]);
    }
  }
  return out;
}

struct SynthImage {
  std::vector<double> pixels;       // H x W x B in [0,1]
  std::vector<std::uint8_t> label;  // H x W
};

// Crop-field texture: periodic row stripes with per-band base levels; the NIR
// band (band 3 when present) tracks the stripe signal so vegetation reads
// bright in it. Anomalies overwrite a contiguous region and the label.
inline SynthImage synth_image(const GenSpec& spec, bool anomalous, const std::string& cls,
                              Rng& rng) {
  const std::size_t n = spec.image_size;
  const std::size_t b = spec.bands;
  SynthImage img;
  img.pixels.assign(n * n * b, 0.0);
  img.label.assign(n * n, 0);

  const double period = 6.0 + rng.uniform(0.0, 4.0);
  const double phase = rng.uniform(0.0, period);
  std::vector<double> band_base(b), band_amp(b);
  for (std::size_t k = 0; k < b; ++k) {
    band_base[k] = 0.35 + 0.08 * static_cast<double>(k % 3) + rng.uniform(-0.03, 0.03);
    band_amp[k] = 0.10 + rng.uniform(0.0, 0.04);
  }
  if (b >= 4) {
    band_base[3] = 0.55 + rng.uniform(-0.03, 0.03);  // NIR: bright over vegetation
    band_amp[3] = 0.22;
  }
  std::vector<std::vector<double>> smooth(b);
  for (std::size_t k = 0; k < b; ++k) smooth[k] = low_freq_noise(n, spec.noise, rng);

  for (std::size_t r = 0; r < n; ++r) {
    const double stripe = std::sin(2.0 * 3.14159265358979323846 * (r + phase) / period);
    for (std::size_t c = 0; c < n; ++c) {
      for (std::size_t k = 0; k < b; ++k) {
        double v = band_base[k] + band_amp[k] * stripe + smooth[k][r * n + c] +
                   0.01 * rng.normal();
        img.pixels[(r * n + c) * b + k] = std::clamp(v, 0.0, 1.0);
      }
    }
  }

  if (!anomalous) return img;

  const std::size_t extent = spec.blob_min + rng.below(spec.blob_max - spec.blob_min + 1);
  if (cls == "blob") {
    // dark bare-soil disc: RGB drops, NIR drops hard
    const double rad = extent / 2.0;
    const std::size_t irad = static_cast<std::size_t>(rad);
    const std::size_t span = n - 2 * irad;
    const std::size_t cr = irad + (span ? rng.below(span) : 0);
    const std::size_t cc = irad + (span ? rng.below(span) : 0);
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t c = 0; c < n; ++c) {
        const double dr = static_cast<double>(r) - cr;
        const double dc = static_cast<double>(c) - cc;
        if (dr * dr + dc * dc > rad * rad) continue;
        img.label[r * n + c] = 1;
        for (std::size_t k = 0; k < b; ++k) {
          const double drop = (k == 3) ? 0.40 : 0.25;
          double v = img.pixels[(r * n + c) * b + k] - drop + 0.02 * rng.normal();
          img.pixels[(r * n + c) * b + k] = std::clamp(v, 0.0, 1.0);
        }
      }
    }
  } else if (cls == "stripe-break") {
    // a horizontal band where the row pattern flattens out
    const std::size_t h = std::max<std::size_t>(4, extent / 2);
    const std::size_t r0 = rng.below(n - h);
    for (std::size_t r = r0; r < r0 + h; ++r) {
      for (std::size_t c = 0; c < n; ++c) {
        img.label[r * n + c] = 1;
        for (std::size_t k = 0; k < b; ++k) {
          double v = band_base[k] + 0.18 + 0.02 * rng.normal();
          img.pixels[(r * n + c) * b + k] = std::clamp(v, 0.0, 1.0);
        }
      }
    }
  } else {  // bright-patch
    const std::size_t h = extent;
    const std::size_t w = std::max<std::size_t>(4, extent - 2);
    const std::size_t r0 = rng.below(n - h);
    const std::size_t c0 = rng.below(n - w);
    for (std::size_t r = r0; r < r0 + h; ++r) {
      for (std::size_t c = c0; c < c0 + w; ++c) {
        img.label[r * n + c] = 1;
        for (std::size_t k = 0; k < b; ++k) {
          const double lift = (k == 3) ? -0.30 : 0.35;  // bright RGB, NIR drop
          double v = img.pixels[(r * n + c) * b + k] + lift + 0.02 * rng.normal();
          img.pixels[(r * n + c) * b + k] = std::clamp(v, 0.0, 1.0);
        }
      }
    }
  }
  return img;
}

}  // namespace detail

// Writes images/<id>.aten (u8), labels/<id>.aten (u8) and index.txt.
inline void generate(const GenSpec& spec, const std::string& out_dir) {
  spec.validate();
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(fs::path(out_dir) / "images", ec);
  fs::create_directories(fs::path(out_dir) / "labels", ec);
  if (ec) throw IoError("gen: cannot create " + out_dir + ": " + ec.message());

  Rng pick(mix_seed(spec.seed ^ 0xA5A5A5A5ull));
  const std::size_t n_anom =
      static_cast<std::size_t>(std::llround(spec.anomaly_fraction * static_cast<double>(spec.count)));
  std::vector<std::uint8_t> anomalous(spec.count, 0);
  {
    std::vector<std::size_t> order(spec.count);
    for (std::size_t i = 0; i < spec.count; ++i) order[i] = i;
    pick.shuffle(order);
    for (std::size_t i = 0; i < n_anom; ++i) anomalous[order[i]] = 1;
  }

  std::string index;
  for (std::size_t i = 0; i < spec.count; ++i) {
    char idbuf[16];
    std::snprintf(idbuf, sizeof idbuf, "img%05zu", i);
    const std::string id = idbuf;
    Rng rng(mix_seed(spec.seed ^ (0x1000000ull + i)));
    const std::string cls =
        anomalous[i] ? spec.classes[rng.below(spec.classes.size())] : std::string("none");
    detail::SynthImage img = detail::synth_image(spec, anomalous[i] != 0, cls, rng);

    std::vector<std::uint8_t> bytes(img.pixels.size());
    for (std::size_t j = 0; j < bytes.size(); ++j) {
      bytes[j] = static_cast<std::uint8_t>(std::lround(img.pixels[j] * 255.0));
    }
    save_raster_u8((fs::path(out_dir) / "images" / (id + ".aten")).string(),
                   {spec.image_size, spec.image_size, spec.bands}, bytes);
    save_raster_u8((fs::path(out_dir) / "labels" / (id + ".aten")).string(),
                   {spec.image_size, spec.image_size}, img.label);
    index += id + "\t" + (anomalous[i] ? "1" : "0") + "\t" + cls + "\n";
  }
  detail::write_file_bytes((fs::path(out_dir) / "index.txt").string(), index);
}

}  // namespace agrimae

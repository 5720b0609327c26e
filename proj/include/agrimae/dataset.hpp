#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "agrimae/errors.hpp"
#include "agrimae/raster.hpp"
#include "agrimae/tensor.hpp"

namespace agrimae {

struct Sample {
  std::string id;
  Tensor image;  // [H x W x B], values in [0,1]
  std::vector<std::uint8_t> label;  // empty when no label file exists
  std::string class_tag;
  bool has_anomaly = false;
};

inline Tensor raster_to_image(const RasterData& r, const std::string& path) {
  if (r.dims.size() != 3) {
    throw IoError(path + ": expected HxWxB image, got " + shape_str(r.dims));
  }
  std::vector<double> values(r.count());
  if (r.dtype == 1) {
    for (std::size_t i = 0; i < values.size(); ++i) values[i] = r.u8[i] / 255.0;
  } else {
    values = r.f64;
    for (double v : values) {
      if (!(v >= 0.0 && v <= 1.0)) {
        throw IoError(path + ": f64 image values must lie in [0,1]");
      }
    }
  }
  return Tensor::from_data(r.dims, std::move(values));
}

// Reads index.txt (id<TAB>has_anomaly<TAB>class_tag per line), sorted by id.
inline std::vector<Sample> load_dataset(const std::string& dir, bool exclude_anomalous = false) {
  namespace fs = std::filesystem;
  const std::string index_path = (fs::path(dir) / "index.txt").string();
  std::ifstream in(index_path);
  if (!in) throw IoError(index_path + ": cannot open index");

  struct Row {
    std::string id, cls;
    bool anom;
  };
  std::vector<Row> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string id, flag, cls;
    if (!std::getline(ls, id, '\t') || !std::getline(ls, flag, '\t') || !std::getline(ls, cls)) {
      throw IoError(index_path + ": line " + std::to_string(lineno) + " is not id<TAB>flag<TAB>class");
    }
    if (flag != "0" && flag != "1") {
      throw IoError(index_path + ": line " + std::to_string(lineno) + " has_anomaly must be 0 or 1");
    }
    rows.push_back({id, cls, flag == "1"});
  }
  std::sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) { return a.id < b.id; });

  std::vector<Sample> out;
  for (const auto& row : rows) {
    if (exclude_anomalous && row.anom) continue;
    Sample s;
    s.id = row.id;
    s.class_tag = row.cls;
    s.has_anomaly = row.anom;
    const std::string img_path = (fs::path(dir) / "images" / (row.id + ".aten")).string();
    s.image = raster_to_image(load_raster(img_path), img_path);
    const std::string lbl_path = (fs::path(dir) / "labels" / (row.id + ".aten")).string();
    if (fs::exists(lbl_path)) {
      RasterData lbl = load_raster(lbl_path);
      if (lbl.dims.size() != 2 || lbl.dims[0] != s.image.shape()[0] ||
          lbl.dims[1] != s.image.shape()[1]) {
        throw IoError(lbl_path + ": label dims " + shape_str(lbl.dims) +
                      " do not match image " + shape_str(s.image.shape()));
      }
      if (lbl.dtype != 1) throw IoError(lbl_path + ": labels must be u8");
      s.label = lbl.u8;
      for (auto& v : s.label) {
        if (v > 1) v = 1;
      }
    }
    out.push_back(std::move(s));
  }
  return out;
}

// Corner-aligned per-band bilinear resize.
inline Tensor resize_bilinear(const Tensor& image, std::size_t out_h, std::size_t out_w) {
  if (image.shape().size() != 3) {
    throw ShapeError("resize_bilinear: expected HxWxB, got " + shape_str(image.shape()));
  }
  if (out_h == 0 || out_w == 0) {
    throw ValidationError("resize_bilinear: target dims must be positive");
  }
  const std::size_t h = image.shape()[0];
  const std::size_t w = image.shape()[1];
  const std::size_t b = image.shape()[2];
  if (out_h == h && out_w == w) {
    return Tensor::from_data(image.shape(), image.data());
  }
  const auto& src = image.data();
  std::vector<double> dst(out_h * out_w * b);
  const double sr = out_h > 1 ? static_cast<double>(h - 1) / (out_h - 1) : 0.0;
  const double sc = out_w > 1 ? static_cast<double>(w - 1) / (out_w - 1) : 0.0;
  for (std::size_t r = 0; r < out_h; ++r) {
    const double fr = r * sr;
    const std::size_t r0 = std::min<std::size_t>(static_cast<std::size_t>(fr), h - 1);
    const std::size_t r1 = std::min<std::size_t>(r0 + 1, h - 1);
    const double tr = fr - r0;
    for (std::size_t c = 0; c < out_w; ++c) {
      const double fc = c * sc;
      const std::size_t c0 = std::min<std::size_t>(static_cast<std::size_t>(fc), w - 1);
      const std::size_t c1 = std::min<std::size_t>(c0 + 1, w - 1);
      const double tc = fc - c0;
      for (std::size_t k = 0; k < b; ++k) {
        const double v00 = src[(r0 * w + c0) * b + k];
        const double v01 = src[(r0 * w + c1) * b + k];
        const double v10 = src[(r1 * w + c0) * b + k];
        const double v11 = src[(r1 * w + c1) * b + k];
        dst[(r * out_w + c) * b + k] =
            (1 - tr) * ((1 - tc) * v00 + tc * v01) + tr * ((1 - tc) * v10 + tc * v11);
      }
    }
  }
  return Tensor::from_data({out_h, out_w, b}, std::move(dst));
}

}  // namespace agrimae

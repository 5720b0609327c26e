#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "agrimae/checkpoint.hpp"
#include "agrimae/errors.hpp"
#include "agrimae/tensor.hpp"

namespace agrimae {

// .aten raster: "ATEN", u8 version=1, u8 dtype (0 = f64 LE, 1 = u8), u8 ndim,
// ndim x u32 LE dims, row-major payload. Dims are H, W[, B].
struct RasterData {
  std::uint8_t dtype = 0;
  Shape dims;
  std::vector<double> f64;
  std::vector<std::uint8_t> u8;

  std::size_t count() const { return shape_numel(dims); }
};

inline void save_raster_f64(const std::string& path, const Shape& dims,
                            const std::vector<double>& values) {
  if (shape_numel(dims) != values.size()) {
    throw ShapeError("save_raster_f64: " + std::to_string(values.size()) +
                     " values do not fill dims " + shape_str(dims));
  }
  std::string out = "ATEN";
  out.push_back(1);
  out.push_back(0);
  out.push_back(static_cast<char>(dims.size()));
  for (std::size_t d : dims) detail::put_u32(out, static_cast<std::uint32_t>(d));
  for (double v : values) detail::put_f64(out, v);
  detail::write_file_bytes(path, out);
}

inline void save_raster_u8(const std::string& path, const Shape& dims,
                           const std::vector<std::uint8_t>& values) {
  if (shape_numel(dims) != values.size()) {
    throw ShapeError("save_raster_u8: " + std::to_string(values.size()) +
                     " values do not fill dims " + shape_str(dims));
  }
  std::string out = "ATEN";
  out.push_back(1);
  out.push_back(1);
  out.push_back(static_cast<char>(dims.size()));
  for (std::size_t d : dims) detail::put_u32(out, static_cast<std::uint32_t>(d));
  out.append(reinterpret_cast<const char*>(values.data()), values.size());
  detail::write_file_bytes(path, out);
}

inline RasterData load_raster(const std::string& path) {
  detail::ByteReader in(path, detail::read_file_bytes(path));
  if (in.str(4) != "ATEN") throw IoError(path + ": not an ATEN raster");
  const std::uint8_t version = in.u8();
  if (version != 1) throw IoError(path + ": unsupported version " + std::to_string(version));
  RasterData r;
  r.dtype = in.u8();
  if (r.dtype > 1) throw IoError(path + ": unknown dtype " + std::to_string(r.dtype));
  const std::uint8_t ndim = in.u8();
  if (ndim == 0 || ndim > 4) throw IoError(path + ": bad ndim " + std::to_string(ndim));
  for (std::uint8_t i = 0; i < ndim; ++i) {
    const std::uint32_t d = in.u32();
    if (d == 0) throw IoError(path + ": zero dimension");
    r.dims.push_back(d);
  }
  const std::size_t n = r.count();
  if (r.dtype == 0) {
    r.f64.resize(n);
    for (std::size_t i = 0; i < n; ++i) r.f64[i] = in.f64();
  } else {
    const std::string payload = in.str(n);
    r.u8.assign(payload.begin(), payload.end());
  }
  if (!in.done()) throw IoError(path + ": trailing bytes after payload");
  return r;
}

// Binary PGM (P5) / PPM (P6), maxval 255.
inline void write_pgm(const std::string& path, std::size_t h, std::size_t w,
                      const std::vector<std::uint8_t>& gray) {
  if (gray.size() != h * w) {
    throw ShapeError("write_pgm: " + std::to_string(gray.size()) + " pixels for " +
                     std::to_string(h) + "x" + std::to_string(w));
  }
  std::string out = "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  out.append(reinterpret_cast<const char*>(gray.data()), gray.size());
  detail::write_file_bytes(path, out);
}

inline void write_ppm(const std::string& path, std::size_t h, std::size_t w,
                      const std::vector<std::uint8_t>& rgb) {
  if (rgb.size() != h * w * 3) {
    throw ShapeError("write_ppm: " + std::to_string(rgb.size()) + " bytes for " +
                     std::to_string(h) + "x" + std::to_string(w) + " rgb");
  }
  std::string out = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  out.append(reinterpret_cast<const char*>(rgb.data()), rgb.size());
  detail::write_file_bytes(path, out);
}

}  // namespace agrimae

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "agrimae/errors.hpp"
#include "agrimae/optim.hpp"

namespace agrimae {

// Parameter checkpoint, magic "AMCK":
//   u32 version (1), u32 parameter count, u8 moments flag,
//   then per parameter: u16 name length, UTF-8 name, u8 ndim,
//   ndim x u32 dims, row-major f64 little-endian data.
// When the moments flag is 1, each parameter's data block is followed by its
// first and second moment buffers in the same layout (dims not repeated).

namespace detail {

inline void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
}

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f64(std::string& out, double d) {
  const auto bits = std::bit_cast<std::uint64_t>(d);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

class ByteReader {
 public:
  ByteReader(const std::string& path, std::string bytes) : path_(path), bytes_(std::move(bytes)) {}

  std::uint8_t u8() { return static_cast<std::uint8_t>(take(1)[0]); }

  std::uint16_t u16() {
    const auto* p = take(2);
    return static_cast<std::uint16_t>(static_cast<std::uint8_t>(p[0]) |
                                      (static_cast<std::uint8_t>(p[1]) << 8));
  }

  std::uint32_t u32() {
    const auto* p = take(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(p[i])) << (8 * i);
    return v;
  }

  double f64() {
    const auto* p = take(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(p[i])) << (8 * i);
    return std::bit_cast<double>(v);
  }

  std::string str(std::size_t n) {
    const auto* p = take(n);
    return std::string(p, n);
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  const char* take(std::size_t n) {
    if (pos_ + n > bytes_.size()) throw IoError(path_ + ": truncated file");
    const char* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::string path_;
  std::string bytes_;
  std::size_t pos_ = 0;
};

inline std::string read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path + ": cannot open for reading");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return bytes;
}

inline void write_file_bytes(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(path + ": cannot open for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError(path + ": write failed");
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const ParamStore& params,
                            bool with_moments = true) {
  std::string out;
  out += "AMCK";
  detail::put_u32(out, 1);
  detail::put_u32(out, static_cast<std::uint32_t>(params.count()));
  out.push_back(with_moments ? 1 : 0);
  for (const auto& p : params.all()) {
    if (p.name.size() > 0xffff) throw ValidationError("parameter name too long: " + p.name);
    detail::put_u16(out, static_cast<std::uint16_t>(p.name.size()));
    out += p.name;
    const auto& shape = p.value.shape();
    out.push_back(static_cast<char>(shape.size()));
    for (std::size_t d : shape) detail::put_u32(out, static_cast<std::uint32_t>(d));
    for (double v : p.value.data()) detail::put_f64(out, v);
    if (with_moments) {
      for (double v : p.first_moment) detail::put_f64(out, v);
      for (double v : p.second_moment) detail::put_f64(out, v);
    }
  }
  detail::write_file_bytes(path, out);
}

// Loads a checkpoint into an already-built store; every file record must match
// an existing parameter's name and shape.
inline void load_checkpoint(const std::string& path, ParamStore& params) {
  detail::ByteReader in(path, detail::read_file_bytes(path));
  if (in.str(4) != "AMCK") throw IoError(path + ": bad magic, not an AMCK checkpoint");
  const auto version = in.u32();
  if (version != 1) throw IoError(path + ": unsupported checkpoint version " + std::to_string(version));
  const auto count = in.u32();
  if (count != params.count()) {
    throw IoError(path + ": checkpoint has " + std::to_string(count) + " parameters, model has " +
                  std::to_string(params.count()));
  }
  const bool with_moments = in.u8() != 0;
  for (std::uint32_t k = 0; k < count; ++k) {
    const auto name_len = in.u16();
    const std::string name = in.str(name_len);
    Parameter* p = params.find(name);
    if (!p) throw IoError(path + ": unknown parameter '" + name + "'");
    const auto ndim = in.u8();
    Shape shape(ndim);
    for (std::uint8_t i = 0; i < ndim; ++i) shape[i] = in.u32();
    if (shape != p->value.shape()) {
      throw IoError(path + ": parameter '" + name + "' has shape " + shape_str(shape) +
                    ", model expects " + shape_str(p->value.shape()));
    }
    for (auto& v : p->value.data()) v = in.f64();
    if (with_moments) {
      for (auto& v : p->first_moment) v = in.f64();
      for (auto& v : p->second_moment) v = in.f64();
    } else {
      std::fill(p->first_moment.begin(), p->first_moment.end(), 0.0);
      std::fill(p->second_moment.begin(), p->second_moment.end(), 0.0);
    }
  }
  if (!in.done()) throw IoError(path + ": trailing bytes after last parameter");
}

}  // namespace agrimae

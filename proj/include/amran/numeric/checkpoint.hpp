#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "amran/numeric/tensor.hpp"
#include "amran/random.hpp"

// Versioned binary container of named tensors.
//
//   "AMRANCKP" | u32 version | u32 count
//   count x { u32 name_len | name | u32 rank | u64 dims[rank] | f64 values[] }
//   u64 FNV-1a checksum of every preceding byte
//
// Integers and doubles are written in host byte order (little-endian on every
// platform we build for).
namespace amran::numeric {

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr char kCheckpointMagic[8] = {'A', 'M', 'R', 'A', 'N', 'C', 'K', 'P'};

struct NamedTensor {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

namespace detail {
template <typename T>
void put(std::string& buf, const T& v) {
  char raw[sizeof(T)];
  std::memcpy(raw, &v, sizeof(T));
  buf.append(raw, sizeof(T));
}

class Reader {
 public:
  explicit Reader(std::string_view data) : data_(data) {}
  template <typename T>
  T get() {
    if (pos_ + sizeof(T) > data_.size()) throw IoError("checkpoint: truncated file");
    T v;
    std::memcpy(&v, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string bytes(std::size_t n) {
    if (pos_ + n > data_.size()) throw IoError("checkpoint: truncated file");
    std::string s(data_.substr(pos_, n));
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }

 private:
  std::string_view data_;
  std::size_t pos_ = 0;
};
}  // namespace detail

inline std::string encode_checkpoint(const std::vector<NamedTensor>& tensors) {
  std::string buf(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::put(buf, kCheckpointVersion);
  detail::put(buf, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    if (shape_size(t.shape) != t.values.size()) throw ShapeError("checkpoint: tensor '" + t.name + "' shape mismatch");
    detail::put(buf, static_cast<std::uint32_t>(t.name.size()));
    buf += t.name;
    detail::put(buf, static_cast<std::uint32_t>(t.shape.size()));
    for (auto d : t.shape) detail::put(buf, static_cast<std::uint64_t>(d));
    for (double v : t.values) detail::put(buf, v);
  }
  detail::put(buf, fnv1a(buf));
  return buf;
}

inline std::vector<NamedTensor> decode_checkpoint(std::string_view data) {
  if (data.size() < sizeof(kCheckpointMagic) + 16 ||
      std::memcmp(data.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0)
    throw IoError("checkpoint: bad magic");
  const auto body = data.substr(0, data.size() - sizeof(std::uint64_t));
  std::uint64_t stored;
  std::memcpy(&stored, data.data() + body.size(), sizeof(stored));
  if (stored != fnv1a(body)) throw IoError("checkpoint: checksum mismatch");
  detail::Reader in(body);
  in.bytes(sizeof(kCheckpointMagic));
  const auto version = in.get<std::uint32_t>();
  if (version != kCheckpointVersion) throw IoError("checkpoint: unsupported version " + std::to_string(version));
  const auto count = in.get<std::uint32_t>();
  std::vector<NamedTensor> out;
  out.reserve(count);
  for (std::uint32_t k = 0; k < count; ++k) {
    NamedTensor t;
    t.name = in.bytes(in.get<std::uint32_t>());
    const auto rank = in.get<std::uint32_t>();
    for (std::uint32_t r = 0; r < rank; ++r) t.shape.push_back(static_cast<std::size_t>(in.get<std::uint64_t>()));
    t.values.resize(shape_size(t.shape));
    for (double& v : t.values) v = in.get<double>();
    out.push_back(std::move(t));
  }
  if (in.pos() != body.size()) throw IoError("checkpoint: trailing bytes");
  return out;
}

inline void save_checkpoint(const std::string& path, const std::vector<NamedTensor>& tensors) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path);
  const auto buf = encode_checkpoint(tensors);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw IoError("failed writing checkpoint " + path);
}

inline std::vector<NamedTensor> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read checkpoint " + path);
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(buf);
}

}  // namespace amran::numeric

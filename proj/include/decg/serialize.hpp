#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>
#include <stdexcept>
#include <string>

#include "decg/model.hpp"

namespace decg {

/// Weights file is unreadable or inconsistent with its embedded config.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::string_view kWeightsMagic = "DECG1";

// Layout (little-endian):
//   "DECG1"
//   u32 config byte length, config text (ModelConfig::to_text)
//   u32 tensor count
//   per tensor: u32 rank, rank x u32 extents, numel x f32
// Tensors follow Network::state_tensors() order.

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

inline void put_f32(std::string& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }

class ByteReader {
 public:
  explicit ByteReader(std::string_view bytes) : bytes_(bytes) {}
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string_view take(std::size_t n) {
    need(n);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw FormatError("weights file truncated");
  }
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

template <class T>
std::string serialize_weights(Network<T>& net) {
  std::string out(kWeightsMagic);
  const std::string cfg = net.config.to_text();
  detail::put_u32(out, static_cast<std::uint32_t>(cfg.size()));
  out += cfg;
  const auto tensors = net.state_tensors();
  detail::put_u32(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& p : tensors) {
    const Shape& s = p.tensor->shape();
    detail::put_u32(out, static_cast<std::uint32_t>(s.rank()));
    for (std::size_t i = 0; i < s.rank(); ++i) detail::put_u32(out, static_cast<std::uint32_t>(s[i]));
    for (T v : p.tensor->data()) detail::put_f32(out, static_cast<float>(v));
  }
  return out;
}

template <class T>
Network<T> deserialize_weights(std::string_view bytes) {
  if (bytes.substr(0, kWeightsMagic.size()) != kWeightsMagic) {
    throw FormatError("not a weights file (bad magic)");
  }
  detail::ByteReader in(bytes.substr(kWeightsMagic.size()));
  const std::uint32_t cfg_len = in.u32();
  ModelConfig cfg;
  try {
    cfg = ModelConfig::from_text(in.take(cfg_len));
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string("weights file config: ") + e.what());
  }
  Rng rng(0);
  Network<T> net = build_model<T>(cfg, rng);
  auto tensors = net.state_tensors();
  if (in.u32() != tensors.size()) throw FormatError("weights file tensor count mismatch");
  for (auto& p : tensors) {
    const Shape& s = p.tensor->shape();
    if (in.u32() != s.rank()) throw FormatError("rank mismatch for " + p.name);
    for (std::size_t i = 0; i < s.rank(); ++i)
      if (in.u32() != s[i]) throw FormatError("shape mismatch for " + p.name);
    for (T& v : p.tensor->data()) v = static_cast<T>(in.f32());
  }
  if (!in.done()) throw FormatError("trailing bytes in weights file");
  return net;
}

template <class T>
void save_weights(Network<T>& net, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  const std::string bytes = serialize_weights(net);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("failed writing " + path);
}

template <class T>
Network<T> load_weights(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open weights file " + path);
  const std::string bytes{std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
  return deserialize_weights<T>(bytes);
}

/// FNV-1a of the serialized weights, as 16 hex digits.
template <class T>
std::string model_hash(Network<T>& net) {
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << text::fnv1a(serialize_weights(net));
  return os.str();
}

}  // namespace decg

#pragma once

#include <zlib.h>

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "eranet/model.hpp"

namespace eranet {

/// Malformed or mismatched weight container. offset is the byte position at
/// which the problem was detected.
struct WeightFormatError : Error {
  WeightFormatError(const std::string& msg, std::size_t off)
      : Error(msg + " (at byte offset " + std::to_string(off) + ")"), offset(off) {}
  std::size_t offset;
};

inline constexpr std::array<std::uint8_t, 4> kWeightMagic{0x45, 0x52, 0x41, 0x57};
inline constexpr std::uint32_t kWeightVersion = 1;
inline constexpr const char* kConfigTensor = "meta.config";

struct RawTensor {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<float> data;
  /// Byte offset of the tensor record within the file (filled on decode).
  std::size_t offset = 0;

  std::size_t numel() const {
    std::size_t n = 1;
    for (auto d : dims) n *= d;
    return n;
  }
};

struct WeightFile {
  std::uint32_t version = kWeightVersion;
  ModelMode mode = ModelMode::training;
  std::vector<RawTensor> tensors;
  std::uint32_t crc = 0;
};

inline std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
  return static_cast<std::uint32_t>(
      ::crc32(::crc32(0L, Z_NULL, 0), bytes.data(), static_cast<uInt>(bytes.size())));
}

namespace detail {

class ByteWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u16(std::uint16_t v) { le(v, 2); }
  void u32(std::uint32_t v) { le(v, 4); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void bytes(const void* p, std::size_t n) {
    auto* b = static_cast<const std::uint8_t*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  std::vector<std::uint8_t>& buffer() { return buf_; }

 private:
  void le(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::uint8_t> buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> b) : b_(b) {}
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return b_.size() - pos_; }
  void need(std::size_t n, const char* what) const {
    if (remaining() < n) throw WeightFormatError(std::string("truncated weight file while reading ") + what, pos_);
  }
  std::uint8_t u8(const char* what) {
    need(1, what);
    return b_[pos_++];
  }
  std::uint16_t u16(const char* what) { return static_cast<std::uint16_t>(le(2, what)); }
  std::uint32_t u32(const char* what) { return static_cast<std::uint32_t>(le(4, what)); }
  float f32(const char* what) { return std::bit_cast<float>(u32(what)); }
  std::string str(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
    pos_ += n;
    return s;
  }

 private:
  std::uint64_t le(int n, const char* what) {
    need(static_cast<std::size_t>(n), what);
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(b_[pos_++]) << (8 * i);
    return v;
  }
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<std::uint8_t> encode_weights(const WeightFile& f) {
  detail::ByteWriter w;
  w.bytes(kWeightMagic.data(), 4);
  w.u32(f.version);
  w.u8(f.mode == ModelMode::training ? 0 : 1);
  w.u32(static_cast<std::uint32_t>(f.tensors.size()));
  for (const auto& t : f.tensors) {
    if (t.name.size() > 0xFFFF) throw ValueError("tensor name too long: " + t.name.substr(0, 40));
    if (t.dims.size() > 255) throw ValueError("tensor rank too large: " + t.name);
    if (t.numel() != t.data.size()) throw ValueError("tensor '" + t.name + "' dims disagree with its payload");
    w.u16(static_cast<std::uint16_t>(t.name.size()));
    w.bytes(t.name.data(), t.name.size());
    w.u8(static_cast<std::uint8_t>(t.dims.size()));
    for (auto d : t.dims) w.u32(d);
    for (float v : t.data) w.f32(v);
  }
  w.u32(crc32_of(w.buffer()));
  return std::move(w.buffer());
}

inline WeightFile decode_weights(std::span<const std::uint8_t> bytes) {
  detail::ByteReader r(bytes);
  WeightFile f;
  r.need(4, "magic");
  if (!std::equal(kWeightMagic.begin(), kWeightMagic.end(), bytes.begin()))
    throw WeightFormatError("bad magic: not an ERAW weight file", 0);
  r.str(4, "magic");
  const std::size_t version_at = r.pos();
  f.version = r.u32("version");
  if (f.version != kWeightVersion)
    throw WeightFormatError("unsupported weight file version " + std::to_string(f.version), version_at);
  const std::size_t mode_at = r.pos();
  const std::uint8_t mode = r.u8("mode");
  if (mode > 1) throw WeightFormatError("invalid mode byte " + std::to_string(mode), mode_at);
  f.mode = mode == 0 ? ModelMode::training : ModelMode::fused;
  const std::uint32_t count = r.u32("tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    RawTensor t;
    t.offset = r.pos();
    const std::uint16_t len = r.u16("tensor name length");
    t.name = r.str(len, "tensor name");
    const std::uint8_t rank = r.u8("tensor rank");
    std::size_t numel = 1;
    for (std::uint8_t k = 0; k < rank; ++k) {
      t.dims.push_back(r.u32("tensor dims"));
      numel *= t.dims.back();
      if (numel > r.remaining()) throw WeightFormatError("tensor '" + t.name + "' is larger than the file", r.pos());
    }
    r.need(numel * 4, "tensor payload");
    t.data.resize(numel);
    for (auto& v : t.data) v = r.f32("tensor payload");
    f.tensors.push_back(std::move(t));
  }
  const std::size_t crc_at = r.pos();
  f.crc = r.u32("checksum");
  if (r.remaining() != 0) throw WeightFormatError("trailing bytes after checksum", r.pos());
  const std::uint32_t actual = crc32_of(bytes.first(crc_at));
  if (actual != f.crc) throw WeightFormatError("checksum mismatch", crc_at);
  return f;
}

namespace detail {

/// Config as floats; ln_eps is split into three floats so the double
/// round-trips exactly.
inline std::vector<float> encode_config(const ModelConfig& c) {
  const double e = c.ln_eps;
  const float e0 = static_cast<float>(e);
  const float e1 = static_cast<float>(e - e0);
  const float e2 = static_cast<float>(e - e0 - e1);
  return {float(c.in_channels), float(c.channels), float(c.blocks), float(c.expansion), float(c.cam_reduction),
          float(c.use_cam), float(c.use_sam), float(c.plain_krm), float(static_cast<int>(c.edge)),
          float(static_cast<int>(c.cam_activation)), float(static_cast<int>(c.norm)), float(c.global_residual), e0, e1,
          e2};
}

inline ModelConfig decode_config(const RawTensor& t) {
  const auto& v = t.data;
  if (v.size() != 15) throw WeightFormatError("architecture record has " + std::to_string(v.size()) + " fields", t.offset);
  auto count = [&](std::size_t i, double hi) {
    if (!(v[i] >= 0 && v[i] <= hi) || v[i] != std::floor(v[i]))
      throw WeightFormatError("architecture field " + std::to_string(i) + " out of range", t.offset);
    return static_cast<std::size_t>(v[i]);
  };
  ModelConfig c;
  c.in_channels = count(0, 64);
  c.channels = count(1, 4096);
  c.blocks = count(2, 256);
  c.expansion = count(3, 64);
  c.cam_reduction = count(4, 4096);
  c.use_cam = count(5, 1);
  c.use_sam = count(6, 1);
  c.plain_krm = count(7, 1);
  c.edge = static_cast<EdgeOperator>(count(8, 5));
  c.cam_activation = static_cast<CamActivation>(count(9, 1));
  c.norm = static_cast<NormMode>(count(10, 1));
  c.global_residual = count(11, 1);
  c.ln_eps = static_cast<double>(v[12]) + static_cast<double>(v[13]) + static_cast<double>(v[14]);
  try {
    c.validate();
  } catch (const ValueError& e) {
    throw WeightFormatError(e.what(), t.offset);
  }
  return c;
}

inline std::vector<std::uint32_t> file_dims(const Tensor4<float>& t, int rank) {
  if (rank == 1) return {static_cast<std::uint32_t>(t.size())};
  const Shape s = t.shape();
  return {static_cast<std::uint32_t>(s.n), static_cast<std::uint32_t>(s.c), static_cast<std::uint32_t>(s.h),
          static_cast<std::uint32_t>(s.w)};
}

}  // namespace detail

template <typename T>
WeightFile to_weight_file(const EraNet<T>& m) {
  WeightFile f;
  f.mode = m.mode();
  f.tensors.push_back({kConfigTensor, {15}, detail::encode_config(m.config())});
  const EraNet<float> single = m.template cast<float>();
  visit_params(single.config(), single.mode(), [&](const ParamInfo& info, const Tensor4<float>& t) {
    f.tensors.push_back({info.name, detail::file_dims(t, info.rank), t.storage()});
  }, single.params());
  return f;
}

template <typename T>
EraNet<T> from_weight_file(const WeightFile& f) {
  if (f.tensors.empty() || f.tensors.front().name != kConfigTensor)
    throw WeightFormatError("missing architecture record '" + std::string(kConfigTensor) + "'",
                            f.tensors.empty() ? 13 : f.tensors.front().offset);
  const ModelConfig cfg = detail::decode_config(f.tensors.front());
  std::map<std::string, const RawTensor*> by_name;
  for (std::size_t i = 1; i < f.tensors.size(); ++i) {
    const auto& t = f.tensors[i];
    if (!by_name.emplace(t.name, &t).second) throw WeightFormatError("duplicate tensor '" + t.name + "'", t.offset);
  }
  auto params = make_net<T>(cfg, f.mode);
  std::size_t used = 0;
  visit_params(cfg, f.mode, [&](const ParamInfo& info, Tensor4<T>& dst) {
    auto it = by_name.find(info.name);
    if (it == by_name.end()) throw WeightFormatError("missing tensor '" + info.name + "'", f.tensors.back().offset);
    const RawTensor& src = *it->second;
    const Tensor4<float> probe(dst.shape());
    if (src.dims != detail::file_dims(probe, info.rank))
      throw WeightFormatError("tensor '" + info.name + "' has the wrong shape for this architecture (expected " +
                                  dst.shape().str() + ")",
                              src.offset);
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(src.data[i]);
    if (!info.trainable && dst != bank_tensor<T>(cfg.krm_layout().bank()))
      throw WeightFormatError("tensor '" + info.name + "' does not hold the configured edge operator bank", src.offset);
    ++used;
  }, params);
  if (used != by_name.size()) {
    for (std::size_t i = 1; i < f.tensors.size(); ++i) {
      bool known = false;
      visit_params(cfg, f.mode, [&](const ParamInfo& info, const Tensor4<T>&) { known = known || info.name == f.tensors[i].name; },
                   params);
      if (!known) throw WeightFormatError("unexpected tensor '" + f.tensors[i].name + "'", f.tensors[i].offset);
    }
  }
  return EraNet<T>(cfg, f.mode, std::move(params));
}

template <typename T>
std::vector<std::uint8_t> save_weights(const EraNet<T>& m) {
  return encode_weights(to_weight_file(m));
}

template <typename T>
EraNet<T> load_weights(std::span<const std::uint8_t> bytes) {
  return from_weight_file<T>(decode_weights(bytes));
}

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error("cannot open '" + p.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Writes next to the destination, then renames over it.
inline void write_file_atomic(const std::filesystem::path& p, std::span<const std::uint8_t> bytes) {
  auto tmp = p;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write '" + tmp.string() + "'");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("write failed for '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, p);
}

template <typename T>
void save_weights_file(const EraNet<T>& m, const std::filesystem::path& p) {
  write_file_atomic(p, save_weights(m));
}

template <typename T>
EraNet<T> load_weights_file(const std::filesystem::path& p) {
  const auto bytes = read_file_bytes(p);
  return load_weights<T>(bytes);
}

}  // namespace eranet

#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "tdfusion/io/config.hpp"
#include "tdfusion/io/pgm.hpp"
#include "tdfusion/trainer.hpp"

// Binary checkpoint layout, all integers and floats little-endian:
//
//   "TDF1"  u32 version  u32 network_count
//   per network:  u8 kind  u32 entry_count
//     per entry:  str name  u32 rank  u64 dims[rank]  f64 values[numel]
//   u64 epoch  str meta_rng  str fusion_rng  str config_text
//
// where str is a u32 byte length followed by the bytes.

namespace tdfusion::io {

inline constexpr char kCheckpointMagic[4] = {'T', 'D', 'F', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ParamSet fusion{NetworkKind::Fusion};
  ParamSet task{NetworkKind::Task};
  ParamSet lossgen{NetworkKind::LossGen};
  std::uint64_t epoch = 0;
  std::string meta_rng;
  std::string fusion_rng;
  std::string config_text;

  RunConfig config() const { return parse_config(config_text, "checkpoint config"); }
};

inline std::string rng_text(const std::mt19937_64& rng) {
  std::ostringstream ss;
  ss << rng;
  return ss.str();
}

inline Checkpoint make_checkpoint(const TrainState& state, const RunConfig& cfg) {
  return {state.fusion, state.task, state.lossgen, state.epoch, rng_text(state.meta_rng), rng_text(state.fusion_rng),
          to_text(cfg)};
}

namespace detail {

class Writer {
 public:
  void u8(std::uint8_t v) { bytes_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes_ += s;
  }
  void raw(const char* p, std::size_t n) { bytes_.append(p, n); }
  const std::string& bytes() const { return bytes_; }

 private:
  std::string bytes_;
};

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}
  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(bytes_[pos_++]);
  }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(u8()) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(u8()) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw FormatError("checkpoint truncated");
  }
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string serialize(const Checkpoint& ck) {
  detail::Writer w;
  w.raw(kCheckpointMagic, 4);
  w.u32(kCheckpointVersion);
  w.u32(3);
  for (const ParamSet* ps : {&ck.fusion, &ck.task, &ck.lossgen}) {
    w.u8(static_cast<std::uint8_t>(ps->kind()));
    w.u32(static_cast<std::uint32_t>(ps->size()));
    for (const auto& [name, t] : *ps) {
      w.str(name);
      w.u32(static_cast<std::uint32_t>(t.rank()));
      for (std::size_t d : t.shape()) w.u64(d);
      for (double v : t.data()) w.f64(v);
    }
  }
  w.u64(ck.epoch);
  w.str(ck.meta_rng);
  w.str(ck.fusion_rng);
  w.str(ck.config_text);
  return w.bytes();
}

inline Checkpoint deserialize(const std::string& bytes) {
  if (bytes.size() < 4 || bytes.compare(0, 4, kCheckpointMagic, 4) != 0) throw FormatError("not a checkpoint: bad magic");
  detail::Reader r(bytes);
  for (int i = 0; i < 4; ++i) r.u8();
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version) + " (expected " +
                      std::to_string(kCheckpointVersion) + ")");
  }
  if (r.u32() != 3) throw FormatError("checkpoint must hold exactly three networks");
  Checkpoint ck;
  for (ParamSet* ps : {&ck.fusion, &ck.task, &ck.lossgen}) {
    const auto kind = static_cast<NetworkKind>(r.u8());
    if (kind != ps->kind()) throw FormatError("checkpoint networks out of order");
    const std::uint32_t entries = r.u32();
    for (std::uint32_t e = 0; e < entries; ++e) {
      std::string name = r.str();
      Shape shape(r.u32());
      for (auto& d : shape) d = r.u64();
      std::vector<double> values(numel(shape));
      for (double& v : values) v = r.f64();
      try {
        ps->add(std::move(name), autodiff::Tensor(std::move(shape), std::move(values)));
      } catch (const std::exception& ex) {
        throw FormatError(std::string("corrupt checkpoint entry: ") + ex.what());
      }
    }
  }
  ck.epoch = r.u64();
  ck.meta_rng = r.str();
  ck.fusion_rng = r.str();
  ck.config_text = r.str();
  if (!r.done()) throw FormatError("trailing bytes after checkpoint");
  return ck;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  const std::string bytes = serialize(ck);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return deserialize(ss.str());
}

/// 64-bit FNV-1a, printed as 16 hex digits.
inline std::string digest(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : bytes) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace tdfusion::io

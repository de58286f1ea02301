// SPDX-License-Identifier: Apache-2.0
//
// Binary model snapshots. Layout, all integers little-endian:
//
//   "TRNN"  version:u32  arch:u8  level:u8  layers:u16  hidden:u32  vocab:u32
//   vocab x { len:u32  utf8 bytes }
//   per tensor { name_len:u32  name  rank:u32  dims:u32 x rank  f64 x prod(dims) }
//
// Tensors appear in LanguageModel::tensors() order. Vectors have rank 1.

#pragma once

#include <bit>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "strnn/training.hpp"

namespace strnn {

inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

namespace detail {

class ByteWriter {
public:
  template <class U>
  void uint(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  void f64(double x) { uint(std::bit_cast<std::uint64_t>(x)); }
  void bytes(std::string_view s) {
    uint(static_cast<std::uint32_t>(s.size()));
    out_.append(s);
  }
  void raw(std::string_view s) { out_.append(s); }
  std::string take() { return std::move(out_); }

private:
  std::string out_;
};

class ByteReader {
public:
  explicit ByteReader(std::string_view in) : in_(in) {}

  template <class U>
  U uint() {
    need(sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<unsigned char>(in_[pos_ + i])) << (8 * i);
    pos_ += sizeof(U);
    return v;
  }
  double f64() { return std::bit_cast<double>(uint<std::uint64_t>()); }
  std::string bytes() {
    const auto n = uint<std::uint32_t>();
    need(n);
    std::string s(in_.substr(pos_, n));
    pos_ += n;
    return s;
  }
  std::string_view raw(std::size_t n) {
    need(n);
    auto s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const noexcept { return pos_ == in_.size(); }

private:
  void need(std::size_t n) const {
    if (in_.size() - pos_ < n) throw CheckpointError("checkpoint: truncated file");
  }
  std::string_view in_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string serialize_checkpoint(const LanguageModel& model) {
  LanguageModel& m = const_cast<LanguageModel&>(model);  // tensors() hands out mutable views; only read here
  detail::ByteWriter w;
  w.raw("TRNN");
  w.uint(kCheckpointVersion);
  w.uint(static_cast<std::uint8_t>(m.arch));
  w.uint(static_cast<std::uint8_t>(m.level()));
  w.uint(static_cast<std::uint16_t>(m.layers.size()));
  w.uint(static_cast<std::uint32_t>(m.hidden));
  w.uint(static_cast<std::uint32_t>(m.vocab.size()));
  for (const auto& s : m.vocab.symbols()) w.bytes(s);
  for (const auto& t : m.tensors()) {
    w.bytes(t.name);
    if (t.is_vector) {
      w.uint(std::uint32_t{1});
      w.uint(static_cast<std::uint32_t>(t.values.size()));
    } else {
      w.uint(std::uint32_t{2});
      w.uint(static_cast<std::uint32_t>(t.rows));
      w.uint(static_cast<std::uint32_t>(t.cols));
    }
    for (double x : t.values) w.f64(x);
  }
  return w.take();
}

/// Rebuilds the model; the header fixes every tensor shape, and any
/// disagreement in name, rank or dims is refused.
inline LanguageModel deserialize_checkpoint(std::string_view bytes) {
  detail::ByteReader r(bytes);
  if (r.raw(4) != "TRNN") throw CheckpointError("checkpoint: bad magic (not a TRNN file)");
  const auto version = r.uint<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw CheckpointError("checkpoint: unsupported version " + std::to_string(version) + " (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  }
  const auto arch = r.uint<std::uint8_t>();
  const auto level = r.uint<std::uint8_t>();
  const auto layers = r.uint<std::uint16_t>();
  const auto hidden = r.uint<std::uint32_t>();
  const auto k = r.uint<std::uint32_t>();
  if (arch > static_cast<std::uint8_t>(CellKind::t_mr)) throw CheckpointError("checkpoint: unknown architecture code");
  if (level > 1) throw CheckpointError("checkpoint: unknown level code");
  if (layers == 0 || hidden == 0 || k == 0) throw CheckpointError("checkpoint: empty model dimensions");
  std::vector<std::string> syms;
  syms.reserve(k);
  for (std::uint32_t i = 0; i < k; ++i) syms.push_back(r.bytes());
  Vocab vocab;
  try {
    vocab = Vocab(static_cast<Level>(level), std::move(syms));
  } catch (const DataError& e) {
    throw CheckpointError(std::string("checkpoint: ") + e.what());
  }
  LanguageModel m = make_model(static_cast<CellKind>(arch), vocab, layers, hidden);
  for (auto& t : m.tensors()) {
    const std::string name = r.bytes();
    if (name != t.name) throw CheckpointError("checkpoint: expected tensor '" + t.name + "', found '" + name + "'");
    const auto rank = r.uint<std::uint32_t>();
    std::vector<std::uint32_t> dims(rank);
    if (rank != 1 && rank != 2) throw CheckpointError("checkpoint: tensor '" + name + "' has rank " + std::to_string(rank));
    for (auto& d : dims) d = r.uint<std::uint32_t>();
    const bool ok = t.is_vector ? (rank == 1 && dims[0] == t.values.size())
                                : (rank == 2 && dims[0] == t.rows && dims[1] == t.cols);
    if (!ok) throw CheckpointError("checkpoint: shape mismatch for tensor '" + name + "'");
    for (double& x : t.values) x = r.f64();
  }
  if (!r.done()) throw CheckpointError("checkpoint: trailing bytes after the last tensor");
  return m;
}

inline void save_checkpoint(const LanguageModel& m, const std::string& path) {
  const std::string bytes = serialize_checkpoint(m);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot write '" + path + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("write failed for '" + path + "'");
}

inline LanguageModel load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open '" + path + "'");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

}  // namespace strnn

// SPDX-License-Identifier: Apache-2.0
//
// Binary checkpoint format, all integers and floats little-endian:
//
//   bytes  "GRUC"
//   u32    format version (currently 1)
//   i32    vocab_size, layers, blocks_per_layer, units_per_block, bptt_window
//   f64    learning_rate
//   u64    seed
//   u32    number of corpus characters n (vocab_size - 1; the unknown id is implicit)
//   n x { u32 code point, f64 frequency }
//   u64    parameter count
//   f32[]  parameters, tensor by tensor in ModelParams::for_each_tensor
//          order, each tensor row-major
//
// Nothing may follow the last parameter.
#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "gruchat/corpus.hpp"
#include "gruchat/error.hpp"
#include "gruchat/grunet.hpp"
#include "gruchat/io.hpp"

namespace gruchat {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

inline constexpr char kCheckpointMagic[4] = {'G', 'R', 'U', 'C'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// A trained model: float32 parameters plus the vocabulary they index.
struct Model {
  ModelParams<float> params;
  Vocabulary vocab;

  const ModelConfig& config() const noexcept { return params.config; }
};

class CheckpointError : public Error {
 public:
  enum class Kind { kBadMagic, kVersionMismatch, kTruncated, kCorrupt };

  CheckpointError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

namespace detail {

class ByteWriter {
 public:
  template <class V>
  void put(V v) {
    char buf[sizeof(V)];
    std::memcpy(buf, &v, sizeof(V));
    bytes_.append(buf, sizeof(V));
  }
  void raw(const char* p, std::size_t n) { bytes_.append(p, n); }
  std::string take() { return std::move(bytes_); }

 private:
  std::string bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(const std::string& bytes) : bytes_(bytes) {}

  template <class V>
  V get() {
    need(sizeof(V));
    V v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(V));
    pos_ += sizeof(V);
    return v;
  }
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw CheckpointError(CheckpointError::Kind::kTruncated, "checkpoint truncated");
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string serialize_checkpoint(const Model& model) {
  const ModelConfig& c = model.params.config;
  if (c.vocab_size != model.vocab.size()) throw InvalidArgument("checkpoint: vocab size does not match config");
  detail::ByteWriter w;
  w.raw(kCheckpointMagic, 4);
  w.put<std::uint32_t>(kCheckpointVersion);
  for (int v : {c.vocab_size, c.layers, c.blocks_per_layer, c.units_per_block, c.bptt_window}) w.put<std::int32_t>(v);
  w.put<double>(c.learning_rate);
  w.put<std::uint64_t>(c.seed);
  const int n = model.vocab.corpus_chars();
  w.put<std::uint32_t>(static_cast<std::uint32_t>(n));
  for (int i = 0; i < n; ++i) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(model.vocab.char_at(i)));
    w.put<double>(model.vocab.freq(i));
  }
  w.put<std::uint64_t>(model.params.parameter_count());
  model.params.for_each_tensor([&](const Mat<float>& m) {
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j) w.put<float>(m(i, j));
  });
  return w.take();
}

inline Model deserialize_checkpoint(const std::string& bytes) {
  using Kind = CheckpointError::Kind;
  detail::ByteReader r(bytes);
  r.need(4);
  if (std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) throw CheckpointError(Kind::kBadMagic, "checkpoint: bad magic");
  r.get<std::uint32_t>();
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw CheckpointError(Kind::kVersionMismatch, "checkpoint: version mismatch (file " + std::to_string(version) +
                                                      ", expected " + std::to_string(kCheckpointVersion) + ")");
  }
  ModelConfig c;
  c.vocab_size = r.get<std::int32_t>();
  c.layers = r.get<std::int32_t>();
  c.blocks_per_layer = r.get<std::int32_t>();
  c.units_per_block = r.get<std::int32_t>();
  c.bptt_window = r.get<std::int32_t>();
  c.learning_rate = r.get<double>();
  c.seed = r.get<std::uint64_t>();
  try {
    c.validate();
  } catch (const InvalidArgument& e) {
    throw CheckpointError(Kind::kCorrupt, std::string("checkpoint: ") + e.what());
  }
  const auto n = r.get<std::uint32_t>();
  if (static_cast<std::int64_t>(n) + 1 != c.vocab_size) throw CheckpointError(Kind::kCorrupt, "checkpoint: vocabulary size mismatch");
  std::vector<char32_t> chars;
  std::vector<double> freq;
  for (std::uint32_t i = 0; i < n; ++i) {
    chars.push_back(static_cast<char32_t>(r.get<std::uint32_t>()));
    freq.push_back(r.get<double>());
  }
  Model model;
  try {
    model.vocab = Vocabulary(std::move(chars), std::move(freq));
  } catch (const InvalidArgument& e) {
    throw CheckpointError(Kind::kCorrupt, std::string("checkpoint: ") + e.what());
  }
  const auto count = r.get<std::uint64_t>();
  if (count != c.parameter_count()) throw CheckpointError(Kind::kCorrupt, "checkpoint: parameter count mismatch");
  r.need(count * sizeof(float));
  ModelParams<float> params = init_params<float>(c);
  params.for_each_tensor([&](Mat<float>& m) {
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = r.get<float>();
  });
  if (r.remaining() != 0) throw CheckpointError(Kind::kCorrupt, "checkpoint: trailing bytes after parameters");
  model.params = std::move(params);
  return model;
}

inline void save_checkpoint(const Model& model, const std::string& path) { write_file_atomic(path, serialize_checkpoint(model)); }

inline Model load_checkpoint(const std::string& path) { return deserialize_checkpoint(read_text_file(path)); }

}  // namespace gruchat

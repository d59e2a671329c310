// SPDX-License-Identifier: Apache-2.0
//
// Character vocabulary, sequence encoding and truncated-BPTT batch tiling.
//
// A corpus is UTF-8 text with one utterance per line; the newline character
// doubles as the end-of-utterance symbol during generation.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "gruchat/error.hpp"
#include "gruchat/utf8.hpp"

namespace gruchat {

/// Placeholder code point for the reserved unknown id; outside Unicode, so it
/// never collides with a corpus character.
inline constexpr char32_t kUnknownChar = 0x110000;
/// What the unknown id decodes to.
inline constexpr char32_t kReplacementChar = 0xFFFD;
inline constexpr char32_t kEndOfUtterance = U'\n';

/// Immutable character <-> id map with corpus unigram frequencies.
///
/// Ids are contiguous. Corpus characters are sorted by code point and take
/// ids 0..n-1; the unknown id is always the last one and has frequency 0.
class Vocabulary {
 public:
  Vocabulary() = default;

  /// `chars` must list the corpus characters (without the unknown marker),
  /// `freq` their relative frequencies. Used by checkpoint loading.
  Vocabulary(std::vector<char32_t> chars, std::vector<double> freq) {
    if (chars.size() != freq.size()) {
      throw InvalidArgument("vocabulary: chars/freq size mismatch");
    }
    chars_ = std::move(chars);
    freq_ = std::move(freq);
    for (std::size_t i = 0; i < chars_.size(); ++i) {
      if (chars_[i] == kUnknownChar || !index_.emplace(chars_[i], static_cast<int>(i)).second) {
        throw InvalidArgument("vocabulary: duplicate or reserved character");
      }
    }
    chars_.push_back(kUnknownChar);
    freq_.push_back(0.0);
  }

  int size() const noexcept { return static_cast<int>(chars_.size()); }
  int unk_id() const noexcept { return size() - 1; }
  /// Number of real corpus characters (size() - 1).
  int corpus_chars() const noexcept { return size() - 1; }

  int id_of(char32_t c) const {
    auto it = index_.find(c);
    return it == index_.end() ? unk_id() : it->second;
  }
  bool contains(char32_t c) const { return index_.count(c) != 0; }

  char32_t char_at(int id) const {
    check_id(id);
    return chars_[static_cast<std::size_t>(id)];
  }
  double freq(int id) const {
    check_id(id);
    return freq_[static_cast<std::size_t>(id)];
  }

  /// Id of the end-of-utterance character, if the corpus contained one.
  std::optional<int> eou_id() const {
    if (!contains(kEndOfUtterance)) return std::nullopt;
    return id_of(kEndOfUtterance);
  }

  const std::vector<char32_t>& chars() const noexcept { return chars_; }
  const std::vector<double>& frequencies() const noexcept { return freq_; }

  std::vector<int> encode(std::string_view text) const {
    std::vector<int> ids;
    for (char32_t c : utf8::decode(text)) ids.push_back(id_of(c));
    return ids;
  }

  std::string decode(std::span<const int> ids) const {
    std::string out;
    for (int id : ids) {
      const char32_t c = char_at(id);
      utf8::append(out, c == kUnknownChar ? kReplacementChar : c);
    }
    return out;
  }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
    return a.chars_ == b.chars_ && a.freq_ == b.freq_;
  }

 private:
  void check_id(int id) const {
    if (id < 0 || id >= size()) {
      throw InvalidArgument("vocabulary: id " + std::to_string(id) + " out of range");
    }
  }

  std::vector<char32_t> chars_{kUnknownChar};
  std::vector<double> freq_{0.0};
  std::unordered_map<char32_t, int> index_;
};

inline Vocabulary build_vocabulary(std::string_view text) {
  if (text.empty()) throw InvalidArgument("empty corpus");
  const std::u32string cps = utf8::decode(text);
  std::map<char32_t, std::size_t> counts;
  for (char32_t c : cps) ++counts[c];
  std::vector<char32_t> chars;
  std::vector<double> freq;
  const double total = static_cast<double>(cps.size());
  for (const auto& [c, n] : counts) {
    chars.push_back(c);
    freq.push_back(static_cast<double>(n) / total);
  }
  return Vocabulary(std::move(chars), std::move(freq));
}

/// Binary vector of length n with a single 1 at `id`.
template <class T = float>
std::vector<T> one_hot(int id, int n) {
  if (n < 1 || id < 0 || id >= n) throw InvalidArgument("one_hot: id out of range");
  std::vector<T> v(static_cast<std::size_t>(n), T(0));
  v[static_cast<std::size_t>(id)] = T(1);
  return v;
}

/// Sum over positions of -freq * ln(freq), using corpus unigram
/// frequencies in place of predicted probabilities. Characters with zero
/// frequency (the unknown id) contribute 0.
inline double corpus_entropy_of(std::span<const int> seq, const Vocabulary& vocab) {
  double h = 0.0;
  for (int id : seq) {
    if (id < 0 || id >= vocab.size()) {
      throw InvalidArgument("corpus_entropy_of: id " + std::to_string(id) + " not in vocabulary");
    }
    const double f = vocab.freq(id);
    if (f > 0.0) h -= f * std::log(f);
  }
  return h;
}

/// One truncated-BPTT slice: inputs[b][t] is predicted into targets[b][t].
struct Batch {
  std::vector<std::vector<int>> inputs;
  std::vector<std::vector<int>> targets;

  int batch_size() const noexcept { return static_cast<int>(inputs.size()); }
  int window() const noexcept { return inputs.empty() ? 0 : static_cast<int>(inputs.front().size()); }
};

/// Splits `ids` into `batch_size` contiguous streams of
/// floor((len-1)/batch_size) predictable positions each, then cuts every
/// stream into consecutive windows. Batch k row b continues batch k-1 row b,
/// so hidden state can be carried from one batch to the next. The ragged
/// tail of each stream is dropped.
inline std::vector<Batch> make_batches(std::span<const int> ids, int window, int batch_size) {
  if (window < 1 || batch_size < 1) throw InvalidArgument("make_batches: window and batch_size must be >= 1");
  const std::size_t stream_len = ids.size() < 2 ? 0 : (ids.size() - 1) / static_cast<std::size_t>(batch_size);
  if (stream_len < static_cast<std::size_t>(window)) {
    throw InvalidArgument("make_batches: corpus shorter than one window");
  }
  const std::size_t n_batches = stream_len / static_cast<std::size_t>(window);
  std::vector<Batch> batches(n_batches);
  for (std::size_t k = 0; k < n_batches; ++k) {
    Batch& batch = batches[k];
    batch.inputs.resize(static_cast<std::size_t>(batch_size));
    batch.targets.resize(static_cast<std::size_t>(batch_size));
    for (std::size_t b = 0; b < static_cast<std::size_t>(batch_size); ++b) {
      const std::size_t start = b * stream_len + k * static_cast<std::size_t>(window);
      batch.inputs[b].assign(ids.begin() + start, ids.begin() + start + window);
      batch.targets[b].assign(ids.begin() + start + 1, ids.begin() + start + 1 + window);
    }
  }
  return batches;
}

inline std::vector<Batch> make_batches(std::string_view text, const Vocabulary& vocab, int window, int batch_size) {
  const std::vector<int> ids = vocab.encode(text);
  return make_batches(std::span<const int>(ids), window, batch_size);
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read file: " + path, path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace gruchat

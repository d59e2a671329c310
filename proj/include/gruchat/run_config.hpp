// SPDX-License-Identifier: Apache-2.0
//
// Experiment settings shared by every subcommand. A config file holds
// "key=value" lines using the long flag names without the leading dashes:
//
//   # comment
//   loss=ent
//   beam-width=2
//   seed-text=how are you
//
// Flags given on the command line are applied after the file.
#pragma once

#include <json.hpp>

#include <charconv>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "gruchat/corpus.hpp"
#include "gruchat/decode.hpp"
#include "gruchat/error.hpp"
#include "gruchat/grunet.hpp"
#include "gruchat/train.hpp"

namespace gruchat {

inline constexpr int kRunConfigFormatVersion = 1;

struct RunConfig {
  // paths
  std::string corpus;
  std::string checkpoint;
  std::string checkpoint_b;
  std::string lexicon;
  std::string embeddings;
  std::string sentiment_corpus;
  std::string out;

  // model and training
  int layers = 2;
  int blocks = 1;
  int units = 128;
  int window = 64;
  int batch = 32;
  double lr = 1e-3;
  int epochs = 1;
  int steps = 0;
  std::uint64_t rng_seed = 0;

  // generation
  ObjectiveKind objective;
  int beam_width = 2;
  int max_len = 500;
  int pairs = 15;
  std::string seed_text;

  // evaluation
  int neighbors = 5;

  ModelConfig model_config(int vocab_size) const {
    ModelConfig c;
    c.vocab_size = vocab_size;
    c.layers = layers;
    c.blocks_per_layer = blocks;
    c.units_per_block = units;
    c.bptt_window = window;
    c.learning_rate = lr;
    c.seed = rng_seed;
    return c;
  }

  TrainOptions train_options() const {
    TrainOptions o;
    o.batch_size = batch;
    o.epochs = epochs;
    o.max_steps = steps;
    return o;
  }

  DecodeOptions decode_options() const { return {objective, beam_width, max_len}; }
};

namespace detail {

template <class Int>
Int parse_int(std::string_view key, std::string_view v) {
  Int x{};
  const auto res = std::from_chars(v.data(), v.data() + v.size(), x);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
    throw InvalidArgument("config: '" + std::string(key) + "' expects an integer, got '" + std::string(v) + "'");
  }
  return x;
}

inline double parse_real(std::string_view key, std::string_view v) {
  double x = 0.0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), x);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size() || !std::isfinite(x)) {
    throw InvalidArgument("config: '" + std::string(key) + "' expects a number, got '" + std::string(v) + "'");
  }
  return x;
}

struct ConfigField {
  std::string_view key;
  std::function<void(RunConfig&, std::string_view)> set;
  std::function<nlohmann::ordered_json(const RunConfig&)> get;
};

template <class M>
ConfigField field(std::string_view key, M RunConfig::*member) {
  ConfigField f;
  f.key = key;
  f.get = [member](const RunConfig& c) { return nlohmann::ordered_json(c.*member); };
  f.set = [key, member](RunConfig& c, std::string_view v) {
    if constexpr (std::is_same_v<M, std::string>) {
      c.*member = std::string(v);
    } else if constexpr (std::is_same_v<M, double>) {
      c.*member = parse_real(key, v);
    } else {
      c.*member = parse_int<M>(key, v);
    }
  };
  return f;
}

inline const std::vector<ConfigField>& config_fields() {
  static const std::vector<ConfigField> fields = [] {
    std::vector<ConfigField> f{
        field("corpus", &RunConfig::corpus),
        field("checkpoint", &RunConfig::checkpoint),
        field("checkpoint-b", &RunConfig::checkpoint_b),
        field("lexicon", &RunConfig::lexicon),
        field("embeddings", &RunConfig::embeddings),
        field("sentiment-corpus", &RunConfig::sentiment_corpus),
        field("out", &RunConfig::out),
        field("layers", &RunConfig::layers),
        field("blocks", &RunConfig::blocks),
        field("units", &RunConfig::units),
        field("window", &RunConfig::window),
        field("batch", &RunConfig::batch),
        field("lr", &RunConfig::lr),
        field("epochs", &RunConfig::epochs),
        field("steps", &RunConfig::steps),
        field("rng-seed", &RunConfig::rng_seed),
    };
    f.push_back({"loss",
                 [](RunConfig& c, std::string_view v) {
                   const auto kind = parse_objective(v);
                   if (!kind) {
                     throw InvalidArgument("unknown loss '" + std::string(v) + "'; valid names: " + std::string(kObjectiveNames));
                   }
                   c.objective.kind = *kind;
                 },
                 [](const RunConfig& c) { return nlohmann::ordered_json(std::string(to_string(c.objective.kind))); }});
    f.push_back({"lambda", [](RunConfig& c, std::string_view v) { c.objective.lambda = parse_real("lambda", v); },
                 [](const RunConfig& c) { return nlohmann::ordered_json(c.objective.lambda); }});
    f.push_back(field("beam-width", &RunConfig::beam_width));
    f.push_back(field("max-len", &RunConfig::max_len));
    f.push_back(field("pairs", &RunConfig::pairs));
    f.push_back(field("seed-text", &RunConfig::seed_text));
    f.push_back(field("neighbors", &RunConfig::neighbors));
    return f;
  }();
  return fields;
}

}  // namespace detail

/// Names accepted by apply_kv, in serialization order.
inline std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& f : detail::config_fields()) out.emplace_back(f.key);
  return out;
}

inline void apply_kv(RunConfig& config, std::string_view key, std::string_view value) {
  for (const auto& f : detail::config_fields()) {
    if (f.key == key) {
      f.set(config, value);
      return;
    }
  }
  throw InvalidArgument("config: unknown key '" + std::string(key) + "'");
}

/// Applies every "key=value" line of `text` to `config`. Whitespace around
/// the key and value is dropped; '#' starts a comment line.
inline void apply_config_text(RunConfig& config, std::string_view text) {
  int line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    auto trim = [](std::string_view s) {
      const auto b = s.find_first_not_of(" \t\r");
      if (b == std::string_view::npos) return std::string_view{};
      return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
    };
    line = trim(line);
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw InvalidArgument("config line " + std::to_string(line_no) + ": expected key=value");
    }
    try {
      apply_kv(config, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const InvalidArgument& e) {
      throw InvalidArgument("config line " + std::to_string(line_no) + ": " + e.what());
    }
  }
}

inline RunConfig load_run_config(const std::string& path) {
  RunConfig c;
  apply_config_text(c, read_text_file(path));
  return c;
}

/// Every setting, in config_keys() order, plus the format version.
inline nlohmann::ordered_json to_json(const RunConfig& config) {
  nlohmann::ordered_json j;
  j["config_format_version"] = kRunConfigFormatVersion;
  for (const auto& f : detail::config_fields()) j[std::string(f.key)] = f.get(config);
  return j;
}

/// Inverse of to_json: the output can be fed back through apply_config_text.
inline std::string to_config_text(const RunConfig& config) {
  std::string out;
  for (const auto& f : detail::config_fields()) {
    const auto v = f.get(config);
    out += std::string(f.key) + "=" + (v.is_string() ? v.get<std::string>() : v.dump()) + "\n";
  }
  return out;
}

}  // namespace gruchat

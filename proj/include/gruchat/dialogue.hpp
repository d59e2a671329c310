// SPDX-License-Identifier: Apache-2.0
//
// Two-agent conversation: the seed is the first question q1, agent A answers
// a_i = R_A(q_i) and agent Q asks q_{i+1} = R_Q(a_i), where R(t) conditions
// the agent's network on t and beam-searches the reply. Every call to R
// starts from a fresh network state.
#pragma once

#include <json.hpp>

#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "gruchat/checkpoint.hpp"
#include "gruchat/decode.hpp"
#include "gruchat/error.hpp"

namespace gruchat {

inline constexpr int kTranscriptFormatVersion = 1;

enum class Agent { kQ, kA };

inline std::string_view to_string(Agent a) { return a == Agent::kQ ? "Q" : "A"; }

struct Response {
  std::string text;  // without the end-of-utterance character
  double score = 0.0;
  bool empty = false;
  bool ended_by_eou = false;
};

/// R(t). An empty `t` or an immediate end-of-utterance yields an empty,
/// flagged response rather than an error.
inline Response respond(const Model& model, const DecodeOptions& options, std::string_view text) {
  Response r;
  if (text.empty()) {
    r.empty = true;
    return r;
  }
  const std::vector<int> prompt = model.vocab.encode(text);
  BeamResult br = beam_search(model, prompt, options);
  r.score = br.score.value;
  r.ended_by_eou = br.ended_by_eou;
  std::vector<int> ids = std::move(br.ids);
  if (br.ended_by_eou) ids.pop_back();
  r.text = model.vocab.decode(ids);
  r.empty = r.text.empty();
  return r;
}

struct Turn {
  int index = 0;  // 1-based position in the transcript
  Agent agent = Agent::kQ;
  std::string text;
  ObjectiveKind objective;
  double score = 0.0;
  bool seed = false;            // the user-supplied q1; not generated
  bool empty_response = false;  // generation produced nothing
};

struct Transcript {
  std::string seed;
  std::vector<Turn> turns;
  std::string model_q;
  std::string model_a;
  /// Snapshot of the run configuration that produced the transcript.
  nlohmann::ordered_json config = nlohmann::ordered_json::object();
  int n_pairs = 0;
  bool terminated_early = false;

  /// <q_i, a_i> pairs in order; a trailing unanswered question is dropped.
  std::vector<std::pair<std::string, std::string>> qa_pairs() const {
    std::vector<std::pair<std::string, std::string>> out;
    for (std::size_t i = 0; i + 1 < turns.size(); i += 2) {
      if (turns[i].agent == Agent::kQ && turns[i + 1].agent == Agent::kA) out.emplace_back(turns[i].text, turns[i + 1].text);
    }
    return out;
  }

  std::vector<std::string> utterances() const {
    std::vector<std::string> out;
    for (const Turn& t : turns) out.push_back(t.text);
    return out;
  }
};

/// Produces 2 * n_pairs turns q1, a1, q2, a2, ... with q1 = seed. Stops
/// early, flagged, after an empty reply.
inline Transcript run_conversation(const Model& model_q, const Model& model_a, std::string_view seed, int n_pairs,
                                   const DecodeOptions& options) {
  if (n_pairs < 1) throw InvalidArgument("run_conversation: n_pairs must be >= 1");
  if (seed.empty()) throw InvalidArgument("run_conversation: empty seed text");
  options.validate();
  Transcript t;
  t.seed = std::string(seed);
  t.n_pairs = n_pairs;
  t.turns.push_back({1, Agent::kQ, t.seed, options.objective, 0.0, true, false});
  while (static_cast<int>(t.turns.size()) < 2 * n_pairs) {
    const Turn& last = t.turns.back();
    const Agent next = last.agent == Agent::kQ ? Agent::kA : Agent::kQ;
    Response r = respond(next == Agent::kA ? model_a : model_q, options, last.text);
    t.turns.push_back({static_cast<int>(t.turns.size()) + 1, next, r.text, options.objective, r.score, false, r.empty});
    if (r.empty) {
      t.terminated_early = true;
      break;
    }
  }
  return t;
}

inline std::string to_jsonl(const Transcript& t) {
  using nlohmann::ordered_json;
  std::string out;
  ordered_json header;
  header["record"] = "header";
  header["format_version"] = kTranscriptFormatVersion;
  header["seed"] = t.seed;
  header["n_pairs"] = t.n_pairs;
  header["models"] = {{"q", t.model_q}, {"a", t.model_a}};
  header["terminated_early"] = t.terminated_early;
  header["config"] = t.config;
  out += header.dump() + "\n";
  for (const Turn& turn : t.turns) {
    ordered_json j;
    j["record"] = "turn";
    j["index"] = turn.index;
    j["agent"] = to_string(turn.agent);
    j["objective"] = to_string(turn.objective.kind);
    j["lambda"] = turn.objective.lambda;
    j["score"] = turn.score;
    j["text"] = turn.text;
    j["seed"] = turn.seed;
    j["empty_response"] = turn.empty_response;
    out += j.dump() + "\n";
  }
  return out;
}

inline Transcript parse_jsonl(std::string_view data) {
  using json = nlohmann::ordered_json;
  Transcript t;
  std::istringstream in{std::string(data)};
  std::string line;
  bool have_header = false;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
      const std::string record = j.at("record").get<std::string>();
      if (record == "header") {
        if (j.at("format_version").get<int>() != kTranscriptFormatVersion) {
          throw InvalidArgument("transcript: unsupported format version");
        }
        t.seed = j.at("seed").get<std::string>();
        t.n_pairs = j.value("n_pairs", 0);
        t.model_q = j.at("models").value("q", "");
        t.model_a = j.at("models").value("a", "");
        t.terminated_early = j.value("terminated_early", false);
        t.config = j.at("config");
        have_header = true;
      } else if (record == "turn") {
        Turn turn;
        turn.index = j.at("index").get<int>();
        const std::string agent = j.at("agent").get<std::string>();
        if (agent != "Q" && agent != "A") throw InvalidArgument("transcript: bad agent '" + agent + "'");
        turn.agent = agent == "Q" ? Agent::kQ : Agent::kA;
        const auto kind = parse_objective(j.at("objective").get<std::string>());
        if (!kind) throw InvalidArgument("transcript: unknown objective");
        turn.objective = {*kind, j.value("lambda", 0.5)};
        turn.score = j.at("score").get<double>();
        turn.text = j.at("text").get<std::string>();
        turn.seed = j.value("seed", false);
        turn.empty_response = j.value("empty_response", false);
        t.turns.push_back(std::move(turn));
      } else {
        throw InvalidArgument("transcript: unknown record type '" + record + "'");
      }
    } catch (const json::exception& e) {
      throw InvalidArgument("transcript line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (!have_header) throw InvalidArgument("transcript: missing header record");
  return t;
}

/// "Q: text" / "A: text" lines preceded by '#' provenance comments.
inline std::string to_pretty(const Transcript& t) {
  std::string out = "# gruchat transcript v" + std::to_string(kTranscriptFormatVersion) + "\n";
  for (const auto& [key, value] : t.config.items()) {
    out += "# " + key + "=" + (value.is_string() ? value.get<std::string>() : value.dump()) + "\n";
  }
  for (const Turn& turn : t.turns) {
    out += std::string(to_string(turn.agent)) + ": " + turn.text;
    if (turn.empty_response) out += "[empty-response]";
    out += "\n";
  }
  if (t.terminated_early) out += "# terminated early after an empty response\n";
  return out;
}

}  // namespace gruchat

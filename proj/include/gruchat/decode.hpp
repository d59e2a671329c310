// SPDX-License-Identifier: Apache-2.0
//
// Beam search over next characters, ranked by one of four objectives:
//
//   NET   log p(T|S)
//   MMI   log p(T|S) - lambda * log p(T)
//   NORM  MMI / min(H_S, H_T), H from the network's realized probabilities
//   ENT   MMI / min(Hc_S, Hc_T), H from corpus character frequencies
//
// S is the prompt and T the partial response. p(T|S) runs the network on
// the prompt first; p(T) runs the same network from the blank state. Both
// streams begin by consuming the start symbol (the end-of-utterance
// character when the vocabulary has one, else the unknown id), which is how
// every utterance after the first is preceded in a line-per-utterance corpus.
// All objectives are maximized.
#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gruchat/checkpoint.hpp"
#include "gruchat/corpus.hpp"
#include "gruchat/error.hpp"
#include "gruchat/grunet.hpp"

namespace gruchat {

enum class Objective { kNet, kMmi, kNorm, kEnt };

inline constexpr std::string_view kObjectiveNames = "net, mmi, norm, ent";

inline std::string_view to_string(Objective o) {
  switch (o) {
    case Objective::kNet: return "net";
    case Objective::kMmi: return "mmi";
    case Objective::kNorm: return "norm";
    case Objective::kEnt: return "ent";
  }
  return "?";
}

inline std::optional<Objective> parse_objective(std::string_view name) {
  for (Objective o : {Objective::kNet, Objective::kMmi, Objective::kNorm, Objective::kEnt}) {
    if (name == to_string(o)) return o;
  }
  return std::nullopt;
}

struct ObjectiveKind {
  Objective kind = Objective::kMmi;
  double lambda = 0.5;

  void validate() const {
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw InvalidArgument("objective: lambda must be finite and >= 0");
  }
};

struct BeamCandidate {
  std::vector<int> ids;
  double logp_cond = 0.0;
  double logp_uncond = 0.0;
  std::vector<double> step_probs_cond;
  std::vector<double> step_probs_uncond;
  NetState<float> cond_state;
  NetState<float> uncond_state;
  bool finished = false;
};

/// Prompt-side quantities shared by every candidate of one search.
struct PromptStats {
  double predicted_entropy = 0.0;  // H_S
  double corpus_entropy = 0.0;     // Hc_S
};

struct Score {
  double value = 0.0;
  double mmi = 0.0;
  /// Denominators used by NORM/ENT (H_S, H_T or their corpus variants).
  double h_prompt = 0.0;
  double h_response = 0.0;
  /// The entropy denominator was zero and the MMI value was used instead.
  bool fallback = false;
};

/// Sum over realized steps of -p ln p.
inline double predicted_entropy(std::span<const double> step_probs) {
  double h = 0.0;
  for (double p : step_probs) {
    if (p > 0.0) h -= p * std::log(p);
  }
  return h;
}

inline double mmi_score(double logp_cond, double logp_uncond, double lambda) { return logp_cond - lambda * logp_uncond; }

/// MMI divided by the smaller entropy; nullopt when that entropy is not
/// positive.
inline std::optional<double> normalized_score(double mmi, double h_prompt, double h_response) {
  const double denom = std::min(h_prompt, h_response);
  if (!(denom > 0.0)) return std::nullopt;
  return mmi / denom;
}

inline Score score(const BeamCandidate& c, const ObjectiveKind& objective, const Vocabulary& vocab, const PromptStats& prompt) {
  if (c.ids.empty()) throw InvalidArgument("score: candidate has no generated characters");
  Score s;
  s.mmi = mmi_score(c.logp_cond, c.logp_uncond, objective.lambda);
  switch (objective.kind) {
    case Objective::kNet:
      s.value = c.logp_cond;
      return s;
    case Objective::kMmi:
      s.value = s.mmi;
      return s;
    case Objective::kNorm:
      s.h_prompt = prompt.predicted_entropy;
      s.h_response = predicted_entropy(c.step_probs_cond);
      break;
    case Objective::kEnt:
      s.h_prompt = prompt.corpus_entropy;
      s.h_response = corpus_entropy_of(c.ids, vocab);
      break;
  }
  if (auto v = normalized_score(s.mmi, s.h_prompt, s.h_response)) {
    s.value = *v;
  } else {
    s.value = s.mmi;
    s.fallback = true;
  }
  return s;
}

struct DecodeOptions {
  ObjectiveKind objective;
  int width = 2;
  int max_len = 500;

  void validate() const {
    if (width < 1) throw InvalidArgument("beam width must be >= 1");
    if (max_len < 1) throw InvalidArgument("max_len must be >= 1");
    objective.validate();
  }
};

/// Every candidate scored during a search, for inspection and testing.
struct BeamTrace {
  struct Entry {
    int step = 0;
    std::vector<int> ids;
    double logp_cond = 0.0;
    double logp_uncond = 0.0;
    Score score;
    bool kept = false;
    bool finished = false;
  };
  std::vector<Entry> entries;
  /// Ids of the candidates kept after pruning, per step, in rank order.
  std::vector<std::vector<std::vector<int>>> beams;
  PromptStats prompt;
};

struct BeamResult {
  std::vector<int> ids;  // includes the end-of-utterance id when one was generated
  Score score;
  bool ended_by_eou = false;
  /// Number of scoring fallbacks over the whole search.
  int fallbacks = 0;
};

/// Ranking used both for pruning and for picking the final answer: higher
/// score first, then lexicographically smaller ids (lower character id,
/// then shorter sequence).
inline bool ranks_before(double score_a, const std::vector<int>& ids_a, double score_b, const std::vector<int>& ids_b) {
  if (score_a != score_b) return score_a > score_b;
  return std::lexicographical_compare(ids_a.begin(), ids_a.end(), ids_b.begin(), ids_b.end());
}

inline int start_symbol(const Vocabulary& vocab) { return vocab.eou_id().value_or(vocab.unk_id()); }

/// The `k` most probable ids (ties to the lower id), never the unknown id.
inline std::vector<int> top_ids(const Vec<float>& probs, int k, int unk_id) {
  std::vector<int> ids;
  for (int i = 0; i < static_cast<int>(probs.size()); ++i)
    if (i != unk_id) ids.push_back(i);
  const auto n = std::min<std::size_t>(static_cast<std::size_t>(k), ids.size());
  std::partial_sort(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n), ids.end(),
                    [&](int a, int b) { return probs(a) != probs(b) ? probs(a) > probs(b) : a < b; });
  ids.resize(n);
  return ids;
}

namespace detail {

inline double floored_log(double p) { return std::log(std::max(p, kProbFloor)); }

struct LiveCandidate {
  BeamCandidate cand;
  Vec<float> next_cond;
  Vec<float> next_uncond;
};

}  // namespace detail

/// Conditions on `prompt`, then searches for the best-scoring response.
///
/// Each step expands every live candidate with its `width` most probable
/// next characters, scores the whole pool and keeps the best `width`.
/// A candidate finishes on the end-of-utterance character or at `max_len`;
/// the search ends when no live candidate remains.
inline BeamResult beam_search(const Model& model, std::span<const int> prompt, const DecodeOptions& options,
                              BeamTrace* trace = nullptr) {
  options.validate();
  if (prompt.empty()) throw InvalidArgument("beam_search: empty prompt");
  const ModelParams<float>& params = model.params;
  const Vocabulary& vocab = model.vocab;
  const int start = start_symbol(vocab);
  const std::optional<int> eou = vocab.eou_id();
  for (int id : prompt) {
    if (id < 0 || id >= vocab.size()) throw InvalidArgument("beam_search: prompt id out of range");
  }

  // Conditioning pass: start symbol, prompt, then the prompt's end symbol.
  PromptStats prompt_stats;
  NetState<float> cond_state = NetState<float>::zeros(params.config);
  Vec<float> next = advance<float>(start, cond_state, params);
  std::vector<double> prompt_probs;
  for (int id : prompt) {
    prompt_probs.push_back(static_cast<double>(next(id)));
    next = advance<float>(id, cond_state, params);
  }
  if (eou) next = advance<float>(*eou, cond_state, params);
  prompt_stats.predicted_entropy = predicted_entropy(prompt_probs);
  prompt_stats.corpus_entropy = corpus_entropy_of(prompt, vocab);

  NetState<float> uncond_state = NetState<float>::zeros(params.config);
  Vec<float> next_uncond = advance<float>(start, uncond_state, params);

  std::vector<detail::LiveCandidate> live;
  live.push_back({BeamCandidate{{}, 0.0, 0.0, {}, {}, std::move(cond_state), std::move(uncond_state), false},
                  std::move(next), std::move(next_uncond)});
  if (trace) trace->prompt = prompt_stats;

  struct Pooled {
    std::size_t parent;
    int id;
    BeamCandidate cand;  // states not yet advanced past `id`
    Score score;
  };
  std::vector<Pooled> finished;
  BeamResult result;
  for (int step = 0; !live.empty(); ++step) {
    std::vector<Pooled> pool;
    for (std::size_t i = 0; i < live.size(); ++i) {
      const auto& lc = live[i];
      for (int id : top_ids(lc.next_cond, options.width, vocab.unk_id())) {
        BeamCandidate c;
        c.ids = lc.cand.ids;
        c.ids.push_back(id);
        const double pc = static_cast<double>(lc.next_cond(id));
        const double pu = static_cast<double>(lc.next_uncond(id));
        c.step_probs_cond = lc.cand.step_probs_cond;
        c.step_probs_cond.push_back(pc);
        c.step_probs_uncond = lc.cand.step_probs_uncond;
        c.step_probs_uncond.push_back(pu);
        c.logp_cond = lc.cand.logp_cond + detail::floored_log(pc);
        c.logp_uncond = lc.cand.logp_uncond + detail::floored_log(pu);
        c.finished = (eou && id == *eou) || static_cast<int>(c.ids.size()) >= options.max_len;
        Score s = score(c, options.objective, vocab, prompt_stats);
        if (s.fallback) ++result.fallbacks;
        pool.push_back({i, id, std::move(c), s});
      }
    }
    std::vector<std::size_t> order(pool.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return ranks_before(pool[a].score.value, pool[a].cand.ids, pool[b].score.value, pool[b].cand.ids);
    });
    const std::size_t keep = std::min(order.size(), static_cast<std::size_t>(options.width));

    if (trace) {
      trace->beams.emplace_back();
      for (std::size_t r = 0; r < order.size(); ++r) {
        const Pooled& p = pool[order[r]];
        trace->entries.push_back({step, p.cand.ids, p.cand.logp_cond, p.cand.logp_uncond, p.score, r < keep, p.cand.finished});
        if (r < keep) trace->beams.back().push_back(p.cand.ids);
      }
    }

    std::vector<detail::LiveCandidate> next_live;
    for (std::size_t r = 0; r < keep; ++r) {
      Pooled& p = pool[order[r]];
      if (p.cand.finished) {
        finished.push_back(std::move(p));
        continue;
      }
      p.cand.cond_state = live[p.parent].cand.cond_state;
      p.cand.uncond_state = live[p.parent].cand.uncond_state;
      Vec<float> nc = advance<float>(p.id, p.cand.cond_state, params);
      Vec<float> nu = advance<float>(p.id, p.cand.uncond_state, params);
      next_live.push_back({std::move(p.cand), std::move(nc), std::move(nu)});
    }
    live = std::move(next_live);
  }

  const Pooled* best = nullptr;
  for (const Pooled& f : finished) {
    if (!best || ranks_before(f.score.value, f.cand.ids, best->score.value, best->cand.ids)) best = &f;
  }
  // The pool is never empty (vocabularies always have a non-unknown id), so
  // at least one candidate finishes.
  result.ids = best->cand.ids;
  result.score = best->score;
  result.ended_by_eou = eou && !result.ids.empty() && result.ids.back() == *eou;
  return result;
}

}  // namespace gruchat

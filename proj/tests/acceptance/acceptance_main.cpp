// SPDX-License-Identifier: Apache-2.0
//
// Release acceptance checks. Prints one PASS/FAIL line per criterion and
// exits non-zero when a gating criterion fails.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "../beam_oracle.hpp"
#include "../gradient_check.hpp"
#include "../metric_fixtures.hpp"
#include "gruchat/checkpoint.hpp"
#include "gruchat/decode.hpp"
#include "gruchat/dialogue.hpp"
#include "gruchat/metrics.hpp"
#include "gruchat/run_config.hpp"
#include "gruchat/train.hpp"

namespace {

using namespace gruchat;
using testing_util::OracleObjective;

const std::string kData = GRUCHAT_DATA_DIR;

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  int id;
  std::string name;
  bool gating;
  double time_limit_s;  // 0 for none
  std::function<Outcome()> run;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

Model random_model(const std::string& text, std::uint64_t seed, int units, float gain) {
  Model m;
  m.vocab = build_vocabulary(text);
  ModelConfig c;
  c.vocab_size = m.vocab.size();
  c.layers = 1;
  c.units_per_block = units;
  c.seed = seed;
  m.params = init_params<float>(c);
  m.params.for_each_tensor([&](Mat<float>& t) { t *= gain; });
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  m.params.b_out = m.params.b_out.unaryExpr([&](float) { return u(gen); });
  return m;
}

Outcome gradient_oracle() {
  ModelConfig c;
  c.vocab_size = 5;
  c.layers = 1;
  c.blocks_per_layer = 1;
  c.units_per_block = 8;
  c.bptt_window = 6;
  c.seed = 11;
  double worst = 0.0;
  std::size_t checked = 0;
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto r = testing_util::gradient_check(c, 2, 6, 1e-4, seed);
    worst = std::max(worst, r.max_rel_error);
    checked += r.checked;
  }
  return {worst < 1e-4, std::to_string(checked) + " components, max rel error " + fmt("%.2e", worst) + " (< 1e-4)"};
}

Outcome learnability() {
  std::string text;
  while (text.size() < 1024) text += "ab";
  const Vocabulary v = build_vocabulary(text);
  ModelConfig c;
  c.vocab_size = v.size();
  c.layers = 1;
  c.units_per_block = 16;
  c.bptt_window = 16;
  c.learning_rate = 1e-3;
  c.seed = 7;
  TrainOptions o;
  o.batch_size = 4;
  o.epochs = 1000;
  o.max_steps = 500;
  const auto r = train<float>(text, v, c, o);
  const double last = r.loss_history.back();
  return {r.loss_history.size() <= 500 && last < 0.05,
          std::to_string(r.loss_history.size()) + " updates, final cross-entropy " + fmt("%.4f", last) + " nats/char (< 0.05)"};
}

Outcome beam_equivalence() {
  const std::pair<Objective, OracleObjective> objectives[] = {{Objective::kNet, OracleObjective::kNet},
                                                               {Objective::kMmi, OracleObjective::kMmi},
                                                               {Objective::kNorm, OracleObjective::kNorm},
                                                               {Objective::kEnt, OracleObjective::kEnt}};
  int cases = 0, matched = 0, narrow_matched = 0;
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    const Model m = random_model("aab\nab\nbba\n", 200 + seed, 6, 3.0f);  // {\n, a, b} + unknown
    if (m.vocab.size() > 4) return {false, "toy vocabulary larger than 4"};
    const int branching = m.vocab.size() - 1;
    for (const char* p : {"ab", "bba", "a\nb"}) {
      const std::vector<int> prompt = m.vocab.encode(p);
      for (int max_len : {4, 5}) {
        int cover = 1;
        for (int k = 1; k < max_len; ++k) cover *= branching;
        for (auto [kind, oracle_kind] : objectives) {
          const auto best = testing_util::exhaustive_best(m, prompt, oracle_kind, 0.5, max_len);
          const BeamResult wide = beam_search(m, prompt, {{kind, 0.5}, cover, max_len});
          const BeamResult narrow = beam_search(m, prompt, {{kind, 0.5}, branching, max_len});
          ++cases;
          matched += wide.ids == best.ids && std::abs(wide.score.value - best.score) <= 1e-9;
          narrow_matched += std::abs(narrow.score.value - best.score) <= 1e-9;
        }
      }
    }
  }
  return {matched == cases, std::to_string(matched) + "/" + std::to_string(cases) +
                                " optimal with width covering every live prefix; informative: " + std::to_string(narrow_matched) + "/" +
                                std::to_string(cases) + " optimal at width = branching factor"};
}

Outcome objective_degeneracies() {
  const Model m = random_model("hello there\nhow are you\nwhat is that\n", 5, 12, 2.0f);
  std::mt19937_64 gen(99);
  int identical = 0, prompts = 0;
  std::size_t norm_checked = 0, fallbacks = 0;
  double worst = 0.0;
  for (int trial = 0; trial < 120; ++trial) {
    std::vector<int> prompt(1 + gen() % 12);
    for (int& id : prompt) id = static_cast<int>(gen() % static_cast<std::uint64_t>(m.vocab.size()));
    BeamTrace tn, tm, tz;
    const auto rn = beam_search(m, prompt, {{Objective::kNet, 0.5}, 2, 40}, &tn);
    const auto rm = beam_search(m, prompt, {{Objective::kMmi, 0.0}, 2, 40}, &tm);
    ++prompts;
    identical += rn.ids == rm.ids && rn.score.value == rm.score.value && tn.beams == tm.beams;
    beam_search(m, prompt, {{Objective::kNorm, 0.5}, 2, 40}, &tz);
    for (const auto& e : tz.entries) {
      const double denom = std::min(tz.prompt.predicted_entropy, e.score.h_response);
      const double mmi = e.logp_cond - 0.5 * e.logp_uncond;
      const double expect = denom > 0.0 ? mmi / denom : mmi;
      if (!(denom > 0.0)) ++fallbacks;
      worst = std::max(worst, std::abs(e.score.value - expect));
      ++norm_checked;
    }
  }
  return {identical == prompts && worst <= 1e-9,
          "MMI(lambda=0) == NET on " + std::to_string(identical) + "/" + std::to_string(prompts) + " prompts; NORM on " +
              std::to_string(norm_checked) + " candidates, max deviation " + fmt("%.1e", worst) + " (" + std::to_string(fallbacks) +
              " zero-denominator fallbacks)"};
}

Outcome entropy_analytics() {
  const std::vector<double> p{0.5, 0.25};
  const double h = predicted_entropy(p);
  const Vocabulary v = build_vocabulary("abababab");
  const std::vector<int> ids = v.encode("ab");
  const double hc = corpus_entropy_of(ids, v);
  const double e1 = std::abs(h - std::log(2.0)), e2 = std::abs(hc - std::log(2.0));
  return {e1 <= 1e-12 && e2 <= 1e-12, "|H(0.5,0.25) - ln2| = " + fmt("%.1e", e1) + ", |Hc(ab) - ln2| = " + fmt("%.1e", e2)};
}

Outcome metric_properties() {
  const MetricResources data{SemanticLexicon::load(kData + "/lexicon.tsv"), EmbeddingTable::load(kData + "/embeddings.txt"),
                             SentimentModel::load(kData + "/sentiment.tsv")};
  std::mt19937_64 rng(2718);
  int pairs = 0, violations = 0;
  std::size_t defined = 0;
  std::string first_violation;
  for (const MetricResources* r : {&testing_util::toy_resources(), &data}) {
    for (int i = 0; i < 1000; ++i) {
      const std::string s1 = testing_util::random_sentence(rng), s2 = testing_util::random_sentence(rng);
      const int n = static_cast<int>(rng() % 6);
      const auto d12 = pair_distances(s1, s2, *r, n), d21 = pair_distances(s2, s1, *r, n), d11 = pair_distances(s1, s1, *r, n);
      bool ok = embedding_distance(s1, s2, r->embeddings, 0) == testing_util::token_jaccard_distance(s1, s2, r->embeddings);
      for (std::size_t k = 0; k < 4; ++k) {
        ok = ok && d12[k] == d21[k];
        if (d12[k]) {
          ++defined;
          ok = ok && *d12[k] >= 0.0 && *d12[k] <= 1.0 && !std::isnan(*d12[k]);
        }
        if (d11[k]) ok = ok && *d11[k] == 0.0;
      }
      ++pairs;
      if (!ok && violations++ == 0) first_violation = "'" + s1 + "' / '" + s2 + "'";
    }
  }
  std::string detail = std::to_string(pairs) + " random pairs, " + std::to_string(defined) + " defined distances, " +
                       std::to_string(violations) + " violations";
  if (violations > 0) detail += ", first: " + first_violation;
  return {violations == 0, detail};
}

struct DeskModel {
  Model model;
  double train_seconds = 0.0;
  double final_loss = 0.0;
};

const DeskModel& desk_model() {
  static const DeskModel d = [] {
    DeskModel out;
    const auto t0 = std::chrono::steady_clock::now();
    const std::string text = read_text_file(kData + "/dialogue.txt");
    out.model.vocab = build_vocabulary(text);
    RunConfig rc;
    apply_config_text(rc, "layers=2\nunits=96\nwindow=48\nbatch=16\nlr=0.003\nepochs=1000\nsteps=1500\nrng-seed=1\n");
    const auto r = train<float>(text, out.model.vocab, rc.model_config(out.model.vocab.size()), rc.train_options());
    out.model.params = r.params;
    out.final_loss = r.loss_history.back();
    out.train_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return out;
  }();
  return d;
}

Outcome protocol_reproduction() {
  const DeskModel& d = desk_model();
  const RunConfig rc;  // defaults
  Transcript a = run_conversation(d.model, d.model, "how are you", rc.pairs, rc.decode_options());
  Transcript b = run_conversation(d.model, d.model, "how are you", rc.pairs, rc.decode_options());
  a.config = b.config = to_json(rc);
  bool alternating = true;
  for (std::size_t i = 0; i < a.turns.size(); ++i) alternating = alternating && a.turns[i].agent == (i % 2 ? Agent::kA : Agent::kQ);
  const bool identical = to_jsonl(a) == to_jsonl(b);
  const bool ok = rc.beam_width == 2 && rc.objective.lambda == 0.5 && a.turns.size() == 30 && alternating && identical &&
                  !a.terminated_early && d.train_seconds <= 300.0;
  return {ok, std::to_string(a.turns.size()) + " turns, width " + std::to_string(rc.beam_width) + ", lambda " +
                  fmt("%.1f", rc.objective.lambda) + ", reruns " + (identical ? "byte-identical" : "DIFFER") + "; model trained in " +
                  fmt("%.1f", d.train_seconds) + " s (<= 300), final loss " + fmt("%.3f", d.final_loss)};
}

Outcome distance_trend() {
  const DeskModel& d = desk_model();
  const MetricResources res{SemanticLexicon::load(kData + "/lexicon.tsv"), EmbeddingTable::load(kData + "/embeddings.txt"),
                            SentimentModel::load(kData + "/sentiment.tsv")};
  std::ostringstream detail;
  double cos_mmi = 0, emb_mmi = 0, cos_ent = 0, emb_ent = 0;
  for (auto kind : {Objective::kNet, Objective::kMmi, Objective::kNorm, Objective::kEnt}) {
    Transcript pooled;
    for (const char* seed : {"how are you", "do you like cats"}) {
      const Transcript t = run_conversation(d.model, d.model, seed, 15, {{kind, 0.5}, 2, 500});
      pooled.turns.insert(pooled.turns.end(), t.turns.begin(), t.turns.end());
    }
    const MetricReport r = evaluate(pooled, res, 5);
    const double emb = r.means[1].value_or(NAN), cos = r.means[2].value_or(NAN);
    detail << to_string(kind) << " emb " << fmt("%.3f", emb) << " cos " << fmt("%.3f", cos) << " (" << r.pairs.size() << " pairs); ";
    if (kind == Objective::kMmi) cos_mmi = cos, emb_mmi = emb;
    if (kind == Objective::kEnt) cos_ent = cos, emb_ent = emb;
  }
  return {cos_ent >= cos_mmi && emb_ent >= emb_mmi, detail.str() + "ENT >= MMI on both required"};
}

Outcome checkpoint_round_trip() {
  std::mt19937_64 gen(31337);
  int identical = 0;
  const int models = 12;
  std::string sample;
  for (int i = 0; i < models; ++i) {
    std::string text = "Hi!\n\xC3\xA9t\xC3\xA9\n";
    for (int k = 0; k < 40; ++k) text.push_back(static_cast<char>('a' + gen() % 26));
    Model m;
    m.vocab = build_vocabulary(text);
    ModelConfig c;
    c.vocab_size = m.vocab.size();
    c.layers = 1 + static_cast<int>(gen() % 3);
    c.blocks_per_layer = 1 + static_cast<int>(gen() % 3);
    c.units_per_block = 1 + static_cast<int>(gen() % 12);
    c.seed = gen();
    m.params = init_params<float>(c);
    std::normal_distribution<float> nd(0.0f, 2.0f);
    m.params.for_each_tensor([&](Mat<float>& t) { t = t.unaryExpr([&](float) { return nd(gen); }); });
    const std::string bytes = serialize_checkpoint(m);
    const Model back = deserialize_checkpoint(bytes);
    identical += back.params == m.params && back.vocab == m.vocab && serialize_checkpoint(back) == bytes;
    if (i == 0) sample = bytes;
  }
  auto kind_of = [](const std::string& bytes) -> int {
    try {
      deserialize_checkpoint(bytes);
    } catch (const CheckpointError& e) {
      return static_cast<int>(e.kind());
    }
    return -1;
  };
  std::string bad_magic = sample, bad_version = sample;
  bad_magic[0] = 'X';
  bad_version[4] = 2;
  const int k_magic = kind_of(bad_magic), k_version = kind_of(bad_version), k_trunc = kind_of(sample.substr(0, sample.size() - 1)),
            k_corrupt = kind_of(sample + '\0');
  const bool distinct = k_magic == static_cast<int>(CheckpointError::Kind::kBadMagic) &&
                        k_version == static_cast<int>(CheckpointError::Kind::kVersionMismatch) &&
                        k_trunc == static_cast<int>(CheckpointError::Kind::kTruncated) &&
                        k_corrupt == static_cast<int>(CheckpointError::Kind::kCorrupt);
  return {identical == models && distinct, std::to_string(identical) + "/" + std::to_string(models) +
                                               " bitwise round trips; bad magic, version, truncation and trailing bytes " +
                                               (distinct ? "rejected with distinct errors" : "NOT distinguished")};
}

}  // namespace

int main() {
  const std::vector<Criterion> criteria = {
      {1, "gradient oracle", true, 10.0, gradient_oracle},
      {2, "learnability", true, 60.0, learnability},
      {3, "beam / exhaustive equivalence", true, 30.0, beam_equivalence},
      {4, "objective degeneracies", true, 0.0, objective_degeneracies},
      {5, "entropy analytics", true, 0.0, entropy_analytics},
      {6, "metric properties", true, 0.0, metric_properties},
      {7, "protocol reproduction", true, 0.0, protocol_reproduction},
      {8, "ENT vs MMI distance trend", false, 0.0, distance_trend},
      {9, "checkpoint round trip", true, 0.0, checkpoint_round_trip},
  };
  int gating_failures = 0;
  for (const Criterion& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (c.time_limit_s > 0.0 && secs >= c.time_limit_s) {
      o.pass = false;
      o.detail += "; over the " + fmt("%.0f", c.time_limit_s) + " s limit";
    }
    if (!o.pass && c.gating) ++gating_failures;
    std::printf("%s [%d] %s%s: %s (%.2f s)\n", o.pass ? "PASS" : "FAIL", c.id, c.name.c_str(), c.gating ? "" : " (informative)",
                o.detail.c_str(), secs);
    std::fflush(stdout);
  }
  std::printf("%s: %d gating failure(s)\n", gating_failures == 0 ? "ACCEPTED" : "REJECTED", gating_failures);
  return gating_failures == 0 ? 0 : 1;
}

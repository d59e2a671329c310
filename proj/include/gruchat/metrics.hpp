// SPDX-License-Identifier: Apache-2.0
//
// Sentence-pair distances and transcript statistics.
//
// All four distances lie in [0, 1] with 0 meaning "same" and 1 "unrelated";
// a distance that cannot be computed (no usable words) is std::nullopt and
// never NaN.
#pragma once

#include <json.hpp>

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <iomanip>
#include <map>
#include <numbers>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "gruchat/corpus.hpp"
#include "gruchat/dialogue.hpp"
#include "gruchat/error.hpp"
#include "gruchat/grunet.hpp"

namespace gruchat {

using Distance = std::optional<double>;

/// Lowercases ASCII letters and splits on every run of characters that are
/// not ASCII letters or digits. Non-ASCII bytes count as word characters.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> words;
  std::string cur;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (c >= 0x80 || std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      words.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) words.push_back(std::move(cur));
  return words;
}

namespace detail {

inline std::vector<std::string> split_lines(std::string_view data) {
  std::vector<std::string> lines;
  std::string cur;
  for (char c : data) {
    if (c == '\n') {
      if (!cur.empty() && cur.back() == '\r') cur.pop_back();
      lines.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) lines.push_back(std::move(cur));
  return lines;
}

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline std::string lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

template <class Set>
double jaccard_distance(const Set& a, const Set& b) {
  std::size_t inter = 0;
  for (const auto& x : a) inter += b.count(x);
  const std::size_t uni = a.size() + b.size() - inter;
  return 1.0 - static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace detail

/// lemma -> synonyms and lemmas, every entry containing the lemma itself.
class SemanticLexicon {
 public:
  SemanticLexicon() = default;

  /// Lines of "lemma<TAB>syn1,syn2,...". Blank lines and lines starting
  /// with '#' are skipped; repeated lemmas merge.
  static SemanticLexicon parse(std::string_view data) {
    SemanticLexicon lex;
    int line_no = 0;
    for (const std::string& line : detail::split_lines(data)) {
      ++line_no;
      if (detail::trim(line).empty() || line[0] == '#') continue;
      const auto tab = line.find('\t');
      if (tab == std::string::npos) throw InvalidArgument("lexicon line " + std::to_string(line_no) + ": missing TAB");
      const std::string lemma = detail::lower(detail::trim(std::string_view(line).substr(0, tab)));
      if (lemma.empty()) throw InvalidArgument("lexicon line " + std::to_string(line_no) + ": empty lemma");
      std::set<std::string>& syns = lex.entries_[lemma];
      syns.insert(lemma);
      std::string_view rest = std::string_view(line).substr(tab + 1);
      while (!rest.empty()) {
        const auto comma = rest.find(',');
        const std::string syn = detail::lower(detail::trim(rest.substr(0, comma)));
        if (!syn.empty()) syns.insert(syn);
        if (comma == std::string_view::npos) break;
        rest.remove_prefix(comma + 1);
      }
    }
    return lex;
  }

  static SemanticLexicon load(const std::string& path) { return parse(read_text_file(path)); }

  void add(const std::string& lemma, std::initializer_list<std::string> synonyms) {
    auto& syns = entries_[detail::lower(lemma)];
    syns.insert(detail::lower(lemma));
    for (const auto& s : synonyms) syns.insert(detail::lower(s));
  }

  /// The word's synonym set, or just the word when it has no entry.
  std::set<std::string> expand(const std::string& word) const {
    auto it = entries_.find(word);
    if (it == entries_.end()) return {word};
    return it->second;
  }

  std::size_t size() const noexcept { return entries_.size(); }

 private:
  std::map<std::string, std::set<std::string>> entries_;
};

/// Word vectors in the common text format "word v1 ... vd". A leading
/// "count dim" header line is accepted and skipped.
class EmbeddingTable {
 public:
  EmbeddingTable() = default;

  static EmbeddingTable parse(std::string_view data) {
    EmbeddingTable t;
    int line_no = 0;
    std::vector<std::vector<double>> rows;
    for (const std::string& line : detail::split_lines(data)) {
      ++line_no;
      std::istringstream fields(line);
      std::vector<std::string> parts;
      for (std::string f; fields >> f;) parts.push_back(std::move(f));
      if (parts.empty()) continue;
      if (line_no == 1 && parts.size() == 2 && is_integer(parts[0]) && is_integer(parts[1])) continue;
      if (parts.size() < 2) throw InvalidArgument("embedding line " + std::to_string(line_no) + ": no vector");
      std::vector<double> v;
      for (std::size_t i = 1; i < parts.size(); ++i) {
        double x = 0.0;
        const auto* b = parts[i].data();
        const auto res = std::from_chars(b, b + parts[i].size(), x);
        if (res.ec != std::errc() || res.ptr != b + parts[i].size()) {
          throw InvalidArgument("embedding line " + std::to_string(line_no) + ": bad number '" + parts[i] + "'");
        }
        v.push_back(x);
      }
      if (t.dim_ == 0) t.dim_ = static_cast<int>(v.size());
      if (static_cast<int>(v.size()) != t.dim_) {
        throw InvalidArgument("embedding line " + std::to_string(line_no) + ": expected " + std::to_string(t.dim_) + " values");
      }
      if (!t.index_.emplace(parts[0], static_cast<int>(t.words_.size())).second) {
        throw InvalidArgument("embedding line " + std::to_string(line_no) + ": duplicate word '" + parts[0] + "'");
      }
      t.words_.push_back(parts[0]);
      rows.push_back(std::move(v));
    }
    t.vectors_.resize(static_cast<Eigen::Index>(rows.size()), t.dim_);
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (int j = 0; j < t.dim_; ++j) t.vectors_(static_cast<Eigen::Index>(i), j) = rows[i][static_cast<std::size_t>(j)];
    t.norms_ = t.vectors_.rowwise().norm();
    return t;
  }

  static EmbeddingTable load(const std::string& path) { return parse(read_text_file(path)); }

  int dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return words_.size(); }
  bool contains(const std::string& w) const { return index_.count(w) != 0; }
  const std::vector<std::string>& words() const noexcept { return words_; }

  Vec<double> vector(const std::string& w) const { return vectors_.row(index_.at(w)).transpose(); }

  /// The n words most cosine-similar to `w` (excluding `w`), ties broken by
  /// the word itself. Zero vectors have similarity 0 to everything.
  std::vector<std::string> nearest(const std::string& w, int n) const {
    if (n <= 0) return {};
    const int i = index_.at(w);
    std::vector<std::pair<double, int>> sims;
    for (int j = 0; j < static_cast<int>(words_.size()); ++j) {
      if (j == i) continue;
      const double denom = norms_(i) * norms_(j);
      const double s = denom > 0.0 ? vectors_.row(i).dot(vectors_.row(j)) / denom : 0.0;
      sims.emplace_back(s, j);
    }
    const auto k = std::min(sims.size(), static_cast<std::size_t>(n));
    std::partial_sort(sims.begin(), sims.begin() + static_cast<std::ptrdiff_t>(k), sims.end(), [&](const auto& a, const auto& b) {
      return a.first != b.first ? a.first > b.first : words_[static_cast<std::size_t>(a.second)] < words_[static_cast<std::size_t>(b.second)];
    });
    std::vector<std::string> out;
    for (std::size_t r = 0; r < k; ++r) out.push_back(words_[static_cast<std::size_t>(sims[r].second)]);
    return out;
  }

 private:
  static bool is_integer(const std::string& s) {
    return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); });
  }

  int dim_ = 0;
  std::vector<std::string> words_;
  std::unordered_map<std::string, int> index_;
  Mat<double> vectors_;
  Vec<double> norms_;
};

/// Two-class multinomial Naive Bayes with add-one smoothing.
class SentimentModel {
 public:
  struct Document {
    bool positive = false;
    std::string text;
  };

  static SentimentModel train(const std::vector<Document>& docs) {
    SentimentModel m;
    std::size_t n_pos = 0;
    std::map<std::string, std::array<std::size_t, 2>> counts;
    std::array<std::size_t, 2> totals{0, 0};
    for (const Document& d : docs) {
      const std::size_t cls = d.positive ? 0 : 1;
      n_pos += d.positive ? 1 : 0;
      for (const std::string& w : tokenize(d.text)) {
        ++counts[w][cls];
        ++totals[cls];
      }
    }
    const std::size_t n_neg = docs.size() - n_pos;
    if (n_pos == 0 || n_neg == 0) throw InvalidArgument("sentiment corpus needs at least one pos and one neg document");
    m.log_prior_pos_ = std::log(static_cast<double>(n_pos) / static_cast<double>(docs.size()));
    m.log_prior_neg_ = std::log(static_cast<double>(n_neg) / static_cast<double>(docs.size()));
    const double v = static_cast<double>(counts.size());
    for (const auto& [w, c] : counts) {
      m.log_lik_[w] = {std::log((static_cast<double>(c[0]) + 1.0) / (static_cast<double>(totals[0]) + v)),
                       std::log((static_cast<double>(c[1]) + 1.0) / (static_cast<double>(totals[1]) + v))};
    }
    return m;
  }

  /// Lines of "label<TAB>text" with label pos or neg.
  static SentimentModel parse(std::string_view data) {
    std::vector<Document> docs;
    int line_no = 0;
    for (const std::string& line : detail::split_lines(data)) {
      ++line_no;
      if (detail::trim(line).empty()) continue;
      const auto tab = line.find('\t');
      const std::string label = detail::trim(std::string_view(line).substr(0, tab));
      if (tab == std::string::npos || (label != "pos" && label != "neg")) {
        throw InvalidArgument("sentiment corpus line " + std::to_string(line_no) + ": expected 'pos|neg<TAB>text'");
      }
      docs.push_back({label == "pos", line.substr(tab + 1)});
    }
    return train(docs);
  }

  static SentimentModel load(const std::string& path) { return parse(read_text_file(path)); }

  /// P(positive | text); words never seen in training are ignored, so an
  /// empty or all-unknown text gets the prior.
  double positive_probability(std::string_view text) const {
    double lp = log_prior_pos_, ln = log_prior_neg_;
    for (const std::string& w : tokenize(text)) {
      auto it = log_lik_.find(w);
      if (it == log_lik_.end()) continue;
      lp += it->second[0];
      ln += it->second[1];
    }
    return 1.0 / (1.0 + std::exp(ln - lp));
  }

  double log_prior_positive() const noexcept { return log_prior_pos_; }
  double log_prior_negative() const noexcept { return log_prior_neg_; }
  /// {log P(w|pos), log P(w|neg)}; nullopt for unseen words.
  std::optional<std::array<double, 2>> log_likelihood(const std::string& w) const {
    auto it = log_lik_.find(w);
    if (it == log_lik_.end()) return std::nullopt;
    return it->second;
  }

 private:
  double log_prior_pos_ = 0.0;
  double log_prior_neg_ = 0.0;
  std::unordered_map<std::string, std::array<double, 2>> log_lik_;
};

inline Distance synset_distance(std::string_view s1, std::string_view s2, const SemanticLexicon& lexicon) {
  auto expand = [&](std::string_view s) {
    std::set<std::string> out;
    for (const std::string& w : tokenize(s)) out.merge(lexicon.expand(w));
    return out;
  };
  const auto e1 = expand(s1), e2 = expand(s2);
  if (e1.empty() && e2.empty()) return std::nullopt;
  return detail::jaccard_distance(e1, e2);
}

/// Jaccard distance between the in-table words of each sentence, each
/// widened with its n nearest neighbours.
inline Distance embedding_distance(std::string_view s1, std::string_view s2, const EmbeddingTable& table, int n) {
  if (n < 0) throw InvalidArgument("embedding_distance: n must be >= 0");
  auto neighbourhood = [&](std::string_view s) {
    std::set<std::string> out;
    for (const std::string& w : tokenize(s)) {
      if (!table.contains(w)) continue;
      out.insert(w);
      for (auto& nb : table.nearest(w, n)) out.insert(std::move(nb));
    }
    return out;
  };
  const auto n1 = neighbourhood(s1), n2 = neighbourhood(s2);
  if (n1.empty() || n2.empty()) return std::nullopt;
  return detail::jaccard_distance(n1, n2);
}

/// Angular distance arccos(cos)/pi between mean word vectors.
inline Distance cosine_distance(std::string_view s1, std::string_view s2, const EmbeddingTable& table) {
  auto mean = [&](std::string_view s) -> std::optional<Vec<double>> {
    Vec<double> sum = Vec<double>::Zero(table.dim());
    int count = 0;
    for (const std::string& w : tokenize(s)) {
      if (!table.contains(w)) continue;
      sum += table.vector(w);
      ++count;
    }
    if (count == 0) return std::nullopt;
    return Vec<double>(sum / static_cast<double>(count));
  };
  const auto v1 = mean(s1), v2 = mean(s2);
  if (!v1 || !v2) return std::nullopt;
  const double n1 = v1->norm(), n2 = v2->norm();
  if (n1 == 0.0 || n2 == 0.0) return std::nullopt;
  if (*v1 == *v2) return 0.0;
  const double c = std::clamp(v1->dot(*v2) / (n1 * n2), -1.0, 1.0);
  return std::acos(c) / std::numbers::pi;
}

inline Distance sentiment_distance(std::string_view s1, std::string_view s2, const SentimentModel& model) {
  return std::abs(model.positive_probability(s1) - model.positive_probability(s2));
}

struct DescriptiveStats {
  std::optional<double> mean_words_per_sentence;
  std::optional<double> type_token_ratio;
  std::optional<double> distinct_1;
  std::optional<double> distinct_2;
  std::size_t sentences = 0;
  std::size_t tokens = 0;
};

/// Sentences end at '.', '!', '?' and at utterance boundaries; sentences
/// without words are not counted. Bigrams do not cross utterances.
inline DescriptiveStats descriptive_stats(const std::vector<std::string>& utterances) {
  DescriptiveStats s;
  std::set<std::string> types;
  std::set<std::pair<std::string, std::string>> bigram_types;
  std::size_t bigrams = 0;
  for (const std::string& u : utterances) {
    std::string sentence;
    auto flush = [&]() {
      const std::size_t n = tokenize(sentence).size();
      if (n > 0) {
        ++s.sentences;
        s.tokens += n;
      }
      sentence.clear();
    };
    for (char c : u) {
      if (c == '.' || c == '!' || c == '?') {
        flush();
      } else {
        sentence.push_back(c);
      }
    }
    flush();
    const auto words = tokenize(u);
    types.insert(words.begin(), words.end());
    for (std::size_t i = 0; i + 1 < words.size(); ++i) {
      bigram_types.emplace(words[i], words[i + 1]);
      ++bigrams;
    }
  }
  if (s.tokens == 0) return s;
  s.mean_words_per_sentence = static_cast<double>(s.tokens) / static_cast<double>(s.sentences);
  s.type_token_ratio = static_cast<double>(types.size()) / static_cast<double>(s.tokens);
  s.distinct_1 = s.type_token_ratio;
  if (bigrams > 0) s.distinct_2 = static_cast<double>(bigram_types.size()) / static_cast<double>(bigrams);
  return s;
}

inline DescriptiveStats descriptive_stats(const Transcript& t) { return descriptive_stats(t.utterances()); }

struct MetricResources {
  SemanticLexicon lexicon;
  EmbeddingTable embeddings;
  SentimentModel sentiment;
};

inline constexpr int kReportFormatVersion = 1;
inline constexpr std::array<std::string_view, 4> kDistanceNames = {"synset", "embedding", "cosine", "sentiment"};

struct PairDistances {
  std::string question;
  std::string answer;
  std::array<Distance, 4> values;  // in kDistanceNames order
};

struct MetricReport {
  std::string label;      // usually the transcript path
  std::string objective;  // objective of the transcript's turns, if uniform
  int neighbours = 5;
  std::vector<PairDistances> pairs;
  std::array<Distance, 4> means;  // over defined per-pair values
  DescriptiveStats stats;
};

inline std::array<Distance, 4> pair_distances(std::string_view q, std::string_view a, const MetricResources& r, int n) {
  return {synset_distance(q, a, r.lexicon), embedding_distance(q, a, r.embeddings, n), cosine_distance(q, a, r.embeddings),
          sentiment_distance(q, a, r.sentiment)};
}

/// All four distances on every <q_i, a_i> pair, averaged over pairs where
/// each distance is defined.
inline MetricReport evaluate(const Transcript& transcript, const MetricResources& resources, int n) {
  MetricReport report;
  report.neighbours = n;
  if (!transcript.turns.empty()) {
    const Objective o = transcript.turns.front().objective.kind;
    const bool uniform = std::all_of(transcript.turns.begin(), transcript.turns.end(), [&](const Turn& t) { return t.objective.kind == o; });
    report.objective = uniform ? std::string(to_string(o)) : "mixed";
  }
  std::array<double, 4> sums{};
  std::array<int, 4> counts{};
  for (const auto& [q, a] : transcript.qa_pairs()) {
    PairDistances pd{q, a, pair_distances(q, a, resources, n)};
    for (std::size_t k = 0; k < 4; ++k) {
      if (pd.values[k]) {
        sums[k] += *pd.values[k];
        ++counts[k];
      }
    }
    report.pairs.push_back(std::move(pd));
  }
  for (std::size_t k = 0; k < 4; ++k) {
    if (counts[k] > 0) report.means[k] = sums[k] / counts[k];
  }
  report.stats = descriptive_stats(transcript);
  return report;
}

namespace detail {

inline nlohmann::ordered_json opt_json(const std::optional<double>& v) {
  return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
}

inline std::string opt_text(const std::optional<double>& v, int precision = 4) {
  if (!v) return "n/a";
  std::ostringstream ss;
  ss << std::fixed << std::setprecision(precision) << *v;
  return ss.str();
}

}  // namespace detail

inline nlohmann::ordered_json to_json(const MetricReport& r) {
  nlohmann::ordered_json j;
  j["label"] = r.label;
  j["objective"] = r.objective;
  j["neighbours"] = r.neighbours;
  auto& means = j["means"] = nlohmann::ordered_json::object();
  for (std::size_t k = 0; k < 4; ++k) means[std::string(kDistanceNames[k])] = detail::opt_json(r.means[k]);
  j["stats"] = {{"mean_words_per_sentence", detail::opt_json(r.stats.mean_words_per_sentence)},
                {"type_token_ratio", detail::opt_json(r.stats.type_token_ratio)},
                {"distinct_1", detail::opt_json(r.stats.distinct_1)},
                {"distinct_2", detail::opt_json(r.stats.distinct_2)},
                {"sentences", r.stats.sentences},
                {"tokens", r.stats.tokens}};
  auto& pairs = j["pairs"] = nlohmann::ordered_json::array();
  for (const PairDistances& p : r.pairs) {
    nlohmann::ordered_json pj;
    pj["q"] = p.question;
    pj["a"] = p.answer;
    for (std::size_t k = 0; k < 4; ++k) pj[std::string(kDistanceNames[k])] = detail::opt_json(p.values[k]);
    pairs.push_back(std::move(pj));
  }
  return j;
}

/// One row per report, one column per distance mean; undefined is empty.
inline std::string to_csv(const std::vector<MetricReport>& reports) {
  auto quote = [](const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) out += c == '"' ? std::string("\"\"") : std::string(1, c);
    return out + "\"";
  };
  std::string out = "transcript,objective";
  for (auto name : kDistanceNames) out += "," + std::string(name);
  out += "\n";
  for (const MetricReport& r : reports) {
    out += quote(r.label) + "," + quote(r.objective);
    for (const Distance& m : r.means) {
      out += ",";
      if (m) {
        std::ostringstream ss;
        ss << std::setprecision(17) << *m;
        out += ss.str();
      }
    }
    out += "\n";
  }
  return out;
}

/// Aligned plain-text table of the means and statistics.
inline std::string to_table(const std::vector<MetricReport>& reports) {
  std::vector<std::vector<std::string>> rows;
  rows.push_back({"transcript", "objective", "synset", "embedding", "cosine", "sentiment", "words/sent", "ttr", "distinct-1", "distinct-2"});
  for (const MetricReport& r : reports) {
    std::vector<std::string> row{r.label, r.objective};
    for (const Distance& m : r.means) row.push_back(detail::opt_text(m));
    row.push_back(detail::opt_text(r.stats.mean_words_per_sentence, 2));
    row.push_back(detail::opt_text(r.stats.type_token_ratio));
    row.push_back(detail::opt_text(r.stats.distinct_1));
    row.push_back(detail::opt_text(r.stats.distinct_2));
    rows.push_back(std::move(row));
  }
  std::vector<std::size_t> width(rows[0].size(), 0);
  for (const auto& row : rows)
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  std::string out;
  for (const auto& row : rows) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      out += row[c];
      if (c + 1 < row.size()) out += std::string(width[c] - row[c].size() + 2, ' ');
    }
    out += "\n";
  }
  return out;
}

}  // namespace gruchat

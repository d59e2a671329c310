// SPDX-License-Identifier: Apache-2.0
//
// gruchat: train character-level GRU chatbots, let two of them talk, chat
// with one, and score transcripts.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
#include <CLI11.hpp>
#include <unistd.h>

#include <cstdio>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "gruchat/checkpoint.hpp"
#include "gruchat/dialogue.hpp"
#include "gruchat/io.hpp"
#include "gruchat/metrics.hpp"
#include "gruchat/run_config.hpp"
#include "gruchat/train.hpp"

namespace {

using namespace gruchat;

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;
constexpr const char* kVersion = "gruchat 1.0.0";

struct UsageError : Error {
  using Error::Error;
};

std::string require(const std::string& value, const char* flag) {
  if (value.empty()) throw UsageError(std::string("missing required option --") + flag);
  return value;
}

void write_output(const std::string& path, std::string_view data) {
  try {
    write_file_atomic(path, data);
  } catch (const IoError& e) {
    throw Error(e.what());
  }
}

Model load_model(const std::string& path) {
  try {
    return load_checkpoint(path);
  } catch (const IoError&) {
    throw;
  } catch (const CheckpointError& e) {
    throw CheckpointError(e.kind(), path + ": " + e.what());
  }
}

int cmd_train(const RunConfig& rc) {
  const std::string corpus_path = require(rc.corpus, "corpus");
  const std::string out = rc.out.empty() ? "model.gruc" : rc.out;
  const std::string text = read_text_file(corpus_path);
  Model model;
  model.vocab = build_vocabulary(text);
  const ModelConfig mc = rc.model_config(model.vocab.size());
  mc.validate();

  std::ostringstream log;
  log << "# gruchat loss log v" << kRunConfigFormatVersion << "\n# config " << to_json(rc).dump() << "\nstep,loss\n";
  TrainOptions opts = rc.train_options();
  opts.on_step = [&](int step, double loss) {
    log << step << "," << std::setprecision(9) << loss << "\n";
    if (step == 1 || step % 100 == 0) std::cerr << "step " << step << "  loss " << std::fixed << std::setprecision(4) << loss << std::defaultfloat << "\n";
  };
  std::cerr << "training on " << text.size() << " bytes, vocabulary " << model.vocab.size() << ", " << mc.parameter_count()
            << " parameters\n";
  TrainResult result = train<float>(text, model.vocab, mc, opts);
  model.params = std::move(result.params);
  write_output(out, serialize_checkpoint(model));
  write_output(out + ".loss.csv", log.str());
  if (!result.loss_history.empty()) std::cerr << "final loss " << result.loss_history.back() << "\n";
  std::cout << out << "\n";
  return 0;
}

int cmd_converse(const RunConfig& rc) {
  const std::string path_q = require(rc.checkpoint, "checkpoint");
  const std::string seed = require(rc.seed_text, "seed-text");
  const std::string path_a = rc.checkpoint_b.empty() ? path_q : rc.checkpoint_b;
  if (rc.pairs < 1) throw UsageError("--pairs must be >= 1");
  const DecodeOptions opts = rc.decode_options();
  opts.validate();
  const Model model_q = load_model(path_q);
  const Model model_a = path_a == path_q ? model_q : load_model(path_a);

  Transcript t = run_conversation(model_q, model_a, seed, rc.pairs, opts);
  t.model_q = path_q;
  t.model_a = path_a;
  t.config = to_json(rc);
  const std::string out = rc.out.empty() ? "transcript" : rc.out;
  write_output(out + ".jsonl", to_jsonl(t));
  const std::string pretty = to_pretty(t);
  write_output(out + ".txt", pretty);
  std::cout << pretty;
  return 0;
}

int cmd_chat(const RunConfig& rc) {
  const Model model = load_model(require(rc.checkpoint, "checkpoint"));
  const DecodeOptions opts = rc.decode_options();
  opts.validate();
  const bool interactive = isatty(STDIN_FILENO) != 0;
  std::string line;
  for (;;) {
    if (interactive) std::cout << "> " << std::flush;
    if (!std::getline(std::cin, line)) break;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    try {
      const Response r = respond(model, opts, line);
      std::cout << (r.empty ? std::string("[empty-response]") : r.text) << "\n" << std::flush;
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << "\n";
    }
  }
  return 0;
}

int cmd_eval(const RunConfig& rc, const std::vector<std::string>& transcripts) {
  if (transcripts.empty()) throw UsageError("eval needs at least one transcript");
  if (rc.neighbors < 0) throw UsageError("--neighbors must be >= 0");
  MetricResources res;
  res.lexicon = SemanticLexicon::load(require(rc.lexicon, "lexicon"));
  res.embeddings = EmbeddingTable::load(require(rc.embeddings, "embeddings"));
  res.sentiment = SentimentModel::load(require(rc.sentiment_corpus, "sentiment-corpus"));

  std::vector<MetricReport> reports;
  for (const std::string& path : transcripts) {
    Transcript t;
    try {
      t = parse_jsonl(read_text_file(path));
    } catch (const InvalidArgument& e) {
      throw InvalidArgument(path + ": " + e.what());
    }
    MetricReport r = evaluate(t, res, rc.neighbors);
    r.label = path;
    reports.push_back(std::move(r));
  }

  nlohmann::ordered_json j;
  j["format_version"] = kReportFormatVersion;
  j["config"] = to_json(rc);
  j["reports"] = nlohmann::ordered_json::array();
  for (const auto& r : reports) j["reports"].push_back(to_json(r));
  const std::string out = rc.out.empty() ? "report" : rc.out;
  write_output(out + ".json", j.dump(2) + "\n");
  write_output(out + ".csv", to_csv(reports));
  std::cout << to_table(reports);
  return 0;
}

int cmd_inspect(const RunConfig& rc) {
  const std::string path = require(rc.checkpoint, "checkpoint");
  const Model m = load_model(path);
  const ModelConfig& c = m.config();
  nlohmann::ordered_json j;
  j["checkpoint"] = path;
  j["format_version"] = kCheckpointVersion;
  j["vocab_size"] = c.vocab_size;
  j["layers"] = c.layers;
  j["blocks"] = c.blocks_per_layer;
  j["units"] = c.units_per_block;
  j["window"] = c.bptt_window;
  j["lr"] = c.learning_rate;
  j["rng_seed"] = c.seed;
  j["parameters"] = c.parameter_count();
  j["has_end_of_utterance"] = m.vocab.eou_id().has_value();
  std::cout << j.dump(2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Character-level GRU chatbots with entropy-aware beam search"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  app.add_option("--config", config_path, "key=value settings file; flags override it");

  struct FlagSpec {
    const char* key;
    const char* help;
  };
  static const FlagSpec kFlags[] = {
      {"corpus", "training text, one utterance per line"},
      {"checkpoint", "model file (agent Q, or the only agent)"},
      {"checkpoint-b", "second model file for agent A"},
      {"loss", "beam objective: net, mmi, norm, ent (default mmi)"},
      {"lambda", "weight of the unconditional term (default 0.5)"},
      {"beam-width", "beam width (default 2)"},
      {"max-len", "maximum reply length in characters (default 500)"},
      {"pairs", "question/answer pairs per conversation (default 15)"},
      {"seed-text", "first question of the conversation"},
      {"rng-seed", "seed for all randomness (default 0)"},
      {"lexicon", "synonym file, lemma<TAB>syn1,syn2"},
      {"embeddings", "word vectors, word v1 ... vd"},
      {"sentiment-corpus", "labelled sentences, pos|neg<TAB>text"},
      {"out", "output path or prefix"},
      {"neighbors", "nearest neighbours per word for the embedding distance (default 5)"},
      {"layers", "GRU layers (default 2)"},
      {"blocks", "GRU blocks per layer (default 1)"},
      {"units", "units per block (default 128)"},
      {"window", "truncated BPTT window (default 64)"},
      {"batch", "sequences per batch (default 32)"},
      {"lr", "Adam learning rate (default 0.001)"},
      {"epochs", "passes over the corpus (default 1)"},
      {"steps", "stop after this many updates, 0 for no limit"},
  };
  std::map<std::string, std::string> values;
  std::vector<std::pair<std::string, CLI::Option*>> flag_opts;
  for (const FlagSpec& f : kFlags) {
    flag_opts.emplace_back(f.key, app.add_option(std::string("--") + f.key, values[f.key], f.help));
  }

  auto* train_cmd = app.add_subcommand("train", "train a model on --corpus and write a checkpoint to --out");
  auto* converse_cmd = app.add_subcommand("converse", "let two agents talk, starting from --seed-text");
  auto* chat_cmd = app.add_subcommand("chat", "reply to each line read from standard input");
  auto* eval_cmd = app.add_subcommand("eval", "score transcripts with the four distance measures");
  auto* inspect_cmd = app.add_subcommand("inspect", "print a checkpoint's configuration");
  std::vector<std::string> transcripts;
  eval_cmd->add_option("transcripts", transcripts, "transcript .jsonl files")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  RunConfig rc;
  try {
    if (!config_path.empty()) rc = load_run_config(config_path);
    for (const auto& [key, opt] : flag_opts) {
      if (opt->count() > 0) apply_kv(rc, key, values[key]);
    }
  } catch (const std::exception& e) {
    std::cerr << "gruchat: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    if (*train_cmd) return cmd_train(rc);
    if (*converse_cmd) return cmd_converse(rc);
    if (*chat_cmd) return cmd_chat(rc);
    if (*eval_cmd) return cmd_eval(rc, transcripts);
    if (*inspect_cmd) return cmd_inspect(rc);
  } catch (const UsageError& e) {
    std::cerr << "gruchat: " << e.what() << "\n";
    return kExitUsage;
  } catch (const IoError& e) {
    std::cerr << "gruchat: " << e.what() << "\n";
    return kExitUsage;
  } catch (const InvalidArgument& e) {
    std::cerr << "gruchat: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "gruchat: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}

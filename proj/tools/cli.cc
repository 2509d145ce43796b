#include "cli.h"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

#include "ansel/checkpoint.h"
#include "ansel/data_io.h"
#include "ansel/encoder.h"
#include "ansel/errors.h"
#include "ansel/metrics.h"
#include "ansel/pretraining.h"
#include "ansel/rng.h"
#include "ansel/tokenizer.h"

namespace ansel::cli {
namespace {

namespace fs = std::filesystem;

// Classifier-head initialization draws from its own stream so that adding
// a head does not shift the encoder initialization.
constexpr std::uint64_t kHeadSeedOffset = 1;

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

[[noreturn]] void bad_value(std::string_view key, std::string_view expected,
                            std::string_view value) {
  throw ConfigError(std::string(key) + ": expected " + std::string(expected) + ", got '" +
                    std::string(value) + "'");
}

template <typename T>
T parse_integer(std::string_view key, std::string_view value) {
  T out{};
  const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (value.empty() || ec != std::errc() || ptr != value.data() + value.size()) {
    bad_value(key, "a non-negative integer", value);
  }
  return out;
}

double parse_double(std::string_view key, std::string_view value) {
  double out = 0.0;
  const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (value.empty() || ec != std::errc() || ptr != value.data() + value.size() ||
      !std::isfinite(out)) {
    bad_value(key, "a finite number", value);
  }
  return out;
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

struct Field {
  std::string key;
  std::string help;
  std::function<void(RunConfig&, std::string_view)> set;
  std::function<std::string(const RunConfig&)> get;
};

Field size_field(std::string key, std::string help, std::size_t RunConfig::*member) {
  return {key, std::move(help),
          [key, member](RunConfig& c, std::string_view v) {
            c.*member = parse_integer<std::size_t>(key, v);
          },
          [member](const RunConfig& c) { return std::to_string(c.*member); }};
}

Field double_field(std::string key, std::string help, double RunConfig::*member) {
  return {key, std::move(help),
          [key, member](RunConfig& c, std::string_view v) { c.*member = parse_double(key, v); },
          [member](const RunConfig& c) { return format_double(c.*member); }};
}

Field path_field(std::string key, std::string help, fs::path RunConfig::*member) {
  return {key, std::move(help),
          [member](RunConfig& c, std::string_view v) { c.*member = fs::path(v); },
          [member](const RunConfig& c) { return (c.*member).string(); }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> t;
    t.push_back({"command", "command to run",
                 [](RunConfig& c, std::string_view v) { c.command = v; },
                 [](const RunConfig& c) { return c.command; }});
    t.push_back({"seed", "seed for every random choice",
                 [](RunConfig& c, std::string_view v) {
                   c.seed = parse_integer<std::uint64_t>("seed", v);
                 },
                 [](const RunConfig& c) { return std::to_string(c.seed); }});
    t.push_back(path_field("data_dir", "dataset directory (train/valid/test.tsv, corpus.txt)",
                           &RunConfig::data_dir));
    t.push_back(path_field("vocab", "vocabulary file", &RunConfig::vocab));
    t.push_back(path_field("ckpt_in", "input checkpoint", &RunConfig::ckpt_in));
    t.push_back(path_field("ckpt_out", "output checkpoint", &RunConfig::ckpt_out));
    t.push_back(path_field("run_out", "output run file", &RunConfig::run_out));
    t.push_back(path_field("run", "run file to evaluate", &RunConfig::run));
    t.push_back(path_field("qrels", "relevance labels (qid, candidate, label)", &RunConfig::qrels));
    t.push_back(path_field("run_a", "first run for compare", &RunConfig::run_a));
    t.push_back(path_field("run_b", "second run for compare", &RunConfig::run_b));
    t.push_back({"split", "split to rank or evaluate (train, valid, test)",
                 [](RunConfig& c, std::string_view v) {
                   if (v.empty()) bad_value("split", "a split name", v);
                   c.split = v;
                 },
                 [](const RunConfig& c) { return c.split; }});
    t.push_back({"stat", "per-question statistic for compare: ap or rr",
                 [](RunConfig& c, std::string_view v) {
                   if (v != "ap" && v != "rr") bad_value("stat", "ap or rr", v);
                   c.stat = v;
                 },
                 [](const RunConfig& c) { return c.stat; }});
    t.push_back({"casing", "cased or uncased",
                 [](RunConfig& c, std::string_view v) {
                   const auto mode = parse_casing(v);
                   if (!mode) bad_value("casing", "cased or uncased", v);
                   c.casing = *mode;
                 },
                 [](const RunConfig& c) { return std::string(casing_name(c.casing)); }});
    t.push_back(size_field("layers", "encoder layers", &RunConfig::layers));
    t.push_back(size_field("hidden", "hidden size", &RunConfig::hidden));
    t.push_back(size_field("heads", "attention heads", &RunConfig::heads));
    t.push_back(size_field("ffn", "feed-forward inner size", &RunConfig::ffn));
    t.push_back(size_field("vocab_size", "vocabulary target and embedding rows",
                           &RunConfig::vocab_size));
    t.push_back(size_field("max_positions", "position embedding rows", &RunConfig::max_positions));
    t.push_back(double_field("dropout", "dropout rate during training", &RunConfig::dropout));
    t.push_back(size_field("batch_size", "fine-tuning batch size", &RunConfig::batch_size));
    t.push_back(size_field("epochs", "fine-tuning epochs", &RunConfig::epochs));
    t.push_back(double_field("lr", "fine-tuning learning rate", &RunConfig::lr));
    t.push_back(size_field("max_len", "fine-tuning and ranking sequence length",
                           &RunConfig::max_len));
    t.push_back({"mode", "finetune_all or frozen_encoder",
                 [](RunConfig& c, std::string_view v) {
                   const auto mode = parse_mode(v);
                   if (!mode) bad_value("mode", "finetune_all or frozen_encoder", v);
                   c.mode = *mode;
                 },
                 [](const RunConfig& c) { return std::string(mode_name(c.mode)); }});
    t.push_back(size_field("steps", "pretraining steps", &RunConfig::steps));
    t.push_back(size_field("pretrain_batch_size", "pretraining batch size",
                           &RunConfig::pretrain_batch_size));
    t.push_back(double_field("pretrain_lr", "pretraining learning rate", &RunConfig::pretrain_lr));
    t.push_back(size_field("pretrain_max_len", "pretraining sequence length",
                           &RunConfig::pretrain_max_len));
    t.push_back(size_field("questions", "synthetic questions", &RunConfig::questions));
    t.push_back(size_field("candidates", "synthetic candidates per question",
                           &RunConfig::candidates));
    t.push_back(size_field("documents", "synthetic corpus documents", &RunConfig::documents));
    t.push_back(size_field("sentences", "sentences per synthetic document",
                           &RunConfig::sentences));
    return t;
  }();
  return table;
}

const Field* find_field(std::string_view key) {
  for (const auto& f : fields()) {
    if (f.key == key) return &f;
  }
  return nullptr;
}

std::string flag_name(std::string_view key) {
  std::string flag = "--";
  for (char c : key) flag.push_back(c == '_' ? '-' : c);
  return flag;
}

void configure_logging() {
  auto logger = std::make_shared<spdlog::logger>(
      "ansel", std::make_shared<spdlog::sinks::stderr_sink_st>());
  logger->set_pattern("[%l] %v");
  spdlog::level::level_enum level = spdlog::level::info;
  bool unknown = false;
  if (const char* env = std::getenv("ANSEL_LOG")) {
    const std::string_view v(env);
    if (v == "quiet") {
      level = spdlog::level::err;
    } else if (v == "debug") {
      level = spdlog::level::debug;
    } else if (v != "info" && !v.empty()) {
      unknown = true;
    }
  }
  logger->set_level(level);
  spdlog::set_default_logger(logger);
  if (unknown) spdlog::warn("ANSEL_LOG must be quiet, info or debug; using info");
}

// ---- up-front validation -------------------------------------------------

const std::vector<std::string>& commands() {
  static const std::vector<std::string> list = {"gen-synth", "build-vocab", "pretrain", "finetune",
                                                "rank",      "eval",        "compare",  "ablate"};
  return list;
}

fs::path split_file(const RunConfig& c, std::string_view split) {
  return c.data_dir / (std::string(split) + ".tsv");
}

void need(const RunConfig& c, const fs::path& value, std::string_view key) {
  if (value.empty()) {
    throw ConfigError(c.command + " needs " + flag_name(key));
  }
}

void need_file(const fs::path& path) {
  if (!fs::is_regular_file(path)) throw DataError("input file not found: " + path.string());
}

void validate_up_front(const RunConfig& c) {
  const auto& cmds = commands();
  if (std::find(cmds.begin(), cmds.end(), c.command) == cmds.end()) {
    throw ConfigError("unknown command '" + c.command + "'");
  }
  const std::string& cmd = c.command;
  if (cmd == "gen-synth") {
    need(c, c.data_dir, "data_dir");
  } else if (cmd == "build-vocab") {
    need(c, c.data_dir, "data_dir");
    need(c, c.vocab, "vocab");
    need_file(split_file(c, "train"));
  } else if (cmd == "pretrain") {
    need(c, c.data_dir, "data_dir");
    need(c, c.vocab, "vocab");
    need(c, c.ckpt_out, "ckpt_out");
    need_file(c.data_dir / "corpus.txt");
    need_file(c.vocab);
    if (!c.ckpt_in.empty()) need_file(c.ckpt_in);
  } else if (cmd == "finetune" || cmd == "ablate") {
    need(c, c.data_dir, "data_dir");
    need(c, c.vocab, "vocab");
    if (cmd == "finetune") need(c, c.ckpt_out, "ckpt_out");
    if (cmd == "ablate") need(c, c.ckpt_in, "ckpt_in");
    need_file(split_file(c, "train"));
    need_file(split_file(c, "valid"));
    need_file(c.vocab);
    if (!c.ckpt_in.empty()) need_file(c.ckpt_in);
    if (cmd == "ablate" || !c.run_out.empty()) need_file(split_file(c, c.split));
  } else if (cmd == "rank") {
    need(c, c.data_dir, "data_dir");
    need(c, c.vocab, "vocab");
    need(c, c.ckpt_in, "ckpt_in");
    need(c, c.run_out, "run_out");
    need_file(split_file(c, c.split));
    need_file(c.vocab);
    need_file(c.ckpt_in);
  } else if (cmd == "eval") {
    need(c, c.run, "run");
    need(c, c.qrels, "qrels");
    need_file(c.run);
    need_file(c.qrels);
  } else if (cmd == "compare") {
    need(c, c.run_a, "run_a");
    need(c, c.run_b, "run_b");
    need(c, c.qrels, "qrels");
    need_file(c.run_a);
    need_file(c.run_b);
    need_file(c.qrels);
  }
}

// ---- commands ------------------------------------------------------------

EncoderConfig encoder_config(const RunConfig& c) {
  EncoderConfig e;
  e.layers = c.layers;
  e.hidden = c.hidden;
  e.heads = c.heads;
  e.ffn = c.ffn;
  e.vocab_size = c.vocab_size;
  e.max_positions = c.max_positions;
  e.dropout = c.dropout;
  e.validate();
  return e;
}

void check_vocab_fits(const Vocab& vocab, const EncoderConfig& config) {
  if (vocab.size() > config.vocab_size) {
    throw ConfigError("vocabulary has " + std::to_string(vocab.size()) +
                      " tokens but the encoder embeds only " + std::to_string(config.vocab_size));
  }
}

DatasetSplit load_split(const RunConfig& c, std::string_view name) {
  return load_tsv(split_file(c, name), c.casing, std::string(name));
}

int cmd_gen_synth(const RunConfig& c, std::ostream& out) {
  const SyntheticSpec spec;
  const SyntheticDataset ds = generate_synthetic(c.questions, c.candidates, spec, c.seed);
  fs::create_directories(c.data_dir);
  for (const DatasetSplit* split : {&ds.train, &ds.valid, &ds.test}) {
    save_tsv(*split, split_file(c, split->name));
    write_qrels(qrels_from_split(*split), c.data_dir / (split->name + ".qrels"));
  }
  save_corpus(generate_synthetic_corpus(c.documents, c.sentences, spec, c.seed),
              c.data_dir / "corpus.txt");
  out << "train=" << ds.train.groups.size() << " valid=" << ds.valid.groups.size()
      << " test=" << ds.test.groups.size() << " questions written to " << c.data_dir.string()
      << '\n';
  return kExitOk;
}

int cmd_build_vocab(const RunConfig& c, std::ostream& out) {
  std::vector<std::string> text;
  const fs::path corpus_path = c.data_dir / "corpus.txt";
  if (fs::is_regular_file(corpus_path)) {
    for (const auto& doc : load_corpus(corpus_path))
      for (const auto& sentence : doc) text.push_back(sentence);
  }
  const DatasetSplit train = load_split(c, "train");
  for (const auto& g : train.groups) {
    text.push_back(g.question);
    for (const auto& cand : g.candidates) text.push_back(cand.answer);
  }
  const Vocab vocab = build_vocab(text, c.vocab_size, c.casing);
  vocab.save(c.vocab);
  out << "vocabulary of " << vocab.size() << " tokens written to " << c.vocab.string() << '\n';
  return kExitOk;
}

int cmd_pretrain(const RunConfig& c, std::ostream& out) {
  const Vocab vocab = Vocab::load(c.vocab, c.casing);
  const auto corpus = load_corpus(c.data_dir / "corpus.txt");
  EncoderConfig config;
  EncoderWeights weights;
  PretrainHeads heads;
  if (!c.ckpt_in.empty()) {
    const Checkpoint ckpt = load_checkpoint(c.ckpt_in);
    config = EncoderConfig::from_checkpoint(ckpt, c.dropout);
    weights = EncoderWeights::from_checkpoint(ckpt);
    Rng rng(c.seed);
    heads = ckpt.contains("mlm.W") ? PretrainHeads::from_checkpoint(ckpt)
                                   : PretrainHeads::initialize(config, rng);
  } else {
    config = encoder_config(c);
    Rng rng(c.seed);
    weights = EncoderWeights::initialize(config, rng);
    heads = PretrainHeads::initialize(config, rng);
  }
  check_vocab_fits(vocab, config);
  PretrainConfig pc;
  pc.steps = c.steps;
  pc.batch_size = c.pretrain_batch_size;
  pc.learning_rate = c.pretrain_lr;
  pc.max_len = c.pretrain_max_len;
  pc.seed = c.seed;
  const PretrainResult result = pretrain(corpus, vocab, config, std::move(weights),
                                         std::move(heads), pc);
  save_checkpoint(result.to_checkpoint(), c.ckpt_out);
  const fs::path log_path = fs::path(c.ckpt_out.string() + ".loss.tsv");
  write_loss_log(result.log, log_path);
  if (!result.log.empty()) {
    const auto& first = result.log.front();
    const auto& last = result.log.back();
    spdlog::info("step 0: mlm {:.4f} nsp {:.4f}; step {}: mlm {:.4f} nsp {:.4f}", first.mlm_loss,
                 first.nsp_loss, last.step, last.mlm_loss, last.nsp_loss);
  }
  out << "pretrained " << result.log.size() << " steps; checkpoint " << c.ckpt_out.string()
      << ", loss log " << log_path.string() << '\n';
  return kExitOk;
}

struct LoadedModel {
  EncoderConfig config;
  EncoderWeights weights;
  ClassifierHead head;
};

LoadedModel load_or_init_model(const RunConfig& c) {
  LoadedModel m;
  Rng head_rng(c.seed + kHeadSeedOffset);
  if (!c.ckpt_in.empty()) {
    const Checkpoint ckpt = load_checkpoint(c.ckpt_in);
    m.config = EncoderConfig::from_checkpoint(ckpt, c.dropout);
    m.weights = EncoderWeights::from_checkpoint(ckpt);
    m.head = ckpt.contains("classifier.W") ? ClassifierHead::from_checkpoint(ckpt)
                                           : ClassifierHead::initialize(m.config.hidden, head_rng);
  } else {
    m.config = encoder_config(c);
    Rng rng(c.seed);
    m.weights = EncoderWeights::initialize(m.config, rng);
    m.head = ClassifierHead::initialize(m.config.hidden, head_rng);
  }
  return m;
}

int cmd_finetune(const RunConfig& c, std::ostream& out, bool ablate) {
  const Vocab vocab = Vocab::load(c.vocab, c.casing);
  LoadedModel m = load_or_init_model(c);
  check_vocab_fits(vocab, m.config);
  const DatasetSplit train = load_split(c, "train");
  const DatasetSplit valid = load_split(c, "valid");
  FinetuneConfig fc;
  fc.batch_size = c.batch_size;
  fc.epochs = c.epochs;
  fc.learning_rate = c.lr;
  fc.max_len = c.max_len;
  fc.mode = ablate ? FinetuneMode::kFrozenEncoder : c.mode;
  fc.seed = c.seed;
  const FinetuneResult result =
      finetune(train, valid, vocab, m.config, std::move(m.weights), std::move(m.head), fc);
  for (const auto& e : result.epochs) {
    spdlog::info("epoch {}: train loss {:.4f}, valid MAP {:.4f}, MRR {:.4f}", e.epoch,
                 e.mean_train_loss, e.valid_map, e.valid_mrr);
  }
  if (result.skipped_pairs > 0) {
    spdlog::warn("{} training pairs did not fit max_len {} and were skipped",
                 result.skipped_pairs, c.max_len);
  }
  if (!c.ckpt_out.empty()) save_checkpoint(result.to_checkpoint(), c.ckpt_out);
  out << "mode=" << mode_name(fc.mode) << '\n'
      << "best_epoch=" << result.best_epoch << '\n'
      << "valid_map=" << format_score(result.best_valid_metric) << '\n';
  if (ablate || !c.run_out.empty()) {
    const DatasetSplit split = load_split(c, c.split);
    const auto lines =
        rank_split(split, result.encoder, m.config, result.head, vocab, c.max_len);
    if (!c.run_out.empty()) write_run_file(lines, c.run_out);
    if (ablate) out << format_report(evaluate_run(join_run(lines, qrels_from_split(split))));
  }
  return kExitOk;
}

int cmd_rank(const RunConfig& c, std::ostream& out) {
  const Vocab vocab = Vocab::load(c.vocab, c.casing);
  const Checkpoint ckpt = load_checkpoint(c.ckpt_in);
  const EncoderConfig config = EncoderConfig::from_checkpoint(ckpt, c.dropout);
  const EncoderWeights weights = EncoderWeights::from_checkpoint(ckpt);
  const ClassifierHead head = ClassifierHead::from_checkpoint(ckpt);
  check_vocab_fits(vocab, config);
  const DatasetSplit split = load_split(c, c.split);
  const auto lines = rank_split(split, weights, config, head, vocab, c.max_len);
  write_run_file(lines, c.run_out);
  out << "ranked " << split.groups.size() << " questions (" << lines.size()
      << " candidates) into " << c.run_out.string() << '\n';
  return kExitOk;
}

RunEvaluation evaluate_file(const fs::path& run, const Qrels& qrels) {
  return evaluate_run(join_run(read_run_file(run), qrels));
}

int cmd_eval(const RunConfig& c, std::ostream& out) {
  out << format_report(evaluate_file(c.run, read_qrels(c.qrels)));
  return kExitOk;
}

int cmd_compare(const RunConfig& c, std::ostream& out) {
  const Qrels qrels = read_qrels(c.qrels);
  const RunEvaluation a = evaluate_file(c.run_a, qrels);
  const RunEvaluation b = evaluate_file(c.run_b, qrels);
  const PerQuestionStat stat =
      c.stat == "rr" ? PerQuestionStat::kReciprocalRank : PerQuestionStat::kAveragePrecision;
  out << "a: MAP " << format_score(a.map) << ", MRR " << format_score(a.mrr) << '\n'
      << "b: MAP " << format_score(b.map) << ", MRR " << format_score(b.mrr) << '\n'
      << format_report(paired_t_test(a, b, stat));
  return kExitOk;
}

int dispatch(const RunConfig& c, std::ostream& out) {
  const std::string& cmd = c.command;
  if (cmd == "gen-synth") return cmd_gen_synth(c, out);
  if (cmd == "build-vocab") return cmd_build_vocab(c, out);
  if (cmd == "pretrain") return cmd_pretrain(c, out);
  if (cmd == "finetune") return cmd_finetune(c, out, false);
  if (cmd == "ablate") return cmd_finetune(c, out, true);
  if (cmd == "rank") return cmd_rank(c, out);
  if (cmd == "eval") return cmd_eval(c, out);
  return cmd_compare(c, out);
}

std::string command_list() {
  std::string s;
  for (const auto& c : commands()) s += (s.empty() ? "" : ", ") + c;
  return s;
}

}  // namespace

RunConfig parse_config(std::string_view text, RunConfig base) {
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto end = std::min(text.find('\n', pos), text.size());
    const std::string_view line = trim(text.substr(pos, end - pos));
    pos = end + 1;
    ++line_no;
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key=value");
    }
    const std::string_view key = trim(line.substr(0, eq));
    const Field* field = find_field(key);
    if (!field) {
      throw ConfigError("unknown config key '" + std::string(key) + "' on line " +
                        std::to_string(line_no));
    }
    field->set(base, trim(line.substr(eq + 1)));
  }
  return base;
}

RunConfig load_config(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config(text.str());
}

std::string format_config(const RunConfig& config) {
  std::string out;
  for (const auto& f : fields()) out += f.key + "=" + f.get(config) + "\n";
  return out;
}

int run(std::span<const std::string> args, std::ostream& out) {
  configure_logging();
  CLI::App app("Answer selection with a from-scratch transformer encoder.", "ansel");
  std::string command;
  std::string config_path;
  app.add_option("command", command, "one of: " + command_list())->required();
  app.add_option("--config", config_path, "key=value settings file; flags override it");
  std::map<std::string, std::string> raw;
  std::vector<std::pair<const Field*, CLI::Option*>> options;
  for (const auto& f : fields()) {
    if (f.key == "command") continue;
    options.emplace_back(&f, app.add_option(flag_name(f.key), raw[f.key], f.help));
  }

  try {
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
      app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp&) {
      out << app.help();
      return kExitOk;
    } catch (const CLI::ParseError& e) {
      std::cerr << e.what() << "\n\n" << app.help();
      return kExitUsage;
    }
    RunConfig config = config_path.empty() ? RunConfig{} : load_config(config_path);
    for (const auto& [field, option] : options) {
      if (option->count() > 0) field->set(config, raw[field->key]);
    }
    config.command = command;
    spdlog::info("resolved config:\n{}", format_config(config));
    validate_up_front(config);
    return dispatch(config, out);
  } catch (const ConfigError& e) {
    spdlog::error("{}", e.what());
    std::cerr << "Run with --help for usage.\n";
    return kExitUsage;
  } catch (const NumericError& e) {
    spdlog::error("numerical failure: {}", e.what());
    return kExitNumeric;
  } catch (const DataError& e) {
    spdlog::error("data error: {}", e.what());
    return kExitData;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kExitData;
  }
}

int run(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  return run(args, std::cout);
}

}  // namespace ansel::cli

#pragma once

// The `charemb` command line: option wiring, INI config resolution and the
// seven pipeline subcommands. run_cli() is the whole program minus main(),
// so tests can drive it in-process.

#include <CLI11.hpp>
#include <boost/lexical_cast.hpp>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "charemb/charemb.hpp"

namespace charemb::cli {

using Settings = std::map<std::string, std::string>;  // "section.key" -> value

struct KeySpec {
  const char* key;
  const char* default_value;
};

// Every key the config file may set. Defaults are for --help only; the typed
// defaults live in the library config structs.
inline const std::vector<KeySpec>& known_keys() {
  static const std::vector<KeySpec> keys = {
      {"phrases.discount", "5"},
      {"phrases.threshold", "0.0001"},
      {"phrases.passes", "2"},
      {"phrases.min_count", "5"},
      {"cbow.dim", "200"},
      {"cbow.window", "8"},
      {"cbow.negatives", "5"},
      {"cbow.epochs", "25"},
      {"cbow.learning_rate", "0.025"},
      {"cbow.min_count", "5"},
      {"cbow.subsample", "0.0001"},
      {"encoder.variant", "small"},
      {"encoder.hidden", "variant"},
      {"encoder.layers", "variant"},
      {"encoder.char_dim", "64"},
      {"encoder.dropout", "0.2"},
      {"encoder.learning_rate", "variant"},
      {"encoder.weight_decay", "1e-08"},
      {"encoder.batch_size", "256"},
      {"encoder.patience", "10"},
      {"encoder.max_epochs", "200"},
      {"encoder.max_len", "64"},
      {"encoder.max_chars", "512"},
      {"paths.corpus", ""},
      {"paths.corpus_out", ""},
      {"paths.phrase_table", ""},
      {"paths.matrix", ""},
      {"paths.reconstructed", ""},
      {"paths.model", ""},
      {"paths.resume_from", ""},
      {"paths.vocab_list", ""},
      {"paths.dataset", ""},
      {"paths.phrases_file", ""},
      {"paths.report", ""},
      {"paths.csv", ""},
      {"run.seed", "42"},
      {"run.workers", "1"},
      {"run.sentence_per_line", "true"},
      {"run.format", "binary"},
  };
  return keys;
}

inline const KeySpec& key_spec(const std::string& key) {
  for (const auto& k : known_keys()) {
    if (key == k.key) return k;
  }
  throw std::logic_error("unregistered config key " + key);
}

/// Parses an INI file into flat settings; rejects keys outside known_keys().
inline Settings read_config_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config file: " + path);
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::ini_parser::read_ini(is, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw FormatError("config " + path + ": " + e.message() + " (line " +
                      std::to_string(e.line()) + ")");
  }
  std::set<std::string> allowed;
  for (const auto& k : known_keys()) allowed.insert(k.key);
  Settings out;
  for (const auto& [section, body] : tree) {
    if (body.empty()) {
      throw UsageError("config " + path + ": key '" + section + "' is outside any section");
    }
    for (const auto& [key, value] : body) {
      const auto full = section + "." + key;
      if (!allowed.contains(full)) {
        throw UsageError("config " + path + ": unknown key [" + section + "] " + key);
      }
      out[full] = value.get_value<std::string>();
    }
  }
  return out;
}

template <class T>
T parse_value(const Settings& s, const std::string& key, T fallback) {
  auto it = s.find(key);
  if (it == s.end()) return fallback;
  if constexpr (std::is_same_v<T, bool>) {
    std::string v = it->second;
    std::transform(v.begin(), v.end(), v.begin(), [](unsigned char c) { return std::tolower(c); });
    if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
    if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  } else if constexpr (std::is_same_v<T, std::string>) {
    return it->second;
  } else {
    try {
      if constexpr (std::is_unsigned_v<T>) {
        if (it->second.find('-') != std::string::npos) throw boost::bad_lexical_cast();
      }
      return boost::lexical_cast<T>(it->second);
    } catch (const boost::bad_lexical_cast&) {
    }
  }
  throw UsageError("invalid value for " + key + ": '" + it->second + "'");
}

/// Typed view of the resolved settings.
struct RunConfig {
  PhraseConfig phrases;
  CbowConfig cbow;
  EncoderConfig encoder;
  int max_epochs = 200;
  std::uint64_t seed = 42;
  unsigned workers = 1;
  bool sentence_per_line = true;
  MatrixFormat format = MatrixFormat::binary;
  Settings raw;

  std::optional<std::string> path(const std::string& name) const {
    auto it = raw.find("paths." + name);
    if (it == raw.end() || it->second.empty()) return std::nullopt;
    return it->second;
  }

  std::string require_path(const std::string& name, const std::string& flag) const {
    auto p = path(name);
    if (!p) throw UsageError("missing " + flag + " (or [paths] " + name + " in --config)");
    return *p;
  }

  static RunConfig resolve(const Settings& s) {
    RunConfig rc;
    rc.raw = s;
    rc.seed = parse_value<std::uint64_t>(s, "run.seed", 42);
    rc.workers = parse_value<unsigned>(s, "run.workers", 1);
    if (rc.workers < 1) throw UsageError("--workers must be >= 1");
    rc.sentence_per_line = parse_value<bool>(s, "run.sentence_per_line", true);
    const auto fmt = parse_value<std::string>(s, "run.format", "binary");
    if (fmt == "binary") {
      rc.format = MatrixFormat::binary;
    } else if (fmt == "text") {
      rc.format = MatrixFormat::text;
    } else {
      throw UsageError("--format must be 'binary' or 'text', got '" + fmt + "'");
    }

    auto& p = rc.phrases;
    p.discount = parse_value(s, "phrases.discount", p.discount);
    p.threshold = parse_value(s, "phrases.threshold", p.threshold);
    p.passes = parse_value(s, "phrases.passes", p.passes);
    p.min_count = parse_value(s, "phrases.min_count", p.min_count);

    auto& c = rc.cbow;
    c.dim = parse_value(s, "cbow.dim", c.dim);
    c.window = parse_value(s, "cbow.window", c.window);
    c.negatives = parse_value(s, "cbow.negatives", c.negatives);
    c.epochs = parse_value(s, "cbow.epochs", c.epochs);
    c.learning_rate = parse_value(s, "cbow.learning_rate", c.learning_rate);
    c.min_count = parse_value(s, "cbow.min_count", c.min_count);
    c.subsample = parse_value(s, "cbow.subsample", c.subsample);
    c.seed = rc.seed;

    // Variant preset first, then explicit encoder keys on top.
    auto& e = rc.encoder;
    e = EncoderConfig::for_variant(parse_value<std::string>(s, "encoder.variant", "small"));
    e.hidden = parse_value(s, "encoder.hidden", e.hidden);
    e.layers = parse_value(s, "encoder.layers", e.layers);
    e.char_dim = parse_value(s, "encoder.char_dim", e.char_dim);
    e.dropout = parse_value(s, "encoder.dropout", e.dropout);
    e.learning_rate = parse_value(s, "encoder.learning_rate", e.learning_rate);
    e.weight_decay = parse_value(s, "encoder.weight_decay", e.weight_decay);
    e.batch_size = parse_value(s, "encoder.batch_size", e.batch_size);
    e.patience = parse_value(s, "encoder.patience", e.patience);
    e.max_len = parse_value(s, "encoder.max_len", e.max_len);
    e.max_chars = parse_value(s, "encoder.max_chars", e.max_chars);
    e.seed = rc.seed;
    rc.max_epochs = parse_value(s, "encoder.max_epochs", rc.max_epochs);
    return rc;
  }
};

/// Collects flag values for one subcommand. Each flag maps onto a config key;
/// after parsing, flags given on the command line override the file.
class Binder {
 public:
  explicit Binder(CLI::App* app) : app_(app) {}

  CLI::Option* bind(const std::string& flag, const std::string& key, const std::string& help) {
    auto& slot = values_[key];
    auto* opt = app_->add_option(flag, slot, help);
    const auto& spec = key_spec(key);
    if (*spec.default_value) opt->default_str(spec.default_value);
    bound_.emplace_back(opt, key);
    return opt;
  }

  CLI::Option* bind_flag(const std::string& flag, const std::string& key, const std::string& value,
                         const std::string& help) {
    auto* opt = app_->add_flag(flag, help);
    flags_.push_back({opt, key, value});
    return opt;
  }

  void overlay(Settings& s) const {
    for (const auto& [opt, key] : bound_) {
      if (opt->count() > 0) s[key] = values_.at(key);
    }
    for (const auto& f : flags_) {
      if (f.opt->count() > 0) s[f.key] = f.value;
    }
  }

 private:
  struct FlagBinding {
    CLI::Option* opt;
    std::string key;
    std::string value;
  };
  CLI::App* app_;
  std::map<std::string, std::string> values_;
  std::vector<std::pair<CLI::Option*, std::string>> bound_;
  std::vector<FlagBinding> flags_;
};

struct Streams {
  std::ostream& out;
  std::ostream& err;
  std::istream& in;
};

inline void write_json_file(const std::string& path, const nlohmann::json& j) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write report: " + path);
  os << j.dump(2) << '\n';
  if (!os) throw IoError("write failed: " + path);
}

inline std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path);
  std::vector<std::string> out;
  std::string line;
  while (std::getline(is, line)) {
    auto t = utf8::trim(line);
    if (!t.empty()) out.emplace_back(t);
  }
  return out;
}

inline void write_vec_row(std::ostream& os, std::string_view entry, std::span<const float> v) {
  std::string name(entry);
  std::replace(name.begin(), name.end(), ' ', '_');
  os << name;
  char buf[32];
  for (float x : v) {
    std::snprintf(buf, sizeof buf, " %.9g", static_cast<double>(x));
    os << buf;
  }
  os << '\n';
}

// ---------------------------------------------------------------------------
// Subcommands.

inline int cmd_extract_terms(const RunConfig& rc, Streams io) {
  const auto input = rc.require_path("corpus", "--input");
  const auto output = rc.require_path("corpus_out", "--output");
  if (rc.phrases.passes < 1) throw UsageError("--passes must be >= 1");
  auto corpus = read_corpus(input, rc.sentence_per_line);
  const auto tokens_in = corpus.token_count();
  auto res = extract_terms(std::move(corpus), rc.phrases, rc.workers);
  write_corpus(output, res.stream);

  PhraseTable all;
  all.discount = rc.phrases.discount;
  all.threshold = rc.phrases.threshold;
  for (const auto& t : res.tables) {
    for (const auto& [bg, score] : t.entries) all.entries.emplace(bg, score);
  }
  if (auto dump = rc.path("phrase_table")) {
    std::ofstream os(*dump);
    if (!os) throw IoError("cannot write phrase table: " + *dump);
    write_phrase_table(os, all);
  }
  io.out << "tokens_in: " << tokens_in << '\n'
         << "tokens_out: " << res.stream.token_count() << '\n'
         << "phrases: " << all.size() << '\n';
  return 0;
}

inline int cmd_train_embeddings(const RunConfig& rc, Streams io) {
  const auto corpus_path = rc.require_path("corpus", "--corpus");
  const auto output = rc.require_path("matrix", "--output");
  rc.cbow.validate();
  const auto corpus = read_corpus(corpus_path, rc.sentence_per_line);
  CbowStats stats;
  const auto m = train_cbow(corpus, rc.cbow, &stats);
  save_matrix(m, output, rc.format);
  io.out << "vocab_size: " << stats.vocab_size << '\n'
         << "tokens: " << stats.corpus_tokens << '\n'
         << "dim: " << m.dim() << '\n';
  return 0;
}

inline int cmd_train_encoder(const RunConfig& rc, Streams io) {
  const auto matrix_path = rc.require_path("matrix", "--matrix");
  const auto output = rc.require_path("model", "--output");
  const auto matrix = load_matrix(matrix_path);
  std::optional<CharEncoderModel> resume;
  if (auto r = rc.path("resume_from")) resume = load_model(*r);

  auto log = [&](int epoch, double loss, double val) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "epoch %d train_loss %.6f val_cosine %.6f\n", epoch, loss, val);
    io.err << buf << std::flush;
  };
  auto res = train_encoder(matrix, rc.encoder, rc.max_epochs, resume ? &*resume : nullptr, log);
  save_model(res.model, output);

  auto j = res.report.to_json();
  j["variant"] = res.model.config.variant;
  j["model_bytes"] = serialized_model_bytes(res.model);
  j["parameters"] = res.model.weights.parameter_count();
  if (auto report = rc.path("report")) write_json_file(*report, j);
  io.out << j.dump(2) << '\n';
  return 0;
}

inline int cmd_encode(const RunConfig& rc, const std::vector<std::string>& texts, Streams io) {
  const auto model = load_model(rc.require_path("model", "--model"));
  std::size_t failures = 0;
  std::size_t line_no = 0;
  auto one = [&](const std::string& text) {
    ++line_no;
    try {
      const auto v = model.encode(text);
      write_vec_row(io.out, utf8::trim(text), v);
    } catch (const FormatError& e) {
      ++failures;
      io.err << "line " << line_no << ": " << e.what() << '\n';
    }
  };
  if (!texts.empty()) {
    for (const auto& t : texts) one(t);
  } else {
    std::string line;
    while (std::getline(io.in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      one(line);
    }
  }
  io.out.flush();
  return failures == 0 ? 0 : static_cast<int>(ErrorKind::format);
}

inline int cmd_reconstruct(const RunConfig& rc, Streams io) {
  const auto model = load_model(rc.require_path("model", "--model"));
  const auto output = rc.require_path("reconstructed", "--output");
  std::optional<EmbeddingMatrix> original;
  std::vector<std::string> vocab;
  if (auto list = rc.path("vocab_list")) {
    vocab = read_lines(*list);
  } else {
    original = load_matrix(rc.require_path("matrix", "--vocab"));
    vocab = original->entries();
  }
  const auto res = reconstruct(model, vocab, rc.workers);
  save_matrix(res.matrix, output, rc.format);

  if (!res.skipped.empty()) {
    const auto side = output + ".skipped.tsv";
    std::ofstream os(side);
    if (!os) throw IoError("cannot write " + side);
    for (const auto& s : res.skipped) os << s.index << '\t' << s.entry << '\t' << s.reason << '\n';
    io.err << res.skipped.size() << " entries skipped, listed in " << side << '\n';
  }

  const auto model_bytes = serialized_model_bytes(model);
  nlohmann::json j;
  if (original && !res.matrix.empty()) {
    const auto kept = subset_rows(*original, res.matrix.entries());
    auto r = fidelity_report(kept, res.matrix, model_bytes);
    r.vocab_size = original->size();
    r.original_bytes = serialized_matrix_bytes(*original);
    r.compression_factor = compression_factor(static_cast<double>(r.original_bytes),
                                              static_cast<double>(model_bytes));
    r.skipped = res.skipped.size();
    j = r.to_json();
    io.out << r.to_text();
  } else {
    j = {{"vocab_size", vocab.size()},
         {"dim", model.dim()},
         {"model_bytes", model_bytes},
         {"reconstructed_bytes", serialized_matrix_bytes(res.matrix)},
         {"skipped", res.skipped.size()}};
    for (const auto& [key, value] : j.items()) io.out << key << ": " << value.dump() << '\n';
  }
  if (auto report = rc.path("report")) write_json_file(*report, j);
  return 0;
}

inline int cmd_eval(const RunConfig& rc, const std::string& mode, const std::string& policy_name,
                    bool json_stdout, Streams io) {
  SkipPolicy policy;
  if (policy_name == "skip") {
    policy = SkipPolicy::skip;
  } else if (policy_name == "zero") {
    policy = SkipPolicy::zero;
  } else {
    throw UsageError("--skip-policy must be 'skip' or 'zero'");
  }
  std::vector<EmbedMode> modes;
  if (mode == "original") {
    modes = {EmbedMode::original};
  } else if (mode == "reconstructed") {
    modes = {EmbedMode::reconstructed};
  } else if (mode == "contextual") {
    modes = {EmbedMode::contextual};
  } else if (mode == "all") {
    modes = {EmbedMode::original, EmbedMode::reconstructed, EmbedMode::contextual};
  } else {
    throw UsageError("--mode must be one of {original, reconstructed, contextual, all}");
  }

  // Validate inputs before loading anything.
  const auto matrix_path = rc.path("matrix");
  const auto recon_path = rc.path("reconstructed");
  const auto model_path = rc.path("model");
  for (auto m : modes) {
    if (m == EmbedMode::contextual && !model_path) {
      throw UsageError("contextual mode requires --model");
    }
    if (m == EmbedMode::original && !matrix_path) {
      throw UsageError("original mode requires --matrix");
    }
    if (m == EmbedMode::reconstructed && !recon_path && !(model_path && matrix_path)) {
      throw UsageError("reconstructed mode requires --reconstructed, or --model with --matrix");
    }
  }
  const auto ds = load_dataset(rc.require_path("dataset", "--dataset"));

  std::optional<EmbeddingMatrix> original, rebuilt;
  std::optional<CharEncoderModel> model;
  auto need_model = [&]() -> const CharEncoderModel& {
    if (!model) model = load_model(*model_path);
    return *model;
  };
  auto need_original = [&]() -> const EmbeddingMatrix& {
    if (!original) original = load_matrix(*matrix_path);
    return *original;
  };

  nlohmann::json reports = nlohmann::json::array();
  std::vector<EvalReport> results;
  for (auto m : modes) {
    EvalReport r;
    if (m == EmbedMode::original) {
      r = evaluate(EmbedderHandle::matrix_average(need_original(), m), ds, policy, rc.workers);
    } else if (m == EmbedMode::reconstructed) {
      if (!rebuilt) {
        if (recon_path) {
          rebuilt = load_matrix(*recon_path);
        } else {
          rebuilt = reconstruct(need_model(), need_original().entries(), rc.workers).matrix;
        }
      }
      r = evaluate(EmbedderHandle::matrix_average(*rebuilt, m), ds, policy, rc.workers);
    } else {
      r = evaluate(EmbedderHandle::char_encode(need_model()), ds, policy, rc.workers);
    }
    results.push_back(r);
    reports.push_back(r.to_json());
  }

  nlohmann::json doc = {{"dataset", rc.require_path("dataset", "--dataset")},
                        {"skip_policy", policy_name},
                        {"reports", reports}};
  if (json_stdout) {
    io.out << doc.dump(2) << '\n';
  } else {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-14s %9s %9s %9s %8s %7s\n", "mode", "pearson", "spearman",
                  "evaluated", "skipped", "total");
    io.out << buf;
    for (const auto& r : results) {
      std::snprintf(buf, sizeof buf, "%-14s %9.4f %9.4f %9zu %8zu %7zu\n", r.mode.c_str(),
                    r.pearson, r.spearman, r.evaluated, r.skipped, r.total);
      io.out << buf;
    }
  }
  if (auto report = rc.path("report")) write_json_file(*report, doc);
  return 0;
}

inline int cmd_bench(const RunConfig& rc, const std::string& mode, std::size_t warmup,
                     std::size_t iters, Streams io) {
  if (iters < 1) throw UsageError("--iters must be >= 1");
  if (mode != "lookup" && mode != "encode") {
    throw UsageError("--mode must be 'lookup' or 'encode'");
  }
  const auto phrases = read_lines(rc.require_path("phrases_file", "--phrases"));
  if (phrases.empty()) throw FormatError("phrases file has no non-empty lines");

  std::optional<EmbeddingMatrix> matrix;
  std::optional<CharEncoderModel> model;
  std::optional<EmbedderHandle> h;
  if (mode == "lookup") {
    matrix = load_matrix(rc.require_path("matrix", "--matrix"));
    h = EmbedderHandle::matrix_average(*matrix);
  } else {
    model = load_model(rc.require_path("model", "--model"));
    h = EmbedderHandle::char_encode(*model);
  }
  const auto stats = bench_latency(*h, phrases, warmup, iters);
  auto j = stats.to_json();
  j["mode"] = mode;
  io.out << j.dump() << '\n';
  if (auto csv = rc.path("csv")) {
    std::ofstream os(*csv);
    if (!os) throw IoError("cannot write " + *csv);
    stats.write_csv(os);
  }
  if (auto report = rc.path("report")) write_json_file(*report, j);
  return 0;
}

// ---------------------------------------------------------------------------

inline int run_cli(std::vector<std::string> args, Streams io) {
  CLI::App app{"charemb: static embeddings, phrase extraction and character-level distillation"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Expand help for every subcommand");

  std::string config_path;
  std::string seed, workers;
  app.add_option("--config", config_path, "INI config file; command-line flags override it");

  struct Sub {
    CLI::App* app;
    std::unique_ptr<Binder> binder;
  };
  std::vector<Sub> subs;
  auto make_sub = [&](const std::string& name, const std::string& desc) -> Binder& {
    auto* s = app.add_subcommand(name, desc);
    s->add_option("--config", config_path, "INI config file; command-line flags override it");
    auto b = std::make_unique<Binder>(s);
    b->bind("--seed", "run.seed", "Random seed");
    b->bind("--workers", "run.workers", "Worker threads (1 is deterministic)");
    subs.push_back({s, std::move(b)});
    return *subs.back().binder;
  };

  auto& ex = make_sub("extract-terms", "Merge collocations into underscore-joined terms");
  ex.bind("--input,-i", "paths.corpus", "Corpus text (plain or .gz)");
  ex.bind("--output,-o", "paths.corpus_out", "Merged corpus output");
  ex.bind("--phrases-out", "paths.phrase_table", "Phrase table dump (TSV)");
  ex.bind("--discount", "phrases.discount", "Score discount");
  ex.bind("--threshold", "phrases.threshold", "First-pass score threshold (halved each pass)");
  ex.bind("--passes", "phrases.passes", "Merge passes");
  ex.bind("--min-count", "phrases.min_count", "Minimum unigram/bigram count");
  ex.bind_flag("--paragraphs", "run.sentence_per_line", "false",
               "Treat blank-line separated paragraphs as sentences");

  auto& te = make_sub("train-embeddings", "Train CBOW embeddings on a corpus");
  te.bind("--corpus,-i", "paths.corpus", "Corpus text (plain or .gz)");
  te.bind("--output,-o", "paths.matrix", "Output matrix");
  te.bind("--format", "run.format", "Output format: binary or text");
  te.bind("--dim", "cbow.dim", "Embedding dimension");
  te.bind("--window", "cbow.window", "Context window");
  te.bind("--negatives", "cbow.negatives", "Negative samples");
  te.bind("--epochs", "cbow.epochs", "Epochs");
  te.bind("--learning-rate", "cbow.learning_rate", "Initial learning rate");
  te.bind("--min-count", "cbow.min_count", "Minimum word count");
  te.bind("--subsample", "cbow.subsample", "Subsampling threshold (0 disables)");
  te.bind_flag("--paragraphs", "run.sentence_per_line", "false",
               "Treat blank-line separated paragraphs as sentences");

  auto& tr = make_sub("train-encoder", "Distil a matrix into a character encoder");
  tr.bind("--matrix,-m", "paths.matrix", "Matrix to distil (CEMB or .vec)");
  tr.bind("--output,-o", "paths.model", "Output model (CENC)");
  tr.bind("--report", "paths.report", "Training report JSON");
  tr.bind("--resume-from", "paths.resume_from", "Continue from an existing model");
  tr.bind("--variant", "encoder.variant", "small, base or large");
  tr.bind("--max-epochs", "encoder.max_epochs", "Epoch limit");
  tr.bind("--hidden", "encoder.hidden", "LSTM hidden size (overrides variant)");
  tr.bind("--layers", "encoder.layers", "LSTM layers (overrides variant)");
  tr.bind("--char-dim", "encoder.char_dim", "Character embedding size");
  tr.bind("--dropout", "encoder.dropout", "Dropout");
  tr.bind("--learning-rate", "encoder.learning_rate", "Adam learning rate (overrides variant)");
  tr.bind("--weight-decay", "encoder.weight_decay", "Decoupled weight decay");
  tr.bind("--batch-size", "encoder.batch_size", "Batch size");
  tr.bind("--patience", "encoder.patience", "Early stopping patience");
  tr.bind("--max-len", "encoder.max_len", "Character truncation length");
  tr.bind("--max-chars", "encoder.max_chars", "Character vocabulary cap");

  std::vector<std::string> encode_texts;
  auto& en = make_sub("encode", "Encode phrases (arguments or stdin lines) as .vec rows");
  en.bind("--model,-m", "paths.model", "Model (CENC)");
  subs.back().app->add_option("text", encode_texts, "Phrases to encode; stdin lines if none");

  auto& rb = make_sub("reconstruct", "Rebuild a matrix from a model");
  rb.bind("--model,-m", "paths.model", "Model (CENC)");
  rb.bind("--vocab", "paths.matrix", "Vocabulary source matrix (also used for fidelity)");
  rb.bind("--vocab-list", "paths.vocab_list", "Plain vocabulary list, one entry per line");
  rb.bind("--output,-o", "paths.reconstructed", "Output matrix");
  rb.bind("--format", "run.format", "Output format: binary or text");
  rb.bind("--report", "paths.report", "Report JSON");

  std::string eval_mode = "all", skip_policy = "skip";
  bool eval_json = false;
  auto& ev = make_sub("eval", "Correlate phrase similarities with human scores");
  ev.bind("--dataset,-d", "paths.dataset", "CSV with anchor,target,score columns");
  ev.bind("--matrix", "paths.matrix", "Original matrix");
  ev.bind("--reconstructed", "paths.reconstructed", "Reconstructed matrix");
  ev.bind("--model", "paths.model", "Character encoder model");
  ev.bind("--report", "paths.report", "Report JSON");
  subs.back()
      .app->add_option("--mode", eval_mode, "original, reconstructed, contextual or all")
      ->capture_default_str();
  subs.back()
      .app->add_option("--skip-policy", skip_policy, "OOV pairs: skip or zero")
      ->capture_default_str();
  subs.back().app->add_flag("--json", eval_json, "Print the JSON document instead of a table");

  std::string bench_mode = "lookup";
  std::size_t warmup = 100, iters = 1000;
  auto& be = make_sub("bench", "Single-threaded per-call latency");
  be.bind("--phrases,-p", "paths.phrases_file", "Phrases, one per line");
  be.bind("--matrix", "paths.matrix", "Matrix for lookup mode");
  be.bind("--model", "paths.model", "Model for encode mode");
  be.bind("--csv", "paths.csv", "Raw per-call timings CSV");
  be.bind("--report", "paths.report", "Stats JSON");
  subs.back().app->add_option("--mode", bench_mode, "lookup or encode")->capture_default_str();
  subs.back().app->add_option("--warmup", warmup, "Untimed calls")->capture_default_str();
  subs.back().app->add_option("--iters", iters, "Timed calls")->capture_default_str();

  std::reverse(args.begin(), args.end());
  try {
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, io.out, io.err);
    return code == 0 ? 0 : static_cast<int>(ErrorKind::usage);
  }

  try {
    Settings settings;
    if (!config_path.empty()) settings = read_config_file(config_path);
    for (const auto& s : subs) {
      if (!s.app->parsed()) continue;
      s.binder->overlay(settings);
      const auto rc = RunConfig::resolve(settings);
      const auto name = s.app->get_name();
      if (name == "extract-terms") return cmd_extract_terms(rc, io);
      if (name == "train-embeddings") return cmd_train_embeddings(rc, io);
      if (name == "train-encoder") return cmd_train_encoder(rc, io);
      if (name == "encode") return cmd_encode(rc, encode_texts, io);
      if (name == "reconstruct") return cmd_reconstruct(rc, io);
      if (name == "eval") return cmd_eval(rc, eval_mode, skip_policy, eval_json, io);
      if (name == "bench") return cmd_bench(rc, bench_mode, warmup, iters, io);
    }
    throw UsageError("no subcommand");
  } catch (const Error& e) {
    io.err << "error: " << e.what() << '\n';
    return e.exit_code();
  } catch (const std::exception& e) {
    io.err << "error: " << e.what() << '\n';
    return static_cast<int>(ErrorKind::numeric);
  }
}

}  // namespace charemb::cli

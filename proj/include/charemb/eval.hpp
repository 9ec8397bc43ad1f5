#pragma once

// Phrase-similarity evaluation (Pearson / Spearman of cosine similarity vs.
// human scores) and batch-size-1 latency benchmarking.

#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "charemb/char_encoder.hpp"
#include "charemb/embedding_matrix.hpp"
#include "charemb/error.hpp"
#include "charemb/reconstruct.hpp"
#include "charemb/vector_math.hpp"

namespace charemb {

// ---------------------------------------------------------------------------
// Dataset.

struct SimilarityRecord {
  std::string anchor;
  std::string target;
  double score = 0.0;
};

struct SimilarityDataset {
  std::vector<SimilarityRecord> records;
  std::size_t size() const { return records.size(); }
};

namespace detail {

/// Splits one CSV record. Quoted fields may contain commas, doubled quotes
/// and newlines; `more` pulls the next physical line for the latter.
template <class NextLine>
std::vector<std::string> parse_csv_record(std::string line, NextLine&& more) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  std::size_t i = 0;
  while (true) {
    if (i == line.size()) {
      if (quoted) {
        std::string next;
        if (!more(next)) throw FormatError("unterminated quoted CSV field");
        cur.push_back('\n');
        line = std::move(next);
        i = 0;
        continue;
      }
      break;
    }
    const char c = line[i++];
    if (quoted) {
      if (c == '"') {
        if (i < line.size() && line[i] == '"') {
          cur.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  fields.push_back(std::move(cur));
  return fields;
}

}  // namespace detail

/// CSV with a header containing anchor, target and score columns; other
/// columns are ignored. Scores must lie in [0, 1].
inline SimilarityDataset read_dataset(std::istream& is) {
  std::size_t lineno = 0;
  auto next = [&](std::string& out) {
    if (!std::getline(is, out)) return false;
    ++lineno;
    if (!out.empty() && out.back() == '\r') out.pop_back();
    return true;
  };
  std::string line;
  if (!next(line)) throw FormatError("dataset is empty");
  if (line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
  const auto header = detail::parse_csv_record(line, next);
  auto column = [&](std::string_view name) {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (utf8::trim(header[i]) == name) return i;
    }
    throw FormatError("dataset is missing required column '" + std::string(name) + "'");
  };
  const auto ca = column("anchor"), ct = column("target"), cs = column("score");
  const auto need = std::max({ca, ct, cs}) + 1;

  SimilarityDataset ds;
  while (next(line)) {
    const auto at = lineno;
    if (utf8::trim(line).empty()) continue;
    const auto f = detail::parse_csv_record(line, next);
    if (f.size() < need) {
      throw FormatError("dataset line " + std::to_string(at) + ": expected at least " +
                        std::to_string(need) + " fields, got " + std::to_string(f.size()));
    }
    const std::string s(utf8::trim(f[cs]));
    double score;
    try {
      std::size_t used = 0;
      score = std::stod(s, &used);
      if (used != s.size()) throw std::invalid_argument(s);
    } catch (const std::logic_error&) {
      throw FormatError("dataset line " + std::to_string(at) + ": unparseable score '" + s + "'");
    }
    if (!std::isfinite(score) || score < 0.0 || score > 1.0) {
      throw FormatError("dataset line " + std::to_string(at) + ": score " + s +
                        " outside [0, 1]");
    }
    ds.records.push_back({f[ca], f[ct], score});
  }
  return ds;
}

inline SimilarityDataset load_dataset(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open dataset: " + path);
  return read_dataset(is);
}

// ---------------------------------------------------------------------------
// Correlation, computed in double.

inline double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw NumericError("pearson: length mismatch");
  if (x.size() < 2) throw NumericError("pearson: need at least 2 points");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (!(sxx > 0) || !(syy > 0)) throw NumericError("undefined correlation: zero variance input");
  return sxy / std::sqrt(sxx * syy);
}

/// 1-based ranks; ties get the mean of the positions they span.
inline std::vector<double> average_ranks(std::span<const double> x) {
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return x[a] < x[b]; });
  std::vector<double> ranks(x.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (auto t = i; t <= j; ++t) ranks[order[t]] = r;
    i = j + 1;
  }
  return ranks;
}

inline double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw NumericError("spearman: length mismatch");
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  return pearson(rx, ry);
}

// ---------------------------------------------------------------------------
// Embedders.

enum class EmbedMode { original, reconstructed, contextual };

inline std::string_view mode_name(EmbedMode m) {
  switch (m) {
    case EmbedMode::original: return "original";
    case EmbedMode::reconstructed: return "reconstructed";
    case EmbedMode::contextual: return "contextual";
  }
  return "?";
}

/// One embedding path per phrase: unigram averaging over a matrix for the
/// two matrix modes, the character encoder for contextual mode.
class EmbedderHandle {
 public:
  static EmbedderHandle matrix_average(const EmbeddingMatrix& m,
                                       EmbedMode mode = EmbedMode::original) {
    if (mode == EmbedMode::contextual) throw UsageError("contextual mode needs a model");
    EmbedderHandle h;
    h.mode_ = mode;
    h.matrix_ = &m;
    return h;
  }

  static EmbedderHandle char_encode(const CharEncoderModel& model) {
    EmbedderHandle h;
    h.mode_ = EmbedMode::contextual;
    h.model_ = &model;
    return h;
  }

  EmbedMode mode() const { return mode_; }

  std::optional<std::vector<float>> embed(std::string_view phrase) const {
    if (model_) return model_->encode(phrase);
    return compose_average(*matrix_, phrase);
  }

  /// Exact-entry lookup, used by the latency benchmark's matrix path.
  std::optional<std::span<const float>> lookup(const std::string& entry) const {
    if (!matrix_) return std::nullopt;
    return matrix_->lookup(entry);
  }

 private:
  EmbedMode mode_ = EmbedMode::original;
  const EmbeddingMatrix* matrix_ = nullptr;
  const CharEncoderModel* model_ = nullptr;
};

inline std::optional<std::vector<float>> embed_phrase(const EmbedderHandle& h,
                                                      std::string_view phrase) {
  return h.embed(phrase);
}

enum class SkipPolicy { skip, zero };

struct EvalReport {
  std::string mode;
  double pearson = 0.0;
  double spearman = 0.0;
  std::size_t evaluated = 0;
  std::size_t skipped = 0;
  std::size_t total = 0;
  double mean_embed_micros = 0.0;

  nlohmann::json to_json() const {
    return {{"mode", mode},         {"pearson", pearson},   {"spearman", spearman},
            {"evaluated", evaluated}, {"skipped", skipped}, {"total", total},
            {"mean_embed_micros", mean_embed_micros}};
  }
};

/// Cosine of each pair's embeddings against the gold score. Pairs with an
/// absent side are dropped and counted as skipped (skip) or scored 0 (zero).
/// Embedding runs on `workers` threads.
inline EvalReport evaluate(const EmbedderHandle& h, const SimilarityDataset& ds,
                           SkipPolicy policy = SkipPolicy::skip, unsigned workers = 1) {
  const auto n = ds.size();
  std::vector<std::optional<double>> predicted(n);
  std::vector<double> micros(n, 0.0);
  auto work = [&](std::size_t b, std::size_t e) {
    for (auto i = b; i < e; ++i) {
      const auto t0 = std::chrono::steady_clock::now();
      auto ea = h.embed(ds.records[i].anchor);
      auto et = h.embed(ds.records[i].target);
      micros[i] = std::chrono::duration<double, std::micro>(std::chrono::steady_clock::now() - t0)
                      .count() / 2.0;
      if (ea && et) predicted[i] = cosine(*ea, *et);
    }
  };
  workers = std::max(1u, workers);
  if (workers == 1 || n < 2 * workers) {
    work(0, n);
  } else {
    std::vector<std::thread> pool;
    const auto chunk = (n + workers - 1) / workers;
    for (unsigned w = 0; w < workers; ++w) {
      pool.emplace_back(work, std::min(n, w * chunk), std::min(n, (w + 1) * chunk));
    }
    for (auto& t : pool) t.join();
  }

  EvalReport r;
  r.mode = std::string(mode_name(h.mode()));
  r.total = n;
  std::vector<double> pred, gold;
  for (std::size_t i = 0; i < n; ++i) {
    if (predicted[i]) {
      pred.push_back(*predicted[i]);
      gold.push_back(ds.records[i].score);
    } else if (policy == SkipPolicy::zero) {
      pred.push_back(0.0);
      gold.push_back(ds.records[i].score);
    } else {
      ++r.skipped;
    }
  }
  r.evaluated = pred.size();
  if (r.evaluated < 2) {
    throw NumericError("fewer than 2 evaluable pairs (" + std::to_string(r.evaluated) + " of " +
                       std::to_string(n) + ")");
  }
  r.pearson = pearson(pred, gold);
  r.spearman = spearman(pred, gold);
  r.mean_embed_micros = n ? std::accumulate(micros.begin(), micros.end(), 0.0) / n : 0.0;
  return r;
}

// ---------------------------------------------------------------------------
// Latency.

struct LatencyStats {
  double mean_us = 0.0;
  double p50_us = 0.0;
  double p99_us = 0.0;
  std::size_t calls = 0;
  std::vector<double> samples_us;

  nlohmann::json to_json() const {
    return {{"mean_us", mean_us}, {"p50_us", p50_us}, {"p99_us", p99_us}, {"calls", calls}};
  }

  void write_csv(std::ostream& os) const {
    os << "call,micros\n";
    char buf[64];
    for (std::size_t i = 0; i < samples_us.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%zu,%.4f\n", i, samples_us[i]);
      os << buf;
    }
  }
};

/// Sequential, single-threaded, one phrase per call. Each of the `iters`
/// timed calls cycles through `phrases`. In matrix modes the call is an
/// exact lookup of the phrase with averaging fallback; in contextual mode it
/// is a batch-of-one encoder forward pass.
inline LatencyStats bench_latency(const EmbedderHandle& h, const std::vector<std::string>& phrases,
                                  std::size_t warmup = 100, std::size_t iters = 1000) {
  if (iters < 1) throw UsageError("bench: iters must be >= 1");
  if (phrases.empty()) throw UsageError("bench: no phrases");
  volatile float sink = 0.0f;
  auto call = [&](const std::string& p) {
    if (h.mode() != EmbedMode::contextual) {
      if (auto row = h.lookup(p)) {
        sink = sink + (*row)[0];
        return;
      }
    }
    if (auto v = h.embed(p)) sink = sink + (*v)[0];
  };
  for (std::size_t i = 0; i < warmup; ++i) call(phrases[i % phrases.size()]);
  LatencyStats s;
  s.samples_us.reserve(iters);
  for (std::size_t i = 0; i < iters; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    call(phrases[i % phrases.size()]);
    const auto t1 = std::chrono::steady_clock::now();
    s.samples_us.push_back(std::chrono::duration<double, std::micro>(t1 - t0).count());
  }
  s.calls = iters;
  s.mean_us = std::accumulate(s.samples_us.begin(), s.samples_us.end(), 0.0) /
              static_cast<double>(iters);
  s.p50_us = percentile(s.samples_us, 0.50);
  s.p99_us = percentile(s.samples_us, 0.99);
  return s;
}

}  // namespace charemb

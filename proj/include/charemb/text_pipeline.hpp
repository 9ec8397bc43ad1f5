#pragma once

// Tokenization, corpus counting and collocation merging. Multiword terms are
// rewritten as single underscore-joined tokens ("machine learning" ->
// "machine_learning") so that downstream embedding training gives them their
// own vocabulary entry.

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <functional>
#include <limits>
#include <string>
#include <string_view>
#include <thread>
#include <unordered_map>
#include <utility>
#include <vector>

#include "charemb/error.hpp"
#include "charemb/random.hpp"
#include "charemb/utf8.hpp"

namespace charemb {

using Sentence = std::vector<std::string>;

struct TokenStream {
  std::vector<Sentence> sentences;

  std::size_t token_count() const {
    std::size_t n = 0;
    for (const auto& s : sentences) n += s.size();
    return n;
  }
  bool operator==(const TokenStream&) const = default;
};

using Bigram = std::pair<std::string, std::string>;

struct BigramHash {
  std::size_t operator()(const Bigram& b) const noexcept {
    const auto h1 = std::hash<std::string>{}(b.first);
    const auto h2 = std::hash<std::string>{}(b.second);
    return h1 ^ (h2 + 0x9E3779B97F4A7C15ULL + (h1 << 6) + (h1 >> 2));
  }
};

struct VocabCounts {
  std::unordered_map<std::string, std::uint64_t> unigrams;
  std::unordered_map<Bigram, std::uint64_t, BigramHash> bigrams;
  std::uint64_t total_tokens = 0;

  /// Commutative merge of shard counts.
  void merge(const VocabCounts& other) {
    for (const auto& [w, c] : other.unigrams) unigrams[w] += c;
    for (const auto& [b, c] : other.bigrams) bigrams[b] += c;
    total_tokens += other.total_tokens;
  }

  /// Drops entries below min_count, then bigrams with a pruned constituent.
  void prune(std::uint64_t min_count) {
    std::erase_if(unigrams, [&](const auto& kv) { return kv.second < min_count; });
    std::erase_if(bigrams, [&](const auto& kv) {
      return kv.second < min_count || !unigrams.contains(kv.first.first) ||
             !unigrams.contains(kv.first.second);
    });
    total_tokens = 0;
    for (const auto& [w, c] : unigrams) total_tokens += c;
  }

  std::uint64_t unigram(const std::string& w) const {
    auto it = unigrams.find(w);
    return it == unigrams.end() ? 0 : it->second;
  }
  std::uint64_t bigram(const std::string& a, const std::string& b) const {
    auto it = bigrams.find(Bigram{a, b});
    return it == bigrams.end() ? 0 : it->second;
  }
  bool operator==(const VocabCounts&) const = default;
};

struct PhraseTable {
  std::unordered_map<Bigram, double, BigramHash> entries;
  double discount = 5.0;
  double threshold = 1e-4;

  bool contains(const std::string& a, const std::string& b) const {
    return entries.contains(Bigram{a, b});
  }
  std::size_t size() const { return entries.size(); }
};

struct PhraseConfig {
  double discount = 5.0;
  double threshold = 1e-4;  // first pass; halved on every further pass
  int passes = 2;
  std::uint64_t min_count = 5;
};

// ---------------------------------------------------------------------------

/// Lowercased tokens; anything other than a letter, digit, '-' or '_' splits.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string cur;
  for (char32_t c : utf8::decode(text)) {
    if (utf8::is_word_char(c) || c == '-' || c == '_') {
      utf8::append(cur, utf8::to_lower(c));
    } else if (!cur.empty()) {
      tokens.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) tokens.push_back(std::move(cur));
  return tokens;
}

inline VocabCounts count_raw(const TokenStream& stream, std::size_t begin = 0,
                             std::size_t end = std::numeric_limits<std::size_t>::max()) {
  VocabCounts counts;
  end = std::min(end, stream.sentences.size());
  for (std::size_t s = begin; s < end; ++s) {
    const auto& sent = stream.sentences[s];
    for (std::size_t i = 0; i < sent.size(); ++i) {
      ++counts.unigrams[sent[i]];
      if (i + 1 < sent.size()) ++counts.bigrams[Bigram{sent[i], sent[i + 1]}];
    }
    counts.total_tokens += sent.size();
  }
  return counts;
}

/// Counts unigrams and within-sentence adjacent bigrams, then prunes entries
/// below min_count. With workers > 1 the stream is sharded and merged.
inline VocabCounts count_corpus(const TokenStream& stream, std::uint64_t min_count,
                                unsigned workers = 1) {
  if (min_count < 1) throw UsageError("min_count must be >= 1");
  VocabCounts total;
  const auto n = stream.sentences.size();
  if (workers <= 1 || n < 2 * workers) {
    total = count_raw(stream);
  } else {
    std::vector<VocabCounts> shards(workers);
    std::vector<std::thread> pool;
    const auto chunk = (n + workers - 1) / workers;
    for (unsigned w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] { shards[w] = count_raw(stream, w * chunk, (w + 1) * chunk); });
    }
    for (auto& t : pool) t.join();
    for (const auto& s : shards) total.merge(s);
  }
  total.prune(min_count);
  return total;
}

/// (count(a,b) - discount) / (count(a) * count(b)); absent bigrams count 0.
inline double score_bigram(const VocabCounts& counts, const std::string& a,
                           const std::string& b, double discount) {
  const auto ca = counts.unigrams.find(a);
  const auto cb = counts.unigrams.find(b);
  if (ca == counts.unigrams.end()) throw FormatError("unigram not counted: " + a);
  if (cb == counts.unigrams.end()) throw FormatError("unigram not counted: " + b);
  const double cab = static_cast<double>(counts.bigram(a, b));
  return (cab - discount) /
         (static_cast<double>(ca->second) * static_cast<double>(cb->second));
}

inline PhraseTable build_phrase_table(const VocabCounts& counts, double discount,
                                      double threshold) {
  if (std::isnan(threshold)) throw UsageError("phrase threshold must not be NaN");
  PhraseTable table;
  table.discount = discount;
  table.threshold = threshold;
  for (const auto& [bg, c] : counts.bigrams) {
    const double s = score_bigram(counts, bg.first, bg.second, discount);
    if (s > threshold) table.entries.emplace(bg, s);
  }
  return table;
}

/// Greedy left-to-right merging of adjacent pairs found in the table. A token
/// consumed by a merge is not reconsidered within the same pass.
inline TokenStream merge_phrases(const TokenStream& stream, const PhraseTable& table,
                                 int passes = 1) {
  if (passes < 1) throw UsageError("passes must be >= 1");
  TokenStream cur = stream;
  if (table.entries.empty()) return cur;
  for (int p = 0; p < passes; ++p) {
    for (auto& sent : cur.sentences) {
      Sentence out;
      out.reserve(sent.size());
      std::size_t i = 0;
      while (i < sent.size()) {
        if (i + 1 < sent.size() && table.contains(sent[i], sent[i + 1])) {
          out.push_back(sent[i] + "_" + sent[i + 1]);
          i += 2;
        } else {
          out.push_back(std::move(sent[i]));
          ++i;
        }
      }
      sent = std::move(out);
    }
  }
  return cur;
}

struct ExtractionResult {
  TokenStream stream;
  std::vector<PhraseTable> tables;  // one per pass
};

/// Multi-pass term extraction: recount, rescore and merge once per pass, with
/// the threshold halved after each pass so longer terms can form.
inline ExtractionResult extract_terms(TokenStream stream, const PhraseConfig& cfg,
                                      unsigned workers = 1) {
  if (cfg.passes < 1) throw UsageError("passes must be >= 1");
  if (cfg.discount < 0) throw UsageError("discount must be >= 0");
  ExtractionResult res;
  double threshold = cfg.threshold;
  for (int p = 0; p < cfg.passes; ++p) {
    const auto counts = count_corpus(stream, cfg.min_count, workers);
    auto table = build_phrase_table(counts, cfg.discount, threshold);
    stream = merge_phrases(stream, table, 1);
    res.tables.push_back(std::move(table));
    threshold /= 2.0;
  }
  res.stream = std::move(stream);
  return res;
}

// ---------------------------------------------------------------------------
// Synthetic corpus with planted co-occurrence clusters.

struct SyntheticCorpusShape {
  int words_per_cluster = 12;
  int filler_words = 8;
  int min_len = 8;
  int max_len = 16;
  double filler_rate = 0.25;
};

inline std::string synthetic_cluster_word(int cluster, int j) {
  return "c" + std::to_string(cluster) + "w" + std::to_string(j);
}

/// Cluster id of a synthetic token, or -1 for filler tokens.
inline int synthetic_cluster_of(std::string_view token) {
  if (token.size() < 4 || token[0] != 'c') return -1;
  const auto w = token.find('w');
  if (w == std::string_view::npos) return -1;
  return std::stoi(std::string(token.substr(1, w - 1)));
}

inline TokenStream generate_synthetic_corpus(std::uint64_t seed, int n_clusters,
                                             int sentences,
                                             const SyntheticCorpusShape& shape = {}) {
  if (n_clusters < 2) throw UsageError("n_clusters must be >= 2");
  if (sentences < 1) throw UsageError("sentences must be >= 1");
  Rng rng(seed);
  TokenStream out;
  out.sentences.reserve(sentences);
  const auto span = static_cast<std::uint64_t>(shape.max_len - shape.min_len + 1);
  for (int s = 0; s < sentences; ++s) {
    const int cluster = static_cast<int>(rng.below(n_clusters));
    const int len = shape.min_len + static_cast<int>(rng.below(span));
    Sentence sent;
    sent.reserve(len);
    for (int i = 0; i < len; ++i) {
      if (rng.uniform() < shape.filler_rate) {
        sent.push_back("f" + std::to_string(rng.below(shape.filler_words)));
      } else {
        sent.push_back(synthetic_cluster_word(
            cluster, static_cast<int>(rng.below(shape.words_per_cluster))));
      }
    }
    out.sentences.push_back(std::move(sent));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Corpus and phrase-table files.

namespace detail {

inline bool read_line(gzFile f, std::string& line) {
  line.clear();
  char buf[1 << 14];
  while (gzgets(f, buf, sizeof buf) != nullptr) {
    line.append(buf);
    if (!line.empty() && line.back() == '\n') {
      line.pop_back();
      if (!line.empty() && line.back() == '\r') line.pop_back();
      return true;
    }
  }
  return !line.empty();
}

}  // namespace detail

/// Reads a UTF-8 corpus, plain or gzip-compressed. In sentence-per-line mode
/// every non-empty line is a sentence; otherwise blank-line separated blocks
/// are.
inline TokenStream read_corpus(const std::string& path, bool sentence_per_line = true) {
  gzFile f = gzopen(path.c_str(), "rb");
  if (f == nullptr) throw IoError("cannot open corpus: " + path);
  TokenStream out;
  std::string line;
  Sentence block;
  while (detail::read_line(f, line)) {
    auto toks = tokenize(line);
    if (sentence_per_line) {
      if (!toks.empty()) out.sentences.push_back(std::move(toks));
    } else if (toks.empty() && utf8::trim(line).empty()) {
      if (!block.empty()) out.sentences.push_back(std::move(block));
      block.clear();
    } else {
      block.insert(block.end(), std::make_move_iterator(toks.begin()),
                   std::make_move_iterator(toks.end()));
    }
  }
  if (!block.empty()) out.sentences.push_back(std::move(block));
  const int err = gzclose(f);
  if (err != Z_OK) throw IoError("error reading corpus: " + path);
  return out;
}

inline void write_corpus(const std::string& path, const TokenStream& stream) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write corpus: " + path);
  for (const auto& sent : stream.sentences) {
    for (std::size_t i = 0; i < sent.size(); ++i) {
      if (i) os << ' ';
      os << sent[i];
    }
    os << '\n';
  }
  if (!os) throw IoError("error writing corpus: " + path);
}

/// "token_a<TAB>token_b<TAB>score" lines, sorted by descending score.
inline void write_phrase_table(std::ostream& os, const PhraseTable& table) {
  std::vector<std::pair<Bigram, double>> rows(table.entries.begin(), table.entries.end());
  std::sort(rows.begin(), rows.end(), [](const auto& x, const auto& y) {
    return x.second != y.second ? x.second > y.second : x.first < y.first;
  });
  char buf[64];
  for (const auto& [bg, score] : rows) {
    std::snprintf(buf, sizeof buf, "%.9g", score);
    os << bg.first << '\t' << bg.second << '\t' << buf << '\n';
  }
}

inline PhraseTable read_phrase_table(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open phrase table: " + path);
  PhraseTable table;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto t1 = line.find('\t');
    const auto t2 = t1 == std::string::npos ? t1 : line.find('\t', t1 + 1);
    if (t2 == std::string::npos) {
      throw FormatError("phrase table line " + std::to_string(lineno) + ": expected 3 fields");
    }
    try {
      table.entries[Bigram{line.substr(0, t1), line.substr(t1 + 1, t2 - t1 - 1)}] =
          std::stod(line.substr(t2 + 1));
    } catch (const std::logic_error&) {
      throw FormatError("phrase table line " + std::to_string(lineno) + ": bad score");
    }
  }
  return table;
}

}  // namespace charemb

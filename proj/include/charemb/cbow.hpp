#pragma once

// CBOW with negative sampling, single worker, following the reference
// word2vec update rules.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "charemb/embedding_matrix.hpp"
#include "charemb/error.hpp"
#include "charemb/random.hpp"
#include "charemb/text_pipeline.hpp"

namespace charemb {

struct CbowConfig {
  std::size_t dim = 200;
  int window = 8;
  int negatives = 5;
  int epochs = 25;
  double learning_rate = 0.025;
  std::uint64_t min_count = 5;
  double subsample = 1e-4;  // <= 0 disables subsampling
  std::uint64_t seed = 42;

  void validate() const {
    if (dim < 1) throw UsageError("cbow: dim must be >= 1");
    if (window < 1) throw UsageError("cbow: window must be >= 1");
    if (negatives < 1) throw UsageError("cbow: negatives must be >= 1");
    if (epochs < 1) throw UsageError("cbow: epochs must be >= 1");
    if (!(learning_rate > 0)) throw UsageError("cbow: learning rate must be > 0");
    if (min_count < 1) throw UsageError("cbow: min_count must be >= 1");
  }
};

/// Draws indices with probability proportional to count^power.
class NegativeSampler {
 public:
  explicit NegativeSampler(std::span<const std::uint64_t> counts, double power = 0.75) {
    if (counts.empty()) throw NumericError("negative sampler needs a non-empty vocabulary");
    weights_.reserve(counts.size());
    for (auto c : counts) weights_.push_back(std::pow(static_cast<double>(c), power));
    cumulative_.resize(weights_.size());
    std::partial_sum(weights_.begin(), weights_.end(), cumulative_.begin());
    total_ = cumulative_.back();
  }

  std::size_t sample(Rng& rng) const {
    const double u = rng.uniform() * total_;
    auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), u);
    if (it == cumulative_.end()) --it;
    return static_cast<std::size_t>(it - cumulative_.begin());
  }

  double probability(std::size_t i) const { return weights_[i] / total_; }
  std::size_t size() const { return weights_.size(); }

 private:
  std::vector<double> weights_;
  std::vector<double> cumulative_;
  double total_ = 0;
};

struct CbowStats {
  std::size_t vocab_size = 0;
  std::uint64_t corpus_tokens = 0;    // before min_count pruning
  std::uint64_t retained_tokens = 0;  // after pruning
};

inline EmbeddingMatrix train_cbow(const TokenStream& stream, const CbowConfig& cfg,
                                  CbowStats* stats = nullptr) {
  cfg.validate();
  const auto raw_tokens = stream.token_count();
  const auto counts = count_corpus(stream, cfg.min_count);
  if (counts.unigrams.empty()) {
    throw FormatError("empty vocabulary: no token reaches min_count " +
                      std::to_string(cfg.min_count));
  }

  // Vocabulary by descending count, ties lexicographic.
  std::vector<std::pair<std::string, std::uint64_t>> vocab(counts.unigrams.begin(),
                                                           counts.unigrams.end());
  std::sort(vocab.begin(), vocab.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  std::unordered_map<std::string, std::uint32_t> ids;
  std::vector<std::uint64_t> freq;
  for (std::size_t i = 0; i < vocab.size(); ++i) {
    ids.emplace(vocab[i].first, static_cast<std::uint32_t>(i));
    freq.push_back(vocab[i].second);
  }

  std::vector<std::vector<std::uint32_t>> corpus;
  corpus.reserve(stream.sentences.size());
  for (const auto& s : stream.sentences) {
    std::vector<std::uint32_t> ids_s;
    for (const auto& t : s) {
      auto it = ids.find(t);
      if (it != ids.end()) ids_s.push_back(it->second);
    }
    if (!ids_s.empty()) corpus.push_back(std::move(ids_s));
  }

  const std::size_t V = vocab.size();
  const std::size_t k = cfg.dim;
  const double total_words = static_cast<double>(counts.total_tokens);
  Rng rng(cfg.seed);

  std::vector<float> syn0(V * k);
  for (auto& x : syn0) x = static_cast<float>((rng.uniform() - 0.5) / static_cast<double>(k));
  std::vector<float> syn1(V * k, 0.0f);

  std::vector<double> keep_prob(V, 1.0);
  if (cfg.subsample > 0) {
    for (std::size_t i = 0; i < V; ++i) {
      const double f = static_cast<double>(freq[i]) / total_words;
      keep_prob[i] = std::min(1.0, std::sqrt(cfg.subsample / f));
    }
  }

  const NegativeSampler sampler(freq);
  const double scheduled = total_words * cfg.epochs;
  double processed = 0;
  std::vector<float> hidden(k), grad_hidden(k);
  std::vector<std::uint32_t> sent;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (const auto& raw : corpus) {
      const double progress = processed / scheduled;
      const float lr = static_cast<float>(cfg.learning_rate * (1.0 - progress * (1.0 - 1e-4)));
      processed += static_cast<double>(raw.size());

      sent.clear();
      for (auto w : raw) {
        if (keep_prob[w] >= 1.0 || rng.uniform() < keep_prob[w]) sent.push_back(w);
      }
      const auto n = static_cast<std::ptrdiff_t>(sent.size());
      for (std::ptrdiff_t pos = 0; pos < n; ++pos) {
        const auto lo = std::max<std::ptrdiff_t>(0, pos - cfg.window);
        const auto hi = std::min<std::ptrdiff_t>(n - 1, pos + cfg.window);
        const std::size_t ctx = static_cast<std::size_t>(hi - lo);
        if (ctx == 0) continue;

        std::fill(hidden.begin(), hidden.end(), 0.0f);
        for (auto c = lo; c <= hi; ++c) {
          if (c == pos) continue;
          const float* v = &syn0[sent[c] * k];
          for (std::size_t j = 0; j < k; ++j) hidden[j] += v[j];
        }
        const float inv = 1.0f / static_cast<float>(ctx);
        for (auto& h : hidden) h *= inv;
        std::fill(grad_hidden.begin(), grad_hidden.end(), 0.0f);

        const auto center = sent[pos];
        for (int d = 0; d <= cfg.negatives; ++d) {
          std::size_t target;
          float label;
          if (d == 0) {
            target = center;
            label = 1.0f;
          } else {
            target = sampler.sample(rng);
            if (target == center) continue;
            label = 0.0f;
          }
          float* out = &syn1[target * k];
          float f = 0;
          for (std::size_t j = 0; j < k; ++j) f += hidden[j] * out[j];
          const float g = (label - 1.0f / (1.0f + std::exp(-f))) * lr;
          for (std::size_t j = 0; j < k; ++j) grad_hidden[j] += g * out[j];
          for (std::size_t j = 0; j < k; ++j) out[j] += g * hidden[j];
        }
        // Reference word2vec adds the hidden-layer gradient to every context
        // vector undivided.
        for (auto c = lo; c <= hi; ++c) {
          if (c == pos) continue;
          float* v = &syn0[sent[c] * k];
          for (std::size_t j = 0; j < k; ++j) v[j] += grad_hidden[j];
        }
      }
    }
  }

  EmbeddingMatrix m(k);
  m.reserve(V);
  for (std::size_t i = 0; i < V; ++i) {
    m.add(vocab[i].first, std::span<const float>(&syn0[i * k], k));
  }
  if (stats) {
    stats->vocab_size = V;
    stats->corpus_tokens = raw_tokens;
    stats->retained_tokens = counts.total_tokens;
  }
  return m;
}

}  // namespace charemb

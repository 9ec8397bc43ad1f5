#pragma once

// Distillation loop: fit a CharEncoderModel so that encode(entry) has high
// cosine similarity with the entry's row of an embedding matrix.

#include <nlohmann/json.hpp>

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "charemb/adam.hpp"
#include "charemb/char_encoder.hpp"
#include "charemb/embedding_matrix.hpp"
#include "charemb/error.hpp"
#include "charemb/random.hpp"
#include "charemb/vector_math.hpp"

namespace charemb {

struct TrainReport {
  int epochs_run = 0;
  int best_epoch = 0;  // 1-based; 0 if no epoch ran
  double best_val_cosine = -std::numeric_limits<double>::infinity();
  std::vector<double> train_loss;
  std::vector<double> val_cosine;
  double seconds = 0.0;
  std::size_t train_size = 0;
  std::size_t val_size = 0;
  std::size_t excluded_zero_norm = 0;
  std::size_t excluded_unencodable = 0;
  std::vector<std::size_t> val_rows;  // matrix rows used for validation

  nlohmann::json to_json() const {
    return {{"epochs_run", epochs_run},
            {"best_epoch", best_epoch},
            {"best_val_cosine", best_val_cosine},
            {"train_loss", train_loss},
            {"val_cosine", val_cosine},
            {"seconds", seconds},
            {"train_size", train_size},
            {"val_size", val_size},
            {"excluded_zero_norm", excluded_zero_norm},
            {"excluded_unencodable", excluded_unencodable}};
  }
};

/// Tracks the best validation metric; stop() is true once `patience` epochs
/// in a row failed to improve on it.
class EarlyStopping {
 public:
  explicit EarlyStopping(int patience) : patience_(patience) {}

  /// Returns true if the metric is a new best.
  bool update(double metric) {
    ++epoch_;
    if (metric > best_) {
      best_ = metric;
      best_epoch_ = epoch_;
      stale_ = 0;
      return true;
    }
    ++stale_;
    return false;
  }

  bool stop() const { return stale_ >= patience_; }
  double best() const { return best_; }
  int best_epoch() const { return best_epoch_; }
  int epochs() const { return epoch_; }

 private:
  int patience_;
  int epoch_ = 0;
  int stale_ = 0;
  int best_epoch_ = 0;
  double best_ = -std::numeric_limits<double>::infinity();
};

/// Seeded 80/20 split of n items: {train, validation}.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_train_val(
    std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(mix_seed(seed));
  rng.shuffle(std::span<std::size_t>(order));
  const std::size_t n_val = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(0.2 * n)));
  std::vector<std::size_t> val(order.begin(), order.begin() + n_val);
  std::vector<std::size_t> train(order.begin() + n_val, order.end());
  return {std::move(train), std::move(val)};
}

/// Mean eval-mode cosine between encoder outputs and target rows.
inline double mean_cosine(const EncoderConfig& cfg, const EncoderWeights<float>& w,
                          const std::vector<std::vector<std::int32_t>>& seqs,
                          std::span<const std::size_t> items, const EmbeddingMatrix& matrix,
                          std::span<const std::size_t> rows) {
  if (items.empty()) return 0.0;
  double total = 0;
  ad::Tape<float> tape;
  tape.set_grad_enabled(false);
  for (std::size_t b = 0; b < items.size(); b += cfg.batch_size) {
    const auto e = std::min(items.size(), b + cfg.batch_size);
    std::vector<const std::vector<std::int32_t>*> ptrs;
    for (auto i = b; i < e; ++i) ptrs.push_back(&seqs[items[i]]);
    auto out = encoder_forward(tape, cfg, w, CharBatch::from(ptrs), false);
    for (auto i = b; i < e; ++i) {
      std::span<const float> pred(out.data().data() + (i - b) * cfg.k, cfg.k);
      total += cosine(pred, matrix.row(rows[items[i]]));
    }
  }
  return total / static_cast<double>(items.size());
}

using EpochLogger = std::function<void(int epoch, double train_loss, double val_cosine)>;

struct TrainResult {
  CharEncoderModel model;
  TrainReport report;
};

/// Trains on (entry text -> row) pairs with loss 1 - cos, Adam with decoupled
/// weight decay, seeded 80/20 split, early stopping on mean validation cosine.
/// Returns the weights of the best validation epoch. When `resume` is given,
/// its vocabulary, architecture and weights are the starting point.
inline TrainResult train_encoder(const EmbeddingMatrix& matrix, EncoderConfig cfg, int max_epochs,
                                 const CharEncoderModel* resume = nullptr,
                                 const EpochLogger& log = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  if (max_epochs < 1) throw UsageError("max_epochs must be >= 1");
  if (matrix.size() < 10) {
    throw UsageError("encoder training needs at least 10 matrix entries, got " +
                     std::to_string(matrix.size()));
  }
  if (matrix.dim() < 1) throw UsageError("matrix dimension must be >= 1");
  if (resume) {
    if (resume->config.k != matrix.dim()) {
      throw NumericError("dimension mismatch: model outputs k=" + std::to_string(resume->config.k) +
                         " but matrix has k=" + std::to_string(matrix.dim()));
    }
    const auto hyper = cfg;
    cfg = resume->config;
    cfg.learning_rate = hyper.learning_rate;
    cfg.weight_decay = hyper.weight_decay;
    cfg.batch_size = hyper.batch_size;
    cfg.patience = hyper.patience;
    cfg.seed = hyper.seed;
    cfg.dropout = hyper.dropout;
  }
  cfg.k = matrix.dim();
  cfg.validate();

  TrainReport report;
  const CharVocab vocab = resume ? resume->vocab
                                 : CharVocab::build(matrix.entries(), cfg.max_len, cfg.max_chars);

  // Usable rows: non-zero target, non-empty text.
  std::vector<std::size_t> rows;
  std::vector<std::vector<std::int32_t>> seqs;
  for (std::size_t i = 0; i < matrix.size(); ++i) {
    if (!(l2_norm(matrix.row(i)) > 0.0)) {
      ++report.excluded_zero_norm;
      continue;
    }
    try {
      seqs.push_back(vocab.encode(matrix.entry(i)));
      rows.push_back(i);
    } catch (const FormatError&) {
      ++report.excluded_unencodable;
    }
  }
  if (rows.size() < 2) throw NumericError("fewer than 2 usable matrix entries");

  auto [train, val] = split_train_val(rows.size(), cfg.seed);
  report.train_size = train.size();
  report.val_size = val.size();
  for (auto v : val) report.val_rows.push_back(rows[v]);

  EncoderWeights<float> weights =
      resume ? resume->weights.cast<float>(cfg)
             : EncoderWeights<float>::init(cfg, vocab.size(), mix_seed(cfg.seed + 1));
  EncoderWeights<float> best = weights.cast<float>(cfg);
  Adam<float> opt(weights.parameters(),
                  AdamHyper{cfg.learning_rate, 0.9, 0.999, 1e-8, cfg.weight_decay});

  Rng order_rng(mix_seed(cfg.seed + 2));
  std::uint64_t dropout_seed = mix_seed(cfg.seed + 3);
  EarlyStopping stopper(cfg.patience);
  const auto k = cfg.k;

  for (int epoch = 1; epoch <= max_epochs; ++epoch) {
    order_rng.shuffle(std::span<std::size_t>(train));
    double loss_sum = 0;
    for (std::size_t b = 0; b < train.size(); b += cfg.batch_size) {
      const auto e = std::min(train.size(), b + cfg.batch_size);
      std::vector<const std::vector<std::int32_t>*> ptrs;
      std::vector<float> target;
      target.reserve((e - b) * k);
      for (auto i = b; i < e; ++i) {
        ptrs.push_back(&seqs[train[i]]);
        auto r = matrix.row(rows[train[i]]);
        target.insert(target.end(), r.begin(), r.end());
      }
      ad::Tape<float> tape;
      auto pred = encoder_forward(tape, cfg, weights, CharBatch::from(ptrs), true,
                                  dropout_seed = mix_seed(dropout_seed));
      auto tgt = ad::Tensor<float>::from({e - b, k}, std::move(target));
      auto loss = cosine_distance_loss(tape, pred, tgt);
      tape.backward(loss);
      opt.step();
      opt.zero_grad();
      loss_sum += static_cast<double>(loss.item()) * static_cast<double>(e - b);
    }
    const double train_loss = train.empty() ? 0.0 : loss_sum / static_cast<double>(train.size());
    if (!std::isfinite(train_loss)) {
      throw NumericError("training diverged at epoch " + std::to_string(epoch));
    }
    const double val_cos = mean_cosine(cfg, weights, seqs, val, matrix, rows);
    report.train_loss.push_back(train_loss);
    report.val_cosine.push_back(val_cos);
    report.epochs_run = epoch;
    if (stopper.update(val_cos)) best.copy_values_from(weights);
    if (log) log(epoch, train_loss, val_cos);
    if (stopper.stop()) break;
  }
  report.best_epoch = stopper.best_epoch();
  report.best_val_cosine = stopper.best();
  report.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  return {CharEncoderModel{cfg, vocab, std::move(best)}, std::move(report)};
}

}  // namespace charemb

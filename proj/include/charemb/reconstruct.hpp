#pragma once

// Rebuilding an embedding matrix from a trained encoder and its vocabulary,
// plus fidelity and compression accounting.

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "charemb/char_encoder.hpp"
#include "charemb/embedding_matrix.hpp"
#include "charemb/error.hpp"
#include "charemb/model_io.hpp"
#include "charemb/vector_math.hpp"

namespace charemb {

struct SkippedEntry {
  std::size_t index;
  std::string entry;
  std::string reason;
};

struct Reconstruction {
  EmbeddingMatrix matrix;
  std::vector<SkippedEntry> skipped;
};

/// Row i is encode(vocab[i]); entry order is preserved. Entries the encoder
/// rejects are left out and listed in `skipped`. Work is split into
/// contiguous chunks across `workers` threads.
inline Reconstruction reconstruct(const CharEncoderModel& model,
                                  const std::vector<std::string>& vocab, unsigned workers = 1,
                                  std::size_t batch_size = 256) {
  if (vocab.empty()) throw UsageError("reconstruct: empty vocabulary");
  const auto k = model.dim();
  std::vector<std::vector<float>> rows(vocab.size());
  std::vector<std::string> errors(vocab.size());
  std::vector<std::uint8_t> ok(vocab.size(), 0);

  auto work = [&](std::size_t begin, std::size_t end) {
    std::vector<std::string> texts;
    std::vector<std::size_t> idx;
    auto flush = [&] {
      if (texts.empty()) return;
      auto out = model.encode_batch(texts);
      for (std::size_t j = 0; j < idx.size(); ++j) {
        rows[idx[j]] = std::move(out[j]);
        ok[idx[j]] = 1;
      }
      texts.clear();
      idx.clear();
    };
    for (auto i = begin; i < end; ++i) {
      try {
        (void)model.vocab.encode(vocab[i]);
      } catch (const Error& e) {
        errors[i] = e.what();
        continue;
      }
      texts.push_back(vocab[i]);
      idx.push_back(i);
      if (texts.size() == batch_size) flush();
    }
    flush();
  };

  workers = std::max(1u, workers);
  if (workers == 1) {
    work(0, vocab.size());
  } else {
    std::vector<std::thread> pool;
    const auto chunk = (vocab.size() + workers - 1) / workers;
    for (unsigned w = 0; w < workers; ++w) {
      const auto b = std::min(vocab.size(), w * chunk);
      const auto e = std::min(vocab.size(), b + chunk);
      pool.emplace_back(work, b, e);
    }
    for (auto& t : pool) t.join();
  }

  Reconstruction res{EmbeddingMatrix(k), {}};
  res.matrix.reserve(vocab.size());
  for (std::size_t i = 0; i < vocab.size(); ++i) {
    if (ok[i]) {
      res.matrix.add(vocab[i], rows[i]);
    } else {
      res.skipped.push_back({i, vocab[i], errors[i]});
    }
  }
  return res;
}

struct ReconstructionReport {
  std::size_t vocab_size = 0;
  std::size_t dim = 0;
  std::uint64_t original_bytes = 0;
  std::uint64_t model_bytes = 0;
  double compression_factor = 0.0;
  double mean_fidelity = 0.0;
  double p50_fidelity = 0.0;
  double p10_fidelity = 0.0;
  std::size_t skipped = 0;

  nlohmann::json to_json() const {
    return {{"vocab_size", vocab_size},       {"dim", dim},
            {"original_bytes", original_bytes}, {"model_bytes", model_bytes},
            {"compression_factor", compression_factor},
            {"mean_fidelity", mean_fidelity}, {"p50_fidelity", p50_fidelity},
            {"p10_fidelity", p10_fidelity},   {"skipped", skipped}};
  }

  /// "key: value" lines.
  std::string to_text() const {
    std::ostringstream os;
    const auto j = to_json();
    for (const auto& [key, value] : j.items()) os << key << ": " << value.dump() << '\n';
    return os.str();
  }
};

/// original / model bytes.
inline double compression_factor(double original_bytes, double model_bytes) {
  if (!(original_bytes > 0) || !(model_bytes > 0)) {
    throw NumericError("compression factor needs positive byte counts");
  }
  return original_bytes / model_bytes;
}

/// Nearest-rank percentile (q in [0, 1]) of a sample; sorts a copy.
inline double percentile(std::vector<double> xs, double q) {
  if (xs.empty()) throw NumericError("percentile of an empty sample");
  std::sort(xs.begin(), xs.end());
  const auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(xs.size())));
  return xs[std::clamp<std::size_t>(rank, 1, xs.size()) - 1];
}

/// Per-row cosine fidelity between aligned matrices. Original bytes are the
/// size of the original's CEMB serialization.
inline ReconstructionReport fidelity_report(const EmbeddingMatrix& original,
                                            const EmbeddingMatrix& reconstructed,
                                            std::uint64_t model_bytes) {
  if (original.dim() != reconstructed.dim()) {
    throw FormatError("vocab mismatch: dimensions differ (" + std::to_string(original.dim()) +
                      " vs " + std::to_string(reconstructed.dim()) + ")");
  }
  if (original.entries() != reconstructed.entries()) {
    throw FormatError("vocab mismatch: matrices do not share the same ordered vocabulary");
  }
  if (original.empty()) throw FormatError("fidelity report on an empty matrix");
  std::vector<double> fid(original.size());
  double sum = 0;
  for (std::size_t i = 0; i < original.size(); ++i) {
    fid[i] = cosine(original.row(i), reconstructed.row(i));
    sum += fid[i];
  }
  ReconstructionReport r;
  r.vocab_size = original.size();
  r.dim = original.dim();
  r.original_bytes = serialized_matrix_bytes(original);
  r.model_bytes = model_bytes;
  r.compression_factor = compression_factor(static_cast<double>(r.original_bytes),
                                            static_cast<double>(model_bytes));
  r.mean_fidelity = sum / static_cast<double>(fid.size());
  r.p50_fidelity = percentile(fid, 0.5);
  r.p10_fidelity = percentile(fid, 0.1);
  return r;
}

/// Rows of `m` restricted to `keep` (in m's order).
inline EmbeddingMatrix subset_rows(const EmbeddingMatrix& m, const std::vector<std::string>& keep) {
  EmbeddingMatrix out(m.dim());
  out.reserve(keep.size());
  for (const auto& e : keep) {
    auto row = m.lookup(e);
    if (!row) throw FormatError("vocab mismatch: '" + e + "' not in matrix");
    out.add(e, *row);
  }
  return out;
}

}  // namespace charemb

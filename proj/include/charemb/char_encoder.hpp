#pragma once

// Character-level encoder: char embeddings -> stacked bidirectional LSTM ->
// MLP head producing a k-dimensional vector in the space of the embedding
// matrix it was distilled from.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "charemb/error.hpp"
#include "charemb/lstm.hpp"
#include "charemb/random.hpp"
#include "charemb/tensor.hpp"
#include "charemb/utf8.hpp"

namespace charemb {

// ---------------------------------------------------------------------------
// Character vocabulary.

class CharVocab {
 public:
  static constexpr std::int32_t pad = 0;
  static constexpr std::int32_t unk = 1;

  CharVocab() = default;
  CharVocab(std::vector<char32_t> chars, std::size_t max_len) : chars_(std::move(chars)), max_len_(max_len) {
    if (max_len_ < 1) throw UsageError("max_len must be >= 1");
    for (std::size_t i = 0; i < chars_.size(); ++i) {
      if (!index_.emplace(chars_[i], static_cast<std::int32_t>(i + 2)).second) {
        throw FormatError("duplicate character in char vocabulary");
      }
    }
  }

  /// Most frequent characters of the (underscore-normalized) texts, at most
  /// max_size symbols including PAD and UNK, stored in code point order.
  static CharVocab build(const std::vector<std::string>& texts, std::size_t max_len = 64,
                         std::size_t max_size = 512) {
    std::map<char32_t, std::uint64_t> freq;
    for (const auto& t : texts) {
      for (char32_t c : utf8::decode(t)) ++freq[c == '_' ? U' ' : c];
    }
    std::vector<std::pair<char32_t, std::uint64_t>> by_freq(freq.begin(), freq.end());
    std::stable_sort(by_freq.begin(), by_freq.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });
    const auto keep = max_size > 2 ? std::min(by_freq.size(), max_size - 2) : std::size_t{0};
    std::vector<char32_t> chars;
    for (std::size_t i = 0; i < keep; ++i) chars.push_back(by_freq[i].first);
    std::sort(chars.begin(), chars.end());
    return CharVocab(std::move(chars), max_len);
  }

  std::size_t size() const { return chars_.size() + 2; }
  std::size_t max_len() const { return max_len_; }
  const std::vector<char32_t>& chars() const { return chars_; }

  std::int32_t index(char32_t c) const {
    auto it = index_.find(c);
    return it == index_.end() ? unk : it->second;
  }

  /// One index per code point after mapping '_' to ' ' and trimming
  /// whitespace; unseen characters map to UNK; truncated at max_len.
  std::vector<std::int32_t> encode(std::string_view text) const {
    auto cps = utf8::decode(text);
    for (auto& c : cps) {
      if (c == '_') c = ' ';
    }
    std::size_t b = 0, e = cps.size();
    while (b < e && utf8::is_space(cps[b])) ++b;
    while (e > b && utf8::is_space(cps[e - 1])) --e;
    if (b == e) throw FormatError("cannot encode empty text");
    std::vector<std::int32_t> ids;
    ids.reserve(std::min(e - b, max_len_));
    for (std::size_t i = b; i < e && ids.size() < max_len_; ++i) ids.push_back(index(cps[i]));
    return ids;
  }

  bool operator==(const CharVocab& o) const { return chars_ == o.chars_ && max_len_ == o.max_len_; }

 private:
  std::vector<char32_t> chars_;
  std::unordered_map<char32_t, std::int32_t> index_;
  std::size_t max_len_ = 64;
};

// ---------------------------------------------------------------------------
// Configuration.

struct EncoderConfig {
  std::string variant = "small";
  std::size_t char_dim = 64;
  std::size_t hidden = 512;
  std::size_t layers = 1;
  bool bidirectional = true;
  double dropout = 0.2;
  double learning_rate = 1e-3;
  double weight_decay = 1e-8;
  std::size_t batch_size = 256;
  int patience = 10;
  std::uint64_t seed = 42;
  std::size_t k = 0;  // output dim, taken from the training matrix
  std::size_t max_len = 64;
  std::size_t max_chars = 512;

  /// small: H=512, 1 layer; base: H=512, 2 layers; large: H=768, 2 layers,
  /// LR 5e-4. All bidirectional with dropout 0.2, weight decay 1e-8, batch 256.
  static EncoderConfig for_variant(std::string_view name) {
    EncoderConfig c;
    if (name == "small") {
      c.hidden = 512;
      c.layers = 1;
    } else if (name == "base") {
      c.hidden = 512;
      c.layers = 2;
    } else if (name == "large") {
      c.hidden = 768;
      c.layers = 2;
      c.learning_rate = 5e-4;
    } else {
      throw UsageError("unknown variant '" + std::string(name) +
                       "'; expected one of {small, base, large}");
    }
    c.variant = std::string(name);
    return c;
  }

  std::size_t directions() const { return bidirectional ? 2 : 1; }

  void validate() const {
    if (char_dim < 1 || hidden < 1 || layers < 1) {
      throw UsageError("encoder: char_dim, hidden and layers must be >= 1");
    }
    if (!(dropout >= 0.0 && dropout < 1.0)) throw UsageError("encoder: dropout must be in [0, 1)");
    if (!(learning_rate >= 0)) throw UsageError("encoder: learning rate must be >= 0");
    if (!(weight_decay >= 0)) throw UsageError("encoder: weight decay must be >= 0");
    if (batch_size < 1) throw UsageError("encoder: batch size must be >= 1");
    if (patience < 1) throw UsageError("encoder: patience must be >= 1");
    if (max_len < 1) throw UsageError("encoder: max_len must be >= 1");
    if (max_chars < 3) throw UsageError("encoder: max_chars must be >= 3");
  }
};

// ---------------------------------------------------------------------------
// Weights and forward pass.

template <class T>
struct EncoderWeights {
  ad::Tensor<T> char_embedding;                // [chars x char_dim]
  std::vector<ad::LstmParams<T>> forward_lstm;   // one per layer
  std::vector<ad::LstmParams<T>> backward_lstm;  // empty if unidirectional
  ad::Tensor<T> head_w1, head_b1;              // [D x H], [1 x H]
  ad::Tensor<T> head_w2, head_b2;              // [H x k], [1 x k]

  /// Every parameter tensor with a stable name, in serialization order.
  std::vector<std::pair<std::string, ad::Tensor<T>>> named() const {
    std::vector<std::pair<std::string, ad::Tensor<T>>> out;
    out.emplace_back("char_embedding", char_embedding);
    for (std::size_t l = 0; l < forward_lstm.size(); ++l) {
      const auto pre = "lstm.l" + std::to_string(l);
      out.emplace_back(pre + ".fwd.w_ih", forward_lstm[l].w_ih);
      out.emplace_back(pre + ".fwd.w_hh", forward_lstm[l].w_hh);
      out.emplace_back(pre + ".fwd.bias", forward_lstm[l].bias);
      if (l < backward_lstm.size()) {
        out.emplace_back(pre + ".bwd.w_ih", backward_lstm[l].w_ih);
        out.emplace_back(pre + ".bwd.w_hh", backward_lstm[l].w_hh);
        out.emplace_back(pre + ".bwd.bias", backward_lstm[l].bias);
      }
    }
    out.emplace_back("head.w1", head_w1);
    out.emplace_back("head.b1", head_b1);
    out.emplace_back("head.w2", head_w2);
    out.emplace_back("head.b2", head_b2);
    return out;
  }

  std::vector<ad::Tensor<T>> parameters() const {
    std::vector<ad::Tensor<T>> out;
    for (auto& [n, t] : named()) out.push_back(t);
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (auto& [name, t] : named()) n += t.size();
    return n;
  }

  /// Shapes implied by a config, vocabulary size and output dimension.
  static std::vector<std::pair<std::string, ad::Shape>> layout(const EncoderConfig& cfg,
                                                               std::size_t vocab_size) {
    std::vector<std::pair<std::string, ad::Shape>> out;
    const auto H = cfg.hidden, D = cfg.directions();
    out.push_back({"char_embedding", {vocab_size, cfg.char_dim}});
    for (std::size_t l = 0; l < cfg.layers; ++l) {
      const auto in = l == 0 ? cfg.char_dim : H * D;
      const auto pre = "lstm.l" + std::to_string(l);
      for (const char* dir : {".fwd", ".bwd"}) {
        if (dir[1] == 'b' && D == 1) continue;
        out.push_back({pre + dir + ".w_ih", {in, 4 * H}});
        out.push_back({pre + dir + ".w_hh", {H, 4 * H}});
        out.push_back({pre + dir + ".bias", {1, 4 * H}});
      }
    }
    out.push_back({"head.w1", {H * D, H}});
    out.push_back({"head.b1", {1, H}});
    out.push_back({"head.w2", {H, cfg.k}});
    out.push_back({"head.b2", {1, cfg.k}});
    return out;
  }

  /// Builds weights from named tensors laid out as layout() describes.
  static EncoderWeights assemble(const EncoderConfig& cfg,
                                 std::map<std::string, ad::Tensor<T>> tensors,
                                 std::size_t vocab_size) {
    for (const auto& [name, shape] : layout(cfg, vocab_size)) {
      auto it = tensors.find(name);
      if (it == tensors.end()) throw FormatError("missing parameter tensor '" + name + "'");
      if (it->second.size() != shape[0] * shape[1] || it->second.rows() != shape[0]) {
        throw FormatError("parameter '" + name + "' has shape " +
                          ad::shape_str(it->second.shape()) + ", expected " +
                          ad::shape_str(shape));
      }
      it->second.set_requires_grad(true);
    }
    EncoderWeights w;
    w.char_embedding = tensors.at("char_embedding");
    for (std::size_t l = 0; l < cfg.layers; ++l) {
      const auto pre = "lstm.l" + std::to_string(l);
      w.forward_lstm.push_back({tensors.at(pre + ".fwd.w_ih"), tensors.at(pre + ".fwd.w_hh"),
                                tensors.at(pre + ".fwd.bias")});
      if (cfg.bidirectional) {
        w.backward_lstm.push_back({tensors.at(pre + ".bwd.w_ih"), tensors.at(pre + ".bwd.w_hh"),
                                   tensors.at(pre + ".bwd.bias")});
      }
    }
    w.head_w1 = tensors.at("head.w1");
    w.head_b1 = tensors.at("head.b1");
    w.head_w2 = tensors.at("head.w2");
    w.head_b2 = tensors.at("head.b2");
    return w;
  }

  /// Char embeddings ~ N(0,1); LSTM and linear weights ~ U(-1/sqrt(fan), 1/sqrt(fan)).
  static EncoderWeights init(const EncoderConfig& cfg, std::size_t vocab_size, std::uint64_t seed) {
    if (cfg.k < 1) throw UsageError("encoder: output dimension k must be >= 1");
    Rng rng(seed);
    std::map<std::string, ad::Tensor<T>> tensors;
    for (const auto& [name, shape] : layout(cfg, vocab_size)) {
      auto t = ad::Tensor<T>::zeros(shape, true);
      if (name == "char_embedding") {
        for (auto& x : t.data()) x = static_cast<T>(rng.normal());
      } else {
        std::size_t fan = cfg.hidden;
        if (name == "head.w1" || name == "head.b1") fan = cfg.hidden * cfg.directions();
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan));
        for (auto& x : t.data()) x = static_cast<T>(rng.uniform(-bound, bound));
      }
      tensors.emplace(name, t);
    }
    return assemble(cfg, std::move(tensors), vocab_size);
  }

  /// Deep copy, optionally converting the scalar type.
  template <class U>
  EncoderWeights<U> cast(const EncoderConfig& cfg) const {
    std::map<std::string, ad::Tensor<U>> tensors;
    for (const auto& [name, t] : named()) {
      std::vector<U> v(t.data().begin(), t.data().end());
      tensors.emplace(name, ad::Tensor<U>::from(t.shape(), std::move(v), true));
    }
    return EncoderWeights<U>::assemble(cfg, std::move(tensors), char_embedding.rows());
  }

  /// Copies values (not handles) from another set of weights of equal layout.
  void copy_values_from(const EncoderWeights& other) {
    auto dst = named();
    auto src = other.named();
    for (std::size_t i = 0; i < dst.size(); ++i) {
      auto d = dst[i].second.data();
      auto s = src[i].second.data();
      std::copy(s.begin(), s.end(), d.begin());
    }
  }
};

/// Padded batch of index sequences, row-major [batch x max_len].
struct CharBatch {
  std::size_t batch = 0;
  std::size_t max_len = 0;
  std::vector<std::int32_t> ids;
  std::vector<std::size_t> lengths;

  static CharBatch from(const std::vector<const std::vector<std::int32_t>*>& seqs) {
    CharBatch b;
    b.batch = seqs.size();
    for (const auto* s : seqs) b.max_len = std::max(b.max_len, s->size());
    b.ids.assign(b.batch * b.max_len, CharVocab::pad);
    for (std::size_t r = 0; r < seqs.size(); ++r) {
      if (seqs[r]->empty()) throw NumericError("sequence of length 0 in batch");
      std::copy(seqs[r]->begin(), seqs[r]->end(), b.ids.begin() + r * b.max_len);
      b.lengths.push_back(seqs[r]->size());
    }
    return b;
  }

  static CharBatch from(const std::vector<std::vector<std::int32_t>>& seqs) {
    std::vector<const std::vector<std::int32_t>*> ptrs;
    for (const auto& s : seqs) ptrs.push_back(&s);
    return from(ptrs);
  }
};

/// Runs the encoder on a padded batch and returns [batch x k].
///
/// Each LSTM direction only updates rows whose sequence covers the current
/// position, so the forward state ends at position length-1 and the backward
/// state (which starts past the end) ends at position 0, untouched by padding.
/// Dropout applies between stacked layers and after the head's hidden layer
/// when training; masks derive from dropout_seed.
template <class T>
ad::Tensor<T> encoder_forward(ad::Tape<T>& tape, const EncoderConfig& cfg,
                              const EncoderWeights<T>& w, const CharBatch& batch, bool training,
                              std::uint64_t dropout_seed = 0) {
  if (batch.batch == 0) throw NumericError("empty batch");
  for (auto len : batch.lengths) {
    if (len == 0) throw NumericError("sequence of length 0 in batch");
  }
  const auto B = batch.batch, L = batch.max_len, H = cfg.hidden;
  std::uint64_t drop_calls = 0;
  auto drop = [&](const ad::Tensor<T>& x) {
    return tape.dropout(x, cfg.dropout, training, mix_seed(dropout_seed + ++drop_calls));
  };

  std::vector<std::vector<std::uint8_t>> masks(L, std::vector<std::uint8_t>(B));
  std::vector<bool> full(L, true);
  for (std::size_t t = 0; t < L; ++t) {
    for (std::size_t r = 0; r < B; ++r) {
      masks[t][r] = t < batch.lengths[r] ? 1 : 0;
      if (!masks[t][r]) full[t] = false;
    }
  }

  std::vector<ad::Tensor<T>> inputs(L);
  std::vector<std::int32_t> col(B);
  for (std::size_t t = 0; t < L; ++t) {
    for (std::size_t r = 0; r < B; ++r) col[r] = batch.ids[r * L + t];
    inputs[t] = tape.gather_rows(w.char_embedding, col);
  }

  auto run = [&](const ad::LstmParams<T>& p, bool reverse, std::vector<ad::Tensor<T>>& outs) {
    ad::LstmState<T> s{ad::Tensor<T>::zeros({B, H}), ad::Tensor<T>::zeros({B, H})};
    outs.assign(L, {});
    for (std::size_t step = 0; step < L; ++step) {
      const auto t = reverse ? L - 1 - step : step;
      auto next = ad::lstm_cell(tape, inputs[t], s.h, s.c, p);
      if (!full[t]) {
        next.h = tape.select_rows(masks[t], next.h, s.h);
        next.c = tape.select_rows(masks[t], next.c, s.c);
      }
      s = next;
      outs[t] = s.h;
    }
    return s.h;
  };

  ad::Tensor<T> final_fwd, final_bwd;
  std::vector<ad::Tensor<T>> outs_f, outs_b;
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    final_fwd = run(w.forward_lstm[l], false, outs_f);
    if (cfg.bidirectional) final_bwd = run(w.backward_lstm[l], true, outs_b);
    if (l + 1 < cfg.layers) {
      for (std::size_t t = 0; t < L; ++t) {
        inputs[t] = drop(cfg.bidirectional ? tape.concat({outs_f[t], outs_b[t]}) : outs_f[t]);
      }
    }
  }
  auto last = cfg.bidirectional ? tape.concat({final_fwd, final_bwd}) : final_fwd;
  auto hidden = tape.tanh(tape.add_bias(tape.matmul(last, w.head_w1), w.head_b1));
  hidden = drop(hidden);
  return tape.add_bias(tape.matmul(hidden, w.head_w2), w.head_b2);
}

/// Mean over the batch of 1 - cos(prediction, target).
template <class T>
ad::Tensor<T> cosine_distance_loss(ad::Tape<T>& tape, const ad::Tensor<T>& prediction,
                                   const ad::Tensor<T>& target) {
  return tape.affine(tape.mean(tape.cosine_rows(prediction, target)), T(-1), T(1));
}

// ---------------------------------------------------------------------------
// Trained model.

struct CharEncoderModel {
  EncoderConfig config;
  CharVocab vocab;
  EncoderWeights<float> weights;

  std::size_t dim() const { return config.k; }

  /// Eval-mode forward over a batch of texts; throws on empty text.
  std::vector<std::vector<float>> encode_batch(const std::vector<std::string>& texts) const {
    std::vector<std::vector<std::int32_t>> seqs;
    seqs.reserve(texts.size());
    for (const auto& t : texts) seqs.push_back(vocab.encode(t));
    ad::Tape<float> tape;
    tape.set_grad_enabled(false);
    auto out = encoder_forward(tape, config, weights, CharBatch::from(seqs), false);
    std::vector<std::vector<float>> rows(texts.size());
    for (std::size_t r = 0; r < texts.size(); ++r) {
      rows[r].assign(out.data().begin() + r * config.k, out.data().begin() + (r + 1) * config.k);
    }
    return rows;
  }

  std::vector<float> encode(std::string_view text) const {
    return std::move(encode_batch({std::string(text)})[0]);
  }
};

}  // namespace charemb

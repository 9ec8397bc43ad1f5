// End-to-end run on a synthetic corpus: phrase merging, CBOW training,
// distillation into a small character encoder, reconstruction.

#include <cstdio>

#include "charemb/charemb.hpp"

int main() {
  using namespace charemb;

  auto corpus = generate_synthetic_corpus(/*seed=*/7, /*n_clusters=*/3, /*sentences=*/3000);
  PhraseConfig pc;
  pc.threshold = 1e-3;
  auto merged = extract_terms(corpus, pc);
  std::printf("tokens %zu -> %zu after merging\n", corpus.token_count(),
              merged.stream.token_count());

  CbowConfig cc;
  cc.dim = 32;
  cc.epochs = 3;
  CbowStats stats;
  const auto matrix = train_cbow(merged.stream, cc, &stats);
  std::printf("matrix: %zu entries x %zu dims from %llu tokens\n", matrix.size(), matrix.dim(),
              static_cast<unsigned long long>(stats.corpus_tokens));

  auto ec = EncoderConfig::for_variant("small");
  ec.hidden = 64;  // tiny model for a quick demo
  auto trained = train_encoder(matrix, ec, /*max_epochs=*/30, nullptr,
                               [](int epoch, double loss, double val) {
                                 if (epoch % 5 == 0)
                                   std::printf("epoch %d loss %.4f val %.4f\n", epoch, loss, val);
                               });

  const auto rebuilt = reconstruct(trained.model, matrix.entries());
  const auto kept = subset_rows(matrix, rebuilt.matrix.entries());
  const auto report =
      fidelity_report(kept, rebuilt.matrix, serialized_model_bytes(trained.model));
  std::printf("%s", report.to_text().c_str());

  const auto v = trained.model.encode("c0w1 c0w2");
  std::printf("unseen phrase encodes to %zu dims\n", v.size());
  return 0;
}

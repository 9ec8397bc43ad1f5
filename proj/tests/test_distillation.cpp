#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <sstream>

#include "charemb/model_io.hpp"
#include "charemb/reconstruct.hpp"
#include "charemb/trainer.hpp"
#include "support/toy_family.hpp"

using namespace charemb;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("charemb_di_" + name)).string();
}

// One Small-variant training run on the toy family, shared by the tests below.
class ToyModel : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    family_ = new charemb::testing::ToyFamily(1, 16);
    matrix_ = new EmbeddingMatrix(family_->matrix(family_->strings(500, 11)));
    auto cfg = EncoderConfig::for_variant("small");
    result_ = new TrainResult(train_encoder(*matrix_, cfg, 25));
  }
  static void TearDownTestSuite() {
    delete result_;
    delete matrix_;
    delete family_;
  }
  static const CharEncoderModel& model() { return result_->model; }

  static charemb::testing::ToyFamily* family_;
  static EmbeddingMatrix* matrix_;
  static TrainResult* result_;
};

charemb::testing::ToyFamily* ToyModel::family_ = nullptr;
EmbeddingMatrix* ToyModel::matrix_ = nullptr;
TrainResult* ToyModel::result_ = nullptr;

}  // namespace

TEST_F(ToyModel, ReachesValidationCosine) {
  const auto& r = result_->report;
  EXPECT_GE(r.best_val_cosine, 0.9);
  EXPECT_EQ(r.train_size + r.val_size, 500u);
  for (double l : r.train_loss) {
    EXPECT_GE(l, 0.0);
    EXPECT_LE(l, 2.0);
  }
  for (double c : r.val_cosine) {
    EXPECT_GE(c, -1.0);
    EXPECT_LE(c, 1.0);
  }
}

TEST_F(ToyModel, BestEpochIsRestored) {
  const auto& r = result_->report;
  double sum = 0;
  for (auto row : r.val_rows) {
    sum += cosine(std::span<const float>(model().encode(matrix_->entry(row))), matrix_->row(row));
  }
  EXPECT_NEAR(sum / static_cast<double>(r.val_rows.size()), r.best_val_cosine, 1e-5);
}

TEST_F(ToyModel, MostTrainingEntriesEncodeCloseToTargets) {
  std::unordered_set<std::size_t> val(result_->report.val_rows.begin(),
                                      result_->report.val_rows.end());
  std::size_t good = 0, n = 0;
  for (std::size_t i = 0; i < matrix_->size(); ++i) {
    if (val.contains(i)) continue;
    ++n;
    const auto v = model().encode(matrix_->entry(i));
    good += cosine(std::span<const float>(v), matrix_->row(i)) >= 0.9;
  }
  EXPECT_GE(static_cast<double>(good), 0.9 * static_cast<double>(n));
}

TEST_F(ToyModel, EncodeContract) {
  const auto a = model().encode("abc_def");
  const auto b = model().encode("abc def");
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.size(), 16u);
  for (float x : a) EXPECT_TRUE(std::isfinite(x));
  EXPECT_THROW(model().encode(""), FormatError);
}

TEST_F(ToyModel, ModelRoundTripIsBitExact) {
  const auto path = temp_path("toy.cenc");
  save_model(model(), path);
  EXPECT_EQ(std::filesystem::file_size(path), serialized_model_bytes(model()));
  const auto back = load_model(path);
  EXPECT_EQ(back.vocab, model().vocab);
  EXPECT_EQ(back.config.hidden, model().config.hidden);
  for (const auto* text : {"abc", "lkjihg", "a b c", "zzz"}) {
    const auto x = model().encode(text), y = back.encode(text);
    ASSERT_EQ(x.size(), y.size());
    EXPECT_EQ(std::memcmp(x.data(), y.data(), x.size() * sizeof(float)), 0);
  }
  std::ostringstream a, b;
  write_model(a, model());
  write_model(b, back);
  EXPECT_EQ(a.str(), b.str());
  std::filesystem::remove(path);
}

TEST_F(ToyModel, ReconstructionFidelity) {
  const auto rec = reconstruct(model(), matrix_->entries());
  EXPECT_TRUE(rec.skipped.empty());
  ASSERT_EQ(rec.matrix.entries(), matrix_->entries());
  const auto rep = fidelity_report(*matrix_, rec.matrix, serialized_model_bytes(model()));
  EXPECT_GE(rep.mean_fidelity, 0.9);
  EXPECT_LE(rep.p10_fidelity, rep.p50_fidelity);
  EXPECT_EQ(rep.original_bytes, serialized_matrix_bytes(*matrix_));
  for (std::size_t i = 0; i < 20; ++i) {
    const auto v = model().encode(matrix_->entry(i));
    auto row = *rec.matrix.lookup(matrix_->entry(i));
    for (std::size_t j = 0; j < v.size(); ++j) EXPECT_NEAR(row[j], v[j], 1e-6);
  }
}

TEST_F(ToyModel, ReconstructIsDeterministicAndOrderPreserving) {
  auto vocab = matrix_->entries();
  vocab.resize(300);
  const auto a = reconstruct(model(), vocab, 1, 64);
  const auto b = reconstruct(model(), vocab, 3, 17);
  EXPECT_EQ(a.matrix.entries(), vocab);
  ASSERT_EQ(a.matrix.size(), b.matrix.size());
  for (std::size_t i = 0; i < a.matrix.size(); ++i) {
    for (std::size_t j = 0; j < a.matrix.dim(); ++j) {
      EXPECT_NEAR(a.matrix.row(i)[j], b.matrix.row(i)[j], 1e-5);
    }
  }
  EXPECT_EQ(reconstruct(model(), vocab, 1, 64).matrix, a.matrix);
}

TEST_F(ToyModel, SingleEntryAndSkippedEntries) {
  const auto one = reconstruct(model(), {"abcd"});
  ASSERT_EQ(one.matrix.size(), 1u);
  const auto v = model().encode("abcd");
  for (std::size_t j = 0; j < v.size(); ++j) EXPECT_NEAR(one.matrix.row(0)[j], v[j], 1e-6);

  const auto mixed = reconstruct(model(), {"abc", "  ", "def"});
  EXPECT_EQ(mixed.matrix.size(), 2u);
  ASSERT_EQ(mixed.skipped.size(), 1u);
  EXPECT_EQ(mixed.skipped[0].index, 1u);

  const auto path = temp_path("rec.cemb");
  save_matrix(mixed.matrix, path);
  EXPECT_EQ(load_matrix(path), mixed.matrix);
  std::filesystem::remove(path);
}

TEST_F(ToyModel, ResumeWithMismatchedDimension) {
  charemb::testing::ToyFamily other(2, 8);
  const auto m8 = other.matrix(other.strings(40, 3));
  EXPECT_THROW(train_encoder(m8, EncoderConfig::for_variant("small"), 1, &model()), NumericError);
}

TEST(Training, BitReproducible) {
  charemb::testing::ToyFamily fam(3, 6);
  const auto m = fam.matrix(fam.strings(60, 5));
  auto cfg = EncoderConfig::for_variant("small");
  cfg.hidden = 16;
  cfg.batch_size = 16;
  const auto a = train_encoder(m, cfg, 3);
  const auto b = train_encoder(m, cfg, 3);
  std::ostringstream sa, sb;
  write_model(sa, a.model);
  write_model(sb, b.model);
  EXPECT_EQ(sa.str(), sb.str());
  EXPECT_EQ(a.report.val_cosine, b.report.val_cosine);
}

TEST(Training, ExcludesZeroNormRows) {
  charemb::testing::ToyFamily fam(3, 6);
  auto m = fam.matrix(fam.strings(30, 5));
  m.add("zerorow", std::vector<float>(6, 0.0f));
  auto cfg = EncoderConfig::for_variant("small");
  cfg.hidden = 8;
  const auto r = train_encoder(m, cfg, 1);
  EXPECT_EQ(r.report.excluded_zero_norm, 1u);
  EXPECT_EQ(r.report.train_size + r.report.val_size, 30u);
}

TEST(ModelIo, WrongMagicIsVersionError) {
  std::istringstream is(std::string("CENC0002\0\0\0\0", 12));
  try {
    read_model(is);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("version"), std::string::npos);
  }
  std::istringstream trunc(std::string("CENC0001\x40\0\0\0{", 13));
  EXPECT_THROW(read_model(trunc), FormatError);
  EXPECT_THROW(load_model("/nonexistent/x.cenc"), IoError);
}

TEST(ModelIo, VariantSizesAtFullScale) {
  std::vector<char32_t> chars;
  for (char32_t c = 0x21; chars.size() < 510; ++c) chars.push_back(c);
  const CharVocab vocab(chars, 64);
  ASSERT_EQ(vocab.size(), 512u);
  const std::pair<const char*, double> limits[] = {{"small", 20e6}, {"base", 45e6}, {"large", 95e6}};
  for (const auto& [name, limit] : limits) {
    auto cfg = EncoderConfig::for_variant(name);
    cfg.k = 200;
    CharEncoderModel m{cfg, vocab, EncoderWeights<float>::init(cfg, vocab.size(), 1)};
    const auto bytes = serialized_model_bytes(m);
    EXPECT_LT(static_cast<double>(bytes), limit) << name;
    std::ostringstream os;
    write_model(os, m);
    EXPECT_EQ(os.str().size(), bytes) << name;
  }
}

TEST(Compression, PublishedSizes) {
  EXPECT_NEAR(compression_factor(3984, 13), 306, 1);
  EXPECT_NEAR(compression_factor(3984, 86), 46, 1);
  // the Base row's published factor does not follow from its published sizes
  EXPECT_GT(std::abs(compression_factor(3984, 38) - 236), 100);
  EXPECT_THROW(compression_factor(1, 0), NumericError);
}

TEST(Fidelity, IdentityAndSignFlip) {
  charemb::testing::ToyFamily fam(4, 8);
  const auto m = fam.matrix(fam.strings(50, 1));
  const auto same = fidelity_report(m, m, 100);
  EXPECT_NEAR(same.mean_fidelity, 1.0, 1e-6);
  EmbeddingMatrix neg(8);
  for (std::size_t i = 0; i < m.size(); ++i) {
    std::vector<float> v(m.row(i).begin(), m.row(i).end());
    for (auto& x : v) x = -x;
    neg.add(m.entry(i), v);
  }
  EXPECT_NEAR(fidelity_report(m, neg, 100).mean_fidelity, -1.0, 1e-6);
  EmbeddingMatrix other(8);
  other.add("x", std::vector<float>(8, 1.0f));
  EXPECT_THROW(fidelity_report(m, other, 100), FormatError);
}

TEST(Fidelity, Percentiles) {
  EXPECT_EQ(percentile({5, 1, 4, 2, 3}, 0.5), 3);
  EXPECT_EQ(percentile({5, 1, 4, 2, 3}, 0.1), 1);
  EXPECT_EQ(percentile({5, 1, 4, 2, 3}, 1.0), 5);
}

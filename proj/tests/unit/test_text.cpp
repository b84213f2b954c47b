#include <gtest/gtest.h>
#include <torch/torch.h>

#include <algorithm>
#include <cmath>

#include "gradcheck.hpp"
#include "storyviz/error.hpp"
#include "storyviz/text_encoder.hpp"
#include "storyviz/vocab.hpp"
#include "temp_dir.hpp"

namespace storyviz::text {
namespace {

const auto kF64 = torch::TensorOptions().dtype(torch::kFloat64);

TEST(Vocab, ReservedIdsAndUnknownTokens) {
  const auto v = Vocab::from_tokens({"<pad>", "<unk>", "red", "circle"});
  EXPECT_EQ(v.id("<pad>"), kPadId);
  EXPECT_EQ(v.id("<unk>"), kUnkId);
  EXPECT_EQ(v.id("red"), 2);
  EXPECT_EQ(v.id("zebra"), kUnkId);
  EXPECT_EQ(v.token(3), "circle");
  EXPECT_THROW(v.token(4), BoundsError);
}

TEST(Vocab, OrderedByFrequencyThenLexicographically) {
  const auto v = build_vocab({"b a c a", "c a b d"});
  // a:3, b:2, c:2, d:1
  EXPECT_EQ(v.tokens(), (std::vector<std::string>{"<pad>", "<unk>", "a", "b", "c", "d"}));
  EXPECT_THROW(build_vocab({"", "  "}), ConfigError);
}

TEST(Vocab, SingleCaption) {
  const auto v = build_vocab({"a red circle"});
  EXPECT_EQ(v.size(), 5u);
  const auto row = tokenize("a red circle", v, 12);
  EXPECT_EQ(std::count(row.ids.begin(), row.ids.end(), kPadId), 9);
}

TEST(Vocab, SaveLoadRoundTrip) {
  storyviz::testing::TempDir tmp;
  const auto v = build_vocab({"a red circle", "the snow falls"});
  v.save(tmp.path() / "vocab.json");
  EXPECT_EQ(Vocab::load(tmp.path() / "vocab.json"), v);
}

TEST(Tokenize, PadsAndMasks) {
  const auto v = build_vocab({"a red circle"});
  const auto row = tokenize("a red circle", v, 5);
  EXPECT_EQ(row.ids.size(), 5u);
  EXPECT_EQ(row.mask, (std::vector<std::uint8_t>{1, 1, 1, 0, 0}));
  EXPECT_EQ(row.ids[3], kPadId);
  EXPECT_EQ(detokenize(row, v), "a red circle");
  EXPECT_THROW(tokenize("a red circle", v, 2), ShapeError);
}

TextEncoder tiny_encoder() {
  torch::manual_seed(0);
  TextEncoder enc(TextEncoderConfig{20, 8, 6, 5});
  enc->to(torch::kFloat64);
  return enc;
}

TEST(TextEncoder, ShapesAndMaskedColumnsAreZero) {
  auto enc = tiny_encoder();
  auto tokens = torch::randint(2, 20, {2, 3, 4}, torch::kLong);
  auto mask = torch::ones({2, 3, 4}, torch::kBool);
  mask.index_put_({0, 1, torch::indexing::Slice(2)}, false);
  tokens.masked_fill_(mask.logical_not(), kPadId);
  const auto e = enc->forward(tokens, mask);
  EXPECT_EQ(e.s.sizes(), (std::vector<int64_t>{2, 3, 5}));
  EXPECT_EQ(e.w.sizes(), (std::vector<int64_t>{2, 3, 5, 4}));
  EXPECT_EQ(e.w[0][1].slice(1, 2).abs().max().item<double>(), 0.0);
}

TEST(TextEncoder, PaddedIdsDoNotMatter) {
  auto enc = tiny_encoder();
  auto tokens = torch::randint(2, 20, {3, 4}, torch::kLong);
  auto mask = torch::ones({3, 4}, torch::kBool);
  mask.index_put_({1, torch::indexing::Slice(1)}, false);
  mask.index_put_({2, 3}, false);
  const auto a = enc->forward(tokens.masked_fill(mask.logical_not(), kPadId), mask);
  const auto b = enc->forward(tokens.masked_fill(mask.logical_not(), 17), mask);
  EXPECT_TRUE(torch::equal(a.s, b.s));
  EXPECT_TRUE(torch::equal(a.w, b.w));
}

TEST(TextEncoder, AllPaddingSentenceIsAnError) {
  auto enc = tiny_encoder();
  const auto tokens = torch::zeros({2, 4}, torch::kLong);
  auto mask = torch::ones({2, 4}, torch::kBool);
  mask[1].fill_(false);
  EXPECT_THROW(enc->forward(tokens, mask), NumericError);
}

TEST(ContrastiveLoss, IdenticalFeaturesGiveTwoLnB) {
  const auto x = torch::ones({8, 4}, kF64);
  EXPECT_NEAR(contrastive_loss(x, x, 0.1).item<double>(), 2.0 * std::log(8.0), 1e-9);
}

TEST(ContrastiveLoss, RandomFeaturesNearTwoLnB) {
  torch::manual_seed(1);
  const int64_t b = 64;
  const double loss =
      contrastive_loss(torch::randn({b, 128}, kF64), torch::randn({b, 128}, kF64), 0.1).item<double>();
  EXPECT_NEAR(loss, 2.0 * std::log(static_cast<double>(b)), 0.15 * 2.0 * std::log(static_cast<double>(b)));
}

TEST(ContrastiveLoss, MatchedPairsLowerTheLoss) {
  torch::manual_seed(2);
  const auto x = torch::randn({16, 32}, kF64);
  EXPECT_LT(contrastive_loss(x, x, 0.1).item<double>(),
            contrastive_loss(x, torch::randn({16, 32}, kF64), 0.1).item<double>());
}

TEST(ContrastiveLoss, GradientsMatchFiniteDifferences) {
  torch::manual_seed(3);
  const auto err = storyviz::testing::max_gradient_error(
      [](const std::vector<torch::Tensor>& in) { return contrastive_loss(in[0], in[1], 0.5); },
      {torch::randn({4, 3}, kF64), torch::randn({4, 3}, kF64)});
  EXPECT_LE(err, 1e-4);
}

TEST(PairedCosine, ParallelAndOrthogonal) {
  const auto a = torch::tensor({{1.0, 0.0}, {1.0, 1.0}}, kF64);
  const auto b = torch::tensor({{0.0, 2.0}, {3.0, 3.0}}, kF64);
  const auto c = paired_cosine(a, b);
  EXPECT_NEAR(c[0].item<double>(), 0.0, 1e-12);
  EXPECT_NEAR(c[1].item<double>(), 1.0, 1e-12);
}

}  // namespace
}  // namespace storyviz::text

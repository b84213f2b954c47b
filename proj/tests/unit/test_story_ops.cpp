#include <ATen/CPUGeneratorImpl.h>
#include <gtest/gtest.h>
#include <torch/torch.h>

#include <cmath>

#include "gradcheck.hpp"
#include "storyviz/error.hpp"
#include "storyviz/story_ops.hpp"

namespace storyviz::ops {
namespace {

using storyviz::testing::max_gradient_error;
using storyviz::testing::random_prefix_mask;

const auto kF64 = torch::TensorOptions().dtype(torch::kFloat64);

// Independent reference: e^x / sum e^x evaluated with std::exp.
double softmax_ref(double x, std::initializer_list<double> all) {
  double z = 0.0;
  for (double v : all) z += std::exp(v);
  return std::exp(x) / z;
}

TEST(MaskedSoftmax, UniformLogits) {
  const auto p = masked_softmax(torch::tensor({0.0, 0.0}, kF64), torch::tensor({true, true}), 0);
  EXPECT_DOUBLE_EQ(p[0].item<double>(), 0.5);
  EXPECT_DOUBLE_EQ(p[1].item<double>(), 0.5);
}

TEST(MaskedSoftmax, TwoLogits) {
  const auto p = masked_softmax(torch::tensor({1.0, 0.0}, kF64), torch::tensor({true, true}), 0);
  EXPECT_NEAR(p[0].item<double>(), softmax_ref(1.0, {1.0, 0.0}), 1e-12);
  EXPECT_NEAR(p[0].item<double>(), 0.7311, 1e-4);
  EXPECT_NEAR(p[1].item<double>(), 0.2689, 1e-4);
}

TEST(MaskedSoftmax, HugeMaskedLogitCannotOverflow) {
  const auto p = masked_softmax(torch::tensor({5.0, 999.0}, kF64), torch::tensor({true, false}), 0);
  EXPECT_EQ(p[0].item<double>(), 1.0);
  EXPECT_EQ(p[1].item<double>(), 0.0);
  const auto q = masked_softmax(torch::tensor({5.0, std::nan("")}, kF64), torch::tensor({true, false}), 0);
  EXPECT_EQ(q[0].item<double>(), 1.0);
  EXPECT_EQ(q[1].item<double>(), 0.0);
}

TEST(MaskedSoftmax, AllMaskedSliceIsAnError) {
  const auto logits = torch::zeros({2, 3}, kF64);
  auto mask = torch::ones({2, 3}, torch::kBool);
  mask[1].fill_(false);
  EXPECT_THROW(masked_softmax(logits, mask, 1), NumericError);
}

TEST(MaskedSoftmax, MaskedEntriesGetZeroGradient) {
  auto logits = torch::tensor({0.3, -1.2, 4.0}, kF64).requires_grad_(true);
  const auto p = masked_softmax(logits, torch::tensor({true, true, false}), 0);
  (p * torch::tensor({1.0, 2.0, 3.0}, kF64)).sum().backward();
  EXPECT_EQ(logits.grad()[2].item<double>(), 0.0);
}

TEST(MaskedSoftmax, GradientMatchesFiniteDifferences) {
  auto gen = at::make_generator<at::CPUGeneratorImpl>(11);
  const auto logits = torch::randn({4, 6}, gen, kF64);
  auto mask = torch::rand({4, 6}, gen) > 0.4;
  mask.select(1, 0).fill_(true);
  const auto weights = torch::randn({4, 6}, gen, kF64);
  auto f = [&](const std::vector<torch::Tensor>& in) { return (masked_softmax(in[0], mask, 1) * weights).sum(); };
  EXPECT_LE(max_gradient_error(f, {logits}), 1e-4);
}

TEST(EnrichSentences, WorkedExample) {
  // N=2, L=1, D=2; word columns e1 and e2.
  const auto s = torch::tensor({1.0, 0.0, 0.0, 1.0}, kF64).reshape({2, 2});
  const auto w = torch::tensor({1.0, 0.0, 0.0, 1.0}, kF64).reshape({2, 2, 1});
  const auto mask = torch::ones({2, 1}, torch::kBool);
  const auto e = enrich_sentences(s, w, mask);
  ASSERT_EQ(e.sigma.sizes(), (std::vector<int64_t>{2, 2}));
  ASSERT_EQ(e.s_prime.sizes(), (std::vector<int64_t>{2, 2}));
  EXPECT_NEAR(e.sigma[0][0].item<double>(), 0.7311, 1e-4);
  EXPECT_NEAR(e.sigma[0][1].item<double>(), 0.2689, 1e-4);
  EXPECT_NEAR(e.s_prime[0][0].item<double>(), 0.7311, 1e-4);
  EXPECT_NEAR(e.s_prime[0][1].item<double>(), 0.2689, 1e-4);
  // Second sentence mirrors the first.
  EXPECT_NEAR(e.s_prime[1][1].item<double>(), 0.7311, 1e-4);
}

TEST(EnrichSentences, IdenticalWordsGiveThatWord) {
  auto gen = at::make_generator<at::CPUGeneratorImpl>(3);
  const auto u = torch::randn({4}, gen, kF64);
  const auto w = u.reshape({1, 4, 1}).expand({3, 4, 5}).clone();
  const auto s = torch::randn({3, 4}, gen, kF64) * 10.0;
  const auto mask = torch::ones({3, 5}, torch::kBool);
  const auto e = enrich_sentences(s, w, mask);
  for (int n = 0; n < 3; ++n) EXPECT_TRUE(torch::allclose(e.s_prime[n], u, 1e-12, 1e-12));
}

TEST(EnrichSentences, FlatteningIsSentenceMajor) {
  const auto w = torch::arange(2 * 1 * 3, kF64).reshape({2, 1, 3});  // N=2, D=1, L=3
  const auto flat = flatten_words(w.unsqueeze(0), torch::ones({1, 2, 3}, torch::kBool));
  EXPECT_TRUE(torch::equal(flat.squeeze(), torch::arange(6, kF64)));
}

TEST(EnrichSentences, ShapeMismatchIsAnError) {
  EXPECT_THROW(enrich_sentences(torch::zeros({2, 3}), torch::zeros({2, 4, 5}), torch::ones({2, 5}, torch::kBool)),
               ShapeError);
  EXPECT_THROW(enrich_sentences(torch::zeros({2, 4}), torch::zeros({2, 4, 5}), torch::ones({2, 4}, torch::kBool)),
               ShapeError);
}

TEST(EnrichSentences, AllMaskedStoryIsAnError) {
  EXPECT_THROW(enrich_sentences(torch::zeros({2, 4}), torch::zeros({2, 4, 3}), torch::zeros({2, 3}, torch::kBool)),
               NumericError);
}

TEST(ExtendedAttention, EqualLogitsAverageTheWords) {
  // One frame, one location, two words, projection maps everything to zero.
  const auto v = torch::ones({1, 1, 1, 1}, kF64);
  const auto w = torch::tensor({1.0, 3.0, 2.0, -4.0}, kF64).reshape({1, 2, 2});  // D=2, L=2
  const auto proj = torch::zeros({2, 1}, kF64);
  const auto r = extended_spatial_attention(v, w, torch::ones({1, 2}, torch::kBool), proj);
  EXPECT_DOUBLE_EQ(r.beta[0][0].item<double>(), 0.5);
  EXPECT_DOUBLE_EQ(r.beta[0][1].item<double>(), 0.5);
  EXPECT_DOUBLE_EQ(r.v_w[0][0].item<double>(), 2.0);
  EXPECT_DOUBLE_EQ(r.v_w[1][0].item<double>(), -1.0);
}

TEST(ExtendedAttention, TwoLogits) {
  const auto v = torch::ones({1, 1, 1, 1}, kF64);
  const auto w = torch::tensor({1.0, 0.0, 0.0, 0.0}, kF64).reshape({1, 2, 2});  // words [1,0] and [0,0]
  const auto proj = torch::tensor({1.0, 0.0}, kF64).reshape({2, 1});
  const auto r = extended_spatial_attention(v, w, torch::ones({1, 2}, torch::kBool), proj);
  EXPECT_NEAR(r.logits[0][0].item<double>(), 1.0, 1e-12);
  EXPECT_NEAR(r.beta[0][0].item<double>(), 0.7311, 1e-4);
  EXPECT_NEAR(r.beta[0][1].item<double>(), 0.2689, 1e-4);
}

TEST(ExtendedAttention, ReachesWordsOfOtherSentences) {
  // Sentence 3's words carry a marker dimension; frame 1 must attend to them.
  const int64_t n = 5, c = 3, h = 2, wd = 2, d = 4, l = 3;
  auto gen = at::make_generator<at::CPUGeneratorImpl>(5);
  const auto v = torch::randn({n, c, h, wd}, gen, kF64);
  auto w = torch::randn({n, d, l}, gen, kF64) * 0.1;
  w[3][d - 1].fill_(1.0);
  const auto mask = torch::ones({n, l}, torch::kBool);
  const auto proj = torch::randn({d, c}, gen, kF64);
  const auto r = extended_spatial_attention(v, w, mask, proj);
  const auto frame1_rows = r.beta.slice(0, 1 * h * wd, 2 * h * wd);
  const auto sentence3_cols = frame1_rows.slice(1, 3 * l, 4 * l);
  EXPECT_TRUE((sentence3_cols > 0).all().item<bool>());

  const auto local = extended_spatial_attention(v, w, mask, proj, AttentionScope::kSentence);
  EXPECT_TRUE((local.beta.slice(0, h * wd, 2 * h * wd).slice(1, 3 * l, 4 * l) == 0).all().item<bool>());
  EXPECT_TRUE(torch::allclose(local.beta.sum(1), torch::ones({n * h * wd}, kF64)));
}

TEST(ExtendedAttention, MapsAreFramesOfVw) {
  auto gen = at::make_generator<at::CPUGeneratorImpl>(8);
  const auto v = torch::randn({2, 3, 4, 4}, gen, kF64);
  const auto w = torch::randn({2, 5, 3}, gen, kF64);
  const auto r = extended_spatial_attention(v, w, torch::ones({2, 3}, torch::kBool), torch::randn({5, 3}, gen, kF64));
  ASSERT_EQ(r.v_w_maps.sizes(), (std::vector<int64_t>{2, 5, 4, 4}));
  // Location (frame 1, y 2, x 3) is column 1*16 + 2*4 + 3.
  EXPECT_TRUE(torch::allclose(r.v_w_maps.select(0, 1).select(1, 2).select(1, 3), r.v_w.select(1, 16 + 11)));
}

TEST(ExtendedAttention, ShapeMismatchIsAnError) {
  EXPECT_THROW(extended_spatial_attention(torch::zeros({2, 3, 2, 2}), torch::zeros({2, 4, 3}),
                                          torch::ones({2, 3}, torch::kBool), torch::zeros({4, 5})),
               ShapeError);
  EXPECT_THROW(extended_spatial_attention(torch::zeros({3, 3, 2, 2}), torch::zeros({2, 4, 3}),
                                          torch::ones({2, 3}, torch::kBool), torch::zeros({4, 3})),
               ShapeError);
}

TEST(FuseFeatures, ScalarProducts) {
  const auto v = torch::full({1, 1, 1}, 5.0, kF64);            // C=1, H=W=1
  const auto words = torch::tensor({2.0, 3.0}, kF64).reshape({1, 2});  // D=1, Lt=2
  const auto proj = torch::ones({1, 1}, kF64);
  const auto f = fuse_features(v, words, torch::ones({2}, torch::kBool), proj);
  ASSERT_EQ(f.sizes(), (std::vector<int64_t>{2, 1, 1}));
  EXPECT_DOUBLE_EQ(f[0][0][0].item<double>(), 10.0);
  EXPECT_DOUBLE_EQ(f[1][0][0].item<double>(), 15.0);
}

TEST(FuseFeatures, Bilinearity) {
  auto gen = at::make_generator<at::CPUGeneratorImpl>(9);
  const auto v = torch::randn({2, 3, 4, 4}, gen);
  const auto words = torch::randn({2, 6, 5}, gen);
  const auto mask = torch::ones({2, 5}, torch::kBool);
  const auto proj = torch::randn({6, 3}, gen);
  const auto f = fuse_features(v, words, mask, proj);
  EXPECT_TRUE(torch::equal(fuse_features(torch::zeros_like(v), words, mask, proj), torch::zeros_like(f)));
  EXPECT_TRUE(torch::equal(fuse_features(v * 2.0, words, mask, proj), f * 2.0));
  EXPECT_TRUE(torch::equal(fuse_features(v, words * 2.0, mask, proj), f * 2.0));
}

TEST(FuseFeatures, MaskedWordChannelsAreZero) {
  auto gen = at::make_generator<at::CPUGeneratorImpl>(10);
  auto mask = torch::ones({1, 4}, torch::kBool);
  mask[0][3] = false;
  const auto f = fuse_features(torch::randn({1, 3, 2, 2}, gen), torch::randn({1, 5, 4}, gen), mask,
                               torch::randn({5, 3}, gen));
  EXPECT_TRUE((f[0][3] == 0).all().item<bool>());
  EXPECT_FALSE((f[0][0] == 0).all().item<bool>());
}

TEST(FuseFeatures, ShapeMismatchIsAnError) {
  EXPECT_THROW(fuse_features(torch::zeros({3, 2, 2}), torch::zeros({4, 5}), torch::ones({5}, torch::kBool),
                             torch::zeros({4, 2})),
               ShapeError);
  EXPECT_THROW(fuse_features(torch::zeros({3, 2, 2}), torch::zeros({4, 5}), torch::ones({4}, torch::kBool),
                             torch::zeros({4, 3})),
               ShapeError);
}

// Convex-hull check by solving the (over-determined, full column rank) system
// words * x = target in least squares: x must be the simplex weights.
void expect_convex_combination(const torch::Tensor& target, const torch::Tensor& word_cols) {
  const torch::Tensor sol = std::get<0>(torch::linalg_lstsq(word_cols, target.unsqueeze(1))).squeeze(1);
  EXPECT_TRUE(torch::allclose(torch::matmul(word_cols, sol), target, 1e-9, 1e-9));
  EXPECT_GE(sol.min().item<double>(), -1e-9);
  EXPECT_NEAR(sol.sum().item<double>(), 1.0, 1e-9);
}

TEST(StoryOpsProperties, ConvexHull) {
  auto gen = at::make_generator<at::CPUGeneratorImpl>(12);
  const int64_t n = 2, l = 3, d = 8;  // 6 words in 8 dimensions: independent columns
  const auto s = torch::randn({n, d}, gen, kF64);
  const auto w = torch::randn({n, d, l}, gen, kF64);
  auto mask = torch::ones({n, l}, torch::kBool);
  mask[1][2] = false;
  const auto e = enrich_sentences(s, w, mask);
  const auto cols = flatten_words(w.unsqueeze(0), mask.unsqueeze(0)).squeeze(0);
  const auto keep = flatten_word_mask(mask.unsqueeze(0)).squeeze(0);
  const auto real_cols = cols.index({torch::indexing::Slice(), keep});
  for (int64_t i = 0; i < n; ++i) expect_convex_combination(e.s_prime[i], real_cols);

  const auto v = torch::randn({n, 3, 2, 2}, gen, kF64);
  const auto r = extended_spatial_attention(v, w, mask, torch::randn({d, 3}, gen, kF64));
  for (int64_t i = 0; i < r.v_w.size(1); ++i) expect_convex_combination(r.v_w.select(1, i), real_cols);
}

// Property sweep over random instances: row-stochasticity, exact zeros at
// masked words, bitwise PAD invariance, and no structurally-zero attention.
TEST(StoryOpsProperties, RandomInstances) {
  auto gen = at::make_generator<at::CPUGeneratorImpl>(2024);
  for (int trial = 0; trial < 1000; ++trial) {
    const int64_t b = torch::randint(1, 3, {1}, gen).item<int64_t>();
    const int64_t n = torch::randint(1, 6, {1}, gen).item<int64_t>();
    const int64_t l = torch::randint(1, 6, {1}, gen).item<int64_t>();
    const int64_t d = torch::randint(1, 9, {1}, gen).item<int64_t>();
    const int64_t c = torch::randint(1, 5, {1}, gen).item<int64_t>();
    const int64_t h = torch::randint(1, 4, {1}, gen).item<int64_t>();
    const int64_t wd = torch::randint(1, 4, {1}, gen).item<int64_t>();
    SCOPED_TRACE("trial " + std::to_string(trial));

    const auto s = torch::randn({b, n, d}, gen, kF64);
    auto w = torch::randn({b, n, d, l}, gen, kF64);
    const auto mask = storyviz::testing::random_prefix_mask(b * n, l, gen).reshape({b, n, l});
    const auto v = torch::randn({b, n, c, h, wd}, gen, kF64);
    const auto proj = torch::randn({d, c}, gen, kF64);

    // Different garbage at padded positions.
    const auto pad = mask.logical_not().unsqueeze(2).expand({b, n, d, l});
    const auto w_noisy = torch::where(pad, torch::randn({b, n, d, l}, gen, kF64) * 1e3, w);

    const auto e1 = enrich_sentences(s, w, mask);
    const auto e2 = enrich_sentences(s, w_noisy, mask);
    ASSERT_TRUE(torch::equal(e1.sigma, e2.sigma));
    ASSERT_TRUE(torch::equal(e1.s_prime, e2.s_prime));
    const auto word_mask = flatten_word_mask(mask).unsqueeze(1).expand_as(e1.sigma);
    ASSERT_TRUE((e1.sigma.masked_select(word_mask.logical_not()) == 0).all().item<bool>());
    ASSERT_TRUE(torch::allclose(e1.sigma.sum(-1), torch::ones({b, n}, kF64), 0, 1e-6));

    const auto a1 = extended_spatial_attention(v, w, mask, proj);
    const auto a2 = extended_spatial_attention(v, w_noisy, mask, proj);
    ASSERT_TRUE(torch::equal(a1.beta, a2.beta));
    ASSERT_TRUE(torch::equal(a1.v_w, a2.v_w));
    const auto att_mask = flatten_word_mask(mask).unsqueeze(1).expand_as(a1.beta);
    ASSERT_TRUE((a1.beta.masked_select(att_mask.logical_not()) == 0).all().item<bool>());
    ASSERT_TRUE((a1.beta.masked_select(att_mask) > 0).all().item<bool>());
    ASSERT_TRUE(torch::allclose(a1.beta.sum(-1), torch::ones({b, n * h * wd}, kF64), 0, 1e-6));

    // Fusion for the story discriminator uses all N*L words of the story.
    const auto words = w.permute({0, 2, 1, 3}).reshape({b, d, n * l});
    const auto words_noisy = w_noisy.permute({0, 2, 1, 3}).reshape({b, d, n * l});
    const auto fm = flatten_word_mask(mask);
    const auto f1 = fuse_features(v.select(1, 0), words, fm, proj);
    const auto f2 = fuse_features(v.select(1, 0), words_noisy, fm, proj);
    ASSERT_TRUE(torch::equal(f1, f2));
  }
}

TEST(StoryOpsProperties, GradientsMatchFiniteDifferences) {
  auto gen = at::make_generator<at::CPUGeneratorImpl>(77);
  const int64_t n = 2, l = 3, d = 4, c = 3, h = 2, wd = 2;
  for (int trial = 0; trial < 5; ++trial) {
    const auto s = torch::randn({n, d}, gen, kF64);
    const auto w = torch::randn({n, d, l}, gen, kF64);
    const auto mask = random_prefix_mask(n, l, gen);
    const auto v = torch::randn({n, c, h, wd}, gen, kF64);
    const auto proj = torch::randn({d, c}, gen, kF64);

    const auto r_sigma = torch::randn({n, n * l}, gen, kF64);
    const auto r_sprime = torch::randn({n, d}, gen, kF64);
    auto enrich = [&](const std::vector<torch::Tensor>& in) {
      const auto e = enrich_sentences(in[0], in[1], mask);
      return (e.sigma * r_sigma).sum() + (e.s_prime * r_sprime).sum();
    };
    EXPECT_LE(max_gradient_error(enrich, {s, w}), 1e-4);

    const auto r_beta = torch::randn({n * h * wd, n * l}, gen, kF64);
    const auto r_vw = torch::randn({d, n * h * wd}, gen, kF64);
    for (auto scope : {AttentionScope::kStory, AttentionScope::kSentence}) {
      auto attend = [&](const std::vector<torch::Tensor>& in) {
        const auto r = extended_spatial_attention(in[0], in[1], mask, in[2], scope);
        return (r.beta * r_beta).sum() + (r.v_w * r_vw).sum();
      };
      EXPECT_LE(max_gradient_error(attend, {v, w, proj}), 1e-4);
    }

    const auto words = torch::randn({d, n * l}, gen, kF64);
    const auto fmask = mask.reshape({n * l});
    const auto r_f = torch::randn({n * l, h, wd}, gen, kF64);
    auto fuse = [&](const std::vector<torch::Tensor>& in) {
      return (fuse_features(in[0], in[1], fmask, in[2]) * r_f).sum();
    };
    EXPECT_LE(max_gradient_error(fuse, {v.select(0, 0), words, proj}), 1e-4);
  }
}

TEST(WordSpaceProjection, OrthogonalInit) {
  torch::manual_seed(0);
  WordSpaceProjection p(16, 32);
  const auto& w = p->weight();  // [32, 16]: orthonormal columns
  EXPECT_TRUE(torch::allclose(torch::matmul(w.t(), w), torch::eye(16), 1e-5, 1e-5));
}

}  // namespace
}  // namespace storyviz::ops

#include <ATen/CPUGeneratorImpl.h>
#include <gtest/gtest.h>
#include <torch/torch.h>

#include "gradcheck.hpp"
#include "storyviz/error.hpp"
#include "storyviz/generator.hpp"

namespace storyviz::gen {
namespace {

using storyviz::testing::module_gradient_error;
using storyviz::testing::random_prefix_mask;

text::TextEncoding random_encoding(int64_t b, int64_t n, int64_t d, int64_t l, torch::Generator& g,
                                   torch::Dtype dtype = torch::kFloat32) {
  text::TextEncoding e;
  e.mask = random_prefix_mask(b * n, l, g).view({b, n, l});
  e.s = torch::randn({b, n, d}, g).to(dtype);
  e.w = (torch::randn({b, n, d, l}, g) * e.mask.unsqueeze(2)).to(dtype);
  return e;
}

GeneratorConfig tiny_config() {
  GeneratorConfig c;
  c.image_size = 16;
  c.word_dim = 4;
  c.noise_dim = 3;
  c.context_hidden = 4;
  c.base_channels = 8;
  c.min_channels = 2;
  c.attention_sites = {8};
  return c;
}

TEST(Generator, ShapesAndRange) {
  torch::manual_seed(0);
  GeneratorConfig config;
  Generator g(config);
  auto gen = torch::make_generator<at::CPUGeneratorImpl>(1);
  const auto enc = random_encoding(2, 5, 128, 12, gen);
  const auto noise = torch::randn({2, 5, 64}, gen);
  const auto out = g->forward(enc, noise);
  EXPECT_EQ(out.images.sizes(), (std::vector<int64_t>{2, 5, 3, 32, 32}));
  EXPECT_GE(out.images.min().item<float>(), 0.0f);
  EXPECT_LE(out.images.max().item<float>(), 1.0f);
  ASSERT_EQ(out.attention.size(), 1u);
  EXPECT_EQ(out.attention[0].beta.sizes(), (std::vector<int64_t>{2, 5 * 16 * 16, 5 * 12}));
  EXPECT_EQ(g->init_latents(out.enriched.s_prime, noise).sizes(), (std::vector<int64_t>{2, 5, 256, 4, 4}));
}

TEST(Generator, SameInputsSameOutputs) {
  torch::manual_seed(0);
  Generator g(tiny_config());
  auto gen = torch::make_generator<at::CPUGeneratorImpl>(2);
  const auto enc = random_encoding(1, 5, 4, 6, gen);
  const auto noise = torch::randn({1, 5, 3}, gen);
  EXPECT_TRUE(torch::equal(g->forward(enc, noise).images, g->forward(enc, noise).images));
}

TEST(Generator, BiasOnlyParamsGiveIdenticalInitialMaps) {
  torch::manual_seed(0);
  GeneratorConfig config;
  Generator g(config);
  {
    torch::NoGradGuard guard;
    for (auto& p : g->named_parameters()) {
      if (p.key().find("bias") == std::string::npos) p.value().zero_();
    }
  }
  auto gen = torch::make_generator<at::CPUGeneratorImpl>(3);
  const auto maps = g->init_latents(torch::randn({1, 5, 128}, gen), torch::randn({1, 5, 64}, gen));
  for (int64_t f = 1; f < 5; ++f) EXPECT_TRUE(torch::equal(maps[0][0], maps[0][f]));
}

TEST(Generator, NoiseChangesInitialMaps) {
  torch::manual_seed(0);
  GeneratorConfig config;
  Generator g(config);
  auto gen = torch::make_generator<at::CPUGeneratorImpl>(4);
  const auto row = torch::randn({1, 1, 128}, gen);
  const auto maps = g->init_latents(row.expand({1, 5, 128}).contiguous(), torch::randn({1, 5, 64}, gen));
  for (int64_t f = 1; f < 5; ++f) EXPECT_FALSE(torch::allclose(maps[0][0], maps[0][f]));
}

TEST(Generator, ShapeErrors) {
  Generator g(tiny_config());
  EXPECT_THROW(g->init_latents(torch::zeros({1, 5, 5}), torch::zeros({1, 5, 3})), ShapeError);
  EXPECT_THROW(g->init_latents(torch::zeros({1, 5, 4}), torch::zeros({1, 4, 3})), ShapeError);
  GeneratorConfig bad = tiny_config();
  bad.attention_sites = {12};
  EXPECT_THROW(Generator{bad}, ConfigError);
}

// Frame 0's pixels must depend on the words of the last sentence through the
// enriched sentences and the story-wide attention.
TEST(Generator, CrossFrameGradient) {
  torch::manual_seed(0);
  Generator g(tiny_config());
  g->to(torch::kFloat64);
  auto gen = torch::make_generator<at::CPUGeneratorImpl>(5);
  auto enc = random_encoding(1, 5, 4, 3, gen, torch::kFloat64);
  enc.mask.fill_(true);
  enc.w = torch::randn({1, 5, 4, 3}, gen).to(torch::kFloat64).requires_grad_(true);
  const auto noise = torch::randn({1, 5, 3}, gen).to(torch::kFloat64);
  const auto out = g->forward(enc, noise);
  out.images.select(1, 0).mean().backward();
  EXPECT_GT(enc.w.grad().select(1, 4).abs().sum().item<double>(), 0.0);

  for (const auto mode : {AttentionMode::kPerSentence, AttentionMode::kNone}) {
    auto config = tiny_config();
    config.attention = mode;
    config.use_enriched_sentences = false;
    Generator local(config);
    local->to(torch::kFloat64);
    auto w = enc.w.detach().clone().requires_grad_(true);
    text::TextEncoding e2{enc.s, w, enc.mask};
    local->forward(e2, noise).images.select(1, 0).mean().backward();
    const auto grad = w.grad();
    EXPECT_TRUE(!grad.defined() || grad.select(1, 4).abs().sum().item<double>() == 0.0) << name(mode);
  }
}

TEST(Generator, ParameterGradientsMatchFiniteDifferences) {
  torch::manual_seed(0);
  Generator g(tiny_config());
  g->to(torch::kFloat64);
  auto gen = torch::make_generator<at::CPUGeneratorImpl>(6);
  const auto enc = random_encoding(1, 5, 4, 3, gen, torch::kFloat64);
  const auto noise = torch::randn({1, 5, 3}, gen).to(torch::kFloat64);
  const auto weights = torch::randn({1, 5, 3, 16, 16}, gen).to(torch::kFloat64);
  const double err = module_gradient_error(*g, [&] { return (g->forward(enc, noise).images * weights).sum(); });
  EXPECT_LE(err, 1e-3);
}

TEST(Generator, ConfigJsonRoundTrip) {
  auto c = tiny_config();
  c.attention = AttentionMode::kPerSentence;
  c.use_enriched_sentences = false;
  const auto back = generator_config_from_json(to_json(c));
  EXPECT_EQ(to_json(back), to_json(c));
}

}  // namespace
}  // namespace storyviz::gen

#include <gtest/gtest.h>
#include <torch/torch.h>

#include "storyviz/error.hpp"
#include "storyviz/figures.hpp"
#include "storyviz/story_ops.hpp"

namespace storyviz::figures {
namespace {

const auto kF64 = torch::TensorOptions().dtype(torch::kFloat64);

// Mean over each 8 x 4 region written as explicit loops.
torch::Tensor pool_reference(const torch::Tensor& beta, int64_t frames, int64_t res) {
  const int64_t lt = beta.size(1);
  const int64_t rh = res / kRegionRows, rw = res / kRegionCols;
  auto out = torch::zeros({frames, lt, kRegions}, kF64);
  const auto b = beta.accessor<double, 2>();
  auto o = out.accessor<double, 3>();
  for (int64_t f = 0; f < frames; ++f) {
    for (int64_t j = 0; j < lt; ++j) {
      for (int64_t r = 0; r < kRegionRows; ++r) {
        for (int64_t c = 0; c < kRegionCols; ++c) {
          double sum = 0.0;
          for (int64_t y = r * rh; y < (r + 1) * rh; ++y) {
            for (int64_t x = c * rw; x < (c + 1) * rw; ++x) sum += b[f * res * res + y * res + x][j];
          }
          o[f][j][r * kRegionCols + c] = sum / static_cast<double>(rh * rw);
        }
      }
    }
  }
  return out;
}

TEST(PoolRegions, MatchesLoopReference) {
  torch::manual_seed(0);
  for (int64_t res : {8, 16, 32}) {
    const auto beta = torch::rand({3 * res * res, 7}, kF64);
    EXPECT_TRUE(torch::allclose(pool_regions(beta, 3, res), pool_reference(beta, 3, res), 0.0, 1e-6)) << res;
  }
}

TEST(PoolRegions, ShapeErrors) {
  EXPECT_THROW(pool_regions(torch::rand({10, 3}, kF64), 1, 4), ShapeError);
  EXPECT_THROW(pool_regions(torch::rand({36, 3}, kF64), 1, 6), ShapeError);
}

TEST(RenderHeatmap, UniformAttentionGivesOneColour) {
  const auto img = render_heatmap(torch::full({2, 3, kRegions}, 0.25, kF64), 2);
  const auto colour = img.pixel(0, 0);
  int coloured = 0;
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      const auto p = img.pixel(y, x);
      if (p == Rgb{0.5f, 0.5f, 0.5f}) continue;  // gap between panels
      ASSERT_EQ(p, colour);
      ++coloured;
    }
  }
  EXPECT_EQ(coloured, 2 * 3 * kRegions * 4);
}

TEST(RenderHeatmap, BrighterForMoreAttention) {
  auto pooled = torch::zeros({1, 1, kRegions}, kF64);
  pooled[0][0][5] = 1.0;
  const auto img = render_heatmap(pooled, 1);
  const auto hot = img.pixel(0, 5), cold = img.pixel(0, 0);
  EXPECT_GT(hot[0] + hot[1] + hot[2], cold[0] + cold[1] + cold[2]);
}

HeatmapData sigma_fixture() {
  torch::manual_seed(1);
  const int64_t n = 5, l = 3, d = 4;
  auto mask = torch::ones({n, l}, torch::kBool);
  mask.index_put_({1, 2}, false);
  mask.index_put_({3, 2}, false);
  const auto s = torch::randn({n, d}, kF64);
  const auto w = torch::randn({n, d, l}, kF64) * mask.unsqueeze(1);
  HeatmapData data;
  data.sigma = ops::enrich_sentences(s, w, mask).sigma;
  data.word_mask = mask.reshape({n * l});
  for (int64_t j = 0; j < n * l; ++j) data.all_words.push_back(mask.reshape({n * l})[j].item<bool>() ? "w" + std::to_string(j) : "");
  data.word_columns = {4};
  data.words = {"w4"};
  return data;
}

TEST(SigmaTable, RowsSumToOneOverRealWords) {
  const auto table = sigma_table(sigma_fixture());
  ASSERT_EQ(table.at("rows").size(), 5u);
  for (const auto& row : table.at("rows")) {
    EXPECT_NEAR(row.at("row_sum").get<double>(), 1.0, 1e-9);
    EXPECT_EQ(row.at("weights").size(), 13u);
    EXPECT_NEAR(row.at("mean_word_weight").get<double>(), 1.0 / 13.0, 1e-12);
  }
}

TEST(SigmaTable, KeywordWeightIsTheSelectedColumn) {
  const auto data = sigma_fixture();
  const auto table = sigma_table(data);
  for (int64_t r = 0; r < 5; ++r) {
    EXPECT_NEAR(table.at("rows")[static_cast<std::size_t>(r)].at("keyword_weight").get<double>(),
                data.sigma[r][4].item<double>(), 1e-12);
  }
}

TEST(StoryGrid, RealAboveFake) {
  const auto real = torch::zeros({1, 2, 3, 4, 4});
  const auto fake = torch::ones({1, 2, 3, 4, 4});
  const auto img = story_grid(real, fake, 1);
  EXPECT_EQ(img.width(), 8);
  EXPECT_EQ(img.height(), 8);
  EXPECT_EQ(img.pixel(0, 7), (Rgb{0.f, 0.f, 0.f}));
  EXPECT_EQ(img.pixel(7, 0), (Rgb{1.f, 1.f, 1.f}));
}

}  // namespace
}  // namespace storyviz::figures

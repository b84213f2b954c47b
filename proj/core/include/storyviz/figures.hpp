#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "storyviz/image.hpp"
#include "storyviz/training.hpp"

namespace storyviz::figures {

// Attention maps are pooled into an 8 x 4 grid of regions (32 in total).
inline constexpr int64_t kRegionRows = 8;
inline constexpr int64_t kRegionCols = 4;
inline constexpr int64_t kRegions = kRegionRows * kRegionCols;

// beta [N*H*W, Lt] for one story (frame-major rows, y then x within a frame)
// -> [N, Lt, 32]: the mean attention of each word over each region, regions
// in row-major order.
torch::Tensor pool_regions(const torch::Tensor& beta, int64_t frames, int64_t resolution);

struct HeatmapData {
  std::vector<std::string> words;      // labels of the selected story words
  std::vector<int64_t> word_columns;   // their columns in the story-flattened word axis
  torch::Tensor pooled;                // [N, words, 32]
  torch::Tensor sigma;                 // [N, N*L] correlation weights (undefined without enrichment)
  torch::Tensor word_mask;             // [N*L]
  std::vector<std::string> all_words;  // label per story word column, "" for padding
  int64_t resolution = 0;
};

// Runs the generator on one story and collects the attention of the first
// injection site restricted to `keyword` occurrences (all real words when
// keyword is empty). Throws ConfigError when the generator has no attention.
HeatmapData compute_heatmap(gen::Generator& generator, text::TextEncoder& encoder, const StoryTensors& story,
                            const std::string& keyword, std::uint64_t seed);

// One panel per frame, words on the y axis and regions on the x axis; colours
// are scaled by the global maximum of `pooled`.
Image render_heatmap(const torch::Tensor& pooled, int64_t cell = 8);

// Rows of sigma for the keyword's columns with the per-row mean word weight.
nlohmann::json sigma_table(const HeatmapData& data);

struct HeatmapFiles {
  std::filesystem::path image;
  std::filesystem::path sigma;
};

// Writes the heatmap PNG at out_path and the sigma table next to it
// (<stem>.sigma.json). Throws BoundsError when story_id is not in the split.
HeatmapFiles emit_heatmap(const std::filesystem::path& checkpoint, std::int64_t story_id, data::Split split,
                          const std::string& keyword, const std::filesystem::path& out_path, std::uint64_t seed);

// Real frames (top row) above generated frames (bottom row) per story.
Image story_grid(const torch::Tensor& real, const torch::Tensor& fake, int64_t scale = 2);

void emit_story_grid(const std::filesystem::path& checkpoint, const std::vector<std::int64_t>& story_ids, data::Split split,
                     const std::filesystem::path& out_path, std::uint64_t seed);

// Stories of `split` with the given ids, in the order requested.
StoryTensors select_stories(const std::filesystem::path& dataset, data::Split split, int image_size,
                            const std::vector<std::int64_t>& story_ids);

}  // namespace storyviz::figures

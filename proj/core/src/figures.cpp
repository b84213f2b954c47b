#include "storyviz/figures.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <ATen/CPUGeneratorImpl.h>

#include "storyviz/error.hpp"

namespace storyviz::figures {

using nlohmann::json;
namespace fs = std::filesystem;

torch::Tensor pool_regions(const torch::Tensor& beta, int64_t frames, int64_t resolution) {
  if (beta.dim() != 2 || beta.size(0) != frames * resolution * resolution) {
    throw ShapeError("pool_regions expects beta [N*H*W, Lt]");
  }
  if (resolution % kRegionRows != 0 || resolution % kRegionCols != 0) {
    throw ShapeError("attention resolution " + std::to_string(resolution) + " does not split into 8 x 4 regions");
  }
  const int64_t lt = beta.size(1);
  // [N, H, W, Lt] -> [N, Lt, H, W] -> mean over each region's cells
  const auto maps = beta.view({frames, resolution, resolution, lt}).permute({0, 3, 1, 2});
  const auto pooled = torch::adaptive_avg_pool2d(maps.contiguous(), {kRegionRows, kRegionCols});
  return pooled.flatten(2);
}

namespace {

std::vector<std::string> split_words(const std::string& caption) {
  std::istringstream in(caption);
  std::vector<std::string> out;
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

Rgb ramp(float v) {
  const float c = std::clamp(v, 0.0f, 1.0f);
  return {std::min(1.0f, 2.0f * c), std::clamp(2.0f * c - 0.6f, 0.0f, 1.0f), std::clamp(3.0f * c - 2.0f, 0.0f, 1.0f)};
}

}  // namespace

HeatmapData compute_heatmap(gen::Generator& generator, text::TextEncoder& encoder, const StoryTensors& story,
                            const std::string& keyword, std::uint64_t seed) {
  if (story.size() != 1) throw ShapeError("compute_heatmap expects exactly one story");
  if (generator->config().attention == gen::AttentionMode::kNone) {
    throw ConfigError("the generator has no attention to visualise");
  }
  torch::NoGradGuard guard;
  generator->eval();
  const auto encoding = train::encode_stories(encoder, story.tokens, story.mask);
  auto rng = torch::make_generator<at::CPUGeneratorImpl>(seed);
  const int64_t n = story.tokens.size(1), l = story.tokens.size(2);
  const auto noise = torch::randn({1, n, generator->config().noise_dim}, rng);
  const auto out = generator->forward(encoding, noise);
  if (out.attention.empty()) throw ConfigError("the generator has no attention site");

  HeatmapData data;
  const auto& att = out.attention.front();
  data.resolution = att.v_w_maps.size(-1);
  data.word_mask = story.mask[0].reshape({n * l});
  for (int64_t f = 0; f < n; ++f) {
    auto words = split_words(story.captions[0][static_cast<std::size_t>(f)]);
    words.resize(static_cast<std::size_t>(l));
    for (auto& w : words) data.all_words.push_back(w);
  }
  for (int64_t j = 0; j < n * l; ++j) {
    const auto& w = data.all_words[static_cast<std::size_t>(j)];
    if (w.empty()) continue;
    if (keyword.empty() || w == keyword) {
      data.word_columns.push_back(j);
      data.words.push_back(w);
    }
  }
  if (data.word_columns.empty()) throw ConfigError("keyword '" + keyword + "' does not occur in the story");
  const auto pooled = pool_regions(att.beta[0], n, data.resolution);  // [N, NL, 32]
  data.pooled = pooled.index_select(1, torch::tensor(data.word_columns, torch::kLong));
  if (out.enriched.sigma.defined()) {
    data.sigma = out.enriched.sigma[0];
  } else {
    data.sigma = ops::enrich_sentences(encoding.s[0], encoding.w[0], encoding.mask[0]).sigma;
  }
  return data;
}

Image render_heatmap(const torch::Tensor& pooled, int64_t cell) {
  if (pooled.dim() != 3 || pooled.size(2) != kRegions) throw ShapeError("render_heatmap expects [N, words, 32]");
  const int64_t n = pooled.size(0), words = pooled.size(1);
  const int64_t gap = std::max<int64_t>(1, cell / 2);
  const int64_t panel_w = kRegions * cell;
  const int width = static_cast<int>(n * panel_w + (n - 1) * gap);
  const int height = static_cast<int>(words * cell);
  Image img(width, height, {0.5f, 0.5f, 0.5f});  // gray gaps; the ramp never produces gray
  const auto values = pooled.to(torch::kFloat64).contiguous();
  const double max = values.max().item<double>();
  const auto acc = values.accessor<double, 3>();
  for (int64_t f = 0; f < n; ++f) {
    for (int64_t w = 0; w < words; ++w) {
      for (int64_t r = 0; r < kRegions; ++r) {
        const auto colour = ramp(max > 0.0 ? static_cast<float>(acc[f][w][r] / max) : 0.0f);
        for (int64_t y = w * cell; y < (w + 1) * cell; ++y) {
          for (int64_t x = f * (panel_w + gap) + r * cell; x < f * (panel_w + gap) + (r + 1) * cell; ++x) {
            img.set_pixel(static_cast<int>(y), static_cast<int>(x), colour);
          }
        }
      }
    }
  }
  return img;
}

json sigma_table(const HeatmapData& data) {
  const int64_t n = data.sigma.size(0);
  const int64_t l = data.sigma.size(1) / n;
  const auto sigma = data.sigma.to(torch::kFloat64);
  const auto mask = data.word_mask.to(torch::kBool);
  const int64_t real = mask.sum().item<int64_t>();
  json rows = json::array();
  for (int64_t row = 0; row < n; ++row) {
    double keyword = 0.0, total = 0.0;
    json weights = json::array();
    for (int64_t j = 0; j < n * l; ++j) {
      if (!mask[j].item<bool>()) continue;
      const double v = sigma[row][j].item<double>();
      total += v;
      weights.push_back({{"column", j}, {"word", data.all_words[static_cast<std::size_t>(j)]}, {"sigma", v}});
    }
    for (auto j : data.word_columns) keyword += sigma[row][j].item<double>();
    rows.push_back({{"sentence", row},
                    {"keyword_weight", keyword},
                    {"mean_word_weight", real > 0 ? 1.0 / static_cast<double>(real) : 0.0},
                    {"row_sum", total},
                    {"weights", weights}});
  }
  return {{"keyword_columns", data.word_columns}, {"keyword_words", data.words}, {"rows", rows}};
}

StoryTensors select_stories(const fs::path& dataset, data::Split split, int image_size,
                            const std::vector<std::int64_t>& story_ids) {
  const auto all = load_story_tensors(dataset, split, image_size);
  std::vector<int64_t> rows;
  for (auto id : story_ids) {
    const auto it = std::find_if(all.specs.begin(), all.specs.end(), [&](const auto& s) { return s.story_id == id; });
    if (it == all.specs.end()) {
      throw BoundsError("story " + std::to_string(id) + " is not in the " + std::string(data::name(split)) + " split");
    }
    rows.push_back(it - all.specs.begin());
  }
  return all.index(rows);
}

HeatmapFiles emit_heatmap(const fs::path& checkpoint, std::int64_t story_id, data::Split split,
                          const std::string& keyword, const fs::path& out_path, std::uint64_t seed) {
  auto ckpt = train::load_checkpoint(checkpoint);
  auto encoders = text::load_encoders(ckpt.config.encoders);
  const auto story = select_stories(ckpt.config.dataset, split, ckpt.config.image_size, {story_id});
  const std::string word = keyword.empty() ? std::string(data::name(story.specs[0].style)) : keyword;
  const auto heat = compute_heatmap(ckpt.generator, encoders.text, story, word, seed);

  HeatmapFiles files;
  files.image = out_path;
  files.sigma = out_path.parent_path() / (out_path.stem().string() + ".sigma.json");
  if (!out_path.parent_path().empty()) fs::create_directories(out_path.parent_path());
  write_png(files.image, render_heatmap(heat.pooled));
  json doc = sigma_table(heat);
  doc["story_id"] = story_id;
  doc["keyword"] = word;
  doc["captions"] = story.captions[0];
  doc["pooled_regions"] = json::array();
  const auto pooled = heat.pooled.to(torch::kFloat64).contiguous();
  for (int64_t f = 0; f < pooled.size(0); ++f) {
    json panel = json::array();
    for (int64_t w = 0; w < pooled.size(1); ++w) {
      const auto row = pooled[f][w];
      panel.push_back(std::vector<double>(row.data_ptr<double>(), row.data_ptr<double>() + row.numel()));
    }
    doc["pooled_regions"].push_back(panel);
  }
  std::ofstream out(files.sigma);
  if (!out) throw IoError("cannot write " + files.sigma.string());
  out << doc.dump(2) << '\n';
  return files;
}

Image story_grid(const torch::Tensor& real, const torch::Tensor& fake, int64_t scale) {
  if (real.dim() != 5 || !real.sizes().equals(fake.sizes())) throw ShapeError("story_grid expects matching [B, N, 3, S, S]");
  const int64_t b = real.size(0), n = real.size(1), s = real.size(3) * scale;
  Image img(static_cast<int>(n * s), static_cast<int>(2 * b * s));
  for (int64_t i = 0; i < b; ++i) {
    for (int64_t row = 0; row < 2; ++row) {
      const auto& src = row == 0 ? real : fake;
      for (int64_t f = 0; f < n; ++f) {
        const auto frame = tensor_to_image(src[i][f]);
        for (int64_t y = 0; y < s; ++y) {
          for (int64_t x = 0; x < s; ++x) {
            img.set_pixel(static_cast<int>((2 * i + row) * s + y), static_cast<int>(f * s + x),
                          frame.pixel(static_cast<int>(y / scale), static_cast<int>(x / scale)));
          }
        }
      }
    }
  }
  return img;
}

void emit_story_grid(const fs::path& checkpoint, const std::vector<std::int64_t>& story_ids, data::Split split,
                     const fs::path& out_path, std::uint64_t seed) {
  auto ckpt = train::load_checkpoint(checkpoint);
  auto encoders = text::load_encoders(ckpt.config.encoders);
  const auto stories = select_stories(ckpt.config.dataset, split, ckpt.config.image_size, story_ids);
  const auto encoding = train::encode_stories(encoders.text, stories.tokens, stories.mask);
  const auto fake = train::generate_stories(ckpt.generator, encoding, seed);
  if (!out_path.parent_path().empty()) fs::create_directories(out_path.parent_path());
  write_png(out_path, story_grid(stories.images, fake, std::max<int64_t>(1, 64 / stories.images.size(-1))));
}

}  // namespace storyviz::figures

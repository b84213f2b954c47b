#include <gtest/gtest.h>

#include <filesystem>
#include <set>

#include "storyviz/data_synth.hpp"
#include "storyviz/digest.hpp"
#include "storyviz/error.hpp"
#include "storyviz/story_tensors.hpp"
#include "storyviz/vocab.hpp"
#include "temp_dir.hpp"

namespace storyviz::data {
namespace {

bool contains_word(const std::string& caption, std::string_view word) {
  for (const auto& t : text::split_tokens(caption)) {
    if (t == word) return true;
  }
  return false;
}

TEST(StorySpec, SameSeedSameStory) {
  const DatasetConfig config;
  EXPECT_EQ(generate_story_spec(42, config, 7), generate_story_spec(42, config, 7));
  EXPECT_NE(generate_story_spec(42, config), generate_story_spec(43, config));
}

TEST(StorySpec, StructuralInvariants) {
  const DatasetConfig config;
  for (std::uint64_t seed = 0; seed < 300; ++seed) {
    const auto spec = generate_story_spec(seed, config);
    ASSERT_EQ(static_cast<int>(spec.frames.size()), config.frames_per_story);
    int style_mentions = 0, object_mentions = 0;
    for (const auto& frame : spec.frames) {
      ASSERT_GE(static_cast<int>(frame.shapes.size()), config.min_shapes);
      ASSERT_LE(static_cast<int>(frame.shapes.size()), config.max_shapes);
      std::set<int> cells;
      for (const auto& s : frame.shapes) {
        EXPECT_NE(s.cell, spec.object_cell);
        cells.insert(s.cell);
      }
      EXPECT_EQ(cells.size(), frame.shapes.size());
      style_mentions += frame.mentions_style;
      object_mentions += frame.mentions_object;
    }
    EXPECT_GE(style_mentions, 1);
    EXPECT_GE(object_mentions, 1);
  }
}

TEST(StorySpec, MentionCountIsUniform) {
  // k is uniform on 1..5, so the style is in every caption one story in five.
  const DatasetConfig config;
  int everywhere = 0;
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    int mentions = 0;
    for (const auto& f : generate_story_spec(seed, config).frames) mentions += f.mentions_style;
    everywhere += mentions == config.frames_per_story;
  }
  EXPECT_NEAR(everywhere / 1000.0, 0.2, 0.05);
}

TEST(StorySpec, JsonRoundTrip) {
  const auto spec = generate_story_spec(5, DatasetConfig{}, 3);
  EXPECT_EQ(story_spec_from_json(to_json(spec)), spec);
}

TEST(Captions, KeywordsAppearExactlyWhereMentioned) {
  const DatasetConfig config;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const auto spec = generate_story_spec(seed, config);
    for (int f = 0; f < config.frames_per_story; ++f) {
      const auto caption = caption_frame(spec, f, config);
      const auto& frame = spec.frames[static_cast<std::size_t>(f)];
      EXPECT_LE(static_cast<int>(text::split_tokens(caption).size()), config.max_words) << caption;
      EXPECT_EQ(contains_word(caption, name(spec.style)), frame.mentions_style) << caption;
      EXPECT_EQ(contains_word(caption, name(spec.object)), frame.mentions_object) << caption;
    }
  }
}

TEST(Render, ProbesRecoverStoryKeywordsFromEveryFrame) {
  const DatasetConfig config;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto spec = generate_story_spec(seed, config);
    for (int f = 0; f < config.frames_per_story; ++f) {
      const auto frame = render_frame(spec, f, config);
      EXPECT_EQ(frame.width(), config.image_size);
      EXPECT_EQ(probe_style(frame), spec.style);
      const auto object = probe_object(frame, config.grid);
      ASSERT_TRUE(object.has_value());
      EXPECT_EQ(object->object, spec.object);
      EXPECT_EQ(object->cell, spec.object_cell);
    }
  }
}

TEST(Captions, HeldOutStoriesNeedNoUnknownTokens) {
  const DatasetConfig config;
  std::vector<std::string> corpus;
  for (std::uint64_t seed = 0; seed < 300; ++seed) {
    const auto spec = generate_story_spec(seed, config);
    for (int f = 0; f < config.frames_per_story; ++f) corpus.push_back(caption_frame(spec, f, config));
  }
  const auto vocab = text::build_vocab(corpus);
  for (std::uint64_t seed = 1000; seed < 1300; ++seed) {
    const auto spec = generate_story_spec(seed, config);
    for (int f = 0; f < config.frames_per_story; ++f) {
      const auto row = text::tokenize(caption_frame(spec, f, config), vocab, config.max_words);
      for (auto id : row.ids) ASSERT_NE(id, text::kUnkId) << caption_frame(spec, f, config);
    }
  }
}

TEST(Captions, FrameIndexOutOfRange) {
  const DatasetConfig config;
  const auto spec = generate_story_spec(1, config);
  EXPECT_THROW(caption_frame(spec, 5, config), BoundsError);
  EXPECT_THROW(render_frame(spec, -1, config), BoundsError);
}

TEST(Render, EmptySceneIsThePlate) {
  const DatasetConfig config;
  auto spec = generate_story_spec(3, config);
  spec.frames[1].shapes.clear();
  EXPECT_EQ(render_frame(spec, 1, config), render_plate(spec, 1, config));
}

TEST(Render, SnowIsBrighterThanNight) {
  const DatasetConfig config;
  auto snow = generate_story_spec(4, config);
  auto night = snow;
  snow.style = Style::kSnow;
  night.style = Style::kNight;
  EXPECT_GT(mean_luminance(render_frame(snow, 0, config)), mean_luminance(render_frame(night, 0, config)));
}

TEST(Render, Deterministic) {
  const DatasetConfig config;
  const auto spec = generate_story_spec(9, config);
  EXPECT_EQ(render_frame(spec, 2, config), render_frame(spec, 2, config));
}

TEST(DatasetConfig, RejectsInvalid) {
  DatasetConfig c;
  c.max_shapes = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = DatasetConfig{};
  c.frames_per_story = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = DatasetConfig{};
  c.palette.clear();
  EXPECT_THROW(c.validate(), ConfigError);
}

DatasetConfig tiny_config() {
  DatasetConfig c;
  c.splits = {12, 4, 4};
  return c;
}

TEST(Dataset, SameSeedSameDigest) {
  storyviz::testing::TempDir tmp;
  const auto a = build_dataset(tiny_config(), 3, tmp.path() / "a");
  const auto b = build_dataset(tiny_config(), 3, tmp.path() / "b");
  const auto c = build_dataset(tiny_config(), 4, tmp.path() / "c");
  EXPECT_EQ(a.content_digest, b.content_digest);
  EXPECT_NE(a.content_digest, c.content_digest);
  EXPECT_EQ(manifest_digest(tmp.path() / "a"), manifest_digest(tmp.path() / "b"));
}

TEST(Dataset, SplitsAreDisjointAndLoadable) {
  storyviz::testing::TempDir tmp;
  const auto m = build_dataset(tiny_config(), 0, tmp.path());
  EXPECT_EQ(m.train.size(), 12u);
  EXPECT_EQ(m.val.size(), 4u);
  EXPECT_EQ(m.test.size(), 4u);
  std::set<std::string> all(m.train.begin(), m.train.end());
  all.insert(m.val.begin(), m.val.end());
  all.insert(m.test.begin(), m.test.end());
  EXPECT_EQ(all.size(), 20u);

  const auto val = load_split(tmp.path(), Split::kVal);
  ASSERT_EQ(val.size(), 4u);
  for (const auto& rec : val) {
    ASSERT_EQ(rec.frames.size(), 5u);
    for (int f = 0; f < 5; ++f) {
      EXPECT_EQ(rec.captions[static_cast<std::size_t>(f)], caption_frame(rec.spec, f, m.config));
    }
  }
  const auto tensors = load_story_tensors(tmp.path(), Split::kTrain, 16);
  EXPECT_EQ(tensors.images.sizes(), (std::vector<int64_t>{12, 5, 3, 16, 16}));
  EXPECT_EQ(tensors.tokens.sizes(), (std::vector<int64_t>{12, 5, kMaxWords}));
  EXPECT_GE(tensors.images.min().item<float>(), 0.0f);
  EXPECT_LE(tensors.images.max().item<float>(), 1.0f);
}

TEST(Dataset, RefusesNonEmptyDirectory) {
  storyviz::testing::TempDir tmp;
  build_dataset(tiny_config(), 0, tmp.path());
  EXPECT_THROW(build_dataset(tiny_config(), 0, tmp.path()), IoError);
  EXPECT_NO_THROW(build_dataset(tiny_config(), 0, tmp.path(), {true}));
}

TEST(Dataset, AreaDownsamplingAveragesBlocks) {
  const auto x = torch::arange(16, torch::kFloat32).view({1, 1, 4, 4}).expand({1, 3, 4, 4}).contiguous();
  const auto y = resize_frames(x, 2);
  // top-left block holds 0, 1, 4, 5
  EXPECT_FLOAT_EQ(y[0][0][0][0].item<float>(), 2.5f);
  EXPECT_FLOAT_EQ(y[0][2][1][1].item<float>(), 12.5f);
}

TEST(Splitmix, KnownValue) {
  // First output of the reference generator seeded with 0.
  EXPECT_EQ(splitmix64(0), 0xe220a8397b1dcdafULL);
}

TEST(Digest, Sha256KnownAnswer) {
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

}  // namespace
}  // namespace storyviz::data

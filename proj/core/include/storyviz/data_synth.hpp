#pragma once

// Procedural "shape stories": five-frame stories rendered from a symbolic
// description, with captions that drop the story-wide keywords (background
// style, recurring object) from some sentences.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "storyviz/image.hpp"

namespace storyviz::data {

inline constexpr int kFramesPerStory = 5;
inline constexpr int kMaxWords = 12;

enum class Style : std::uint8_t { kSnow, kNight, kDay, kRain };
enum class ShapeKind : std::uint8_t { kCircle, kSquare, kTriangle };
enum class Color : std::uint8_t { kRed, kGreen, kBlue, kYellow, kPurple, kOrange, kPink, kBrown };
enum class RecurringObject : std::uint8_t { kTent, kTree, kBall, kHouse, kBoat, kCar, kFlower, kKite };

inline constexpr int kNumStyles = 4;
inline constexpr int kNumShapeKinds = 3;
inline constexpr int kNumColors = 8;
inline constexpr int kNumObjects = 8;

std::string_view name(Style s);
std::string_view name(ShapeKind s);
std::string_view name(Color c);
std::string_view name(RecurringObject o);

// Inverse of name(); throws ConfigError on unknown names.
Style parse_style(std::string_view s);
ShapeKind parse_shape(std::string_view s);
Color parse_color(std::string_view s);
RecurringObject parse_object(std::string_view s);

Rgb rgb(Color c);
Rgb rgb(RecurringObject o);
Rgb base_rgb(Style s);

struct ShapeInstance {
  ShapeKind shape = ShapeKind::kCircle;
  Color color = Color::kRed;
  int cell = 0;  // row-major index into the layout grid

  friend bool operator==(const ShapeInstance&, const ShapeInstance&) = default;
};

struct FrameSpec {
  std::vector<ShapeInstance> shapes;
  int caption_template_id = 0;
  bool mentions_style = false;
  bool mentions_object = false;

  friend bool operator==(const FrameSpec&, const FrameSpec&) = default;
};

struct StorySpec {
  std::int64_t story_id = 0;
  Style style = Style::kSnow;
  RecurringObject object = RecurringObject::kTent;
  int object_cell = 0;  // the recurring object stays in this cell in every frame
  std::vector<FrameSpec> frames;
  std::uint64_t seed = 0;

  friend bool operator==(const StorySpec&, const StorySpec&) = default;
};

struct SplitSizes {
  int train = 2000;
  int val = 200;
  int test = 500;
};

struct DatasetConfig {
  int frames_per_story = kFramesPerStory;
  int max_words = kMaxWords;
  int grid = 4;
  int image_size = 32;
  int min_shapes = 1;
  int max_shapes = 3;
  std::vector<Color> palette = {Color::kRed,    Color::kGreen,  Color::kBlue, Color::kYellow,
                                Color::kPurple, Color::kOrange, Color::kPink, Color::kBrown};
  std::vector<ShapeKind> shapes = {ShapeKind::kCircle, ShapeKind::kSquare, ShapeKind::kTriangle};
  std::vector<Style> styles = {Style::kSnow, Style::kNight, Style::kDay, Style::kRain};
  std::vector<RecurringObject> objects = {
      RecurringObject::kTent, RecurringObject::kTree, RecurringObject::kBall,
      RecurringObject::kHouse, RecurringObject::kBoat, RecurringObject::kCar,
      RecurringObject::kFlower, RecurringObject::kKite};
  SplitSizes splits;

  // Throws ConfigError when the configuration cannot produce valid stories.
  void validate() const;
};

nlohmann::json to_json(const DatasetConfig& config);
DatasetConfig dataset_config_from_json(const nlohmann::json& j);

nlohmann::json to_json(const StorySpec& spec);
StorySpec story_spec_from_json(const nlohmann::json& j);

StorySpec generate_story_spec(std::uint64_t seed, const DatasetConfig& config,
                              std::int64_t story_id = 0);

Image render_frame(const StorySpec& spec, int frame_idx, const DatasetConfig& config);

// Background plus the recurring object: what a frame with no foreground
// shapes looks like.
Image render_plate(const StorySpec& spec, int frame_idx, const DatasetConfig& config);

std::string caption_frame(const StorySpec& spec, int frame_idx, const DatasetConfig& config);

// Pixel-level probes that recover the story-wide keywords from a clean render.
Style probe_style(const Image& frame);
struct ObjectProbe {
  RecurringObject object;
  int cell;
};
std::optional<ObjectProbe> probe_object(const Image& frame, int grid);

// ---------------------------------------------------------------------------
// On-disk dataset

enum class Split : std::uint8_t { kTrain, kVal, kTest };
std::string_view name(Split s);
Split parse_split(std::string_view s);

struct DatasetManifest {
  std::string version = "1";
  DatasetConfig config;
  std::uint64_t seed = 0;
  SplitSizes splits;
  int image_size = 32;
  int frames_per_story = kFramesPerStory;
  int max_words = kMaxWords;
  std::string vocab_path = "vocab.json";
  // story directories relative to the dataset root, per split
  std::vector<std::string> train, val, test;
  std::string content_digest;  // SHA-256 over every written file, in write order

  const std::vector<std::string>& records(Split s) const;
};

nlohmann::json to_json(const DatasetManifest& m);
DatasetManifest manifest_from_json(const nlohmann::json& j);

struct BuildOptions {
  bool overwrite = false;
};

// Writes manifest.json, vocab.json and stories/<split>/<id>/{frame_k.png,
// story.json}. Refuses a non-empty directory unless options.overwrite.
DatasetManifest build_dataset(const DatasetConfig& config, std::uint64_t seed,
                              const std::filesystem::path& out_dir, BuildOptions options = {});

DatasetManifest read_manifest(const std::filesystem::path& dataset_dir);

// SHA-256 of manifest.json, hex encoded.
std::string manifest_digest(const std::filesystem::path& dataset_dir);

struct StoryRecord {
  StorySpec spec;
  std::vector<std::string> captions;
  std::vector<Image> frames;
};

// Loads up to `limit` stories of a split (all when limit is empty).
std::vector<StoryRecord> load_split(const std::filesystem::path& dataset_dir, Split split,
                                    std::optional<int> limit = std::nullopt);

// 64-bit mixing used for deriving per-story seeds.
std::uint64_t splitmix64(std::uint64_t x);

}  // namespace storyviz::data

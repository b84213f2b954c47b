#include "storyviz/data_synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>

#include "storyviz/digest.hpp"
#include "storyviz/error.hpp"
#include "storyviz/vocab.hpp"

namespace storyviz::data {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Names and colours

namespace {

constexpr std::array<std::string_view, kNumStyles> kStyleNames = {"snow", "night", "day", "rain"};
constexpr std::array<std::string_view, kNumShapeKinds> kShapeNames = {"circle", "square",
                                                                      "triangle"};
constexpr std::array<std::string_view, kNumColors> kColorNames = {
    "red", "green", "blue", "yellow", "purple", "orange", "pink", "brown"};
constexpr std::array<std::string_view, kNumObjects> kObjectNames = {
    "tent", "tree", "ball", "house", "boat", "car", "flower", "kite"};

// Style phrases as they appear in captions; the last token is the keyword.
constexpr std::array<std::string_view, kNumStyles> kStylePhrases = {"in the snow", "at night",
                                                                    "in the day", "in the rain"};

constexpr std::array<Rgb, kNumColors> kPalette = {{
    {0.90f, 0.10f, 0.10f},  // red
    {0.10f, 0.75f, 0.20f},  // green
    {0.10f, 0.20f, 0.90f},  // blue
    {0.95f, 0.90f, 0.10f},  // yellow
    {0.55f, 0.15f, 0.70f},  // purple
    {1.00f, 0.55f, 0.00f},  // orange
    {1.00f, 0.50f, 0.75f},  // pink
    {0.50f, 0.30f, 0.10f},  // brown
}};

constexpr std::array<Rgb, kNumObjects> kObjectColors = {{
    {0.60f, 0.60f, 0.20f},  // tent
    {0.00f, 0.40f, 0.10f},  // tree
    {0.00f, 0.85f, 0.85f},  // ball
    {0.60f, 0.00f, 0.20f},  // house
    {0.00f, 0.50f, 0.50f},  // boat
    {0.85f, 0.00f, 0.85f},  // car
    {0.75f, 0.60f, 1.00f},  // flower
    {1.00f, 0.80f, 0.50f},  // kite
}};

constexpr std::array<Rgb, kNumStyles> kStyleBase = {{
    {0.86f, 0.89f, 0.96f},  // snow
    {0.06f, 0.07f, 0.20f},  // night
    {0.55f, 0.80f, 0.98f},  // day
    {0.42f, 0.47f, 0.55f},  // rain
}};

constexpr Rgb kSnowSpeckle = {1.f, 1.f, 1.f};
constexpr Rgb kRainStreak = {0.25f, 0.30f, 0.50f};

template <std::size_t K, typename E>
E parse_name(std::string_view s, const std::array<std::string_view, K>& names, const char* what) {
  for (std::size_t i = 0; i < K; ++i) {
    if (names[i] == s) return static_cast<E>(i);
  }
  throw ConfigError(std::string("unknown ") + what + ": " + std::string(s));
}

}  // namespace

std::string_view name(Style s) { return kStyleNames.at(static_cast<std::size_t>(s)); }
std::string_view name(ShapeKind s) { return kShapeNames.at(static_cast<std::size_t>(s)); }
std::string_view name(Color c) { return kColorNames.at(static_cast<std::size_t>(c)); }
std::string_view name(RecurringObject o) { return kObjectNames.at(static_cast<std::size_t>(o)); }

Style parse_style(std::string_view s) { return parse_name<kNumStyles, Style>(s, kStyleNames, "style"); }
ShapeKind parse_shape(std::string_view s) {
  return parse_name<kNumShapeKinds, ShapeKind>(s, kShapeNames, "shape");
}
Color parse_color(std::string_view s) { return parse_name<kNumColors, Color>(s, kColorNames, "color"); }
RecurringObject parse_object(std::string_view s) {
  return parse_name<kNumObjects, RecurringObject>(s, kObjectNames, "object");
}

Rgb rgb(Color c) { return kPalette.at(static_cast<std::size_t>(c)); }
Rgb rgb(RecurringObject o) { return kObjectColors.at(static_cast<std::size_t>(o)); }
Rgb base_rgb(Style s) { return kStyleBase.at(static_cast<std::size_t>(s)); }

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// ---------------------------------------------------------------------------
// Config

void DatasetConfig::validate() const {
  if (frames_per_story != kFramesPerStory) {
    throw ConfigError("frames_per_story must be " + std::to_string(kFramesPerStory));
  }
  if (max_words != kMaxWords) throw ConfigError("max_words must be " + std::to_string(kMaxWords));
  if (grid < 2) throw ConfigError("grid must be at least 2");
  if (image_size != 32 && image_size != 64) throw ConfigError("image_size must be 32 or 64");
  if (image_size % grid != 0) throw ConfigError("image_size must be divisible by grid");
  if (palette.empty()) throw ConfigError("palette is empty");
  if (shapes.empty()) throw ConfigError("shape set is empty");
  if (styles.empty()) throw ConfigError("style set is empty");
  if (objects.empty()) throw ConfigError("recurring object set is empty");
  if (min_shapes < 1 || max_shapes < min_shapes) throw ConfigError("invalid shape count range");
  if (max_shapes > grid * grid - 1) throw ConfigError("more shapes than free grid cells");
  if (splits.train < 0 || splits.val < 0 || splits.test < 0) {
    throw ConfigError("split sizes must be non-negative");
  }
}

json to_json(const DatasetConfig& c) {
  json j;
  j["frames_per_story"] = c.frames_per_story;
  j["max_words"] = c.max_words;
  j["grid"] = c.grid;
  j["image_size"] = c.image_size;
  j["min_shapes"] = c.min_shapes;
  j["max_shapes"] = c.max_shapes;
  auto names = [](const auto& v) {
    std::vector<std::string> out;
    for (auto e : v) out.emplace_back(name(e));
    return out;
  };
  j["palette"] = names(c.palette);
  j["shapes"] = names(c.shapes);
  j["styles"] = names(c.styles);
  j["objects"] = names(c.objects);
  j["splits"] = {{"train", c.splits.train}, {"val", c.splits.val}, {"test", c.splits.test}};
  return j;
}

DatasetConfig dataset_config_from_json(const json& j) {
  DatasetConfig c;
  try {
    c.frames_per_story = j.value("frames_per_story", c.frames_per_story);
    c.max_words = j.value("max_words", c.max_words);
    c.grid = j.value("grid", c.grid);
    c.image_size = j.value("image_size", c.image_size);
    c.min_shapes = j.value("min_shapes", c.min_shapes);
    c.max_shapes = j.value("max_shapes", c.max_shapes);
    if (j.contains("palette")) {
      c.palette.clear();
      for (const auto& s : j["palette"]) c.palette.push_back(parse_color(s.get<std::string>()));
    }
    if (j.contains("shapes")) {
      c.shapes.clear();
      for (const auto& s : j["shapes"]) c.shapes.push_back(parse_shape(s.get<std::string>()));
    }
    if (j.contains("styles")) {
      c.styles.clear();
      for (const auto& s : j["styles"]) c.styles.push_back(parse_style(s.get<std::string>()));
    }
    if (j.contains("objects")) {
      c.objects.clear();
      for (const auto& s : j["objects"]) c.objects.push_back(parse_object(s.get<std::string>()));
    }
    if (j.contains("splits")) {
      const auto& s = j["splits"];
      c.splits.train = s.value("train", c.splits.train);
      c.splits.val = s.value("val", c.splits.val);
      c.splits.test = s.value("test", c.splits.test);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed dataset config: ") + e.what());
  }
  return c;
}

json to_json(const StorySpec& spec) {
  json frames = json::array();
  for (const auto& f : spec.frames) {
    json shapes = json::array();
    for (const auto& s : f.shapes) {
      shapes.push_back({{"shape", name(s.shape)}, {"color", name(s.color)}, {"cell", s.cell}});
    }
    frames.push_back({{"shapes", shapes},
                      {"caption_template_id", f.caption_template_id},
                      {"mentions_style", f.mentions_style},
                      {"mentions_object", f.mentions_object}});
  }
  return {{"story_id", spec.story_id},
          {"style", name(spec.style)},
          {"recurring_object", name(spec.object)},
          {"object_cell", spec.object_cell},
          {"frames", frames},
          {"seed", spec.seed}};
}

StorySpec story_spec_from_json(const json& j) {
  StorySpec spec;
  try {
    spec.story_id = j.at("story_id").get<std::int64_t>();
    spec.style = parse_style(j.at("style").get<std::string>());
    spec.object = parse_object(j.at("recurring_object").get<std::string>());
    spec.object_cell = j.at("object_cell").get<int>();
    spec.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& jf : j.at("frames")) {
      FrameSpec f;
      for (const auto& js : jf.at("shapes")) {
        f.shapes.push_back({parse_shape(js.at("shape").get<std::string>()),
                            parse_color(js.at("color").get<std::string>()),
                            js.at("cell").get<int>()});
      }
      f.caption_template_id = jf.at("caption_template_id").get<int>();
      f.mentions_style = jf.at("mentions_style").get<bool>();
      f.mentions_object = jf.at("mentions_object").get<bool>();
      spec.frames.push_back(std::move(f));
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed story spec: ") + e.what());
  }
  return spec;
}

// ---------------------------------------------------------------------------
// Captions

namespace {

std::string compose_caption(const StorySpec& spec, const FrameSpec& frame, int template_id) {
  std::string out;
  const int n_shapes = static_cast<int>(frame.shapes.size());
  const int mentioned = n_shapes == 0 ? 0 : std::max(1, n_shapes - template_id);
  for (int i = 0; i < mentioned; ++i) {
    if (i > 0) out += " and ";
    out += "a ";
    out += name(frame.shapes[static_cast<std::size_t>(i)].color);
    out += ' ';
    out += name(frame.shapes[static_cast<std::size_t>(i)].shape);
  }
  if (frame.mentions_object) {
    if (!out.empty()) out += " with ";
    out += "the ";
    out += name(spec.object);
  }
  if (frame.mentions_style) {
    if (!out.empty()) out += ' ';
    out += kStylePhrases[static_cast<std::size_t>(spec.style)];
  }
  return out;
}

std::size_t count_tokens(const std::string& s) { return text::split_tokens(s).size(); }

// Smallest template id (most shapes mentioned) whose caption fits.
int fitting_template(const StorySpec& spec, const FrameSpec& frame, int first, int max_words) {
  const int n_shapes = static_cast<int>(frame.shapes.size());
  for (int t = first; t <= std::max(0, n_shapes - 1); ++t) {
    if (count_tokens(compose_caption(spec, frame, t)) <= static_cast<std::size_t>(max_words)) {
      return t;
    }
  }
  throw ConfigError("no caption template fits in " + std::to_string(max_words) + " words");
}

void check_frame_index(const StorySpec& spec, int frame_idx) {
  if (frame_idx < 0 || frame_idx >= static_cast<int>(spec.frames.size())) {
    throw BoundsError("frame index " + std::to_string(frame_idx) + " outside [0, " +
                      std::to_string(spec.frames.size()) + ")");
  }
}

}  // namespace

std::string caption_frame(const StorySpec& spec, int frame_idx, const DatasetConfig& config) {
  check_frame_index(spec, frame_idx);
  const auto& frame = spec.frames[static_cast<std::size_t>(frame_idx)];
  const int t = fitting_template(spec, frame, frame.caption_template_id, config.max_words);
  return compose_caption(spec, frame, t);
}

// ---------------------------------------------------------------------------
// Story generation

StorySpec generate_story_spec(std::uint64_t seed, const DatasetConfig& config,
                              std::int64_t story_id) {
  config.validate();
  std::mt19937_64 rng(seed);
  auto pick = [&rng](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };

  StorySpec spec;
  spec.story_id = story_id;
  spec.seed = seed;
  spec.style = config.styles[static_cast<std::size_t>(pick(0, static_cast<int>(config.styles.size()) - 1))];
  spec.object =
      config.objects[static_cast<std::size_t>(pick(0, static_cast<int>(config.objects.size()) - 1))];
  const int n_cells = config.grid * config.grid;
  spec.object_cell = pick(0, n_cells - 1);

  // Each keyword is mentioned in k frames, k ~ Uniform{1..N}.
  const int n = config.frames_per_story;
  auto mention_pattern = [&]() {
    const int k = pick(1, n);
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<bool> mentioned(static_cast<std::size_t>(n), false);
    for (int i = 0; i < k; ++i) mentioned[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = true;
    return mentioned;
  };
  const auto style_mentions = mention_pattern();
  const auto object_mentions = mention_pattern();

  std::vector<int> free_cells;
  for (int c = 0; c < n_cells; ++c) {
    if (c != spec.object_cell) free_cells.push_back(c);
  }
  for (int f = 0; f < n; ++f) {
    FrameSpec frame;
    frame.mentions_style = style_mentions[static_cast<std::size_t>(f)];
    frame.mentions_object = object_mentions[static_cast<std::size_t>(f)];
    const int n_shapes = pick(config.min_shapes, config.max_shapes);
    std::vector<int> cells = free_cells;
    std::shuffle(cells.begin(), cells.end(), rng);
    for (int s = 0; s < n_shapes; ++s) {
      ShapeInstance inst;
      inst.shape =
          config.shapes[static_cast<std::size_t>(pick(0, static_cast<int>(config.shapes.size()) - 1))];
      inst.color =
          config.palette[static_cast<std::size_t>(pick(0, static_cast<int>(config.palette.size()) - 1))];
      inst.cell = cells[static_cast<std::size_t>(s)];
      frame.shapes.push_back(inst);
    }
    frame.caption_template_id = fitting_template(spec, frame, 0, config.max_words);
    spec.frames.push_back(std::move(frame));
  }
  return spec;
}

// ---------------------------------------------------------------------------
// Rendering

namespace {

bool inside_shape(ShapeKind kind, float u, float v) {
  switch (kind) {
    case ShapeKind::kCircle:
      return (u - 0.5f) * (u - 0.5f) + (v - 0.5f) * (v - 0.5f) <= 0.38f * 0.38f;
    case ShapeKind::kSquare:
      return std::abs(u - 0.5f) <= 0.32f && std::abs(v - 0.5f) <= 0.32f;
    case ShapeKind::kTriangle: {
      if (v < 0.12f || v > 0.88f) return false;
      const float half = 0.42f * (v - 0.12f) / 0.76f;
      return std::abs(u - 0.5f) <= half;
    }
  }
  return false;
}

// The recurring object is a diamond glyph in its own colour.
bool inside_object(float u, float v) { return std::abs(u - 0.5f) + std::abs(v - 0.5f) <= 0.46f; }

template <typename Pred>
void fill_cell(Image& img, int cell, int grid, const Rgb& color, Pred inside) {
  const int c = img.width() / grid;
  const int y0 = (cell / grid) * c;
  const int x0 = (cell % grid) * c;
  for (int y = 0; y < c; ++y) {
    for (int x = 0; x < c; ++x) {
      const float u = (static_cast<float>(x) + 0.5f) / static_cast<float>(c);
      const float v = (static_cast<float>(y) + 0.5f) / static_cast<float>(c);
      if (inside(u, v)) img.set_pixel(y0 + y, x0 + x, color);
    }
  }
}

Image render_background(const StorySpec& spec, int frame_idx, int size) {
  Image img(size, size, base_rgb(spec.style));
  if (spec.style == Style::kSnow) {
    for (int y = 0; y < size; ++y) {
      for (int x = 0; x < size; ++x) {
        const auto h = splitmix64(spec.seed ^ (static_cast<std::uint64_t>(frame_idx) << 40) ^
                                  (static_cast<std::uint64_t>(y) << 20) ^ static_cast<std::uint64_t>(x));
        if (h % 11 == 0) img.set_pixel(y, x, kSnowSpeckle);
      }
    }
  } else if (spec.style == Style::kRain) {
    for (int y = 0; y < size; ++y) {
      for (int x = 0; x < size; ++x) {
        if ((x - y + 4 * size + frame_idx) % 6 == 0 && (y / 2) % 2 == 0) img.set_pixel(y, x, kRainStreak);
      }
    }
  }
  return img;
}

}  // namespace

Image render_plate(const StorySpec& spec, int frame_idx, const DatasetConfig& config) {
  check_frame_index(spec, frame_idx);
  Image img = render_background(spec, frame_idx, config.image_size);
  fill_cell(img, spec.object_cell, config.grid, rgb(spec.object), inside_object);
  return img;
}

Image render_frame(const StorySpec& spec, int frame_idx, const DatasetConfig& config) {
  Image img = render_plate(spec, frame_idx, config);
  for (const auto& s : spec.frames[static_cast<std::size_t>(frame_idx)].shapes) {
    fill_cell(img, s.cell, config.grid, rgb(s.color),
              [kind = s.shape](float u, float v) { return inside_shape(kind, u, v); });
  }
  return img;
}

namespace {

bool near(const Rgb& a, const Rgb& b) {
  constexpr float tol = 0.02f;
  return std::abs(a[0] - b[0]) <= tol && std::abs(a[1] - b[1]) <= tol && std::abs(a[2] - b[2]) <= tol;
}

}  // namespace

Style probe_style(const Image& frame) {
  std::array<int, kNumStyles> votes{};
  for (int y = 0; y < frame.height(); ++y) {
    for (int x = 0; x < frame.width(); ++x) {
      const Rgb p = frame.pixel(y, x);
      for (int s = 0; s < kNumStyles; ++s) {
        if (near(p, kStyleBase[static_cast<std::size_t>(s)])) ++votes[static_cast<std::size_t>(s)];
      }
    }
  }
  return static_cast<Style>(std::max_element(votes.begin(), votes.end()) - votes.begin());
}

std::optional<ObjectProbe> probe_object(const Image& frame, int grid) {
  const int n_cells = grid * grid;
  const int c = frame.width() / grid;
  std::vector<std::array<int, kNumObjects>> counts(static_cast<std::size_t>(n_cells));
  for (int y = 0; y < frame.height(); ++y) {
    for (int x = 0; x < frame.width(); ++x) {
      const Rgb p = frame.pixel(y, x);
      for (int o = 0; o < kNumObjects; ++o) {
        if (near(p, kObjectColors[static_cast<std::size_t>(o)])) {
          ++counts[static_cast<std::size_t>((y / c) * grid + x / c)][static_cast<std::size_t>(o)];
        }
      }
    }
  }
  int best = 0;
  std::optional<ObjectProbe> out;
  for (int cell = 0; cell < n_cells; ++cell) {
    for (int o = 0; o < kNumObjects; ++o) {
      if (counts[static_cast<std::size_t>(cell)][static_cast<std::size_t>(o)] > best) {
        best = counts[static_cast<std::size_t>(cell)][static_cast<std::size_t>(o)];
        out = ObjectProbe{static_cast<RecurringObject>(o), cell};
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// On-disk dataset

std::string_view name(Split s) {
  switch (s) {
    case Split::kTrain:
      return "train";
    case Split::kVal:
      return "val";
    case Split::kTest:
      return "test";
  }
  return "train";
}

Split parse_split(std::string_view s) {
  if (s == "train") return Split::kTrain;
  if (s == "val") return Split::kVal;
  if (s == "test") return Split::kTest;
  throw ConfigError("unknown split: " + std::string(s));
}

const std::vector<std::string>& DatasetManifest::records(Split s) const {
  switch (s) {
    case Split::kTrain:
      return train;
    case Split::kVal:
      return val;
    case Split::kTest:
      return test;
  }
  return train;
}

json to_json(const DatasetManifest& m) {
  return {{"version", m.version},
          {"seed", m.seed},
          {"config", to_json(m.config)},
          {"splits", {{"train", m.splits.train}, {"val", m.splits.val}, {"test", m.splits.test}}},
          {"image_size", m.image_size},
          {"frames_per_story", m.frames_per_story},
          {"max_words", m.max_words},
          {"vocab_path", m.vocab_path},
          {"records", {{"train", m.train}, {"val", m.val}, {"test", m.test}}},
          {"content_digest", m.content_digest}};
}

DatasetManifest manifest_from_json(const json& j) {
  DatasetManifest m;
  try {
    m.version = j.at("version").get<std::string>();
    if (m.version != "1") throw VersionError("unsupported dataset manifest version: " + m.version);
    m.seed = j.at("seed").get<std::uint64_t>();
    m.config = dataset_config_from_json(j.at("config"));
    m.splits.train = j.at("splits").at("train").get<int>();
    m.splits.val = j.at("splits").at("val").get<int>();
    m.splits.test = j.at("splits").at("test").get<int>();
    m.image_size = j.at("image_size").get<int>();
    m.frames_per_story = j.at("frames_per_story").get<int>();
    m.max_words = j.at("max_words").get<int>();
    m.vocab_path = j.at("vocab_path").get<std::string>();
    m.train = j.at("records").at("train").get<std::vector<std::string>>();
    m.val = j.at("records").at("val").get<std::vector<std::string>>();
    m.test = j.at("records").at("test").get<std::vector<std::string>>();
    m.content_digest = j.at("content_digest").get<std::string>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed dataset manifest: ") + e.what());
  }
  return m;
}

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open for reading: " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw IoError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

}  // namespace

DatasetManifest build_dataset(const DatasetConfig& config, std::uint64_t seed, const fs::path& out_dir,
                              BuildOptions options) {
  config.validate();
  std::error_code ec;
  if (fs::exists(out_dir) && !fs::is_empty(out_dir)) {
    if (!options.overwrite) {
      throw IoError("refusing to write into non-empty directory " + out_dir.string() +
                    " (pass --overwrite)");
    }
    fs::remove_all(out_dir, ec);
    if (ec) throw IoError("cannot clear " + out_dir.string() + ": " + ec.message());
  }
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());

  DatasetManifest manifest;
  manifest.config = config;
  manifest.seed = seed;
  manifest.splits = config.splits;
  manifest.image_size = config.image_size;
  manifest.frames_per_story = config.frames_per_story;
  manifest.max_words = config.max_words;

  Sha256 content;
  std::vector<std::string> corpus;
  std::int64_t next_id = 0;
  const std::array<std::pair<Split, int>, 3> plan = {
      {{Split::kTrain, config.splits.train}, {Split::kVal, config.splits.val}, {Split::kTest, config.splits.test}}};
  for (const auto& [split, count] : plan) {
    auto& records = split == Split::kTrain ? manifest.train : (split == Split::kVal ? manifest.val : manifest.test);
    for (int i = 0; i < count; ++i, ++next_id) {
      const std::uint64_t story_seed = splitmix64(seed ^ splitmix64(static_cast<std::uint64_t>(next_id) + 1));
      const StorySpec spec = generate_story_spec(story_seed, config, next_id);
      const std::string rel = "stories/" + std::string(name(split)) + "/" + std::to_string(next_id);
      const fs::path dir = out_dir / rel;
      fs::create_directories(dir, ec);
      if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());

      json story = to_json(spec);
      std::vector<std::string> captions;
      for (int f = 0; f < config.frames_per_story; ++f) {
        captions.push_back(caption_frame(spec, f, config));
        const fs::path png = dir / ("frame_" + std::to_string(f) + ".png");
        write_png(png, render_frame(spec, f, config));
        content.update(rel + "/" + png.filename().string() + " " + sha256_file(png) + "\n");
      }
      corpus.insert(corpus.end(), captions.begin(), captions.end());
      story["captions"] = captions;
      const std::string story_text = story.dump(2) + "\n";
      write_text(dir / "story.json", story_text);
      content.update(rel + "/story.json " + sha256_hex(story_text) + "\n");
      records.push_back(rel);
    }
  }

  const text::Vocab vocab = text::build_vocab(corpus);
  vocab.save(out_dir / manifest.vocab_path);
  content.update(manifest.vocab_path + " " + sha256_file(out_dir / manifest.vocab_path) + "\n");
  manifest.content_digest = content.hex_digest();
  write_text(out_dir / "manifest.json", to_json(manifest).dump(2) + "\n");
  return manifest;
}

DatasetManifest read_manifest(const fs::path& dataset_dir) {
  const fs::path path = dataset_dir / "manifest.json";
  if (!fs::exists(path)) {
    throw IoError("no dataset at " + dataset_dir.string() + " (run `storyviz gen-data` first)");
  }
  return manifest_from_json(read_json(path));
}

std::string manifest_digest(const fs::path& dataset_dir) {
  return sha256_file(dataset_dir / "manifest.json");
}

std::vector<StoryRecord> load_split(const fs::path& dataset_dir, Split split, std::optional<int> limit) {
  const DatasetManifest manifest = read_manifest(dataset_dir);
  const auto& records = manifest.records(split);
  const std::size_t n = limit ? std::min<std::size_t>(records.size(), static_cast<std::size_t>(*limit))
                              : records.size();
  std::vector<StoryRecord> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const fs::path dir = dataset_dir / records[i];
    const json story = read_json(dir / "story.json");
    StoryRecord rec;
    rec.spec = story_spec_from_json(story);
    rec.captions = story.at("captions").get<std::vector<std::string>>();
    for (int f = 0; f < manifest.frames_per_story; ++f) {
      rec.frames.push_back(read_png(dir / ("frame_" + std::to_string(f) + ".png")));
    }
    out.push_back(std::move(rec));
  }
  return out;
}

}  // namespace storyviz::data

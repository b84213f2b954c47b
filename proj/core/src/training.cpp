#include "storyviz/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include <ATen/CPUGeneratorImpl.h>

#include "storyviz/error.hpp"
#include "storyviz/tensor_io.hpp"

namespace storyviz::train {

using nlohmann::json;
namespace fs = std::filesystem;

void TrainConfig::validate() const {
  if (learning_rate <= 0.0 || beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) {
    throw ConfigError("learning rate must be positive and Adam betas in [0, 1)");
  }
  if (batch_size <= 0 || epochs <= 0 || eval_every <= 0) throw ConfigError("batch_size, epochs and eval_every must be positive");
  if (image_size != 16 && image_size != 32 && image_size != 64) throw ConfigError("image_size must be 16, 32 or 64");
  if (image_loss_weight < 0.0 || story_loss_weight < 0.0 || image_loss_weight + story_loss_weight <= 0.0) {
    throw ConfigError("loss weights must be non-negative and not both zero");
  }
  if (generator_channels <= 0 || noise_dim <= 0 || context_hidden <= 0 || discriminator_channels < 2 ||
      head_channels <= 0 || head_layers < 0) {
    throw ConfigError("architecture widths must be positive");
  }
}

gen::GeneratorConfig TrainConfig::generator_config(int64_t word_dim) const {
  gen::GeneratorConfig g;
  g.image_size = image_size;
  g.word_dim = word_dim;
  g.noise_dim = noise_dim;
  g.context_hidden = context_hidden;
  g.base_channels = generator_channels;
  g.attention = attention_mode;
  g.use_enriched_sentences = use_enriched_sentences;
  g.validate();
  return g;
}

disc::DiscriminatorConfig TrainConfig::discriminator_config(int64_t word_dim, int64_t frames, int64_t max_words) const {
  disc::DiscriminatorConfig d;
  d.mode = discriminator_mode;
  d.image_size = image_size;
  d.frames = frames;
  d.max_words = max_words;
  d.word_dim = word_dim;
  d.trunk_channels = discriminator_channels;
  d.head_channels = head_channels;
  d.head_layers = head_layers;
  d.share_trunk = share_trunk;
  d.validate();
  return d;
}

json to_json(const TrainConfig& c) {
  return {{"dataset", c.dataset.string()},
          {"encoders", c.encoders.string()},
          {"extractor", c.extractor.string()},
          {"learning_rate", c.learning_rate},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"batch_size", c.batch_size},
          {"epochs", c.epochs},
          {"max_steps", c.max_steps},
          {"seed", c.seed},
          {"image_size", c.image_size},
          {"train_limit", c.train_limit},
          {"eval_every", c.eval_every},
          {"selection_stories", c.selection_stories},
          {"use_enriched_sentences", c.use_enriched_sentences},
          {"attention_mode", gen::name(c.attention_mode)},
          {"discriminator_mode", disc::name(c.discriminator_mode)},
          {"image_loss_weight", c.image_loss_weight},
          {"story_loss_weight", c.story_loss_weight},
          {"generator_channels", c.generator_channels},
          {"noise_dim", c.noise_dim},
          {"context_hidden", c.context_hidden},
          {"discriminator_channels", c.discriminator_channels},
          {"head_channels", c.head_channels},
          {"head_layers", c.head_layers},
          {"share_trunk", c.share_trunk}};
}

TrainConfig train_config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("train config must be a JSON object");
  static const std::vector<std::string> known = {
      "dataset", "encoders", "extractor", "learning_rate", "beta1", "beta2", "batch_size", "epochs", "max_steps",
      "seed", "image_size", "train_limit", "eval_every", "selection_stories", "use_enriched_sentences",
      "attention_mode", "discriminator_mode", "image_loss_weight", "story_loss_weight", "generator_channels",
      "noise_dim", "context_hidden", "discriminator_channels", "head_channels", "head_layers", "share_trunk"};
  for (const auto& [key, _] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) throw ConfigError("unknown train config key: " + key);
  }
  TrainConfig c;
  try {
    c.dataset = j.value("dataset", c.dataset.string());
    c.encoders = j.value("encoders", c.encoders.string());
    c.extractor = j.value("extractor", c.extractor.string());
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.epochs = j.value("epochs", c.epochs);
    c.max_steps = j.value("max_steps", c.max_steps);
    c.seed = j.value("seed", c.seed);
    c.image_size = j.value("image_size", c.image_size);
    c.train_limit = j.value("train_limit", c.train_limit);
    c.eval_every = j.value("eval_every", c.eval_every);
    c.selection_stories = j.value("selection_stories", c.selection_stories);
    c.use_enriched_sentences = j.value("use_enriched_sentences", c.use_enriched_sentences);
    c.attention_mode = gen::parse_attention_mode(j.value("attention_mode", std::string(gen::name(c.attention_mode))));
    c.discriminator_mode =
        disc::parse_discriminator_mode(j.value("discriminator_mode", std::string(disc::name(c.discriminator_mode))));
    c.image_loss_weight = j.value("image_loss_weight", c.image_loss_weight);
    c.story_loss_weight = j.value("story_loss_weight", c.story_loss_weight);
    c.generator_channels = j.value("generator_channels", c.generator_channels);
    c.noise_dim = j.value("noise_dim", c.noise_dim);
    c.context_hidden = j.value("context_hidden", c.context_hidden);
    c.discriminator_channels = j.value("discriminator_channels", c.discriminator_channels);
    c.head_channels = j.value("head_channels", c.head_channels);
    c.head_layers = j.value("head_layers", c.head_layers);
    c.share_trunk = j.value("share_trunk", c.share_trunk);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed train config: ") + e.what());
  }
  c.validate();
  return c;
}

TrainConfig load_train_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return train_config_from_json(j);
}

json to_json(const StepMetrics& m) {
  return {{"L_GI", m.l_gi}, {"L_DI", m.l_di},          {"L_GV", m.l_gv},
          {"L_DV", m.l_dv}, {"grad_norm_D", m.grad_norm_d}, {"grad_norm_G", m.grad_norm_g}};
}

// ---------------------------------------------------------------------------

text::TextEncoding encode_stories(text::TextEncoder& encoder, const torch::Tensor& tokens, const torch::Tensor& mask) {
  torch::NoGradGuard guard;
  encoder->eval();
  std::vector<torch::Tensor> s, w;
  constexpr int64_t kChunk = 256;
  for (int64_t begin = 0; begin < tokens.size(0); begin += kChunk) {
    const int64_t end = std::min(tokens.size(0), begin + kChunk);
    auto e = encoder->forward(tokens.slice(0, begin, end), mask.slice(0, begin, end));
    s.push_back(e.s);
    w.push_back(e.w);
  }
  return {torch::cat(s), torch::cat(w), mask};
}

text::TextEncoding slice_encoding(const text::TextEncoding& e, const torch::Tensor& rows) {
  return {e.s.index_select(0, rows), e.w.index_select(0, rows), e.mask.index_select(0, rows)};
}

TrainState make_state(const TrainConfig& config, int64_t word_dim, int64_t frames, int64_t max_words) {
  torch::manual_seed(config.seed);
  TrainState state;
  state.generator = gen::Generator(config.generator_config(word_dim));
  state.discriminator = disc::make_discriminator(config.discriminator_config(word_dim, frames, max_words));
  const auto options = torch::optim::AdamOptions(config.learning_rate).betas({config.beta1, config.beta2});
  state.generator_opt = std::make_unique<torch::optim::Adam>(state.generator->parameters(), options);
  state.discriminator_opt = std::make_unique<torch::optim::Adam>(state.discriminator->parameters(), options);
  state.noise_rng = torch::make_generator<at::CPUGeneratorImpl>(data::splitmix64(config.seed ^ 0x6e6f697365ULL));
  return state;
}

namespace {

double grad_norm(const std::vector<torch::Tensor>& params) {
  double total = 0.0;
  for (const auto& p : params) {
    if (p.grad().defined()) total += p.grad().pow(2).sum().item<double>();
  }
  return std::sqrt(total);
}

torch::Tensor summed(const std::vector<torch::Tensor>& real, const std::vector<torch::Tensor>& fake) {
  auto total = disc::discriminator_loss(real[0], fake[0]);
  for (std::size_t k = 1; k < real.size(); ++k) total = total + disc::discriminator_loss(real[k], fake[k]);
  return total;
}

torch::Tensor summed(const std::vector<torch::Tensor>& fake) {
  auto total = disc::generator_loss(fake[0]);
  for (std::size_t k = 1; k < fake.size(); ++k) total = total + disc::generator_loss(fake[k]);
  return total;
}

void require_finite(double value, const char* what, int64_t step, int64_t batch_id) {
  if (!std::isfinite(value)) {
    throw NumericError(std::string(what) + " became non-finite at step " + std::to_string(step) + " (batch " +
                       std::to_string(batch_id) + ")");
  }
}

}  // namespace

StepMetrics train_step(TrainState& state, const TrainConfig& config, const torch::Tensor& real,
                       const text::TextEncoding& encoding, const StepOptions& options) {
  auto& g = state.generator;
  auto& d = *state.discriminator;
  g->train();
  d.train();
  const int64_t b = real.size(0), n = real.size(1);
  const auto noise = torch::randn({b, n, g->config().noise_dim}, state.noise_rng);

  torch::Tensor fake;
  {
    std::optional<torch::NoGradGuard> guard;
    if (!options.update_generator) guard.emplace();
    fake = g->forward(encoding, noise).images;
  }

  StepMetrics m;
  state.discriminator_opt->zero_grad();
  const auto fake_detached = fake.detach();
  const auto l_di = summed(d.image_logits(real, encoding), d.image_logits(fake_detached, encoding));
  const auto l_dv = summed(d.story_logits(real, encoding), d.story_logits(fake_detached, encoding));
  m.l_di = l_di.item<double>();
  m.l_dv = l_dv.item<double>();
  require_finite(m.l_di, "L_DI", state.step, options.batch_id);
  require_finite(m.l_dv, "L_DV", state.step, options.batch_id);
  (config.image_loss_weight * l_di + config.story_loss_weight * l_dv).backward();
  m.grad_norm_d = grad_norm(d.parameters());
  state.discriminator_opt->step();

  if (options.update_generator) {
    state.generator_opt->zero_grad();
    const auto l_gi = summed(d.image_logits(fake, encoding));
    const auto l_gv = summed(d.story_logits(fake, encoding));
    m.l_gi = l_gi.item<double>();
    m.l_gv = l_gv.item<double>();
    require_finite(m.l_gi, "L_GI", state.step, options.batch_id);
    require_finite(m.l_gv, "L_GV", state.step, options.batch_id);
    (config.image_loss_weight * l_gi + config.story_loss_weight * l_gv).backward();
    m.grad_norm_g = grad_norm(g->parameters());
    state.generator_opt->step();
  } else {
    torch::NoGradGuard guard;
    m.l_gi = summed(d.image_logits(fake, encoding)).item<double>();
    m.l_gv = summed(d.story_logits(fake, encoding)).item<double>();
  }
  ++state.step;
  return m;
}

torch::Tensor generate_stories(gen::Generator& generator, const text::TextEncoding& encoding, std::uint64_t seed,
                               int batch_size) {
  torch::NoGradGuard guard;
  generator->eval();
  auto rng = torch::make_generator<at::CPUGeneratorImpl>(seed);
  const int64_t m = encoding.s.size(0), n = encoding.s.size(1);
  std::vector<torch::Tensor> parts;
  for (int64_t begin = 0; begin < m; begin += batch_size) {
    const int64_t end = std::min(m, begin + batch_size);
    const auto rows = torch::arange(begin, end, torch::kLong);
    const auto noise = torch::randn({end - begin, n, generator->config().noise_dim}, rng);
    parts.push_back(generator->forward(slice_encoding(encoding, rows), noise).images);
  }
  return torch::cat(parts);
}

EvalContext load_eval_context(const TrainConfig& config) {
  if (!fs::exists(config.encoders / "manifest.json")) {
    throw IoError("encoder checkpoint " + config.encoders.string() + " not found (run `storyviz pretrain-encoder`)");
  }
  if (!fs::exists(config.extractor / "manifest.json")) {
    throw IoError("feature extractor " + config.extractor.string() + " not found (run `storyviz pretrain-encoder`)");
  }
  auto encoders = text::load_encoders(config.encoders);
  EvalContext ctx;
  ctx.text = encoders.text;
  ctx.image = encoders.image;
  ctx.extractor = metrics::load_extractor(config.extractor);
  return ctx;
}

metrics::MetricReport evaluate(gen::Generator& generator, const StoryTensors& pool, EvalContext& context,
                               std::uint64_t seed) {
  const auto encoding = encode_stories(context.text, pool.tokens, pool.mask);
  const auto fake = generate_stories(generator, encoding, seed);
  metrics::MetricReport r;
  r.fid = metrics::compute_fid(pool.images.flatten(0, 1), fake.flatten(0, 1), context.extractor);
  r.fsd = metrics::compute_fsd(pool.images, fake, context.extractor);
  const int64_t l = pool.tokens.size(-1);
  r.cosine_x100 = metrics::cosine_score(fake.flatten(0, 1), pool.tokens.reshape({-1, l}), pool.mask.reshape({-1, l}),
                                        context.text, context.image);
  r.keyword_consistency = metrics::keyword_consistency(fake, pool.specs, context.extractor);
  r.extractor_gate_accuracy = context.extractor.gate.gate_accuracy();
  r.real_frames = pool.images.size(0) * pool.images.size(1);
  r.fake_frames = fake.size(0) * fake.size(1);
  r.real_stories = pool.images.size(0);
  r.fake_stories = fake.size(0);
  r.seed = seed;
  return r;
}

StoryTensors selection_pool(const TrainConfig& config, int64_t frames, int64_t feature_dim) {
  const int64_t want =
      config.selection_stories > 0 ? config.selection_stories : metrics::minimum_samples(frames * feature_dim);
  auto val = load_story_tensors(config.dataset, data::Split::kVal, config.image_size);
  if (val.size() >= want) return val.slice(0, want);
  const auto train = load_story_tensors(config.dataset, data::Split::kTrain, config.image_size);
  const int64_t extra = want - val.size();
  if (extra > train.size()) throw ConfigError("dataset too small for a selection pool of " + std::to_string(want) + " stories");
  const auto tail = train.slice(train.size() - extra, train.size());
  StoryTensors out;
  out.images = torch::cat({val.images, tail.images});
  out.tokens = torch::cat({val.tokens, tail.tokens});
  out.mask = torch::cat({val.mask, tail.mask});
  out.specs = val.specs;
  out.specs.insert(out.specs.end(), tail.specs.begin(), tail.specs.end());
  out.captions = val.captions;
  out.captions.insert(out.captions.end(), tail.captions.begin(), tail.captions.end());
  return out;
}

// ---------------------------------------------------------------------------

void save_checkpoint(const fs::path& dir, const TrainState& state, const TrainConfig& config, const json& metrics) {
  auto tensors = module_state(*state.generator, "generator.");
  for (auto& t : module_state(*state.discriminator, "discriminator.")) tensors.push_back(std::move(t));
  const json meta = {{"kind", "gan"},
                     {"checkpoint_version", kCheckpointVersion},
                     {"config", to_json(config)},
                     {"generator", gen::to_json(state.generator->config())},
                     {"discriminator", disc::to_json(state.discriminator->config())},
                     {"step", state.step},
                     {"epoch", state.epoch},
                     {"seed", config.seed},
                     {"metrics", metrics}};
  save_tensor_archive(dir, meta, tensors);
}

Checkpoint load_checkpoint(const fs::path& dir) {
  const auto archive = load_tensor_archive(dir);
  if (archive.meta.value("kind", "") != "gan") throw ConfigError(dir.string() + " is not a GAN checkpoint");
  const auto version = archive.meta.value("checkpoint_version", "");
  if (version != kCheckpointVersion) {
    throw VersionError("checkpoint " + dir.string() + " has version '" + version + "', expected '" +
                       kCheckpointVersion + "'");
  }
  Checkpoint out;
  out.config = train_config_from_json(archive.meta.at("config"));
  out.generator = gen::Generator(gen::generator_config_from_json(archive.meta.at("generator")));
  out.discriminator = disc::make_discriminator(disc::discriminator_config_from_json(archive.meta.at("discriminator")));
  assign_module_state(*out.generator, archive, "generator.");
  assign_module_state(*out.discriminator, archive, "discriminator.");
  out.generator->eval();
  out.discriminator->eval();
  out.step = archive.meta.value("step", int64_t{0});
  out.epoch = archive.meta.value("epoch", 0);
  out.metrics = archive.meta.value("metrics", json::object());
  return out;
}

// ---------------------------------------------------------------------------

TrainResult train(const TrainConfig& config, const fs::path& out_dir, bool overwrite, const ProgressFn& progress) {
  config.validate();
  if (fs::exists(out_dir) && !fs::is_empty(out_dir)) {
    if (!overwrite) throw IoError("refusing to write into non-empty directory " + out_dir.string() + " (pass --overwrite)");
    fs::remove_all(out_dir);
  }
  if (!fs::exists(config.dataset / "manifest.json")) {
    throw IoError("dataset " + config.dataset.string() + " not found (run `storyviz gen-data`)");
  }
  auto context = load_eval_context(config);
  const auto manifest = data::read_manifest(config.dataset);
  const int64_t frames = manifest.frames_per_story;
  const int64_t max_words = manifest.max_words;
  const int64_t word_dim = context.text->config().out_dim;

  const auto train_set = load_story_tensors(config.dataset, data::Split::kTrain, config.image_size,
                                            config.train_limit > 0 ? std::optional<int>(config.train_limit) : std::nullopt);
  const auto encoding = encode_stories(context.text, train_set.tokens, train_set.mask);
  const auto pool = selection_pool(config, frames, context.extractor.model->config().feature_dim);
  const std::uint64_t eval_seed = data::splitmix64(config.seed ^ 0x6576616cULL);

  fs::create_directories(out_dir / "checkpoints");
  TrainResult result;
  result.log = out_dir / "metrics.jsonl";
  std::ofstream log(result.log);
  std::ofstream evals(out_dir / "evals.jsonl");
  if (!log || !evals) throw IoError("cannot write logs under " + out_dir.string());
  {
    std::ofstream cfg(out_dir / "config.json");
    cfg << to_json(config).dump(2) << '\n';
  }

  auto state = make_state(config, word_dim, frames, max_words);
  const int64_t m = train_set.size();
  std::mt19937_64 rng(config.seed);
  std::vector<int64_t> order(static_cast<std::size_t>(m));
  std::iota(order.begin(), order.end(), 0);
  bool best_set = false;
  bool stop = false;

  for (int epoch = 0; epoch < config.epochs && !stop; ++epoch) {
    state.epoch = epoch + 1;
    std::shuffle(order.begin(), order.end(), rng);
    int64_t batch_id = 0;
    for (int64_t begin = 0; begin + config.batch_size <= m; begin += config.batch_size, ++batch_id) {
      const auto rows = torch::tensor(std::vector<int64_t>(order.begin() + begin, order.begin() + begin + config.batch_size),
                                      torch::kLong);
      StepOptions options;
      options.batch_id = batch_id;
      const auto metrics = train_step(state, config, train_set.images.index_select(0, rows),
                                      slice_encoding(encoding, rows), options);
      json row = to_json(metrics);
      row["step"] = state.step;
      row["epoch"] = state.epoch;
      log << row.dump() << '\n';
      if (config.max_steps > 0 && state.step >= config.max_steps) {
        stop = true;
        break;
      }
    }
    log.flush();

    const bool last = stop || epoch + 1 == config.epochs;
    if (epoch == 0 || (epoch + 1) % config.eval_every == 0 || last) {
      const auto report = evaluate(state.generator, pool, context, eval_seed);
      json snapshot = metrics::to_json(report);
      snapshot["selection_score"] = report.fid + report.fsd;
      const auto dir = out_dir / "checkpoints" / ("step_" + std::to_string(state.step));
      save_checkpoint(dir, state, config, snapshot);
      result.checkpoints.push_back(dir);
      json row = {{"step", state.step}, {"epoch", state.epoch}, {"checkpoint", dir.string()}, {"report", snapshot}};
      evals << row.dump() << '\n';
      evals.flush();
      const double score = report.fid + report.fsd;
      if (!best_set || score < result.best_score) {
        best_set = true;
        result.best_score = score;
        result.best = out_dir / "best";
        fs::remove_all(result.best);
        fs::copy(dir, result.best, fs::copy_options::recursive);
      }
      if (progress) {
        progress("epoch " + std::to_string(state.epoch) + " step " + std::to_string(state.step) + " FID " +
                 std::to_string(report.fid) + " FSD " + std::to_string(report.fsd));
      }
    }
  }
  result.steps = state.step;
  return result;
}

}  // namespace storyviz::train

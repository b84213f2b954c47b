#include "storyviz/discriminators.hpp"

#include "storyviz/error.hpp"

namespace storyviz::disc {

using nlohmann::json;
namespace F = torch::nn::functional;

const char* name(DiscriminatorMode m) {
  return m == DiscriminatorMode::kFusionOneWay ? "fusion_one_way" : "two_way_baseline";
}

DiscriminatorMode parse_discriminator_mode(const std::string& s) {
  if (s == "fusion_one_way") return DiscriminatorMode::kFusionOneWay;
  if (s == "two_way_baseline") return DiscriminatorMode::kTwoWayBaseline;
  throw ConfigError("unknown discriminator mode: " + s);
}

void DiscriminatorConfig::validate() const {
  if (image_size != 16 && image_size != 32 && image_size != 64) {
    throw ConfigError("discriminator image_size must be 16, 32 or 64");
  }
  if (frames <= 0 || max_words <= 0 || word_dim <= 0 || trunk_channels < 2 || head_channels <= 0) {
    throw ConfigError("discriminator dimensions must be positive");
  }
  if (head_layers < 0 || head_layers > 4) throw ConfigError("head_layers must be in [0, 4]");
}

json to_json(const DiscriminatorConfig& c) {
  return {{"mode", name(c.mode)},
          {"image_size", c.image_size},
          {"frames", c.frames},
          {"max_words", c.max_words},
          {"word_dim", c.word_dim},
          {"trunk_channels", c.trunk_channels},
          {"head_channels", c.head_channels},
          {"head_layers", c.head_layers},
          {"share_trunk", c.share_trunk}};
}

DiscriminatorConfig discriminator_config_from_json(const json& j) {
  DiscriminatorConfig c;
  try {
    c.mode = parse_discriminator_mode(j.value("mode", std::string(name(c.mode))));
    c.image_size = j.value("image_size", c.image_size);
    c.frames = j.value("frames", c.frames);
    c.max_words = j.value("max_words", c.max_words);
    c.word_dim = j.value("word_dim", c.word_dim);
    c.trunk_channels = j.value("trunk_channels", c.trunk_channels);
    c.head_channels = j.value("head_channels", c.head_channels);
    c.head_layers = j.value("head_layers", c.head_layers);
    c.share_trunk = j.value("share_trunk", c.share_trunk);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed discriminator config: ") + e.what());
  }
  return c;
}

namespace {

torch::nn::LeakyReLU lrelu() { return torch::nn::LeakyReLU(torch::nn::LeakyReLUOptions().negative_slope(0.2)); }

torch::nn::Conv2d conv(int64_t in, int64_t out, int64_t k, int64_t stride, int64_t pad) {
  return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, k).stride(stride).padding(pad));
}

void expect_frames(const torch::Tensor& frames, const DiscriminatorConfig& c) {
  if (frames.dim() != 5 || frames.size(1) != c.frames || frames.size(2) != 3 || frames.size(3) != c.image_size ||
      frames.size(4) != c.image_size) {
    throw ShapeError("discriminator expects frames [B, " + std::to_string(c.frames) + ", 3, " +
                     std::to_string(c.image_size) + ", " + std::to_string(c.image_size) + "]");
  }
}

}  // namespace

// ---------------------------------------------------------------------------

TrunkImpl::TrunkImpl(int64_t image_size, int64_t channels) {
  torch::nn::Sequential seq;
  const int64_t half = channels / 2;
  seq->push_back(conv(3, half, 3, 1, 1));
  seq->push_back(lrelu());
  int64_t in = half;
  if (image_size == kFusionResolution) {
    seq->push_back(conv(in, channels, 3, 1, 1));
    seq->push_back(lrelu());
  }
  for (int64_t r = image_size; r > kFusionResolution; r /= 2) {
    seq->push_back(conv(in, channels, 4, 2, 1));
    seq->push_back(lrelu());
    in = channels;
  }
  layers_ = register_module("layers", seq);
}

torch::Tensor TrunkImpl::forward(const torch::Tensor& images) { return layers_->forward(images); }

FusionHeadImpl::FusionHeadImpl(int64_t in_channels, int64_t channels, int64_t layers) {
  torch::nn::Sequential seq;
  int64_t in = in_channels, res = kFusionResolution;
  for (int64_t k = 0; k < layers; ++k) {
    const int64_t out = channels << k;
    seq->push_back(conv(in, out, 4, 2, 1));
    seq->push_back(lrelu());
    in = out;
    res /= 2;
  }
  convs_ = register_module("convs", seq);
  output_ = register_module("output", torch::nn::Linear(in * res * res, 1));
}

torch::Tensor FusionHeadImpl::forward(const torch::Tensor& fused) {
  auto x = convs_->is_empty() ? fused : convs_->forward(fused);
  return output_->forward(x.flatten(1)).squeeze(1);
}

// ---------------------------------------------------------------------------

std::pair<torch::Tensor, torch::Tensor> sentence_words(const text::TextEncoding& text) {
  const auto& w = text.w;
  return {w.flatten(0, 1), text.mask.flatten(0, 1)};
}

std::pair<torch::Tensor, torch::Tensor> story_words(const text::TextEncoding& text) {
  return {ops::flatten_words(text.w, text.mask), ops::flatten_word_mask(text.mask)};
}

FusionDiscriminator::FusionDiscriminator(DiscriminatorConfig config) : config_(config) {
  config_.validate();
  const int64_t c = config_.trunk_channels;
  image_trunk_ = register_module("image_trunk", Trunk(config_.image_size, c));
  if (!config_.share_trunk) story_trunk_ = register_module("story_trunk", Trunk(config_.image_size, c));
  image_projection_ = register_module("image_projection", ops::WordSpaceProjection(c, config_.word_dim));
  story_projection_ = register_module("story_projection", ops::WordSpaceProjection(c, config_.word_dim));
  story_merge_ = register_module("story_merge", conv(config_.frames * c, c, 1, 1, 0));
  image_head_ = register_module("image_head", FusionHead(config_.max_words, config_.head_channels, config_.head_layers));
  story_head_ = register_module(
      "story_head", FusionHead(config_.frames * config_.max_words, config_.head_channels, config_.head_layers));
}

torch::Tensor FusionDiscriminator::image_fusion(const torch::Tensor& images, const torch::Tensor& words,
                                                const torch::Tensor& mask) {
  if (images.dim() != 4 || words.dim() != 3 || words.size(2) != config_.max_words) {
    throw ShapeError("image discriminator expects images [M,3,S,S] and words [M,D,L]");
  }
  return ops::fuse_features(image_trunk_->forward(images), words, mask, image_projection_->weight());
}

torch::Tensor FusionDiscriminator::image_logit(const torch::Tensor& images, const torch::Tensor& words,
                                               const torch::Tensor& mask) {
  return image_head_->forward(image_fusion(images, words, mask));
}

torch::Tensor FusionDiscriminator::story_fusion(const torch::Tensor& stories, const torch::Tensor& words,
                                                const torch::Tensor& mask) {
  expect_frames(stories, config_);
  if (words.dim() != 3 || words.size(2) != config_.frames * config_.max_words) {
    throw ShapeError("story discriminator expects words [B, D, N*L]");
  }
  const int64_t b = stories.size(0), n = stories.size(1);
  auto feats = story_trunk()->forward(stories.flatten(0, 1));  // [B*N, C, 16, 16]
  feats = feats.view({b, n * feats.size(1), feats.size(2), feats.size(3)});
  feats = story_merge_->forward(feats);
  return ops::fuse_features(feats, words, mask, story_projection_->weight());
}

torch::Tensor FusionDiscriminator::story_logit(const torch::Tensor& stories, const torch::Tensor& words,
                                               const torch::Tensor& mask) {
  return story_head_->forward(story_fusion(stories, words, mask));
}

std::vector<torch::Tensor> FusionDiscriminator::image_logits(const torch::Tensor& frames,
                                                             const text::TextEncoding& text) {
  expect_frames(frames, config_);
  auto [words, mask] = sentence_words(text);
  return {image_logit(frames.flatten(0, 1), words, mask)};
}

std::vector<torch::Tensor> FusionDiscriminator::story_logits(const torch::Tensor& frames,
                                                             const text::TextEncoding& text) {
  auto [words, mask] = story_words(text);
  return {story_logit(frames, words, mask)};
}

// ---------------------------------------------------------------------------

TwoWayDiscriminator::TwoWayDiscriminator(DiscriminatorConfig config) : config_(config) {
  config_.validate();
  const int64_t c = config_.trunk_channels;
  const int64_t d = config_.word_dim;
  const int64_t n = config_.frames;
  auto down = [&] { return torch::nn::Sequential(conv(c, 2 * c, 4, 2, 1), lrelu(), conv(2 * c, 4 * c, 4, 2, 1), lrelu()); };
  image_trunk_ = register_module("image_trunk", Trunk(config_.image_size, c));
  image_down_ = register_module("image_down", down());
  if (!config_.share_trunk) {
    story_trunk_ = register_module("story_trunk", Trunk(config_.image_size, c));
    story_down_ = register_module("story_down", down());
  }
  story_merge_ = register_module("story_merge", conv(n * 4 * c, 4 * c, 1, 1, 0));
  image_uncond_ = register_module("image_uncond", conv(4 * c, 1, 4, 1, 0));
  image_cond_ = register_module("image_cond", torch::nn::Sequential(conv(4 * c + d, 4 * c, 3, 1, 1), lrelu(), conv(4 * c, 1, 4, 1, 0)));
  story_uncond_ = register_module("story_uncond", conv(4 * c, 1, 4, 1, 0));
  story_cond_ = register_module("story_cond", torch::nn::Sequential(conv(4 * c + n * d, 4 * c, 3, 1, 1), lrelu(), conv(4 * c, 1, 4, 1, 0)));
}

torch::Tensor TwoWayDiscriminator::features(Trunk& trunk, torch::nn::Sequential& down, const torch::Tensor& images) {
  return down->forward(trunk->forward(images));  // [M, 4C, 4, 4]
}

std::vector<torch::Tensor> TwoWayDiscriminator::image_logits(const torch::Tensor& frames, const text::TextEncoding& text) {
  expect_frames(frames, config_);
  const auto feats = features(image_trunk_, image_down_, frames.flatten(0, 1));
  const auto sentence = text.s.flatten(0, 1).unsqueeze(-1).unsqueeze(-1).expand({-1, -1, 4, 4});
  return {image_uncond_->forward(feats).flatten(), image_cond_->forward(torch::cat({feats, sentence}, 1)).flatten()};
}

std::vector<torch::Tensor> TwoWayDiscriminator::story_logits(const torch::Tensor& frames, const text::TextEncoding& text) {
  expect_frames(frames, config_);
  const int64_t b = frames.size(0), n = frames.size(1);
  auto& trunk = config_.share_trunk ? image_trunk_ : story_trunk_;
  auto& down = config_.share_trunk ? image_down_ : story_down_;
  auto feats = features(trunk, down, frames.flatten(0, 1));
  feats = story_merge_->forward(feats.view({b, n * feats.size(1), 4, 4}));
  const auto sentences = text.s.reshape({b, -1}).unsqueeze(-1).unsqueeze(-1).expand({-1, -1, 4, 4});
  return {story_uncond_->forward(feats).flatten(), story_cond_->forward(torch::cat({feats, sentences}, 1)).flatten()};
}

std::shared_ptr<StoryDiscriminator> make_discriminator(const DiscriminatorConfig& config) {
  if (config.mode == DiscriminatorMode::kFusionOneWay) return std::make_shared<FusionDiscriminator>(config);
  return std::make_shared<TwoWayDiscriminator>(config);
}

int64_t count_parameters(const torch::nn::Module& module) {
  int64_t total = 0;
  for (const auto& p : module.parameters()) {
    if (p.requires_grad()) total += p.numel();
  }
  return total;
}

// ---------------------------------------------------------------------------

torch::Tensor discriminator_loss(const torch::Tensor& real_logits, const torch::Tensor& fake_logits) {
  return F::softplus(-real_logits).mean() + F::softplus(fake_logits).mean();
}

torch::Tensor generator_loss(const torch::Tensor& fake_logits) { return F::softplus(-fake_logits).mean(); }

}  // namespace storyviz::disc

#include "storyviz/generator.hpp"

#include <algorithm>
#include <bit>

#include "storyviz/error.hpp"

namespace storyviz::gen {

using nlohmann::json;
namespace F = torch::nn::functional;

const char* name(AttentionMode m) {
  switch (m) {
    case AttentionMode::kExtended:
      return "extended";
    case AttentionMode::kPerSentence:
      return "per_sentence";
    case AttentionMode::kNone:
      return "none";
  }
  return "extended";
}

AttentionMode parse_attention_mode(const std::string& s) {
  if (s == "extended") return AttentionMode::kExtended;
  if (s == "per_sentence") return AttentionMode::kPerSentence;
  if (s == "none") return AttentionMode::kNone;
  throw ConfigError("unknown attention mode: " + s);
}

int64_t GeneratorConfig::channels_at(int64_t resolution) const {
  int64_t c = base_channels;
  for (int64_t r = 4; r < resolution; r *= 2) c /= 2;
  return std::max(c, min_channels);
}

void GeneratorConfig::validate() const {
  if (image_size != 16 && image_size != 32 && image_size != 64) {
    throw ConfigError("generator image_size must be 16, 32 or 64");
  }
  if (word_dim <= 0 || noise_dim <= 0 || context_hidden <= 0 || base_channels <= 0 || min_channels <= 0) {
    throw ConfigError("generator dimensions must be positive");
  }
  for (auto site : attention_sites) {
    if (site < 8 || site > image_size || !std::has_single_bit(static_cast<uint64_t>(site))) {
      throw ConfigError("attention site " + std::to_string(site) + " is not an upsampling resolution");
    }
  }
}

json to_json(const GeneratorConfig& c) {
  return {{"image_size", c.image_size},
          {"word_dim", c.word_dim},
          {"noise_dim", c.noise_dim},
          {"context_hidden", c.context_hidden},
          {"base_channels", c.base_channels},
          {"min_channels", c.min_channels},
          {"attention_sites", c.attention_sites},
          {"attention", name(c.attention)},
          {"use_enriched_sentences", c.use_enriched_sentences}};
}

GeneratorConfig generator_config_from_json(const json& j) {
  GeneratorConfig c;
  try {
    c.image_size = j.value("image_size", c.image_size);
    c.word_dim = j.value("word_dim", c.word_dim);
    c.noise_dim = j.value("noise_dim", c.noise_dim);
    c.context_hidden = j.value("context_hidden", c.context_hidden);
    c.base_channels = j.value("base_channels", c.base_channels);
    c.min_channels = j.value("min_channels", c.min_channels);
    c.attention_sites = j.value("attention_sites", c.attention_sites);
    c.attention = parse_attention_mode(j.value("attention", std::string(name(c.attention))));
    c.use_enriched_sentences = j.value("use_enriched_sentences", c.use_enriched_sentences);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed generator config: ") + e.what());
  }
  return c;
}

torch::Tensor pixel_norm(const torch::Tensor& x) { return x * torch::rsqrt(x.pow(2).mean(1, true) + 1e-8); }

namespace {

torch::Tensor lrelu(const torch::Tensor& x) { return F::leaky_relu(x, F::LeakyReLUFuncOptions().negative_slope(0.2)); }

}  // namespace

GeneratorImpl::GeneratorImpl(GeneratorConfig config) : config_(std::move(config)) {
  config_.validate();
  const int64_t c0 = config_.channels_at(4);
  context_ = register_module("context", torch::nn::GRUCell(config_.word_dim + config_.noise_dim, config_.context_hidden));
  initial_ = register_module("initial", torch::nn::Linear(config_.context_hidden + config_.noise_dim, c0 * 16));

  int64_t in = c0;
  for (int64_t r = 8; r <= config_.image_size; r *= 2) {
    Block block;
    block.resolution = r;
    const int64_t out = config_.channels_at(r);
    const auto tag = std::to_string(r);
    block.conv = register_module("up" + tag, torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 3).padding(1)));
    const bool site = std::find(config_.attention_sites.begin(), config_.attention_sites.end(), r) !=
                      config_.attention_sites.end();
    if (site && config_.attention != AttentionMode::kNone) {
      block.projection = register_module("attn_proj" + tag, ops::WordSpaceProjection(out, config_.word_dim));
      block.fuse = register_module("attn_fuse" + tag, torch::nn::Conv2d(torch::nn::Conv2dOptions(out + config_.word_dim, out, 1)));
    }
    blocks_.push_back(std::move(block));
    in = out;
  }
  head_ = register_module("head", torch::nn::Conv2d(torch::nn::Conv2dOptions(in, 3, 3).padding(1)));
}

torch::Tensor GeneratorImpl::init_latents(const torch::Tensor& sentences, const torch::Tensor& noise) {
  if (sentences.dim() != 3 || sentences.size(2) != config_.word_dim) {
    throw ShapeError("init_latents expects sentences [B, N, " + std::to_string(config_.word_dim) + "]");
  }
  if (noise.dim() != 3 || noise.size(0) != sentences.size(0) || noise.size(1) != sentences.size(1) ||
      noise.size(2) != config_.noise_dim) {
    throw ShapeError("init_latents expects noise [B, N, " + std::to_string(config_.noise_dim) + "]");
  }
  const int64_t b = sentences.size(0), n = sentences.size(1);
  const int64_t c0 = config_.channels_at(4);
  auto h = torch::zeros({b, config_.context_hidden}, sentences.options());
  std::vector<torch::Tensor> maps;
  for (int64_t f = 0; f < n; ++f) {
    const auto z = noise.select(1, f);
    h = context_->forward(torch::cat({sentences.select(1, f), z}, 1), h);
    maps.push_back(initial_->forward(torch::cat({h, z}, 1)).view({b, c0, 4, 4}));
  }
  return torch::stack(maps, 1);
}

GeneratorOutput GeneratorImpl::forward(const text::TextEncoding& encoding, const torch::Tensor& noise) {
  const auto& s = encoding.s;
  const auto& w = encoding.w;
  const auto& mask = encoding.mask;
  if (s.dim() != 3 || w.dim() != 4 || mask.dim() != 3) {
    throw ShapeError("generator expects batched encodings: s [B,N,D], w [B,N,D,L], mask [B,N,L]");
  }
  const int64_t b = s.size(0), n = s.size(1);

  GeneratorOutput out;
  torch::Tensor sentences = s;
  if (config_.use_enriched_sentences) {
    out.enriched = ops::enrich_sentences(s, w, mask);
    sentences = out.enriched.s_prime;
  }
  auto x = init_latents(sentences, noise);
  x = lrelu(pixel_norm(x.flatten(0, 1)));  // [B*N, C0, 4, 4]

  const auto scope = config_.attention == AttentionMode::kPerSentence ? ops::AttentionScope::kSentence
                                                                       : ops::AttentionScope::kStory;
  for (auto& block : blocks_) {
    x = F::interpolate(x, F::InterpolateFuncOptions().scale_factor(std::vector<double>{2.0, 2.0}).mode(torch::kNearest));
    x = lrelu(pixel_norm(block.conv->forward(x)));
    if (block.projection) {
      const int64_t c = x.size(1), r = x.size(2);
      auto att = ops::extended_spatial_attention(x.view({b, n, c, r, r}), w, mask, block.projection->weight(), scope);
      x = lrelu(block.fuse->forward(torch::cat({x, att.v_w_maps.reshape({b * n, config_.word_dim, r, r})}, 1)));
      out.attention.push_back(std::move(att));
    }
  }
  auto img = (torch::tanh(head_->forward(x)) + 1.0) * 0.5;
  out.images = img.view({b, n, 3, config_.image_size, config_.image_size});
  return out;
}

}  // namespace storyviz::gen

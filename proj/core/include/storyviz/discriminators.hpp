#pragma once

#include <memory>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "storyviz/story_ops.hpp"
#include "storyviz/text_encoder.hpp"

namespace storyviz::disc {

enum class DiscriminatorMode {
  kFusionOneWay,     // single head over word/pixel fusion features
  kTwoWayBaseline,   // 4x4 features, unconditional head + sentence-concat conditional head
};

const char* name(DiscriminatorMode m);
DiscriminatorMode parse_discriminator_mode(const std::string& s);

struct DiscriminatorConfig {
  DiscriminatorMode mode = DiscriminatorMode::kFusionOneWay;
  int64_t image_size = 32;
  int64_t frames = 5;
  int64_t max_words = 12;
  int64_t word_dim = 128;
  int64_t trunk_channels = 64;   // channels of the trunk at the fusion resolution
  int64_t head_channels = 64;    // first head conv; doubles per strided layer
  int64_t head_layers = 2;       // strided convs on F; 2 takes 16x16 down to 4x4
  bool share_trunk = true;       // image and story heads reuse one trunk

  void validate() const;
};

nlohmann::json to_json(const DiscriminatorConfig& c);
DiscriminatorConfig discriminator_config_from_json(const nlohmann::json& j);

inline constexpr int64_t kFusionResolution = 16;

// Each discriminator returns one or more logit sets per level; the loss is
// summed over sets. The one-way design always returns exactly one.
class StoryDiscriminator : public torch::nn::Module {
 public:
  // frames [B, N, 3, S, S]; returns sets of [B*N] logits, one per frame.
  virtual std::vector<torch::Tensor> image_logits(const torch::Tensor& frames, const text::TextEncoding& text) = 0;
  // returns sets of [B] logits, one per story.
  virtual std::vector<torch::Tensor> story_logits(const torch::Tensor& frames, const text::TextEncoding& text) = 0;
  virtual const DiscriminatorConfig& config() const = 0;
};

// Strided convolutional trunk down to the fusion resolution.
class TrunkImpl : public torch::nn::Module {
 public:
  TrunkImpl(int64_t image_size, int64_t channels);
  torch::Tensor forward(const torch::Tensor& images);  // [M, 3, S, S] -> [M, C, 16, 16]

 private:
  torch::nn::Sequential layers_{nullptr};
};
TORCH_MODULE(Trunk);

// Strided convs on fusion features down to 4x4, then a linear logit.
class FusionHeadImpl : public torch::nn::Module {
 public:
  FusionHeadImpl(int64_t in_channels, int64_t channels, int64_t layers);
  torch::Tensor forward(const torch::Tensor& fused);  // [M, Lt, 16, 16] -> [M]
  torch::nn::Linear& output() { return output_; }

 private:
  torch::nn::Sequential convs_{nullptr};
  torch::nn::Linear output_{nullptr};
};
TORCH_MODULE(FusionHead);

class FusionDiscriminator : public StoryDiscriminator {
 public:
  explicit FusionDiscriminator(DiscriminatorConfig config);

  // images [M, 3, S, S], words [M, D, L], mask [M, L] -> [M]
  torch::Tensor image_logit(const torch::Tensor& images, const torch::Tensor& words, const torch::Tensor& mask);
  // stories [B, N, 3, S, S], words [B, D, N*L], mask [B, N*L] -> [B]
  torch::Tensor story_logit(const torch::Tensor& stories, const torch::Tensor& words, const torch::Tensor& mask);

  // The fusion volumes the heads consume (exposed for inspection and tests).
  torch::Tensor image_fusion(const torch::Tensor& images, const torch::Tensor& words, const torch::Tensor& mask);
  torch::Tensor story_fusion(const torch::Tensor& stories, const torch::Tensor& words, const torch::Tensor& mask);

  std::vector<torch::Tensor> image_logits(const torch::Tensor& frames, const text::TextEncoding& text) override;
  std::vector<torch::Tensor> story_logits(const torch::Tensor& frames, const text::TextEncoding& text) override;
  const DiscriminatorConfig& config() const override { return config_; }

  Trunk& image_trunk() { return image_trunk_; }
  Trunk& story_trunk() { return share() ? image_trunk_ : story_trunk_; }
  FusionHead& image_head() { return image_head_; }
  FusionHead& story_head() { return story_head_; }
  ops::WordSpaceProjection& image_projection() { return image_projection_; }
  ops::WordSpaceProjection& story_projection() { return story_projection_; }
  torch::nn::Conv2d& story_merge() { return story_merge_; }

 private:
  bool share() const { return config_.share_trunk; }

  DiscriminatorConfig config_;
  Trunk image_trunk_{nullptr};
  Trunk story_trunk_{nullptr};
  ops::WordSpaceProjection image_projection_{nullptr};
  ops::WordSpaceProjection story_projection_{nullptr};
  torch::nn::Conv2d story_merge_{nullptr};  // N*C frame channels -> C
  FusionHead image_head_{nullptr};
  FusionHead story_head_{nullptr};
};

// The conventional design: features pooled to 4x4, an unconditional head and
// a conditional head on features concatenated with the sentence vector(s).
class TwoWayDiscriminator : public StoryDiscriminator {
 public:
  explicit TwoWayDiscriminator(DiscriminatorConfig config);

  std::vector<torch::Tensor> image_logits(const torch::Tensor& frames, const text::TextEncoding& text) override;
  std::vector<torch::Tensor> story_logits(const torch::Tensor& frames, const text::TextEncoding& text) override;
  const DiscriminatorConfig& config() const override { return config_; }

 private:
  torch::Tensor features(Trunk& trunk, torch::nn::Sequential& down, const torch::Tensor& images);

  DiscriminatorConfig config_;
  Trunk image_trunk_{nullptr};
  Trunk story_trunk_{nullptr};
  torch::nn::Sequential image_down_{nullptr};
  torch::nn::Sequential story_down_{nullptr};
  torch::nn::Conv2d story_merge_{nullptr};
  torch::nn::Conv2d image_uncond_{nullptr};
  torch::nn::Sequential image_cond_{nullptr};
  torch::nn::Conv2d story_uncond_{nullptr};
  torch::nn::Sequential story_cond_{nullptr};
};

std::shared_ptr<StoryDiscriminator> make_discriminator(const DiscriminatorConfig& config);

// Number of trainable scalars.
int64_t count_parameters(const torch::nn::Module& module);

// Per-level word inputs for the fusion discriminator.
//   sentence_words: w [B, N, D, L] -> [B*N, D, L], mask [B*N, L]
//   story_words:    w [B, N, D, L] -> [B, D, N*L], mask [B, N*L]
std::pair<torch::Tensor, torch::Tensor> sentence_words(const text::TextEncoding& text);
std::pair<torch::Tensor, torch::Tensor> story_words(const text::TextEncoding& text);

// Adversarial losses with D(F) = sigmoid(logit), written with softplus so they
// stay finite for any finite logit:
//   discriminator: -E[log D(F)] - E[log(1 - D(F'))]
//   generator:     -E[log D(F')]
torch::Tensor discriminator_loss(const torch::Tensor& real_logits, const torch::Tensor& fake_logits);
torch::Tensor generator_loss(const torch::Tensor& fake_logits);

struct LossBundle {
  double generator_image = 0.0;      // L_{G,I}
  double discriminator_image = 0.0;  // L_{D,I}
  double generator_story = 0.0;      // L_{G,V}
  double discriminator_story = 0.0;  // L_{D,V}
};

}  // namespace storyviz::disc

#pragma once

#include <optional>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "storyviz/story_ops.hpp"
#include "storyviz/text_encoder.hpp"

namespace storyviz::gen {

enum class AttentionMode { kExtended, kPerSentence, kNone };

const char* name(AttentionMode m);
AttentionMode parse_attention_mode(const std::string& s);

struct GeneratorConfig {
  int64_t image_size = 32;        // 16, 32 or 64
  int64_t word_dim = 128;         // D of the text encoder
  int64_t noise_dim = 64;
  int64_t context_hidden = 128;
  int64_t base_channels = 256;    // channels at 4x4; halved per upsampling block
  int64_t min_channels = 8;
  std::vector<int64_t> attention_sites = {16};  // block resolutions, 8..image_size
  AttentionMode attention = AttentionMode::kExtended;
  bool use_enriched_sentences = true;

  int64_t channels_at(int64_t resolution) const;
  void validate() const;
};

nlohmann::json to_json(const GeneratorConfig& c);
GeneratorConfig generator_config_from_json(const nlohmann::json& j);

struct GeneratorOutput {
  torch::Tensor images;                      // [B, N, 3, S, S] in [0, 1]
  ops::EnrichedSentences enriched;           // undefined tensors when enrichment is off
  std::vector<ops::AttentionResult> attention;  // one per injection site
};

// Story context encoder, per-frame initial maps and an upsampling stack with
// word attention injected at the configured resolutions.
class GeneratorImpl : public torch::nn::Module {
 public:
  explicit GeneratorImpl(GeneratorConfig config);

  // sentences [B, N, D] (enriched or raw), noise [B, N, noise_dim]
  // -> [B, N, C0, 4, 4]. The context state runs over frames in order.
  torch::Tensor init_latents(const torch::Tensor& sentences, const torch::Tensor& noise);

  // encoding: s [B, N, D], w [B, N, D, L], mask [B, N, L]
  GeneratorOutput forward(const text::TextEncoding& encoding, const torch::Tensor& noise);

  const GeneratorConfig& config() const { return config_; }

 private:
  struct Block {
    torch::nn::Conv2d conv{nullptr};
    int64_t resolution = 0;
    ops::WordSpaceProjection projection{nullptr};  // set at attention sites
    torch::nn::Conv2d fuse{nullptr};
  };

  GeneratorConfig config_;
  torch::nn::GRUCell context_{nullptr};
  torch::nn::Linear initial_{nullptr};
  std::vector<Block> blocks_;
  torch::nn::Conv2d head_{nullptr};
};
TORCH_MODULE(Generator);

// Channel-wise normalisation of each pixel's feature vector.
torch::Tensor pixel_norm(const torch::Tensor& x);

}  // namespace storyviz::gen

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "storyviz/discriminators.hpp"
#include "storyviz/generator.hpp"
#include "storyviz/metrics.hpp"
#include "storyviz/story_tensors.hpp"
#include "storyviz/text_encoder.hpp"

namespace storyviz::train {

// Flat JSON document; every key is optional.
struct TrainConfig {
  std::filesystem::path dataset;     // built by gen-data
  std::filesystem::path encoders;    // built by pretrain-encoder
  std::filesystem::path extractor;   // built by pretrain-encoder

  double learning_rate = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  int batch_size = 16;
  int epochs = 120;
  int max_steps = -1;       // stop early after this many steps when positive
  std::uint64_t seed = 0;
  int image_size = 32;      // training resolution; dataset frames are area-averaged down to it
  int train_limit = -1;     // stories of the train split, -1 for all
  int eval_every = 10;      // epochs between checkpoints
  int selection_stories = -1;  // size of the model-selection pool; -1 uses the FSD minimum

  bool use_enriched_sentences = true;
  gen::AttentionMode attention_mode = gen::AttentionMode::kExtended;
  disc::DiscriminatorMode discriminator_mode = disc::DiscriminatorMode::kFusionOneWay;
  double image_loss_weight = 1.0;
  double story_loss_weight = 1.0;

  // Architecture widths.
  int64_t generator_channels = 256;
  int64_t noise_dim = 64;
  int64_t context_hidden = 128;
  int64_t discriminator_channels = 64;
  int64_t head_channels = 64;
  int64_t head_layers = 2;
  bool share_trunk = true;

  void validate() const;
  gen::GeneratorConfig generator_config(int64_t word_dim) const;
  disc::DiscriminatorConfig discriminator_config(int64_t word_dim, int64_t frames, int64_t max_words) const;
};

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);
TrainConfig load_train_config(const std::filesystem::path& path);

// The four adversarial losses of one step and the gradient norms of the two
// updates.
struct StepMetrics {
  double l_gi = 0.0;
  double l_di = 0.0;
  double l_gv = 0.0;
  double l_dv = 0.0;
  double grad_norm_d = 0.0;
  double grad_norm_g = 0.0;
};

nlohmann::json to_json(const StepMetrics& m);

// Frozen text encodings for a set of stories.
text::TextEncoding encode_stories(text::TextEncoder& encoder, const torch::Tensor& tokens, const torch::Tensor& mask);
text::TextEncoding slice_encoding(const text::TextEncoding& e, const torch::Tensor& rows);

struct TrainState {
  gen::Generator generator{nullptr};
  std::shared_ptr<disc::StoryDiscriminator> discriminator;
  std::unique_ptr<torch::optim::Adam> generator_opt;
  std::unique_ptr<torch::optim::Adam> discriminator_opt;
  torch::Generator noise_rng;
  int64_t step = 0;
  int epoch = 0;
};

TrainState make_state(const TrainConfig& config, int64_t word_dim, int64_t frames, int64_t max_words);

struct StepOptions {
  bool update_generator = true;
  int64_t batch_id = 0;  // reported when a loss is non-finite
};

// One discriminator update on L_DI + L_DV followed by one generator update on
// L_GI + L_GV. real: [B, N, 3, S, S]. Throws NumericError on a non-finite loss.
StepMetrics train_step(TrainState& state, const TrainConfig& config, const torch::Tensor& real,
                       const text::TextEncoding& encoding, const StepOptions& options = {});

// Generated stories for every row of `encoding`, with noise drawn from a
// generator seeded by `seed`; evaluated in batches without gradients.
torch::Tensor generate_stories(gen::Generator& generator, const text::TextEncoding& encoding, std::uint64_t seed,
                               int batch_size = 32);

// Metric report of `generator` on a pool of stories.
struct EvalContext {
  text::TextEncoder text{nullptr};
  text::ImageEncoder image{nullptr};
  metrics::TrainedExtractor extractor;
};

EvalContext load_eval_context(const TrainConfig& config);

metrics::MetricReport evaluate(gen::Generator& generator, const StoryTensors& pool, EvalContext& context,
                               std::uint64_t seed);

// Stories used to pick the best checkpoint: the validation split, topped up
// from the end of the training split when it is smaller than the FSD pool
// minimum.
StoryTensors selection_pool(const TrainConfig& config, int64_t frames, int64_t feature_dim);

// ---------------------------------------------------------------------------
// Checkpoints are tensor archives with kind "gan".

inline constexpr const char* kCheckpointVersion = "1";

struct Checkpoint {
  TrainConfig config;
  gen::Generator generator{nullptr};
  std::shared_ptr<disc::StoryDiscriminator> discriminator;
  int64_t step = 0;
  int epoch = 0;
  nlohmann::json metrics;  // snapshot at save time
};

void save_checkpoint(const std::filesystem::path& dir, const TrainState& state, const TrainConfig& config,
                     const nlohmann::json& metrics);
// Throws VersionError on a version mismatch and IoError on damaged files.
Checkpoint load_checkpoint(const std::filesystem::path& dir);

struct TrainResult {
  std::vector<std::filesystem::path> checkpoints;
  std::filesystem::path best;
  double best_score = 0.0;  // FID + FSD on the selection pool
  std::filesystem::path log;
  int64_t steps = 0;
};

using ProgressFn = std::function<void(const std::string&)>;

// Writes <out>/metrics.jsonl (one row per step), <out>/evals.jsonl,
// <out>/checkpoints/step_<k>/ and <out>/best/. Refuses a non-empty <out>
// unless overwrite.
TrainResult train(const TrainConfig& config, const std::filesystem::path& out_dir, bool overwrite,
                  const ProgressFn& progress = nullptr);

}  // namespace storyviz::train

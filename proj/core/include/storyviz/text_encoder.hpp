#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

namespace storyviz::text {

struct TextEncoderConfig {
  int64_t vocab_size = 0;
  int64_t embed_dim = 64;
  int64_t hidden = 64;  // per direction
  int64_t out_dim = 128;  // D
};

nlohmann::json to_json(const TextEncoderConfig& c);
TextEncoderConfig text_encoder_config_from_json(const nlohmann::json& j);

// Sentence vectors and contextual word embeddings for a batch of stories.
//   s     [B, N, D]
//   w     [B, N, D, L]  (masked columns are exactly zero)
//   mask  [B, N, L]     bool
// The batch dimension is absent when the tokens had none.
struct TextEncoding {
  torch::Tensor s;
  torch::Tensor w;
  torch::Tensor mask;
};

// Bi-directional LSTM over token embeddings. Both directions update only on
// real tokens, so padded positions never influence the result. Word vectors
// are the projected concatenation of the two hidden states at each position;
// the sentence vector projects the final state of each direction.
class TextEncoderImpl : public torch::nn::Module {
 public:
  explicit TextEncoderImpl(TextEncoderConfig config);

  // tokens: [..., L] int64, mask: [..., L]. Throws NumericError on an
  // all-padding sentence.
  TextEncoding forward(const torch::Tensor& tokens, const torch::Tensor& mask);

  const TextEncoderConfig& config() const { return config_; }

 private:
  TextEncoderConfig config_;
  torch::nn::Embedding embedding_{nullptr};
  torch::nn::LSTMCell forward_cell_{nullptr};
  torch::nn::LSTMCell backward_cell_{nullptr};
  torch::nn::Linear projection_{nullptr};
};
TORCH_MODULE(TextEncoder);

struct ImageEncoderConfig {
  int64_t width = 32;
  int64_t out_dim = 128;
};

nlohmann::json to_json(const ImageEncoderConfig& c);
ImageEncoderConfig image_encoder_config_from_json(const nlohmann::json& j);

// Small strided CNN mapping [M, 3, S, S] images to [M, D] features.
class ImageEncoderImpl : public torch::nn::Module {
 public:
  explicit ImageEncoderImpl(ImageEncoderConfig config);
  torch::Tensor forward(const torch::Tensor& images);
  const ImageEncoderConfig& config() const { return config_; }

 private:
  ImageEncoderConfig config_;
  torch::nn::Sequential body_{nullptr};
  torch::nn::Linear head_{nullptr};
};
TORCH_MODULE(ImageEncoder);

// Symmetric cross-entropy over the B x B cosine-similarity matrix divided by
// the temperature. Row i of both inputs is a matched pair. Returns the sum of
// the text->image and image->text terms, so uniform similarities give 2 ln B.
torch::Tensor contrastive_loss(const torch::Tensor& text_features,
                               const torch::Tensor& image_features, double temperature);

// Row-wise cosine similarity between matched rows.
torch::Tensor paired_cosine(const torch::Tensor& a, const torch::Tensor& b);

struct PretrainConfig {
  int epochs = 12;
  int batch_size = 64;
  double learning_rate = 1e-3;
  double temperature = 0.1;
  int image_size = 32;
  std::uint64_t seed = 0;
  int train_limit = -1;  // stories; -1 uses the whole split
  TextEncoderConfig text;
  ImageEncoderConfig image;
};

nlohmann::json to_json(const PretrainConfig& c);
PretrainConfig pretrain_config_from_json(const nlohmann::json& j);

struct PretrainReport {
  double final_loss = 0.0;
  double val_retrieval_accuracy = 0.0;  // sentence -> image top-1 within batches of batch_size
  double val_matched_over_mismatched = 0.0;  // fraction of pairs with cos(matched) > cos(mismatched)
  int steps = 0;
};

struct PretrainedEncoders {
  TextEncoder text{nullptr};
  ImageEncoder image{nullptr};
  PretrainReport report;
};

using ProgressFn = std::function<void(const std::string&)>;

// Trains both encoders on the dataset's train split and evaluates on val.
// Throws NumericError if the loss becomes non-finite.
PretrainedEncoders pretrain_encoders(const std::filesystem::path& dataset_dir,
                                     const PretrainConfig& config,
                                     const ProgressFn& progress = nullptr);

// Retrieval metrics of trained encoders on `pairs` (images [M,3,S,S], tokens
// [M,L], mask [M,L]), evaluated in consecutive batches of `batch_size`.
PretrainReport evaluate_encoders(TextEncoder& text, ImageEncoder& image, const torch::Tensor& images,
                                 const torch::Tensor& tokens, const torch::Tensor& mask,
                                 int batch_size, std::uint64_t seed);

void save_encoders(const std::filesystem::path& dir, const PretrainedEncoders& encoders);
PretrainedEncoders load_encoders(const std::filesystem::path& dir);

}  // namespace storyviz::text

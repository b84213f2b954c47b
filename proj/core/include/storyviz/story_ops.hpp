#pragma once

// Word-level story operations: enriched sentence vectors, story-wide spatial
// attention and word/pixel fusion features.
//
// Shape conventions (a leading batch dimension B is optional on every input;
// when it is absent the outputs are returned without it as well):
//   s     sentence vectors     [B, N, D]
//   w     word embeddings      [B, N, D, L]
//   mask  real-token mask      [B, N, L]   (bool, true = real token)
//   v     visual features      [B, N, C, H, W]
//
// Words are flattened sentence-major: story word j = n * L + l. Spatial
// locations are flattened frame-major: location i = n * H * W + y * W + x.
// Everything is differentiable through libtorch autograd and invariant to
// whatever values sit at masked word positions.

#include <torch/torch.h>

namespace storyviz::ops {

// Softmax along `dim` restricted to entries where `mask` (broadcastable to
// `logits`) is true. Masked entries come out as exact zeros and receive zero
// gradient. Throws NumericError if any slice has no unmasked entry.
torch::Tensor masked_softmax(const torch::Tensor& logits, const torch::Tensor& mask, int64_t dim);

// w [B, N, D, L] -> w' [B, D, N*L] with masked columns set to zero.
torch::Tensor flatten_words(const torch::Tensor& w, const torch::Tensor& mask);

// mask [B, N, L] -> [B, N*L]
torch::Tensor flatten_word_mask(const torch::Tensor& mask);

struct EnrichedSentences {
  torch::Tensor sigma;    // [B, N, N*L] word-sentence correlation weights, rows sum to 1
  torch::Tensor s_prime;  // [B, N, D]   sigma-weighted combination of story words
};

// sigma = masked_softmax(s w'), s' = sigma w'^T.
EnrichedSentences enrich_sentences(const torch::Tensor& s, const torch::Tensor& w,
                                   const torch::Tensor& mask);

enum class AttentionScope {
  kStory,     // every location attends to every word of the story
  kSentence,  // frame n attends only to the words of sentence n
};

struct AttentionResult {
  torch::Tensor logits;  // a     [B, N*H*W, N*L]
  torch::Tensor beta;    //       [B, N*H*W, N*L]
  torch::Tensor v_w;     // w' beta^T, [B, D, N*H*W]
  torch::Tensor v_w_maps;  // v_w reshaped per frame, [B, N, D, H, W]
};

// `proj` is the [D, C] 1x1-convolution weight that maps visual features into
// the word space.
AttentionResult extended_spatial_attention(const torch::Tensor& v, const torch::Tensor& w,
                                           const torch::Tensor& mask, const torch::Tensor& proj,
                                           AttentionScope scope = AttentionScope::kStory);

// Fusion volume F = reshape(words^T v'), one channel per word.
//   v      [B, C, H, W]
//   words  [B, D, Lt]  (Lt = L for one image, N*L for a story)
//   mask   [B, Lt]
// Returns [B, Lt, H, W]; masked word channels are exact zeros.
torch::Tensor fuse_features(const torch::Tensor& v, const torch::Tensor& words,
                            const torch::Tensor& word_mask, const torch::Tensor& proj);

// Bias-free learned map from C visual channels to the D-dimensional word
// space, orthogonally initialised.
class WordSpaceProjectionImpl : public torch::nn::Module {
 public:
  WordSpaceProjectionImpl(int64_t in_channels, int64_t word_dim);

  const torch::Tensor& weight() const { return weight_; }

 private:
  torch::Tensor weight_;
};
TORCH_MODULE(WordSpaceProjection);

}  // namespace storyviz::ops

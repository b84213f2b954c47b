#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "storyviz/data_synth.hpp"
#include "storyviz/image.hpp"
#include "storyviz/vocab.hpp"

namespace storyviz {

// A split of the dataset held in memory as tensors.
struct StoryTensors {
  torch::Tensor images;  // [M, N, 3, S, S] float32 in [0, 1]
  torch::Tensor tokens;  // [M, N, L] int64
  torch::Tensor mask;    // [M, N, L] bool
  std::vector<data::StorySpec> specs;
  std::vector<std::vector<std::string>> captions;

  int64_t size() const { return images.defined() ? images.size(0) : 0; }
  StoryTensors slice(int64_t begin, int64_t end) const;
  StoryTensors index(const std::vector<int64_t>& rows) const;
};

torch::Tensor image_to_tensor(const Image& image);   // [3, H, W]
Image tensor_to_image(const torch::Tensor& chw);

// Area-averages [..., 3, S, S] down to [..., 3, size, size]; size must divide S.
torch::Tensor resize_frames(const torch::Tensor& images, int64_t size);

// Tokenises captions with the dataset vocabulary and resizes frames to
// image_size.
StoryTensors load_story_tensors(const std::filesystem::path& dataset_dir, data::Split split,
                                int image_size, std::optional<int> limit = std::nullopt);

text::Vocab load_dataset_vocab(const std::filesystem::path& dataset_dir);

}  // namespace storyviz

#include "storyviz/story_tensors.hpp"

#include "storyviz/error.hpp"

namespace storyviz {

StoryTensors StoryTensors::slice(int64_t begin, int64_t end) const {
  std::vector<int64_t> rows;
  for (int64_t i = begin; i < end; ++i) rows.push_back(i);
  return index(rows);
}

StoryTensors StoryTensors::index(const std::vector<int64_t>& rows) const {
  const auto idx = torch::tensor(rows, torch::kLong);
  StoryTensors out;
  out.images = images.index_select(0, idx);
  out.tokens = tokens.index_select(0, idx);
  out.mask = mask.index_select(0, idx);
  for (auto r : rows) {
    out.specs.push_back(specs.at(static_cast<std::size_t>(r)));
    out.captions.push_back(captions.at(static_cast<std::size_t>(r)));
  }
  return out;
}

torch::Tensor image_to_tensor(const Image& image) {
  auto data = image.data();
  return torch::from_blob(const_cast<float*>(data.data()), {3, image.height(), image.width()},
                          torch::kFloat32)
      .clone();
}

Image tensor_to_image(const torch::Tensor& chw) {
  if (chw.dim() != 3 || chw.size(0) != 3) throw ShapeError("expected a [3, H, W] tensor");
  const auto t = chw.detach().to(torch::kCPU, torch::kFloat32).contiguous();
  Image img(static_cast<int>(t.size(2)), static_cast<int>(t.size(1)));
  std::copy_n(t.data_ptr<float>(), t.numel(), img.data().begin());
  return img;
}

torch::Tensor resize_frames(const torch::Tensor& images, int64_t size) {
  const int64_t s = images.size(-1);
  if (size == s) return images;
  if (size <= 0 || s % size != 0) {
    throw ConfigError("cannot resize " + std::to_string(s) + "px frames to " + std::to_string(size));
  }
  auto lead = images.sizes().vec();
  lead.resize(lead.size() - 3);
  const auto flat = images.reshape({-1, 3, s, s});
  const auto k = s / size;
  auto out = torch::avg_pool2d(flat, {k, k});
  lead.insert(lead.end(), {3, size, size});
  return out.reshape(lead);
}

text::Vocab load_dataset_vocab(const std::filesystem::path& dataset_dir) {
  const auto manifest = data::read_manifest(dataset_dir);
  return text::Vocab::load(dataset_dir / manifest.vocab_path);
}

StoryTensors load_story_tensors(const std::filesystem::path& dataset_dir, data::Split split,
                                int image_size, std::optional<int> limit) {
  const auto manifest = data::read_manifest(dataset_dir);
  const auto vocab = text::Vocab::load(dataset_dir / manifest.vocab_path);
  auto records = data::load_split(dataset_dir, split, limit);
  if (records.empty()) {
    throw ConfigError("split " + std::string(data::name(split)) + " of " + dataset_dir.string() +
                      " is empty");
  }
  const int64_t m = static_cast<int64_t>(records.size());
  const int64_t n = manifest.frames_per_story;
  const int64_t l = manifest.max_words;
  const int64_t s = manifest.image_size;

  StoryTensors out;
  auto images = torch::empty({m, n, 3, s, s}, torch::kFloat32);
  auto tokens = torch::empty({m, n, l}, torch::kLong);
  auto mask = torch::empty({m, n, l}, torch::kBool);
  for (int64_t i = 0; i < m; ++i) {
    auto& rec = records[static_cast<std::size_t>(i)];
    for (int64_t f = 0; f < n; ++f) {
      images[i][f].copy_(image_to_tensor(rec.frames[static_cast<std::size_t>(f)]));
      const auto row = text::tokenize(rec.captions[static_cast<std::size_t>(f)], vocab, static_cast<int>(l));
      tokens[i][f].copy_(torch::tensor(row.ids, torch::kLong));
      mask[i][f].copy_(torch::tensor(std::vector<int64_t>(row.mask.begin(), row.mask.end())).to(torch::kBool));
    }
    out.specs.push_back(std::move(rec.spec));
    out.captions.push_back(std::move(rec.captions));
  }
  out.images = resize_frames(images, image_size);
  out.tokens = tokens;
  out.mask = mask;
  return out;
}

}  // namespace storyviz

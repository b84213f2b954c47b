#include "storyviz/text_encoder.hpp"

#include <cmath>
#include <numeric>
#include <random>

#include "storyviz/error.hpp"
#include "storyviz/story_tensors.hpp"
#include "storyviz/tensor_io.hpp"

namespace storyviz::text {

using nlohmann::json;

json to_json(const TextEncoderConfig& c) {
  return {{"vocab_size", c.vocab_size}, {"embed_dim", c.embed_dim}, {"hidden", c.hidden}, {"out_dim", c.out_dim}};
}

TextEncoderConfig text_encoder_config_from_json(const json& j) {
  TextEncoderConfig c;
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.embed_dim = j.value("embed_dim", c.embed_dim);
  c.hidden = j.value("hidden", c.hidden);
  c.out_dim = j.value("out_dim", c.out_dim);
  return c;
}

json to_json(const ImageEncoderConfig& c) { return {{"width", c.width}, {"out_dim", c.out_dim}}; }

ImageEncoderConfig image_encoder_config_from_json(const json& j) {
  ImageEncoderConfig c;
  c.width = j.value("width", c.width);
  c.out_dim = j.value("out_dim", c.out_dim);
  return c;
}

// ---------------------------------------------------------------------------

TextEncoderImpl::TextEncoderImpl(TextEncoderConfig config) : config_(config) {
  if (config.vocab_size <= 2 || config.embed_dim <= 0 || config.hidden <= 0 || config.out_dim <= 0) {
    throw ConfigError("invalid text encoder configuration");
  }
  embedding_ = register_module("embedding", torch::nn::Embedding(config.vocab_size, config.embed_dim));
  forward_cell_ = register_module("forward_cell", torch::nn::LSTMCell(config.embed_dim, config.hidden));
  backward_cell_ = register_module("backward_cell", torch::nn::LSTMCell(config.embed_dim, config.hidden));
  projection_ = register_module("projection", torch::nn::Linear(2 * config.hidden, config.out_dim));
}

TextEncoding TextEncoderImpl::forward(const torch::Tensor& tokens, const torch::Tensor& mask_in) {
  if (tokens.sizes() != mask_in.sizes()) throw ShapeError("tokens and mask must have the same shape");
  if (tokens.dim() < 1) throw ShapeError("tokens need at least one dimension");
  const auto lead = tokens.sizes().slice(0, tokens.dim() - 1).vec();
  const int64_t l = tokens.size(-1);
  const auto ids = tokens.reshape({-1, l});
  const auto mask = mask_in.reshape({-1, l}).to(torch::kBool);
  if (!mask.any(1).all().item<bool>()) throw NumericError("sentence without any real token");
  const int64_t rows = ids.size(0);
  const int64_t h = config_.hidden;

  const auto emb = embedding_->forward(ids);  // [M, L, E]
  const auto zeros = torch::zeros({rows, h}, emb.options());

  std::vector<torch::Tensor> fwd(static_cast<std::size_t>(l)), bwd(static_cast<std::size_t>(l));
  auto hf = zeros, cf = zeros;
  for (int64_t t = 0; t < l; ++t) {
    auto [h_new, c_new] = forward_cell_->forward(emb.select(1, t), std::make_tuple(hf, cf));
    const auto m = mask.select(1, t).unsqueeze(1);
    hf = torch::where(m, h_new, hf);
    cf = torch::where(m, c_new, cf);
    fwd[static_cast<std::size_t>(t)] = hf;
  }
  auto hb = zeros, cb = zeros;
  for (int64_t t = l - 1; t >= 0; --t) {
    auto [h_new, c_new] = backward_cell_->forward(emb.select(1, t), std::make_tuple(hb, cb));
    const auto m = mask.select(1, t).unsqueeze(1);
    hb = torch::where(m, h_new, hb);
    cb = torch::where(m, c_new, cb);
    bwd[static_cast<std::size_t>(t)] = hb;
  }

  const auto states = torch::cat({torch::stack(fwd, 1), torch::stack(bwd, 1)}, 2);  // [M, L, 2H]
  auto words = projection_->forward(states);                                       // [M, L, D]
  words = torch::where(mask.unsqueeze(2), words, torch::zeros({}, words.options()));
  auto sentence = projection_->forward(torch::cat({hf, hb}, 1));                   // [M, D]

  auto s_shape = lead;
  s_shape.push_back(config_.out_dim);
  auto w_shape = lead;
  w_shape.push_back(config_.out_dim);
  w_shape.push_back(l);
  return {sentence.reshape(s_shape), words.transpose(1, 2).reshape(w_shape), mask.reshape(mask_in.sizes())};
}

// ---------------------------------------------------------------------------

ImageEncoderImpl::ImageEncoderImpl(ImageEncoderConfig config) : config_(config) {
  const int64_t c = config.width;
  auto conv = [](int64_t in, int64_t out) {
    return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 4).stride(2).padding(1));
  };
  body_ = register_module(
      "body", torch::nn::Sequential(conv(3, c), torch::nn::LeakyReLU(torch::nn::LeakyReLUOptions().negative_slope(0.2)),
                                    conv(c, 2 * c), torch::nn::LeakyReLU(torch::nn::LeakyReLUOptions().negative_slope(0.2)),
                                    torch::nn::Conv2d(torch::nn::Conv2dOptions(2 * c, 4 * c, 3).padding(1)),
                                    torch::nn::LeakyReLU(torch::nn::LeakyReLUOptions().negative_slope(0.2)),
                                    torch::nn::AdaptiveAvgPool2d(1)));
  head_ = register_module("head", torch::nn::Linear(4 * c, config.out_dim));
}

torch::Tensor ImageEncoderImpl::forward(const torch::Tensor& images) {
  if (images.dim() != 4 || images.size(1) != 3) throw ShapeError("image encoder expects [M, 3, S, S]");
  return head_->forward(body_->forward(images).flatten(1));
}

// ---------------------------------------------------------------------------

torch::Tensor paired_cosine(const torch::Tensor& a, const torch::Tensor& b) {
  return torch::nn::functional::cosine_similarity(
      a, b, torch::nn::functional::CosineSimilarityFuncOptions().dim(1).eps(1e-8));
}

torch::Tensor contrastive_loss(const torch::Tensor& text_features, const torch::Tensor& image_features,
                               double temperature) {
  if (text_features.sizes() != image_features.sizes() || text_features.dim() != 2) {
    throw ShapeError("contrastive loss expects two [B, D] feature matrices");
  }
  const auto t = torch::nn::functional::normalize(text_features, torch::nn::functional::NormalizeFuncOptions().dim(1).eps(1e-8));
  const auto i = torch::nn::functional::normalize(image_features, torch::nn::functional::NormalizeFuncOptions().dim(1).eps(1e-8));
  const auto sim = torch::matmul(t, i.t()) / temperature;
  const auto targets = torch::arange(sim.size(0), torch::TensorOptions().dtype(torch::kLong).device(sim.device()));
  return torch::nn::functional::cross_entropy(sim, targets) + torch::nn::functional::cross_entropy(sim.t(), targets);
}

// ---------------------------------------------------------------------------

json to_json(const PretrainConfig& c) {
  return {{"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"learning_rate", c.learning_rate},
          {"temperature", c.temperature},
          {"image_size", c.image_size},
          {"seed", c.seed},
          {"train_limit", c.train_limit},
          {"text", to_json(c.text)},
          {"image", to_json(c.image)}};
}

PretrainConfig pretrain_config_from_json(const json& j) {
  PretrainConfig c;
  try {
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.temperature = j.value("temperature", c.temperature);
    c.image_size = j.value("image_size", c.image_size);
    c.seed = j.value("seed", c.seed);
    c.train_limit = j.value("train_limit", c.train_limit);
    if (j.contains("text")) c.text = text_encoder_config_from_json(j["text"]);
    if (j.contains("image")) c.image = image_encoder_config_from_json(j["image"]);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed pretraining config: ") + e.what());
  }
  if (c.epochs <= 0 || c.batch_size < 2 || c.learning_rate <= 0 || c.temperature <= 0) {
    throw ConfigError("pretraining config needs positive epochs, learning rate, temperature and batch >= 2");
  }
  return c;
}

namespace {

// Flattens stories into (frame, caption) pairs.
struct Pairs {
  torch::Tensor images;  // [P, 3, S, S]
  torch::Tensor tokens;  // [P, L]
  torch::Tensor mask;    // [P, L]
};

Pairs to_pairs(const StoryTensors& st) {
  const auto s = st.images.size(-1);
  const auto l = st.tokens.size(-1);
  return {st.images.reshape({-1, 3, s, s}), st.tokens.reshape({-1, l}), st.mask.reshape({-1, l})};
}

}  // namespace

PretrainReport evaluate_encoders(TextEncoder& text, ImageEncoder& image, const torch::Tensor& images,
                                 const torch::Tensor& tokens, const torch::Tensor& mask, int batch_size,
                                 std::uint64_t seed) {
  torch::NoGradGuard guard;
  text->eval();
  image->eval();
  PretrainReport report;
  const int64_t p = images.size(0);
  int64_t correct = 0, evaluated = 0, better = 0;
  for (int64_t begin = 0; begin + batch_size <= p; begin += batch_size) {
    const auto t = text->forward(tokens.slice(0, begin, begin + batch_size), mask.slice(0, begin, begin + batch_size)).s;
    const auto i = image->forward(images.slice(0, begin, begin + batch_size));
    const auto tn = torch::nn::functional::normalize(t, torch::nn::functional::NormalizeFuncOptions().dim(1));
    const auto in = torch::nn::functional::normalize(i, torch::nn::functional::NormalizeFuncOptions().dim(1));
    const auto sim = torch::matmul(tn, in.t());
    const auto pred = sim.argmax(1);
    correct += pred.eq(torch::arange(batch_size, torch::kLong)).sum().item<int64_t>();
    evaluated += batch_size;
  }
  // Matched vs. one mismatched caption drawn from a different pair.
  std::mt19937_64 rng(seed);
  std::vector<int64_t> other(static_cast<std::size_t>(p));
  for (int64_t k = 0; k < p; ++k) {
    int64_t j = std::uniform_int_distribution<int64_t>(0, p - 2)(rng);
    if (j >= k) ++j;
    other[static_cast<std::size_t>(k)] = j;
  }
  const auto other_idx = torch::tensor(other, torch::kLong);
  for (int64_t begin = 0; begin < p; begin += batch_size) {
    const int64_t end = std::min(p, begin + batch_size);
    const auto imgs = image->forward(images.slice(0, begin, end));
    const auto matched = text->forward(tokens.slice(0, begin, end), mask.slice(0, begin, end)).s;
    const auto oi = other_idx.slice(0, begin, end);
    const auto mismatched = text->forward(tokens.index_select(0, oi), mask.index_select(0, oi)).s;
    better += paired_cosine(imgs, matched).gt(paired_cosine(imgs, mismatched)).sum().item<int64_t>();
  }
  report.val_retrieval_accuracy = evaluated > 0 ? static_cast<double>(correct) / static_cast<double>(evaluated) : 0.0;
  report.val_matched_over_mismatched = p > 0 ? static_cast<double>(better) / static_cast<double>(p) : 0.0;
  return report;
}

PretrainedEncoders pretrain_encoders(const std::filesystem::path& dataset_dir, const PretrainConfig& config_in,
                                     const ProgressFn& progress) {
  PretrainConfig config = config_in;
  torch::manual_seed(config.seed);
  const auto vocab = load_dataset_vocab(dataset_dir);
  config.text.vocab_size = static_cast<int64_t>(vocab.size());

  const auto train = load_story_tensors(dataset_dir, data::Split::kTrain, config.image_size,
                                        config.train_limit > 0 ? std::optional<int>(config.train_limit) : std::nullopt);
  const auto val = load_story_tensors(dataset_dir, data::Split::kVal, config.image_size);
  const Pairs train_pairs = to_pairs(train);
  const Pairs val_pairs = to_pairs(val);

  PretrainedEncoders out;
  out.text = TextEncoder(config.text);
  out.image = ImageEncoder(config.image);
  std::vector<torch::Tensor> params = out.text->parameters();
  for (auto& p : out.image->parameters()) params.push_back(p);
  torch::optim::Adam opt(params, torch::optim::AdamOptions(config.learning_rate));

  const int64_t n_pairs = train_pairs.images.size(0);
  std::mt19937_64 rng(config.seed);
  std::vector<int64_t> order(static_cast<std::size_t>(n_pairs));
  std::iota(order.begin(), order.end(), 0);
  double last_loss = 0.0;
  int steps = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    out.text->train();
    out.image->train();
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    int batches = 0;
    for (int64_t begin = 0; begin + config.batch_size <= n_pairs; begin += config.batch_size) {
      const auto idx = torch::tensor(std::vector<int64_t>(order.begin() + begin, order.begin() + begin + config.batch_size),
                                     torch::kLong);
      const auto enc = out.text->forward(train_pairs.tokens.index_select(0, idx), train_pairs.mask.index_select(0, idx));
      const auto img = out.image->forward(train_pairs.images.index_select(0, idx));
      auto loss = contrastive_loss(enc.s, img, config.temperature);
      const double value = loss.item<double>();
      if (!std::isfinite(value)) {
        throw NumericError("contrastive loss became non-finite at epoch " + std::to_string(epoch) + ", step " +
                           std::to_string(steps));
      }
      opt.zero_grad();
      loss.backward();
      opt.step();
      epoch_loss += value;
      ++batches;
      ++steps;
    }
    last_loss = batches > 0 ? epoch_loss / batches : 0.0;
    if (progress) progress("pretrain epoch " + std::to_string(epoch + 1) + "/" + std::to_string(config.epochs) +
                           " loss " + std::to_string(last_loss));
  }

  out.report = evaluate_encoders(out.text, out.image, val_pairs.images, val_pairs.tokens, val_pairs.mask,
                                 config.batch_size, config.seed);
  out.report.final_loss = last_loss;
  out.report.steps = steps;
  return out;
}

void save_encoders(const std::filesystem::path& dir, const PretrainedEncoders& encoders) {
  auto tensors = module_state(*encoders.text, "text.");
  for (auto& t : module_state(*encoders.image, "image.")) tensors.push_back(std::move(t));
  const json meta = {{"kind", "encoders"},
                     {"text", to_json(encoders.text->config())},
                     {"image", to_json(encoders.image->config())},
                     {"report",
                      {{"final_loss", encoders.report.final_loss},
                       {"val_retrieval_accuracy", encoders.report.val_retrieval_accuracy},
                       {"val_matched_over_mismatched", encoders.report.val_matched_over_mismatched},
                       {"steps", encoders.report.steps}}}};
  save_tensor_archive(dir, meta, tensors);
}

PretrainedEncoders load_encoders(const std::filesystem::path& dir) {
  const auto archive = load_tensor_archive(dir);
  if (archive.meta.value("kind", "") != "encoders") {
    throw ConfigError(dir.string() + " is not an encoder checkpoint (run `storyviz pretrain-encoder`)");
  }
  PretrainedEncoders out;
  out.text = TextEncoder(text_encoder_config_from_json(archive.meta.at("text")));
  out.image = ImageEncoder(image_encoder_config_from_json(archive.meta.at("image")));
  assign_module_state(*out.text, archive, "text.");
  assign_module_state(*out.image, archive, "image.");
  const auto& r = archive.meta.at("report");
  out.report.final_loss = r.value("final_loss", 0.0);
  out.report.val_retrieval_accuracy = r.value("val_retrieval_accuracy", 0.0);
  out.report.val_matched_over_mismatched = r.value("val_matched_over_mismatched", 0.0);
  out.report.steps = r.value("steps", 0);
  out.text->eval();
  out.image->eval();
  return out;
}

}  // namespace storyviz::text

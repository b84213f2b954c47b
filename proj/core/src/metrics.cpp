#include "storyviz/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <Eigen/Dense>

#include "storyviz/error.hpp"
#include "storyviz/story_tensors.hpp"
#include "storyviz/tensor_io.hpp"

namespace storyviz::metrics {

using nlohmann::json;
namespace F = torch::nn::functional;

namespace {

constexpr int64_t kEvalBatch = 256;

Eigen::MatrixXd to_eigen(const torch::Tensor& t) {
  const auto c = t.to(torch::kFloat64).contiguous();
  const int64_t rows = c.size(0), cols = c.dim() > 1 ? c.size(1) : 1;
  Eigen::MatrixXd m(rows, cols);
  const double* p = c.data_ptr<double>();
  for (int64_t i = 0; i < rows; ++i) {
    for (int64_t j = 0; j < cols; ++j) m(i, j) = p[i * cols + j];
  }
  return m;
}

// Symmetric eigen-decomposition after checking the PSD tolerance.
Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> psd_eigen(const Eigen::MatrixXd& s, const char* what) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(0.5 * (s + s.transpose()));
  if (solver.info() != Eigen::Success) throw NumericError(std::string("eigendecomposition failed for ") + what);
  const auto& ev = solver.eigenvalues();
  const double scale = std::max(1.0, ev.cwiseAbs().maxCoeff());
  if (ev.minCoeff() < -1e-8 * scale) {
    throw NumericError(std::string(what) + " is not positive semi-definite (min eigenvalue " +
                       std::to_string(ev.minCoeff()) + ")");
  }
  return solver;
}

torch::nn::Conv2d conv(int64_t in, int64_t out, int64_t k, int64_t stride, int64_t pad) {
  return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, k).stride(stride).padding(pad));
}

torch::Tensor lrelu(const torch::Tensor& x) { return F::leaky_relu(x, F::LeakyReLUFuncOptions().negative_slope(0.2)); }

void require_gate(const TrainedExtractor& extractor) {
  if (!extractor.model) throw ConfigError("no feature extractor loaded (run `storyviz pretrain-encoder`)");
  const double gate = extractor.gate.gate_accuracy();
  if (gate < kGateThreshold) {
    throw ConfigError("feature extractor accuracy " + std::to_string(gate) + " is below the gate " +
                      std::to_string(kGateThreshold));
  }
}

}  // namespace

GaussianStats gaussian_stats(const torch::Tensor& features) {
  if (features.dim() != 2 || features.size(0) < 2) throw ShapeError("gaussian_stats expects features [M >= 2, K]");
  const auto x = features.to(torch::kFloat64);
  GaussianStats out;
  out.count = x.size(0);
  out.mean = x.mean(0);
  const auto centred = x - out.mean;
  out.cov = torch::matmul(centred.t(), centred) / static_cast<double>(out.count - 1);
  return out;
}

double frechet_distance(const torch::Tensor& mu1, const torch::Tensor& cov1, const torch::Tensor& mu2,
                        const torch::Tensor& cov2) {
  const int64_t k = mu1.numel();
  if (mu2.numel() != k || cov1.dim() != 2 || cov2.dim() != 2 || cov1.size(0) != k || cov1.size(1) != k ||
      cov2.size(0) != k || cov2.size(1) != k) {
    throw ShapeError("frechet_distance: mismatched dimensions");
  }
  const Eigen::VectorXd m1 = to_eigen(mu1.reshape({k}));
  const Eigen::VectorXd m2 = to_eigen(mu2.reshape({k}));
  const Eigen::MatrixXd s1 = to_eigen(cov1);
  const Eigen::MatrixXd s2 = to_eigen(cov2);

  const auto e1 = psd_eigen(s1, "first covariance");
  psd_eigen(s2, "second covariance");
  const Eigen::VectorXd root = e1.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  const Eigen::MatrixXd sqrt1 = e1.eigenvectors() * root.asDiagonal() * e1.eigenvectors().transpose();
  const Eigen::MatrixXd inner = sqrt1 * s2 * sqrt1;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> e2(0.5 * (inner + inner.transpose()), Eigen::EigenvaluesOnly);
  if (e2.info() != Eigen::Success) throw NumericError("eigendecomposition of the covariance product failed");
  const double tr_sqrt = e2.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();

  const double d = (m1 - m2).squaredNorm() + s1.trace() + s2.trace() - 2.0 * tr_sqrt;
  return std::max(d, 0.0);
}

double frechet_distance(const GaussianStats& a, const GaussianStats& b) {
  return frechet_distance(a.mean, a.cov, b.mean, b.cov);
}

// ---------------------------------------------------------------------------

json to_json(const FeatureExtractorConfig& c) {
  return {{"image_size", c.image_size}, {"width", c.width}, {"feature_dim", c.feature_dim}};
}

FeatureExtractorConfig feature_extractor_config_from_json(const json& j) {
  FeatureExtractorConfig c;
  c.image_size = j.value("image_size", c.image_size);
  c.width = j.value("width", c.width);
  c.feature_dim = j.value("feature_dim", c.feature_dim);
  return c;
}

namespace {

// Small frames are enlarged so the trunk keeps enough depth to separate shapes.
int64_t working_size(int64_t image_size) { return std::max<int64_t>(image_size, 32); }

}  // namespace

FeatureExtractorImpl::FeatureExtractorImpl(FeatureExtractorConfig config) : config_(config) {
  const int64_t s = config_.image_size;
  if (s < 8 || (s & (s - 1)) != 0 || config_.width <= 0 || config_.feature_dim <= 0) {
    throw ConfigError("feature extractor needs a power-of-two image_size >= 8 and positive widths");
  }
  const int64_t w = config_.width;
  const auto act = [] { return torch::nn::LeakyReLU(torch::nn::LeakyReLUOptions().negative_slope(0.2)); };
  torch::nn::Sequential body(conv(3, w, 3, 1, 1), act());
  int64_t in = w;
  for (int64_t r = working_size(s); r > kCellGrid; r /= 2) {
    const int64_t out = std::min<int64_t>(2 * in, 4 * w);
    body->push_back(conv(in, out, 4, 2, 1));
    body->push_back(act());
    in = out;
  }
  body_ = register_module("body", body);
  cells_ = register_module("cells", torch::nn::Sequential(conv(in, in, 1, 1, 0), act(), conv(in, kNumShapeLabels, 1, 1, 0)));
  features_ = register_module("features", torch::nn::Linear(in * kCellGrid * kCellGrid, config_.feature_dim));
  style_ = register_module("style", torch::nn::Linear(config_.feature_dim, kNumStyles));
  object_ = register_module("object", torch::nn::Linear(config_.feature_dim, kNumObjects));
  feature_mean_ = register_buffer("feature_mean", torch::zeros({config_.feature_dim}));
  feature_scale_ = register_buffer("feature_scale", torch::ones({config_.feature_dim}));
}

void FeatureExtractorImpl::set_standardization(const torch::Tensor& raw_features) {
  torch::NoGradGuard guard;
  const auto std = raw_features.std(0);
  feature_mean_.copy_(raw_features.mean(0));
  feature_scale_.copy_(std.clamp_min(1e-2 * std.mean().item<double>() + 1e-12));
}

FrameLogits FeatureExtractorImpl::forward(const torch::Tensor& frames) {
  if (frames.dim() != 4 || frames.size(1) != 3 || frames.size(2) != frames.size(3) ||
      frames.size(2) < config_.image_size || frames.size(2) % config_.image_size != 0) {
    throw ShapeError("feature extractor expects frames [M, 3, S, S] with S a multiple of " +
                     std::to_string(config_.image_size));
  }
  auto x = frames.size(2) == config_.image_size ? frames : resize_frames(frames, config_.image_size);
  const int64_t work = working_size(config_.image_size);
  if (work != config_.image_size) x = torch::upsample_nearest2d(x, {work, work});
  const auto grid = body_->forward(x);  // one feature column per layout cell
  FrameLogits out;
  out.raw_features = lrelu(features_->forward(grid.flatten(1)));
  out.features = (out.raw_features - feature_mean_) / feature_scale_;
  out.style = style_->forward(out.raw_features);
  out.object = object_->forward(out.raw_features);
  out.shapes = std::get<0>(cells_->forward(grid).flatten(2).max(2));
  return out;
}

FrameLabels frame_labels(const std::vector<data::StorySpec>& specs) {
  std::vector<int64_t> style, object;
  std::vector<float> shapes;
  for (const auto& spec : specs) {
    for (const auto& frame : spec.frames) {
      style.push_back(static_cast<int64_t>(spec.style));
      object.push_back(static_cast<int64_t>(spec.object));
      std::vector<float> present(kNumShapeLabels, 0.0f);
      for (const auto& s : frame.shapes) present[static_cast<std::size_t>(static_cast<int>(s.shape) * 8 + static_cast<int>(s.color))] = 1.0f;
      shapes.insert(shapes.end(), present.begin(), present.end());
    }
  }
  FrameLabels out;
  out.style = torch::tensor(style, torch::kLong);
  out.object = torch::tensor(object, torch::kLong);
  out.shapes = torch::tensor(shapes).view({-1, kNumShapeLabels});
  return out;
}

double GateReport::gate_accuracy() const { return std::min({style_accuracy, object_accuracy, shape_set_accuracy}); }

json to_json(const GateReport& r) {
  return {{"style_accuracy", r.style_accuracy},
          {"object_accuracy", r.object_accuracy},
          {"shape_set_accuracy", r.shape_set_accuracy},
          {"gate_accuracy", r.gate_accuracy()}};
}

json to_json(const ExtractorTrainConfig& c) {
  return {{"epochs", c.epochs},           {"batch_size", c.batch_size}, {"learning_rate", c.learning_rate},
          {"seed", c.seed},               {"train_limit", c.train_limit}, {"extractor", to_json(c.extractor)}};
}

ExtractorTrainConfig extractor_train_config_from_json(const json& j) {
  ExtractorTrainConfig c;
  try {
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.seed = j.value("seed", c.seed);
    c.train_limit = j.value("train_limit", c.train_limit);
    if (j.contains("extractor")) c.extractor = feature_extractor_config_from_json(j.at("extractor"));
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed extractor config: ") + e.what());
  }
  if (c.epochs <= 0 || c.batch_size <= 0 || c.learning_rate <= 0.0) throw ConfigError("extractor training sizes must be positive");
  return c;
}

GateReport evaluate_extractor(FeatureExtractor& model, const torch::Tensor& frames, const FrameLabels& labels) {
  torch::NoGradGuard guard;
  model->eval();
  const int64_t m = frames.size(0);
  int64_t style = 0, object = 0, sets = 0;
  for (int64_t begin = 0; begin < m; begin += kEvalBatch) {
    const int64_t end = std::min(m, begin + kEvalBatch);
    const auto out = model->forward(frames.slice(0, begin, end));
    style += out.style.argmax(1).eq(labels.style.slice(0, begin, end)).sum().item<int64_t>();
    object += out.object.argmax(1).eq(labels.object.slice(0, begin, end)).sum().item<int64_t>();
    const auto predicted = out.shapes.gt(0.0);
    sets += predicted.eq(labels.shapes.slice(0, begin, end).gt(0.5)).all(1).sum().item<int64_t>();
  }
  GateReport r;
  const double denom = static_cast<double>(std::max<int64_t>(m, 1));
  r.style_accuracy = static_cast<double>(style) / denom;
  r.object_accuracy = static_cast<double>(object) / denom;
  r.shape_set_accuracy = static_cast<double>(sets) / denom;
  return r;
}

TrainedExtractor train_feature_extractor(const std::filesystem::path& dataset_dir, const ExtractorTrainConfig& config,
                                         const ProgressFn& progress) {
  torch::manual_seed(config.seed);
  const int size = static_cast<int>(config.extractor.image_size);
  const auto train = load_story_tensors(dataset_dir, data::Split::kTrain, size,
                                        config.train_limit > 0 ? std::optional<int>(config.train_limit) : std::nullopt);
  const auto val = load_story_tensors(dataset_dir, data::Split::kVal, size);
  const auto frames = train.images.flatten(0, 1);
  const auto labels = frame_labels(train.specs);

  TrainedExtractor out;
  out.model = FeatureExtractor(config.extractor);
  torch::optim::Adam opt(out.model->parameters(), torch::optim::AdamOptions(config.learning_rate));
  const int64_t m = frames.size(0);
  std::mt19937_64 rng(config.seed);
  std::vector<int64_t> order(static_cast<std::size_t>(m));
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    out.model->train();
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    int batches = 0;
    for (int64_t begin = 0; begin + config.batch_size <= m; begin += config.batch_size) {
      const auto idx = torch::tensor(std::vector<int64_t>(order.begin() + begin, order.begin() + begin + config.batch_size),
                                     torch::kLong);
      const auto logits = out.model->forward(frames.index_select(0, idx));
      auto loss = F::cross_entropy(logits.style, labels.style.index_select(0, idx)) +
                  F::cross_entropy(logits.object, labels.object.index_select(0, idx)) +
                  F::binary_cross_entropy_with_logits(logits.shapes, labels.shapes.index_select(0, idx));
      const double value = loss.item<double>();
      if (!std::isfinite(value)) throw NumericError("feature extractor loss became non-finite at epoch " + std::to_string(epoch));
      opt.zero_grad();
      loss.backward();
      opt.step();
      total += value;
      ++batches;
    }
    if (progress) {
      progress("extractor epoch " + std::to_string(epoch + 1) + "/" + std::to_string(config.epochs) + " loss " +
               std::to_string(batches > 0 ? total / batches : 0.0));
    }
  }
  {
    torch::NoGradGuard guard;
    out.model->eval();
    std::vector<torch::Tensor> raw;
    for (int64_t begin = 0; begin < m; begin += kEvalBatch) {
      raw.push_back(out.model->forward(frames.slice(0, begin, std::min(m, begin + kEvalBatch))).raw_features);
    }
    out.model->set_standardization(torch::cat(raw, 0));
  }
  out.gate = evaluate_extractor(out.model, val.images.flatten(0, 1), frame_labels(val.specs));
  return out;
}

void save_extractor(const std::filesystem::path& dir, const TrainedExtractor& extractor) {
  const json meta = {{"kind", "feature_extractor"},
                     {"extractor", to_json(extractor.model->config())},
                     {"gate", to_json(extractor.gate)}};
  save_tensor_archive(dir, meta, module_state(*extractor.model, ""));
}

TrainedExtractor load_extractor(const std::filesystem::path& dir) {
  const auto archive = load_tensor_archive(dir);
  if (archive.meta.value("kind", "") != "feature_extractor") {
    throw ConfigError(dir.string() + " is not a feature extractor checkpoint (run `storyviz pretrain-encoder`)");
  }
  TrainedExtractor out;
  out.model = FeatureExtractor(feature_extractor_config_from_json(archive.meta.at("extractor")));
  assign_module_state(*out.model, archive, "");
  out.model->eval();
  const auto& g = archive.meta.at("gate");
  out.gate.style_accuracy = g.value("style_accuracy", 0.0);
  out.gate.object_accuracy = g.value("object_accuracy", 0.0);
  out.gate.shape_set_accuracy = g.value("shape_set_accuracy", 0.0);
  return out;
}

// ---------------------------------------------------------------------------

torch::Tensor frame_features(FeatureExtractor& model, const torch::Tensor& frames) {
  torch::NoGradGuard guard;
  model->eval();
  std::vector<torch::Tensor> parts;
  for (int64_t begin = 0; begin < frames.size(0); begin += kEvalBatch) {
    parts.push_back(model->forward(frames.slice(0, begin, std::min(frames.size(0), begin + kEvalBatch))).features);
  }
  return torch::cat(parts, 0);
}

int64_t minimum_samples(int64_t feature_dim) { return std::max<int64_t>(64, feature_dim + 1); }

namespace {

void require_pool(int64_t count, int64_t dim, const char* side) {
  if (count < minimum_samples(dim)) {
    throw ShapeError(std::string(side) + " pool has " + std::to_string(count) + " samples; at least " +
                     std::to_string(minimum_samples(dim)) + " are required");
  }
}

double pool_distance(const torch::Tensor& real, const torch::Tensor& fake) {
  require_pool(real.size(0), real.size(1), "real");
  require_pool(fake.size(0), fake.size(1), "fake");
  return frechet_distance(gaussian_stats(real), gaussian_stats(fake));
}

}  // namespace

double compute_fid(const torch::Tensor& real_frames, const torch::Tensor& fake_frames, const TrainedExtractor& extractor) {
  require_gate(extractor);
  auto model = extractor.model;
  return pool_distance(frame_features(model, real_frames), frame_features(model, fake_frames));
}

double compute_fsd(const torch::Tensor& real_stories, const torch::Tensor& fake_stories,
                   const TrainedExtractor& extractor) {
  require_gate(extractor);
  if (real_stories.dim() != 5 || fake_stories.dim() != 5 || real_stories.size(1) != fake_stories.size(1)) {
    throw ShapeError("compute_fsd expects story pools [B, N, 3, S, S] with equal N");
  }
  auto model = extractor.model;
  const auto story_features = [&](const torch::Tensor& stories) {
    return frame_features(model, stories.flatten(0, 1)).view({stories.size(0), -1});
  };
  return pool_distance(story_features(real_stories), story_features(fake_stories));
}

torch::Tensor shuffle_frames_across_stories(const torch::Tensor& stories, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const int64_t b = stories.size(0);
  std::vector<torch::Tensor> frames;
  for (int64_t n = 0; n < stories.size(1); ++n) {
    std::vector<int64_t> perm(static_cast<std::size_t>(b));
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    frames.push_back(stories.select(1, n).index_select(0, torch::tensor(perm, torch::kLong)));
  }
  return torch::stack(frames, 1);
}

double cosine_x100(const torch::Tensor& a, const torch::Tensor& b) {
  return 100.0 * text::paired_cosine(a.to(torch::kFloat64), b.to(torch::kFloat64)).mean().item<double>();
}

double cosine_score(const torch::Tensor& frames, const torch::Tensor& tokens, const torch::Tensor& mask,
                    text::TextEncoder& text, text::ImageEncoder& image) {
  if (!text || !image) throw ConfigError("cosine score needs pretrained encoders (run `storyviz pretrain-encoder`)");
  torch::NoGradGuard guard;
  text->eval();
  image->eval();
  double total = 0.0;
  const int64_t m = frames.size(0);
  for (int64_t begin = 0; begin < m; begin += kEvalBatch) {
    const int64_t end = std::min(m, begin + kEvalBatch);
    const auto s = text->forward(tokens.slice(0, begin, end), mask.slice(0, begin, end)).s;
    total += cosine_x100(image->forward(frames.slice(0, begin, end)), s) * static_cast<double>(end - begin);
  }
  return m > 0 ? total / static_cast<double>(m) : 0.0;
}

double keyword_consistency(const torch::Tensor& stories, const std::vector<data::StorySpec>& specs,
                           const TrainedExtractor& extractor) {
  require_gate(extractor);
  if (stories.dim() != 5 || stories.size(0) != static_cast<int64_t>(specs.size())) {
    throw ShapeError("keyword_consistency expects one spec per story [B, N, 3, S, S]");
  }
  auto model = extractor.model;
  torch::NoGradGuard guard;
  model->eval();
  const int64_t b = stories.size(0), n = stories.size(1);
  std::vector<torch::Tensor> styles, objects;
  for (int64_t begin = 0; begin < b * n; begin += kEvalBatch) {
    const auto out = model->forward(stories.flatten(0, 1).slice(0, begin, std::min(b * n, begin + kEvalBatch)));
    styles.push_back(out.style.argmax(1));
    objects.push_back(out.object.argmax(1));
  }
  const auto style = torch::cat(styles).view({b, n});
  const auto object = torch::cat(objects).view({b, n});

  int64_t pairs = 0, consistent = 0;
  for (int64_t i = 0; i < b; ++i) {
    const auto& spec = specs[static_cast<std::size_t>(i)];
    int style_mentions = 0, object_mentions = 0;
    for (const auto& f : spec.frames) {
      style_mentions += f.mentions_style;
      object_mentions += f.mentions_object;
    }
    if (style_mentions < n) {
      ++pairs;
      consistent += style[i].eq(static_cast<int64_t>(spec.style)).all().item<bool>();
    }
    if (object_mentions < n) {
      ++pairs;
      consistent += object[i].eq(static_cast<int64_t>(spec.object)).all().item<bool>();
    }
  }
  return pairs > 0 ? static_cast<double>(consistent) / static_cast<double>(pairs) : 0.0;
}

json to_json(const MetricReport& r) {
  return {{"fid", r.fid},
          {"fsd", r.fsd},
          {"cosine_x100", r.cosine_x100},
          {"keyword_consistency", r.keyword_consistency},
          {"extractor_gate_accuracy", r.extractor_gate_accuracy},
          {"pool_sizes",
           {{"real_frames", r.real_frames},
            {"fake_frames", r.fake_frames},
            {"real_stories", r.real_stories},
            {"fake_stories", r.fake_stories}}},
          {"seed", r.seed}};
}

MetricReport metric_report_from_json(const json& j) {
  MetricReport r;
  r.fid = j.value("fid", 0.0);
  r.fsd = j.value("fsd", 0.0);
  r.cosine_x100 = j.value("cosine_x100", 0.0);
  r.keyword_consistency = j.value("keyword_consistency", 0.0);
  r.extractor_gate_accuracy = j.value("extractor_gate_accuracy", 0.0);
  if (j.contains("pool_sizes")) {
    const auto& p = j.at("pool_sizes");
    r.real_frames = p.value("real_frames", int64_t{0});
    r.fake_frames = p.value("fake_frames", int64_t{0});
    r.real_stories = p.value("real_stories", int64_t{0});
    r.fake_stories = p.value("fake_stories", int64_t{0});
  }
  r.seed = j.value("seed", std::uint64_t{0});
  return r;
}

}  // namespace storyviz::metrics

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "storyviz/data_synth.hpp"
#include "storyviz/text_encoder.hpp"

namespace storyviz::metrics {

// Gaussian fit of a feature pool, in float64.
struct GaussianStats {
  torch::Tensor mean;  // [K]
  torch::Tensor cov;   // [K, K], unbiased
  int64_t count = 0;
};

// features [M, K]; two-pass mean/covariance in float64.
GaussianStats gaussian_stats(const torch::Tensor& features);

// ||mu1 - mu2||^2 + Tr(S1 + S2 - 2 (S1 S2)^{1/2}). The trace of the square
// root is taken from the eigenvalues of the symmetric sqrt(S1) S2 sqrt(S1);
// small negative eigenvalues are clipped to zero. Throws ShapeError on a
// dimension mismatch and NumericError when an input is not PSD.
double frechet_distance(const GaussianStats& a, const GaussianStats& b);
double frechet_distance(const torch::Tensor& mu1, const torch::Tensor& cov1, const torch::Tensor& mu2,
                        const torch::Tensor& cov2);

// Labels the extractor is trained on.
inline constexpr int64_t kNumStyles = 4;
inline constexpr int64_t kNumObjects = 8;
inline constexpr int64_t kNumShapeLabels = 3 * 8;  // (shape, colour) presence
inline constexpr int64_t kCellGrid = 4;             // layout grid side

struct FeatureExtractorConfig {
  int64_t image_size = 32;
  int64_t width = 32;
  int64_t feature_dim = 64;
};

nlohmann::json to_json(const FeatureExtractorConfig& c);
FeatureExtractorConfig feature_extractor_config_from_json(const nlohmann::json& j);

struct FrameLogits {
  torch::Tensor features;      // [M, feature_dim], standardised with training-set statistics
  torch::Tensor raw_features;  // before standardisation; the heads read these
  torch::Tensor style;     // [M, 4]
  torch::Tensor object;    // [M, 8]
  torch::Tensor shapes;    // [M, 24] presence logits
};

// Small CNN classifier over frames; its penultimate layer is the feature
// space for FID and FSD. The trunk reduces a frame to one column per layout
// cell; shape presence is a per-cell classifier max-pooled over cells. Frames
// larger than image_size are area-averaged down first. Metric features are
// standardised per dimension with statistics of the training frames, so the
// Frechet distances have a fixed scale.
class FeatureExtractorImpl : public torch::nn::Module {
 public:
  explicit FeatureExtractorImpl(FeatureExtractorConfig config);
  FrameLogits forward(const torch::Tensor& frames);  // [M, 3, S, S]
  const FeatureExtractorConfig& config() const { return config_; }
  // Fits the per-dimension mean and scale from raw features [M, feature_dim].
  void set_standardization(const torch::Tensor& raw_features);

 private:
  FeatureExtractorConfig config_;
  torch::nn::Sequential body_{nullptr};
  torch::nn::Sequential cells_{nullptr};
  torch::nn::Linear features_{nullptr};
  torch::nn::Linear style_{nullptr};
  torch::nn::Linear object_{nullptr};
  torch::Tensor feature_mean_;
  torch::Tensor feature_scale_;
};
TORCH_MODULE(FeatureExtractor);

struct FrameLabels {
  torch::Tensor style;   // [M] int64
  torch::Tensor object;  // [M] int64
  torch::Tensor shapes;  // [M, 24] float 0/1
};

// Labels for every frame of `specs`, story-major.
FrameLabels frame_labels(const std::vector<data::StorySpec>& specs);

struct GateReport {
  double style_accuracy = 0.0;
  double object_accuracy = 0.0;
  double shape_set_accuracy = 0.0;  // exact match of the predicted presence set
  // The weakest of the three; metrics refuse to run below kGateThreshold.
  double gate_accuracy() const;
};

inline constexpr double kGateThreshold = 0.95;

nlohmann::json to_json(const GateReport& r);

struct ExtractorTrainConfig {
  int epochs = 10;
  int batch_size = 64;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
  int train_limit = -1;  // stories
  FeatureExtractorConfig extractor;
};

nlohmann::json to_json(const ExtractorTrainConfig& c);
ExtractorTrainConfig extractor_train_config_from_json(const nlohmann::json& j);

struct TrainedExtractor {
  FeatureExtractor model{nullptr};
  GateReport gate;
};

using ProgressFn = std::function<void(const std::string&)>;

TrainedExtractor train_feature_extractor(const std::filesystem::path& dataset_dir, const ExtractorTrainConfig& config,
                                         const ProgressFn& progress = nullptr);
GateReport evaluate_extractor(FeatureExtractor& model, const torch::Tensor& frames, const FrameLabels& labels);

void save_extractor(const std::filesystem::path& dir, const TrainedExtractor& extractor);
TrainedExtractor load_extractor(const std::filesystem::path& dir);

// Penultimate features of frames [M, 3, S, S], evaluated in batches.
torch::Tensor frame_features(FeatureExtractor& model, const torch::Tensor& frames);

// Smallest pool accepted for a feature dimension.
int64_t minimum_samples(int64_t feature_dim);

// FID over per-frame features of [M, 3, S, S] pools.
double compute_fid(const torch::Tensor& real_frames, const torch::Tensor& fake_frames, const TrainedExtractor& extractor);
// FSD over concatenated per-frame features of [B, N, 3, S, S] story pools.
double compute_fsd(const torch::Tensor& real_stories, const torch::Tensor& fake_stories,
                   const TrainedExtractor& extractor);

// Frame n of every story replaced by frame n of a random other story; the
// permutation is drawn independently per frame position.
torch::Tensor shuffle_frames_across_stories(const torch::Tensor& stories, std::uint64_t seed);

// 100 * mean row-wise cosine similarity.
double cosine_x100(const torch::Tensor& a, const torch::Tensor& b);

// 100 * mean cosine between image features of frames [M, 3, S, S] and
// sentence features of their captions (tokens, mask [M, L]).
double cosine_score(const torch::Tensor& frames, const torch::Tensor& tokens, const torch::Tensor& mask,
                    text::TextEncoder& text, text::ImageEncoder& image);

// Over every (story, keyword) pair whose keyword is mentioned in fewer than
// all captions, the fraction where the extractor detects the keyword's
// attribute in every frame. Keywords are the style and the recurring object.
// Throws ConfigError when the extractor is below the gate.
double keyword_consistency(const torch::Tensor& stories, const std::vector<data::StorySpec>& specs,
                           const TrainedExtractor& extractor);

struct MetricReport {
  double fid = 0.0;
  double fsd = 0.0;
  double cosine_x100 = 0.0;
  double keyword_consistency = 0.0;
  double extractor_gate_accuracy = 0.0;
  int64_t real_frames = 0;
  int64_t fake_frames = 0;
  int64_t real_stories = 0;
  int64_t fake_stories = 0;
  std::uint64_t seed = 0;
};

nlohmann::json to_json(const MetricReport& r);
MetricReport metric_report_from_json(const nlohmann::json& j);

}  // namespace storyviz::metrics

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "scenegen/datasets.hpp"
#include "scenegen/image_io.hpp"
#include "scenegen/nn.hpp"

namespace scenegen {

// Gaussian fit of a feature set: mean and unbiased covariance.
struct FeatureStats {
  Eigen::VectorXd mean;
  Eigen::MatrixXd covariance;
  long sample_count = 0;

  int dim() const { return static_cast<int>(mean.size()); }
};

// Collects feature rows in arrival order. Partial accumulators merge by
// concatenation, so the final statistics do not depend on how the rows were
// split between workers.
class FeatureAccumulator {
 public:
  explicit FeatureAccumulator(int dim = 0) : dim_(dim) {}

  void add(const Eigen::VectorXd& row);
  void merge(const FeatureAccumulator& other);
  long count() const { return static_cast<long>(rows_.size()); }
  // Two-pass mean and covariance; needs at least two rows.
  FeatureStats finalize() const;

 private:
  int dim_;
  std::vector<Eigen::VectorXd> rows_;
};

// Rows of `features` are samples.
FeatureStats feature_stats(const Eigen::MatrixXd& features);

// ||mu_a - mu_b||^2 + tr(S_a + S_b - 2 (S_a^1/2 S_b S_a^1/2)^1/2)
// Eigenvalues down to -1e-6 (relative to the largest magnitude) are treated
// as zero; anything more negative raises NumericalError.
double frechet_distance(const FeatureStats& a, const FeatureStats& b);

// Symmetric positive semi-definite square root by eigendecomposition.
Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m, const char* what = "matrix");

// Population standard deviation of every channel value of every image, in
// 8-bit units.
double d_pix(const std::vector<Image>& images);

struct ExtractorConfig {
  int image_size = 64;
  int width = 16;        // channels of the first stage; doubles twice
  int feature_dim = 64;  // penultimate layer width
  int num_targets = 0;   // regression outputs, set from the palette

  void validate() const;
};

// Per-scene regression targets for the extractor: the count of each vehicle
// class followed by the pixel fraction of every palette class.
std::vector<double> extractor_targets(const SceneAnnotation& ann,
                                      const std::vector<PaletteEntry>& palette);

// Small convolutional regressor. Its penultimate activations are the
// features used for the Frechet distance.
class FeatureExtractor {
 public:
  FeatureExtractor() = default;
  FeatureExtractor(const ExtractorConfig& cfg, std::uint64_t seed);

  const ExtractorConfig& config() const { return cfg_; }
  bool ready() const { return !convs_.empty(); }

  // (n, 3, s, s) in [-1, 1] -> (n, feature_dim)
  Tensor features(const Tensor& images);
  // Features followed by the regression head; caches for backward.
  Tensor forward(const Tensor& images);
  void backward(const Tensor& g_out);

  nn::ParamRefs parameters();
  void save(const std::filesystem::path& path);
  static FeatureExtractor load(const std::filesystem::path& path);

 private:
  ExtractorConfig cfg_;
  std::vector<nn::Conv2d> convs_;
  std::vector<nn::GroupNorm> norms_;
  std::vector<nn::SiLU> acts_;
  nn::Linear fc_;
  nn::SiLU fc_act_;
  nn::Linear head_;
  Shape pooled_from_;
};

struct ExtractorTrainConfig {
  int steps = 1500;
  int batch_size = 16;
  double lr = 2e-3;
  std::uint64_t seed = 0;
};

struct ExtractorTrainResult {
  double first_loss = 0.0;  // mean over the first 10% of steps
  double final_loss = 0.0;  // mean over the last 10% of steps
};

ExtractorTrainResult train_feature_extractor(FeatureExtractor& extractor,
                                             const std::vector<SceneRecord>& data,
                                             const std::vector<PaletteEntry>& palette,
                                             const ExtractorTrainConfig& cfg);

FeatureStats compute_feature_stats(const std::vector<Image>& images,
                                   FeatureExtractor& extractor);

struct EvaluationReport {
  double fid = 0.0;
  double d_pix_real = 0.0;
  double d_pix_gen = 0.0;
  long real_count = 0;
  long gen_count = 0;
  int feature_dim = 0;

  nlohmann::json to_json() const;
  static EvaluationReport from_json(const nlohmann::json& j);
  std::string table() const;
};

// PNG files of a directory in name order. A dataset root (with
// manifest.jsonl) contributes its images/ folder.
std::vector<Image> load_image_dir(const std::filesystem::path& dir);

EvaluationReport evaluate_images(const std::vector<Image>& real,
                                 const std::vector<Image>& gen,
                                 FeatureExtractor& extractor);
EvaluationReport evaluate_run(const std::filesystem::path& real_dir,
                              const std::filesystem::path& gen_dir,
                              FeatureExtractor& extractor);

// Mean RGB of the pixels of each class over a set of scenes (8-bit units).
// Classes absent from every scene fall back to their palette color.
std::vector<std::array<double, 3>> class_color_centroids(
    const std::vector<SceneRecord>& records, const std::vector<PaletteEntry>& palette);

struct AdherenceResult {
  long boxes = 0;
  long matched = 0;
  double rate() const { return boxes > 0 ? static_cast<double>(matched) / boxes : 0.0; }
};

// For every conditioning box, assigns each pixel inside it to the nearest
// class centroid and counts the box as matched when the majority class is the
// box's class. Annotations must share the image size.
AdherenceResult conditional_adherence(const std::vector<Image>& images,
                                      const std::vector<SceneAnnotation>& scenes,
                                      const std::vector<std::array<double, 3>>& centroids);

}  // namespace scenegen

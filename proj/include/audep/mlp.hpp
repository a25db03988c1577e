#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>

#include <Eigen/Dense>

#include "audep/au_ingest.hpp"
#include "json.hpp"

namespace audep {

struct TrainConfig {
  int hidden1 = 32;
  int hidden2 = 16;
  double dropout = 0.5;
  double learning_rate = 0.01;
  int epochs = 300;
  int batch_size = 16;
  std::uint64_t seed = 0;
  /// Weight each example by n / (2 * n_class) so both classes carry equal total loss.
  bool class_balanced = true;

  void validate() const;
};

/// weights is (outputs x inputs).
struct DenseLayer {
  Eigen::MatrixXd weights;
  Eigen::VectorXd bias;
};

/// input -> ReLU(hidden1) -> ReLU(hidden2) -> logistic(1). Dropout, when
/// training, is applied to both hidden activations.
struct MlpModel {
  std::array<DenseLayer, 3> layers;

  Eigen::Index input_width() const { return layers[0].weights.cols(); }
  void validate() const;
};

using MlpGradients = std::array<DenseLayer, 3>;

/// He-initialised weights, zero biases.
MlpModel make_mlp(const TrainConfig& config, Eigen::Index input_width = kNumAus);

/// Output logit with dropout disabled.
double mlp_logit(const MlpModel& model, const Eigen::VectorXd& x);

/// Weighted mean binary cross-entropy over the rows of `x` (dropout disabled);
/// fills `grad` with its exact gradient when non-null.
double loss_and_gradient(const MlpModel& model, const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                         const Eigen::VectorXd& weights, MlpGradients* grad);

/// One SGD update on a mini-batch. With dropout_rate == 0 no mask is drawn and
/// `rng` is left untouched, so the update equals a plain loss_and_gradient step.
double sgd_step(MlpModel& model, const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const Eigen::VectorXd& weights,
                double learning_rate, double dropout_rate, std::mt19937_64& rng);

/// Rows of `x` are examples.
MlpModel train_mlp(const Eigen::MatrixXd& x, std::span<const Label> labels, const TrainConfig& config);

struct SegmentPrediction {
  double prob = 0.5;
  Label vote = Label::NonDepressed;
};

/// prob in (0, 1); vote is Depressed iff prob > 0.5.
SegmentPrediction predict_segment(const MlpModel& model, const Eigen::VectorXd& descriptor);

/// Column-wise z-normalisation fitted on training descriptors.
struct FeatureScaler {
  Eigen::VectorXd mean;
  Eigen::VectorXd stddev;

  static FeatureScaler fit(const Eigen::MatrixXd& x);
  Eigen::MatrixXd apply(const Eigen::MatrixXd& x) const;
  Eigen::VectorXd apply(const Eigen::VectorXd& x) const;
};

/// A trained network plus the descriptor normalisation it was trained under.
struct SegmentClassifier {
  FeatureScaler scaler;
  MlpModel model;
  TrainConfig config;

  SegmentPrediction predict(const Eigen::VectorXd& raw_descriptor) const;
};

/// Fits the scaler on `x`, then trains on the scaled rows.
SegmentClassifier train_segment_classifier(const Eigen::MatrixXd& x, std::span<const Label> labels,
                                           const TrainConfig& config);

inline constexpr int kMlpFormatVersion = 1;

nlohmann::ordered_json to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const nlohmann::json& j);
nlohmann::ordered_json to_json(const SegmentClassifier& classifier);
SegmentClassifier classifier_from_json(const nlohmann::json& j);
void save_classifier(const std::filesystem::path& path, const SegmentClassifier& classifier);
SegmentClassifier load_classifier(const std::filesystem::path& path);

}  // namespace audep

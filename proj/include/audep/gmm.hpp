#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include <Eigen/Dense>

#include "audep/au_ingest.hpp"
#include "json.hpp"

namespace audep {

struct EmConfig {
  int n_components = 32;
  int max_iters = 100;
  /// Stop once (ll_new - ll_old) < tol * |ll_old|.
  double tol = 3e-4;
  double variance_floor = 1e-4;
  std::uint64_t seed = 0;
  int n_init = 3;

  void validate() const;
};

/// Diagonal-covariance Gaussian mixture. Rows of `means`/`variances` are components.
struct GmmModel {
  Eigen::VectorXd weights;
  Eigen::MatrixXd means;
  Eigen::MatrixXd variances;

  Eigen::Index n_components() const { return weights.size(); }
  Eigen::Index dim() const { return means.cols(); }
  void validate() const;
};

/// Mixture density at a single point.
double density(const GmmModel& model, const Eigen::VectorXd& x);

/// Log mixture density at a single point, via log-sum-exp over components.
double log_density(const GmmModel& model, const Eigen::VectorXd& x);

/// Sum over rows of the log mixture density.
double log_likelihood(const GmmModel& model, const Eigen::MatrixXd& frames);

/// Per-run diagnostics from fit_em. `log_likelihood` holds the training
/// log-likelihood of the initial parameters followed by one entry per EM iteration.
struct EmRun {
  std::vector<double> log_likelihood;
  bool converged = false;
};

struct EmTrace {
  std::vector<EmRun> runs;
  std::size_t best_run = 0;
};

GmmModel fit_em(const Eigen::MatrixXd& frames, const EmConfig& config, EmTrace* trace = nullptr);

struct PairScore {
  double ll_dep = 0.0;
  double ll_ndep = 0.0;

  /// Depressed iff ll_dep > ll_ndep; ties go to NonDepressed.
  Label decision() const { return ll_dep > ll_ndep ? Label::Depressed : Label::NonDepressed; }
};

PairScore score_pair(const GmmModel& dep, const GmmModel& ndep, const AuClip& clip);
PairScore score_pair(const GmmModel& dep, const GmmModel& ndep, const Eigen::MatrixXd& frames);

inline constexpr int kGmmFormatVersion = 1;

nlohmann::ordered_json to_json(const EmConfig& config);
EmConfig em_config_from_json(const nlohmann::json& j);

nlohmann::ordered_json to_json(const GmmModel& model, const EmConfig& config);
GmmModel gmm_from_json(const nlohmann::json& j, EmConfig* config = nullptr);

void save_gmm(const std::filesystem::path& path, const GmmModel& model, const EmConfig& config);
GmmModel load_gmm(const std::filesystem::path& path, EmConfig* config = nullptr);

}  // namespace audep

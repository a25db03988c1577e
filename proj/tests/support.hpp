#pragma once

#include <array>
#include <cstdint>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "audep/au_ingest.hpp"
#include "audep/eval.hpp"

namespace audep::testing {

inline Eigen::MatrixXd gaussian_matrix(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols, double mean = 0.0,
                                       double sd = 1.0) {
  std::normal_distribution<double> dist(mean, sd);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = dist(rng);
  return m;
}

inline Eigen::MatrixXd uniform_matrix(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols, double lo,
                                      double hi) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = dist(rng);
  return m;
}

inline AuClip make_clip(std::string id, Eigen::MatrixXd frames, std::optional<Label> label = std::nullopt) {
  AuClip clip;
  clip.participant_id = std::move(id);
  clip.frames = std::move(frames);
  clip.label = label;
  return clip;
}

/// Random model with weights from a Dirichlet(1) draw and variances in [lo, hi].
inline GmmModel random_gmm(std::mt19937_64& rng, Eigen::Index k, Eigen::Index dim, double var_lo = 0.2,
                           double var_hi = 2.0) {
  GmmModel m;
  std::exponential_distribution<double> expo(1.0);
  m.weights.resize(k);
  for (Eigen::Index i = 0; i < k; ++i) m.weights(i) = expo(rng) + 1e-3;
  m.weights /= m.weights.sum();
  m.means = uniform_matrix(rng, k, dim, -3.0, 3.0);
  m.variances = uniform_matrix(rng, k, dim, var_lo, var_hi);
  return m;
}

// Independent scalar evaluation of sum_k w_k prod_d N(x_d; mu_kd, v_kd).
inline long double brute_density(const GmmModel& m, const Eigen::VectorXd& x) {
  long double total = 0.0L;
  for (Eigen::Index k = 0; k < m.n_components(); ++k) {
    long double p = m.weights(k);
    for (Eigen::Index d = 0; d < m.dim(); ++d) {
      const long double v = m.variances(k, d);
      const long double z = x(d) - m.means(k, d);
      p *= std::exp(-z * z / (2.0L * v)) / std::sqrt(2.0L * std::numbers::pi_v<long double> * v);
    }
    total += p;
  }
  return total;
}

/// Noiseless segment whose frames move monotonically in time along a random
/// direction, with a random offset per AU.
inline Segment monotone_segment(std::mt19937_64& rng, Eigen::Index length, Eigen::Index dim = kNumAus) {
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  Eigen::VectorXd direction(dim);
  for (auto& v : direction) v = unit(rng);
  direction.normalize();
  Eigen::RowVectorXd offset(dim);
  for (auto& v : offset) v = 2.5 + unit(rng);
  Segment s;
  s.source_id = "ramp";
  s.frames.resize(length, dim);
  for (Eigen::Index a = 0; a < length; ++a) s.frames.row(a) = offset + (0.05 * static_cast<double>(a)) * direction.transpose();
  return s;
}

inline Segment reversed(const Segment& s) {
  Segment r = s;
  r.frames = s.frames.colwise().reverse();
  return r;
}

/// Per-participant decisions from the reference 30-clip leave-one-out study:
/// label, clip-level GMM, short-term rank pooling, combined.
struct ReferenceRow {
  int id;
  Label label;
  Label gmm;
  Label rank_pooling;
  Label combined;
};

inline constexpr Label D = Label::Depressed;
inline constexpr Label N = Label::NonDepressed;

inline constexpr std::array<ReferenceRow, 30> kReferenceDecisions{{
    {1, D, D, D, D},  {2, D, N, D, D},  {3, N, N, N, N},  {4, D, D, D, D},  {5, N, N, N, N},
    {6, N, N, N, N},  {7, N, N, D, N},  {8, N, D, D, D},  {9, N, N, N, N},  {10, D, N, D, D},
    {11, N, D, D, D}, {12, N, N, N, N}, {13, D, D, N, N}, {14, D, N, N, N}, {15, D, D, D, D},
    {16, N, N, N, N}, {17, D, D, N, D}, {18, N, N, N, N}, {19, N, N, D, D}, {20, D, D, D, D},
    {21, D, D, D, D}, {22, N, D, N, N}, {23, D, D, N, D}, {24, D, N, D, N}, {25, N, N, N, N},
    {26, D, D, D, D}, {27, D, D, D, D}, {28, N, D, D, D}, {29, N, N, N, N}, {30, D, D, D, D},
}};

inline std::vector<ReportRow> reference_rows() {
  std::vector<ReportRow> rows;
  for (const auto& r : kReferenceDecisions) {
    rows.push_back({std::to_string(r.id), r.label, r.gmm, r.rank_pooling, r.combined});
  }
  return rows;
}

/// Small, fast pipeline settings for end-to-end tests.
inline PipelineConfig small_pipeline() {
  PipelineConfig c;
  c.window = 30;
  c.stride = 30;
  c.em.n_components = 4;
  c.em.n_init = 1;
  c.mlp.epochs = 40;
  c.jobs = 1;
  return c;
}

inline SynthConfig small_synth(std::uint64_t seed = 7, int n = 8) {
  SynthConfig s;
  s.n_participants = n;
  s.frames_per_clip = 90;
  s.trend_period = 30;
  s.seed = seed;
  return s;
}

/// Fresh empty directory under the system temp path.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("audep_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace audep::testing

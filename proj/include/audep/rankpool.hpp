#pragma once

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "audep/au_ingest.hpp"
#include "json.hpp"

namespace audep {

/// Rank pooling learns, per segment, the linear kernel d minimising
///
///   0.5 * |d|^2 + reg_c * sum_{a > b} max(0, margin - <d, v_a - v_b>)
///
/// where v_a is frame a (optionally replaced by the running mean of frames
/// 0..a). The solver is full-batch subgradient descent with step
/// step_size / (epoch + 1); a step that would raise the objective is halved
/// until it does not, so the objective never increases between epochs.
/// Iteration stops after max_epochs, or once an epoch lowers the objective by
/// less than tol * objective.
struct RankPoolConfig {
  double margin = 1.0;
  double reg_c = 1.0;
  int max_epochs = 200;
  double step_size = 1.0;
  double tol = 1e-6;
  bool smooth = true;

  void validate() const;
};

struct DynamicDescriptor {
  Eigen::VectorXd d;
  std::string source_id;
  Eigen::Index start_index = 0;
};

/// Running mean over rows: out.row(a) = mean(frames.row(0..a)).
Eigen::MatrixXd running_mean(const Eigen::MatrixXd& frames);

/// Value of the rank-pooling objective for kernel `d` over (already smoothed) frames.
double rank_objective(const Eigen::VectorXd& d, const Eigen::MatrixXd& smoothed, double margin, double reg_c);

/// `objective_trace`, if given, receives the objective after every epoch
/// (first entry is the objective at d = 0).
DynamicDescriptor rank_pool(const Segment& segment, const RankPoolConfig& config,
                            std::vector<double>* objective_trace = nullptr);

/// Fraction of ordered frame pairs (a > b) for which <d, v_a> > <d, v_b>.
double order_agreement(const Eigen::VectorXd& d, const Segment& segment, bool smooth = true);

std::vector<DynamicDescriptor> pool_clip(const AuClip& clip, Eigen::Index window, Eigen::Index stride,
                                         const RankPoolConfig& config);

/// Tab-separated: source_id, start_index, d_0 .. d_16, with a header row.
void write_descriptors(std::ostream& out, std::span<const DynamicDescriptor> descriptors);
std::vector<DynamicDescriptor> read_descriptors(std::istream& in);

nlohmann::ordered_json to_json(const RankPoolConfig& config);
RankPoolConfig rankpool_config_from_json(const nlohmann::json& j);

}  // namespace audep

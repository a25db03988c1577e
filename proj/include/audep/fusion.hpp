#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "audep/au_ingest.hpp"
#include "json.hpp"

namespace audep {

struct FusionConfig {
  double omega = 1.0;
  /// Decision threshold on the fused score; defaults to omega * N / 2.
  std::optional<double> threshold;
  /// Divide the log-likelihood gap by the clip's frame count before fusing.
  bool normalize_by_frames = true;

  void validate() const;
};

struct FusionResult {
  double score = 0.0;
  Label decision = Label::NonDepressed;
  double ll_dep = 0.0;
  double ll_ndep = 0.0;
  std::size_t n_segments = 0;
  std::size_t n_dep_votes = 0;
  double threshold = 0.0;
};

/// score = (ll_dep - ll_ndep) / scale + omega * (#Depressed votes), with
/// scale = n_frames when normalize_by_frames is set and 1 otherwise.
/// Depressed iff score > threshold.
FusionResult fuse(double ll_dep, double ll_ndep, std::span<const Label> votes, const FusionConfig& config,
                  std::size_t n_frames = 1);

/// Majority of segment votes; ties go to NonDepressed.
Label majority_vote(std::span<const Label> votes);

/// Cached subsystem outputs for one held-out clip.
struct FoldRecord {
  std::string participant_id;
  Label label = Label::NonDepressed;
  double ll_dep = 0.0;
  double ll_ndep = 0.0;
  std::size_t n_frames = 0;
  std::vector<Label> votes;
  std::vector<double> probs;
};

FusionResult fuse(const FoldRecord& record, const FusionConfig& config);

struct SweepRow {
  double omega = 0.0;
  double accuracy = 0.0;
  std::size_t correct = 0;
  std::size_t total = 0;
};

/// Re-fuses cached fold outputs for each omega; nothing is retrained.
std::vector<SweepRow> sweep_omega(std::span<const FoldRecord> folds, std::span<const double> omegas,
                                  const FusionConfig& base = {});

nlohmann::ordered_json to_json(const FusionConfig& config);
FusionConfig fusion_config_from_json(const nlohmann::json& j);

}  // namespace audep

#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "audep/au_ingest.hpp"
#include "audep/fusion.hpp"
#include "audep/gmm.hpp"
#include "audep/mlp.hpp"
#include "audep/rankpool.hpp"
#include "json.hpp"

namespace audep {

/// Everything needed to reproduce a run. Sub-config seeds are ignored by the
/// harness: each fold derives its own from `seed` and the held-out participant id.
struct PipelineConfig {
  Eigen::Index window = 150;
  Eigen::Index stride = 150;
  /// Standardise AU channels (statistics from training clips only) before GMM fitting/scoring.
  bool standardize = false;
  EmConfig em;
  RankPoolConfig rankpool;
  TrainConfig mlp;
  FusionConfig fusion;
  std::uint64_t seed = 7;
  /// Worker threads; <= 0 means one per processor. Not part of the reported config.
  int jobs = 0;

  void validate() const;
};

nlohmann::ordered_json to_json(const PipelineConfig& config);
PipelineConfig pipeline_config_from_json(const nlohmann::json& j);

/// Models trained on one training split.
struct FoldModels {
  GmmModel dep;
  GmmModel ndep;
  EmConfig em_dep;
  EmConfig em_ndep;
  SegmentClassifier classifier;
  std::optional<AuScaler> frame_scaler;
};

struct ModelHashes {
  std::string gmm_dep;
  std::string gmm_ndep;
  std::string mlp;

  bool operator==(const ModelHashes&) const = default;
};

/// Exact file contents the CLI writes for each model (hashes are taken over these).
std::string gmm_file_text(const GmmModel& model, const EmConfig& config);
std::string classifier_file_text(const SegmentClassifier& classifier);
ModelHashes hash_models(const FoldModels& models);

/// Rank-pools every clip once; descriptors depend only on their own segment.
std::vector<std::vector<DynamicDescriptor>> pool_corpus(const Corpus& corpus, const PipelineConfig& config);

/// The two class-conditional GMMs, plus the channel scaler when standardising.
struct GmmPair {
  GmmModel dep;
  GmmModel ndep;
  EmConfig em_dep;
  EmConfig em_ndep;
  std::optional<AuScaler> frame_scaler;
};

GmmPair fit_gmm_pair(std::span<const AuClip* const> training, const PipelineConfig& config, std::uint64_t seed);

/// Segments inherit the label of their clip. `descriptors[i]` belongs to `training[i]`.
SegmentClassifier fit_segment_classifier(std::span<const AuClip* const> training,
                                         std::span<const std::vector<DynamicDescriptor>* const> descriptors,
                                         const PipelineConfig& config, std::uint64_t seed);

/// Trains both GMMs and the segment classifier on labelled training clips only.
/// `descriptors[i]` belongs to `training[i]`.
FoldModels train_models(std::span<const AuClip* const> training,
                        std::span<const std::vector<DynamicDescriptor>* const> descriptors,
                        const PipelineConfig& config, std::uint64_t fold_seed);

/// Runs all three subsystems on one clip.
FoldRecord score_clip(const GmmPair& gmms, const SegmentClassifier& classifier, const AuClip& clip,
                      std::span<const DynamicDescriptor> descriptors);
FoldRecord score_clip(const FoldModels& models, const AuClip& clip, std::span<const DynamicDescriptor> descriptors);

enum class System { Gmm, RankPooling, Combined };

std::string_view system_name(System system);

struct ReportRow {
  std::string participant_id;
  Label label = Label::NonDepressed;
  Label gmm = Label::NonDepressed;
  Label rank_pooling = Label::NonDepressed;
  Label combined = Label::NonDepressed;

  Label decision(System system) const;
};

struct LoocvReport {
  std::vector<ReportRow> rows;
  std::vector<FoldRecord> folds;
  std::vector<ModelHashes> hashes;
  /// Resolved pipeline config; render refuses to emit a report without it.
  nlohmann::ordered_json config;
  std::uint64_t seed = 0;
  double accuracy_gmm = 0.0;
  double accuracy_rank_pooling = 0.0;
  double accuracy_combined = 0.0;
};

std::size_t correct_count(std::span<const ReportRow> rows, System system);
/// correct / total for the named decision column.
double accuracy(std::span<const ReportRow> rows, System system);

ReportRow decide(const FoldRecord& record, const FusionConfig& fusion);

/// Builds rows and accuracies from cached fold outputs.
LoocvReport assemble_report(std::vector<FoldRecord> folds, std::vector<ModelHashes> hashes,
                            const PipelineConfig& config);

struct LoocvHooks {
  /// Called once per fold (possibly from a worker thread) with the trained models.
  std::function<void(const AuClip& held_out, const FoldModels&)> on_models;
};

/// Leave-one-out: each clip is held out once while both GMMs and the MLP are
/// trained on the remaining clips.
LoocvReport loocv(const Corpus& corpus, const PipelineConfig& config, const LoocvHooks& hooks = {});

/// Per-participant table plus a three-line accuracy summary.
std::string render_report(const LoocvReport& report);
/// Recovers the per-participant rows from render_report output.
std::vector<ReportRow> parse_report(std::string_view text);

/// participant_id, label, ll_dep, ll_ndep, N, n_dep_votes, P, decision.
std::string render_fusion_table(std::span<const FoldRecord> folds, const FusionConfig& fusion);

inline constexpr int kReportFormatVersion = 1;

nlohmann::ordered_json to_json(const LoocvReport& report);
LoocvReport report_from_json(const nlohmann::json& j);

}  // namespace audep

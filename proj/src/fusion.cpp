#include "audep/fusion.hpp"

#include <algorithm>
#include <cmath>

#include "audep/error.hpp"

namespace audep {

void FusionConfig::validate() const {
  if (!(omega >= 0.0) || !std::isfinite(omega)) throw Error(ErrorKind::InvalidConfig, "omega must be >= 0");
  if (threshold && !std::isfinite(*threshold)) throw Error(ErrorKind::InvalidConfig, "threshold must be finite");
}

FusionResult fuse(double ll_dep, double ll_ndep, std::span<const Label> votes, const FusionConfig& config,
                  std::size_t n_frames) {
  config.validate();
  if (votes.empty()) throw Error(ErrorKind::EmptyVotes, "fusion needs at least one segment vote");
  if (config.normalize_by_frames && n_frames == 0) {
    throw Error(ErrorKind::InvalidConfig, "frame count must be positive for normalised fusion");
  }

  FusionResult r;
  r.ll_dep = ll_dep;
  r.ll_ndep = ll_ndep;
  r.n_segments = votes.size();
  r.n_dep_votes = static_cast<std::size_t>(std::count(votes.begin(), votes.end(), Label::Depressed));
  const double scale = config.normalize_by_frames ? static_cast<double>(n_frames) : 1.0;
  r.score = (ll_dep - ll_ndep) / scale + config.omega * static_cast<double>(r.n_dep_votes);
  r.threshold = config.threshold.value_or(config.omega * static_cast<double>(r.n_segments) / 2.0);
  r.decision = r.score > r.threshold ? Label::Depressed : Label::NonDepressed;
  return r;
}

FusionResult fuse(const FoldRecord& record, const FusionConfig& config) {
  return fuse(record.ll_dep, record.ll_ndep, record.votes, config, record.n_frames);
}

Label majority_vote(std::span<const Label> votes) {
  const auto dep = static_cast<std::size_t>(std::count(votes.begin(), votes.end(), Label::Depressed));
  return 2 * dep > votes.size() ? Label::Depressed : Label::NonDepressed;
}

std::vector<SweepRow> sweep_omega(std::span<const FoldRecord> folds, std::span<const double> omegas,
                                  const FusionConfig& base) {
  std::vector<SweepRow> rows;
  rows.reserve(omegas.size());
  for (double omega : omegas) {
    FusionConfig config = base;
    config.omega = omega;
    SweepRow row;
    row.omega = omega;
    row.total = folds.size();
    for (const auto& fold : folds) {
      if (fuse(fold, config).decision == fold.label) ++row.correct;
    }
    row.accuracy = row.total ? static_cast<double>(row.correct) / static_cast<double>(row.total) : 0.0;
    rows.push_back(row);
  }
  return rows;
}

nlohmann::ordered_json to_json(const FusionConfig& config) {
  nlohmann::ordered_json j;
  j["omega"] = config.omega;
  j["threshold"] = config.threshold ? nlohmann::ordered_json(*config.threshold) : nlohmann::ordered_json();
  j["normalize_by_frames"] = config.normalize_by_frames;
  return j;
}

FusionConfig fusion_config_from_json(const nlohmann::json& j) {
  FusionConfig c;
  c.omega = j.at("omega").get<double>();
  if (j.contains("threshold") && !j.at("threshold").is_null()) c.threshold = j.at("threshold").get<double>();
  c.normalize_by_frames = j.at("normalize_by_frames").get<bool>();
  return c;
}

}  // namespace audep

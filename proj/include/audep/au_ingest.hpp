#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"

namespace audep {

/// Number of AU intensity channels per frame.
inline constexpr Eigen::Index kNumAus = 17;

/// Intensity column names written by emit_au_csv, in channel order.
inline constexpr std::string_view kAuColumnNames[kNumAus] = {
    "AU01_r", "AU02_r", "AU04_r", "AU05_r", "AU06_r", "AU07_r", "AU09_r", "AU10_r", "AU12_r",
    "AU14_r", "AU15_r", "AU17_r", "AU20_r", "AU23_r", "AU25_r", "AU26_r", "AU45_r"};

/// Rows are frames in temporal order, columns are the 17 AU channels.
using Frames = Eigen::MatrixXd;

enum class Label { NonDepressed = 0, Depressed = 1 };

std::string_view label_name(Label label);
/// Accepts "Depressed", "Non-depressed", "NonDepressed", "non-depressed", "1", "0".
Label parse_label(std::string_view text);

struct AuClip {
  std::string participant_id;
  Frames frames;
  std::optional<Label> label;

  Eigen::Index n_frames() const { return frames.rows(); }
  /// Throws ParseError/EmptyClip when the 17-column, M >= 1, all-finite invariant is broken.
  void validate() const;
};

struct Segment {
  std::string source_id;
  Eigen::Index start_index = 0;
  Frames frames;
};

struct Corpus {
  std::vector<AuClip> clips;

  /// Checks unique ids and per-clip invariants; with `for_training`, every clip
  /// must be labelled and both classes must be present.
  void validate(bool for_training) const;
  std::size_t count(Label label) const;
};

struct SynthConfig {
  int n_participants = 30;
  Eigen::Index frames_per_clip = 1050;
  double class_separation = 2.0;
  double noise_std = 0.3;
  std::uint64_t seed = 7;
  /// Period of the within-window intensity ramp that carries the dynamic signal.
  Eigen::Index trend_period = 150;

  void validate(Eigen::Index window) const;
};

AuClip parse_au_csv(std::istream& in, std::string participant_id = {});
AuClip parse_au_csv(std::string_view text, std::string participant_id = {});
AuClip load_au_csv(const std::filesystem::path& path, std::string participant_id = {});

/// Writes a frame column and the 17 intensity columns with 9 significant digits.
void emit_au_csv(std::ostream& out, const AuClip& clip);

std::vector<Segment> segment_clip(const AuClip& clip, Eigen::Index window, Eigen::Index stride);

/// Number of segments segment_clip returns for a clip of n_frames (0 if too short).
Eigen::Index segment_count(Eigen::Index n_frames, Eigen::Index window, Eigen::Index stride);

Corpus synth_corpus(const SynthConfig& config, Eigen::Index window = 150);

/// Per-channel standardisation fitted on a set of clips.
struct AuScaler {
  Eigen::VectorXd mean;
  Eigen::VectorXd stddev;

  static AuScaler fit(std::span<const AuClip* const> clips);
  Frames apply(const Frames& frames) const;
};

nlohmann::ordered_json to_json(const AuScaler& scaler);
AuScaler au_scaler_from_json(const nlohmann::json& j);

/// Manifest: one JSON object per line with participant_id, label and the CSV
/// path relative to the manifest's directory.
struct ManifestEntry {
  std::string participant_id;
  std::optional<Label> label;
  std::string csv_path;
};

inline constexpr std::string_view kManifestName = "manifest.jsonl";

void write_manifest(std::ostream& out, std::span<const ManifestEntry> entries);
std::vector<ManifestEntry> read_manifest(std::istream& in);

/// Writes <dir>/manifest.jsonl and <dir>/clips/<id>.csv.
void write_corpus(const Corpus& corpus, const std::filesystem::path& dir);
/// Accepts either a corpus directory or a manifest path.
Corpus read_corpus(const std::filesystem::path& location);

}  // namespace audep

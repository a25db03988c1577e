#include "audep/au_ingest.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <random>
#include <sstream>
#include <unordered_set>

#include "json.hpp"

#include "audep/error.hpp"
#include "audep/util.hpp"

namespace audep {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  for (;;) {
    const auto comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      fields.push_back(line.substr(start));
      return fields;
    }
    fields.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

bool is_intensity_column(std::string_view name) {
  return name.find("AU") != std::string_view::npos && name.size() >= 2 &&
         name.substr(name.size() - 2) == "_r";
}

double parse_cell(std::string_view cell, std::size_t line_no) {
  cell = trim(cell);
  if (!cell.empty() && cell.front() == '+') cell.remove_prefix(1);
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), value);
  if (cell.empty() || ec != std::errc{} || ptr != cell.data() + cell.size()) {
    throw Error(ErrorKind::ParseError,
                "line " + std::to_string(line_no) + ": non-numeric cell '" + std::string(cell) + "'");
  }
  if (!std::isfinite(value)) {
    throw Error(ErrorKind::ParseError, "line " + std::to_string(line_no) + ": non-finite value");
  }
  return value;
}

}  // namespace

std::string_view label_name(Label label) {
  return label == Label::Depressed ? "Depressed" : "Non-depressed";
}

Label parse_label(std::string_view text) {
  std::string lower;
  for (char c : trim(text)) {
    if (c == '-' || c == '_' || c == ' ') continue;
    lower.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  if (lower == "depressed" || lower == "dep" || lower == "1") return Label::Depressed;
  if (lower == "nondepressed" || lower == "ndep" || lower == "0") return Label::NonDepressed;
  throw Error(ErrorKind::ParseError, "unknown label '" + std::string(text) + "'");
}

void AuClip::validate() const {
  if (frames.cols() != kNumAus) {
    throw Error(ErrorKind::ParseError, participant_id + ": expected 17 AU columns, got " +
                                           std::to_string(frames.cols()));
  }
  if (frames.rows() < 1) throw Error(ErrorKind::EmptyClip, participant_id + ": no frames");
  if (!frames.allFinite()) throw Error(ErrorKind::ParseError, participant_id + ": non-finite AU value");
}

void Corpus::validate(bool for_training) const {
  std::unordered_set<std::string> seen;
  for (const auto& clip : clips) {
    clip.validate();
    if (!seen.insert(clip.participant_id).second) {
      throw Error(ErrorKind::InvalidConfig, "duplicate participant id " + clip.participant_id);
    }
    if (for_training && !clip.label) {
      throw Error(ErrorKind::InvalidConfig, clip.participant_id + " has no label");
    }
  }
  if (for_training && (count(Label::Depressed) == 0 || count(Label::NonDepressed) == 0)) {
    throw Error(ErrorKind::InsufficientClass, "training corpus needs both labels");
  }
}

std::size_t Corpus::count(Label label) const {
  return static_cast<std::size_t>(
      std::count_if(clips.begin(), clips.end(), [&](const AuClip& c) { return c.label == label; }));
}

void SynthConfig::validate(Eigen::Index window) const {
  if (n_participants < 2 || n_participants % 2 != 0) {
    throw Error(ErrorKind::InvalidConfig, "n_participants must be a positive even count");
  }
  if (frames_per_clip < 2 * window) {
    throw Error(ErrorKind::InvalidConfig, "frames_per_clip must be at least twice the window length");
  }
  if (!(class_separation >= 0.0) || !std::isfinite(class_separation)) {
    throw Error(ErrorKind::InvalidConfig, "class_separation must be nonnegative");
  }
  if (!(noise_std > 0.0) || !std::isfinite(noise_std)) {
    throw Error(ErrorKind::InvalidConfig, "noise_std must be positive");
  }
  if (trend_period < 2) throw Error(ErrorKind::InvalidConfig, "trend_period must be >= 2");
}

AuClip parse_au_csv(std::istream& in, std::string participant_id) {
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!trim(line).empty()) break;
  }
  if (trim(line).empty()) throw Error(ErrorKind::MissingColumn, "no header row");

  const auto header = split_commas(line);
  std::vector<std::size_t> au_columns;
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (is_intensity_column(trim(header[i]))) au_columns.push_back(i);
  }
  if (au_columns.size() < static_cast<std::size_t>(kNumAus)) {
    throw Error(ErrorKind::MissingColumn,
                "found " + std::to_string(au_columns.size()) + " AU intensity columns, need 17");
  }
  if (au_columns.size() > static_cast<std::size_t>(kNumAus)) {
    throw Error(ErrorKind::ParseError,
                "found " + std::to_string(au_columns.size()) + " AU intensity columns, expected 17");
  }

  std::vector<double> values;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto fields = split_commas(line);
    if (fields.size() != header.size()) {
      throw Error(ErrorKind::ParseError, "line " + std::to_string(line_no) + ": expected " +
                                             std::to_string(header.size()) + " fields");
    }
    for (auto col : au_columns) values.push_back(parse_cell(fields[col], line_no));
  }
  if (values.empty()) throw Error(ErrorKind::EmptyClip, "no data rows");

  AuClip clip;
  clip.participant_id = std::move(participant_id);
  const auto rows = static_cast<Eigen::Index>(values.size()) / kNumAus;
  clip.frames = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      values.data(), rows, kNumAus);
  return clip;
}

AuClip parse_au_csv(std::string_view text, std::string participant_id) {
  std::istringstream in{std::string(text)};
  return parse_au_csv(in, std::move(participant_id));
}

AuClip load_au_csv(const std::filesystem::path& path, std::string participant_id) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
  try {
    return parse_au_csv(in, std::move(participant_id));
  } catch (const Error& e) {
    throw Error(e.kind(), path.string() + ": " + e.what());
  }
}

void emit_au_csv(std::ostream& out, const AuClip& clip) {
  clip.validate();
  out << "frame";
  for (auto name : kAuColumnNames) out << ',' << name;
  out << '\n';
  char buf[32];
  for (Eigen::Index r = 0; r < clip.frames.rows(); ++r) {
    out << r;
    for (Eigen::Index c = 0; c < kNumAus; ++c) {
      std::snprintf(buf, sizeof(buf), "%.9g", clip.frames(r, c));
      out << ',' << buf;
    }
    out << '\n';
  }
}

Eigen::Index segment_count(Eigen::Index n_frames, Eigen::Index window, Eigen::Index stride) {
  if (window < 1 || stride < 1 || n_frames < window) return 0;
  return (n_frames - window) / stride + 1;
}

std::vector<Segment> segment_clip(const AuClip& clip, Eigen::Index window, Eigen::Index stride) {
  if (window < 2) throw Error(ErrorKind::InvalidConfig, "window must be >= 2");
  if (stride < 1) throw Error(ErrorKind::InvalidConfig, "stride must be >= 1");
  if (clip.n_frames() < window) {
    throw Error(ErrorKind::ClipTooShort, clip.participant_id + ": " + std::to_string(clip.n_frames()) +
                                             " frames < window " + std::to_string(window));
  }
  std::vector<Segment> segments;
  segments.reserve(static_cast<std::size_t>(segment_count(clip.n_frames(), window, stride)));
  for (Eigen::Index start = 0; start + window <= clip.n_frames(); start += stride) {
    segments.push_back({clip.participant_id, start, clip.frames.middleRows(start, window)});
  }
  return segments;
}

Corpus synth_corpus(const SynthConfig& config, Eigen::Index window) {
  config.validate(window);

  // Shared AU baselines; depressed clips shift alternate channels up/down by
  // half the separation, non-depressed clips the opposite way.
  Eigen::VectorXd base(kNumAus);
  Eigen::VectorXd level_sign(kNumAus);
  for (Eigen::Index j = 0; j < kNumAus; ++j) {
    base(j) = 2.0 + 0.05 * static_cast<double>(j);
    level_sign(j) = (j % 2 == 0) ? 1.0 : -1.0;
  }
  const double half_sep = 0.5 * config.class_separation;
  const auto period = config.trend_period;

  Corpus corpus;
  corpus.clips.reserve(static_cast<std::size_t>(config.n_participants));
  for (int i = 0; i < config.n_participants; ++i) {
    AuClip clip;
    char id[16];
    std::snprintf(id, sizeof(id), "P%03d", i + 1);
    clip.participant_id = id;
    clip.label = (i % 2 == 0) ? Label::Depressed : Label::NonDepressed;
    const double class_sign = clip.label == Label::Depressed ? 1.0 : -1.0;

    std::mt19937_64 rng(mix_seed(config.seed, static_cast<std::uint64_t>(i)));
    std::normal_distribution<double> noise(0.0, config.noise_std);

    const Eigen::VectorXd level = base + class_sign * half_sep * level_sign;
    clip.frames.resize(config.frames_per_clip, kNumAus);
    for (Eigen::Index t = 0; t < config.frames_per_clip; ++t) {
      // Centred sawtooth in [-0.5, 0.5); zero mean over each full period.
      const double ramp = (static_cast<double>(t % period) + 0.5) / static_cast<double>(period) - 0.5;
      const double trend = class_sign * half_sep * ramp;
      for (Eigen::Index j = 0; j < kNumAus; ++j) {
        clip.frames(t, j) = level(j) + trend + noise(rng);
      }
    }
    corpus.clips.push_back(std::move(clip));
  }
  return corpus;
}

AuScaler AuScaler::fit(std::span<const AuClip* const> clips) {
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(kNumAus);
  Eigen::VectorXd sum_sq = Eigen::VectorXd::Zero(kNumAus);
  double count = 0.0;
  for (const AuClip* clip : clips) {
    sum += clip->frames.colwise().sum().transpose();
    count += static_cast<double>(clip->n_frames());
  }
  if (count == 0.0) throw Error(ErrorKind::EmptyClip, "cannot fit a scaler on zero frames");
  AuScaler scaler;
  scaler.mean = sum / count;
  for (const AuClip* clip : clips) {
    sum_sq += (clip->frames.rowwise() - scaler.mean.transpose()).array().square().colwise().sum().matrix().transpose();
  }
  scaler.stddev = (sum_sq / count).array().sqrt();
  for (Eigen::Index j = 0; j < scaler.stddev.size(); ++j) {
    if (!(scaler.stddev(j) > 1e-12)) scaler.stddev(j) = 1.0;
  }
  return scaler;
}

Frames AuScaler::apply(const Frames& frames) const {
  return ((frames.rowwise() - mean.transpose()).array().rowwise() / stddev.transpose().array()).matrix();
}

nlohmann::ordered_json to_json(const AuScaler& scaler) {
  nlohmann::ordered_json j;
  j["format"] = "audep-au-scaler";
  j["mean"] = std::vector<double>(scaler.mean.data(), scaler.mean.data() + scaler.mean.size());
  j["stddev"] = std::vector<double>(scaler.stddev.data(), scaler.stddev.data() + scaler.stddev.size());
  return j;
}

AuScaler au_scaler_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format").get<std::string>() != "audep-au-scaler") throw Error(ErrorKind::ParseError, "not an AU scaler file");
    const auto mean = j.at("mean").get<std::vector<double>>();
    const auto sd = j.at("stddev").get<std::vector<double>>();
    if (mean.size() != static_cast<std::size_t>(kNumAus) || sd.size() != mean.size()) {
      throw Error(ErrorKind::ParseError, "AU scaler must have 17 channels");
    }
    AuScaler s;
    s.mean = Eigen::Map<const Eigen::VectorXd>(mean.data(), kNumAus);
    s.stddev = Eigen::Map<const Eigen::VectorXd>(sd.data(), kNumAus);
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::ParseError, std::string("AU scaler: ") + e.what());
  }
}

void write_manifest(std::ostream& out, std::span<const ManifestEntry> entries) {
  for (const auto& e : entries) {
    nlohmann::ordered_json line;
    line["participant_id"] = e.participant_id;
    line["label"] = e.label ? nlohmann::ordered_json(std::string(label_name(*e.label))) : nlohmann::ordered_json();
    line["csv"] = e.csv_path;
    out << line.dump() << '\n';
  }
}

std::vector<ManifestEntry> read_manifest(std::istream& in) {
  std::vector<ManifestEntry> entries;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      ManifestEntry e;
      e.participant_id = j.at("participant_id").get<std::string>();
      e.csv_path = j.at("csv").get<std::string>();
      if (j.contains("label") && !j.at("label").is_null()) e.label = parse_label(j.at("label").get<std::string>());
      entries.push_back(std::move(e));
    } catch (const nlohmann::json::exception& ex) {
      throw Error(ErrorKind::ParseError, "manifest line " + std::to_string(line_no) + ": " + ex.what());
    }
  }
  return entries;
}

void write_corpus(const Corpus& corpus, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "clips");
  std::vector<ManifestEntry> entries;
  for (const auto& clip : corpus.clips) {
    const std::string rel = "clips/" + clip.participant_id + ".csv";
    std::ofstream csv(dir / rel, std::ios::binary);
    if (!csv) throw Error(ErrorKind::Io, "cannot write " + (dir / rel).string());
    emit_au_csv(csv, clip);
    entries.push_back({clip.participant_id, clip.label, rel});
  }
  std::ofstream manifest(dir / kManifestName, std::ios::binary);
  if (!manifest) throw Error(ErrorKind::Io, "cannot write manifest in " + dir.string());
  write_manifest(manifest, entries);
}

Corpus read_corpus(const std::filesystem::path& location) {
  namespace fs = std::filesystem;
  const fs::path manifest_path = fs::is_directory(location) ? location / kManifestName : location;
  std::ifstream in(manifest_path);
  if (!in) throw Error(ErrorKind::Io, "cannot open manifest " + manifest_path.string());
  const fs::path root = manifest_path.parent_path();

  Corpus corpus;
  for (auto& entry : read_manifest(in)) {
    AuClip clip = load_au_csv(root / entry.csv_path, entry.participant_id);
    clip.label = entry.label;
    corpus.clips.push_back(std::move(clip));
  }
  corpus.validate(false);
  return corpus;
}

}  // namespace audep

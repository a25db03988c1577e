#include "audep/eval.hpp"

#include <cstdio>
#include <sstream>

#include "audep/error.hpp"
#include "audep/util.hpp"

namespace audep {

namespace {

// Child-seed salts for the per-fold random streams.
constexpr std::uint64_t kSaltGmmDep = 11;
constexpr std::uint64_t kSaltGmmNdep = 12;
constexpr std::uint64_t kSaltMlp = 13;

Eigen::MatrixXd stack_frames(std::span<const AuClip* const> clips, const std::optional<AuScaler>& scaler) {
  Eigen::Index rows = 0;
  for (const AuClip* c : clips) rows += c->n_frames();
  Eigen::MatrixXd out(rows, kNumAus);
  Eigen::Index at = 0;
  for (const AuClip* c : clips) {
    out.middleRows(at, c->n_frames()) = scaler ? scaler->apply(c->frames) : c->frames;
    at += c->n_frames();
  }
  return out;
}

std::string percent(double fraction) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.1f%%", 100.0 * fraction);
  return buf;
}

}  // namespace

void PipelineConfig::validate() const {
  if (window < 2) throw Error(ErrorKind::InvalidConfig, "window must be >= 2");
  if (stride < 1) throw Error(ErrorKind::InvalidConfig, "stride must be >= 1");
  em.validate();
  rankpool.validate();
  mlp.validate();
  fusion.validate();
}

nlohmann::ordered_json to_json(const PipelineConfig& config) {
  nlohmann::ordered_json j;
  j["window"] = config.window;
  j["stride"] = config.stride;
  j["standardize"] = config.standardize;
  j["seed"] = config.seed;
  j["em"] = to_json(config.em);
  j["rankpool"] = to_json(config.rankpool);
  j["mlp"] = to_json(config.mlp);
  j["fusion"] = to_json(config.fusion);
  return j;
}

PipelineConfig pipeline_config_from_json(const nlohmann::json& j) {
  try {
    PipelineConfig c;
    c.window = j.at("window").get<Eigen::Index>();
    c.stride = j.at("stride").get<Eigen::Index>();
    c.standardize = j.at("standardize").get<bool>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.em = em_config_from_json(j.at("em"));
    c.rankpool = rankpool_config_from_json(j.at("rankpool"));
    c.mlp = train_config_from_json(j.at("mlp"));
    c.fusion = fusion_config_from_json(j.at("fusion"));
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::ConfigIncomplete, std::string("pipeline config: ") + e.what());
  }
}

std::string gmm_file_text(const GmmModel& model, const EmConfig& config) {
  return to_json(model, config).dump(1) + "\n";
}

std::string classifier_file_text(const SegmentClassifier& classifier) { return to_json(classifier).dump(1) + "\n"; }

ModelHashes hash_models(const FoldModels& models) {
  return {hex64(fnv1a(gmm_file_text(models.dep, models.em_dep))),
          hex64(fnv1a(gmm_file_text(models.ndep, models.em_ndep))),
          hex64(fnv1a(classifier_file_text(models.classifier)))};
}

std::vector<std::vector<DynamicDescriptor>> pool_corpus(const Corpus& corpus, const PipelineConfig& config) {
  std::vector<std::vector<DynamicDescriptor>> out(corpus.clips.size());
  parallel_for(corpus.clips.size(), config.jobs, [&](std::size_t i) {
    out[i] = pool_clip(corpus.clips[i], config.window, config.stride, config.rankpool);
  });
  return out;
}

namespace {

void split_by_label(std::span<const AuClip* const> training, std::vector<const AuClip*>& dep,
                    std::vector<const AuClip*>& ndep) {
  for (const AuClip* clip : training) {
    if (!clip->label) throw Error(ErrorKind::InvalidConfig, clip->participant_id + " has no label");
    (*clip->label == Label::Depressed ? dep : ndep).push_back(clip);
  }
  if (dep.empty() || ndep.empty()) {
    throw Error(ErrorKind::InsufficientClass, "training split lacks one of the two classes");
  }
}

}  // namespace

GmmPair fit_gmm_pair(std::span<const AuClip* const> training, const PipelineConfig& config, std::uint64_t seed) {
  std::vector<const AuClip*> dep_clips;
  std::vector<const AuClip*> ndep_clips;
  split_by_label(training, dep_clips, ndep_clips);

  GmmPair pair;
  if (config.standardize) pair.frame_scaler = AuScaler::fit(training);
  pair.em_dep = config.em;
  pair.em_dep.seed = mix_seed(seed, kSaltGmmDep);
  pair.em_ndep = config.em;
  pair.em_ndep.seed = mix_seed(seed, kSaltGmmNdep);
  pair.dep = fit_em(stack_frames(dep_clips, pair.frame_scaler), pair.em_dep);
  pair.ndep = fit_em(stack_frames(ndep_clips, pair.frame_scaler), pair.em_ndep);
  return pair;
}

SegmentClassifier fit_segment_classifier(std::span<const AuClip* const> training,
                                         std::span<const std::vector<DynamicDescriptor>* const> descriptors,
                                         const PipelineConfig& config, std::uint64_t seed) {
  if (training.size() != descriptors.size()) {
    throw Error(ErrorKind::InvalidConfig, "one descriptor list per training clip is required");
  }
  std::vector<const AuClip*> dep_clips;
  std::vector<const AuClip*> ndep_clips;
  split_by_label(training, dep_clips, ndep_clips);

  std::size_t n_desc = 0;
  for (const auto* list : descriptors) n_desc += list->size();
  Eigen::MatrixXd x(static_cast<Eigen::Index>(n_desc), kNumAus);
  std::vector<Label> labels;
  labels.reserve(n_desc);
  Eigen::Index row = 0;
  for (std::size_t i = 0; i < training.size(); ++i) {
    for (const auto& desc : *descriptors[i]) {
      x.row(row++) = desc.d.transpose();
      labels.push_back(*training[i]->label);
    }
  }
  TrainConfig mlp = config.mlp;
  mlp.seed = mix_seed(seed, kSaltMlp);
  return train_segment_classifier(x, labels, mlp);
}

FoldModels train_models(std::span<const AuClip* const> training,
                        std::span<const std::vector<DynamicDescriptor>* const> descriptors,
                        const PipelineConfig& config, std::uint64_t fold_seed) {
  if (training.size() != descriptors.size()) {
    throw Error(ErrorKind::InvalidConfig, "one descriptor list per training clip is required");
  }
  GmmPair gmms = fit_gmm_pair(training, config, fold_seed);
  FoldModels models;
  models.dep = std::move(gmms.dep);
  models.ndep = std::move(gmms.ndep);
  models.em_dep = gmms.em_dep;
  models.em_ndep = gmms.em_ndep;
  models.frame_scaler = std::move(gmms.frame_scaler);
  models.classifier = fit_segment_classifier(training, descriptors, config, fold_seed);
  return models;
}

FoldRecord score_clip(const GmmPair& gmms, const SegmentClassifier& classifier, const AuClip& clip,
                      std::span<const DynamicDescriptor> descriptors) {
  FoldRecord r;
  r.participant_id = clip.participant_id;
  r.label = clip.label.value_or(Label::NonDepressed);
  const PairScore ll = gmms.frame_scaler ? score_pair(gmms.dep, gmms.ndep, gmms.frame_scaler->apply(clip.frames))
                                         : score_pair(gmms.dep, gmms.ndep, clip);
  r.ll_dep = ll.ll_dep;
  r.ll_ndep = ll.ll_ndep;
  r.n_frames = static_cast<std::size_t>(clip.n_frames());
  for (const auto& desc : descriptors) {
    const auto p = classifier.predict(desc.d);
    r.probs.push_back(p.prob);
    r.votes.push_back(p.vote);
  }
  return r;
}

FoldRecord score_clip(const FoldModels& models, const AuClip& clip, std::span<const DynamicDescriptor> descriptors) {
  const GmmPair gmms{models.dep, models.ndep, models.em_dep, models.em_ndep, models.frame_scaler};
  return score_clip(gmms, models.classifier, clip, descriptors);
}

std::string_view system_name(System system) {
  switch (system) {
    case System::Gmm: return "gmm";
    case System::RankPooling: return "rank_pooling";
    case System::Combined: return "combined";
  }
  return "unknown";
}

Label ReportRow::decision(System system) const {
  switch (system) {
    case System::Gmm: return gmm;
    case System::RankPooling: return rank_pooling;
    case System::Combined: return combined;
  }
  return combined;
}

std::size_t correct_count(std::span<const ReportRow> rows, System system) {
  std::size_t correct = 0;
  for (const auto& r : rows) correct += r.decision(system) == r.label ? 1 : 0;
  return correct;
}

double accuracy(std::span<const ReportRow> rows, System system) {
  if (rows.empty()) throw Error(ErrorKind::InvalidConfig, "accuracy of an empty table");
  return static_cast<double>(correct_count(rows, system)) / static_cast<double>(rows.size());
}

ReportRow decide(const FoldRecord& record, const FusionConfig& fusion) {
  ReportRow row;
  row.participant_id = record.participant_id;
  row.label = record.label;
  row.gmm = PairScore{record.ll_dep, record.ll_ndep}.decision();
  row.rank_pooling = majority_vote(record.votes);
  row.combined = fuse(record, fusion).decision;
  return row;
}

LoocvReport assemble_report(std::vector<FoldRecord> folds, std::vector<ModelHashes> hashes,
                            const PipelineConfig& config) {
  LoocvReport report;
  for (const auto& f : folds) report.rows.push_back(decide(f, config.fusion));
  report.folds = std::move(folds);
  report.hashes = std::move(hashes);
  report.config = to_json(config);
  report.seed = config.seed;
  if (!report.rows.empty()) {
    report.accuracy_gmm = accuracy(report.rows, System::Gmm);
    report.accuracy_rank_pooling = accuracy(report.rows, System::RankPooling);
    report.accuracy_combined = accuracy(report.rows, System::Combined);
  }
  return report;
}

LoocvReport loocv(const Corpus& corpus, const PipelineConfig& config, const LoocvHooks& hooks) {
  config.validate();
  corpus.validate(true);
  if (corpus.count(Label::Depressed) < 2 || corpus.count(Label::NonDepressed) < 2) {
    throw Error(ErrorKind::InsufficientClass, "leave-one-out needs at least 2 clips per class");
  }

  const auto descriptors = pool_corpus(corpus, config);
  const std::size_t n = corpus.clips.size();
  std::vector<FoldRecord> records(n);
  std::vector<ModelHashes> hashes(n);

  parallel_for(n, config.jobs, [&](std::size_t held_out) {
    const AuClip& test = corpus.clips[held_out];
    try {
      std::vector<const AuClip*> training;
      std::vector<const std::vector<DynamicDescriptor>*> training_desc;
      for (std::size_t i = 0; i < n; ++i) {
        if (i == held_out) continue;
        training.push_back(&corpus.clips[i]);
        training_desc.push_back(&descriptors[i]);
      }
      const FoldModels models = train_models(training, training_desc, config, seed_for(config.seed, test.participant_id));
      hashes[held_out] = hash_models(models);
      if (hooks.on_models) hooks.on_models(test, models);
      records[held_out] = score_clip(models, test, descriptors[held_out]);
    } catch (const Error& e) {
      throw Error(e.kind(), "fold " + test.participant_id + ": " + e.what());
    }
  });

  return assemble_report(std::move(records), std::move(hashes), config);
}

std::string render_report(const LoocvReport& report) {
  if (report.config.is_null() || report.config.empty()) {
    throw Error(ErrorKind::ConfigIncomplete, "report has no recorded configuration");
  }
  if (report.rows.empty()) throw Error(ErrorKind::ConfigIncomplete, "report has no rows");

  std::ostringstream out;
  out << "# audep leave-one-out report\n";
  out << "# seed: " << report.seed << '\n';
  out << "# config: " << report.config.dump() << '\n';
  out << "participant_id\tlabel\tgmm\trank_pooling\tcombined\n";
  for (const auto& r : report.rows) {
    out << r.participant_id << '\t' << label_name(r.label) << '\t' << label_name(r.gmm) << '\t'
        << label_name(r.rank_pooling) << '\t' << label_name(r.combined) << '\n';
  }
  out << '\n';
  out << "method\taccuracy\tcorrect\ttotal\n";
  const std::pair<System, const char*> methods[] = {
      {System::Gmm, "GMM (clip-level)"},
      {System::RankPooling, "Rank pooling (short-term)"},
      {System::Combined, "Combined"},
  };
  for (const auto& [system, title] : methods) {
    out << title << '\t' << percent(accuracy(report.rows, system)) << '\t' << correct_count(report.rows, system)
        << '\t' << report.rows.size() << '\n';
  }
  return out.str();
}

std::vector<ReportRow> parse_report(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  bool in_table = false;
  std::vector<ReportRow> rows;
  while (std::getline(in, line)) {
    if (!in_table) {
      in_table = line.rfind("participant_id\t", 0) == 0;
      continue;
    }
    if (line.empty()) break;
    std::istringstream fields(line);
    std::string id, label, gmm, rp, combined;
    if (!std::getline(fields, id, '\t') || !std::getline(fields, label, '\t') || !std::getline(fields, gmm, '\t') ||
        !std::getline(fields, rp, '\t') || !std::getline(fields, combined, '\t')) {
      throw Error(ErrorKind::ParseError, "malformed report row: " + line);
    }
    rows.push_back({id, parse_label(label), parse_label(gmm), parse_label(rp), parse_label(combined)});
  }
  if (!in_table) throw Error(ErrorKind::ParseError, "no decision table found");
  return rows;
}

std::string render_fusion_table(std::span<const FoldRecord> folds, const FusionConfig& fusion) {
  std::ostringstream out;
  out << "participant_id\tlabel\tll_dep\tll_ndep\tN\tn_dep_votes\tP\tdecision\n";
  for (const auto& f : folds) {
    const FusionResult r = fuse(f, fusion);
    out << f.participant_id << '\t' << label_name(f.label) << '\t' << format_double(r.ll_dep) << '\t'
        << format_double(r.ll_ndep) << '\t' << r.n_segments << '\t' << r.n_dep_votes << '\t'
        << format_double(r.score) << '\t' << label_name(r.decision) << '\n';
  }
  return out.str();
}

nlohmann::ordered_json to_json(const LoocvReport& report) {
  nlohmann::ordered_json j;
  j["format"] = "audep-loocv";
  j["version"] = kReportFormatVersion;
  j["seed"] = report.seed;
  j["config"] = report.config;
  auto folds = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < report.folds.size(); ++i) {
    const auto& f = report.folds[i];
    nlohmann::ordered_json fj;
    fj["participant_id"] = f.participant_id;
    fj["label"] = label_name(f.label);
    fj["ll_dep"] = f.ll_dep;
    fj["ll_ndep"] = f.ll_ndep;
    fj["n_frames"] = f.n_frames;
    std::vector<int> votes;
    for (Label v : f.votes) votes.push_back(v == Label::Depressed ? 1 : 0);
    fj["votes"] = votes;
    fj["probs"] = f.probs;
    if (i < report.hashes.size()) {
      fj["model_hashes"] = {{"gmm_dep", report.hashes[i].gmm_dep},
                            {"gmm_ndep", report.hashes[i].gmm_ndep},
                            {"mlp", report.hashes[i].mlp}};
    }
    folds.push_back(std::move(fj));
  }
  j["folds"] = std::move(folds);
  j["accuracy"] = {{"gmm", report.accuracy_gmm},
                   {"rank_pooling", report.accuracy_rank_pooling},
                   {"combined", report.accuracy_combined}};
  return j;
}

LoocvReport report_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format").get<std::string>() != "audep-loocv" || j.at("version").get<int>() != kReportFormatVersion) {
      throw Error(ErrorKind::ParseError, "not a version-1 audep LOOCV sidecar");
    }
    const PipelineConfig config = pipeline_config_from_json(j.at("config"));
    std::vector<FoldRecord> folds;
    std::vector<ModelHashes> hashes;
    for (const auto& fj : j.at("folds")) {
      FoldRecord f;
      f.participant_id = fj.at("participant_id").get<std::string>();
      f.label = parse_label(fj.at("label").get<std::string>());
      f.ll_dep = fj.at("ll_dep").get<double>();
      f.ll_ndep = fj.at("ll_ndep").get<double>();
      f.n_frames = fj.at("n_frames").get<std::size_t>();
      for (int v : fj.at("votes").get<std::vector<int>>()) f.votes.push_back(v ? Label::Depressed : Label::NonDepressed);
      f.probs = fj.at("probs").get<std::vector<double>>();
      folds.push_back(std::move(f));
      if (fj.contains("model_hashes")) {
        const auto& h = fj.at("model_hashes");
        hashes.push_back({h.at("gmm_dep").get<std::string>(), h.at("gmm_ndep").get<std::string>(),
                          h.at("mlp").get<std::string>()});
      }
    }
    return assemble_report(std::move(folds), std::move(hashes), config);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::ParseError, std::string("LOOCV sidecar: ") + e.what());
  }
}

}  // namespace audep

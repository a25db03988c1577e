#include "cli.hpp"

#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>

#include "audep/au_ingest.hpp"
#include "audep/error.hpp"
#include "audep/eval.hpp"
#include "audep/fusion.hpp"
#include "audep/gmm.hpp"
#include "audep/mlp.hpp"
#include "audep/rankpool.hpp"
#include "audep/util.hpp"
#include "json.hpp"

namespace audep::cli {
namespace {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Files are collected in memory and written only once the whole run succeeded.
class Outputs {
 public:
  void add(const std::string& relative, std::string text) { files_[relative] = std::move(text); }

  void commit(const fs::path& dir) const {
    for (const auto& [rel, text] : files_) {
      const fs::path path = dir / rel;
      fs::create_directories(path.parent_path());
      std::ofstream f(path, std::ios::binary);
      if (!f) throw Error(ErrorKind::Io, "cannot write " + path.string());
      f << text;
      if (!f) throw Error(ErrorKind::Io, "failed writing " + path.string());
    }
  }

  std::size_t size() const { return files_.size(); }

 private:
  std::map<std::string, std::string> files_;
};

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

json read_json(const fs::path& path) {
  try {
    return json::parse(read_text(path));
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::ParseError, path.string() + ": " + e.what());
  }
}

void require_exists(const std::string& path, const char* what) {
  if (!fs::exists(path)) throw UsageError(std::string(what) + " not found: " + path);
}

// ---- pipeline flags -------------------------------------------------------

struct PipelineFlags {
  std::string config_file;
  int jobs = 0;
  std::vector<std::function<void(PipelineConfig&)>> apply;
};

template <class T, class Set>
void option(CLI::App* app, PipelineFlags& flags, const std::string& name, T initial, const std::string& help, Set set) {
  auto value = std::make_shared<T>(initial);
  CLI::Option* opt = app->add_option(name, *value, help)->capture_default_str();
  flags.apply.push_back([opt, value, set](PipelineConfig& c) {
    if (opt->count() > 0) set(c, *value);
  });
}

template <class Set>
void flag(CLI::App* app, PipelineFlags& flags, const std::string& name, const std::string& help, Set set) {
  CLI::Option* opt = app->add_flag(name, help);
  flags.apply.push_back([opt, set](PipelineConfig& c) {
    if (opt->count() > 0) set(c);
  });
}

void add_fusion_flags(CLI::App* app, PipelineFlags& f) {
  const PipelineConfig d;
  option(app, f, "--omega", d.fusion.omega, "Weight of the segment-vote term", [](auto& c, double v) { c.fusion.omega = v; });
  auto tau = std::make_shared<double>(0.0);
  CLI::Option* tau_opt = app->add_option("--threshold", *tau, "Decision threshold [default: omega*N/2]");
  f.apply.push_back([tau_opt, tau](PipelineConfig& c) {
    if (tau_opt->count() > 0) c.fusion.threshold = *tau;
  });
  flag(app, f, "--raw-fusion", "Use the raw log-likelihood gap instead of the per-frame average",
       [](auto& c) { c.fusion.normalize_by_frames = false; });
}

void add_pipeline_flags(CLI::App* app, PipelineFlags& f) {
  const PipelineConfig d;
  app->add_option("--config", f.config_file, "JSON config file; explicit flags override it");
  app->add_option("--jobs", f.jobs, "Worker threads (0 = one per processor)")->capture_default_str();
  option(app, f, "--seed", d.seed, "Root seed", [](auto& c, std::uint64_t v) { c.seed = v; });
  option(app, f, "--window", d.window, "Segment length D in frames", [](auto& c, Eigen::Index v) { c.window = v; });
  option(app, f, "--stride", d.stride, "Segment stride in frames", [](auto& c, Eigen::Index v) { c.stride = v; });
  flag(app, f, "--standardize", "Standardise the 17 AU channels before GMM fitting",
       [](auto& c) { c.standardize = true; });

  option(app, f, "--components", d.em.n_components, "Mixture components per class",
         [](auto& c, int v) { c.em.n_components = v; });
  option(app, f, "--em-max-iters", d.em.max_iters, "EM iteration cap", [](auto& c, int v) { c.em.max_iters = v; });
  option(app, f, "--em-tol", d.em.tol, "EM relative convergence tolerance", [](auto& c, double v) { c.em.tol = v; });
  option(app, f, "--variance-floor", d.em.variance_floor, "Minimum per-dimension variance",
         [](auto& c, double v) { c.em.variance_floor = v; });
  option(app, f, "--em-inits", d.em.n_init, "EM restarts (best kept)", [](auto& c, int v) { c.em.n_init = v; });

  option(app, f, "--margin", d.rankpool.margin, "Rank-pooling hinge margin", [](auto& c, double v) { c.rankpool.margin = v; });
  option(app, f, "--reg-c", d.rankpool.reg_c, "Rank-pooling hinge weight C", [](auto& c, double v) { c.rankpool.reg_c = v; });
  option(app, f, "--rp-epochs", d.rankpool.max_epochs, "Rank-pooling epoch cap",
         [](auto& c, int v) { c.rankpool.max_epochs = v; });
  option(app, f, "--rp-step", d.rankpool.step_size, "Rank-pooling initial step",
         [](auto& c, double v) { c.rankpool.step_size = v; });
  option(app, f, "--rp-tol", d.rankpool.tol, "Rank-pooling relative stopping tolerance",
         [](auto& c, double v) { c.rankpool.tol = v; });
  flag(app, f, "--no-smooth", "Rank-pool raw frames instead of running means", [](auto& c) { c.rankpool.smooth = false; });

  option(app, f, "--hidden1", d.mlp.hidden1, "MLP first hidden width", [](auto& c, int v) { c.mlp.hidden1 = v; });
  option(app, f, "--hidden2", d.mlp.hidden2, "MLP second hidden width", [](auto& c, int v) { c.mlp.hidden2 = v; });
  option(app, f, "--dropout", d.mlp.dropout, "MLP dropout rate", [](auto& c, double v) { c.mlp.dropout = v; });
  option(app, f, "--lr", d.mlp.learning_rate, "MLP learning rate", [](auto& c, double v) { c.mlp.learning_rate = v; });
  option(app, f, "--epochs", d.mlp.epochs, "MLP training epochs", [](auto& c, int v) { c.mlp.epochs = v; });
  option(app, f, "--batch-size", d.mlp.batch_size, "MLP minibatch size", [](auto& c, int v) { c.mlp.batch_size = v; });
  flag(app, f, "--no-class-balance", "Do not reweight segments by inverse class frequency",
       [](auto& c) { c.mlp.class_balanced = false; });

  add_fusion_flags(app, f);
}

/// Defaults, then the config file, then explicit flags.
PipelineConfig resolve(const PipelineFlags& flags, json base = to_json(PipelineConfig{})) {
  if (!flags.config_file.empty()) {
    require_exists(flags.config_file, "config file");
    json file = read_json(flags.config_file);
    // Provenance files and report sidecars nest the pipeline config.
    if (file.contains("config") && file["config"].is_object()) file = file["config"];
    if (!file.is_object()) throw Error(ErrorKind::ConfigIncomplete, "config file must hold a JSON object");
    base.merge_patch(file);
  }
  PipelineConfig config = pipeline_config_from_json(base);
  for (const auto& apply : flags.apply) apply(config);
  config.jobs = flags.jobs;
  config.validate();
  return config;
}

json provenance(const std::string& subcommand, const json& config, std::uint64_t seed, const json& inputs) {
  json p;
  p["tool"] = "audep";
  p["version"] = AUDEP_VERSION;
  p["subcommand"] = subcommand;
  p["seed"] = seed;
  p["au_channels"] = kNumAus;
  p["config"] = config;
  p["inputs"] = inputs;
  return p;
}

std::string dump(const json& j) { return j.dump(1) + "\n"; }

// ---- synthetic corpus -------------------------------------------------------

struct SynthFlags {
  SynthConfig config;
  Eigen::Index window = 150;
};

void add_synth_flags(CLI::App* app, SynthFlags& s, const std::string& seed_flag) {
  app->add_option("--n", s.config.n_participants, "Participants (even; half depressed)")->capture_default_str();
  app->add_option("--frames", s.config.frames_per_clip, "Frames per clip")->capture_default_str();
  app->add_option("--separation", s.config.class_separation, "Class separation (0 = no signal)")->capture_default_str();
  app->add_option("--noise", s.config.noise_std, "Per-frame noise standard deviation")->capture_default_str();
  app->add_option("--trend-period", s.config.trend_period, "Period of the within-window intensity ramp")
      ->capture_default_str();
  app->add_option(seed_flag, s.config.seed, "Corpus seed")->capture_default_str();
}

json to_json(const SynthConfig& c) {
  json j;
  j["n_participants"] = c.n_participants;
  j["frames_per_clip"] = c.frames_per_clip;
  j["class_separation"] = c.class_separation;
  j["noise_std"] = c.noise_std;
  j["trend_period"] = c.trend_period;
  j["seed"] = c.seed;
  return j;
}

void add_corpus(Outputs& outputs, const Corpus& corpus, const std::string& prefix = {}) {
  std::vector<ManifestEntry> entries;
  for (const auto& clip : corpus.clips) {
    const std::string rel = "clips/" + clip.participant_id + ".csv";
    std::ostringstream csv;
    emit_au_csv(csv, clip);
    outputs.add(prefix + rel, csv.str());
    entries.push_back({clip.participant_id, clip.label, rel});
  }
  std::ostringstream manifest;
  write_manifest(manifest, entries);
  outputs.add(prefix + std::string(kManifestName), manifest.str());
}

// ---- shared helpers -------------------------------------------------------

Corpus load_corpus(const std::string& path) {
  require_exists(path, "corpus");
  return read_corpus(path);
}

std::vector<const AuClip*> labelled(const Corpus& corpus) {
  std::vector<const AuClip*> out;
  for (const auto& clip : corpus.clips) {
    if (!clip.label) throw UsageError("training clip " + clip.participant_id + " has no label");
    out.push_back(&clip);
  }
  return out;
}

std::string descriptor_text(const std::vector<std::vector<DynamicDescriptor>>& per_clip) {
  std::vector<DynamicDescriptor> flat;
  for (const auto& list : per_clip) flat.insert(flat.end(), list.begin(), list.end());
  std::ostringstream out;
  write_descriptors(out, flat);
  return out.str();
}

/// Regroups a descriptor table by clip, in corpus order.
std::vector<std::vector<DynamicDescriptor>> group_descriptors(const Corpus& corpus,
                                                              std::vector<DynamicDescriptor> descriptors) {
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < corpus.clips.size(); ++i) index[corpus.clips[i].participant_id] = i;
  std::vector<std::vector<DynamicDescriptor>> out(corpus.clips.size());
  for (auto& d : descriptors) {
    const auto it = index.find(d.source_id);
    if (it == index.end()) throw Error(ErrorKind::ParseError, "descriptor for unknown clip " + d.source_id);
    out[it->second].push_back(std::move(d));
  }
  return out;
}

std::string sweep_text(std::span<const SweepRow> rows) {
  std::ostringstream out;
  out << "omega\taccuracy\tcorrect\ttotal\n";
  for (const auto& r : rows) {
    out << format_double(r.omega) << '\t' << format_double(r.accuracy) << '\t' << r.correct << '\t' << r.total << '\n';
  }
  return out.str();
}

struct Common {
  std::string out_dir;
  PipelineFlags pipeline;
};

void add_out(CLI::App* app, Common& c) { app->add_option("--out", c.out_dir, "Output directory")->required(); }

// ---- subcommands ------------------------------------------------------------

int cmd_synth(const SynthFlags& s, const Common& c, std::ostream& out) {
  s.config.validate(s.window);
  if (s.window < 2) throw UsageError("--window must be at least 2");
  const Corpus corpus = synth_corpus(s.config, s.window);
  Outputs outputs;
  add_corpus(outputs, corpus);
  json cfg = to_json(s.config);
  cfg["window"] = s.window;
  outputs.add(kProvenanceName, dump(provenance("synth", cfg, s.config.seed, json::object())));
  outputs.commit(c.out_dir);
  out << "wrote " << corpus.clips.size() << " clips to " << c.out_dir << '\n';
  return kExitOk;
}

int cmd_fit_gmm(const std::string& corpus_path, const Common& c, std::ostream& out) {
  const PipelineConfig config = resolve(c.pipeline);
  const Corpus corpus = load_corpus(corpus_path);
  const auto training = labelled(corpus);
  const GmmPair gmms = fit_gmm_pair(training, config, config.seed);

  Outputs outputs;
  outputs.add("gmm_dep.json", gmm_file_text(gmms.dep, gmms.em_dep));
  outputs.add("gmm_ndep.json", gmm_file_text(gmms.ndep, gmms.em_ndep));
  if (gmms.frame_scaler) outputs.add("frame_scaler.json", dump(to_json(*gmms.frame_scaler)));
  outputs.add(kProvenanceName, dump(provenance("fit-gmm", to_json(config), config.seed, {{"corpus", corpus_path}})));
  outputs.commit(c.out_dir);
  out << "fitted " << gmms.dep.weights.size() << "-component GMMs on " << training.size() << " clips\n";
  return kExitOk;
}

int cmd_pool(const std::string& corpus_path, const Common& c, std::ostream& out) {
  const PipelineConfig config = resolve(c.pipeline);
  const Corpus corpus = load_corpus(corpus_path);
  const auto descriptors = pool_corpus(corpus, config);

  Outputs outputs;
  outputs.add("descriptors.tsv", descriptor_text(descriptors));
  outputs.add(kProvenanceName, dump(provenance("pool", to_json(config), config.seed, {{"corpus", corpus_path}})));
  outputs.commit(c.out_dir);
  std::size_t n = 0;
  for (const auto& d : descriptors) n += d.size();
  out << "pooled " << n << " segments from " << corpus.clips.size() << " clips\n";
  return kExitOk;
}

int cmd_train_mlp(const std::string& corpus_path, const std::string& descriptor_path, const Common& c,
                  std::ostream& out) {
  const PipelineConfig config = resolve(c.pipeline);
  if (!descriptor_path.empty()) require_exists(descriptor_path, "descriptor table");
  const Corpus corpus = load_corpus(corpus_path);
  const auto training = labelled(corpus);

  std::vector<std::vector<DynamicDescriptor>> descriptors;
  if (descriptor_path.empty()) {
    descriptors = pool_corpus(corpus, config);
  } else {
    std::ifstream in(descriptor_path);
    descriptors = group_descriptors(corpus, read_descriptors(in));
  }
  std::vector<const std::vector<DynamicDescriptor>*> lists;
  for (const auto& d : descriptors) lists.push_back(&d);
  const SegmentClassifier classifier = fit_segment_classifier(training, lists, config, config.seed);

  json inputs{{"corpus", corpus_path}};
  if (!descriptor_path.empty()) inputs["descriptors"] = descriptor_path;
  Outputs outputs;
  outputs.add("mlp.json", classifier_file_text(classifier));
  outputs.add(kProvenanceName, dump(provenance("train-mlp", to_json(config), config.seed, inputs)));
  outputs.commit(c.out_dir);
  out << "trained segment classifier\n";
  return kExitOk;
}

int cmd_score(const std::string& corpus_path, const std::string& models_dir, const Common& c, std::ostream& out) {
  const PipelineConfig config = resolve(c.pipeline);
  require_exists(models_dir, "model directory");
  for (const char* name : {"gmm_dep.json", "gmm_ndep.json", "mlp.json"}) {
    require_exists((fs::path(models_dir) / name).string(), "model file");
  }
  const Corpus corpus = load_corpus(corpus_path);

  GmmPair gmms;
  gmms.dep = load_gmm(fs::path(models_dir) / "gmm_dep.json", &gmms.em_dep);
  gmms.ndep = load_gmm(fs::path(models_dir) / "gmm_ndep.json", &gmms.em_ndep);
  const fs::path scaler_path = fs::path(models_dir) / "frame_scaler.json";
  if (fs::exists(scaler_path)) gmms.frame_scaler = au_scaler_from_json(read_json(scaler_path));
  const SegmentClassifier classifier = load_classifier(fs::path(models_dir) / "mlp.json");

  const auto descriptors = pool_corpus(corpus, config);
  std::ostringstream table;
  table << "participant_id\tlabel\tll_dep\tll_ndep\tN\tn_dep_votes\tP\tdecision\n";
  for (std::size_t i = 0; i < corpus.clips.size(); ++i) {
    const AuClip& clip = corpus.clips[i];
    const FusionResult r = fuse(score_clip(gmms, classifier, clip, descriptors[i]), config.fusion);
    table << clip.participant_id << '\t' << (clip.label ? label_name(*clip.label) : "unknown") << '\t'
          << format_double(r.ll_dep) << '\t' << format_double(r.ll_ndep) << '\t' << r.n_segments << '\t'
          << r.n_dep_votes << '\t' << format_double(r.score) << '\t' << label_name(r.decision) << '\n';
  }

  Outputs outputs;
  outputs.add("scores.tsv", table.str());
  outputs.add(kProvenanceName, dump(provenance("score", to_json(config), config.seed,
                                               {{"corpus", corpus_path}, {"models", models_dir}})));
  outputs.commit(c.out_dir);
  out << "scored " << corpus.clips.size() << " clips\n";
  return kExitOk;
}

std::string summary(const LoocvReport& r) {
  std::ostringstream s;
  s << "GMM " << format_double(100.0 * r.accuracy_gmm) << "%  rank pooling "
    << format_double(100.0 * r.accuracy_rank_pooling) << "%  combined " << format_double(100.0 * r.accuracy_combined)
    << "%\n";
  return s.str();
}

void add_report(Outputs& outputs, const LoocvReport& report, const FusionConfig& fusion) {
  outputs.add("report.txt", render_report(report));
  outputs.add("fusion.tsv", render_fusion_table(report.folds, fusion));
  outputs.add("report.json", dump(to_json(report)));
}

int cmd_loocv(const std::string& corpus_path, bool use_synth, const SynthFlags& s, const Common& c,
              std::ostream& out) {
  if (use_synth == !corpus_path.empty()) throw UsageError("give exactly one of --corpus and --synth");
  const PipelineConfig config = resolve(c.pipeline);
  json inputs;
  Corpus corpus;
  if (use_synth) {
    s.config.validate(config.window);
    corpus = synth_corpus(s.config, config.window);
    inputs["synth"] = to_json(s.config);
  } else {
    corpus = load_corpus(corpus_path);
    inputs["corpus"] = corpus_path;
  }

  Outputs outputs;
  std::mutex lock;
  LoocvHooks hooks;
  hooks.on_models = [&](const AuClip& held, const FoldModels& m) {
    const std::string dir = "models/" + held.participant_id + "/";
    std::string dep = gmm_file_text(m.dep, m.em_dep);
    std::string ndep = gmm_file_text(m.ndep, m.em_ndep);
    std::string mlp = classifier_file_text(m.classifier);
    std::lock_guard guard(lock);
    outputs.add(dir + "gmm_dep.json", std::move(dep));
    outputs.add(dir + "gmm_ndep.json", std::move(ndep));
    outputs.add(dir + "mlp.json", std::move(mlp));
    if (m.frame_scaler) outputs.add(dir + "frame_scaler.json", dump(to_json(*m.frame_scaler)));
  };
  const LoocvReport report = loocv(corpus, config, hooks);

  add_report(outputs, report, config.fusion);
  outputs.add(kProvenanceName, dump(provenance("loocv", to_json(config), config.seed, inputs)));
  outputs.commit(c.out_dir);
  out << report.rows.size() << " folds: " << summary(report);
  return kExitOk;
}

LoocvReport load_report(const std::string& path) {
  require_exists(path, "report");
  return report_from_json(read_json(path));
}

int cmd_sweep(const std::string& report_path, const std::vector<double>& omegas, const Common& c, std::ostream& out) {
  if (omegas.empty()) throw UsageError("--omegas needs at least one value");
  const LoocvReport report = load_report(report_path);
  const PipelineConfig config = resolve(c.pipeline, report.config);
  const auto rows = sweep_omega(report.folds, omegas, config.fusion);

  json cfg = to_json(config);
  cfg["omegas"] = omegas;
  Outputs outputs;
  outputs.add("sweep.tsv", sweep_text(rows));
  outputs.add(kProvenanceName, dump(provenance("sweep", cfg, config.seed, {{"report", report_path}})));
  outputs.commit(c.out_dir);
  out << "swept " << rows.size() << " omega values over " << report.folds.size() << " cached folds\n";
  return kExitOk;
}

int cmd_report(const std::string& report_path, const Common& c, std::ostream& out) {
  LoocvReport cached = load_report(report_path);
  const PipelineConfig config = resolve(c.pipeline, cached.config);
  const LoocvReport report = assemble_report(std::move(cached.folds), std::move(cached.hashes), config);

  Outputs outputs;
  add_report(outputs, report, config.fusion);
  outputs.add(kProvenanceName, dump(provenance("report", to_json(config), config.seed, {{"report", report_path}})));
  outputs.commit(c.out_dir);
  out << summary(report);
  return kExitOk;
}

bool is_validation(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidConfig:
    case ErrorKind::ConfigIncomplete:
    case ErrorKind::MissingColumn:
    case ErrorKind::ParseError:
    case ErrorKind::EmptyClip:
    case ErrorKind::ClipTooShort:
      return true;
    default:
      return false;
  }
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Depression classification from facial action unit time series"};
  app.name("audep");
  app.set_version_flag("--version", std::string(AUDEP_VERSION));
  app.require_subcommand(1);
  app.footer("Frames carry 17 AU intensity channels. Exit codes: 0 success, 1 runtime failure, 2 usage error.");

  Common common;
  SynthFlags synth;
  std::string corpus_path;
  std::string descriptor_path;
  std::string models_dir;
  std::string report_path;
  std::vector<double> omegas;
  bool use_synth = false;
  std::function<int()> action;

  CLI::App* synth_cmd = app.add_subcommand("synth", "Generate a synthetic labelled corpus");
  add_out(synth_cmd, common);
  add_synth_flags(synth_cmd, synth, "--seed");
  synth_cmd->add_option("--window", synth.window, "Segment length the corpus must support")->capture_default_str();
  synth_cmd->callback([&] { action = [&] { return cmd_synth(synth, common, out); }; });

  CLI::App* fit_cmd = app.add_subcommand("fit-gmm", "Fit the two class-conditional GMMs on a labelled corpus");
  add_out(fit_cmd, common);
  fit_cmd->add_option("--corpus", corpus_path, "Corpus directory or manifest")->required();
  add_pipeline_flags(fit_cmd, common.pipeline);
  fit_cmd->callback([&] { action = [&] { return cmd_fit_gmm(corpus_path, common, out); }; });

  CLI::App* pool_cmd = app.add_subcommand("pool", "Rank-pool every segment of every clip");
  add_out(pool_cmd, common);
  pool_cmd->add_option("--corpus", corpus_path, "Corpus directory or manifest")->required();
  add_pipeline_flags(pool_cmd, common.pipeline);
  pool_cmd->callback([&] { action = [&] { return cmd_pool(corpus_path, common, out); }; });

  CLI::App* mlp_cmd = app.add_subcommand("train-mlp", "Train the segment classifier");
  add_out(mlp_cmd, common);
  mlp_cmd->add_option("--corpus", corpus_path, "Labelled corpus directory or manifest")->required();
  mlp_cmd->add_option("--descriptors", descriptor_path, "Descriptor table from `pool` (pooled on the fly if absent)");
  add_pipeline_flags(mlp_cmd, common.pipeline);
  mlp_cmd->callback([&] { action = [&] { return cmd_train_mlp(corpus_path, descriptor_path, common, out); }; });

  CLI::App* score_cmd = app.add_subcommand("score", "Score clips with trained models");
  add_out(score_cmd, common);
  score_cmd->add_option("--corpus", corpus_path, "Corpus directory or manifest")->required();
  score_cmd->add_option("--models", models_dir, "Directory holding gmm_dep.json, gmm_ndep.json and mlp.json")
      ->required();
  add_pipeline_flags(score_cmd, common.pipeline);
  score_cmd->callback([&] { action = [&] { return cmd_score(corpus_path, models_dir, common, out); }; });

  CLI::App* loocv_cmd = app.add_subcommand("loocv", "Leave-one-out evaluation of all three systems");
  add_out(loocv_cmd, common);
  loocv_cmd->add_option("--corpus", corpus_path, "Corpus directory or manifest");
  loocv_cmd->add_flag("--synth", use_synth, "Evaluate on a synthetic corpus generated in memory");
  add_synth_flags(loocv_cmd, synth, "--data-seed");
  add_pipeline_flags(loocv_cmd, common.pipeline);
  loocv_cmd->callback([&] { action = [&] { return cmd_loocv(corpus_path, use_synth, synth, common, out); }; });

  CLI::App* sweep_cmd = app.add_subcommand("sweep", "Re-fuse cached fold outputs over a list of omega values");
  add_out(sweep_cmd, common);
  sweep_cmd->add_option("--report", report_path, "report.json from loocv")->required();
  sweep_cmd->add_option("--omegas", omegas, "Omega values, comma separated")->delimiter(',');
  sweep_cmd->add_option("--config", common.pipeline.config_file, "JSON config file; explicit flags override it");
  {
    PipelineFlags& f = common.pipeline;
    flag(sweep_cmd, f, "--raw-fusion", "Use the raw log-likelihood gap", [](auto& c) { c.fusion.normalize_by_frames = false; });
  }
  sweep_cmd->callback([&] { action = [&] { return cmd_sweep(report_path, omegas, common, out); }; });

  CLI::App* report_cmd = app.add_subcommand("report", "Re-render a report from cached fold outputs");
  add_out(report_cmd, common);
  report_cmd->add_option("--report", report_path, "report.json from loocv")->required();
  report_cmd->add_option("--config", common.pipeline.config_file, "JSON config file; explicit flags override it");
  add_fusion_flags(report_cmd, common.pipeline);
  report_cmd->callback([&] { action = [&] { return cmd_report(report_path, common, out); }; });

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    return action();
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return is_validation(e.kind()) ? kExitUsage : kExitFailure;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
}

}  // namespace audep::cli

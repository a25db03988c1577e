#include <doctest.h>

#include <map>
#include <mutex>
#include <sstream>

#include "audep/error.hpp"
#include "audep/eval.hpp"
#include "support.hpp"

using namespace audep;
using audep::testing::reference_rows;
using audep::testing::small_pipeline;
using audep::testing::small_synth;

namespace {

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

LoocvReport toy_report() {
  LoocvReport r;
  r.rows = {{"a", Label::Depressed, Label::Depressed, Label::NonDepressed, Label::Depressed},
            {"b", Label::NonDepressed, Label::NonDepressed, Label::NonDepressed, Label::NonDepressed},
            {"c", Label::Depressed, Label::NonDepressed, Label::Depressed, Label::NonDepressed}};
  r.config = to_json(PipelineConfig{});
  r.seed = 7;
  return r;
}

}  // namespace

TEST_CASE("reference decision table tallies") {
  const auto rows = reference_rows();
  REQUIRE(rows.size() == 30);
  CHECK(correct_count(rows, System::Gmm) == 22);
  CHECK(correct_count(rows, System::RankPooling) == 21);
  CHECK(correct_count(rows, System::Combined) == 23);
  CHECK(accuracy(rows, System::Gmm) == 22.0 / 30.0);
  CHECK(accuracy(rows, System::RankPooling) == 21.0 / 30.0);
  CHECK(accuracy(rows, System::Combined) == 23.0 / 30.0);
  CHECK_THROWS_AS(accuracy(std::vector<ReportRow>{}, System::Gmm), Error);
}

TEST_CASE("toy report renders three rows and three accuracy lines") {
  const std::string text = render_report(toy_report());
  const auto lines = lines_of(text);
  std::size_t data = 0, summary = 0;
  bool after_blank = false;
  for (const auto& l : lines) {
    if (l.empty()) {
      after_blank = true;
      continue;
    }
    if (l[0] == '#' || l.rfind("participant_id", 0) == 0 || l.rfind("method", 0) == 0) continue;
    (after_blank ? summary : data) += 1;
  }
  CHECK(data == 3);
  CHECK(summary == 3);
  CHECK(text.find("GMM (clip-level)\t66.7%\t2\t3") != std::string::npos);
  CHECK(text.find("Rank pooling (short-term)\t66.7%\t2\t3") != std::string::npos);
  CHECK(text.find("Combined\t66.7%\t2\t3") != std::string::npos);
}

TEST_CASE("rendered reports parse back to the same decisions") {
  LoocvReport r;
  r.rows = reference_rows();
  r.config = to_json(PipelineConfig{});
  const auto back = parse_report(render_report(r));
  REQUIRE(back.size() == r.rows.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].participant_id == r.rows[i].participant_id);
    CHECK(back[i].label == r.rows[i].label);
    CHECK(back[i].gmm == r.rows[i].gmm);
    CHECK(back[i].rank_pooling == r.rows[i].rank_pooling);
    CHECK(back[i].combined == r.rows[i].combined);
  }
  CHECK_THROWS_AS(parse_report("no table here\n"), Error);
}

TEST_CASE("a report without its configuration is refused") {
  LoocvReport r = toy_report();
  r.config = nlohmann::ordered_json();
  try {
    render_report(r);
    FAIL("expected ConfigIncomplete");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::ConfigIncomplete);
  }
  r.config = nlohmann::ordered_json::object();
  CHECK_THROWS_AS(render_report(r), Error);
  CHECK_THROWS_AS(pipeline_config_from_json(nlohmann::json::object()), Error);
}

TEST_CASE("pipeline config round-trips and excludes the worker count") {
  PipelineConfig c;
  c.window = 90;
  c.stride = 45;
  c.standardize = true;
  c.seed = 99;
  c.jobs = 5;
  c.em.n_components = 8;
  c.rankpool.smooth = false;
  c.mlp.hidden1 = 12;
  c.fusion.omega = 0.5;
  const auto j = to_json(c);
  CHECK_FALSE(j.contains("jobs"));
  const PipelineConfig back = pipeline_config_from_json(nlohmann::json::parse(j.dump()));
  CHECK(to_json(back) == j);
}

TEST_CASE("leave-one-out runs one fold per participant") {
  const Corpus corpus = synth_corpus(small_synth(), 30);
  const PipelineConfig cfg = small_pipeline();
  const LoocvReport r = loocv(corpus, cfg);
  REQUIRE(r.rows.size() == corpus.clips.size());
  REQUIRE(r.folds.size() == corpus.clips.size());
  REQUIRE(r.hashes.size() == corpus.clips.size());
  for (std::size_t i = 0; i < r.rows.size(); ++i) {
    CHECK(r.rows[i].participant_id == corpus.clips[i].participant_id);
    CHECK(r.rows[i].label == *corpus.clips[i].label);
    CHECK(r.rows[i].rank_pooling == majority_vote(r.folds[i].votes));
    CHECK(r.folds[i].votes.size() == 3);
    CHECK(r.folds[i].n_frames == 90);
  }
  CHECK(r.accuracy_gmm == accuracy(r.rows, System::Gmm));
  CHECK(r.accuracy_rank_pooling == accuracy(r.rows, System::RankPooling));
  CHECK(r.accuracy_combined == accuracy(r.rows, System::Combined));
  CHECK(r.seed == cfg.seed);
  // The toy corpus is strongly separable.
  CHECK(r.accuracy_combined >= 0.75);
}

TEST_CASE("fold models never see the held-out clip") {
  const Corpus corpus = synth_corpus(small_synth(11), 30);
  const PipelineConfig cfg = small_pipeline();
  const LoocvReport base = loocv(corpus, cfg);

  for (std::size_t held : {std::size_t{0}, std::size_t{5}}) {
    Corpus altered = corpus;
    altered.clips[held].frames.setConstant(4.0);
    altered.clips[held].frames.col(0).setLinSpaced(0.0, 1.0);
    const LoocvReport other = loocv(altered, cfg);
    CHECK(other.hashes[held] == base.hashes[held]);
    // Every other fold trains on the altered clip, so its models change.
    for (std::size_t i = 0; i < corpus.clips.size(); ++i)
      if (i != held) CHECK(other.hashes[i].gmm_dep + other.hashes[i].gmm_ndep != base.hashes[i].gmm_dep + base.hashes[i].gmm_ndep);
  }
}

TEST_CASE("hooks expose the trained models and their hashes") {
  const Corpus corpus = synth_corpus(small_synth(3), 30);
  PipelineConfig cfg = small_pipeline();
  cfg.standardize = true;
  std::mutex lock;
  std::map<std::string, ModelHashes> seen;
  LoocvHooks hooks;
  hooks.on_models = [&](const AuClip& held, const FoldModels& models) {
    CHECK(models.frame_scaler.has_value());
    std::lock_guard guard(lock);
    seen[held.participant_id] = hash_models(models);
  };
  const LoocvReport r = loocv(corpus, cfg, hooks);
  REQUIRE(seen.size() == corpus.clips.size());
  for (std::size_t i = 0; i < corpus.clips.size(); ++i) CHECK(seen[corpus.clips[i].participant_id] == r.hashes[i]);
}

TEST_CASE("identical inputs give a byte-identical report regardless of worker count") {
  const Corpus corpus = synth_corpus(small_synth(5), 30);
  PipelineConfig cfg = small_pipeline();
  const LoocvReport a = loocv(corpus, cfg);
  cfg.jobs = 3;
  const LoocvReport b = loocv(corpus, cfg);
  CHECK(render_report(a) == render_report(b));
  CHECK(to_json(a).dump() == to_json(b).dump());
  CHECK(render_fusion_table(a.folds, cfg.fusion) == render_fusion_table(b.folds, cfg.fusion));

  cfg.seed = 8;
  const LoocvReport c = loocv(corpus, cfg);
  CHECK(to_json(c).dump() != to_json(a).dump());
}

TEST_CASE("sidecar round-trip reproduces the report") {
  const Corpus corpus = synth_corpus(small_synth(13), 30);
  const LoocvReport r = loocv(corpus, small_pipeline());
  const LoocvReport back = report_from_json(nlohmann::json::parse(to_json(r).dump()));
  CHECK(render_report(back) == render_report(r));
  CHECK(back.hashes == r.hashes);
  REQUIRE(back.folds.size() == r.folds.size());
  for (std::size_t i = 0; i < r.folds.size(); ++i) {
    CHECK(back.folds[i].ll_dep == r.folds[i].ll_dep);
    CHECK(back.folds[i].probs == r.folds[i].probs);
    CHECK(back.folds[i].votes == r.folds[i].votes);
  }
  CHECK_THROWS_AS(report_from_json(nlohmann::json::parse(R"({"format": "other"})")), Error);
}

TEST_CASE("omega zero makes the combined column equal the GMM column") {
  const Corpus corpus = synth_corpus(small_synth(17), 30);
  PipelineConfig cfg = small_pipeline();
  cfg.fusion.omega = 0.0;
  const LoocvReport r = loocv(corpus, cfg);
  for (const auto& row : r.rows) CHECK(row.combined == row.gmm);
}

TEST_CASE("leave-one-out needs two clips of each class") {
  Corpus corpus = synth_corpus(small_synth(), 30);
  corpus.clips.erase(corpus.clips.begin() + 2, corpus.clips.end());  // one per class
  try {
    loocv(corpus, small_pipeline());
    FAIL("expected InsufficientClass");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::InsufficientClass);
  }
  Corpus unlabeled = synth_corpus(small_synth(), 30);
  unlabeled.clips[0].label.reset();
  CHECK_THROWS_AS(loocv(unlabeled, small_pipeline()), Error);
}

TEST_CASE("train_models rejects a one-class split") {
  const Corpus corpus = synth_corpus(small_synth(), 30);
  const auto desc = pool_corpus(corpus, small_pipeline());
  std::vector<const AuClip*> clips{&corpus.clips[0], &corpus.clips[2]};
  std::vector<const std::vector<DynamicDescriptor>*> d{&desc[0], &desc[2]};
  try {
    train_models(clips, d, small_pipeline(), 1);
    FAIL("expected InsufficientClass");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::InsufficientClass);
  }
}

TEST_CASE("fusion table lists the score internals") {
  FoldRecord f;
  f.participant_id = "P001";
  f.label = Label::Depressed;
  f.ll_dep = -100.0;
  f.ll_ndep = -130.0;
  f.n_frames = 300;
  f.votes = {Label::Depressed, Label::NonDepressed, Label::Depressed};
  f.probs = {0.9, 0.2, 0.6};
  const auto lines = lines_of(render_fusion_table(std::vector<FoldRecord>{f}, FusionConfig{}));
  REQUIRE(lines.size() == 2);
  CHECK(lines[0] == "participant_id\tlabel\tll_dep\tll_ndep\tN\tn_dep_votes\tP\tdecision");
  CHECK(lines[1] == "P001\tDepressed\t-100\t-130\t3\t2\t2.1\tDepressed");
}

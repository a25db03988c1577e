#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "audep/error.hpp"
#include "audep/gmm.hpp"
#include "support.hpp"

using namespace audep;
using audep::testing::brute_density;
using audep::testing::gaussian_matrix;
using audep::testing::random_gmm;

namespace {

Eigen::MatrixXd sample_gmm(const GmmModel& m, Eigen::Index n, std::mt19937_64& rng) {
  std::discrete_distribution<int> pick(m.weights.data(), m.weights.data() + m.weights.size());
  std::normal_distribution<double> unit(0.0, 1.0);
  Eigen::MatrixXd out(n, m.dim());
  for (Eigen::Index i = 0; i < n; ++i) {
    const int k = pick(rng);
    for (Eigen::Index d = 0; d < m.dim(); ++d) out(i, d) = m.means(k, d) + std::sqrt(m.variances(k, d)) * unit(rng);
  }
  return out;
}

bool non_decreasing(const std::vector<double>& trace, double slack) {
  for (std::size_t i = 1; i < trace.size(); ++i)
    if (trace[i] < trace[i - 1] - slack) return false;
  return true;
}

}  // namespace

TEST_CASE("standard normal at its mean") {
  GmmModel m;
  m.weights = Eigen::VectorXd::Ones(1);
  m.means = Eigen::MatrixXd::Zero(1, 17);
  m.variances = Eigen::MatrixXd::Ones(1, 17);
  const double expected = std::pow(2.0 * std::numbers::pi, -8.5);
  CHECK(density(m, Eigen::VectorXd::Zero(17)) == doctest::Approx(expected).epsilon(1e-14));
}

TEST_CASE("two identical equally weighted components collapse to one") {
  std::mt19937_64 rng(3);
  const GmmModel single = random_gmm(rng, 1, 17);
  GmmModel twin;
  twin.weights = Eigen::VectorXd::Constant(2, 0.5);
  twin.means = single.means.replicate(2, 1);
  twin.variances = single.variances.replicate(2, 1);
  for (int i = 0; i < 10; ++i) {
    const Eigen::VectorXd x = gaussian_matrix(rng, 17, 1, 0.0, 2.0);
    CHECK(density(twin, x) == doctest::Approx(density(single, x)).epsilon(1e-13));
  }
}

TEST_CASE("density matches brute-force summation on random models") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const GmmModel m = random_gmm(rng, 3, 17);
    const Eigen::VectorXd x = gaussian_matrix(rng, 17, 1, 0.0, 1.5);
    const long double oracle = brute_density(m, x);
    REQUIRE(oracle > 0.0L);
    const double got = density(m, x);
    CHECK(got > 0.0);
    CHECK(std::abs(static_cast<long double>(got) - oracle) / oracle < 1e-10L);
  }
}

TEST_CASE("one-dimensional density integrates to one") {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 5; ++trial) {
    const GmmModel m = random_gmm(rng, 4, 1);
    // Composite Simpson over [-20, 20].
    const int n = 40000;
    const double a = -20.0, h = 40.0 / n;
    double sum = 0.0;
    for (int i = 0; i <= n; ++i) {
      const double w = (i == 0 || i == n) ? 1.0 : (i % 2 ? 4.0 : 2.0);
      sum += w * density(m, Eigen::VectorXd::Constant(1, a + i * h));
    }
    CHECK(std::abs(sum * h / 3.0 - 1.0) < 1e-6);
  }
}

TEST_CASE("log density stays finite far in the tails") {
  GmmModel m;
  m.weights = Eigen::VectorXd::Ones(1);
  m.means = Eigen::MatrixXd::Zero(1, 17);
  m.variances = Eigen::MatrixXd::Constant(1, 17, 1e-4);
  const Eigen::VectorXd far = Eigen::VectorXd::Constant(17, 5.0);
  CHECK(density(m, far) == 0.0);  // underflows in linear space
  const double ll = log_density(m, far);
  CHECK(std::isfinite(ll));
  const double expected = -8.5 * std::log(2.0 * std::numbers::pi * 1e-4) - 17.0 * 25.0 / 2e-4;
  CHECK(ll == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("single-frame log-likelihood equals log density") {
  std::mt19937_64 rng(23);
  const GmmModel m = random_gmm(rng, 5, 17);
  const Eigen::MatrixXd x = gaussian_matrix(rng, 1, 17);
  CHECK(log_likelihood(m, x) == doctest::Approx(std::log(density(m, x.row(0).transpose()))).epsilon(1e-12));
}

TEST_CASE("log-likelihood is additive over frames") {
  std::mt19937_64 rng(29);
  const GmmModel m = random_gmm(rng, 6, 17);
  const Eigen::MatrixXd x = gaussian_matrix(rng, 1, 17);
  Eigen::MatrixXd twice(2, 17);
  twice << x, x;
  CHECK(log_likelihood(m, twice) == 2.0 * log_likelihood(m, x));

  const Eigen::MatrixXd a = gaussian_matrix(rng, 40, 17), b = gaussian_matrix(rng, 25, 17);
  Eigen::MatrixXd ab(65, 17);
  ab << a, b;
  const double whole = log_likelihood(m, ab), parts = log_likelihood(m, a) + log_likelihood(m, b);
  CHECK(std::abs(whole - parts) <= 1e-12 * std::abs(whole));
}

TEST_CASE("log-likelihood agrees with an extended-precision product") {
  std::mt19937_64 rng(31);
  const GmmModel m = random_gmm(rng, 4, 17);
  const Eigen::MatrixXd x = sample_gmm(m, 100, rng);
  long double product = 1.0L;
  for (Eigen::Index i = 0; i < x.rows(); ++i) product *= brute_density(m, x.row(i).transpose());
  REQUIRE(product > 0.0L);
  const long double naive = std::log(product);
  CHECK(std::abs(static_cast<long double>(log_likelihood(m, x)) - naive) / std::abs(naive) < 1e-8L);
}

TEST_CASE("one-component EM recovers the sample moments") {
  std::mt19937_64 rng(37);
  const Eigen::Index n = 2000;
  const Eigen::MatrixXd x = gaussian_matrix(rng, n, 17, 1.5, 0.8);
  EmConfig cfg;
  cfg.n_components = 1;
  const GmmModel m = fit_em(x, cfg);
  const Eigen::RowVectorXd mean = x.colwise().mean();
  const Eigen::RowVectorXd var = (x.rowwise() - mean).array().square().colwise().mean();
  for (Eigen::Index d = 0; d < 17; ++d) {
    CHECK(std::abs(m.means(0, d) - mean(d)) <= 3.0 * std::sqrt(var(d) / n));
    CHECK(std::abs(m.variances(0, d) - var(d)) <= 0.1 * var(d));
  }
  CHECK(m.weights(0) == doctest::Approx(1.0));
}

TEST_CASE("two well-separated clusters are recovered") {
  std::mt19937_64 rng(41);
  const Eigen::Index n_a = 3000, n_b = 7000;
  Eigen::MatrixXd x(n_a + n_b, 17);
  x << gaussian_matrix(rng, n_a, 17, 0.0, 1.0), gaussian_matrix(rng, n_b, 17, 10.0, 1.0);
  EmConfig cfg;
  cfg.n_components = 2;
  cfg.seed = 5;
  const GmmModel m = fit_em(x, cfg);
  const Eigen::Index low = m.means(0, 0) < m.means(1, 0) ? 0 : 1;
  const Eigen::Index high = 1 - low;
  CHECK((m.means.row(low).array() - 0.0).abs().maxCoeff() < 0.1);
  CHECK((m.means.row(high).array() - 10.0).abs().maxCoeff() < 0.1);
  CHECK(std::abs(m.weights(low) - 0.3) < 0.05);
  CHECK(std::abs(m.weights(high) - 0.7) < 0.05);
}

TEST_CASE("EM training log-likelihood never decreases and weights stay normalised") {
  std::mt19937_64 rng(43);
  for (int k : {1, 3, 8}) {
    const Eigen::MatrixXd x = gaussian_matrix(rng, 400, 17) + gaussian_matrix(rng, 400, 17, 0.0, 0.2);
    EmConfig cfg;
    cfg.n_components = k;
    cfg.tol = 1e-8;
    cfg.max_iters = 60;
    cfg.seed = static_cast<std::uint64_t>(k);
    EmTrace trace;
    const GmmModel m = fit_em(x, cfg, &trace);
    REQUIRE(trace.runs.size() == 3);
    for (const auto& run : trace.runs) {
      CHECK(run.log_likelihood.size() >= 2);
      CHECK(non_decreasing(run.log_likelihood, 1e-7));
    }
    CHECK(std::abs(m.weights.sum() - 1.0) < 1e-9);
    CHECK((m.weights.array() > 0.0).all());
    CHECK((m.variances.array() >= cfg.variance_floor).all());
    // The returned model is the best restart.
    double best = -INFINITY;
    for (const auto& run : trace.runs) best = std::max(best, run.log_likelihood.back());
    CHECK(trace.runs[trace.best_run].log_likelihood.back() == best);
    CHECK(log_likelihood(m, x) == doctest::Approx(best).epsilon(1e-9));
  }
}

TEST_CASE("EM is deterministic given seed and config") {
  std::mt19937_64 rng(47);
  const Eigen::MatrixXd x = gaussian_matrix(rng, 300, 17);
  EmConfig cfg;
  cfg.n_components = 4;
  cfg.seed = 9;
  const GmmModel a = fit_em(x, cfg), b = fit_em(x, cfg);
  CHECK(a.weights == b.weights);
  CHECK(a.means == b.means);
  CHECK(a.variances == b.variances);
  cfg.seed = 10;
  CHECK(fit_em(x, cfg).means != a.means);
}

TEST_CASE("EM preconditions and degenerate data") {
  std::mt19937_64 rng(53);
  Eigen::MatrixXd x = gaussian_matrix(rng, 50, 17);
  EmConfig cfg;
  CHECK_THROWS_AS(fit_em(x.topRows(31), cfg), Error);  // 31 frames < 32 components

  x.col(4).setConstant(2.0);
  cfg.n_components = 3;
  CHECK_NOTHROW(fit_em(x, cfg));  // the floor absorbs the constant column
  cfg.variance_floor = 0.0;
  try {
    fit_em(x, cfg);
    FAIL("expected DegenerateData");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::DegenerateData);
  }
  cfg.n_components = 1;
  CHECK_THROWS_AS(fit_em(x, cfg), Error);  // a single component still has zero variance there

  EmConfig bad;
  bad.tol = 0.0;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = {};
  bad.n_components = 0;
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("identical class models tie and resolve to non-depressed") {
  std::mt19937_64 rng(59);
  const GmmModel m = random_gmm(rng, 4, 17);
  const Eigen::MatrixXd x = gaussian_matrix(rng, 30, 17);
  const PairScore s = score_pair(m, m, x);
  CHECK(s.ll_dep == s.ll_ndep);
  CHECK(s.decision() == Label::NonDepressed);
}

TEST_CASE("a clip drawn from the depressed model scores higher under it") {
  std::mt19937_64 rng(61);
  for (int trial = 0; trial < 10; ++trial) {
    GmmModel dep = random_gmm(rng, 3, 17);
    GmmModel ndep = random_gmm(rng, 3, 17);
    ndep.means.array() += 2.0;
    const AuClip clip = audep::testing::make_clip("s", sample_gmm(dep, 50, rng));
    const PairScore s = score_pair(dep, ndep, clip);
    CHECK(s.ll_dep > s.ll_ndep);
    CHECK(s.decision() == Label::Depressed);
  }
}

TEST_CASE("scoring requires 17-dimensional models") {
  std::mt19937_64 rng(67);
  const GmmModel narrow = random_gmm(rng, 2, 5);
  CHECK_THROWS_AS(score_pair(narrow, narrow, Eigen::MatrixXd::Zero(3, 5)), Error);
  const GmmModel m = random_gmm(rng, 2, 17);
  CHECK_THROWS_AS(log_likelihood(m, Eigen::MatrixXd::Zero(3, 16)), Error);
}

TEST_CASE("model files reload bit-exactly") {
  std::mt19937_64 rng(71);
  const Eigen::MatrixXd x = gaussian_matrix(rng, 200, 17);
  EmConfig cfg;
  cfg.n_components = 3;
  cfg.seed = 1234567890123ULL;
  const GmmModel m = fit_em(x, cfg);
  const auto dir = audep::testing::scratch_dir("gmm_io");
  save_gmm(dir / "m.json", m, cfg);
  EmConfig back_cfg;
  const GmmModel back = load_gmm(dir / "m.json", &back_cfg);
  CHECK(back.weights == m.weights);
  CHECK(back.means == m.means);
  CHECK(back.variances == m.variances);
  CHECK(back_cfg.seed == cfg.seed);
  CHECK(back_cfg.n_components == 3);
  CHECK(back_cfg.tol == cfg.tol);

  const auto j = to_json(m, cfg);
  CHECK(j.at("n").get<int>() == 3);
  CHECK(j.at("version").get<int>() == kGmmFormatVersion);
  CHECK_THROWS_AS(load_gmm(dir / "absent.json"), Error);
  std::filesystem::remove_all(dir);
}

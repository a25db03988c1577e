#include "audep/gmm.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <random>

#include "audep/error.hpp"
#include "audep/util.hpp"

namespace audep {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;  // ln(2*pi)

// Per-component constants for the direct (row-at-a-time) evaluation path.
struct Prepared {
  Eigen::VectorXd log_const;  // ln w_k - 0.5 * sum_d ln(2 pi v_kd)
  Eigen::MatrixXd precision;  // 1 / v_kd
};

Prepared prepare(const GmmModel& model) {
  Prepared p;
  p.precision = model.variances.cwiseInverse();
  p.log_const = model.weights.array().log() -
                0.5 * (model.variances.array().log() + kLog2Pi).rowwise().sum();
  return p;
}

double row_log_density(const GmmModel& model, const Prepared& prep, const Eigen::Ref<const Eigen::RowVectorXd>& x,
                       Eigen::VectorXd& scratch) {
  scratch = prep.log_const -
            0.5 * ((model.means.rowwise() - x).array().square() * prep.precision.array()).rowwise().sum().matrix();
  const double top = scratch.maxCoeff();
  if (!std::isfinite(top)) return top;
  return top + std::log((scratch.array() - top).exp().sum());
}

// Fixed state for one EM fit on centred data: features = [x, x^2] so that
// each E-step and M-step is a single matrix product.
struct EmData {
  Eigen::MatrixXd features;
  Eigen::Index dim = 0;

  auto x() const { return features.leftCols(dim); }
  auto x_sq() const { return features.rightCols(dim); }
};

// E-step: fills `resp` (components x frames) with responsibilities and
// returns the total log-likelihood.
double expectation(const EmData& data, const GmmModel& model, Eigen::MatrixXd& resp) {
  const Eigen::MatrixXd precision = model.variances.cwiseInverse();
  const Eigen::MatrixXd mean_prec = model.means.cwiseProduct(precision);
  const Eigen::VectorXd log_const =
      model.weights.array().log() -
      0.5 * ((model.variances.array().log() + kLog2Pi) + model.means.array().square() * precision.array())
                .rowwise()
                .sum();

  Eigen::MatrixXd coef(model.n_components(), 2 * data.dim);
  coef << mean_prec, -0.5 * precision;
  resp.noalias() = coef * data.features.transpose();
  resp.colwise() += log_const;

  const Eigen::RowVectorXd top = resp.colwise().maxCoeff();
  resp.rowwise() -= top;
  resp = resp.array().exp();
  const Eigen::RowVectorXd sum = resp.colwise().sum();
  resp.array().rowwise() /= sum.array();
  return top.sum() + sum.array().log().sum();
}

void maximization(const EmData& data, const Eigen::MatrixXd& resp, double variance_floor, GmmModel& model) {
  const Eigen::VectorXd nk = resp.rowwise().sum().array() + 10.0 * std::numeric_limits<double>::epsilon();
  model.weights = nk / nk.sum();
  Eigen::MatrixXd moments = resp * data.features;
  moments.array().colwise() /= nk.array();
  model.means = moments.leftCols(data.dim);
  model.variances = moments.rightCols(data.dim);
  model.variances -= model.means.cwiseAbs2();
  model.variances = model.variances.cwiseMax(variance_floor);
  if (variance_floor <= 0.0 && (model.variances.array() <= 0.0).any()) {
    throw Error(ErrorKind::DegenerateData, "a mixture component collapsed to zero variance");
  }
}

Eigen::MatrixXd kmeanspp_centres(const Eigen::Ref<const Eigen::MatrixXd>& x, Eigen::Index k, std::mt19937_64& rng) {
  const Eigen::Index n = x.rows();
  Eigen::MatrixXd centres(k, x.cols());
  std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  centres.row(0) = x.row(pick(rng));
  Eigen::VectorXd dist = (x.rowwise() - centres.row(0)).rowwise().squaredNorm();
  for (Eigen::Index c = 1; c < k; ++c) {
    const double total = dist.sum();
    Eigen::Index chosen = 0;
    if (total > 0.0) {
      const double target = unit(rng) * total;
      double acc = 0.0;
      chosen = n - 1;
      for (Eigen::Index i = 0; i < n; ++i) {
        acc += dist(i);
        if (acc > target) {
          chosen = i;
          break;
        }
      }
    } else {
      chosen = pick(rng);
    }
    centres.row(c) = x.row(chosen);
    dist = dist.cwiseMin((x.rowwise() - centres.row(c)).rowwise().squaredNorm());
  }
  return centres;
}

struct RunResult {
  GmmModel model;
  EmRun run;
};

RunResult run_em(const EmData& data, const EmConfig& config, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const Eigen::Index k = config.n_components;
  const Eigen::Index n = data.features.rows();

  GmmModel model;
  model.means = kmeanspp_centres(data.x(), k, rng);
  model.weights = Eigen::VectorXd::Constant(k, 1.0 / static_cast<double>(k));
  // Data is centred, so the per-column variance is the mean of squares.
  const Eigen::RowVectorXd column_var = data.x_sq().colwise().sum() / static_cast<double>(n);
  model.variances = column_var.replicate(k, 1).cwiseMax(config.variance_floor);
  if (config.variance_floor <= 0.0 && (model.variances.array() <= 0.0).any()) {
    throw Error(ErrorKind::DegenerateData, "zero-variance AU column");
  }

  Eigen::MatrixXd resp(k, n);
  RunResult result;
  double ll = expectation(data, model, resp);
  result.run.log_likelihood.push_back(ll);
  for (int iter = 0; iter < config.max_iters; ++iter) {
    maximization(data, resp, config.variance_floor, model);
    const double next = expectation(data, model, resp);
    result.run.log_likelihood.push_back(next);
    const bool done = next - ll < config.tol * std::abs(ll);
    ll = next;
    if (done) {
      result.run.converged = true;
      break;
    }
  }
  result.model = std::move(model);
  return result;
}

}  // namespace

void EmConfig::validate() const {
  if (n_components < 1) throw Error(ErrorKind::InvalidConfig, "n_components must be >= 1");
  if (max_iters < 0) throw Error(ErrorKind::InvalidConfig, "max_iters must be >= 0");
  if (!(tol > 0.0)) throw Error(ErrorKind::InvalidConfig, "tol must be > 0");
  if (!(variance_floor >= 0.0)) throw Error(ErrorKind::InvalidConfig, "variance_floor must be >= 0");
  if (n_init < 1) throw Error(ErrorKind::InvalidConfig, "n_init must be >= 1");
}

void GmmModel::validate() const {
  const auto k = weights.size();
  if (k < 1 || means.rows() != k || variances.rows() != k || variances.cols() != means.cols()) {
    throw Error(ErrorKind::InvalidConfig, "inconsistent GMM parameter shapes");
  }
  if ((weights.array() <= 0.0).any() || std::abs(weights.sum() - 1.0) > 1e-9) {
    throw Error(ErrorKind::InvalidConfig, "mixture weights must be positive and sum to 1");
  }
  if ((variances.array() <= 0.0).any() || !means.allFinite() || !variances.allFinite()) {
    throw Error(ErrorKind::InvalidConfig, "GMM variances must be positive and finite");
  }
}

double log_density(const GmmModel& model, const Eigen::VectorXd& x) {
  const Prepared prep = prepare(model);
  Eigen::VectorXd scratch;
  return row_log_density(model, prep, x.transpose(), scratch);
}

double density(const GmmModel& model, const Eigen::VectorXd& x) { return std::exp(log_density(model, x)); }

double log_likelihood(const GmmModel& model, const Eigen::MatrixXd& frames) {
  if (frames.cols() != model.dim()) throw Error(ErrorKind::InvalidConfig, "frame width does not match model");
  const Prepared prep = prepare(model);
  Eigen::VectorXd scratch;
  double total = 0.0;
  for (Eigen::Index n = 0; n < frames.rows(); ++n) {
    total += row_log_density(model, prep, frames.row(n), scratch);
  }
  return total;
}

GmmModel fit_em(const Eigen::MatrixXd& frames, const EmConfig& config, EmTrace* trace) {
  config.validate();
  if (frames.rows() < config.n_components) {
    throw Error(ErrorKind::InvalidConfig, "need at least n_components frames (" + std::to_string(frames.rows()) +
                                              " < " + std::to_string(config.n_components) + ")");
  }
  if (!frames.allFinite()) throw Error(ErrorKind::ParseError, "non-finite training frame");

  const Eigen::RowVectorXd centre = frames.colwise().mean();
  const Eigen::MatrixXd centred = frames.rowwise() - centre;
  if (config.variance_floor <= 0.0 && config.n_components > 1) {
    const Eigen::RowVectorXd spread = centred.cwiseAbs().colwise().maxCoeff();
    if ((spread.array() == 0.0).any()) {
      throw Error(ErrorKind::DegenerateData, "an AU column has zero variance and variance_floor is 0");
    }
  }
  EmData data;
  data.dim = frames.cols();
  data.features.resize(frames.rows(), 2 * data.dim);
  data.features << centred, centred.cwiseAbs2();

  if (trace) trace->runs.clear();
  GmmModel best;
  double best_ll = -std::numeric_limits<double>::infinity();
  for (int r = 0; r < config.n_init; ++r) {
    RunResult result = run_em(data, config, mix_seed(config.seed, static_cast<std::uint64_t>(r)));
    const double final_ll = result.run.log_likelihood.back();
    if (r == 0 || final_ll > best_ll) {
      best_ll = final_ll;
      best = std::move(result.model);
      if (trace) trace->best_run = static_cast<std::size_t>(r);
    }
    if (trace) trace->runs.push_back(std::move(result.run));
  }
  best.means.rowwise() += centre;
  return best;
}

PairScore score_pair(const GmmModel& dep, const GmmModel& ndep, const Eigen::MatrixXd& frames) {
  if (dep.dim() != kNumAus || ndep.dim() != kNumAus) {
    throw Error(ErrorKind::InvalidConfig, "GMMs must be over 17 AU dimensions");
  }
  return {log_likelihood(dep, frames), log_likelihood(ndep, frames)};
}

PairScore score_pair(const GmmModel& dep, const GmmModel& ndep, const AuClip& clip) {
  return score_pair(dep, ndep, clip.frames);
}

nlohmann::ordered_json to_json(const EmConfig& config) {
  nlohmann::ordered_json j;
  j["n_components"] = config.n_components;
  j["max_iters"] = config.max_iters;
  j["tol"] = config.tol;
  j["variance_floor"] = config.variance_floor;
  j["seed"] = config.seed;
  j["n_init"] = config.n_init;
  return j;
}

EmConfig em_config_from_json(const nlohmann::json& j) {
  EmConfig c;
  c.n_components = j.at("n_components").get<int>();
  c.max_iters = j.at("max_iters").get<int>();
  c.tol = j.at("tol").get<double>();
  c.variance_floor = j.at("variance_floor").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.n_init = j.at("n_init").get<int>();
  return c;
}

namespace {

nlohmann::ordered_json matrix_json(const Eigen::MatrixXd& m) {
  auto rows = nlohmann::ordered_json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    auto row = nlohmann::ordered_json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

Eigen::MatrixXd matrix_from_json(const nlohmann::json& j, Eigen::Index rows, Eigen::Index cols) {
  if (static_cast<Eigen::Index>(j.size()) != rows) throw Error(ErrorKind::ParseError, "matrix row count mismatch");
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const auto& row = j.at(static_cast<std::size_t>(r));
    if (static_cast<Eigen::Index>(row.size()) != cols) throw Error(ErrorKind::ParseError, "matrix column count mismatch");
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = row.at(static_cast<std::size_t>(c)).get<double>();
  }
  return m;
}

}  // namespace

nlohmann::ordered_json to_json(const GmmModel& model, const EmConfig& config) {
  nlohmann::ordered_json j;
  j["format"] = "audep-gmm";
  j["version"] = kGmmFormatVersion;
  j["n"] = model.n_components();
  j["dim"] = model.dim();
  j["weights"] = std::vector<double>(model.weights.data(), model.weights.data() + model.weights.size());
  j["means"] = matrix_json(model.means);
  j["variances"] = matrix_json(model.variances);
  j["em_config"] = to_json(config);
  return j;
}

GmmModel gmm_from_json(const nlohmann::json& j, EmConfig* config) {
  try {
    if (j.at("format").get<std::string>() != "audep-gmm" || j.at("version").get<int>() != kGmmFormatVersion) {
      throw Error(ErrorKind::ParseError, "not a version-1 audep GMM file");
    }
    const auto n = j.at("n").get<Eigen::Index>();
    const auto dim = j.at("dim").get<Eigen::Index>();
    GmmModel model;
    const auto weights = j.at("weights").get<std::vector<double>>();
    if (static_cast<Eigen::Index>(weights.size()) != n) throw Error(ErrorKind::ParseError, "weight count mismatch");
    model.weights = Eigen::Map<const Eigen::VectorXd>(weights.data(), n);
    model.means = matrix_from_json(j.at("means"), n, dim);
    model.variances = matrix_from_json(j.at("variances"), n, dim);
    model.validate();
    if (config) *config = em_config_from_json(j.at("em_config"));
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::ParseError, std::string("GMM file: ") + e.what());
  }
}

void save_gmm(const std::filesystem::path& path, const GmmModel& model, const EmConfig& config) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  out << to_json(model, config).dump(1) << '\n';
}

GmmModel load_gmm(const std::filesystem::path& path, EmConfig* config) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
  try {
    return gmm_from_json(nlohmann::json::parse(in), config);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::ParseError, path.string() + ": " + e.what());
  }
}

}  // namespace audep

#include "audep/rankpool.hpp"

#include <charconv>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>

#include "audep/error.hpp"
#include "audep/util.hpp"

namespace audep {

namespace {

constexpr int kMaxHalvings = 60;

// Adds the hinge subgradient coefficients: coef[a] counts active pairs with a
// as the later frame minus active pairs with a as the earlier frame.
void active_pair_coefficients(const Eigen::VectorXd& scores, double margin, Eigen::VectorXd& coef) {
  const Eigen::Index n = scores.size();
  coef.setZero(n);
  const double* s = scores.data();
  double* c = coef.data();
  for (Eigen::Index a = 1; a < n; ++a) {
    const double threshold = s[a] - margin;
    double later = 0.0;
    for (Eigen::Index b = 0; b < a; ++b) {
      const double active = s[b] > threshold ? 1.0 : 0.0;
      later += active;
      c[b] -= active;
    }
    c[a] += later;
  }
}

double hinge_sum(const Eigen::VectorXd& scores, double margin) {
  const Eigen::Index n = scores.size();
  const double* s = scores.data();
  double total = 0.0;
  for (Eigen::Index a = 1; a < n; ++a) {
    const double shifted = margin - s[a];
    for (Eigen::Index b = 0; b < a; ++b) {
      const double h = shifted + s[b];
      total += h > 0.0 ? h : 0.0;
    }
  }
  return total;
}

}  // namespace

void RankPoolConfig::validate() const {
  if (!(margin > 0.0)) throw Error(ErrorKind::InvalidConfig, "rank-pooling margin must be > 0");
  if (!(reg_c > 0.0)) throw Error(ErrorKind::InvalidConfig, "rank-pooling reg_c must be > 0");
  if (max_epochs < 0) throw Error(ErrorKind::InvalidConfig, "max_epochs must be >= 0");
  if (!(step_size > 0.0)) throw Error(ErrorKind::InvalidConfig, "step_size must be > 0");
  if (!(tol >= 0.0)) throw Error(ErrorKind::InvalidConfig, "tol must be >= 0");
}

Eigen::MatrixXd running_mean(const Eigen::MatrixXd& frames) {
  Eigen::MatrixXd out(frames.rows(), frames.cols());
  Eigen::RowVectorXd sum = Eigen::RowVectorXd::Zero(frames.cols());
  for (Eigen::Index a = 0; a < frames.rows(); ++a) {
    sum += frames.row(a);
    out.row(a) = sum / static_cast<double>(a + 1);
  }
  return out;
}

double rank_objective(const Eigen::VectorXd& d, const Eigen::MatrixXd& smoothed, double margin, double reg_c) {
  const Eigen::VectorXd scores = smoothed * d;
  return 0.5 * d.squaredNorm() + reg_c * hinge_sum(scores, margin);
}

DynamicDescriptor rank_pool(const Segment& segment, const RankPoolConfig& config, std::vector<double>* objective_trace) {
  config.validate();
  if (segment.frames.rows() < 2) {
    throw Error(ErrorKind::SegmentTooShort, segment.source_id + ": segment needs at least 2 frames");
  }
  const Eigen::MatrixXd v = config.smooth ? running_mean(segment.frames) : segment.frames;

  Eigen::VectorXd d = Eigen::VectorXd::Zero(v.cols());
  Eigen::VectorXd scores(v.rows());
  Eigen::VectorXd coef;
  Eigen::VectorXd candidate(v.cols());
  double objective = rank_objective(d, v, config.margin, config.reg_c);
  if (objective_trace) {
    objective_trace->clear();
    objective_trace->push_back(objective);
  }

  for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
    scores.noalias() = v * d;
    active_pair_coefficients(scores, config.margin, coef);
    const Eigen::VectorXd grad = d - config.reg_c * (v.transpose() * coef);
    if (grad.squaredNorm() == 0.0) break;

    double step = config.step_size / static_cast<double>(epoch + 1);
    bool accepted = false;
    bool converged = false;
    for (int h = 0; h < kMaxHalvings; ++h, step *= 0.5) {
      candidate = d - step * grad;
      const double value = rank_objective(candidate, v, config.margin, config.reg_c);
      if (value <= objective) {
        converged = objective - value <= config.tol * objective;
        d = candidate;
        objective = value;
        accepted = true;
        break;
      }
    }
    if (!accepted) break;
    if (objective_trace) objective_trace->push_back(objective);
    if (converged) break;
  }
  return {std::move(d), segment.source_id, segment.start_index};
}

double order_agreement(const Eigen::VectorXd& d, const Segment& segment, bool smooth) {
  const Eigen::Index n = segment.frames.rows();
  if (n < 2) throw Error(ErrorKind::SegmentTooShort, "order agreement needs at least 2 frames");
  if (d.size() != segment.frames.cols()) throw Error(ErrorKind::InvalidConfig, "kernel width mismatch");
  const Eigen::VectorXd scores = (smooth ? running_mean(segment.frames) : segment.frames) * d;
  double agree = 0.0;
  for (Eigen::Index a = 1; a < n; ++a) {
    for (Eigen::Index b = 0; b < a; ++b) agree += scores(a) > scores(b) ? 1.0 : 0.0;
  }
  return agree / (0.5 * static_cast<double>(n) * static_cast<double>(n - 1));
}

std::vector<DynamicDescriptor> pool_clip(const AuClip& clip, Eigen::Index window, Eigen::Index stride,
                                         const RankPoolConfig& config) {
  std::vector<DynamicDescriptor> out;
  for (const auto& segment : segment_clip(clip, window, stride)) out.push_back(rank_pool(segment, config));
  return out;
}

void write_descriptors(std::ostream& out, std::span<const DynamicDescriptor> descriptors) {
  out << "source_id\tstart_index";
  for (auto name : kAuColumnNames) out << "\td_" << name.substr(0, name.size() - 2);
  out << '\n';
  for (const auto& desc : descriptors) {
    if (desc.d.size() != kNumAus) throw Error(ErrorKind::InvalidConfig, "descriptor must have 17 entries");
    out << desc.source_id << '\t' << desc.start_index;
    for (Eigen::Index j = 0; j < desc.d.size(); ++j) out << '\t' << format_double(desc.d(j));
    out << '\n';
  }
}

std::vector<DynamicDescriptor> read_descriptors(std::istream& in) {
  std::vector<DynamicDescriptor> out;
  std::string line;
  if (!std::getline(in, line)) return out;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream fields(line);
    std::string cell;
    DynamicDescriptor desc;
    std::vector<double> values;
    int column = 0;
    while (std::getline(fields, cell, '\t')) {
      if (column == 0) {
        desc.source_id = cell;
      } else {
        double value = 0.0;
        const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), value);
        if (ec != std::errc{} || ptr != cell.data() + cell.size()) {
          throw Error(ErrorKind::ParseError, "descriptor line " + std::to_string(line_no) + ": bad number");
        }
        if (column == 1) {
          desc.start_index = static_cast<Eigen::Index>(value);
        } else {
          values.push_back(value);
        }
      }
      ++column;
    }
    if (static_cast<Eigen::Index>(values.size()) != kNumAus) {
      throw Error(ErrorKind::ParseError, "descriptor line " + std::to_string(line_no) + ": expected 17 weights");
    }
    desc.d = Eigen::Map<const Eigen::VectorXd>(values.data(), kNumAus);
    out.push_back(std::move(desc));
  }
  return out;
}

nlohmann::ordered_json to_json(const RankPoolConfig& config) {
  nlohmann::ordered_json j;
  j["margin"] = config.margin;
  j["reg_c"] = config.reg_c;
  j["max_epochs"] = config.max_epochs;
  j["step_size"] = config.step_size;
  j["tol"] = config.tol;
  j["smooth"] = config.smooth;
  return j;
}

RankPoolConfig rankpool_config_from_json(const nlohmann::json& j) {
  RankPoolConfig c;
  c.margin = j.at("margin").get<double>();
  c.reg_c = j.at("reg_c").get<double>();
  c.max_epochs = j.at("max_epochs").get<int>();
  c.step_size = j.at("step_size").get<double>();
  c.tol = j.at("tol").get<double>();
  c.smooth = j.at("smooth").get<bool>();
  return c;
}

}  // namespace audep

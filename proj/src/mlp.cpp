#include "audep/mlp.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "audep/error.hpp"
#include "audep/util.hpp"

namespace audep {

namespace {

double logistic(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

Eigen::MatrixXd relu(const Eigen::MatrixXd& z) { return z.cwiseMax(0.0); }

Eigen::MatrixXd dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double keep = 1.0 - rate;
  const double scale = 1.0 / keep;
  Eigen::MatrixXd mask(rows, cols);
  for (Eigen::Index c = 0; c < cols; ++c) {
    for (Eigen::Index r = 0; r < rows; ++r) mask(r, c) = unit(rng) < keep ? scale : 0.0;
  }
  return mask;
}

// Shared forward/backward pass. Masks, when given, multiply the hidden activations.
double forward_backward(const MlpModel& model, const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                        const Eigen::VectorXd& w, const Eigen::MatrixXd* mask1, const Eigen::MatrixXd* mask2,
                        MlpGradients* grad) {
  const auto& [l1, l2, l3] = model.layers;
  const auto batch = x.rows();
  const double inv_batch = 1.0 / static_cast<double>(batch);

  const Eigen::MatrixXd z1 = (x * l1.weights.transpose()).rowwise() + l1.bias.transpose();
  Eigen::MatrixXd a1 = relu(z1);
  if (mask1) a1 = a1.cwiseProduct(*mask1);
  const Eigen::MatrixXd z2 = (a1 * l2.weights.transpose()).rowwise() + l2.bias.transpose();
  Eigen::MatrixXd a2 = relu(z2);
  if (mask2) a2 = a2.cwiseProduct(*mask2);
  const Eigen::VectorXd z3 = (a2 * l3.weights.transpose()).col(0).array() + l3.bias(0);

  double loss = 0.0;
  Eigen::VectorXd dz3(batch);
  for (Eigen::Index i = 0; i < batch; ++i) {
    loss += w(i) * (softplus(z3(i)) - y(i) * z3(i));
    dz3(i) = w(i) * (logistic(z3(i)) - y(i)) * inv_batch;
  }
  loss *= inv_batch;
  if (!grad) return loss;

  auto& [g1, g2, g3] = *grad;
  g3.weights = dz3.transpose() * a2;
  g3.bias = Eigen::VectorXd::Constant(1, dz3.sum());

  Eigen::MatrixXd da2 = dz3 * l3.weights;
  if (mask2) da2 = da2.cwiseProduct(*mask2);
  const Eigen::MatrixXd dz2 = da2.cwiseProduct((z2.array() > 0.0).cast<double>().matrix());
  g2.weights = dz2.transpose() * a1;
  g2.bias = dz2.colwise().sum().transpose();

  Eigen::MatrixXd da1 = dz2 * l2.weights;
  if (mask1) da1 = da1.cwiseProduct(*mask1);
  const Eigen::MatrixXd dz1 = da1.cwiseProduct((z1.array() > 0.0).cast<double>().matrix());
  g1.weights = dz1.transpose() * x;
  g1.bias = dz1.colwise().sum().transpose();
  return loss;
}

void apply_update(MlpModel& model, const MlpGradients& grad, double learning_rate) {
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    model.layers[i].weights -= learning_rate * grad[i].weights;
    model.layers[i].bias -= learning_rate * grad[i].bias;
  }
}

Eigen::VectorXd example_weights(std::span<const Label> labels, bool balanced) {
  const auto n = static_cast<Eigen::Index>(labels.size());
  Eigen::VectorXd w = Eigen::VectorXd::Ones(n);
  if (!balanced) return w;
  const auto n_dep = std::count(labels.begin(), labels.end(), Label::Depressed);
  const double dep_w = static_cast<double>(n) / (2.0 * static_cast<double>(n_dep));
  const double ndep_w = static_cast<double>(n) / (2.0 * static_cast<double>(n - n_dep));
  for (Eigen::Index i = 0; i < n; ++i) w(i) = labels[static_cast<std::size_t>(i)] == Label::Depressed ? dep_w : ndep_w;
  return w;
}

}  // namespace

void TrainConfig::validate() const {
  if (hidden1 < 1 || hidden2 < 1) throw Error(ErrorKind::InvalidConfig, "hidden sizes must be >= 1");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw Error(ErrorKind::InvalidConfig, "dropout must be in [0, 1)");
  if (!(learning_rate > 0.0)) throw Error(ErrorKind::InvalidConfig, "learning_rate must be > 0");
  if (epochs < 0) throw Error(ErrorKind::InvalidConfig, "epochs must be >= 0");
  if (batch_size < 1) throw Error(ErrorKind::InvalidConfig, "batch_size must be >= 1");
}

void MlpModel::validate() const {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    if (l.bias.size() != l.weights.rows()) throw Error(ErrorKind::InvalidConfig, "bias/weight shape mismatch");
    if (i > 0 && l.weights.cols() != layers[i - 1].weights.rows()) {
      throw Error(ErrorKind::InvalidConfig, "layer widths do not chain");
    }
    if (!l.weights.allFinite() || !l.bias.allFinite()) throw Error(ErrorKind::InvalidConfig, "non-finite MLP parameter");
  }
  if (layers[2].weights.rows() != 1) throw Error(ErrorKind::InvalidConfig, "output layer must have one unit");
}

MlpModel make_mlp(const TrainConfig& config, Eigen::Index input_width) {
  config.validate();
  std::mt19937_64 rng(mix_seed(config.seed, 0));
  const std::array<Eigen::Index, 4> widths{input_width, config.hidden1, config.hidden2, 1};
  MlpModel model;
  for (std::size_t i = 0; i < 3; ++i) {
    std::normal_distribution<double> init(0.0, std::sqrt(2.0 / static_cast<double>(widths[i])));
    auto& layer = model.layers[i];
    layer.weights.resize(widths[i + 1], widths[i]);
    for (Eigen::Index r = 0; r < layer.weights.rows(); ++r) {
      for (Eigen::Index c = 0; c < layer.weights.cols(); ++c) layer.weights(r, c) = init(rng);
    }
    layer.bias = Eigen::VectorXd::Zero(widths[i + 1]);
  }
  return model;
}

double mlp_logit(const MlpModel& model, const Eigen::VectorXd& x) {
  if (x.size() != model.input_width()) throw Error(ErrorKind::InvalidConfig, "descriptor width mismatch");
  const auto& [l1, l2, l3] = model.layers;
  const Eigen::VectorXd a1 = (l1.weights * x + l1.bias).cwiseMax(0.0);
  const Eigen::VectorXd a2 = (l2.weights * a1 + l2.bias).cwiseMax(0.0);
  return (l3.weights * a2)(0) + l3.bias(0);
}

double loss_and_gradient(const MlpModel& model, const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                         const Eigen::VectorXd& weights, MlpGradients* grad) {
  return forward_backward(model, x, y, weights, nullptr, nullptr, grad);
}

double sgd_step(MlpModel& model, const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const Eigen::VectorXd& weights,
                double learning_rate, double dropout_rate, std::mt19937_64& rng) {
  MlpGradients grad;
  double loss = 0.0;
  if (dropout_rate > 0.0) {
    const Eigen::MatrixXd mask1 = dropout_mask(x.rows(), model.layers[0].weights.rows(), dropout_rate, rng);
    const Eigen::MatrixXd mask2 = dropout_mask(x.rows(), model.layers[1].weights.rows(), dropout_rate, rng);
    loss = forward_backward(model, x, y, weights, &mask1, &mask2, &grad);
  } else {
    loss = forward_backward(model, x, y, weights, nullptr, nullptr, &grad);
  }
  apply_update(model, grad, learning_rate);
  return loss;
}

MlpModel train_mlp(const Eigen::MatrixXd& x, std::span<const Label> labels, const TrainConfig& config) {
  config.validate();
  if (static_cast<std::size_t>(x.rows()) != labels.size()) {
    throw Error(ErrorKind::InvalidConfig, "descriptor and label counts differ");
  }
  if (labels.empty()) throw Error(ErrorKind::SingleClassData, "no training examples");
  if (std::all_of(labels.begin(), labels.end(), [&](Label l) { return l == labels.front(); })) {
    throw Error(ErrorKind::SingleClassData, "all training labels are identical");
  }
  if (!x.allFinite()) throw Error(ErrorKind::InvalidConfig, "non-finite descriptor");

  MlpModel model = make_mlp(config, x.cols());
  std::mt19937_64 shuffle_rng(mix_seed(config.seed, 1));
  std::mt19937_64 dropout_rng(mix_seed(config.seed, 2));

  const auto n = static_cast<Eigen::Index>(labels.size());
  Eigen::VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) y(i) = labels[static_cast<std::size_t>(i)] == Label::Depressed ? 1.0 : 0.0;
  const Eigen::VectorXd w = example_weights(labels, config.class_balanced);

  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  Eigen::MatrixXd xb;
  Eigen::VectorXd yb;
  Eigen::VectorXd wb;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    for (Eigen::Index start = 0; start < n; start += config.batch_size) {
      const Eigen::Index size = std::min<Eigen::Index>(config.batch_size, n - start);
      xb.resize(size, x.cols());
      yb.resize(size);
      wb.resize(size);
      for (Eigen::Index i = 0; i < size; ++i) {
        const auto src = order[static_cast<std::size_t>(start + i)];
        xb.row(i) = x.row(src);
        yb(i) = y(src);
        wb(i) = w(src);
      }
      sgd_step(model, xb, yb, wb, config.learning_rate, config.dropout, dropout_rng);
    }
  }
  model.validate();
  return model;
}

SegmentPrediction predict_segment(const MlpModel& model, const Eigen::VectorXd& descriptor) {
  const double p = logistic(mlp_logit(model, descriptor));
  SegmentPrediction out;
  out.prob = std::clamp(p, std::numeric_limits<double>::min(), std::nextafter(1.0, 0.0));
  out.vote = out.prob > 0.5 ? Label::Depressed : Label::NonDepressed;
  return out;
}

FeatureScaler FeatureScaler::fit(const Eigen::MatrixXd& x) {
  if (x.rows() < 1) throw Error(ErrorKind::InvalidConfig, "cannot fit a scaler on zero rows");
  FeatureScaler s;
  s.mean = x.colwise().mean().transpose();
  s.stddev = ((x.rowwise() - s.mean.transpose()).array().square().colwise().sum() / static_cast<double>(x.rows()))
                 .sqrt()
                 .transpose();
  for (Eigen::Index j = 0; j < s.stddev.size(); ++j) {
    if (!(s.stddev(j) > 1e-12)) s.stddev(j) = 1.0;
  }
  return s;
}

Eigen::MatrixXd FeatureScaler::apply(const Eigen::MatrixXd& x) const {
  return ((x.rowwise() - mean.transpose()).array().rowwise() / stddev.transpose().array()).matrix();
}

Eigen::VectorXd FeatureScaler::apply(const Eigen::VectorXd& x) const {
  return (x - mean).cwiseQuotient(stddev);
}

SegmentPrediction SegmentClassifier::predict(const Eigen::VectorXd& raw_descriptor) const {
  return predict_segment(model, scaler.apply(raw_descriptor));
}

SegmentClassifier train_segment_classifier(const Eigen::MatrixXd& x, std::span<const Label> labels,
                                           const TrainConfig& config) {
  SegmentClassifier c;
  c.scaler = FeatureScaler::fit(x);
  c.model = train_mlp(c.scaler.apply(x), labels, config);
  c.config = config;
  return c;
}

nlohmann::ordered_json to_json(const TrainConfig& config) {
  nlohmann::ordered_json j;
  j["hidden1"] = config.hidden1;
  j["hidden2"] = config.hidden2;
  j["dropout"] = config.dropout;
  j["learning_rate"] = config.learning_rate;
  j["epochs"] = config.epochs;
  j["batch_size"] = config.batch_size;
  j["seed"] = config.seed;
  j["class_balanced"] = config.class_balanced;
  return j;
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.hidden1 = j.at("hidden1").get<int>();
  c.hidden2 = j.at("hidden2").get<int>();
  c.dropout = j.at("dropout").get<double>();
  c.learning_rate = j.at("learning_rate").get<double>();
  c.epochs = j.at("epochs").get<int>();
  c.batch_size = j.at("batch_size").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.class_balanced = j.at("class_balanced").get<bool>();
  return c;
}

namespace {

std::vector<double> flatten_row_major(const Eigen::MatrixXd& m) {
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) out.push_back(m(r, c));
  }
  return out;
}

Eigen::VectorXd vector_from_json(const nlohmann::json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

nlohmann::ordered_json to_json(const SegmentClassifier& classifier) {
  nlohmann::ordered_json j;
  j["format"] = "audep-mlp";
  j["version"] = kMlpFormatVersion;
  auto layers = nlohmann::ordered_json::array();
  for (const auto& l : classifier.model.layers) {
    nlohmann::ordered_json layer;
    layer["rows"] = l.weights.rows();
    layer["cols"] = l.weights.cols();
    layer["weights"] = flatten_row_major(l.weights);
    layer["bias"] = std::vector<double>(l.bias.data(), l.bias.data() + l.bias.size());
    layers.push_back(std::move(layer));
  }
  j["layers"] = std::move(layers);
  const auto& s = classifier.scaler;
  j["scaler"] = {{"mean", std::vector<double>(s.mean.data(), s.mean.data() + s.mean.size())},
                 {"stddev", std::vector<double>(s.stddev.data(), s.stddev.data() + s.stddev.size())}};
  j["train_config"] = to_json(classifier.config);
  return j;
}

SegmentClassifier classifier_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format").get<std::string>() != "audep-mlp" || j.at("version").get<int>() != kMlpFormatVersion) {
      throw Error(ErrorKind::ParseError, "not a version-1 audep MLP file");
    }
    SegmentClassifier c;
    const auto& layers = j.at("layers");
    if (layers.size() != 3) throw Error(ErrorKind::ParseError, "MLP file must have 3 layers");
    for (std::size_t i = 0; i < 3; ++i) {
      const auto rows = layers[i].at("rows").get<Eigen::Index>();
      const auto cols = layers[i].at("cols").get<Eigen::Index>();
      const auto flat = layers[i].at("weights").get<std::vector<double>>();
      if (static_cast<Eigen::Index>(flat.size()) != rows * cols) throw Error(ErrorKind::ParseError, "weight count mismatch");
      c.model.layers[i].weights =
          Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(flat.data(), rows, cols);
      c.model.layers[i].bias = vector_from_json(layers[i].at("bias"));
    }
    c.model.validate();
    c.scaler.mean = vector_from_json(j.at("scaler").at("mean"));
    c.scaler.stddev = vector_from_json(j.at("scaler").at("stddev"));
    if (c.scaler.mean.size() != c.model.input_width() || c.scaler.stddev.size() != c.model.input_width()) {
      throw Error(ErrorKind::ParseError, "scaler width mismatch");
    }
    c.config = train_config_from_json(j.at("train_config"));
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::ParseError, std::string("MLP file: ") + e.what());
  }
}

void save_classifier(const std::filesystem::path& path, const SegmentClassifier& classifier) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  out << to_json(classifier).dump(1) << '\n';
}

SegmentClassifier load_classifier(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
  try {
    return classifier_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::ParseError, path.string() + ": " + e.what());
  }
}

}  // namespace audep

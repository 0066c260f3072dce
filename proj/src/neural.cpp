#include "flockforge/neural.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <sstream>

#include <json.hpp>

namespace flockforge {

using json = nlohmann::json;

std::string layout_name(Layout layout) {
  switch (layout) {
    case Layout::BF24: return "BF24";
    case Layout::CA24: return "CA24";
    case Layout::OA38: return "OA38";
    case Layout::PA28: return "PA28";
    case Layout::BF36: return "BF36";
  }
  return "?";
}

Layout parse_layout(const std::string& name) {
  for (Layout l : {Layout::BF24, Layout::CA24, Layout::OA38, Layout::PA28, Layout::BF36})
    if (layout_name(l) == name) return l;
  throw ConfigError("unknown feature layout '" + name + "'");
}

int layout_width(Layout layout) {
  switch (layout) {
    case Layout::BF24:
    case Layout::CA24: return 24;
    case Layout::OA38: return 38;
    case Layout::PA28: return 28;
    case Layout::BF36: return 36;
  }
  return 0;
}

int layout_dim(Layout layout) { return layout == Layout::BF36 ? 3 : 2; }

Layout layout_for(Task task, int dim) {
  if (dim == 3) {
    if (task != Task::BasicFlocking) throw ConfigError("3D neural layouts exist for basic flocking only");
    return Layout::BF36;
  }
  if (dim != 2) throw ConfigError("neural layouts need dim 2 or 3");
  switch (task) {
    case Task::BasicFlocking: return Layout::BF24;
    case Task::CollisionAvoidance: return Layout::CA24;
    case Task::ObstacleTarget: return Layout::OA38;
    case Task::PredatorAvoidance: return Layout::PA28;
  }
  return Layout::BF24;
}

namespace {

Vec nearest_obstacle_point(const std::vector<Obstacle>& obstacles, const Vec& p) {
  const Obstacle* best = &obstacles.front();
  double best_d = best->distance(p);
  for (const auto& o : obstacles) {
    const double d = o.distance(p);
    if (d < best_d) {
      best_d = d;
      best = &o;
    }
  }
  return best->closest_point(p);
}

}  // namespace

Vec encode_features(const FlockState& flock, int i, Layout layout, const std::vector<Obstacle>& obstacles,
                    const std::optional<Vec>& target) {
  const int dim = layout_dim(layout);
  if (flock.dim() != dim) throw ConfigError("layout " + layout_name(layout) + " needs dim " + std::to_string(dim));
  const bool with_obstacles = layout == Layout::OA38;
  if (with_obstacles && (obstacles.empty() || !target)) throw ConfigError("OA38 features need obstacles and a target");
  if (layout == Layout::PA28 && !flock.predator) throw ConfigError("PA28 features need a predator");

  std::vector<int> who{i};
  const auto nb = nearest_neighbors(flock, i, kLayoutNeighbors);
  who.insert(who.end(), nb.begin(), nb.end());

  Vec x(layout_width(layout));
  Eigen::Index k = 0;
  for (int j : who) {
    const auto& a = flock.agents[j];
    x.segment(k, dim) = a.p;
    x.segment(k + dim, dim) = a.v;
    k += 2 * dim;
    if (with_obstacles) {
      x.segment(k, dim) = nearest_obstacle_point(obstacles, a.p);
      k += dim;
    }
  }
  if (with_obstacles) {
    x.segment(k, dim) = *target;
    k += dim;
  }
  if (layout == Layout::PA28) {
    x.segment(k, dim) = flock.predator->p;
    x.segment(k + dim, dim) = flock.predator->v;
    k += 2 * dim;
  }
  return x;
}

std::string activation_name(Activation a) {
  switch (a) {
    case Activation::Identity: return "identity";
    case Activation::Sigmoid: return "sigmoid";
    case Activation::Relu: return "relu";
  }
  return "?";
}

Activation parse_activation(const std::string& name) {
  for (Activation a : {Activation::Identity, Activation::Sigmoid, Activation::Relu})
    if (activation_name(a) == name) return a;
  throw ConfigError("unknown activation '" + name + "'");
}

Architecture architecture_for(Layout layout) {
  if (layout == Layout::BF36) return {5, 84, Activation::Relu};
  return {5, 64, Activation::Sigmoid};
}

int Mlp::input_width() const { return layers.empty() ? 0 : static_cast<int>(layers.front().W.cols()); }
int Mlp::output_width() const { return layers.empty() ? 0 : static_cast<int>(layers.back().W.rows()); }

int Mlp::parameter_count() const {
  Eigen::Index n = 0;
  for (const auto& l : layers) n += l.W.size() + l.b.size();
  return static_cast<int>(n);
}

namespace {

void activate(Matrix& Z, Activation act) {
  switch (act) {
    case Activation::Identity: break;
    case Activation::Sigmoid: Z = (1.0 + (-Z.array()).exp()).inverse().matrix(); break;
    case Activation::Relu: Z = Z.cwiseMax(0.0); break;
  }
}

Matrix input_map(const Mlp& net, const Matrix& X) {
  if (net.input_mean.size() == 0) return X;
  return ((X.colwise() - net.input_mean).array().colwise() / net.input_scale.array()).matrix();
}

}  // namespace

Matrix Mlp::forward_batch(const Matrix& X) const {
  if (X.rows() != input_width()) throw std::invalid_argument("forward: input width mismatch");
  Matrix A = input_map(*this, X);
  for (const auto& l : layers) {
    Matrix Z = l.W * A;
    Z.colwise() += l.b;
    activate(Z, l.act);
    A = std::move(Z);
  }
  return A;
}

Vec Mlp::forward(const Vec& x) const { return forward_batch(x); }

Vec Mlp::flatten() const {
  Vec theta(parameter_count());
  Eigen::Index k = 0;
  for (const auto& l : layers) {
    theta.segment(k, l.W.size()) = l.W.reshaped();
    k += l.W.size();
    theta.segment(k, l.b.size()) = l.b;
    k += l.b.size();
  }
  return theta;
}

void Mlp::unflatten(const Vec& theta) {
  if (theta.size() != parameter_count()) throw std::invalid_argument("unflatten: size mismatch");
  Eigen::Index k = 0;
  for (auto& l : layers) {
    l.W.reshaped() = theta.segment(k, l.W.size());
    k += l.W.size();
    l.b = theta.segment(k, l.b.size());
    k += l.b.size();
  }
}

Mlp make_mlp(int inputs, int outputs, const Architecture& arch, std::uint64_t seed) {
  if (inputs < 1 || outputs < 1 || arch.hidden_layers < 0 || (arch.hidden_layers > 0 && arch.width < 1))
    throw ConfigError("invalid network shape");
  Rng rng(seed);
  Mlp net;
  int in = inputs;
  for (int h = 0; h <= arch.hidden_layers; ++h) {
    const bool last = h == arch.hidden_layers;
    const int out = last ? outputs : arch.width;
    Layer l;
    l.act = last ? Activation::Identity : arch.hidden;
    const double limit = std::sqrt((l.act == Activation::Relu ? 6.0 : 3.0) / in);
    l.W.resize(out, in);
    // Filled row by row so the draw order matches the checkpoint layout.
    for (int r = 0; r < out; ++r)
      for (int c = 0; c < in; ++c) l.W(r, c) = rng.uniform(-limit, limit);
    l.b = Vec::Zero(out);
    net.layers.push_back(std::move(l));
    in = out;
  }
  return net;
}

double mse_loss_gradient(const Mlp& net, const Matrix& X, const Matrix& Y, Vec* gradient) {
  if (X.cols() != Y.cols() || Y.rows() != net.output_width() || X.rows() != net.input_width())
    throw std::invalid_argument("mse: shape mismatch");
  const std::size_t L = net.layers.size();
  std::vector<Matrix> acts;  // acts[l] = input of layer l; acts[L] = output
  acts.reserve(L + 1);
  acts.push_back(input_map(net, X));
  for (const auto& l : net.layers) {
    Matrix Z = l.W * acts.back();
    Z.colwise() += l.b;
    activate(Z, l.act);
    acts.push_back(std::move(Z));
  }
  const Matrix err = acts.back() - Y;
  const double count = static_cast<double>(Y.size());
  const double loss = err.squaredNorm() / count;
  if (!gradient) return loss;

  gradient->resize(net.parameter_count());
  std::vector<Eigen::Index> offset(L);
  Eigen::Index k = 0;
  for (std::size_t l = 0; l < L; ++l) {
    offset[l] = k;
    k += net.layers[l].W.size() + net.layers[l].b.size();
  }
  Matrix delta = (2.0 / count) * err;
  for (std::size_t l = L; l-- > 0;) {
    const auto& layer = net.layers[l];
    const Matrix& out = acts[l + 1];
    switch (layer.act) {
      case Activation::Identity: break;
      case Activation::Sigmoid: delta.array() *= out.array() * (1.0 - out.array()); break;
      case Activation::Relu: delta.array() *= (out.array() > 0.0).cast<double>(); break;
    }
    const Matrix gW = delta * acts[l].transpose();
    gradient->segment(offset[l], gW.size()) = gW.reshaped();
    gradient->segment(offset[l] + gW.size(), layer.b.size()) = delta.rowwise().sum();
    if (l > 0) delta = layer.W.transpose() * delta;
  }
  return loss;
}

double mse_loss(const Mlp& net, const Matrix& X, const Matrix& Y) { return mse_loss_gradient(net, X, Y, nullptr); }

void AdamConfig::validate() const {
  if (!(lr > 0)) throw ConfigError("adam.lr must be > 0");
  if (!(beta1 > 0 && beta1 < 1) || !(beta2 > 0 && beta2 < 1)) throw ConfigError("adam betas must lie in (0, 1)");
  if (!(epsilon > 0)) throw ConfigError("adam.epsilon must be > 0");
  if (epochs < 1) throw ConfigError("adam.epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("adam.batch_size must be >= 1");
}

Adam::Adam(const AdamConfig& config, Eigen::Index size)
    : cfg_(config), m_(Vec::Zero(size)), v_(Vec::Zero(size)) {}

void Adam::step(Vec& theta, const Vec& g) {
  ++t_;
  m_ = cfg_.beta1 * m_ + (1 - cfg_.beta1) * g;
  v_ = cfg_.beta2 * v_ + (1 - cfg_.beta2) * g.cwiseProduct(g);
  const double c1 = 1 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1 - std::pow(cfg_.beta2, static_cast<double>(t_));
  theta.array() -= cfg_.lr * (m_.array() / c1) / ((v_.array() / c2).sqrt() + cfg_.epsilon);
}

namespace {

void check_dataset(const Dataset& d, const char* what) {
  if (d.features.rows() != layout_width(d.layout))
    throw ConfigError(std::string(what) + ": feature width does not match layout " + layout_name(d.layout));
  if (d.labels.rows() != layout_dim(d.layout) || d.labels.cols() != d.features.cols())
    throw ConfigError(std::string(what) + ": label shape mismatch");
}

}  // namespace

TrainResult train(const Dataset& data, const TrainConfig& config, const Dataset* holdout,
                  const EpochCallback& on_epoch) {
  const auto& adam = config.adam;
  adam.validate();
  check_dataset(data, "training set");
  if (data.size() == 0) throw ConfigError("training set is empty");
  if (holdout) {
    check_dataset(*holdout, "holdout set");
    if (holdout->layout != data.layout) throw ConfigError("holdout layout differs from the training layout");
  }

  const Architecture arch = config.arch.value_or(architecture_for(data.layout));
  TrainResult out;
  Mlp& net = out.net;
  net = make_mlp(static_cast<int>(data.features.rows()), static_cast<int>(data.labels.rows()), arch, adam.seed);

  // Standardize once up front; the map is attached to the network at the end.
  Vec mean = Vec::Zero(data.features.rows());
  Vec scale = Vec::Ones(data.features.rows());
  if (config.standardize) {
    mean = data.features.rowwise().mean();
    const Matrix centred = data.features.colwise() - mean;
    scale = (centred.rowwise().squaredNorm() / static_cast<double>(data.size())).cwiseSqrt();
    for (Eigen::Index r = 0; r < scale.size(); ++r)
      if (!(scale(r) > 1e-12)) scale(r) = 1.0;
  }
  const Matrix X = ((data.features.colwise() - mean).array().colwise() / scale.array()).matrix();
  Matrix Xh;
  if (holdout && holdout->size() > 0)
    Xh = ((holdout->features.colwise() - mean).array().colwise() / scale.array()).matrix();

  const Eigen::Index n = data.size();
  std::vector<Eigen::Index> order(n);
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  Rng shuffler(adam.seed ^ 0x9e3779b97f4a7c15ULL);
  Vec theta = net.flatten();
  Adam opt(adam, theta.size());
  Vec grad;
  Matrix Xb, Yb;

  for (int epoch = 0; epoch < adam.epochs; ++epoch) {
    shuffler.shuffle(order.begin(), order.end());
    double total = 0.0;
    for (Eigen::Index start = 0; start < n; start += adam.batch_size) {
      const Eigen::Index len = std::min<Eigen::Index>(adam.batch_size, n - start);
      Xb.resize(X.rows(), len);
      Yb.resize(data.labels.rows(), len);
      for (Eigen::Index c = 0; c < len; ++c) {
        Xb.col(c) = X.col(order[start + c]);
        Yb.col(c) = data.labels.col(order[start + c]);
      }
      const double loss = mse_loss_gradient(net, Xb, Yb, &grad);
      if (!std::isfinite(loss) || !grad.allFinite())
        throw DivergenceError("training diverged at epoch " + std::to_string(epoch + 1));
      total += loss * static_cast<double>(len);
      opt.step(theta, grad);
      net.unflatten(theta);
    }
    out.loss.push_back(total / static_cast<double>(n));
    if (Xh.size() > 0) out.holdout_loss.push_back(mse_loss(net, Xh, holdout->labels));
    if (on_epoch) on_epoch(epoch + 1, out.loss.back());
  }
  if (config.standardize) {
    net.input_mean = mean;
    net.input_scale = scale;
  }
  return out;
}

NeuralController::NeuralController(Mlp net, Layout layout, double a_max, std::vector<Obstacle> obstacles,
                                   std::optional<Vec> target)
    : net_(std::move(net)), layout_(layout), a_max_(a_max), obstacles_(std::move(obstacles)), target_(std::move(target)) {
  if (net_.input_width() != layout_width(layout_) || net_.output_width() != layout_dim(layout_))
    throw ConfigError("network shape does not match layout " + layout_name(layout_));
}

Matrix NeuralController::act(const FlockState& flock) {
  Matrix X(layout_width(layout_), flock.size());
  for (int i = 0; i < flock.size(); ++i) X.col(i) = encode_features(flock, i, layout_, obstacles_, target_);
  Matrix A = net_.forward_batch(X);
  for (Eigen::Index i = 0; i < A.cols(); ++i) A.col(i) = clamp_vector(A.col(i), a_max_);
  return A;
}

std::string checkpoint_json(const Mlp& net, Layout layout) {
  json j;
  j["schema_version"] = kCheckpointVersion;
  j["layout"] = layout_name(layout);
  j["input_width"] = net.input_width();
  j["output_width"] = net.output_width();
  const Vec mean = net.input_mean.size() ? net.input_mean : Vec::Zero(net.input_width());
  const Vec scale = net.input_scale.size() ? net.input_scale : Vec::Ones(net.input_width());
  j["input_mean"] = std::vector<double>(mean.begin(), mean.end());
  j["input_scale"] = std::vector<double>(scale.begin(), scale.end());
  json layers = json::array();
  for (const auto& l : net.layers) {
    json jl;
    jl["rows"] = l.W.rows();
    jl["cols"] = l.W.cols();
    jl["activation"] = activation_name(l.act);
    std::vector<double> w;
    w.reserve(l.W.size());
    for (Eigen::Index r = 0; r < l.W.rows(); ++r)
      for (Eigen::Index c = 0; c < l.W.cols(); ++c) w.push_back(l.W(r, c));
    jl["weights"] = std::move(w);
    jl["bias"] = std::vector<double>(l.b.begin(), l.b.end());
    layers.push_back(std::move(jl));
  }
  j["layers"] = std::move(layers);
  return j.dump();
}

Checkpoint parse_checkpoint(const std::string& text) {
  Checkpoint ck;
  try {
    const json j = json::parse(text);
    const int version = j.at("schema_version").get<int>();
    if (version != kCheckpointVersion)
      throw IoError("checkpoint schema_version " + std::to_string(version) + " is not supported");
    ck.layout = parse_layout(j.at("layout").get<std::string>());
    for (const auto& jl : j.at("layers")) {
      Layer l;
      const auto rows = jl.at("rows").get<Eigen::Index>();
      const auto cols = jl.at("cols").get<Eigen::Index>();
      const auto w = jl.at("weights").get<std::vector<double>>();
      const auto b = jl.at("bias").get<std::vector<double>>();
      if (static_cast<Eigen::Index>(w.size()) != rows * cols || static_cast<Eigen::Index>(b.size()) != rows)
        throw IoError("checkpoint layer arrays have the wrong size");
      l.W.resize(rows, cols);
      for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c) l.W(r, c) = w[r * cols + c];
      l.b = Eigen::Map<const Vec>(b.data(), rows);
      l.act = parse_activation(jl.at("activation").get<std::string>());
      if (!ck.net.layers.empty() && ck.net.layers.back().W.rows() != cols)
        throw IoError("checkpoint layers do not chain");
      ck.net.layers.push_back(std::move(l));
    }
    if (ck.net.layers.empty()) throw IoError("checkpoint has no layers");
    const auto mean = j.at("input_mean").get<std::vector<double>>();
    const auto scale = j.at("input_scale").get<std::vector<double>>();
    if (static_cast<int>(mean.size()) != ck.net.input_width() || scale.size() != mean.size())
      throw IoError("checkpoint input map has the wrong size");
    ck.net.input_mean = Eigen::Map<const Vec>(mean.data(), mean.size());
    ck.net.input_scale = Eigen::Map<const Vec>(scale.data(), scale.size());
  } catch (const json::exception& e) {
    throw IoError(std::string("malformed checkpoint: ") + e.what());
  } catch (const ConfigError& e) {
    throw IoError(std::string("malformed checkpoint: ") + e.what());
  }
  if (ck.net.input_width() != layout_width(ck.layout) || ck.net.output_width() != layout_dim(ck.layout))
    throw IoError("checkpoint shape does not match its layout");
  return ck;
}

void save_checkpoint(const std::string& path, const Mlp& net, Layout layout) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << checkpoint_json(net, layout) << '\n';
  if (!out) throw IoError("write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_checkpoint(ss.str());
}

void write_loss_csv(std::ostream& out, const TrainResult& result) {
  const bool holdout = !result.holdout_loss.empty();
  out << (holdout ? "epoch,mse,holdout_mse\n" : "epoch,mse\n") << std::setprecision(17);
  for (std::size_t e = 0; e < result.loss.size(); ++e) {
    out << e + 1 << ',' << result.loss[e];
    if (holdout) out << ',' << result.holdout_loss[e];
    out << '\n';
  }
}

}  // namespace flockforge

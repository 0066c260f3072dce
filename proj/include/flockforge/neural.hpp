#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "flockforge/costs.hpp"
#include "flockforge/dynamics.hpp"
#include "flockforge/mpc.hpp"

namespace flockforge {

// Input layouts. Every layout is self plus five nearest neighbours.
enum class Layout { BF24, CA24, OA38, PA28, BF36 };

std::string layout_name(Layout layout);
Layout parse_layout(const std::string& name);
int layout_width(Layout layout);
int layout_dim(Layout layout);
Layout layout_for(Task task, int dim);
inline constexpr int kLayoutNeighbors = 5;

/// Feature vector of agent i in absolute world coordinates:
/// [p v (o)] for self and each neighbour (nearest first), then g (OA38) or
/// the predator's p v (PA28).
Vec encode_features(const FlockState& flock, int i, Layout layout, const std::vector<Obstacle>& obstacles = {},
                    const std::optional<Vec>& target = std::nullopt);

enum class Activation { Identity, Sigmoid, Relu };
std::string activation_name(Activation a);
Activation parse_activation(const std::string& name);

struct Layer {
  Matrix W;  // out x in
  Vec b;
  Activation act = Activation::Identity;
};

struct Architecture {
  int hidden_layers = 5;
  int width = 64;
  Activation hidden = Activation::Sigmoid;
};

/// 5 x 64 sigmoid for the planar layouts, 5 x 84 ReLU for BF36.
Architecture architecture_for(Layout layout);

struct Mlp {
  std::vector<Layer> layers;
  // Inputs are mapped to (x - input_mean) / input_scale before the first layer.
  Vec input_mean;
  Vec input_scale;

  int input_width() const;
  int output_width() const;
  int parameter_count() const;

  Vec forward(const Vec& x) const;
  /// Columns are samples.
  Matrix forward_batch(const Matrix& X) const;

  /// Weights (column-major per layer) then biases, layer by layer.
  Vec flatten() const;
  void unflatten(const Vec& theta);
};

/// Fan-in scaled uniform weights (He for ReLU, LeCun otherwise), zero biases,
/// identity input map.
Mlp make_mlp(int inputs, int outputs, const Architecture& arch, std::uint64_t seed);

/// Mean over every output element and sample; gradient w.r.t. flatten() order.
double mse_loss_gradient(const Mlp& net, const Matrix& X, const Matrix& Y, Vec* gradient);
double mse_loss(const Mlp& net, const Matrix& X, const Matrix& Y);

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  int epochs = 10000;
  int batch_size = 500;
  std::uint64_t seed = 0;

  void validate() const;
};

class Adam {
 public:
  Adam(const AdamConfig& config, Eigen::Index size);
  void step(Vec& theta, const Vec& gradient);
  long steps() const { return t_; }

 private:
  AdamConfig cfg_;
  Vec m_, v_;
  long t_ = 0;
};

/// Column-per-sample training data.
struct Dataset {
  Layout layout = Layout::BF24;
  Matrix features;  // width x count
  Matrix labels;    // dim x count
  std::vector<int> trajectory;  // source trajectory per sample

  Eigen::Index size() const { return features.cols(); }
};

struct TrainConfig {
  AdamConfig adam;
  std::optional<Architecture> arch;  // default: architecture_for(layout)
  bool standardize = true;           // fit input_mean/input_scale on the training set
};

struct TrainResult {
  Mlp net;
  std::vector<double> loss;          // per epoch, mean over that epoch's minibatches
  std::vector<double> holdout_loss;  // per epoch, empty without a holdout set
};

using EpochCallback = std::function<void(int epoch, double loss)>;

TrainResult train(const Dataset& data, const TrainConfig& config, const Dataset* holdout = nullptr,
                  const EpochCallback& on_epoch = {});

/// Shared network applied to every agent; outputs clamped to a_max.
class NeuralController final : public Controller {
 public:
  NeuralController(Mlp net, Layout layout, double a_max, std::vector<Obstacle> obstacles = {},
                   std::optional<Vec> target = std::nullopt);
  std::string name() const override { return "dnc"; }
  Matrix act(const FlockState& flock) override;

 private:
  Mlp net_;
  Layout layout_;
  double a_max_;
  std::vector<Obstacle> obstacles_;
  std::optional<Vec> target_;
};

// Checkpoint: versioned JSON with layout, architecture and row-major arrays.
inline constexpr int kCheckpointVersion = 1;
void save_checkpoint(const std::string& path, const Mlp& net, Layout layout);
struct Checkpoint {
  Mlp net;
  Layout layout = Layout::BF24;
};
Checkpoint load_checkpoint(const std::string& path);
std::string checkpoint_json(const Mlp& net, Layout layout);
Checkpoint parse_checkpoint(const std::string& text);

/// epoch,mse[,holdout_mse]
void write_loss_csv(std::ostream& out, const TrainResult& result);

}  // namespace flockforge

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <vector>

#include "boxhunt/env.hpp"

namespace boxhunt {

class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DenseLayer {
  std::size_t in = 0;
  std::size_t out = 0;
  std::vector<double> weights;  // out x in, row-major
  std::vector<double> bias;     // out

  bool operator==(const DenseLayer&) const = default;
};

/// Fully connected Q-network: rectifier on hidden layers, identity on the
/// output layer.
class Mlp {
 public:
  Mlp() = default;

  /// Zero-initialized network with layer sizes `dims` (input first).
  explicit Mlp(std::vector<std::size_t> dims);

  const std::vector<std::size_t>& dims() const { return dims_; }
  std::size_t input_dim() const { return dims_.front(); }
  std::size_t output_dim() const { return dims_.back(); }
  std::size_t parameter_count() const;

  std::vector<DenseLayer>& layers() { return layers_; }
  const std::vector<DenseLayer>& layers() const { return layers_; }

  /// Throws std::invalid_argument on an input size mismatch.
  std::vector<double> forward(std::span<const double> x) const;

  bool operator==(const Mlp&) const = default;

 private:
  std::vector<std::size_t> dims_;
  std::vector<DenseLayer> layers_;
};

/// Glorot-uniform weights, zero biases. Deterministic in `seed`.
Mlp init_mlp(const std::vector<std::size_t>& dims, std::uint64_t seed);

/// Same shape as an Mlp's parameters; used to accumulate gradients.
struct Gradients {
  std::vector<std::vector<double>> weights;
  std::vector<std::vector<double>> bias;

  explicit Gradients(const Mlp& net);
  void clear();
};

/// Adds scale * d/dtheta (q[action] - target)^2 into `grad`. Other outputs
/// get no gradient. Returns the squared error.
double accumulate_gradient(const Mlp& net, std::span<const double> x, int action, double target,
                           double scale, Gradients& grad);

/// theta -= lr * grad.
void apply_gradient(Mlp& net, const Gradients& grad, double lr);

/// One plain SGD step on a single sample. Returns the loss before the update.
/// Throws NumericalError if the loss is not finite.
double sgd_step(Mlp& net, std::span<const double> x, int action, double target, double lr);

struct QSample {
  std::span<const double> x;
  int action = 0;
  double target = 0.0;
};

/// One SGD step on the batch-mean squared error. Returns the mean loss.
double sgd_batch(Mlp& net, std::span<const QSample> batch, double lr);

/// Copies every parameter of `policy` into `target`.
/// Throws std::invalid_argument when the layer sizes differ.
void sync_target(const Mlp& policy, Mlp& target);

// Checkpoint layout (all integers and floats little-endian):
//   8 bytes  magic "BXHQNET1"
//   u32      format version
//   u32      variant tag (0 hierarchical, 1 dynamic)
//   u32      number of layer sizes
//   u64[]    layer sizes
//   f64[]    parameters, layer by layer: weights row-major, then biases
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  Mlp net;
  Variant variant = Variant::kHierarchical;
};

void save_checkpoint(const Mlp& net, Variant variant, const std::filesystem::path& path);

Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Also rejects a checkpoint trained for a different variant.
Checkpoint load_checkpoint(const std::filesystem::path& path, Variant expected);

}  // namespace boxhunt

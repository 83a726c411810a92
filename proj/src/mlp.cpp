#include "boxhunt/mlp.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "boxhunt/random.hpp"

namespace boxhunt {

Mlp::Mlp(std::vector<std::size_t> dims) : dims_(std::move(dims)) {
  if (dims_.size() < 2) throw std::invalid_argument("an Mlp needs at least input and output sizes");
  for (auto d : dims_) {
    if (d == 0) throw std::invalid_argument("layer sizes must be positive");
  }
  for (std::size_t l = 0; l + 1 < dims_.size(); ++l) {
    DenseLayer layer;
    layer.in = dims_[l];
    layer.out = dims_[l + 1];
    layer.weights.assign(layer.in * layer.out, 0.0);
    layer.bias.assign(layer.out, 0.0);
    layers_.push_back(std::move(layer));
  }
}

std::size_t Mlp::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += l.weights.size() + l.bias.size();
  return n;
}

namespace {

void dense(const DenseLayer& l, const double* x, double* y, bool relu) {
  for (std::size_t o = 0; o < l.out; ++o) {
    const double* w = &l.weights[o * l.in];
    double acc = l.bias[o];
    for (std::size_t i = 0; i < l.in; ++i) acc += w[i] * x[i];
    y[o] = relu ? std::max(acc, 0.0) : acc;
  }
}

}  // namespace

std::vector<double> Mlp::forward(std::span<const double> x) const {
  if (x.size() != input_dim()) {
    throw std::invalid_argument("input has " + std::to_string(x.size()) +
                                " values, network expects " + std::to_string(input_dim()));
  }
  std::vector<double> cur(x.begin(), x.end());
  std::vector<double> next;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    next.assign(layers_[l].out, 0.0);
    dense(layers_[l], cur.data(), next.data(), l + 1 < layers_.size());
    cur.swap(next);
  }
  return cur;
}

Mlp init_mlp(const std::vector<std::size_t>& dims, std::uint64_t seed) {
  Mlp net(dims);
  Rng rng(seed);
  for (auto& l : net.layers()) {
    const double limit = std::sqrt(6.0 / static_cast<double>(l.in + l.out));
    for (auto& w : l.weights) w = rng.uniform(-limit, limit);
  }
  return net;
}

Gradients::Gradients(const Mlp& net) {
  for (const auto& l : net.layers()) {
    weights.emplace_back(l.weights.size(), 0.0);
    bias.emplace_back(l.bias.size(), 0.0);
  }
}

void Gradients::clear() {
  for (auto& w : weights) std::fill(w.begin(), w.end(), 0.0);
  for (auto& b : bias) std::fill(b.begin(), b.end(), 0.0);
}

double accumulate_gradient(const Mlp& net, std::span<const double> x, int action, double target,
                           double scale, Gradients& grad) {
  const auto& layers = net.layers();
  if (x.size() != net.input_dim()) throw std::invalid_argument("input size mismatch");
  if (action < 0 || static_cast<std::size_t>(action) >= net.output_dim()) {
    throw std::out_of_range("action id out of range");
  }

  // Activations per layer; acts[0] is the input.
  std::vector<std::vector<double>> acts(layers.size() + 1);
  acts[0].assign(x.begin(), x.end());
  for (std::size_t l = 0; l < layers.size(); ++l) {
    acts[l + 1].assign(layers[l].out, 0.0);
    dense(layers[l], acts[l].data(), acts[l + 1].data(), l + 1 < layers.size());
  }

  const double err = acts.back()[action] - target;
  const double loss = err * err;

  // delta = dLoss/dpreactivation of the current layer.
  std::vector<double> delta(layers.back().out, 0.0);
  delta[action] = 2.0 * err * scale;
  for (std::size_t l = layers.size(); l-- > 0;) {
    const DenseLayer& layer = layers[l];
    const std::vector<double>& in = acts[l];
    auto& gw = grad.weights[l];
    auto& gb = grad.bias[l];
    for (std::size_t o = 0; o < layer.out; ++o) {
      const double d = delta[o];
      if (d == 0.0) continue;
      gb[o] += d;
      double* row = &gw[o * layer.in];
      for (std::size_t i = 0; i < layer.in; ++i) row[i] += d * in[i];
    }
    if (l == 0) break;
    std::vector<double> prev(layer.in, 0.0);
    for (std::size_t o = 0; o < layer.out; ++o) {
      const double d = delta[o];
      if (d == 0.0) continue;
      const double* w = &layer.weights[o * layer.in];
      for (std::size_t i = 0; i < layer.in; ++i) prev[i] += d * w[i];
    }
    // Rectifier derivative: the hidden activation is zero iff the unit is off.
    for (std::size_t i = 0; i < layer.in; ++i) {
      if (in[i] <= 0.0) prev[i] = 0.0;
    }
    delta.swap(prev);
  }
  return loss;
}

void apply_gradient(Mlp& net, const Gradients& grad, double lr) {
  auto& layers = net.layers();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    for (std::size_t k = 0; k < layers[l].weights.size(); ++k) {
      layers[l].weights[k] -= lr * grad.weights[l][k];
    }
    for (std::size_t k = 0; k < layers[l].bias.size(); ++k) {
      layers[l].bias[k] -= lr * grad.bias[l][k];
    }
  }
}

namespace {

void check_loss(double loss) {
  if (!std::isfinite(loss)) {
    std::ostringstream os;
    os << "non-finite loss (" << loss << "); lower the learning rate or check the inputs";
    throw NumericalError(os.str());
  }
}

}  // namespace

double sgd_step(Mlp& net, std::span<const double> x, int action, double target, double lr) {
  if (!std::isfinite(target)) throw NumericalError("non-finite Q target");
  Gradients grad(net);
  const double loss = accumulate_gradient(net, x, action, target, 1.0, grad);
  check_loss(loss);
  apply_gradient(net, grad, lr);
  return loss;
}

double sgd_batch(Mlp& net, std::span<const QSample> batch, double lr) {
  if (batch.empty()) return 0.0;
  Gradients grad(net);
  const double scale = 1.0 / static_cast<double>(batch.size());
  double total = 0.0;
  for (const auto& s : batch) {
    if (!std::isfinite(s.target)) throw NumericalError("non-finite Q target");
    total += accumulate_gradient(net, s.x, s.action, s.target, scale, grad);
  }
  const double loss = total * scale;
  check_loss(loss);
  apply_gradient(net, grad, lr);
  return loss;
}

void sync_target(const Mlp& policy, Mlp& target) {
  if (policy.dims() != target.dims()) {
    throw std::invalid_argument("cannot sync networks with different layer sizes");
  }
  target = policy;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr std::array<char, 8> kMagic = {'B', 'X', 'H', 'Q', 'N', 'E', 'T', '1'};

template <typename T>
void put_le(std::string& out, T v) {
  static_assert(std::is_unsigned_v<T>);
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
}

class Reader {
 public:
  Reader(const std::string& data, const std::filesystem::path& path) : data_(data), path_(path) {}

  template <typename T>
  T get_le() {
    need(sizeof(T));
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      v |= static_cast<T>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(T);
    return v;
  }

  double get_double() { return std::bit_cast<double>(get_le<std::uint64_t>()); }

  bool at_end() const { return pos_ == data_.size(); }

  void need(std::size_t n) const {
    if (pos_ + n > data_.size()) {
      throw CheckpointError(path_.string() + ": corrupt checkpoint (truncated)");
    }
  }

 private:
  const std::string& data_;
  const std::filesystem::path& path_;
  std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const Mlp& net, Variant variant, const std::filesystem::path& path) {
  std::string out(kMagic.begin(), kMagic.end());
  put_le<std::uint32_t>(out, kCheckpointVersion);
  put_le<std::uint32_t>(out, variant == Variant::kHierarchical ? 0u : 1u);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(net.dims().size()));
  for (auto d : net.dims()) put_le<std::uint64_t>(out, d);
  for (const auto& l : net.layers()) {
    for (double w : l.weights) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(w));
    for (double b : l.bias) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(b));
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw CheckpointError("cannot write checkpoint " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw CheckpointError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot open checkpoint " + path.string());
  const std::string data((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

  if (data.size() < kMagic.size() || !std::equal(kMagic.begin(), kMagic.end(), data.begin())) {
    throw CheckpointError(path.string() + ": not a checkpoint");
  }
  Reader r(data, path);
  for (std::size_t i = 0; i < kMagic.size(); ++i) r.get_le<std::uint8_t>();

  const auto version = r.get_le<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw CheckpointError(path.string() + ": checkpoint format version " + std::to_string(version) +
                          ", expected " + std::to_string(kCheckpointVersion));
  }
  const auto tag = r.get_le<std::uint32_t>();
  if (tag > 1) throw CheckpointError(path.string() + ": corrupt checkpoint (variant tag)");
  const auto n_dims = r.get_le<std::uint32_t>();
  if (n_dims < 2 || n_dims > 64) throw CheckpointError(path.string() + ": corrupt checkpoint (dims)");
  std::vector<std::size_t> dims;
  for (std::uint32_t i = 0; i < n_dims; ++i) {
    const auto d = r.get_le<std::uint64_t>();
    if (d == 0 || d > (1ull << 32)) throw CheckpointError(path.string() + ": corrupt checkpoint (dims)");
    dims.push_back(static_cast<std::size_t>(d));
  }

  Checkpoint ck;
  ck.variant = tag == 0 ? Variant::kHierarchical : Variant::kDynamic;
  ck.net = Mlp(dims);
  r.need(ck.net.parameter_count() * sizeof(double));
  for (auto& l : ck.net.layers()) {
    for (double& w : l.weights) w = r.get_double();
    for (double& b : l.bias) b = r.get_double();
  }
  if (!r.at_end()) throw CheckpointError(path.string() + ": corrupt checkpoint (trailing bytes)");
  return ck;
}

Checkpoint load_checkpoint(const std::filesystem::path& path, Variant expected) {
  Checkpoint ck = load_checkpoint(path);
  if (ck.variant != expected) {
    throw CheckpointError(path.string() + ": checkpoint was trained for the " +
                          to_string(ck.variant) + " variant but the environment is " +
                          to_string(expected));
  }
  return ck;
}

}  // namespace boxhunt

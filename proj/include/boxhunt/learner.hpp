#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "boxhunt/env.hpp"
#include "boxhunt/features.hpp"
#include "boxhunt/mlp.hpp"
#include "boxhunt/random.hpp"
#include "boxhunt/scene.hpp"

namespace boxhunt {

/// One transition. States are stored as flattened network inputs.
struct Experience {
  std::vector<double> state;
  int action = 0;
  double reward = 0.0;
  std::optional<std::vector<double>> next_state;  // absent iff done
  bool done = false;
};

/// Fixed-capacity FIFO ring of experiences.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity = 1000);

  void push(Experience exp);

  std::size_t size() const { return items_.size(); }
  std::size_t capacity() const { return capacity_; }
  bool empty() const { return items_.empty(); }

  /// i-th stored experience, oldest first.
  const Experience& at(std::size_t i) const;

  /// Uniform sample of `n` distinct experiences, or everything stored when
  /// fewer than `n` are available. Empty buffer gives an empty batch.
  std::vector<const Experience*> sample(std::size_t n, Rng& rng) const;

 private:
  std::size_t capacity_;
  std::size_t head_ = 0;  // slot of the oldest item once full
  std::vector<Experience> items_;
};

struct TrainConfig {
  int epochs = 10;
  int steps_per_epoch = 10;
  std::size_t batch_size = 100;
  std::size_t replay_capacity = 1000;
  double gamma = 0.9;
  double learning_rate = 1e-3;
  double eps_start = 0.9;
  double eps_step = 0.1;
  double eps_floor = 0.1;
  /// Global steps between target-network copies; 0 trains a single network.
  int target_sync_interval = 10;
  std::vector<std::size_t> hidden_dims{64, 64};
  std::uint64_t seed = 1;

  /// eps_start 0.9 for hierarchical, 1.0 for dynamic.
  static TrainConfig defaults(Variant variant);

  void validate() const;

  bool operator==(const TrainConfig&) const = default;
};

/// max(eps_floor, eps_start - eps_step * epoch).
double epsilon(int epoch, const TrainConfig& cfg);

/// Epsilon-greedy. Greedy ties go to the lowest id. With eps == 1 the network
/// is never evaluated.
int select_action(const Mlp& net, std::span<const double> state, double eps, Rng& rng);

/// Lowest-index arg-max.
int argmax(std::span<const double> q);

/// reward for terminal transitions, reward + gamma * max_a Q_target(s', a)
/// otherwise.
double bellman_target(const Experience& exp, const Mlp& target_net, double gamma);

struct EpochLog {
  int epoch = 0;
  double epsilon = 0.0;
  int episodes = 0;
  int steps = 0;
  double mean_reward = 0.0;          // per episode, summed over its steps
  double trigger_rate = 0.0;         // episodes that ended on the trigger
  double mean_episode_length = 0.0;
  double mean_loss = 0.0;
  std::string checkpoint;            // empty when checkpoints stay in memory
};

struct TrainLog {
  std::vector<EpochLog> epochs;

  /// One JSON object per epoch, newline-terminated.
  std::string to_jsonl() const;
};

nlohmann::json to_json(const EpochLog& e);

/// Passed to the per-step observer after the update and any target sync.
struct StepInfo {
  std::int64_t global_step = 0;
  int epoch = 0;
  double loss = 0.0;
  double reward = 0.0;
  int action = 0;
  const Mlp* policy = nullptr;
  const Mlp* target = nullptr;  // same object as policy in single-network mode
};

struct TrainOptions {
  /// When set, `epoch_NNN.ckpt` is written here after every epoch.
  std::optional<std::filesystem::path> checkpoint_dir;
  std::function<void(const StepInfo&)> on_step;
};

struct TrainResult {
  Mlp policy;
  TrainLog log;
  std::vector<Mlp> checkpoints;  // one per epoch
};

std::vector<std::size_t> network_dims(std::size_t input_dim, const TrainConfig& cfg, Variant v);

/// Deep-Q training over `dataset` (already filtered to one class). Every
/// episode is capped at steps_per_epoch steps. Deterministic in cfg.seed.
TrainResult train(const Dataset& dataset, const EnvConfig& env_cfg, const TrainConfig& cfg,
                  FeatureExtractor& extractor, const TrainOptions& options = {});

std::string checkpoint_name(int epoch);

}  // namespace boxhunt

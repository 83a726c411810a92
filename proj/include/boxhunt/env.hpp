#pragma once

#include <cstddef>
#include <deque>
#include <optional>
#include <string>
#include <vector>

#include "boxhunt/features.hpp"
#include "boxhunt/geometry.hpp"
#include "boxhunt/scene.hpp"

namespace boxhunt {

enum class Variant { kHierarchical, kDynamic };
enum class RewardMetric { kIou, kRecall };
enum class TargetMode { kDynamic, kFixed };

std::string to_string(Variant v);
std::string to_string(RewardMetric m);
std::string to_string(TargetMode m);
Variant parse_variant(const std::string& s);
RewardMetric parse_reward_metric(const std::string& s);
TargetMode parse_target_mode(const std::string& s);

struct EnvConfig {
  Variant variant = Variant::kHierarchical;
  ZoomParams zoom;
  Alpha alpha;
  int history_len = 4;
  double tau = 0.5;
  double eta = 3.0;
  RewardMetric reward_metric = RewardMetric::kIou;
  TargetMode target_mode = TargetMode::kDynamic;
  int max_steps = 10;

  /// Per-variant defaults: history 4 / 10, tau 0.5 / 0.6.
  static EnvConfig defaults(Variant variant);

  void validate() const;

  bool operator==(const EnvConfig&) const = default;
};

// Action ids. Hierarchical: 0..4 = TL, TR, BL, BR, C; 5 = trigger.
// Dynamic: 0..7 = RIGHT, LEFT, DOWN, UP, BIGGER, SMALLER, FATTER, TALLER; 8 = trigger.
int num_actions(Variant variant);
inline int num_actions(const EnvConfig& cfg) { return num_actions(cfg.variant); }
inline int trigger_action(Variant variant) { return num_actions(variant) - 1; }
std::string action_name(Variant variant, int action);

/// Applies a movement action to `b` inside `bounds`, including the minimum
/// side clamp. `action` must not be the trigger.
Box apply_movement(const EnvConfig& cfg, const Box& b, int action, ImageSize bounds);

/// +1 when the metric strictly improves, -1 otherwise (ties included).
double movement_reward(double before, double after);

/// +eta when metric_value >= tau, -eta otherwise.
double trigger_reward(double metric_value, double tau, double eta);

/// Slot k (0 = most recent) holds a one-hot of the k-th previous action.
std::vector<double> encode_history(const std::deque<int>& recent_first, int history_len,
                                   int num_actions);

struct State {
  FeatureVector features;
  std::vector<double> history;

  /// Network input: features followed by history.
  std::vector<double> input() const;
};

inline std::size_t state_dim(const EnvConfig& cfg, std::size_t feature_dim) {
  return feature_dim + static_cast<std::size_t>(cfg.history_len) * num_actions(cfg);
}

struct StepResult {
  std::optional<State> next_state;  // absent when done
  double reward = 0.0;
  bool done = false;
  Box box;
  double iou_now = 0.0;  // best IoU over all ground truths
  int action_taken = 0;
};

/// One localization episode on one scene. Starts from the whole image with
/// an empty history. Holds non-owning references to the scene and extractor.
class Episode {
 public:
  /// Throws std::invalid_argument when the scene has no annotation.
  Episode(const EnvConfig& cfg, const Scene& scene, FeatureExtractor& extractor);

  const State& state() const { return state_; }
  const Box& box() const { return box_; }
  bool done() const { return done_; }
  int steps() const { return steps_; }
  const std::deque<int>& recent_actions() const { return recent_; }
  const EnvConfig& config() const { return cfg_; }
  const Scene& scene() const { return *scene_; }

  /// Ground-truth index used for rewards in fixed-target mode.
  std::optional<std::size_t> fixed_target() const { return fixed_target_; }

  /// Reward metric of `b` against the episode's target(s).
  double metric(const Box& b) const;

  /// Throws std::logic_error after the episode has ended and
  /// std::out_of_range for an unknown action id.
  StepResult step(int action);

 private:
  EnvConfig cfg_;
  const Scene* scene_;
  FeatureExtractor* extractor_;
  std::vector<Box> gts_;
  std::optional<std::size_t> fixed_target_;
  Box box_;
  std::deque<int> recent_;
  State state_;
  int steps_ = 0;
  bool done_ = false;
};

}  // namespace boxhunt

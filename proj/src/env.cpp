#include "boxhunt/env.hpp"

#include <array>
#include <cmath>
#include <stdexcept>

namespace boxhunt {

std::string to_string(Variant v) {
  return v == Variant::kHierarchical ? "hierarchical" : "dynamic";
}

std::string to_string(RewardMetric m) { return m == RewardMetric::kIou ? "iou" : "recall"; }

std::string to_string(TargetMode m) { return m == TargetMode::kDynamic ? "dynamic" : "fixed"; }

Variant parse_variant(const std::string& s) {
  if (s == "hierarchical") return Variant::kHierarchical;
  if (s == "dynamic") return Variant::kDynamic;
  throw std::invalid_argument("unknown variant '" + s + "' (hierarchical|dynamic)");
}

RewardMetric parse_reward_metric(const std::string& s) {
  if (s == "iou") return RewardMetric::kIou;
  if (s == "recall") return RewardMetric::kRecall;
  throw std::invalid_argument("unknown reward metric '" + s + "' (iou|recall)");
}

TargetMode parse_target_mode(const std::string& s) {
  if (s == "dynamic") return TargetMode::kDynamic;
  if (s == "fixed") return TargetMode::kFixed;
  throw std::invalid_argument("unknown target mode '" + s + "' (dynamic|fixed)");
}

EnvConfig EnvConfig::defaults(Variant variant) {
  EnvConfig cfg;
  cfg.variant = variant;
  if (variant == Variant::kDynamic) {
    cfg.history_len = 10;
    cfg.tau = 0.6;
  }
  return cfg;
}

void EnvConfig::validate() const {
  if (!zoom.valid()) throw std::invalid_argument("zoom params out of range");
  if (!alpha.valid()) throw std::invalid_argument("alpha must be in (0, 1)");
  if (!(tau > 0.0 && tau < 1.0)) throw std::invalid_argument("tau must be in (0, 1)");
  if (!(eta > 0.0) || !std::isfinite(eta)) throw std::invalid_argument("eta must be positive");
  if (max_steps < 1) throw std::invalid_argument("max_steps must be >= 1");
  if (history_len < 0) throw std::invalid_argument("history_len must be >= 0");
}

int num_actions(Variant variant) { return variant == Variant::kHierarchical ? 6 : 9; }

std::string action_name(Variant variant, int action) {
  static const std::array<const char*, 6> zoom = {"TL", "TR", "BL", "BR", "C", "TRIGGER"};
  static const std::array<const char*, 9> deform = {"RIGHT",   "LEFT",   "DOWN",  "UP",     "BIGGER",
                                                    "SMALLER", "FATTER", "TALLER", "TRIGGER"};
  if (action < 0 || action >= num_actions(variant)) throw std::out_of_range("action id out of range");
  return variant == Variant::kHierarchical ? zoom[action] : deform[action];
}

Box apply_movement(const EnvConfig& cfg, const Box& b, int action, ImageSize bounds) {
  if (action < 0 || action >= trigger_action(cfg.variant)) {
    throw std::out_of_range("not a movement action: " + std::to_string(action));
  }
  if (cfg.variant == Variant::kHierarchical) {
    return clamp(subregion(b, static_cast<ZoomMove>(action), cfg.zoom), bounds);
  }
  return transform(b, static_cast<DeformMove>(action), cfg.alpha, bounds);
}

double movement_reward(double before, double after) { return after > before ? 1.0 : -1.0; }

double trigger_reward(double metric_value, double tau, double eta) {
  return metric_value >= tau ? eta : -eta;
}

std::vector<double> encode_history(const std::deque<int>& recent_first, int history_len,
                                   int num_actions) {
  if (static_cast<int>(recent_first.size()) > history_len) {
    throw std::invalid_argument("history deque longer than history_len");
  }
  std::vector<double> out(static_cast<std::size_t>(history_len) * num_actions, 0.0);
  for (std::size_t k = 0; k < recent_first.size(); ++k) {
    const int a = recent_first[k];
    if (a < 0 || a >= num_actions) throw std::out_of_range("action id out of range in history");
    out[k * num_actions + a] = 1.0;
  }
  return out;
}

std::vector<double> State::input() const {
  std::vector<double> x;
  x.reserve(features.size() + history.size());
  x.insert(x.end(), features.begin(), features.end());
  x.insert(x.end(), history.begin(), history.end());
  return x;
}

Episode::Episode(const EnvConfig& cfg, const Scene& scene, FeatureExtractor& extractor)
    : cfg_(cfg), scene_(&scene), extractor_(&extractor), gts_(scene.boxes()) {
  cfg_.validate();
  if (gts_.empty()) throw std::invalid_argument("scene " + scene.id + " has no annotation");
  box_ = scene.full_box();
  if (cfg_.target_mode == TargetMode::kFixed) fixed_target_ = best_iou(box_, gts_).index;
  state_.features = extractor_->extract(scene, box_);
  state_.history = encode_history(recent_, cfg_.history_len, num_actions(cfg_));
}

double Episode::metric(const Box& b) const {
  const bool use_iou = cfg_.reward_metric == RewardMetric::kIou;
  if (fixed_target_) {
    const Box& g = gts_[*fixed_target_];
    return use_iou ? iou(b, g) : recall(b, g);
  }
  return use_iou ? best_iou(b, gts_).value : best_recall(b, gts_).value;
}

StepResult Episode::step(int action) {
  if (done_) throw std::logic_error("step after episode end on scene " + scene_->id);
  const int n = num_actions(cfg_);
  if (action < 0 || action >= n) throw std::out_of_range("action id out of range");

  StepResult r;
  r.action_taken = action;
  if (action == trigger_action(cfg_.variant)) {
    r.reward = trigger_reward(metric(box_), cfg_.tau, cfg_.eta);
    done_ = true;
  } else {
    const Box next = apply_movement(cfg_, box_, action, scene_->size());
    r.reward = movement_reward(metric(box_), metric(next));
    box_ = next;
  }
  ++steps_;
  if (steps_ >= cfg_.max_steps) done_ = true;

  if (cfg_.history_len > 0) {
    recent_.push_front(action);
    if (static_cast<int>(recent_.size()) > cfg_.history_len) recent_.pop_back();
  }

  r.done = done_;
  r.box = box_;
  r.iou_now = best_iou(box_, gts_).value;
  if (!done_) {
    state_.features = extractor_->extract(*scene_, box_);
    state_.history = encode_history(recent_, cfg_.history_len, n);
    r.next_state = state_;
  }
  return r;
}

}  // namespace boxhunt

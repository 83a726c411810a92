#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "boxhunt/env.hpp"
#include "boxhunt/features.hpp"
#include "boxhunt/mlp.hpp"
#include "boxhunt/scene.hpp"

namespace boxhunt {

/// Transcript of one evaluation episode. The trigger appends an action but
/// no box, so boxes.size() == number of movement actions + 1.
struct EpisodeTrace {
  std::string scene_id;
  std::vector<Box> boxes;
  std::vector<int> actions;
  std::vector<double> rewards;  // logged only; never used by the policy
  std::vector<double> ious;     // best IoU of each box, same length as boxes
  bool triggered = false;
  double final_iou = 0.0;

  bool operator==(const EpisodeTrace&) const = default;
};

nlohmann::json to_json(const EpisodeTrace& t);
EpisodeTrace trace_from_json(const nlohmann::json& j);

std::string traces_to_jsonl(std::span<const EpisodeTrace> traces);
std::vector<EpisodeTrace> load_traces(const std::filesystem::path& path);

/// Maps a flattened state to an action id.
using Policy = std::function<int(std::span<const double>)>;

Policy greedy_policy(const Mlp& net);

/// Uniform over all actions, trigger included; seeded.
Policy random_policy(Variant variant, std::uint64_t seed);

EpisodeTrace run_episode(const Policy& policy, const EnvConfig& env_cfg, const Scene& scene,
                         FeatureExtractor& extractor, int max_steps);

/// Throws std::invalid_argument when the network does not fit the state size.
EpisodeTrace run_episode_greedy(const Mlp& net, const EnvConfig& env_cfg, const Scene& scene,
                                FeatureExtractor& extractor, int max_steps);

struct EvalReport {
  std::vector<EpisodeTrace> traces;
  double average_iou = 0.0;
  double trigger_rate = 0.0;
  double mean_steps = 0.0;
  nlohmann::json config;

  nlohmann::json to_json() const;
};

/// One episode per scene, up to env_cfg.max_steps steps each.
EvalReport evaluate(const Policy& policy, const EnvConfig& env_cfg, const Dataset& dataset,
                    FeatureExtractor& extractor);
EvalReport evaluate(const Mlp& net, const EnvConfig& env_cfg, const Dataset& dataset,
                    FeatureExtractor& extractor);

struct BestEpoch {
  std::size_t epoch = 0;
  double average_iou = 0.0;
  std::vector<double> per_epoch;
};

/// Index of the highest average; ties go to the earliest.
std::size_t best_epoch_index(std::span<const double> averages);

/// Highest average IoU over the checkpoints; ties go to the earliest epoch.
BestEpoch select_best_epoch(std::span<const Mlp> checkpoints, const EnvConfig& env_cfg,
                            const Dataset& dataset, FeatureExtractor& extractor);

struct Replay {
  std::vector<Box> boxes;
  std::vector<double> rewards;
};

/// Re-runs the trace's actions through a fresh episode.
Replay replay_trace(const EpisodeTrace& trace, const EnvConfig& env_cfg, const Scene& scene,
                    FeatureExtractor& extractor);

/// SVG 1.1 document: the scene as an embedded grayscale PNG, the ground truth
/// best matching the final box in blue (width 2), the search path in red
/// (width 1) and the final box in bold red (width 4). One user unit = 1 px.
std::string render_svg(const EpisodeTrace& trace, const Scene& scene);

void render_trace(const EpisodeTrace& trace, const Scene& scene,
                  const std::filesystem::path& out_path);

/// 8-bit grayscale PNG of the scene.
std::string encode_png(const Scene& scene);

std::string base64_encode(std::string_view bytes);

}  // namespace boxhunt

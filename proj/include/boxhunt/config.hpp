#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "boxhunt/env.hpp"
#include "boxhunt/eval.hpp"
#include "boxhunt/features.hpp"
#include "boxhunt/learner.hpp"
#include "boxhunt/scene.hpp"

namespace boxhunt {

/// Bad configuration (maps to exit code 2 in the CLI).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

nlohmann::json to_json(const EnvConfig& cfg);
nlohmann::json to_json(const TrainConfig& cfg);
nlohmann::json to_json(const ExtractorConfig& cfg);

struct DataConfig {
  std::string train;  // manifest path
  std::string test;   // manifest path; empty -> split `train`
  double test_fraction = 0.2;
  std::string class_name = "target";

  bool operator==(const DataConfig&) const = default;
};

/// Everything a training run depends on. Serializes to a canonical JSON
/// document whose hash names the run directory.
struct RunConfig {
  EnvConfig env;
  TrainConfig train;
  DataConfig data;
  ExtractorConfig features;
  std::string tag;

  /// Missing keys take the per-variant defaults; unknown keys are rejected.
  static RunConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;

  /// 16 hex digits of FNV-1a over the canonical JSON (tag excluded).
  std::string hash() const;

  /// hash, plus "-<tag>" when a tag is set.
  std::string run_name() const;
};

RunConfig load_run_config(const std::filesystem::path& path);

struct Datasets {
  Dataset train;
  Dataset test;
};

/// Loads the manifests, filters to the class, and splits when no test
/// manifest is given (seeded by train.seed).
Datasets load_datasets(const RunConfig& cfg);

struct RunOutcome {
  std::filesystem::path run_dir;
  TrainResult result;
};

/// Trains and writes config.json, log.jsonl and per-epoch checkpoints to
/// `<out_root>/<run_name>/`.
RunOutcome run_training(const RunConfig& cfg, const Datasets& data,
                        const std::filesystem::path& out_root);
RunOutcome run_training(const RunConfig& cfg, const Datasets& data,
                        const std::filesystem::path& out_root, FeatureExtractor& extractor);

struct AblationGrid {
  nlohmann::json base;
  /// One or more config paths like "train.gamma"; several paths make each
  /// value a tuple with one entry per path.
  std::vector<std::string> axis;
  std::vector<nlohmann::json> values;

  static AblationGrid from_json(const nlohmann::json& j);

  /// Run config for row `i`. Throws ConfigError for unknown paths or values
  /// whose JSON type differs from the base field.
  RunConfig row_config(std::size_t i) const;
};

struct AblationRow {
  nlohmann::json value;
  bool ok = false;
  std::string error;
  std::size_t best_epoch = 0;
  double highest_average_iou = 0.0;
  std::vector<double> per_epoch;
  std::string run_dir;
};

struct AblationResult {
  std::string axis_label;
  std::vector<AblationRow> rows;  // sorted by axis value

  nlohmann::json to_json() const;
  /// Two-column text table: axis value, highest average IoU.
  std::string to_table() const;
};

/// Trains and evaluates every row independently using up to `jobs` worker
/// threads. A failing row is reported in place without stopping the others.
/// `make_extractor_fn` is called once per row.
AblationResult run_ablation(
    const AblationGrid& grid, const std::filesystem::path& out_root, int jobs,
    const std::function<std::unique_ptr<FeatureExtractor>(const RunConfig&)>& make_extractor_fn);

}  // namespace boxhunt

// boxhunt: synthetic data, training, evaluation, rendering and ablation runs
// for the box-localization agents.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "boxhunt/config.hpp"
#include "boxhunt/eval.hpp"
#include "boxhunt/features.hpp"
#include "boxhunt/json_util.hpp"
#include "boxhunt/learner.hpp"
#include "boxhunt/scene.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace boxhunt;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

struct GlobalFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  int jobs = 1;
};

// Flags that override fields of a RunConfig, keyed by JSON path.
class Overrides {
 public:
  template <typename T>
  void add(CLI::App* app, const std::string& flag, const std::string& path, const std::string& help) {
    auto holder = std::make_shared<std::optional<T>>();
    app->add_option(flag, *holder, help);
    setters_.push_back([holder, path](json& j) {
      if (*holder) j[json::json_pointer(path)] = **holder;
    });
  }

  void apply(json& j) const {
    for (const auto& s : setters_) s(j);
  }

 private:
  std::vector<std::function<void(json&)>> setters_;
};

void add_run_overrides(CLI::App* cmd, Overrides& o) {
  o.add<std::string>(cmd, "--variant", "/env/variant", "hierarchical|dynamic");
  o.add<double>(cmd, "--scale-subregion", "/env/scale_subregion", "Zoom window size ratio");
  o.add<double>(cmd, "--scale-mask", "/env/scale_mask", "Zoom window offset ratio");
  o.add<double>(cmd, "--alpha", "/env/alpha", "Deformation step ratio");
  o.add<int>(cmd, "--history-len", "/env/history_len", "Past actions kept in the state");
  o.add<double>(cmd, "--tau", "/env/tau", "Trigger threshold");
  o.add<double>(cmd, "--eta", "/env/eta", "Trigger reward magnitude");
  o.add<std::string>(cmd, "--reward-metric", "/env/reward_metric", "iou|recall");
  o.add<std::string>(cmd, "--target-mode", "/env/target_mode", "dynamic|fixed");
  o.add<int>(cmd, "--max-steps", "/env/max_steps", "Step budget per evaluation episode");
  o.add<int>(cmd, "--epochs", "/train/epochs", "Training epochs");
  o.add<int>(cmd, "--steps-per-epoch", "/train/steps_per_epoch", "Step budget per training episode");
  o.add<std::size_t>(cmd, "--batch-size", "/train/batch_size", "Replay batch size");
  o.add<std::size_t>(cmd, "--replay-capacity", "/train/replay_capacity", "Replay memory size");
  o.add<double>(cmd, "--gamma", "/train/gamma", "Discount rate");
  o.add<double>(cmd, "--lr", "/train/learning_rate", "SGD learning rate");
  o.add<double>(cmd, "--eps-start", "/train/eps_start", "Initial exploration rate");
  o.add<int>(cmd, "--sync-interval", "/train/target_sync_interval",
             "Steps between target-network copies (0: single network)");
  o.add<std::vector<std::size_t>>(cmd, "--hidden", "/train/hidden_dims", "Hidden layer sizes");
  o.add<std::string>(cmd, "--data", "/data/train", "Training manifest");
  o.add<std::string>(cmd, "--test-data", "/data/test", "Test manifest (default: split --data)");
  o.add<double>(cmd, "--test-fraction", "/data/test_fraction", "Held-out fraction when splitting");
  o.add<std::string>(cmd, "--class", "/data/class", "Object class to localize");
  o.add<int>(cmd, "--grid", "/features/grid", "Builtin feature grid side");
  o.add<std::string>(cmd, "--tag", "/tag", "Label appended to the run directory name");
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

RunConfig build_run_config(const GlobalFlags& g, const Overrides& o, const std::string& fallback_config = {}) {
  json j = json::object();
  if (!g.config.empty()) {
    j = read_json_file(g.config);
  } else if (!fallback_config.empty()) {
    j = read_json_file(fallback_config);
  }
  o.apply(j);
  if (g.seed) j["train"]["seed"] = *g.seed;
  if (const char* server = std::getenv(kFeatureServerEnv); server != nullptr && *server != '\0') {
    j["features"]["kind"] = "external";
    j["features"]["server"] = server;
  }
  return RunConfig::from_json(j);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

// --- synth ------------------------------------------------------------------

int cmd_synth(const GlobalFlags& g, SynthSpec spec) {
  if (spec.count <= 0) throw ConfigError("--count must be positive");
  if (g.seed) spec.seed = *g.seed;
  if (g.out.empty()) throw ConfigError("--out is required");
  try {
    spec.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  const Dataset d = generate_synthetic(spec);
  const fs::path manifest = write_dataset(d, g.out);
  std::cout << d.size() << " scenes written to " << manifest.string() << "\n";
  return kExitOk;
}

// --- train ------------------------------------------------------------------

int cmd_train(const GlobalFlags& g, const Overrides& o) {
  const RunConfig cfg = build_run_config(g, o);
  const Datasets data = load_datasets(cfg);
  const fs::path out_root = g.out.empty() ? fs::path("runs") : fs::path(g.out);
  std::cerr << "training " << to_string(cfg.env.variant) << " agent on " << data.train.size()
            << " scenes (" << cfg.train.epochs << " epochs)\n";
  const RunOutcome run = run_training(cfg, data, out_root);
  for (const auto& e : run.result.log.epochs) {
    std::cerr << "epoch " << e.epoch << ": eps " << e.epsilon << ", mean reward " << e.mean_reward
              << ", trigger rate " << e.trigger_rate << ", mean loss " << e.mean_loss << "\n";
  }
  std::cout << run.run_dir.string() << "\n";
  return kExitOk;
}

// --- eval -------------------------------------------------------------------

int cmd_eval(const GlobalFlags& g, const Overrides& o, const std::string& checkpoint_arg,
             const std::string& eval_data) {
  const fs::path ck_path(checkpoint_arg);
  std::vector<fs::path> checkpoints;
  std::string fallback_config;
  if (fs::is_directory(ck_path)) {
    for (const auto& entry : fs::directory_iterator(ck_path)) {
      if (entry.path().extension() == ".ckpt") checkpoints.push_back(entry.path());
    }
    std::sort(checkpoints.begin(), checkpoints.end());
    if (fs::exists(ck_path / "config.json")) fallback_config = (ck_path / "config.json").string();
  } else if (fs::exists(ck_path)) {
    checkpoints.push_back(ck_path);
    if (fs::exists(ck_path.parent_path() / "config.json")) {
      fallback_config = (ck_path.parent_path() / "config.json").string();
    }
  } else {
    throw ConfigError("no such checkpoint: " + checkpoint_arg);
  }
  if (checkpoints.empty()) throw ConfigError("no .ckpt files in " + checkpoint_arg);

  const RunConfig cfg = build_run_config(g, o, fallback_config);
  Dataset test;
  if (!eval_data.empty()) {
    test = filter_by_class(load_dataset(eval_data), cfg.data.class_name);
  } else {
    test = load_datasets(cfg).test;
  }
  if (test.empty()) throw std::runtime_error("evaluation dataset is empty");

  const fs::path out_dir = g.out.empty() ? (fs::is_directory(ck_path) ? ck_path : ck_path.parent_path()) / "eval"
                                         : fs::path(g.out);
  fs::create_directories(out_dir);
  auto extractor = make_extractor(cfg.features);

  std::vector<double> averages;
  for (const auto& path : checkpoints) {
    const Checkpoint ck = load_checkpoint(path, cfg.env.variant);
    EvalReport report = evaluate(ck.net, cfg.env, test, *extractor);
    report.config = {{"env", to_json(cfg.env)},
                     {"checkpoint", path.filename().string()},
                     {"scenes", test.size()}};
    const std::string stem = path.stem().string();
    write_text(out_dir / ("report_" + stem + ".json"), report.to_json().dump(2) + "\n");
    write_text(out_dir / ("traces_" + stem + ".jsonl"), traces_to_jsonl(report.traces));
    std::cout << stem << ": avg IoU " << format_double(report.average_iou) << "\n";
    averages.push_back(report.average_iou);
  }
  const std::size_t best = best_epoch_index(averages);
  std::cout << "best epoch " << best << " (" << checkpoints[best].filename().string()
            << "), avg IoU " << format_double(averages[best]) << "\n";
  return kExitOk;
}

// --- render -----------------------------------------------------------------

int cmd_render(const GlobalFlags& g, const std::string& traces_path, const std::string& data_path) {
  if (g.out.empty()) throw ConfigError("--out is required");
  const auto traces = load_traces(traces_path);
  const Dataset d = load_dataset(data_path);
  for (const auto& t : traces) {
    if (d.find(t.scene_id) == nullptr) throw std::runtime_error("unknown scene id: " + t.scene_id);
  }
  fs::create_directories(g.out);
  std::map<std::string, int> used;
  for (const auto& t : traces) {
    const int n = used[t.scene_id]++;
    const std::string name = n == 0 ? t.scene_id : t.scene_id + "-" + std::to_string(n);
    render_trace(t, *d.find(t.scene_id), fs::path(g.out) / (name + ".svg"));
  }
  std::cout << traces.size() << " traces rendered to " << g.out << "\n";
  return kExitOk;
}

// --- ablate -----------------------------------------------------------------

int cmd_ablate(const GlobalFlags& g) {
  if (g.config.empty()) throw ConfigError("ablate needs --config <grid.json>");
  json grid_json = read_json_file(g.config);
  if (g.seed) grid_json["base"]["train"]["seed"] = *g.seed;
  if (const char* server = std::getenv(kFeatureServerEnv); server != nullptr && *server != '\0') {
    grid_json["base"]["features"]["kind"] = "external";
    grid_json["base"]["features"]["server"] = server;
  }
  const AblationGrid grid = AblationGrid::from_json(grid_json);
  const fs::path out_root = g.out.empty() ? fs::path("ablation") : fs::path(g.out);
  fs::create_directories(out_root);

  const AblationResult result = run_ablation(
      grid, out_root / "runs", g.jobs,
      [](const RunConfig& cfg) { return make_extractor(cfg.features); });
  const std::string table = result.to_table();
  write_text(out_root / "ablation.json", result.to_json().dump(2) + "\n");
  write_text(out_root / "ablation.txt", table);
  std::cout << table;
  for (const auto& row : result.rows) {
    if (!row.ok) return kExitRuntime;
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"boxhunt: reinforcement-learning object localization"};
  app.require_subcommand(1);

  GlobalFlags g;
  app.add_option("--config", g.config, "JSON config (run config, or grid for ablate)");
  app.add_option("--seed", g.seed, "Seed override");
  app.add_option("--out", g.out, "Output directory");
  app.add_option("--jobs", g.jobs, "Concurrent ablation rows")->check(CLI::PositiveNumber);

  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset");
  SynthSpec spec;
  synth->add_option("--count", spec.count, "Number of scenes")->required();
  synth->add_option("--width", spec.width, "Image width");
  synth->add_option("--height", spec.height, "Image height");
  synth->add_option("--class", spec.class_name, "Class name of the labeled object");
  synth->add_option("--target-min", spec.target_fraction.lo, "Smallest target side fraction");
  synth->add_option("--target-max", spec.target_fraction.hi, "Largest target side fraction");
  synth->add_option("--distractors-min", spec.distractors.lo, "Fewest distractors");
  synth->add_option("--distractors-max", spec.distractors.hi, "Most distractors");
  synth->add_option("--noise", spec.noise, "Texture noise amplitude");
  synth->add_option("--prefix", spec.id_prefix, "Scene id prefix");

  auto* train_cmd = app.add_subcommand("train", "Train an agent; prints the run directory");
  Overrides train_overrides;
  add_run_overrides(train_cmd, train_overrides);

  auto* eval_cmd = app.add_subcommand("eval", "Evaluate checkpoints greedily");
  Overrides eval_overrides;
  add_run_overrides(eval_cmd, eval_overrides);
  std::string checkpoint_arg;
  std::string eval_data;
  eval_cmd->add_option("--checkpoint", checkpoint_arg, "Checkpoint file or run directory")->required();
  eval_cmd->add_option("--eval-data", eval_data, "Manifest to evaluate on (default: the run's test split)");

  auto* render_cmd = app.add_subcommand("render", "Render traces to SVG");
  std::string traces_path;
  std::string render_data;
  render_cmd->add_option("--traces", traces_path, "Traces JSON-lines file")->required();
  render_cmd->add_option("--data", render_data, "Manifest holding the traced scenes")->required();

  app.add_subcommand("ablate", "Run a one-axis hyperparameter grid");

  for (auto* sub : app.get_subcommands({})) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (synth->parsed()) return cmd_synth(g, spec);
    if (train_cmd->parsed()) return cmd_train(g, train_overrides);
    if (eval_cmd->parsed()) return cmd_eval(g, eval_overrides, checkpoint_arg, eval_data);
    if (render_cmd->parsed()) return cmd_render(g, traces_path, render_data);
    return cmd_ablate(g);
  } catch (const ConfigError& e) {
    std::cerr << "boxhunt: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "boxhunt: " << e.what() << "\n";
    return kExitRuntime;
  }
}

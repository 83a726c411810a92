#include "boxhunt/config.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "boxhunt/json_util.hpp"

namespace boxhunt {

using nlohmann::json;
namespace fs = std::filesystem;

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

json to_json(const EnvConfig& c) {
  return {{"variant", to_string(c.variant)},
          {"scale_subregion", c.zoom.scale_subregion},
          {"scale_mask", c.zoom.scale_mask},
          {"alpha", c.alpha.value},
          {"history_len", c.history_len},
          {"tau", c.tau},
          {"eta", c.eta},
          {"reward_metric", to_string(c.reward_metric)},
          {"target_mode", to_string(c.target_mode)},
          {"max_steps", c.max_steps}};
}

json to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},
          {"steps_per_epoch", c.steps_per_epoch},
          {"batch_size", c.batch_size},
          {"replay_capacity", c.replay_capacity},
          {"gamma", c.gamma},
          {"learning_rate", c.learning_rate},
          {"eps_start", c.eps_start},
          {"eps_step", c.eps_step},
          {"eps_floor", c.eps_floor},
          {"target_sync_interval", c.target_sync_interval},
          {"hidden_dims", c.hidden_dims},
          {"seed", c.seed}};
}

json to_json(const ExtractorConfig& c) {
  return {{"kind", c.kind == ExtractorConfig::Kind::kBuiltin ? "builtin" : "external"},
          {"grid", c.grid},
          {"declared_dim", c.declared_dim},
          {"server", c.server}};
}

namespace {

// Reads fields out of one JSON object, rejecting keys nobody asked for.
class Section {
 public:
  Section(const json& j, std::string name) : name_(std::move(name)) {
    if (j.is_null()) return;
    if (!j.is_object()) throw ConfigError("config section '" + name_ + "' must be an object");
    obj_ = &j;
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (obj_ == nullptr || !obj_->contains(key)) return;
    const json& v = (*obj_)[key];
    try {
      if constexpr (std::is_same_v<T, double>) {
        if (!v.is_number()) throw ConfigError("");
      } else if constexpr (std::is_integral_v<T>) {
        if (!v.is_number_integer()) throw ConfigError("");
        if constexpr (std::is_unsigned_v<T>) {
          if (v.get<std::int64_t>() < 0) throw ConfigError("");
        }
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v.is_string()) throw ConfigError("");
      }
      out = v.get<T>();
    } catch (const std::exception&) {
      throw ConfigError("config field '" + name_ + "." + key + "' has the wrong type: " + v.dump());
    }
  }

  bool has(const char* key) const { return obj_ != nullptr && obj_->contains(key); }

  void finish() const {
    if (obj_ == nullptr) return;
    for (const auto& [k, v] : obj_->items()) {
      if (!seen_.count(k)) throw ConfigError("unknown config field '" + name_ + "." + k + "'");
    }
  }

 private:
  std::string name_;
  const json* obj_ = nullptr;
  std::set<std::string> seen_;
};

const json& section_of(const json& j, const char* key) {
  static const json kNull;
  return j.contains(key) ? j[key] : kNull;
}

template <typename F>
auto wrap_invalid(F&& f) {
  try {
    return f();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

std::string fnv1a_hex(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

}  // namespace

RunConfig RunConfig::from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  for (const auto& [k, v] : j.items()) {
    if (k != "env" && k != "train" && k != "data" && k != "features" && k != "tag") {
      throw ConfigError("unknown config section '" + k + "'");
    }
  }

  RunConfig rc;
  Section env(section_of(j, "env"), "env");
  std::string variant = "hierarchical";
  env.get("variant", variant);
  const Variant v = wrap_invalid([&] { return parse_variant(variant); });
  rc.env = EnvConfig::defaults(v);
  rc.train = TrainConfig::defaults(v);

  std::string metric = to_string(rc.env.reward_metric);
  std::string target_mode = to_string(rc.env.target_mode);
  env.get("scale_subregion", rc.env.zoom.scale_subregion);
  env.get("scale_mask", rc.env.zoom.scale_mask);
  env.get("alpha", rc.env.alpha.value);
  env.get("history_len", rc.env.history_len);
  env.get("tau", rc.env.tau);
  env.get("eta", rc.env.eta);
  env.get("reward_metric", metric);
  env.get("target_mode", target_mode);
  env.get("max_steps", rc.env.max_steps);
  env.finish();
  rc.env.reward_metric = wrap_invalid([&] { return parse_reward_metric(metric); });
  rc.env.target_mode = wrap_invalid([&] { return parse_target_mode(target_mode); });

  Section tr(section_of(j, "train"), "train");
  tr.get("epochs", rc.train.epochs);
  tr.get("steps_per_epoch", rc.train.steps_per_epoch);
  tr.get("batch_size", rc.train.batch_size);
  tr.get("replay_capacity", rc.train.replay_capacity);
  tr.get("gamma", rc.train.gamma);
  tr.get("learning_rate", rc.train.learning_rate);
  tr.get("eps_start", rc.train.eps_start);
  tr.get("eps_step", rc.train.eps_step);
  tr.get("eps_floor", rc.train.eps_floor);
  tr.get("target_sync_interval", rc.train.target_sync_interval);
  tr.get("hidden_dims", rc.train.hidden_dims);
  tr.get("seed", rc.train.seed);
  tr.finish();

  Section data(section_of(j, "data"), "data");
  data.get("train", rc.data.train);
  data.get("test", rc.data.test);
  data.get("test_fraction", rc.data.test_fraction);
  data.get("class", rc.data.class_name);
  data.finish();

  Section feat(section_of(j, "features"), "features");
  std::string kind = "builtin";
  feat.get("kind", kind);
  feat.get("grid", rc.features.grid);
  feat.get("declared_dim", rc.features.declared_dim);
  feat.get("server", rc.features.server);
  feat.finish();
  if (kind == "builtin") {
    rc.features.kind = ExtractorConfig::Kind::kBuiltin;
  } else if (kind == "external") {
    rc.features.kind = ExtractorConfig::Kind::kExternal;
  } else {
    throw ConfigError("unknown feature kind '" + kind + "' (builtin|external)");
  }

  if (j.contains("tag")) {
    if (!j["tag"].is_string()) throw ConfigError("config field 'tag' must be a string");
    rc.tag = j["tag"].get<std::string>();
  }

  wrap_invalid([&] {
    rc.env.validate();
    rc.train.validate();
    rc.features.validate();
    return 0;
  });
  if (!(rc.data.test_fraction > 0.0 && rc.data.test_fraction < 1.0)) {
    throw ConfigError("data.test_fraction must be in (0, 1)");
  }
  if (rc.data.class_name.empty()) throw ConfigError("data.class must not be empty");
  return rc;
}

json RunConfig::to_json() const {
  json j = {{"env", boxhunt::to_json(env)},
            {"train", boxhunt::to_json(train)},
            {"data",
             {{"train", data.train},
              {"test", data.test},
              {"test_fraction", data.test_fraction},
              {"class", data.class_name}}},
            {"features", boxhunt::to_json(features)}};
  if (!tag.empty()) j["tag"] = tag;
  return j;
}

std::string RunConfig::hash() const {
  json j = to_json();
  j.erase("tag");
  return fnv1a_hex(j.dump());
}

std::string RunConfig::run_name() const { return tag.empty() ? hash() : hash() + "-" + tag; }

RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return RunConfig::from_json(j);
}

Datasets load_datasets(const RunConfig& cfg) {
  if (cfg.data.train.empty()) throw ConfigError("data.train manifest is required");
  Datasets out;
  Dataset all = filter_by_class(load_dataset(cfg.data.train), cfg.data.class_name);
  if (all.empty()) {
    throw DatasetError("no training scene contains class '" + cfg.data.class_name + "'");
  }
  if (cfg.data.test.empty()) {
    auto [train, test] = split_train_test(all, cfg.data.test_fraction, cfg.train.seed);
    out.train = std::move(train);
    out.test = std::move(test);
  } else {
    out.train = std::move(all);
    out.test = filter_by_class(load_dataset(cfg.data.test), cfg.data.class_name);
    out.test.split = Split::kTest;
  }
  if (out.train.empty()) {
    throw DatasetError("no training scene contains class '" + cfg.data.class_name + "'");
  }
  return out;
}

RunOutcome run_training(const RunConfig& cfg, const Datasets& data, const fs::path& out_root) {
  auto extractor = make_extractor(cfg.features);
  return run_training(cfg, data, out_root, *extractor);
}

RunOutcome run_training(const RunConfig& cfg, const Datasets& data, const fs::path& out_root,
                        FeatureExtractor& extractor) {
  RunOutcome out;
  out.run_dir = out_root / cfg.run_name();
  fs::create_directories(out.run_dir);
  {
    std::ofstream f(out.run_dir / "config.json");
    f << cfg.to_json().dump(2) << "\n";
  }
  TrainOptions opts;
  opts.checkpoint_dir = out.run_dir;
  out.result = train(data.train, cfg.env, cfg.train, extractor, opts);
  std::ofstream log(out.run_dir / "log.jsonl", std::ios::trunc);
  log << out.result.log.to_jsonl();
  if (!log) throw std::runtime_error("failed writing " + (out.run_dir / "log.jsonl").string());
  return out;
}

// ---------------------------------------------------------------------------
// Ablation

namespace {

json::json_pointer pointer_for(const std::string& path) {
  std::string p = "/";
  for (char c : path) p += c == '.' ? '/' : c;
  return json::json_pointer(p);
}

bool same_json_kind(const json& a, const json& b) {
  if (a.is_number() && b.is_number()) {
    return !(a.is_number_integer() && b.is_number_float());
  }
  return a.type() == b.type();
}

// Numbers by value, arrays element-wise, otherwise by JSON type then value.
// json's own operator< does not order arrays under C++20.
bool value_less(const json& a, const json& b) {
  if (a.is_number() && b.is_number()) return a.get<double>() < b.get<double>();
  if (a.is_array() && b.is_array()) {
    return std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end(), value_less);
  }
  if (a.is_string() && b.is_string()) return a.get_ref<const std::string&>() < b.get_ref<const std::string&>();
  if (a.type() != b.type()) return a.type() < b.type();
  return a.dump() < b.dump();
}

}  // namespace

AblationGrid AblationGrid::from_json(const json& j) {
  AblationGrid g;
  if (!j.is_object() || !j.contains("axis") || !j.contains("values")) {
    throw ConfigError("ablation grid needs 'axis' and 'values'");
  }
  for (const auto& [k, v] : j.items()) {
    if (k != "base" && k != "axis" && k != "values") {
      throw ConfigError("unknown ablation field '" + k + "'");
    }
  }
  g.base = j.contains("base") ? j["base"] : json::object();
  if (j["axis"].is_string()) {
    g.axis.push_back(j["axis"].get<std::string>());
  } else if (j["axis"].is_array() && !j["axis"].empty()) {
    for (const auto& a : j["axis"]) {
      if (!a.is_string()) throw ConfigError("ablation axis entries must be strings");
      g.axis.push_back(a.get<std::string>());
    }
  } else {
    throw ConfigError("ablation axis must be a path or a list of paths");
  }
  if (!j["values"].is_array() || j["values"].empty()) {
    throw ConfigError("ablation values must be a non-empty list");
  }
  for (const auto& v : j["values"]) {
    if (g.axis.size() > 1 && (!v.is_array() || v.size() != g.axis.size())) {
      throw ConfigError("each ablation value must list one entry per axis path: " + v.dump());
    }
    if (std::find(g.values.begin(), g.values.end(), v) != g.values.end()) {
      throw ConfigError("duplicate ablation value " + v.dump());
    }
    g.values.push_back(v);
  }
  // Validate every row up front so a typo fails before any training starts.
  for (std::size_t i = 0; i < g.values.size(); ++i) g.row_config(i);
  return g;
}

RunConfig AblationGrid::row_config(std::size_t i) const {
  const json canonical = RunConfig::from_json(base).to_json();
  json row = canonical;
  for (std::size_t k = 0; k < axis.size(); ++k) {
    const auto ptr = pointer_for(axis[k]);
    if (!canonical.contains(ptr)) throw ConfigError("ablation axis '" + axis[k] + "' is not a config field");
    const json& value = axis.size() == 1 ? values[i] : values[i][k];
    if (!same_json_kind(canonical[ptr], value)) {
      throw ConfigError("ablation value " + value.dump() + " does not match the type of '" +
                        axis[k] + "' (" + canonical[ptr].dump() + ")");
    }
    row[ptr] = value;
  }
  return RunConfig::from_json(row);
}

json AblationResult::to_json() const {
  json rows_json = json::array();
  for (const auto& r : rows) {
    json row = {{"value", r.value}, {"ok", r.ok}};
    if (r.ok) {
      row["highest_average_iou"] = r.highest_average_iou;
      row["best_epoch"] = r.best_epoch;
      row["per_epoch"] = r.per_epoch;
      row["run_dir"] = r.run_dir;
    } else {
      row["error"] = r.error;
    }
    rows_json.push_back(row);
  }
  return {{"axis", axis_label}, {"rows", rows_json}};
}

std::string AblationResult::to_table() const {
  std::vector<std::string> left;
  left.reserve(rows.size());
  std::size_t width = axis_label.size();
  for (const auto& r : rows) {
    left.push_back(r.value.dump());
    width = std::max(width, left.back().size());
  }
  std::ostringstream os;
  os << std::left << std::setw(static_cast<int>(width)) << axis_label << "  highest average IoU\n";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    os << std::left << std::setw(static_cast<int>(width)) << left[i] << "  ";
    if (rows[i].ok) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.4f", rows[i].highest_average_iou);
      os << buf;
    } else {
      os << "FAILED: " << rows[i].error;
    }
    os << "\n";
  }
  return os.str();
}

AblationResult run_ablation(
    const AblationGrid& grid, const fs::path& out_root, int jobs,
    const std::function<std::unique_ptr<FeatureExtractor>(const RunConfig&)>& make_extractor_fn) {
  AblationResult result;
  for (std::size_t k = 0; k < grid.axis.size(); ++k) {
    result.axis_label += (k ? "," : "") + grid.axis[k];
  }
  result.rows.resize(grid.values.size());

  auto run_row = [&](std::size_t i) {
    AblationRow& row = result.rows[i];
    row.value = grid.values[i];
    try {
      const RunConfig cfg = grid.row_config(i);
      const Datasets data = load_datasets(cfg);
      auto extractor = make_extractor_fn(cfg);
      const RunOutcome run = run_training(cfg, data, out_root, *extractor);
      const BestEpoch best = select_best_epoch(run.result.checkpoints, cfg.env, data.test, *extractor);
      row.best_epoch = best.epoch;
      row.highest_average_iou = best.average_iou;
      row.per_epoch = best.per_epoch;
      row.run_dir = run.run_dir.string();
      row.ok = true;
    } catch (const std::exception& e) {
      row.ok = false;
      row.error = e.what();
    }
  };

  const std::size_t workers =
      std::clamp<std::size_t>(static_cast<std::size_t>(std::max(jobs, 1)), 1, grid.values.size());
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < grid.values.size(); i = next++) run_row(i);
    });
  }
  for (auto& t : pool) t.join();

  std::stable_sort(result.rows.begin(), result.rows.end(),
                   [](const AblationRow& a, const AblationRow& b) { return value_less(a.value, b.value); });
  return result;
}

}  // namespace boxhunt

#include "boxhunt/eval.hpp"

#include <array>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <zlib.h>

#include "boxhunt/config.hpp"
#include "boxhunt/json_util.hpp"
#include "boxhunt/learner.hpp"
#include "boxhunt/random.hpp"

namespace boxhunt {

using nlohmann::json;

json to_json(const EpisodeTrace& t) {
  json boxes = json::array();
  for (const auto& b : t.boxes) boxes.push_back({b.x1, b.y1, b.x2, b.y2});
  return {{"scene", t.scene_id},   {"boxes", boxes},         {"actions", t.actions},
          {"rewards", t.rewards},  {"ious", t.ious},         {"triggered", t.triggered},
          {"final_iou", t.final_iou}};
}

EpisodeTrace trace_from_json(const json& j) {
  EpisodeTrace t;
  t.scene_id = j.at("scene").get<std::string>();
  for (const auto& b : j.at("boxes")) {
    if (!b.is_array() || b.size() != 4) throw std::invalid_argument("trace box must have 4 numbers");
    t.boxes.push_back({b[0].get<double>(), b[1].get<double>(), b[2].get<double>(), b[3].get<double>()});
  }
  t.actions = j.at("actions").get<std::vector<int>>();
  t.rewards = j.at("rewards").get<std::vector<double>>();
  t.ious = j.at("ious").get<std::vector<double>>();
  t.triggered = j.at("triggered").get<bool>();
  t.final_iou = j.at("final_iou").get<double>();
  if (t.boxes.empty()) throw std::invalid_argument("trace for " + t.scene_id + " has no boxes");
  return t;
}

std::string traces_to_jsonl(std::span<const EpisodeTrace> traces) {
  std::string out;
  for (const auto& t : traces) {
    out += to_json(t).dump();
    out += '\n';
  }
  return out;
}

std::vector<EpisodeTrace> load_traces(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open traces " + path.string());
  std::vector<EpisodeTrace> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(trace_from_json(json::parse(line)));
    } catch (const std::exception& e) {
      throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

Policy greedy_policy(const Mlp& net) {
  return [&net](std::span<const double> x) { return argmax(net.forward(x)); };
}

Policy random_policy(Variant variant, std::uint64_t seed) {
  auto rng = std::make_shared<Rng>(seed);
  const auto n = static_cast<std::uint64_t>(num_actions(variant));
  return [rng, n](std::span<const double>) { return static_cast<int>(rng->below(n)); };
}

EpisodeTrace run_episode(const Policy& policy, const EnvConfig& env_cfg, const Scene& scene,
                         FeatureExtractor& extractor, int max_steps) {
  EnvConfig cfg = env_cfg;
  cfg.max_steps = max_steps;
  Episode ep(cfg, scene, extractor);

  const auto gts = scene.boxes();
  EpisodeTrace t;
  t.scene_id = scene.id;
  t.boxes.push_back(ep.box());
  t.ious.push_back(best_iou(ep.box(), gts).value);
  const int trigger = trigger_action(cfg.variant);
  while (!ep.done()) {
    const int action = policy(ep.state().input());
    const StepResult r = ep.step(action);
    t.actions.push_back(action);
    t.rewards.push_back(r.reward);
    if (action == trigger) {
      t.triggered = true;
    } else {
      t.boxes.push_back(r.box);
      t.ious.push_back(r.iou_now);
    }
  }
  t.final_iou = best_iou(t.boxes.back(), gts).value;
  return t;
}

EpisodeTrace run_episode_greedy(const Mlp& net, const EnvConfig& env_cfg, const Scene& scene,
                                FeatureExtractor& extractor, int max_steps) {
  const std::size_t expected = state_dim(env_cfg, extractor.dim());
  if (net.input_dim() != expected || net.output_dim() != static_cast<std::size_t>(num_actions(env_cfg))) {
    throw std::invalid_argument(
        "network shape " + std::to_string(net.input_dim()) + "->" + std::to_string(net.output_dim()) +
        " does not fit the " + to_string(env_cfg.variant) + " environment (" +
        std::to_string(expected) + "->" + std::to_string(num_actions(env_cfg)) + ")");
  }
  return run_episode(greedy_policy(net), env_cfg, scene, extractor, max_steps);
}

json EvalReport::to_json() const {
  json scenes = json::array();
  for (const auto& t : traces) {
    scenes.push_back({{"scene", t.scene_id},
                      {"final_iou", t.final_iou},
                      {"steps", t.actions.size()},
                      {"triggered", t.triggered}});
  }
  return {{"average_iou", average_iou}, {"trigger_rate", trigger_rate}, {"mean_steps", mean_steps},
          {"scenes", scenes},           {"config", config}};
}

EvalReport evaluate(const Policy& policy, const EnvConfig& env_cfg, const Dataset& dataset,
                    FeatureExtractor& extractor) {
  if (dataset.empty()) throw std::invalid_argument("evaluation dataset is empty");
  EvalReport report;
  report.config = to_json(env_cfg);
  double iou_sum = 0.0;
  double steps = 0.0;
  int triggers = 0;
  for (const auto& scene : dataset.scenes) {
    report.traces.push_back(run_episode(policy, env_cfg, scene, extractor, env_cfg.max_steps));
    const auto& t = report.traces.back();
    iou_sum += t.final_iou;
    steps += static_cast<double>(t.actions.size());
    triggers += t.triggered ? 1 : 0;
  }
  const double n = static_cast<double>(dataset.size());
  report.average_iou = iou_sum / n;
  report.trigger_rate = triggers / n;
  report.mean_steps = steps / n;
  return report;
}

EvalReport evaluate(const Mlp& net, const EnvConfig& env_cfg, const Dataset& dataset,
                    FeatureExtractor& extractor) {
  if (dataset.empty()) throw std::invalid_argument("evaluation dataset is empty");
  // Validates the network shape once up front.
  run_episode_greedy(net, env_cfg, dataset.scenes.front(), extractor, 1);
  return evaluate(greedy_policy(net), env_cfg, dataset, extractor);
}

std::size_t best_epoch_index(std::span<const double> averages) {
  if (averages.empty()) throw std::invalid_argument("no epochs to select from");
  std::size_t best = 0;
  for (std::size_t i = 1; i < averages.size(); ++i) {
    if (averages[i] > averages[best]) best = i;
  }
  return best;
}

BestEpoch select_best_epoch(std::span<const Mlp> checkpoints, const EnvConfig& env_cfg,
                            const Dataset& dataset, FeatureExtractor& extractor) {
  if (checkpoints.empty()) throw std::invalid_argument("no checkpoints to select from");
  BestEpoch best;
  for (const auto& net : checkpoints) {
    best.per_epoch.push_back(evaluate(net, env_cfg, dataset, extractor).average_iou);
  }
  best.epoch = best_epoch_index(best.per_epoch);
  best.average_iou = best.per_epoch[best.epoch];
  return best;
}

Replay replay_trace(const EpisodeTrace& trace, const EnvConfig& env_cfg, const Scene& scene,
                    FeatureExtractor& extractor) {
  EnvConfig cfg = env_cfg;
  cfg.max_steps = std::max<int>(1, static_cast<int>(trace.actions.size()));
  Episode ep(cfg, scene, extractor);
  Replay r;
  r.boxes.push_back(ep.box());
  const int trigger = trigger_action(cfg.variant);
  for (int a : trace.actions) {
    const StepResult s = ep.step(a);
    r.rewards.push_back(s.reward);
    if (a != trigger) r.boxes.push_back(s.box);
  }
  return r;
}

// ---------------------------------------------------------------------------
// Rendering

std::string base64_encode(std::string_view bytes) {
  static constexpr char kAlphabet[] =
      "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 2 < bytes.size(); i += 3) {
    const unsigned v = (static_cast<unsigned char>(bytes[i]) << 16) |
                       (static_cast<unsigned char>(bytes[i + 1]) << 8) |
                       static_cast<unsigned char>(bytes[i + 2]);
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += kAlphabet[(v >> 6) & 63];
    out += kAlphabet[v & 63];
  }
  if (i < bytes.size()) {
    unsigned v = static_cast<unsigned char>(bytes[i]) << 16;
    if (i + 1 < bytes.size()) v |= static_cast<unsigned char>(bytes[i + 1]) << 8;
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += i + 1 < bytes.size() ? kAlphabet[(v >> 6) & 63] : '=';
    out += '=';
  }
  return out;
}

namespace {

void put_be32(std::string& out, std::uint32_t v) {
  out += static_cast<char>((v >> 24) & 0xff);
  out += static_cast<char>((v >> 16) & 0xff);
  out += static_cast<char>((v >> 8) & 0xff);
  out += static_cast<char>(v & 0xff);
}

void put_chunk(std::string& out, const char* type, const std::string& data) {
  put_be32(out, static_cast<std::uint32_t>(data.size()));
  std::string body(type, 4);
  body += data;
  out += body;
  put_be32(out, static_cast<std::uint32_t>(
                    crc32(0L, reinterpret_cast<const Bytef*>(body.data()), static_cast<uInt>(body.size()))));
}

}  // namespace

std::string encode_png(const Scene& scene) {
  std::string raw;
  raw.reserve(static_cast<std::size_t>(scene.height) * (scene.width + 1));
  for (int y = 0; y < scene.height; ++y) {
    raw += '\0';  // filter: none
    for (int x = 0; x < scene.width; ++x) raw += static_cast<char>(to_byte(scene.at(x, y)));
  }
  uLongf packed_len = compressBound(static_cast<uLong>(raw.size()));
  std::string packed(packed_len, '\0');
  if (compress2(reinterpret_cast<Bytef*>(packed.data()), &packed_len,
                reinterpret_cast<const Bytef*>(raw.data()), static_cast<uLong>(raw.size()),
                9) != Z_OK) {
    throw std::runtime_error("PNG compression failed");
  }
  packed.resize(packed_len);

  std::string png("\x89PNG\r\n\x1a\n", 8);
  std::string ihdr;
  put_be32(ihdr, static_cast<std::uint32_t>(scene.width));
  put_be32(ihdr, static_cast<std::uint32_t>(scene.height));
  ihdr += static_cast<char>(8);  // bit depth
  ihdr += static_cast<char>(0);  // grayscale
  ihdr += std::string(3, '\0');  // compression, filter, interlace
  put_chunk(png, "IHDR", ihdr);
  put_chunk(png, "IDAT", packed);
  put_chunk(png, "IEND", "");
  return png;
}

namespace {

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

void svg_rect(std::ostringstream& os, const Box& b, const char* color, int width) {
  os << "  <rect x=\"" << format_double(b.x1) << "\" y=\"" << format_double(b.y1)
     << "\" width=\"" << format_double(b.width()) << "\" height=\"" << format_double(b.height())
     << "\" data-box=\"" << format_double(b.x1) << " " << format_double(b.y1) << " "
     << format_double(b.x2) << " " << format_double(b.y2) << "\" fill=\"none\" stroke=\"" << color
     << "\" stroke-width=\"" << width << "\"/>\n";
}

}  // namespace

std::string render_svg(const EpisodeTrace& trace, const Scene& scene) {
  std::ostringstream os;
  os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
     << "<svg xmlns=\"http://www.w3.org/2000/svg\" xmlns:xlink=\"http://www.w3.org/1999/xlink\" "
     << "version=\"1.1\" width=\"" << scene.width << "\" height=\"" << scene.height
     << "\" viewBox=\"0 0 " << scene.width << " " << scene.height << "\">\n"
     << "  <title>" << xml_escape(scene.id) << "</title>\n"
     << "  <image x=\"0\" y=\"0\" width=\"" << scene.width << "\" height=\"" << scene.height
     << "\" image-rendering=\"pixelated\" xlink:href=\"data:image/png;base64,"
     << base64_encode(encode_png(scene)) << "\"/>\n";

  const auto gts = scene.boxes();
  if (!gts.empty() && !trace.boxes.empty()) {
    svg_rect(os, gts[best_iou(trace.boxes.back(), gts).index], "blue", 2);
  }
  for (std::size_t i = 0; i < trace.boxes.size(); ++i) {
    svg_rect(os, trace.boxes[i], "red", i + 1 == trace.boxes.size() ? 4 : 1);
  }
  os << "</svg>\n";
  return os.str();
}

void render_trace(const EpisodeTrace& trace, const Scene& scene,
                  const std::filesystem::path& out_path) {
  const std::string svg = render_svg(trace, scene);
  std::ofstream out(out_path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + out_path.string());
  out << svg;
  if (!out) throw std::runtime_error("failed writing " + out_path.string());
}

}  // namespace boxhunt

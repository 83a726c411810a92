#include "boxhunt/scene.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "boxhunt/json_util.hpp"
#include "boxhunt/random.hpp"

namespace boxhunt {

namespace fs = std::filesystem;
using nlohmann::json;

std::vector<Box> Scene::boxes() const {
  std::vector<Box> out;
  out.reserve(annotations.size());
  for (const auto& a : annotations) out.push_back(a.box);
  return out;
}

void Scene::validate() const {
  if (width <= 0 || height <= 0) {
    throw DatasetError("scene " + id + ": non-positive image size");
  }
  if (pixels.size() != static_cast<std::size_t>(width) * height) {
    throw DatasetError("scene " + id + ": pixel count does not match width*height");
  }
  for (const auto& a : annotations) {
    const Box& b = a.box;
    if (!b.valid()) {
      throw DatasetError("scene " + id + ": degenerate box " + to_string(b));
    }
    if (b.x1 < 0 || b.y1 < 0 || b.x2 > width || b.y2 > height) {
      throw DatasetError("scene " + id + ": box " + to_string(b) + " outside image bounds");
    }
  }
}

const Scene* Dataset::find(const std::string& id) const {
  for (const auto& s : scenes) {
    if (s.id == id) return &s;
  }
  return nullptr;
}

void SynthSpec::validate() const {
  auto fraction_ok = [](const Range& r) {
    return r.lo > 0.0 && r.hi < 1.0 && r.lo <= r.hi;
  };
  if (count <= 0) throw std::invalid_argument("synth: count must be positive");
  if (width < 8 || height < 8) throw std::invalid_argument("synth: image must be at least 8x8");
  if (!fraction_ok(target_fraction)) throw std::invalid_argument("synth: bad target fraction range");
  if (!fraction_ok(distractor_fraction)) {
    throw std::invalid_argument("synth: bad distractor fraction range");
  }
  if (distractors.lo < 0 || distractors.lo > distractors.hi) {
    throw std::invalid_argument("synth: bad distractor count range");
  }
  if (!(noise >= 0.0 && noise <= 0.2)) throw std::invalid_argument("synth: noise must be in [0, 0.2]");
  if (class_name.empty()) throw std::invalid_argument("synth: empty class name");
}

std::uint8_t to_byte(double intensity) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(intensity, 0.0, 1.0) * 255.0));
}

namespace {

double quantize(double v) { return to_byte(v) / 255.0; }

struct IntRect {
  int x = 0, y = 0, w = 0, h = 0;
};

IntRect place_rect(Rng& rng, int width, int height, const Range& fraction) {
  auto side = [&](int extent) {
    const double f = rng.uniform(fraction.lo, fraction.hi);
    const int s = static_cast<int>(std::lround(f * extent));
    return std::clamp(s, 4, extent);
  };
  IntRect r;
  r.w = side(width);
  r.h = side(height);
  r.x = static_cast<int>(rng.between(0, width - r.w));
  r.y = static_cast<int>(rng.between(0, height - r.h));
  return r;
}

void fill(std::vector<double>& px, int width, const IntRect& r, Rng& rng, double lo, double hi) {
  for (int y = r.y; y < r.y + r.h; ++y) {
    for (int x = r.x; x < r.x + r.w; ++x) {
      px[static_cast<std::size_t>(y) * width + x] = quantize(rng.uniform(lo, hi));
    }
  }
}

std::string scene_id(const std::string& prefix, int i) {
  std::ostringstream os;
  os << prefix << "_";
  os.width(4);
  os.fill('0');
  os << i;
  return os.str();
}

}  // namespace

Dataset generate_synthetic(const SynthSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  Dataset d;
  d.scenes.reserve(spec.count);
  for (int i = 0; i < spec.count; ++i) {
    Scene s;
    s.id = scene_id(spec.id_prefix, i);
    s.width = spec.width;
    s.height = spec.height;
    s.pixels.resize(static_cast<std::size_t>(spec.width) * spec.height);

    const double background = rng.uniform(0.1, 0.4 - spec.noise);
    for (auto& p : s.pixels) p = quantize(background + spec.noise * rng.uniform());

    const int n_distractors =
        static_cast<int>(rng.between(spec.distractors.lo, spec.distractors.hi));
    for (int k = 0; k < n_distractors; ++k) {
      const IntRect r = place_rect(rng, spec.width, spec.height, spec.distractor_fraction);
      fill(s.pixels, spec.width, r, rng, 0.5, 0.6);
    }

    // Drawn last so the labeled object is never occluded.
    const IntRect t = place_rect(rng, spec.width, spec.height, spec.target_fraction);
    fill(s.pixels, spec.width, t, rng, 0.8, std::min(1.0, 0.8 + 2.0 * spec.noise));
    s.annotations.push_back(
        {spec.class_name, Box{double(t.x), double(t.y), double(t.x + t.w), double(t.y + t.h)}});
    d.scenes.push_back(std::move(s));
  }
  return d;
}

// ---------------------------------------------------------------------------
// PNM

namespace {

std::string next_token(std::istream& in) {
  std::string tok;
  while (in) {
    int c = in.get();
    if (c == EOF) break;
    if (c == '#') {
      std::string skip;
      std::getline(in, skip);
      if (!tok.empty()) break;
      continue;
    }
    if (std::isspace(c)) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(static_cast<char>(c));
  }
  return tok;
}

}  // namespace

GrayImage read_pnm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DatasetError("cannot open image " + path.string());
  const std::string magic = next_token(in);
  if (magic != "P5" && magic != "P6") {
    throw DatasetError(path.string() + ": not a binary PGM/PPM file");
  }
  GrayImage img;
  int maxval = 0;
  try {
    img.width = std::stoi(next_token(in));
    img.height = std::stoi(next_token(in));
    maxval = std::stoi(next_token(in));
  } catch (const std::exception&) {
    throw DatasetError(path.string() + ": malformed PNM header");
  }
  if (img.width <= 0 || img.height <= 0) throw DatasetError(path.string() + ": bad dimensions");
  if (maxval != 255) throw DatasetError(path.string() + ": only maxval 255 is supported");

  const std::size_t channels = magic == "P6" ? 3 : 1;
  const std::size_t n = static_cast<std::size_t>(img.width) * img.height;
  std::vector<unsigned char> raw(n * channels);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (static_cast<std::size_t>(in.gcount()) != raw.size()) {
    throw DatasetError(path.string() + ": truncated pixel data");
  }
  img.pixels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (channels == 1) {
      img.pixels[i] = raw[i] / 255.0;
    } else {
      const int sum = raw[3 * i] + raw[3 * i + 1] + raw[3 * i + 2];
      img.pixels[i] = sum / (3.0 * 255.0);
    }
  }
  return img;
}

void write_pgm(const fs::path& path, int width, int height, const std::vector<double>& pixels) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DatasetError("cannot write image " + path.string());
  out << "P5\n" << width << " " << height << "\n255\n";
  std::vector<unsigned char> raw(pixels.size());
  std::transform(pixels.begin(), pixels.end(), raw.begin(), to_byte);
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!out) throw DatasetError("failed writing image " + path.string());
}

// ---------------------------------------------------------------------------
// Manifest

namespace {

Scene parse_manifest_line(const json& j, const fs::path& base) {
  Scene s;
  s.id = j.at("id").get<std::string>();
  const auto image = j.at("image").get<std::string>();
  s.width = j.at("width").get<int>();
  s.height = j.at("height").get<int>();
  for (const auto& o : j.at("objects")) {
    const auto& b = o.at("box");
    if (!b.is_array() || b.size() != 4) throw DatasetError("scene " + s.id + ": box must have 4 numbers");
    s.annotations.push_back(
        {o.at("class").get<std::string>(),
         Box{b[0].get<double>(), b[1].get<double>(), b[2].get<double>(), b[3].get<double>()}});
  }
  for (const auto& a : s.annotations) {
    if (!a.box.valid()) throw DatasetError("scene " + s.id + ": degenerate box " + to_string(a.box));
  }

  GrayImage img = read_pnm(base / image);
  if (img.width != s.width || img.height != s.height) {
    throw DatasetError("scene " + s.id + ": image is " + std::to_string(img.width) + "x" +
                       std::to_string(img.height) + " but manifest says " +
                       std::to_string(s.width) + "x" + std::to_string(s.height));
  }
  s.pixels = std::move(img.pixels);
  s.validate();
  return s;
}

}  // namespace

Dataset load_dataset(const fs::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw DatasetError("cannot open manifest " + manifest_path.string());
  const fs::path base = manifest_path.parent_path();

  Dataset d;
  std::set<std::string> seen;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = manifest_path.string() + ":" + std::to_string(line_no) + ": ";
    Scene s;
    try {
      s = parse_manifest_line(json::parse(line), base);
    } catch (const json::exception& e) {
      throw DatasetError(where + "malformed manifest line (" + e.what() + ")");
    } catch (const DatasetError& e) {
      throw DatasetError(where + e.what());
    }
    if (!seen.insert(s.id).second) throw DatasetError(where + "duplicate scene id " + s.id);
    d.scenes.push_back(std::move(s));
  }
  return d;
}

fs::path write_dataset(const Dataset& d, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir / "images", ec);
  if (ec) throw DatasetError("cannot create " + (dir / "images").string() + ": " + ec.message());

  const fs::path manifest = dir / "manifest.jsonl";
  std::ofstream out(manifest);
  if (!out) throw DatasetError("cannot write " + manifest.string());
  for (const auto& s : d.scenes) {
    const std::string rel = "images/" + s.id + ".pgm";
    write_pgm(dir / rel, s.width, s.height, s.pixels);
    json objects = json::array();
    for (const auto& a : s.annotations) {
      objects.push_back({{"class", a.class_name},
                         {"box", {json_number(a.box.x1), json_number(a.box.y1),
                                  json_number(a.box.x2), json_number(a.box.y2)}}});
    }
    json line = {{"id", s.id}, {"image", rel}, {"width", s.width}, {"height", s.height},
                 {"objects", objects}};
    out << line.dump() << "\n";
  }
  if (!out) throw DatasetError("failed writing " + manifest.string());
  return manifest;
}

Dataset filter_by_class(const Dataset& d, const std::string& class_name) {
  Dataset out;
  out.split = d.split;
  for (const auto& s : d.scenes) {
    Scene kept = s;
    kept.annotations.clear();
    for (const auto& a : s.annotations) {
      if (a.class_name == class_name) kept.annotations.push_back(a);
    }
    if (!kept.annotations.empty()) out.scenes.push_back(std::move(kept));
  }
  return out;
}

std::pair<Dataset, Dataset> split_train_test(const Dataset& d, double test_fraction,
                                             std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw std::invalid_argument("test fraction must be in (0, 1)");
  }
  if (d.size() < 2) throw DatasetError("need at least 2 scenes to split");

  const auto n_test = static_cast<std::size_t>(std::floor(d.size() * test_fraction));
  Rng rng(seed);
  std::vector<std::size_t> perm = rng.permutation(d.size());
  std::vector<bool> is_test(d.size(), false);
  for (std::size_t i = 0; i < n_test; ++i) is_test[perm[i]] = true;

  Dataset train, test;
  train.split = Split::kTrain;
  test.split = Split::kTest;
  for (std::size_t i = 0; i < d.size(); ++i) {
    (is_test[i] ? test : train).scenes.push_back(d.scenes[i]);
  }
  return {std::move(train), std::move(test)};
}

}  // namespace boxhunt

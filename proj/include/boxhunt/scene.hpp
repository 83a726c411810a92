#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "boxhunt/geometry.hpp"

namespace boxhunt {

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Annotation {
  std::string class_name;
  Box box;

  bool operator==(const Annotation&) const = default;
};

/// A grayscale image plus its labeled boxes. Pixels are row-major
/// intensities in [0, 1].
struct Scene {
  std::string id;
  int width = 0;
  int height = 0;
  std::vector<double> pixels;
  std::vector<Annotation> annotations;

  ImageSize size() const { return {static_cast<double>(width), static_cast<double>(height)}; }
  Box full_box() const { return {0.0, 0.0, static_cast<double>(width), static_cast<double>(height)}; }
  double at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
  std::vector<Box> boxes() const;

  /// Throws DatasetError naming the scene when an invariant is broken.
  void validate() const;

  bool operator==(const Scene&) const = default;
};

enum class Split { kTrain, kTest };

struct Dataset {
  std::vector<Scene> scenes;
  Split split = Split::kTrain;

  std::size_t size() const { return scenes.size(); }
  bool empty() const { return scenes.empty(); }
  const Scene* find(const std::string& id) const;
};

struct Range {
  double lo = 0.0;
  double hi = 0.0;
};

struct CountRange {
  int lo = 0;
  int hi = 0;
};

/// Parameters of the procedural scene generator.
struct SynthSpec {
  int count = 200;
  int width = 64;
  int height = 64;
  std::string class_name = "target";
  Range target_fraction{0.25, 0.5};
  CountRange distractors{0, 2};
  Range distractor_fraction{0.1, 0.25};
  double noise = 0.1;
  std::uint64_t seed = 7;
  std::string id_prefix = "synth";

  /// Throws std::invalid_argument when a field is out of range.
  void validate() const;
};

/// Deterministic in `spec`. Each scene holds exactly one labeled bright
/// rectangle on a dark textured background, plus unlabeled dimmer
/// distractor rectangles. Pixel values are multiples of 1/255 so the scene
/// survives a PGM round trip unchanged.
Dataset generate_synthetic(const SynthSpec& spec);

/// Reads a JSON-lines manifest; image paths are relative to its directory.
Dataset load_dataset(const std::filesystem::path& manifest_path);

/// Writes `<dir>/images/<id>.pgm` and `<dir>/manifest.jsonl`.
std::filesystem::path write_dataset(const Dataset& d, const std::filesystem::path& dir);

Dataset filter_by_class(const Dataset& d, const std::string& class_name);

/// Test size is floor(n * test_fraction); both halves keep input order.
std::pair<Dataset, Dataset> split_train_test(const Dataset& d, double test_fraction,
                                             std::uint64_t seed);

// Binary PNM (P5 grayscale, P6 RGB) with maxval 255. RGB is reduced to the
// mean of its channels.
struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<double> pixels;
};

GrayImage read_pnm(const std::filesystem::path& path);
void write_pgm(const std::filesystem::path& path, int width, int height,
               const std::vector<double>& pixels);
std::uint8_t to_byte(double intensity);

}  // namespace boxhunt

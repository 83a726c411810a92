#include <algorithm>
#include <set>
#include <string>

#include "doctest.h"

#include "boxhunt/scene.hpp"
#include "test_util.hpp"

using namespace boxhunt;
using boxhunt::testing::TempDir;
using boxhunt::testing::write_file;

namespace {

SynthSpec small_spec(int count, std::uint64_t seed = 7) {
  SynthSpec s;
  s.count = count;
  s.seed = seed;
  return s;
}

std::string pgm_bytes(int w, int h, unsigned char value) {
  std::string out = "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  out.append(static_cast<std::size_t>(w) * h, static_cast<char>(value));
  return out;
}

std::string manifest_line(const std::string& id, const std::string& image, int w, int h,
                          const std::string& objects) {
  return R"({"id":")" + id + R"(","image":")" + image + R"(","width":)" + std::to_string(w) +
         R"(,"height":)" + std::to_string(h) + R"(,"objects":)" + objects + "}\n";
}

bool contains(const std::string& haystack, const std::string& needle) {
  return haystack.find(needle) != std::string::npos;
}

std::string error_of(const std::filesystem::path& manifest) {
  try {
    load_dataset(manifest);
  } catch (const DatasetError& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST_CASE("synthetic generation is deterministic") {
  CHECK(generate_synthetic(small_spec(1)).scenes == generate_synthetic(small_spec(1)).scenes);
  CHECK(generate_synthetic(small_spec(5, 1)).scenes != generate_synthetic(small_spec(5, 2)).scenes);
}

TEST_CASE("synthetic scenes are well formed") {
  const Dataset d = generate_synthetic(small_spec(50));
  REQUIRE(d.size() == 50);
  std::set<std::string> ids;
  for (const auto& s : d.scenes) {
    CHECK_NOTHROW(s.validate());
    CHECK(ids.insert(s.id).second);
    REQUIRE(s.annotations.size() == 1);
    const Box& b = s.annotations[0].box;
    CHECK(b.x1 >= 0);
    CHECK(b.y1 >= 0);
    CHECK(b.x2 <= s.width);
    CHECK(b.y2 <= s.height);
    for (double p : s.pixels) {
      CHECK(p >= 0.0);
      CHECK(p <= 1.0);
      CHECK(p * 255.0 == std::round(p * 255.0));
    }
  }
  CHECK(d.scenes.front().id == "synth_0000");
}

TEST_CASE("the labeled target is the brightest region") {
  const Dataset d = generate_synthetic(small_spec(20));
  for (const auto& s : d.scenes) {
    const Box& b = s.annotations[0].box;
    double inside = 0.0, outside = 0.0;
    int n_in = 0, n_out = 0;
    for (int y = 0; y < s.height; ++y) {
      for (int x = 0; x < s.width; ++x) {
        const bool in = x >= b.x1 && x < b.x2 && y >= b.y1 && y < b.y2;
        (in ? inside : outside) += s.at(x, y);
        (in ? n_in : n_out) += 1;
        if (in) CHECK(s.at(x, y) >= 0.8 - 1e-12);
      }
    }
    CHECK(inside / n_in > outside / n_out + 0.3);
  }
}

TEST_CASE("a fixed target fraction gives the rounded side length") {
  SynthSpec spec = small_spec(30);
  spec.target_fraction = {0.4, 0.4};
  for (const auto& s : generate_synthetic(spec).scenes) {
    const Box& b = s.annotations[0].box;
    CHECK(b.width() >= 25);
    CHECK(b.width() <= 26);
    CHECK(b.height() >= 25);
    CHECK(b.height() <= 26);
  }
}

TEST_CASE("synth spec validation") {
  SynthSpec s;
  s.count = 0;
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
  s = SynthSpec{};
  s.target_fraction = {0.6, 0.4};
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
  s = SynthSpec{};
  s.noise = -1;
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
}

TEST_CASE("empty manifest loads as an empty dataset") {
  TempDir dir;
  write_file(dir / "manifest.jsonl", "");
  CHECK(load_dataset(dir / "manifest.jsonl").empty());
}

TEST_CASE("two-line manifest with grayscale and color images") {
  TempDir dir;
  std::filesystem::create_directories(dir / "img");
  write_file(dir / "img/a.pgm", pgm_bytes(8, 6, 51));
  // 2x2 RGB with channel values (30, 60, 90) everywhere: mean 60.
  std::string ppm = "P6\n# comment\n2 2\n255\n";
  for (int i = 0; i < 4; ++i) ppm += std::string{char(30), char(60), char(90)};
  write_file(dir / "img/b.ppm", ppm);
  write_file(dir / "manifest.jsonl",
             manifest_line("a", "img/a.pgm", 8, 6, R"([{"class":"aeroplane","box":[1,1,5,4]}])") +
                 manifest_line("b", "img/b.ppm", 2, 2,
                               R"([{"class":"aeroplane","box":[0,0,1.5,2]}])"));
  const Dataset d = load_dataset(dir / "manifest.jsonl");
  REQUIRE(d.size() == 2);
  CHECK(d.scenes[0].annotations.size() == 1);
  CHECK(d.scenes[1].annotations.size() == 1);
  CHECK(d.scenes[0].annotations[0].box == Box{1, 1, 5, 4});
  CHECK(d.scenes[1].annotations[0].box == Box{0, 0, 1.5, 2});
  CHECK(d.scenes[0].at(3, 2) == doctest::Approx(51.0 / 255.0));
  CHECK(d.scenes[1].at(1, 1) == doctest::Approx(60.0 / 255.0));
  CHECK(d.find("b") == &d.scenes[1]);
  CHECK(d.find("zzz") == nullptr);
}

TEST_CASE("manifest errors name the scene or the line") {
  TempDir dir;
  write_file(dir / "a.pgm", pgm_bytes(8, 8, 0));

  write_file(dir / "bad_box.jsonl", manifest_line("scene_x", "a.pgm", 8, 8,
                                                  R"([{"class":"c","box":[5,1,5,4]}])"));
  CHECK(contains(error_of(dir / "bad_box.jsonl"), "scene_x"));

  write_file(dir / "outside.jsonl", manifest_line("scene_y", "a.pgm", 8, 8,
                                                  R"([{"class":"c","box":[0,0,9,4]}])"));
  const std::string outside = error_of(dir / "outside.jsonl");
  CHECK(contains(outside, "scene_y"));
  CHECK(contains(outside, "outside"));

  write_file(dir / "malformed.jsonl",
             manifest_line("ok", "a.pgm", 8, 8, "[]") + "\n{not json\n");
  CHECK(contains(error_of(dir / "malformed.jsonl"), ":3:"));

  write_file(dir / "dup.jsonl",
             manifest_line("d", "a.pgm", 8, 8, "[]") + manifest_line("d", "a.pgm", 8, 8, "[]"));
  CHECK(contains(error_of(dir / "dup.jsonl"), "duplicate"));

  write_file(dir / "size.jsonl", manifest_line("s", "a.pgm", 9, 8, "[]"));
  CHECK(contains(error_of(dir / "size.jsonl"), "image is 8x8"));

  write_file(dir / "noimg.jsonl", manifest_line("n", "missing.pgm", 8, 8, "[]"));
  CHECK(contains(error_of(dir / "noimg.jsonl"), "missing.pgm"));

  CHECK_THROWS_AS(load_dataset(dir / "absent.jsonl"), DatasetError);
}

TEST_CASE("unsupported image files are rejected") {
  TempDir dir;
  write_file(dir / "p2.pgm", "P2\n2 2\n255\n0 0 0 0\n");
  CHECK_THROWS_AS(read_pnm(dir / "p2.pgm"), DatasetError);
  write_file(dir / "deep.pgm", "P5\n2 2\n65535\n");
  CHECK_THROWS_AS(read_pnm(dir / "deep.pgm"), DatasetError);
  write_file(dir / "short.pgm", "P5\n4 4\n255\nab");
  CHECK_THROWS_AS(read_pnm(dir / "short.pgm"), DatasetError);
}

TEST_CASE("written datasets load back unchanged") {
  TempDir dir;
  const Dataset d = generate_synthetic(small_spec(12, 3));
  const auto manifest = write_dataset(d, dir.path());
  CHECK(manifest == dir / "manifest.jsonl");
  const Dataset back = load_dataset(manifest);
  CHECK(back.scenes == d.scenes);
}

TEST_CASE("filter by class") {
  Scene s = boxhunt::testing::flat_scene(10, 10, 0.0, {}, "mixed");
  s.annotations = {{"aeroplane", {0, 0, 2, 2}}, {"person", {1, 1, 3, 3}}, {"aeroplane", {4, 4, 6, 6}}};
  Scene t = boxhunt::testing::flat_scene(10, 10, 0.0, {}, "people");
  t.annotations = {{"person", {0, 0, 5, 5}}};
  Dataset d;
  d.scenes = {s, t};

  CHECK(filter_by_class(d, "cat").empty());
  const Dataset planes = filter_by_class(d, "aeroplane");
  REQUIRE(planes.size() == 1);
  CHECK(planes.scenes[0].annotations.size() == 2);
  CHECK(filter_by_class(planes, "aeroplane").scenes == planes.scenes);
  const Dataset people = filter_by_class(d, "person");
  REQUIRE(people.size() == 2);
  CHECK(people.scenes[0].id == "mixed");
  CHECK(people.scenes[1].id == "people");
}

TEST_CASE("train/test split sizes and determinism") {
  const Dataset ten = generate_synthetic(small_spec(10));
  const auto [train, test] = split_train_test(ten, 0.2, 1);
  CHECK(train.size() == 8);
  CHECK(test.size() == 2);
  CHECK(train.split == Split::kTrain);
  CHECK(test.split == Split::kTest);
  std::set<std::string> ids;
  for (const auto& s : train.scenes) ids.insert(s.id);
  for (const auto& s : test.scenes) CHECK(ids.insert(s.id).second);
  CHECK(ids.size() == 10);

  const auto again = split_train_test(ten, 0.2, 1);
  CHECK(again.first.scenes == train.scenes);
  CHECK(again.second.scenes == test.scenes);

  const auto [a, b] = split_train_test(generate_synthetic(small_spec(100)), 0.25, 4);
  CHECK(a.size() == 75);
  CHECK(b.size() == 25);
}

TEST_CASE("split keeps the input order inside each half") {
  const Dataset d = generate_synthetic(small_spec(30));
  const auto [train, test] = split_train_test(d, 0.3, 9);
  auto ordered = [](const Dataset& x) {
    return std::is_sorted(x.scenes.begin(), x.scenes.end(),
                          [](const Scene& l, const Scene& r) { return l.id < r.id; });
  };
  CHECK(ordered(train));
  CHECK(ordered(test));
}

TEST_CASE("split rejects tiny datasets and bad fractions") {
  CHECK_THROWS_AS(split_train_test(generate_synthetic(small_spec(1)), 0.5, 1), DatasetError);
  CHECK_THROWS_AS(split_train_test(generate_synthetic(small_spec(4)), 1.0, 1), std::invalid_argument);
  CHECK_THROWS_AS(split_train_test(generate_synthetic(small_spec(4)), 0.0, 1), std::invalid_argument);
}

TEST_CASE("byte quantization") {
  CHECK(to_byte(0.0) == 0);
  CHECK(to_byte(1.0) == 255);
  CHECK(to_byte(-3.0) == 0);
  CHECK(to_byte(2.0) == 255);
  CHECK(to_byte(128.0 / 255.0) == 128);
}

#include <deque>
#include <stdexcept>
#include <vector>

#include "doctest.h"

#include "boxhunt/env.hpp"
#include "test_util.hpp"

using namespace boxhunt;
using boxhunt::testing::flat_scene;

namespace {

/// Returns the box coordinates as features and remembers each request.
class BoxEcho : public FeatureExtractor {
 public:
  std::size_t dim() const override { return 4; }
  FeatureVector extract(const Scene&, const Box& b) override {
    seen.push_back(b);
    return {b.x1, b.y1, b.x2, b.y2};
  }
  std::vector<Box> seen;
};

EnvConfig hier() { return EnvConfig::defaults(Variant::kHierarchical); }
EnvConfig dyn() { return EnvConfig::defaults(Variant::kDynamic); }

int ones(const std::vector<double>& v) {
  int n = 0;
  for (double x : v) {
    CHECK((x == 0.0 || x == 1.0));
    n += x == 1.0;
  }
  return n;
}

}  // namespace

TEST_CASE("action counts and names") {
  CHECK(num_actions(Variant::kHierarchical) == 6);
  CHECK(num_actions(Variant::kDynamic) == 9);
  CHECK(trigger_action(Variant::kHierarchical) == 5);
  CHECK(trigger_action(Variant::kDynamic) == 8);
  CHECK(action_name(Variant::kHierarchical, 0) == "TL");
  CHECK(action_name(Variant::kHierarchical, 5) == "TRIGGER");
  CHECK(action_name(Variant::kDynamic, 0) == "RIGHT");
  CHECK(action_name(Variant::kDynamic, 7) == "TALLER");
  CHECK_THROWS_AS(action_name(Variant::kDynamic, 9), std::out_of_range);
}

TEST_CASE("per-variant defaults") {
  CHECK(hier().history_len == 4);
  CHECK(dyn().history_len == 10);
  CHECK(hier().tau == 0.5);
  CHECK(dyn().tau == 0.6);
  CHECK(hier().eta == 3.0);
  CHECK(dyn().eta == 3.0);
  CHECK(hier().max_steps == 10);
  CHECK(state_dim(hier(), 0) == 24);
  CHECK(state_dim(dyn(), 0) == 90);
  CHECK(parse_variant(to_string(Variant::kDynamic)) == Variant::kDynamic);
  CHECK(parse_target_mode("fixed") == TargetMode::kFixed);
  CHECK(parse_reward_metric("recall") == RewardMetric::kRecall);
  CHECK_THROWS(parse_variant("zoom"));
}

TEST_CASE("config validation") {
  EnvConfig c = hier();
  c.tau = 1.0;
  CHECK_THROWS(c.validate());
  c = hier();
  c.eta = 0;
  CHECK_THROWS(c.validate());
  c = hier();
  c.max_steps = 0;
  CHECK_THROWS(c.validate());
  c = hier();
  c.history_len = -1;
  CHECK_THROWS(c.validate());
  c = hier();
  c.history_len = 0;
  CHECK_NOTHROW(c.validate());
}

TEST_CASE("movement and trigger rewards") {
  CHECK(movement_reward(0.30, 0.40) == 1.0);
  CHECK(movement_reward(0.40, 0.30) == -1.0);
  CHECK(movement_reward(0.40, 0.40) == -1.0);
  CHECK(trigger_reward(0.60, 0.50, 3) == 3.0);
  CHECK(trigger_reward(0.49, 0.50, 3) == -3.0);
  CHECK(trigger_reward(0.50, 0.50, 3) == 3.0);
}

TEST_CASE("history encoding") {
  const auto empty = encode_history({}, 4, 6);
  CHECK(empty.size() == 24);
  CHECK(ones(empty) == 0);

  const auto one = encode_history({2}, 4, 6);
  CHECK(ones(one) == 1);
  CHECK(one[2] == 1.0);

  const auto two = encode_history({5, 0}, 4, 6);
  CHECK(ones(two) == 2);
  CHECK(two[5] == 1.0);
  CHECK(two[6] == 1.0);

  CHECK_THROWS_AS(encode_history({6}, 4, 6), std::out_of_range);
  CHECK_THROWS_AS(encode_history({-1}, 4, 6), std::out_of_range);
  CHECK_THROWS(encode_history({0, 1, 2}, 2, 6));
  CHECK(encode_history({}, 0, 6).empty());
}

TEST_CASE("reset starts from the whole image") {
  const Scene s = flat_scene(100, 80, 0.5, {{10, 10, 30, 30}});
  BoxEcho ex;
  Episode ep(hier(), s, ex);
  CHECK(ep.box() == Box{0, 0, 100, 80});
  CHECK(ep.steps() == 0);
  CHECK_FALSE(ep.done());
  CHECK(ep.state().history.size() == 24);
  CHECK(ones(ep.state().history) == 0);
  CHECK(ep.state().features == std::vector<double>{0, 0, 100, 80});
  CHECK(ep.state().input().size() == state_dim(hier(), 4));
  CHECK_FALSE(ep.fixed_target().has_value());
}

TEST_CASE("reset requires an annotation") {
  const Scene s = flat_scene(10, 10, 0.5);
  BoxEcho ex;
  CHECK_THROWS_AS(Episode(hier(), s, ex), std::invalid_argument);
}

TEST_CASE("fixed target selection") {
  BoxEcho ex;
  EnvConfig c = hier();
  c.target_mode = TargetMode::kFixed;
  const Scene tie = flat_scene(100, 100, 0.5, {{0, 0, 20, 20}, {50, 50, 70, 70}});
  CHECK(Episode(c, tie, ex).fixed_target() == 0u);
  const Scene larger = flat_scene(100, 100, 0.5, {{0, 0, 20, 20}, {50, 50, 90, 90}});
  CHECK(Episode(c, larger, ex).fixed_target() == 1u);
}

TEST_CASE("zooming onto the labeled quadrant is rewarded") {
  EnvConfig c = hier();
  c.zoom = {0.5, 1.0};
  const Scene s = flat_scene(100, 80, 0.5, {{0, 0, 50, 40}});
  BoxEcho ex;
  Episode ep(c, s, ex);
  CHECK(ep.metric(ep.box()) == doctest::Approx(0.25));
  const auto r = ep.step(0);
  CHECK(r.reward == 1.0);
  CHECK_FALSE(r.done);
  CHECK(r.box == Box{0, 0, 50, 40});
  CHECK(r.iou_now == 1.0);
  CHECK(r.action_taken == 0);
  REQUIRE(r.next_state.has_value());
  CHECK(r.next_state->features == std::vector<double>{0, 0, 50, 40});
  CHECK(r.next_state->history[0] == 1.0);
  CHECK(ep.steps() == 1);
}

TEST_CASE("trigger ends the episode with the threshold reward") {
  // Ground truth covering 55% of the image: IoU 0.55 at reset.
  const Scene s = flat_scene(100, 100, 0.5, {{0, 0, 100, 55}});
  BoxEcho ex;
  Episode ep(hier(), s, ex);
  const auto r = ep.step(5);
  CHECK(r.reward == 3.0);
  CHECK(r.done);
  CHECK_FALSE(r.next_state.has_value());
  CHECK(r.box == s.full_box());
  CHECK(ep.done());
  CHECK_THROWS_AS(ep.step(0), std::logic_error);

  Episode dyn_ep(dyn(), s, ex);
  CHECK(dyn_ep.step(8).reward == -3.0);
}

TEST_CASE("step budget ends the episode") {
  const Scene s = flat_scene(64, 64, 0.5, {{40, 40, 60, 60}});
  BoxEcho ex;
  Episode ep(dyn(), s, ex);
  for (int k = 1; k < 10; ++k) {
    const auto r = ep.step(k % 2 == 0 ? 4 : 5);
    CHECK_FALSE(r.done);
  }
  const auto last = ep.step(0);
  CHECK(last.done);
  CHECK(std::fabs(last.reward) == 1.0);
  CHECK(ep.steps() == 10);
  CHECK_THROWS_AS(ep.step(0), std::logic_error);
}

TEST_CASE("unknown actions are rejected") {
  const Scene s = flat_scene(32, 32, 0.5, {{4, 4, 20, 20}});
  BoxEcho ex;
  Episode ep(hier(), s, ex);
  CHECK_THROWS_AS(ep.step(6), std::out_of_range);
  CHECK_THROWS_AS(ep.step(-1), std::out_of_range);
  CHECK(ep.steps() == 0);
}

TEST_CASE("dynamic target follows the best ground truth") {
  const Scene s = flat_scene(100, 100, 0.5, {{0, 0, 30, 30}, {60, 60, 100, 100}});
  BoxEcho ex;
  Episode ep(hier(), s, ex);
  const auto r = ep.step(3);  // BR
  CHECK(r.iou_now == doctest::Approx(iou(r.box, {60, 60, 100, 100})));
  CHECK(ep.metric(r.box) == r.iou_now);
}

TEST_CASE("recall metric drives both rewards") {
  EnvConfig c = hier();
  c.reward_metric = RewardMetric::kRecall;
  const Scene s = flat_scene(100, 100, 0.5, {{10, 10, 20, 20}});
  BoxEcho ex;
  Episode ep(c, s, ex);
  CHECK(ep.metric(ep.box()) == 1.0);
  CHECK(ep.step(5).reward == 3.0);
}

TEST_CASE("history shifts most recent first and keeps its length") {
  const Scene s = flat_scene(64, 64, 0.5, {{0, 0, 60, 60}});
  BoxEcho ex;
  EnvConfig c = dyn();
  c.history_len = 3;
  Episode ep(c, s, ex);
  const std::vector<int> acts{0, 1, 2, 3};
  for (int a : acts) {
    const auto r = ep.step(a);
    CHECK(r.next_state->history.size() == 27);
  }
  CHECK(ep.recent_actions() == std::deque<int>{3, 2, 1});
  const auto& h = ep.state().history;
  CHECK(h[0 * 9 + 3] == 1.0);
  CHECK(h[1 * 9 + 2] == 1.0);
  CHECK(h[2 * 9 + 1] == 1.0);
  CHECK(ones(h) == 3);
}

TEST_CASE("random episodes keep every invariant") {
  Rng rng(31);
  const Dataset d = [] {
    SynthSpec spec;
    spec.count = 20;
    spec.width = 48;
    spec.height = 40;
    spec.distractors = {0, 0};
    return generate_synthetic(spec);
  }();
  for (Variant v : {Variant::kHierarchical, Variant::kDynamic}) {
    for (TargetMode mode : {TargetMode::kDynamic, TargetMode::kFixed}) {
      EnvConfig c = EnvConfig::defaults(v);
      c.target_mode = mode;
      if (v == Variant::kHierarchical) c.zoom = {0.5, 1.0};
      for (const auto& s : d.scenes) {
        BoxEcho ex;
        Episode ep(c, s, ex);
        const auto fixed = ep.fixed_target();
        Box prev = ep.box();
        int triggers = 0;
        while (!ep.done()) {
          const int a = static_cast<int>(rng.below(num_actions(v)));
          const double before = ep.metric(prev);
          const auto r = ep.step(a);
          CHECK(ep.fixed_target() == fixed);
          CHECK(r.box.valid());
          CHECK(r.box.x1 >= 0);
          CHECK(r.box.y1 >= 0);
          CHECK(r.box.x2 <= s.width);
          CHECK(r.box.y2 <= s.height);
          CHECK(r.box.width() >= kMinSide - 1e-12);
          CHECK(r.box.height() >= kMinSide - 1e-12);
          if (a == trigger_action(v)) {
            ++triggers;
            CHECK(r.done);
            CHECK(r.box == prev);
          } else {
            const std::vector<Box> gts = fixed ? std::vector<Box>{s.boxes()[*fixed]} : s.boxes();
            double after = 0.0;
            for (const auto& g : gts) after = std::max(after, iou(r.box, g));
            CHECK(r.reward == (after > before ? 1.0 : -1.0));
            if (v == Variant::kHierarchical) {
              CHECK(r.box.area() <= prev.area() + 1e-9);
              if (prev.width() >= 2 * kMinSide && prev.height() >= 2 * kMinSide) {
                CHECK(r.box.area() <= prev.area() * 0.25 + 1e-9);
              }
            }
          }
          CHECK(ep.steps() <= c.max_steps);
          prev = r.box;
        }
        CHECK(triggers <= 1);
      }
    }
  }
}

TEST_CASE("movement helper matches the geometry routines") {
  const EnvConfig h = hier();
  const ImageSize bounds{96, 96};
  CHECK(apply_movement(h, {0, 0, 96, 96}, 4, bounds) == Box{12, 12, 84, 84});
  const EnvConfig d = dyn();
  CHECK(apply_movement(d, {10, 10, 60, 60}, 0, bounds) ==
        transform({10, 10, 60, 60}, DeformMove::kRight, d.alpha, bounds));
}

// Copyright 2026 The Pulse Lab Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "pulse/motion.hpp"

using namespace pulse;

namespace {

namespace fs = std::filesystem;

PdAction hold(const HumanoidModel& m) { return {Vec::Zero(m.n_joints())}; }

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("pulse_test_motion_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("stand clip is constant with zero velocity") {
  const HumanoidModel m = make_humanoid();
  const MotionClip c = generate_procedural(m, "stand", {}, 1.5);
  REQUIRE(c.n_frames() == 46);
  for (int f = 0; f < c.n_frames(); ++f) {
    CHECK(c.q[f] == c.q[0]);
    CHECK(c.qdot[f].isZero(0.0));
  }
}

TEST_CASE("walk root displacement integrates the commanded speed") {
  const HumanoidModel m = make_humanoid();
  for (double v : {0.5, 1.0, 2.0}) {
    const MotionClip c = generate_procedural(m, "walk", {{"speed", v}}, 2.0);
    CHECK(std::abs(c.q.back()[0] - c.q.front()[0] - 2.0 * v) < 0.01);
    CHECK(c.has_tag("walk"));
  }
}

TEST_CASE("unknown generator kind and bad durations are rejected") {
  const HumanoidModel m = make_humanoid();
  CHECK_THROWS_AS(generate_procedural(m, "cartwheel", {}, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(generate_procedural(m, "walk", {}, 0.0), std::invalid_argument);
}

TEST_CASE("velocities are central differences with one-sided ends") {
  std::vector<Vec> q;
  for (int i = 0; i < 5; ++i) q.push_back(Vec::Constant(2, i * i));
  const auto v = finite_difference_velocities(q, 10.0);
  CHECK(v[0][0] == doctest::Approx(10.0));         // (1 - 0) * 10
  CHECK(v[2][0] == doctest::Approx(40.0));         // (9 - 1) / 2 * 10
  CHECK(v[4][0] == doctest::Approx(70.0));         // (16 - 9) * 10
}

TEST_CASE("every generated desk clip survives the cleaner") {
  const HumanoidModel m = make_humanoid();
  const MotionDataset d = desk_dataset(m);
  REQUIRE(d.size() == 12);
  d.validate(m);
  const CleanResult r = clean_dataset(m, d);
  for (const auto& rej : r.rejected) {
    INFO(rej.clip << " " << rej.reason << " frame " << rej.frame << " value " << rej.value);
  }
  CHECK(r.rejected.empty());
  CHECK(r.kept.size() == 12);
  for (const auto& c : d.clips) {
    CHECK(c.n_frames() == 121);
    CHECK(c.fps == 30.0);
  }
}

TEST_CASE("cleaning is idempotent and kept clips satisfy both thresholds") {
  const HumanoidModel m = make_humanoid();
  MotionDataset d = desk_dataset(m);
  // Mix in violators so the first pass has something to reject.
  MotionClip bad = d.clips[0];
  bad.name = "teleport";
  bad.q[40][0] += 1.0;
  d.clips.push_back(bad);
  d.weights.push_back(1.0);
  const CleanResult once = clean_dataset(m, d, 0.10, 0.02);
  CHECK(once.rejected.size() == 1);
  const CleanResult twice = clean_dataset(m, once.kept, 0.10, 0.02);
  CHECK(twice.rejected.empty());
  CHECK(twice.kept.size() == once.kept.size());
  for (const auto& c : once.kept.clips) {
    const ClipScan s = scan_clip(m, c);
    CHECK(s.max_jump <= 0.10);
    CHECK(s.max_depth <= 0.02);
  }
}

TEST_CASE("teleported frame is rejected as a discontinuity at that frame") {
  const HumanoidModel m = make_humanoid();
  MotionClip c = generate_procedural(m, "walk", {{"speed", 1.0}}, 2.0);
  c.name = "teleport";
  c.q[17][0] += 1.0;
  const CleanResult r = clean_dataset(m, make_dataset({c}));
  REQUIRE(r.rejected.size() == 1);
  CHECK(r.rejected[0].reason == "discontinuity");
  CHECK(r.rejected[0].frame == 17);
  CHECK(r.rejected[0].value == doctest::Approx(1.0).epsilon(0.05));
  CHECK(r.kept.size() == 0);
}

TEST_CASE("clip sunk 5 cm below ground is rejected for penetration") {
  const HumanoidModel m = make_humanoid();
  MotionClip c = generate_procedural(m, "squat", {{"depth", 0.3}}, 2.0);
  for (auto& q : c.q) q[1] -= 0.05;
  const CleanResult r = clean_dataset(m, make_dataset({c}));
  REQUIRE(r.rejected.size() == 1);
  CHECK(r.rejected[0].reason == "penetration");
  CHECK(r.rejected[0].value == doctest::Approx(0.05).epsilon(0.01));
}

TEST_CASE("zero-action hold recording stays near the start") {
  const HumanoidModel m = make_humanoid();
  const HumanoidState s0 = standing_state(m);
  const MotionClip c =
      record_rollout(m, s0, [&](const HumanoidState&) { return hold(m); }, 2.0, "hold");
  REQUIRE(c.n_frames() == 61);
  double drift = 0.0;
  for (const auto& q : c.q) drift = std::max(drift, std::abs(q[1] - s0.q[1]));
  CHECK(drift < 0.01);
  CHECK(clean_dataset(m, make_dataset({c})).rejected.empty());
}

TEST_CASE("replaying a recorded clip through kinematics is exact") {
  const HumanoidModel m = make_humanoid();
  HumanoidState s0 = standing_state(m);
  const Controller ctl = [&](const HumanoidState& s) {
    PdAction a = hold(m);
    a.targets[6] = 0.8 * std::sin(3.0 * s.time_s);  // shoulder
    return a;
  };
  const MotionClip c = record_rollout(m, s0, ctl, 1.0);
  // Independent re-simulation (one action per frame, two substeps) reaches
  // the same states bit for bit.
  HumanoidState s = s0;
  const double dt = 1.0 / 60.0;
  for (int f = 1; f < c.n_frames(); ++f) {
    const PdAction a = ctl(s);
    for (int k = 0; k < 2; ++k) s = step(m, s, a, dt);
    REQUIRE(s.q == c.q[f]);
    const Kinematics ka = forward_kinematics(m, s);
    const Kinematics kb = forward_kinematics(m, c.state(f));
    for (int l = 0; l < m.n_links(); ++l) CHECK(ka.links[l].origin == kb.links[l].origin);
  }
}

TEST_CASE("a recorded fall is continuous and does not penetrate") {
  const HumanoidModel m = make_humanoid();
  for (double lean : {-0.6, 0.6}) {
    HumanoidState s0 = standing_state(m);
    s0.q[2] = lean;
    s0.q[1] += 0.05;
    const MotionClip c = record_rollout(
        m, s0, [&](const HumanoidState&) { return hold(m); }, 3.0, "fall");
    const CleanResult r = clean_dataset(m, make_dataset({c}));
    for (const auto& rej : r.rejected) INFO(rej.reason << " " << rej.value);
    CHECK(r.rejected.empty());
  }
}

TEST_CASE("initial-state sampling follows the weights and stays in range") {
  const HumanoidModel m = make_humanoid();
  const MotionClip a = generate_procedural(m, "squat", {{"depth", 0.3}}, 1.0);
  MotionClip b = generate_procedural(m, "reach", {{"peak", 2.0}}, 1.0);
  b.name = "reach";
  Rng rng(7);

  SUBCASE("single clip") {
    const MotionDataset d = make_dataset({a});
    for (int i = 0; i < 100; ++i) CHECK(sample_initial_state(d, rng).clip == 0);
  }
  SUBCASE("zero weight is never drawn") {
    MotionDataset d = make_dataset({a, b});
    d.weights = {1.0, 0.0};
    for (int i = 0; i < 10000; ++i) REQUIRE(sample_initial_state(d, rng).clip == 0);
  }
  SUBCASE("uniform weights split evenly") {
    const MotionDataset d = make_dataset({a, b});
    int first = 0;
    for (int i = 0; i < 10000; ++i) {
      const InitialState s = sample_initial_state(d, rng);
      REQUIRE(s.frame >= 0);
      REQUIRE(s.frame < d.clips[s.clip].n_frames());
      REQUIRE(s.state.q == d.clips[s.clip].q[s.frame]);
      first += s.clip == 0;
    }
    CHECK(std::abs(first / 10000.0 - 0.5) < 0.02);
  }
  SUBCASE("empty dataset") {
    CHECK_THROWS_AS(sample_initial_state(MotionDataset{}, rng), std::invalid_argument);
  }
}

TEST_CASE("clip and dataset files round-trip exactly") {
  const HumanoidModel m = make_humanoid();
  const MotionDataset d = desk_dataset(m);
  const fs::path dir = scratch_dir("roundtrip");
  write_dataset(dir.string(), d);
  const MotionDataset back = read_dataset((dir / "manifest.json").string());
  REQUIRE(back.size() == d.size());
  for (int i = 0; i < d.size(); ++i) {
    CHECK(back.clips[i].name == d.clips[i].name);
    CHECK(back.clips[i].tags == d.clips[i].tags);
    CHECK(back.weights[i] == d.weights[i]);
    for (int f = 0; f < d.clips[i].n_frames(); ++f) {
      REQUIRE(back.clips[i].q[f] == d.clips[i].q[f]);
      REQUIRE(back.clips[i].qdot[f] == d.clips[i].qdot[f]);
    }
  }
  fs::remove_all(dir);
}

TEST_CASE("invalid clips are refused") {
  const HumanoidModel m = make_humanoid();
  MotionClip c = generate_procedural(m, "stand", {}, 1.0);
  c.validate(m);
  MotionClip nan = c;
  nan.q[3][4] = std::nan("");
  CHECK_THROWS_AS(nan.validate(m), std::invalid_argument);
  MotionClip one = c;
  one.q.resize(1);
  one.qdot.resize(1);
  CHECK_THROWS_AS(one.validate(m), std::invalid_argument);
  MotionClip wrong = c;
  wrong.q[0] = Vec::Zero(5);
  CHECK_THROWS_AS(wrong.validate(m), std::invalid_argument);
  CHECK_THROWS_AS(c.state(c.n_frames()), std::out_of_range);
}

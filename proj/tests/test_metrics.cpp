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

#include "doctest.h"
#include "pulse/metrics.hpp"
#include "pulse/motion.hpp"

using namespace pulse;

namespace {

PoseTrack walk_track(const HumanoidModel& m) {
  return pose_track(m, generate_procedural(m, "walk", {{"speed", 1.0}}, 2.0).q);
}

PoseTrack shifted(PoseTrack t, const Vec2& d) {
  for (Mat& f : t) f.colwise() += d;
  return t;
}

}  // namespace

TEST_CASE("identical tracks give zero error and success") {
  const HumanoidModel m = make_humanoid();
  const PoseTrack t = walk_track(m);
  const Metrics r = compute_metrics(t, t);
  CHECK(r.success);
  CHECK_FALSE(r.truncated);
  CHECK(r.frames == static_cast<int>(t.size()));
  CHECK(r.g_mpjpe == 0.0);
  CHECK(r.mpjpe == 0.0);
  CHECK(r.acc == 0.0);
  CHECK(r.vel == 0.0);
}

TEST_CASE("constant 10 mm offset is global error only") {
  const HumanoidModel m = make_humanoid();
  const PoseTrack t = walk_track(m);
  const Metrics r = compute_metrics(t, shifted(t, Vec2(0.006, 0.008)));
  CHECK(r.success);
  CHECK(r.g_mpjpe == doctest::Approx(10.0).epsilon(1e-9));
  CHECK(r.mpjpe == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(r.vel < 1e-9);
  CHECK(r.acc < 1e-9);
}

TEST_CASE("one frame beyond the threshold fails the clip") {
  const HumanoidModel m = make_humanoid();
  const PoseTrack t = walk_track(m);
  PoseTrack s = t;
  s[20].colwise() += Vec2(0.6, 0.0);
  const Metrics r = compute_metrics(t, s);
  CHECK_FALSE(r.success);
  // One displaced frame: 0.6 m / n mean, two velocity jumps, three acc terms.
  const double n = static_cast<double>(t.size());
  CHECK(r.g_mpjpe == doctest::Approx(600.0 / n));
  CHECK(r.vel == doctest::Approx(2.0 * 600.0 / (n - 1)));
  CHECK(r.acc == doctest::Approx((600.0 + 1200.0 + 600.0) / (n - 2)));

  // Exactly at the threshold still succeeds.
  PoseTrack edge = t;
  edge[20].colwise() += Vec2(0.5, 0.0);
  CHECK(compute_metrics(t, edge, 0.5 + 1e-12).success);
}

TEST_CASE("shorter simulation is truncated") {
  const HumanoidModel m = make_humanoid();
  const PoseTrack t = walk_track(m);
  const PoseTrack s(t.begin(), t.begin() + 10);
  const Metrics r = compute_metrics(t, s);
  CHECK(r.truncated);
  CHECK(r.frames == 10);
  CHECK(compute_metrics(t, {}).frames == 0);
}

TEST_CASE("aggregate averages clips") {
  Metrics a, b;
  a.g_mpjpe = 10.0;
  b.g_mpjpe = 30.0;
  b.success = false;
  const MetricsReport r = aggregate({a, b});
  CHECK(r.episodes == 2);
  CHECK(r.success_rate == 0.5);
  CHECK(r.g_mpjpe == 20.0);
  CHECK(to_json(r).at("per_clip").size() == 2);
  CHECK(aggregate({}).success_rate == 0.0);
}

TEST_CASE("joint positions are link origins with the root first") {
  const HumanoidModel m = make_humanoid();
  const HumanoidState s = standing_state(m);
  const Mat p = joint_positions(m, s.q);
  CHECK(p.cols() == m.n_links());
  CHECK(p(0, 0) == doctest::Approx(s.q[0]));
  CHECK(p(1, 0) == doctest::Approx(s.q[1]));
}

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

#include "doctest.h"
#include "pulse/tasks.hpp"

using namespace pulse;

namespace {

std::shared_ptr<const PulseModel> random_pulse(const HumanoidModel& model, std::uint64_t seed,
                                               double head_scale = 0.1) {
  Rng rng(seed);
  auto m = std::make_shared<PulseModel>(proprio_dim(model), goal_dim(model), model.n_joints(), 4,
                                        std::vector<int>{16, 16}, Activation::kSiLU, rng);
  m->prior.init(rng, head_scale);
  m->decoder.init(rng, head_scale);
  return m;
}

MotionDataset small_dataset(const HumanoidModel& m) {
  return make_dataset({generate_procedural(m, "stand", {}, 2.0),
                       generate_procedural(m, "reach", {}, 2.0)});
}

TaskConfig tiny(TaskKind kind) {
  TaskConfig c;
  c.kind = kind;
  c.hidden = {16};
  c.ppo.buffer = 128;
  c.ppo.minibatch = 64;
  c.ppo.epochs = 1;
  c.max_samples = 256;
  c.eval_interval = 1;
  c.eval_episodes = 1;
  c.episode_s = 1.0;
  return c;
}

}  // namespace

TEST_CASE("deterministic hierarchical action decodes task mean plus prior mean") {
  const HumanoidModel model = make_humanoid();
  auto pulse = random_pulse(model, 3);
  Rng rng(7);
  HierarchicalPolicy hp{GaussianPolicy(proprio_dim(model) + 2, {16}, 4, Activation::kSiLU, 0.22),
                        pulse, true};
  hp.task.net.init(rng, 0.5);
  for (int k = 0; k < 200; ++k) {
    const Vec p = standard_normal(proprio_dim(model), rng);
    const Vec g = standard_normal(2, rng);
    Vec obs(p.size() + 2);
    obs << p, g;
    const HierarchicalAction a = hierarchical_act(hp, p, g, rng, false);
    const Vec expect = decode(*pulse, p, hp.task.mean(obs) + prior(*pulse, p).mean);
    REQUIRE((a.action - expect).cwiseAbs().maxCoeff() <= 1e-12);
  }
  hp.use_prior = false;
  const Vec p = standard_normal(proprio_dim(model), rng);
  const HierarchicalAction a = hierarchical_act(hp, p, Vec::Zero(2), rng, false);
  CHECK(a.prior_mean.isZero(0.0));
  CHECK((a.action - decode(*pulse, p, a.residual)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("exploring hierarchical action is seed-determined") {
  const HumanoidModel model = make_humanoid();
  auto pulse = random_pulse(model, 3);
  HierarchicalPolicy hp{GaussianPolicy(proprio_dim(model) + 2, {16}, 4, Activation::kSiLU, 0.22),
                        pulse, true};
  Rng a(11), b(11);
  const Vec p = Vec::Constant(proprio_dim(model), 0.1), g = Vec::Ones(2);
  const HierarchicalAction x = hierarchical_act(hp, p, g, a, true);
  const HierarchicalAction y = hierarchical_act(hp, p, g, b, true);
  CHECK(x.action == y.action);
  CHECK(x.residual.norm() > 0.0);
}

TEST_CASE("task rewards peak at one") {
  CHECK(speed_reward(1.0, 1.0) == 1.0);
  CHECK(speed_reward(1.0, 1.5) == doctest::Approx(std::exp(-0.5)).epsilon(1e-15));
  CHECK(reach_reward(Vec2(0.3, 1.2), Vec2(0.3, 1.2)) == 1.0);
  CHECK(reach_reward(Vec2(0.0, 1.0), Vec2(0.1, 1.0)) == doctest::Approx(std::exp(-0.05)));
  CHECK(trajectory_reward(2.0, 2.0, Vec::Zero(9), 1e-6) == 1.0);
  CHECK(trajectory_reward(2.0, 2.0, Vec::Constant(1, 1000.0), 1e-6) == doctest::Approx(0.0));
}

TEST_CASE("sparse tracking reward and deviation vanish on the reference") {
  const HumanoidModel model = make_humanoid();
  const MotionClip clip = generate_procedural(model, "reach", {}, 1.0);
  const Kinematics k = forward_kinematics(model, clip.state(10));
  const RewardWeights w;
  CHECK(sparse_track_reward(model, k, k, Vec::Zero(9), 0.0, w) ==
        doctest::Approx(w.pos + w.rot + w.vel + w.ang));
  CHECK(tracked_deviation(model, k, k) == 0.0);
  HumanoidState moved = clip.state(10);
  moved.q[0] += 0.3;
  CHECK(tracked_deviation(model, forward_kinematics(model, moved), k) == doctest::Approx(0.3));
}

TEST_CASE("waypoints respect the speed limit") {
  Rng rng(4);
  const std::vector<double> w = make_waypoints(1.5, 600, 1.0 / 30.0, 3.0, 2.0, rng);
  REQUIRE(w.size() == 600u);
  CHECK(w[0] == 1.5);
  for (size_t i = 1; i < w.size(); ++i) {
    const double v = (w[i] - w[i - 1]) * 30.0;
    REQUIRE(v >= 0.0);
    REQUIRE(v <= 3.0 + 1e-12);
  }
}

TEST_CASE("task environments expose the documented layout") {
  const HumanoidModel model = make_humanoid();
  auto pulse = random_pulse(model, 5);
  auto ref = std::make_shared<const ReferenceSet>(model, small_dataset(model));
  for (TaskKind kind : {TaskKind::kSpeed, TaskKind::kReach, TaskKind::kTrajectory, TaskKind::kSparseTrack}) {
    TaskConfig c = tiny(kind);
    TaskEnv env(model, pulse, ref, c);
    Rng rng(2);
    const Vec obs = env.reset(rng);
    CHECK(obs.size() == proprio_dim(model) + task_goal_dim(kind));
    CHECK(env.act_dim() == 4);
    CHECK(env.action_offset().size() == 4);
    c.use_prior = false;
    CHECK(TaskEnv(model, pulse, ref, c).action_offset().size() == 0);
    c.space = ActionSpace::kTorque;
    CHECK(TaskEnv(model, pulse, ref, c).act_dim() == model.n_joints());
  }
  TaskConfig c = tiny(TaskKind::kSpeed);
  c.episode_s = 10.0;
  CHECK(TaskEnv(model, pulse, ref, c).max_steps() == 300);
  c.space = ActionSpace::kLatent;
  CHECK_THROWS(TaskEnv(model, nullptr, ref, c));
}

TEST_CASE("normalized episode return stays in the unit interval") {
  const HumanoidModel model = make_humanoid();
  auto pulse = random_pulse(model, 5);
  auto ref = std::make_shared<const ReferenceSet>(model, small_dataset(model));
  for (TaskKind kind : {TaskKind::kSpeed, TaskKind::kReach, TaskKind::kTrajectory}) {
    TaskEnv env(model, pulse, ref, tiny(kind));
    Rng rng(9);
    env.reset(rng);
    int steps = 0;
    for (;;) {
      ++steps;
      if (env.step(standard_normal(4, rng), rng).done) break;
    }
    const double r = env.episode_reward_clamped() / env.max_steps();
    CHECK(r >= 0.0);
    CHECK(r <= static_cast<double>(steps) / env.max_steps());
  }
}

TEST_CASE("standing at the reach target scores near one per step") {
  const HumanoidModel model = make_humanoid();
  auto ref = std::make_shared<const ReferenceSet>(model, small_dataset(model));
  TaskConfig c = tiny(TaskKind::kReach);
  c.space = ActionSpace::kTorque;
  TaskEnv env(model, nullptr, ref, c);
  Rng rng(1);
  const HumanoidState s = ref->dataset.clips[0].state(0);
  env.reset_to(s, rng);
  env.set_reach_target(end_effector_position(model, forward_kinematics(model, s), "hand"));
  const Env::Step st = env.step(Vec::Zero(model.n_joints()), rng);
  CHECK(st.reward > 0.99);
}

TEST_CASE("reference tracks are tracked successes") {
  const HumanoidModel model = make_humanoid();
  const MotionDataset ds = small_dataset(model);
  std::vector<std::vector<Vec>> tracks;
  for (const MotionClip& c : ds.clips) tracks.push_back(c.q);
  const SparseTrackReport r = sparse_metrics(model, ds, tracks);
  CHECK(r.tracked_success == 1.0);
  CHECK(r.tracked_error == 0.0);
  CHECK(r.full.success_rate == 1.0);

  // A whole-body shift past threshold fails the tracked criterion too.
  tracks[1][20][0] += 0.6;
  const SparseTrackReport bad = sparse_metrics(model, ds, tracks);
  CHECK_FALSE(bad.tracked_per_clip[1]);
  CHECK(bad.tracked_success == 0.5);

  tracks[1].resize(10);
  const SparseTrackReport cut = sparse_metrics(model, ds, tracks);
  CHECK_FALSE(cut.tracked_per_clip[1]);
  CHECK(cut.full.success_rate == 0.5);
}

TEST_CASE("full-body success implies tracked success on simulated rollouts") {
  const HumanoidModel model = make_humanoid();
  auto pulse = random_pulse(model, 8, 0.0);
  auto ref = std::make_shared<const ReferenceSet>(model, small_dataset(model));
  TaskConfig c = tiny(TaskKind::kSparseTrack);
  GaussianPolicy policy(proprio_dim(model) + task_goal_dim(c.kind), {16}, 4, Activation::kSiLU, 0.22);
  Rng rng(1);
  policy.net.init(rng, 0.0);
  const auto tracks = sparse_rollouts(model, pulse, ref, c, policy);
  const SparseTrackReport r = sparse_metrics(model, ref->dataset, tracks, c.track_thresh);
  for (size_t i = 0; i < r.tracked_per_clip.size(); ++i) {
    if (r.full.per_clip[i].success) CHECK(r.tracked_per_clip[i]);
  }
  const SparseTrackReport again = evaluate_sparse_tracking(model, pulse, ref, c, policy);
  CHECK(to_json(again).dump() == to_json(r).dump());
}

TEST_CASE("task training leaves the latent model untouched and repeats exactly") {
  const HumanoidModel model = make_humanoid();
  auto pulse = random_pulse(model, 5);
  const Vec before = pulse->decoder.params;
  const MotionDataset ds = small_dataset(model);
  const TaskConfig c = tiny(TaskKind::kSpeed);
  const TaskResult a = train_task(model, pulse, ds, c, 3);
  const TaskResult b = train_task(model, pulse, ds, c, 3);
  CHECK(pulse->decoder.params == before);
  CHECK(a.samples == 256);
  REQUIRE(a.curve.size() == 2);
  CHECK(a.curve.back().eval_return >= 0.0);
  CHECK(a.curve.back().eval_return <= 1.0);
  CHECK(a.learner.policy.net.params == b.learner.policy.net.params);
  CHECK(a.curve.back().eval_return == b.curve.back().eval_return);
}

TEST_CASE("torque baseline trains on the same environment") {
  const HumanoidModel model = make_humanoid();
  TaskConfig c = tiny(TaskKind::kSpeed);
  c.space = ActionSpace::kTorque;
  const TaskResult r = train_task(model, nullptr, small_dataset(model), c, 1);
  CHECK(r.learner.policy.act_dim() == model.n_joints());
  CHECK(std::isfinite(r.curve.back().eval_return));
}

TEST_CASE("generation is seed-determined and random torques fall") {
  const HumanoidModel model = make_humanoid();
  auto pulse = random_pulse(model, 5, 0.0);
  const HumanoidState s = small_dataset(model).clips[0].state(0);
  GenerationConfig g;
  g.duration_s = 2.0;
  Rng a(4), b(4);
  const GenerationResult x = generate(model, *pulse, s, 1.0, a, g);
  const GenerationResult y = generate(model, *pulse, s, 1.0, b, g);
  REQUIRE(x.states.size() == y.states.size());
  CHECK(x.states.back().q == y.states.back().q);
  CHECK(x.time_to_fall_s == y.time_to_fall_s);

  Rng r(4);
  const GenerationResult t = random_torque_rollout(model, s, r);
  CHECK(t.fell);
  CHECK(t.time_to_fall_s < 10.0);
  CHECK(t.states.size() == static_cast<size_t>(std::lround(t.time_to_fall_s * 30.0)) + 1);
}

TEST_CASE("task dataset keeps locomotion clips for locomotion tasks") {
  const HumanoidModel model = make_humanoid();
  const MotionDataset ds = small_dataset(model);
  CHECK(task_dataset(ds, TaskKind::kSpeed).size() == 1);
  CHECK(task_dataset(ds, TaskKind::kReach).size() == 2);
}

TEST_CASE("task config round trips through json") {
  TaskConfig c;
  c.kind = TaskKind::kTrajectory;
  c.space = ActionSpace::kTorque;
  c.use_prior = false;
  c.speed_max = 1.5;
  c.weights = {0.4, 0.3, 0.2, 0.1};
  const nlohmann::json j = c;
  const TaskConfig back = j.get<TaskConfig>();
  CHECK(nlohmann::json(back) == j);
  CHECK(task_from_string("sparse_track") == TaskKind::kSparseTrack);
  CHECK_THROWS(task_from_string("swim"));
}

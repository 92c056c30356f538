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

// Downstream control over a frozen latent model, plus generative rollouts
// from its prior.
//
// A task policy outputs a latent residual r; the executed code is
// z = r + prior mean (or z = r with the prior residual disabled) and the
// decoder maps (proprioception, z) to PD targets. PPO sees this as a
// Gaussian over z whose mean offset is the prior mean, so residual and
// latent log-probabilities coincide.
//
// Task goal layouts (appended to proprioception):
//   speed        [target - root vx, target]
//   reach        [target - hand (x, z), target - root (x, z)]
//   trajectory   waypoint x minus root x at 1/3 s .. 10/3 s ahead
//   sparse track per tracked point (head, hand): wrapped angle diff, position
//                diff (2), velocity diff (2), angular velocity diff,
//                reference angle, reference position minus root x (z
//                absolute) (2)

#ifndef PULSE_TASKS_HPP_
#define PULSE_TASKS_HPP_

#include <memory>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"

#include "pulse/latent.hpp"

namespace pulse {

enum class TaskKind { kSpeed, kReach, kTrajectory, kSparseTrack };
std::string to_string(TaskKind k);
TaskKind task_from_string(const std::string& name);

// Torque mode is the from-scratch baseline: actions are joint torques in
// units of each joint's cap.
enum class ActionSpace { kLatent, kTorque };

struct TaskConfig {
  TaskKind kind = TaskKind::kSpeed;
  ActionSpace space = ActionSpace::kLatent;
  bool use_prior = true;  // residual over the prior mean
  std::vector<int> hidden{256, 128, 64};
  Activation activation = Activation::kSiLU;
  double latent_std = 0.22;
  double torque_std = 0.2;  // baseline exploration, cap units
  PpoConfig ppo;
  long long max_samples = 2'000'000;
  int eval_interval = 10;  // updates
  int eval_episodes = 4;
  int substeps = 2;
  double dt = 1.0 / 60.0;
  double episode_s = 10.0;
  double fall_height = 0.4;  // root height, m
  double energy_coef = 1e-6;
  double speed_min = 0.0;
  double speed_max = 2.0;
  double reach_half_width = 1.0;  // box around (root x, 1 m)
  double traj_speed_max = 3.0;
  double traj_accel_max = 2.0;
  RewardWeights weights;
  double track_thresh = 0.5;
};

void to_json(nlohmann::json& j, const TaskConfig& c);
void from_json(const nlohmann::json& j, TaskConfig& c);

int task_goal_dim(TaskKind k);

struct HierarchicalPolicy {
  GaussianPolicy task;  // obs -> residual mean, std latent_std
  std::shared_ptr<const PulseModel> pulse;
  bool use_prior = true;
};

struct HierarchicalAction {
  Vec action;    // PD targets
  Vec residual;
  Vec prior_mean;  // zero when the prior residual is off
};

HierarchicalAction hierarchical_act(const HierarchicalPolicy& hp, const Vec& proprio,
                                    const Vec& goal, Rng& rng, bool explore);

// Per-step task rewards; each is at most 1.
double speed_reward(double target, double root_vx);
double reach_reward(const Vec2& hand, const Vec2& target);
double trajectory_reward(double root_x, double waypoint_x, const Vec& joint_power,
                         double energy_coef);

// Root, head and hand errors against a reference, imitation-weighted.
double sparse_track_reward(const HumanoidModel& model, const Kinematics& current,
                           const Kinematics& reference, const Vec& joint_power,
                           double energy_coef, const RewardWeights& w);

// Mean head / hand position deviation, m.
double tracked_deviation(const HumanoidModel& model, const Kinematics& current,
                         const Kinematics& reference);

// Planar x waypoints at control rate: speed within [0, v_max], a new
// acceleration in [-a_max, a_max] every second.
std::vector<double> make_waypoints(double start_x, int steps, double control_dt, double v_max,
                                   double a_max, Rng& rng);

class TaskEnv : public Env {
 public:
  // `ref` supplies initial states (and references for sparse tracking).
  TaskEnv(const HumanoidModel& model, std::shared_ptr<const PulseModel> pulse,
          std::shared_ptr<const ReferenceSet> ref, TaskConfig config);

  int obs_dim() const override;
  int act_dim() const override;
  Vec reset(Rng& rng) override;
  Step step(const Vec& action, Rng& rng) override;
  Vec action_offset() const override;

  // Episode from a given state; sparse tracking starts at clip frame 0.
  Vec reset_to(const HumanoidState& s, Rng& rng);
  Vec reset_to_clip(int clip);

  int max_steps() const { return max_steps_; }
  const HumanoidState& state() const { return state_; }
  double episode_reward_clamped() const { return clamped_return_; }
  bool diverged() const { return diverged_; }

  // Goal overrides for evaluation.
  void set_speed_target(double v) { speed_target_ = v; }
  void set_reach_target(const Vec2& c) { reach_target_ = c; }

 private:
  Vec observe() const;
  Vec goal() const;
  void sample_goal(Rng& rng);

  HumanoidModel model_;
  std::shared_ptr<const PulseModel> pulse_;
  std::shared_ptr<const ReferenceSet> ref_;
  TaskConfig config_;
  HumanoidState state_;
  Kinematics kin_;
  int t_ = 0;
  int max_steps_ = 0;
  double clamped_return_ = 0.0;
  bool diverged_ = false;
  double speed_target_ = 1.0;
  Vec2 reach_target_ = Vec2::Zero();
  std::vector<double> waypoints_;
  int clip_ = 0;
  int frame_ = 0;
};

struct CurvePoint {
  long long update = 0;
  long long samples = 0;
  double train_return = 0.0;  // mean normalized return of finished episodes
  double eval_return = 0.0;   // deterministic evaluation
};

struct TaskResult {
  PpoLearner learner;
  std::vector<CurvePoint> curve;
  long long samples = 0;
  long long first_reach_samples = -1;  // first eval at or above target_return
};

// PPO over the task environment; evaluates every eval_interval updates and
// at the end. Stops early once an evaluation reaches `stop_return` (> 1
// never stops).
TaskResult train_task(const HumanoidModel& model, std::shared_ptr<const PulseModel> pulse,
                      const MotionDataset& dataset, const TaskConfig& config, std::uint64_t seed,
                      std::ostream* csv = nullptr, double target_return = 0.8,
                      double stop_return = 2.0);

// Mean clamped normalized return of deterministic episodes with seeded
// goals and initial states.
double evaluate_task(const HumanoidModel& model, std::shared_ptr<const PulseModel> pulse,
                     const ReferenceSet& ref, const TaskConfig& config, const GaussianPolicy& policy,
                     int episodes, std::uint64_t seed);

// Initial states for a task: walk/stand clips for locomotion tasks, all
// clips otherwise.
MotionDataset task_dataset(const MotionDataset& dataset, TaskKind kind);

struct SparseTrackReport {
  double tracked_success = 0.0;
  double tracked_error = 0.0;  // mean head / hand global error, mm
  MetricsReport full;          // full-body metrics; early stops fail
  std::vector<bool> tracked_per_clip;
};

nlohmann::json to_json(const SparseTrackReport& r);

// Per-clip tracked metrics from simulated coordinate tracks.
SparseTrackReport sparse_metrics(const HumanoidModel& model, const MotionDataset& dataset,
                                 const std::vector<std::vector<Vec>>& q_tracks,
                                 double thresh_m = 0.5);

// Deterministic rollout of every clip from frame 0.
std::vector<std::vector<Vec>> sparse_rollouts(const HumanoidModel& model,
                                              std::shared_ptr<const PulseModel> pulse,
                                              std::shared_ptr<const ReferenceSet> ref,
                                              const TaskConfig& config,
                                              const GaussianPolicy& policy);

SparseTrackReport evaluate_sparse_tracking(const HumanoidModel& model,
                                           std::shared_ptr<const PulseModel> pulse,
                                           std::shared_ptr<const ReferenceSet> ref,
                                           const TaskConfig& config,
                                           const GaussianPolicy& policy);

struct GenerationResult {
  std::vector<HumanoidState> states;
  double time_to_fall_s = 0.0;  // duration when no fall
  bool fell = false;
  bool diverged = false;
};

struct GenerationConfig {
  double duration_s = 10.0;
  int substeps = 2;
  double dt = 1.0 / 60.0;
  double fall_height = 0.4;
};

// z = prior mean + noise_scale * prior std * eps at every control step.
GenerationResult generate(const HumanoidModel& model, const PulseModel& pulse,
                          const HumanoidState& initial, double noise_scale, Rng& rng,
                          const GenerationConfig& config = {});

// Uniform random torques within each joint's cap at every control step.
GenerationResult random_torque_rollout(const HumanoidModel& model, const HumanoidState& initial,
                                       Rng& rng, const GenerationConfig& config = {});

}  // namespace pulse

#endif  // PULSE_TASKS_HPP_

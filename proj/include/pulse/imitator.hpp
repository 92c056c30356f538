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

// Motion imitation: observations, reward, termination, the per-frame
// tracking environment and the teacher training loop with progressive
// hard-clip mining.
//
// Observation layout for a model with L links (links indexed as in the
// model, positions are link origins):
//
//   proprioception (6L)
//     [0, 2L-2)    link 1..L-1 position minus root position (x, z)
//     [2L-2, 3L-2) link angles
//     [3L-2, 5L-2) link linear velocities (x, z)
//     [5L-2, 6L-2) link angular velocities
//     6L-2         root height
//     6L-1         root pitch
//   goal (9L), against the next reference frame
//     [0, L)       wrapped reference-minus-current link angles
//     [L, 3L)      reference-minus-current positions
//     [3L, 5L)     reference-minus-current linear velocities
//     [5L, 6L)     reference-minus-current angular velocities
//     [6L, 7L)     reference link angles
//     [7L, 9L)     reference positions minus current root x (z absolute)
//
// Only x offsets are removed, so every observation is invariant to a world
// x translation of state and reference together.

#ifndef PULSE_IMITATOR_HPP_
#define PULSE_IMITATOR_HPP_

#include <functional>
#include <memory>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"

#include "pulse/metrics.hpp"
#include "pulse/motion.hpp"
#include "pulse/ppo.hpp"

namespace pulse {

int proprio_dim(const HumanoidModel& model);
int goal_dim(const HumanoidModel& model);

Vec proprioception(const HumanoidModel& model, const Kinematics& k);
Vec imitation_goal(const HumanoidModel& model, const Kinematics& current,
                   const Kinematics& reference);

// Proprioception followed by the goal against clip frame t + 1.
Vec obs_mimic(const HumanoidModel& model, const HumanoidState& state, const MotionClip& clip,
              int t);

// Mean over links of each error norm.
struct TrackingErrors {
  double pos = 0.0;  // m
  double rot = 0.0;  // rad
  double vel = 0.0;  // m/s
  double ang = 0.0;  // rad/s
};
TrackingErrors tracking_errors(const Kinematics& current, const Kinematics& reference);

struct RewardWeights {
  double pos = 0.5;
  double rot = 0.3;
  double vel = 0.1;
  double ang = 0.1;
};

struct ImitationReward {
  double imitation = 0.0;
  double energy = 0.0;  // <= 0
  double total = 0.0;
  TrackingErrors errors;
};

// w_p e^(-100 e_p) + w_r e^(-10 e_r) + w_v e^(-0.1 e_v) + w_w e^(-0.1 e_w)
// - energy_coef * sum_j (tau_j omega_j)^2, against clip frame t.
ImitationReward reward_mimic(const HumanoidModel& model, const HumanoidState& state,
                             const MotionClip& clip, int t, const Vec& joint_power,
                             double energy_coef, const RewardWeights& w = {});

// Mean per-link position deviation from frame t strictly above the
// threshold.
bool terminate_mimic(const HumanoidModel& model, const HumanoidState& state,
                     const MotionClip& clip, int t, double threshold_m = 0.5);

// A dataset with every frame's kinematics precomputed.
struct ReferenceSet {
  ReferenceSet(const HumanoidModel& model, MotionDataset dataset);

  MotionDataset dataset;
  std::vector<std::vector<Kinematics>> kin;  // [clip][frame]
};

// Initial-state sampler that mixes hard clips in with probability `mix`.
struct ClipSampler {
  std::shared_ptr<const ReferenceSet> ref;
  std::vector<int> hard;
  double mix = 0.8;

  InitialState sample(Rng& rng) const;
};

struct ImitationEnvConfig {
  int substeps = 2;
  double dt = 1.0 / 60.0;
  double termination_m = 0.5;
  double energy_coef = 1e-6;
  RewardWeights weights;
};

void to_json(nlohmann::json& j, const ImitationEnvConfig& c);
void from_json(const nlohmann::json& j, ImitationEnvConfig& c);

// Advances the humanoid by one reference frame per step. The action is the
// PD target vector; the policy mean is offset by the next reference joint
// angles. Episodes end at the clip's last frame (time limit) or on
// termination / divergence (terminal).
class ImitationEnv : public Env {
 public:
  ImitationEnv(const HumanoidModel& model, std::shared_ptr<const ClipSampler> sampler,
               ImitationEnvConfig config);

  int obs_dim() const override;
  int act_dim() const override { return model_.n_joints(); }
  Vec reset(Rng& rng) override;
  Step step(const Vec& action, Rng& rng) override;
  Vec action_offset() const override;

  // Starts an episode at a chosen clip frame.
  Vec reset_to(int clip, int frame);

  const HumanoidState& state() const { return state_; }
  int clip() const { return clip_; }
  int frame() const { return frame_; }
  bool diverged() const { return diverged_; }  // last step threw

 private:
  Vec observe() const;

  HumanoidModel model_;
  std::shared_ptr<const ClipSampler> sampler_;
  ImitationEnvConfig config_;
  HumanoidState state_;
  Kinematics kin_;
  int clip_ = 0;
  int frame_ = 0;
  bool diverged_ = false;
};

// Maps (observation, mean offset) to the PD targets to apply.
using MeanActor = std::function<Vec(const Vec& obs, const Vec& offset)>;

MeanActor deterministic_actor(const GaussianPolicy& policy);

// Runs clip `clip` from frame 0 under `actor` until the last frame or
// termination; returns the visited states (frame 0 first).
std::vector<HumanoidState> rollout_clip(const HumanoidModel& model, const ReferenceSet& ref,
                                        int clip, const MeanActor& actor,
                                        const ImitationEnvConfig& config);

// Metrics of per-clip simulated coordinate tracks against the reference.
MetricsReport evaluate_tracks(const HumanoidModel& model, const MotionDataset& dataset,
                              const std::vector<std::vector<Vec>>& q_tracks,
                              double success_thresh_m = 0.5);

MetricsReport evaluate_imitation(const HumanoidModel& model, const ReferenceSet& ref,
                                 const MeanActor& actor, const ImitationEnvConfig& config);

struct MiningConfig {
  bool enabled = true;
  int eval_interval = 20;   // updates
  double plateau_delta = 0.01;
  int plateau_patience = 5;  // evaluations
  double mix_ratio = 0.8;
};

void to_json(nlohmann::json& j, const MiningConfig& c);
void from_json(const nlohmann::json& j, MiningConfig& c);

// Tracks the plateau rule and the hard-clip set across evaluations.
struct HardMiner {
  MiningConfig config;
  double reference_success = -1.0;  // success at the last improvement
  int stale = 0;

  // Returns true when a plateau fired and `hard` was replaced by the
  // currently failing clips.
  bool observe(const MetricsReport& report, std::vector<int>& hard);
};

struct ImitatorConfig {
  std::vector<int> hidden{256, 128, 64};
  Activation activation = Activation::kSiLU;
  double action_std = 0.05;
  PpoConfig ppo;
  ImitationEnvConfig env;
  MiningConfig mining;
  long long max_samples = 5'000'000;
  int n_envs = 1;
  double target_success = 1.0;
};

void to_json(nlohmann::json& j, const ImitatorConfig& c);
void from_json(const nlohmann::json& j, ImitatorConfig& c);

struct EvalRecord {
  long long update = 0;
  long long samples = 0;
  double success = 0.0;
  double mpjpe = 0.0;
  std::vector<int> failed;
  std::vector<int> hard;  // hard set after this evaluation
};

struct ImitatorResult {
  PpoLearner best;
  MetricsReport best_report;
  long long best_update = 0;
  std::vector<EvalRecord> evals;
  long long samples = 0;
  long long updates = 0;
  bool reached_target = false;
};

// PPO with random state initialization. Evaluates every eval_interval
// updates and at the end; stops early once target_success is reached.
// `seed` expands into the init / env / update streams. Writes PPO stats
// rows to `csv` when given.
ImitatorResult train_imitator(const HumanoidModel& model, const MotionDataset& dataset,
                              const ImitatorConfig& config, std::uint64_t seed,
                              std::ostream* csv = nullptr);

nlohmann::json to_json(const EvalRecord& e);

}  // namespace pulse

#endif  // PULSE_IMITATOR_HPP_

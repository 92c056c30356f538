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

#include "pulse/tasks.hpp"

#include <algorithm>
#include <cmath>

namespace pulse {

std::string to_string(TaskKind k) {
  switch (k) {
    case TaskKind::kSpeed: return "speed";
    case TaskKind::kReach: return "reach";
    case TaskKind::kTrajectory: return "trajectory";
    case TaskKind::kSparseTrack: return "sparse_track";
  }
  return "speed";
}

TaskKind task_from_string(const std::string& name) {
  if (name == "speed") return TaskKind::kSpeed;
  if (name == "reach") return TaskKind::kReach;
  if (name == "trajectory") return TaskKind::kTrajectory;
  if (name == "sparse_track") return TaskKind::kSparseTrack;
  throw std::invalid_argument("unknown task: " + name);
}

int task_goal_dim(TaskKind k) {
  switch (k) {
    case TaskKind::kSpeed: return 2;
    case TaskKind::kReach: return 4;
    case TaskKind::kTrajectory: return 10;
    case TaskKind::kSparseTrack: return 18;
  }
  return 0;
}

void to_json(nlohmann::json& j, const TaskConfig& c) {
  j = {{"kind", to_string(c.kind)},
       {"space", c.space == ActionSpace::kLatent ? "latent" : "torque"},
       {"use_prior", c.use_prior},
       {"hidden", c.hidden},
       {"activation", to_string(c.activation)},
       {"latent_std", c.latent_std},
       {"torque_std", c.torque_std},
       {"ppo", c.ppo},
       {"max_samples", c.max_samples},
       {"eval_interval", c.eval_interval},
       {"eval_episodes", c.eval_episodes},
       {"substeps", c.substeps},
       {"dt", c.dt},
       {"episode_s", c.episode_s},
       {"fall_height", c.fall_height},
       {"energy_coef", c.energy_coef},
       {"speed_min", c.speed_min},
       {"speed_max", c.speed_max},
       {"reach_half_width", c.reach_half_width},
       {"traj_speed_max", c.traj_speed_max},
       {"traj_accel_max", c.traj_accel_max},
       {"weights", {c.weights.pos, c.weights.rot, c.weights.vel, c.weights.ang}},
       {"track_thresh", c.track_thresh}};
}

void from_json(const nlohmann::json& j, TaskConfig& c) {
  if (j.contains("kind")) c.kind = task_from_string(j.at("kind").get<std::string>());
  if (j.contains("space")) {
    const std::string s = j.at("space").get<std::string>();
    if (s != "latent" && s != "torque") throw std::invalid_argument("unknown action space: " + s);
    c.space = s == "latent" ? ActionSpace::kLatent : ActionSpace::kTorque;
  }
  c.use_prior = j.value("use_prior", c.use_prior);
  c.hidden = j.value("hidden", c.hidden);
  if (j.contains("activation")) c.activation = activation_from_string(j.at("activation").get<std::string>());
  c.latent_std = j.value("latent_std", c.latent_std);
  c.torque_std = j.value("torque_std", c.torque_std);
  if (j.contains("ppo")) from_json(j.at("ppo"), c.ppo);
  c.max_samples = j.value("max_samples", c.max_samples);
  c.eval_interval = j.value("eval_interval", c.eval_interval);
  c.eval_episodes = j.value("eval_episodes", c.eval_episodes);
  c.substeps = j.value("substeps", c.substeps);
  c.dt = j.value("dt", c.dt);
  c.episode_s = j.value("episode_s", c.episode_s);
  c.fall_height = j.value("fall_height", c.fall_height);
  c.energy_coef = j.value("energy_coef", c.energy_coef);
  c.speed_min = j.value("speed_min", c.speed_min);
  c.speed_max = j.value("speed_max", c.speed_max);
  c.reach_half_width = j.value("reach_half_width", c.reach_half_width);
  c.traj_speed_max = j.value("traj_speed_max", c.traj_speed_max);
  c.traj_accel_max = j.value("traj_accel_max", c.traj_accel_max);
  if (j.contains("weights")) {
    const auto w = j.at("weights").get<std::vector<double>>();
    if (w.size() != 4) throw std::invalid_argument("reward weights need 4 entries");
    c.weights = {w[0], w[1], w[2], w[3]};
  }
  c.track_thresh = j.value("track_thresh", c.track_thresh);
}

HierarchicalAction hierarchical_act(const HierarchicalPolicy& hp, const Vec& proprio,
                                    const Vec& goal, Rng& rng, bool explore) {
  const PulseModel& m = *hp.pulse;
  HierarchicalAction out;
  out.prior_mean = hp.use_prior ? prior(m, proprio).mean : Vec::Zero(m.latent_dim);
  Vec obs(proprio.size() + goal.size());
  obs << proprio, goal;
  const Vec mean = hp.task.mean(obs);
  out.residual = explore ? reparam_sample(DiagGaussian{mean, hp.task.std()}, rng).z : mean;
  out.action = decode(m, proprio, out.residual + out.prior_mean);
  return out;
}

double speed_reward(double target, double root_vx) { return std::exp(-std::abs(target - root_vx)); }

double reach_reward(const Vec2& hand, const Vec2& target) {
  return std::exp(-5.0 * (hand - target).squaredNorm());
}

double trajectory_reward(double root_x, double waypoint_x, const Vec& joint_power,
                         double energy_coef) {
  return std::exp(-2.0 * std::abs(root_x - waypoint_x)) - energy_coef * joint_power.squaredNorm();
}

namespace {

struct TrackPoint {
  Vec2 p, v;
  double angle = 0.0, omega = 0.0;
};

TrackPoint track_point(const HumanoidModel& model, const Kinematics& k, const std::string& ee) {
  const EndEffector& e = model.end_effectors.at(ee);
  TrackPoint t;
  t.p = k.point(model, e.link, e.offset);
  t.v = k.point_velocity(e.link, t.p);
  t.angle = k.links[e.link].angle;
  t.omega = k.links[e.link].angular_velocity;
  return t;
}

TrackPoint root_point(const Kinematics& k) {
  return {k.links[0].origin, k.links[0].origin_velocity, k.links[0].angle,
          k.links[0].angular_velocity};
}

const char* const kTracked[] = {"head", "hand"};

}  // namespace

double sparse_track_reward(const HumanoidModel& model, const Kinematics& cur, const Kinematics& ref,
                           const Vec& joint_power, double energy_coef, const RewardWeights& w) {
  std::vector<std::pair<TrackPoint, TrackPoint>> pts{{root_point(cur), root_point(ref)}};
  for (const char* name : kTracked) pts.push_back({track_point(model, cur, name), track_point(model, ref, name)});
  double ep = 0.0, er = 0.0, ev = 0.0, ew = 0.0;
  for (const auto& [c, r] : pts) {
    ep += (r.p - c.p).norm();
    er += std::abs(wrap_angle(r.angle - c.angle));
    ev += (r.v - c.v).norm();
    ew += std::abs(r.omega - c.omega);
  }
  const double n = static_cast<double>(pts.size());
  return w.pos * std::exp(-100.0 * ep / n) + w.rot * std::exp(-10.0 * er / n) +
         w.vel * std::exp(-0.1 * ev / n) + w.ang * std::exp(-0.1 * ew / n) -
         energy_coef * joint_power.squaredNorm();
}

double tracked_deviation(const HumanoidModel& model, const Kinematics& cur, const Kinematics& ref) {
  double d = 0.0;
  for (const char* name : kTracked) {
    const EndEffector& e = model.end_effectors.at(name);
    d += (cur.point(model, e.link, e.offset) - ref.point(model, e.link, e.offset)).norm();
  }
  return d / std::size(kTracked);
}

std::vector<double> make_waypoints(double start_x, int steps, double control_dt, double v_max,
                                   double a_max, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> w(std::max(steps, 1));
  double x = start_x, v = v_max * u(rng), a = 0.0;
  const int per_second = std::max(1, static_cast<int>(std::lround(1.0 / control_dt)));
  for (int i = 0; i < static_cast<int>(w.size()); ++i) {
    if (i % per_second == 0) a = a_max * (2.0 * u(rng) - 1.0);
    w[i] = x;
    v = std::clamp(v + a * control_dt, 0.0, v_max);
    x += v * control_dt;
  }
  return w;
}

TaskEnv::TaskEnv(const HumanoidModel& model, std::shared_ptr<const PulseModel> pulse,
                 std::shared_ptr<const ReferenceSet> ref, TaskConfig config)
    : model_(model), pulse_(std::move(pulse)), ref_(std::move(ref)), config_(std::move(config)) {
  if (config_.space == ActionSpace::kLatent && !pulse_) {
    throw std::invalid_argument("latent task needs a latent model");
  }
  if (!ref_ || ref_->dataset.size() == 0) throw std::invalid_argument("task needs initial states");
  max_steps_ = static_cast<int>(std::lround(config_.episode_s / (config_.substeps * config_.dt)));
}

int TaskEnv::obs_dim() const { return proprio_dim(model_) + task_goal_dim(config_.kind); }

int TaskEnv::act_dim() const {
  return config_.space == ActionSpace::kLatent ? pulse_->latent_dim : model_.n_joints();
}

Vec TaskEnv::goal() const {
  const int L = model_.n_links();
  (void)L;
  Vec g(task_goal_dim(config_.kind));
  const Vec2 root = kin_.links[0].origin;
  switch (config_.kind) {
    case TaskKind::kSpeed:
      g << speed_target_ - state_.qdot[0], speed_target_;
      break;
    case TaskKind::kReach:
      g << reach_target_ - end_effector_position(model_, kin_, "hand"), reach_target_ - root;
      break;
    case TaskKind::kTrajectory:
      for (int k = 0; k < 10; ++k) {
        const size_t i = std::min(waypoints_.size() - 1, static_cast<size_t>(t_ + 10 * (k + 1)));
        g[k] = waypoints_[i] - root.x();
      }
      break;
    case TaskKind::kSparseTrack: {
      const auto& frames = ref_->kin[clip_];
      const Kinematics& r = frames[std::min<size_t>(frames.size() - 1, frame_ + t_ + 1)];
      int o = 0;
      for (const char* name : kTracked) {
        const TrackPoint c = track_point(model_, kin_, name);
        const TrackPoint f = track_point(model_, r, name);
        g[o++] = wrap_angle(f.angle - c.angle);
        g.segment<2>(o) = f.p - c.p;
        o += 2;
        g.segment<2>(o) = f.v - c.v;
        o += 2;
        g[o++] = f.omega - c.omega;
        g[o++] = f.angle;
        g.segment<2>(o) = Vec2(f.p.x() - root.x(), f.p.y());
        o += 2;
      }
      break;
    }
  }
  return g;
}

Vec TaskEnv::observe() const {
  Vec o(obs_dim());
  o << proprioception(model_, kin_), goal();
  return o;
}

void TaskEnv::sample_goal(Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double root_x = state_.q[0];
  switch (config_.kind) {
    case TaskKind::kSpeed:
      speed_target_ = config_.speed_min + (config_.speed_max - config_.speed_min) * u(rng);
      break;
    case TaskKind::kReach: {
      const double h = config_.reach_half_width;
      reach_target_ = Vec2(root_x + h * (2.0 * u(rng) - 1.0), 1.0 + h * (2.0 * u(rng) - 1.0));
      break;
    }
    case TaskKind::kTrajectory:
      waypoints_ = make_waypoints(root_x, max_steps_ + 101, config_.substeps * config_.dt,
                                  config_.traj_speed_max, config_.traj_accel_max, rng);
      break;
    case TaskKind::kSparseTrack:
      break;
  }
}

Vec TaskEnv::reset(Rng& rng) {
  const InitialState s = sample_initial_state(ref_->dataset, rng);
  if (config_.kind == TaskKind::kSparseTrack) {
    clip_ = s.clip;
    frame_ = s.frame;
    max_steps_ = ref_->dataset.clips[clip_].n_frames() - 1 - frame_;
    state_ = s.state;
    state_.time_s = 0.0;
    t_ = 0;
    clamped_return_ = 0.0;
    diverged_ = false;
    kin_ = forward_kinematics(model_, state_);
    return observe();
  }
  return reset_to(s.state, rng);
}

Vec TaskEnv::reset_to(const HumanoidState& s, Rng& rng) {
  state_ = s;
  state_.time_s = 0.0;
  t_ = 0;
  clamped_return_ = 0.0;
  diverged_ = false;
  kin_ = forward_kinematics(model_, state_);
  if (config_.kind != TaskKind::kSparseTrack) {
    max_steps_ = static_cast<int>(std::lround(config_.episode_s / (config_.substeps * config_.dt)));
    sample_goal(rng);
  }
  return observe();
}

Vec TaskEnv::reset_to_clip(int clip) {
  if (config_.kind != TaskKind::kSparseTrack) throw std::logic_error("reset_to_clip is for sparse tracking");
  const MotionClip& c = ref_->dataset.clips.at(clip);
  clip_ = clip;
  frame_ = 0;
  max_steps_ = c.n_frames() - 1;
  state_ = c.state(0);
  state_.time_s = 0.0;
  t_ = 0;
  clamped_return_ = 0.0;
  diverged_ = false;
  kin_ = forward_kinematics(model_, state_);
  return observe();
}

Vec TaskEnv::action_offset() const {
  if (config_.space != ActionSpace::kLatent || !config_.use_prior) return {};
  return prior(*pulse_, proprioception(model_, kin_)).mean;
}

Env::Step TaskEnv::step(const Vec& action, Rng&) {
  check_dim(action.size(), act_dim(), "task action");
  diverged_ = false;
  const int nj = model_.n_joints();
  Vec drive(nj);
  if (config_.space == ActionSpace::kLatent) {
    drive = decode(*pulse_, proprioception(model_, kin_), action);
  } else {
    for (int j = 0; j < nj; ++j) drive[j] = model_.joints[j].torque_cap * std::clamp(action[j], -1.0, 1.0);
  }
  const double x0 = state_.q[0];
  Vec power = Vec::Zero(nj);
  Step out;
  try {
    for (int k = 0; k < config_.substeps; ++k) {
      StepInfo info;
      state_ = config_.space == ActionSpace::kLatent
                   ? pulse::step(model_, state_, PdAction{drive}, config_.dt, &info)
                   : step_torques(model_, state_, drive, config_.dt, &info);
      power += info.actuator_torques.cwiseProduct(state_.qdot.tail(nj));
    }
  } catch (const NumericalDivergence&) {
    diverged_ = true;
    out.obs = observe();
    out.done = out.terminal = true;
    return out;
  }
  power /= config_.substeps;
  ++t_;
  kin_ = forward_kinematics(model_, state_);
  const double control_dt = config_.substeps * config_.dt;
  bool failed = state_.q[1] < config_.fall_height;
  switch (config_.kind) {
    case TaskKind::kSpeed:
      // Mean root velocity over the control step.
      out.reward = speed_reward(speed_target_, (state_.q[0] - x0) / control_dt);
      break;
    case TaskKind::kReach:
      out.reward = reach_reward(end_effector_position(model_, kin_, "hand"), reach_target_);
      break;
    case TaskKind::kTrajectory:
      out.reward = trajectory_reward(state_.q[0], waypoints_[std::min<size_t>(waypoints_.size() - 1, t_)],
                                     power, config_.energy_coef);
      break;
    case TaskKind::kSparseTrack: {
      const Kinematics& r = ref_->kin[clip_][frame_ + t_];
      out.reward = sparse_track_reward(model_, kin_, r, power, config_.energy_coef, config_.weights);
      failed = failed || tracked_deviation(model_, kin_, r) > config_.track_thresh;
      break;
    }
  }
  clamped_return_ += std::max(0.0, out.reward);
  out.terminal = failed;
  out.done = failed || t_ >= max_steps_;
  out.obs = observe();
  return out;
}

MotionDataset task_dataset(const MotionDataset& dataset, TaskKind kind) {
  if (kind != TaskKind::kSpeed && kind != TaskKind::kTrajectory) return dataset;
  std::vector<MotionClip> clips;
  for (const MotionClip& c : dataset.clips) {
    if (std::find(c.tags.begin(), c.tags.end(), "locomotion") != c.tags.end()) clips.push_back(c);
  }
  if (clips.empty()) return dataset;
  return make_dataset(std::move(clips));
}

double evaluate_task(const HumanoidModel& model, std::shared_ptr<const PulseModel> pulse,
                     const ReferenceSet& ref, const TaskConfig& config, const GaussianPolicy& policy,
                     int episodes, std::uint64_t seed) {
  auto ref_ptr = std::shared_ptr<const ReferenceSet>(&ref, [](const ReferenceSet*) {});
  TaskEnv env(model, std::move(pulse), ref_ptr, config);
  Rng rng = make_stream(seed, "task/eval");
  double total = 0.0;
  for (int e = 0; e < episodes; ++e) {
    Vec obs = env.reset(rng);
    for (;;) {
      const Env::Step s = env.step(policy.mean(obs, env.action_offset()), rng);
      if (s.done) break;
      obs = s.obs;
    }
    total += env.episode_reward_clamped() / std::max(1, env.max_steps());
  }
  return episodes > 0 ? total / episodes : 0.0;
}

TaskResult train_task(const HumanoidModel& model, std::shared_ptr<const PulseModel> pulse,
                      const MotionDataset& dataset, const TaskConfig& config, std::uint64_t seed,
                      std::ostream* csv, double target_return, double stop_return) {
  auto ref = std::make_shared<const ReferenceSet>(model, task_dataset(dataset, config.kind));
  Rng init_rng = make_stream(seed, "task/init");
  Rng env_rng = make_stream(seed, "task/env");
  Rng update_rng = make_stream(seed, "task/update");

  std::vector<EnvSlot> envs(1);
  auto env = std::make_unique<TaskEnv>(model, pulse, ref, config);
  const int obs = env->obs_dim(), act = env->act_dim();
  const int max_steps = env->max_steps();
  envs[0].env = std::move(env);

  TaskResult result;
  const double std = config.space == ActionSpace::kLatent ? config.latent_std : config.torque_std;
  result.learner.policy = GaussianPolicy(obs, config.hidden, act, config.activation, std);
  // A zero head starts the latent policy at the prior.
  result.learner.policy.net.init(init_rng, 0.0);
  std::vector<int> vs{obs};
  vs.insert(vs.end(), config.hidden.begin(), config.hidden.end());
  vs.push_back(1);
  result.learner.value = Mlp(vs, config.activation);
  result.learner.value.init(init_rng);
  if (csv) write_stats_header(*csv);

  long long updates = 0;
  const int eval_interval = std::max(1, config.eval_interval);
  auto evaluate = [&](double train_return) {
    CurvePoint p;
    p.update = updates;
    p.samples = result.samples;
    p.train_return = train_return;
    p.eval_return = config.kind == TaskKind::kSparseTrack
                        ? evaluate_sparse_tracking(model, pulse, ref, config, result.learner.policy)
                              .tracked_success
                        : evaluate_task(model, pulse, *ref, config, result.learner.policy,
                                        config.eval_episodes, seed);
    result.curve.push_back(p);
    if (result.first_reach_samples < 0 && p.eval_return >= target_return) {
      result.first_reach_samples = p.samples;
    }
    return p.eval_return;
  };

  double train_return = 0.0;
  while (result.samples < config.max_samples) {
    const int n = static_cast<int>(std::min<long long>(config.ppo.buffer, config.max_samples - result.samples));
    const RolloutBuffer buf = collect(result.learner.policy, result.learner.value, envs, n, env_rng);
    const PpoStats stats = ppo_update(result.learner, buf, config.ppo, update_rng);
    result.samples += buf.size();
    ++updates;
    if (!buf.episode_returns.empty()) train_return = buf.mean_episode_return() / max_steps;
    if (csv) write_stats_row(*csv, updates, result.samples, stats);
    if (updates % eval_interval == 0 && evaluate(train_return) >= stop_return) return result;
  }
  if (result.curve.empty() || result.curve.back().update != updates) evaluate(train_return);
  return result;
}

SparseTrackReport sparse_metrics(const HumanoidModel& model, const MotionDataset& dataset,
                                 const std::vector<std::vector<Vec>>& q_tracks, double thresh_m) {
  SparseTrackReport r;
  r.full = evaluate_tracks(model, dataset, q_tracks, thresh_m);
  const Vec zero = Vec::Zero(model.n_dof());
  for (int c = 0; c < dataset.size(); ++c) {
    const MotionClip& clip = dataset.clips[c];
    const auto& track = q_tracks[c];
    bool ok = static_cast<int>(track.size()) >= clip.n_frames();
    const int n = std::min<int>(track.size(), clip.n_frames());
    double err = 0.0;
    for (int f = 0; f < n; ++f) {
      const double d = tracked_deviation(model, forward_kinematics(model, track[f], zero),
                                         forward_kinematics(model, clip.q[f], zero));
      if (d > thresh_m) ok = false;
      err += d;
    }
    r.tracked_per_clip.push_back(ok);
    r.tracked_success += ok ? 1.0 : 0.0;
    r.tracked_error += n > 0 ? 1000.0 * err / n : 0.0;
  }
  if (dataset.size() > 0) {
    r.tracked_success /= dataset.size();
    r.tracked_error /= dataset.size();
  }
  return r;
}

std::vector<std::vector<Vec>> sparse_rollouts(const HumanoidModel& model,
                                              std::shared_ptr<const PulseModel> pulse,
                                              std::shared_ptr<const ReferenceSet> ref,
                                              const TaskConfig& config,
                                              const GaussianPolicy& policy) {
  TaskConfig c = config;
  c.kind = TaskKind::kSparseTrack;
  TaskEnv env(model, std::move(pulse), ref, c);
  Rng unused(0);
  std::vector<std::vector<Vec>> tracks(ref->dataset.size());
  for (int clip = 0; clip < ref->dataset.size(); ++clip) {
    Vec obs = env.reset_to_clip(clip);
    tracks[clip].push_back(env.state().q);
    for (;;) {
      const Env::Step s = env.step(policy.mean(obs, env.action_offset()), unused);
      if (env.diverged()) break;
      tracks[clip].push_back(env.state().q);
      if (s.done) break;
      obs = s.obs;
    }
  }
  return tracks;
}

SparseTrackReport evaluate_sparse_tracking(const HumanoidModel& model,
                                           std::shared_ptr<const PulseModel> pulse,
                                           std::shared_ptr<const ReferenceSet> ref,
                                           const TaskConfig& config,
                                           const GaussianPolicy& policy) {
  return sparse_metrics(model, ref->dataset, sparse_rollouts(model, pulse, ref, config, policy),
                        config.track_thresh);
}

nlohmann::json to_json(const SparseTrackReport& r) {
  return {{"tracked_success", r.tracked_success},
          {"tracked_error_mm", r.tracked_error},
          {"tracked_per_clip", r.tracked_per_clip},
          {"full_body", to_json(r.full)}};
}

namespace {

template <typename Drive>
GenerationResult rollout(const HumanoidState& initial,
                         const GenerationConfig& config, Drive&& drive) {
  GenerationResult r;
  HumanoidState s = initial;
  s.time_s = 0.0;
  r.states.push_back(s);
  const double control_dt = config.substeps * config.dt;
  const int steps = static_cast<int>(std::lround(config.duration_s / control_dt));
  r.time_to_fall_s = steps * control_dt;
  for (int t = 0; t < steps; ++t) {
    try {
      s = drive(s);
    } catch (const NumericalDivergence&) {
      r.diverged = r.fell = true;
      r.time_to_fall_s = t * control_dt;
      return r;
    }
    r.states.push_back(s);
    if (s.q[1] < config.fall_height) {
      r.fell = true;
      r.time_to_fall_s = (t + 1) * control_dt;
      return r;
    }
  }
  return r;
}

}  // namespace

GenerationResult generate(const HumanoidModel& model, const PulseModel& pulse,
                          const HumanoidState& initial, double noise_scale, Rng& rng,
                          const GenerationConfig& config) {
  return rollout(initial, config, [&](const HumanoidState& s) {
    const Vec p = proprioception(model, forward_kinematics(model, s));
    const DiagGaussian pr = prior(pulse, p);
    // Noise is drawn even at zero scale so streams stay aligned.
    const Vec eps = standard_normal(pulse.latent_dim, rng);
    const PdAction a{decode(pulse, p, pr.mean + noise_scale * pr.std.cwiseProduct(eps))};
    HumanoidState n = s;
    for (int k = 0; k < config.substeps; ++k) n = step(model, n, a, config.dt);
    return n;
  });
}

GenerationResult random_torque_rollout(const HumanoidModel& model, const HumanoidState& initial,
                                       Rng& rng, const GenerationConfig& config) {
  return rollout(initial, config, [&](const HumanoidState& s) {
    Vec tau(model.n_joints());
    for (int j = 0; j < model.n_joints(); ++j) {
      const double cap = model.joints[j].torque_cap;
      tau[j] = std::uniform_real_distribution<double>(-cap, cap)(rng);
    }
    HumanoidState n = s;
    for (int k = 0; k < config.substeps; ++k) n = step_torques(model, n, tau, config.dt);
    return n;
  });
}

}  // namespace pulse

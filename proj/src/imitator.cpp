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

#include "pulse/imitator.hpp"

#include <cmath>

namespace pulse {

int proprio_dim(const HumanoidModel& model) { return 6 * model.n_links(); }
int goal_dim(const HumanoidModel& model) { return 9 * model.n_links(); }

Vec proprioception(const HumanoidModel& model, const Kinematics& k) {
  const int L = model.n_links();
  Vec p(6 * L);
  const Vec2 root = k.links[0].origin;
  for (int l = 1; l < L; ++l) p.segment<2>(2 * (l - 1)) = k.links[l].origin - root;
  for (int l = 0; l < L; ++l) {
    p[2 * L - 2 + l] = k.links[l].angle;
    p.segment<2>(3 * L - 2 + 2 * l) = k.links[l].origin_velocity;
    p[5 * L - 2 + l] = k.links[l].angular_velocity;
  }
  p[6 * L - 2] = root.y();
  p[6 * L - 1] = k.links[0].angle;
  return p;
}

Vec imitation_goal(const HumanoidModel& model, const Kinematics& cur, const Kinematics& ref) {
  const int L = model.n_links();
  Vec g(9 * L);
  const double root_x = cur.links[0].origin.x();
  for (int l = 0; l < L; ++l) {
    const LinkFrame& c = cur.links[l];
    const LinkFrame& r = ref.links[l];
    g[l] = wrap_angle(r.angle - c.angle);
    g.segment<2>(L + 2 * l) = r.origin - c.origin;
    g.segment<2>(3 * L + 2 * l) = r.origin_velocity - c.origin_velocity;
    g[5 * L + l] = r.angular_velocity - c.angular_velocity;
    g[6 * L + l] = r.angle;
    g.segment<2>(7 * L + 2 * l) = Vec2(r.origin.x() - root_x, r.origin.y());
  }
  return g;
}

Vec obs_mimic(const HumanoidModel& model, const HumanoidState& state, const MotionClip& clip,
              int t) {
  if (t < 0 || t + 1 >= clip.n_frames()) throw std::out_of_range("obs_mimic: frame out of range");
  const Kinematics k = forward_kinematics(model, state);
  const Kinematics r = forward_kinematics(model, clip.state(t + 1));
  Vec o(proprio_dim(model) + goal_dim(model));
  o << proprioception(model, k), imitation_goal(model, k, r);
  return o;
}

TrackingErrors tracking_errors(const Kinematics& cur, const Kinematics& ref) {
  TrackingErrors e;
  const size_t L = cur.links.size();
  for (size_t l = 0; l < L; ++l) {
    const LinkFrame& c = cur.links[l];
    const LinkFrame& r = ref.links[l];
    e.pos += (r.origin - c.origin).norm();
    e.rot += std::abs(wrap_angle(r.angle - c.angle));
    e.vel += (r.origin_velocity - c.origin_velocity).norm();
    e.ang += std::abs(r.angular_velocity - c.angular_velocity);
  }
  const double inv = 1.0 / static_cast<double>(L);
  e.pos *= inv;
  e.rot *= inv;
  e.vel *= inv;
  e.ang *= inv;
  return e;
}

namespace {

ImitationReward reward_from(const TrackingErrors& e, const Vec& joint_power, double energy_coef,
                            const RewardWeights& w) {
  ImitationReward r;
  r.errors = e;
  r.imitation = w.pos * std::exp(-100.0 * e.pos) + w.rot * std::exp(-10.0 * e.rot) +
                w.vel * std::exp(-0.1 * e.vel) + w.ang * std::exp(-0.1 * e.ang);
  r.energy = joint_power.size() > 0 ? -energy_coef * joint_power.squaredNorm() : 0.0;
  r.total = r.imitation + r.energy;
  return r;
}

}  // namespace

ImitationReward reward_mimic(const HumanoidModel& model, const HumanoidState& state,
                             const MotionClip& clip, int t, const Vec& joint_power,
                             double energy_coef, const RewardWeights& w) {
  return reward_from(tracking_errors(forward_kinematics(model, state),
                                     forward_kinematics(model, clip.state(t))),
                     joint_power, energy_coef, w);
}

bool terminate_mimic(const HumanoidModel& model, const HumanoidState& state,
                     const MotionClip& clip, int t, double threshold_m) {
  // Same error definition as the environment's per-step check.
  return tracking_errors(forward_kinematics(model, state), forward_kinematics(model, clip.state(t)))
             .pos > threshold_m;
}

ReferenceSet::ReferenceSet(const HumanoidModel& model, MotionDataset ds) : dataset(std::move(ds)) {
  dataset.validate(model);
  kin.resize(dataset.size());
  for (int c = 0; c < dataset.size(); ++c) {
    const MotionClip& clip = dataset.clips[c];
    kin[c].reserve(clip.n_frames());
    for (int f = 0; f < clip.n_frames(); ++f) kin[c].push_back(forward_kinematics(model, clip.q[f], clip.qdot[f]));
  }
}

InitialState ClipSampler::sample(Rng& rng) const {
  if (!hard.empty() && std::uniform_real_distribution<double>(0.0, 1.0)(rng) < mix) {
    const int pick = hard[std::uniform_int_distribution<int>(0, static_cast<int>(hard.size()) - 1)(rng)];
    const MotionClip& c = ref->dataset.clips[pick];
    const int frame = std::uniform_int_distribution<int>(0, c.n_frames() - 2)(rng);
    return {pick, frame, c.state(frame)};
  }
  return sample_initial_state(ref->dataset, rng);
}

void to_json(nlohmann::json& j, const ImitationEnvConfig& c) {
  j = {{"substeps", c.substeps},
       {"dt", c.dt},
       {"termination_m", c.termination_m},
       {"energy_coef", c.energy_coef},
       {"weights", {c.weights.pos, c.weights.rot, c.weights.vel, c.weights.ang}}};
}

void from_json(const nlohmann::json& j, ImitationEnvConfig& c) {
  c.substeps = j.value("substeps", c.substeps);
  c.dt = j.value("dt", c.dt);
  c.termination_m = j.value("termination_m", c.termination_m);
  c.energy_coef = j.value("energy_coef", c.energy_coef);
  if (j.contains("weights")) {
    const auto w = j.at("weights").get<std::vector<double>>();
    if (w.size() != 4) throw std::invalid_argument("reward weights need 4 entries");
    c.weights = {w[0], w[1], w[2], w[3]};
  }
}

ImitationEnv::ImitationEnv(const HumanoidModel& model, std::shared_ptr<const ClipSampler> sampler,
                           ImitationEnvConfig config)
    : model_(model), sampler_(std::move(sampler)), config_(config) {}

int ImitationEnv::obs_dim() const { return proprio_dim(model_) + goal_dim(model_); }

Vec ImitationEnv::observe() const {
  Vec o(obs_dim());
  o << proprioception(model_, kin_),
      imitation_goal(model_, kin_, sampler_->ref->kin[clip_][frame_ + 1]);
  return o;
}

Vec ImitationEnv::reset(Rng& rng) {
  const InitialState s = sampler_->sample(rng);
  return reset_to(s.clip, s.frame);
}

Vec ImitationEnv::reset_to(int clip, int frame) {
  const MotionClip& c = sampler_->ref->dataset.clips.at(clip);
  if (frame < 0 || frame + 1 >= c.n_frames()) throw std::out_of_range("reset_to: frame out of range");
  clip_ = clip;
  frame_ = frame;
  state_ = c.state(frame);
  state_.time_s = 0.0;
  kin_ = forward_kinematics(model_, state_);
  return observe();
}

Vec ImitationEnv::action_offset() const {
  return sampler_->ref->dataset.clips[clip_].q[frame_ + 1].tail(model_.n_joints());
}

Env::Step ImitationEnv::step(const Vec& action, Rng&) {
  check_dim(action.size(), act_dim(), "imitation action");
  diverged_ = false;
  const PdAction a{action};
  Vec power = Vec::Zero(model_.n_joints());
  Step out;
  try {
    for (int k = 0; k < config_.substeps; ++k) {
      StepInfo info;
      state_ = pulse::step(model_, state_, a, config_.dt, &info);
      power += info.actuator_torques.cwiseProduct(state_.qdot.tail(model_.n_joints()));
    }
  } catch (const NumericalDivergence&) {
    // Keep the last finite state so observations stay finite.
    diverged_ = true;
    out.obs = observe();
    out.done = out.terminal = true;
    return out;
  }
  power /= config_.substeps;
  ++frame_;
  kin_ = forward_kinematics(model_, state_);
  const Kinematics& ref = sampler_->ref->kin[clip_][frame_];
  const TrackingErrors e = tracking_errors(kin_, ref);
  out.reward = reward_from(e, power, config_.energy_coef, config_.weights).total;
  const bool last = frame_ + 1 >= sampler_->ref->dataset.clips[clip_].n_frames();
  out.terminal = e.pos > config_.termination_m;
  out.done = out.terminal || last;
  // The final observation exists only when a next frame does; at the time
  // limit the goal repeats the last frame.
  if (last) {
    Vec o(obs_dim());
    o << proprioception(model_, kin_), imitation_goal(model_, kin_, ref);
    out.obs = std::move(o);
  } else {
    out.obs = observe();
  }
  return out;
}

MeanActor deterministic_actor(const GaussianPolicy& policy) {
  return [&policy](const Vec& obs, const Vec& offset) { return policy.mean(obs, offset); };
}

std::vector<HumanoidState> rollout_clip(const HumanoidModel& model, const ReferenceSet& ref,
                                        int clip, const MeanActor& actor,
                                        const ImitationEnvConfig& config) {
  auto sampler = std::make_shared<ClipSampler>();
  sampler->ref = std::shared_ptr<const ReferenceSet>(&ref, [](const ReferenceSet*) {});
  ImitationEnv env(model, sampler, config);
  Vec obs = env.reset_to(clip, 0);
  std::vector<HumanoidState> states{env.state()};
  Rng unused(0);
  for (;;) {
    const Env::Step s = env.step(actor(obs, env.action_offset()), unused);
    if (env.diverged()) break;
    states.push_back(env.state());
    if (s.done) break;
    obs = s.obs;
  }
  return states;
}

MetricsReport evaluate_tracks(const HumanoidModel& model, const MotionDataset& dataset,
                              const std::vector<std::vector<Vec>>& q_tracks,
                              double success_thresh_m) {
  check_dim(static_cast<Eigen::Index>(q_tracks.size()), dataset.size(), "evaluate_tracks clips");
  std::vector<Metrics> per;
  for (int c = 0; c < dataset.size(); ++c) {
    const MotionClip& clip = dataset.clips[c];
    Metrics m = compute_metrics(pose_track(model, clip.q), pose_track(model, q_tracks[c]),
                                success_thresh_m);
    // A rollout that stopped before the clip's end failed.
    if (static_cast<int>(q_tracks[c].size()) < clip.n_frames()) m.success = false;
    m.clip = clip.name;
    per.push_back(std::move(m));
  }
  return aggregate(std::move(per));
}

MetricsReport evaluate_imitation(const HumanoidModel& model, const ReferenceSet& ref,
                                 const MeanActor& actor, const ImitationEnvConfig& config) {
  std::vector<std::vector<Vec>> tracks(ref.dataset.size());
  for (int c = 0; c < ref.dataset.size(); ++c) {
    for (const HumanoidState& s : rollout_clip(model, ref, c, actor, config)) tracks[c].push_back(s.q);
  }
  return evaluate_tracks(model, ref.dataset, tracks, config.termination_m);
}

void to_json(nlohmann::json& j, const MiningConfig& c) {
  j = {{"enabled", c.enabled},
       {"eval_interval", c.eval_interval},
       {"plateau_delta", c.plateau_delta},
       {"plateau_patience", c.plateau_patience},
       {"mix_ratio", c.mix_ratio}};
}

void from_json(const nlohmann::json& j, MiningConfig& c) {
  c.enabled = j.value("enabled", c.enabled);
  c.eval_interval = j.value("eval_interval", c.eval_interval);
  c.plateau_delta = j.value("plateau_delta", c.plateau_delta);
  c.plateau_patience = j.value("plateau_patience", c.plateau_patience);
  c.mix_ratio = j.value("mix_ratio", c.mix_ratio);
}

bool HardMiner::observe(const MetricsReport& report, std::vector<int>& hard) {
  if (reference_success < 0.0 || report.success_rate >= reference_success + config.plateau_delta) {
    reference_success = report.success_rate;
    stale = 0;
    return false;
  }
  if (++stale < config.plateau_patience) return false;
  stale = 0;
  reference_success = report.success_rate;
  if (!config.enabled) return false;
  std::vector<int> failed;
  for (int c = 0; c < static_cast<int>(report.per_clip.size()); ++c) {
    if (!report.per_clip[c].success) failed.push_back(c);
  }
  if (failed.empty()) return false;
  hard = std::move(failed);
  return true;
}

void to_json(nlohmann::json& j, const ImitatorConfig& c) {
  j = {{"hidden", c.hidden},
       {"activation", to_string(c.activation)},
       {"action_std", c.action_std},
       {"ppo", c.ppo},
       {"env", c.env},
       {"mining", c.mining},
       {"max_samples", c.max_samples},
       {"n_envs", c.n_envs},
       {"target_success", c.target_success}};
}

void from_json(const nlohmann::json& j, ImitatorConfig& c) {
  c.hidden = j.value("hidden", c.hidden);
  if (j.contains("activation")) c.activation = activation_from_string(j.at("activation").get<std::string>());
  c.action_std = j.value("action_std", c.action_std);
  if (j.contains("ppo")) from_json(j.at("ppo"), c.ppo);
  if (j.contains("env")) from_json(j.at("env"), c.env);
  if (j.contains("mining")) from_json(j.at("mining"), c.mining);
  c.max_samples = j.value("max_samples", c.max_samples);
  c.n_envs = j.value("n_envs", c.n_envs);
  c.target_success = j.value("target_success", c.target_success);
}

nlohmann::json to_json(const EvalRecord& e) {
  return {{"update", e.update}, {"samples", e.samples}, {"success", e.success},
          {"mpjpe_mm", e.mpjpe}, {"failed", e.failed},   {"hard", e.hard}};
}

namespace {

bool better(const MetricsReport& a, const MetricsReport& b) {
  if (a.success_rate != b.success_rate) return a.success_rate > b.success_rate;
  return a.g_mpjpe < b.g_mpjpe;
}

}  // namespace

ImitatorResult train_imitator(const HumanoidModel& model, const MotionDataset& dataset,
                              const ImitatorConfig& config, std::uint64_t seed, std::ostream* csv) {
  auto ref = std::make_shared<const ReferenceSet>(model, dataset);
  auto sampler = std::make_shared<ClipSampler>();
  sampler->ref = ref;
  sampler->mix = config.mining.mix_ratio;

  Rng init_rng = make_stream(seed, "imitator/init");
  Rng env_rng = make_stream(seed, "imitator/env");
  Rng update_rng = make_stream(seed, "imitator/update");

  const int obs = proprio_dim(model) + goal_dim(model);
  PpoLearner learner;
  learner.policy = GaussianPolicy(obs, config.hidden, model.n_joints(), config.activation,
                                  config.action_std);
  learner.policy.net.init(init_rng, 0.01);
  std::vector<int> vsizes{obs};
  vsizes.insert(vsizes.end(), config.hidden.begin(), config.hidden.end());
  vsizes.push_back(1);
  learner.value = Mlp(vsizes, config.activation);
  learner.value.init(init_rng);

  std::vector<EnvSlot> envs(std::max(1, config.n_envs));
  for (auto& e : envs) e.env = std::make_unique<ImitationEnv>(model, sampler, config.env);

  ImitatorResult result;
  HardMiner miner{config.mining};
  bool have_best = false;
  if (csv) write_stats_header(*csv);

  auto evaluate = [&]() {
    const MetricsReport rep =
        evaluate_imitation(model, *ref, deterministic_actor(learner.policy), config.env);
    EvalRecord rec;
    rec.update = result.updates;
    rec.samples = result.samples;
    rec.success = rep.success_rate;
    rec.mpjpe = rep.mpjpe;
    for (int c = 0; c < static_cast<int>(rep.per_clip.size()); ++c) {
      if (!rep.per_clip[c].success) rec.failed.push_back(c);
    }
    miner.observe(rep, sampler->hard);
    rec.hard = sampler->hard;
    result.evals.push_back(rec);
    if (!have_best || better(rep, result.best_report)) {
      have_best = true;
      result.best = learner;
      result.best_report = rep;
      result.best_update = result.updates;
    }
    return rep.success_rate;
  };

  while (result.samples < config.max_samples) {
    const int n = static_cast<int>(std::min<long long>(config.ppo.buffer, config.max_samples - result.samples));
    const RolloutBuffer buf = collect(learner.policy, learner.value, envs, n, env_rng);
    const PpoStats stats = ppo_update(learner, buf, config.ppo, update_rng);
    result.samples += buf.size();
    ++result.updates;
    if (csv) write_stats_row(*csv, result.updates, result.samples, stats);
    if (result.updates % config.mining.eval_interval == 0) {
      if (evaluate() >= config.target_success) {
        result.reached_target = true;
        return result;
      }
    }
  }
  if (result.evals.empty() || result.evals.back().update != result.updates) {
    result.reached_target = evaluate() >= config.target_success;
  } else {
    result.reached_target = result.best_report.success_rate >= config.target_success;
  }
  return result;
}

}  // namespace pulse

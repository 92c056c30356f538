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

#include "pulse/ppo.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace pulse {

GaussianPolicy::GaussianPolicy(int obs_dim, const std::vector<int>& hidden, int act_dim,
                               Activation act, double std)
    : log_std(Vec::Constant(act_dim, std::log(std))), norm(obs_dim) {
  std::vector<int> sizes{obs_dim};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(act_dim);
  net = Mlp(sizes, act);
}

Vec GaussianPolicy::mean(const Vec& obs, const Vec& offset) const {
  Vec m = net.forward(norm.apply(obs));
  if (offset.size() > 0) m += offset;
  return m;
}

DiagGaussian GaussianPolicy::dist(const Vec& obs, const Vec& offset) const {
  return {mean(obs, offset), std()};
}

double RolloutBuffer::mean_episode_return() const {
  if (episode_returns.empty()) return 0.0;
  return std::accumulate(episode_returns.begin(), episode_returns.end(), 0.0) /
         static_cast<double>(episode_returns.size());
}

double RolloutBuffer::mean_episode_length() const {
  if (episode_lengths.empty()) return 0.0;
  return std::accumulate(episode_lengths.begin(), episode_lengths.end(), 0.0) /
         static_cast<double>(episode_lengths.size());
}

RolloutBuffer collect(const GaussianPolicy& policy, const Mlp& value, std::vector<EnvSlot>& envs,
                      int size, Rng& rng) {
  RolloutBuffer buf;
  if (size <= 0) return buf;
  if (envs.empty()) throw std::invalid_argument("collect needs at least one environment");
  buf.data.reserve(size);
  const Vec std = policy.std();
  const int n_envs = static_cast<int>(envs.size());
  for (int e = 0; e < n_envs; ++e) {
    const int quota = size / n_envs + (e < size % n_envs ? 1 : 0);
    EnvSlot& slot = envs[e];
    int pending = -1;  // transition whose next_value awaits this slot's next value estimate
    for (int i = 0; i < quota; ++i) {
      Transition t;
      if (slot.needs_reset) {
        slot.obs = slot.env->reset(rng);
        slot.needs_reset = false;
        slot.ret = 0.0;
        slot.len = 0;
        t.episode_start = true;
      }
      t.obs = slot.obs;
      t.net_obs = policy.norm.apply(slot.obs);
      t.offset = slot.env->action_offset();
      DiagGaussian d{policy.net.forward(t.net_obs), std};
      if (t.offset.size() > 0) d.mean += t.offset;
      t.action = reparam_sample(d, rng).z;
      t.log_prob = gaussian_logpdf(d, t.action);
      t.value = value.forward(t.net_obs)[0];
      if (pending >= 0) buf.data[pending].next_value = t.value;

      Env::Step s = slot.env->step(t.action, rng);
      t.reward = s.reward;
      t.done = s.done;
      t.terminal = s.terminal;
      slot.ret += s.reward;
      ++slot.len;
      slot.obs = std::move(s.obs);
      buf.data.push_back(std::move(t));
      pending = -1;
      Transition& back = buf.data.back();
      if (back.done) {
        buf.episode_returns.push_back(slot.ret);
        buf.episode_lengths.push_back(slot.len);
        slot.needs_reset = true;
        back.next_value = back.terminal ? 0.0 : value.forward(policy.norm.apply(slot.obs))[0];
      } else {
        pending = buf.size() - 1;
      }
    }
    if (pending >= 0) buf.data[pending].next_value = value.forward(policy.norm.apply(slot.obs))[0];
    if (quota > 0) buf.data.back().segment_end = true;
  }
  return buf;
}

Advantages gae(const RolloutBuffer& buffer, double gamma, double lambda) {
  const int n = buffer.size();
  Advantages a{Vec::Zero(n), Vec::Zero(n)};
  double running = 0.0;
  for (int t = n - 1; t >= 0; --t) {
    const Transition& tr = buffer.data[t];
    // A segment end carries its own bootstrap value, so the recursion
    // restarts there as it does at episode ends.
    const bool cut = tr.done || tr.segment_end || t + 1 == n;
    const double delta = tr.reward + gamma * tr.next_value - tr.value;
    running = delta + (cut ? 0.0 : gamma * lambda * running);
    a.adv[t] = running;
    a.ret[t] = running + tr.value;
  }
  return a;
}

void to_json(nlohmann::json& j, const PpoConfig& c) {
  j = {{"lr_policy", c.lr_policy}, {"lr_value", c.lr_value}, {"clip", c.clip},
       {"epochs", c.epochs},       {"minibatch", c.minibatch}, {"buffer", c.buffer},
       {"gamma", c.gamma},         {"lambda", c.lambda},       {"value_coef", c.value_coef},
       {"max_grad_norm", c.max_grad_norm}, {"normalize_obs", c.normalize_obs},
       {"target_kl", c.target_kl},
       {"desired_kl", c.desired_kl},
       {"lr_min", c.lr_min},
       {"lr_max", c.lr_max}};
}

void from_json(const nlohmann::json& j, PpoConfig& c) {
  c.lr_policy = j.value("lr_policy", c.lr_policy);
  c.lr_value = j.value("lr_value", c.lr_value);
  c.clip = j.value("clip", c.clip);
  c.epochs = j.value("epochs", c.epochs);
  c.minibatch = j.value("minibatch", c.minibatch);
  c.buffer = j.value("buffer", c.buffer);
  c.gamma = j.value("gamma", c.gamma);
  c.lambda = j.value("lambda", c.lambda);
  c.value_coef = j.value("value_coef", c.value_coef);
  c.max_grad_norm = j.value("max_grad_norm", c.max_grad_norm);
  c.normalize_obs = j.value("normalize_obs", c.normalize_obs);
  c.target_kl = j.value("target_kl", c.target_kl);
  c.desired_kl = j.value("desired_kl", c.desired_kl);
  c.lr_min = j.value("lr_min", c.lr_min);
  c.lr_max = j.value("lr_max", c.lr_max);
}

SurrogateResult surrogate_loss(const Mat& mean, const Vec& std, const Mat& actions,
                               const Vec& old_log_prob, const Vec& adv, double clip) {
  const Eigen::Index b = mean.cols();
  check_dim(actions.cols(), b, "surrogate actions");
  check_dim(old_log_prob.size(), b, "surrogate log-probs");
  check_dim(adv.size(), b, "surrogate advantages");
  SurrogateResult r;
  r.dmean = Mat::Zero(mean.rows(), b);
  if (b == 0) return r;
  const Vec inv_var = std.array().square().inverse().matrix();
  constexpr double kHalfLog2Pi = 0.91893853320467274178;
  const double log_norm = std.array().log().sum() + kHalfLog2Pi * static_cast<double>(std.size());
  int clipped = 0;
  for (Eigen::Index i = 0; i < b; ++i) {
    const Vec diff = actions.col(i) - mean.col(i);
    const double logp = -0.5 * diff.cwiseProduct(diff).dot(inv_var) - log_norm;
    const double ratio = std::exp(logp - old_log_prob[i]);
    const double unclipped = ratio * adv[i];
    const double bounded = std::clamp(ratio, 1.0 - clip, 1.0 + clip) * adv[i];
    r.loss -= std::min(unclipped, bounded);
    const bool outside = ratio < 1.0 - clip || ratio > 1.0 + clip;
    clipped += outside;
    r.ratio_mean += ratio;
    if (i == 0) r.ratio_first = ratio;
    // min() picks the clamped branch only when it is strictly smaller, and
    // the clamp is flat exactly when the ratio is outside the band.
    if (unclipped <= bounded || !outside) {
      r.dmean.col(i) = (-adv[i] * ratio) * diff.cwiseProduct(inv_var);
    }
  }
  const double inv_b = 1.0 / static_cast<double>(b);
  r.loss *= inv_b;
  r.dmean *= inv_b;
  r.clip_fraction = clipped * inv_b;
  r.ratio_mean *= inv_b;
  return r;
}

double value_loss(const Vec& v, const Vec& target, Vec* dv) {
  check_dim(target.size(), v.size(), "value targets");
  if (v.size() == 0) {
    if (dv) dv->resize(0);
    return 0.0;
  }
  const Vec e = v - target;
  if (dv) *dv = e / static_cast<double>(v.size());
  return 0.5 * e.squaredNorm() / static_cast<double>(v.size());
}

namespace {

Mat gather(const std::vector<Transition>& data, const std::vector<int>& idx, int begin, int end,
           Vec Transition::*field, int rows) {
  Mat m(rows, end - begin);
  for (int k = begin; k < end; ++k) {
    const Vec& v = data[idx[k]].*field;
    if (v.size() == 0) {
      m.col(k - begin).setZero();
    } else {
      m.col(k - begin) = v;
    }
  }
  return m;
}

}  // namespace

PpoStats ppo_update(PpoLearner& learner, const RolloutBuffer& buffer, const PpoConfig& config,
                    Rng& rng) {
  PpoStats stats;
  stats.mean_return = buffer.mean_episode_return();
  stats.mean_length = buffer.mean_episode_length();
  const int n = buffer.size();
  if (n == 0) return stats;
  GaussianPolicy& pol = learner.policy;
  const int act = pol.act_dim(), obs = pol.obs_dim();
  if (learner.policy_opt.m.size() != pol.net.n_params()) learner.policy_opt = Adam(pol.net.n_params());
  if (learner.value_opt.m.size() != learner.value.n_params()) learner.value_opt = Adam(learner.value.n_params());

  Advantages a = gae(buffer, config.gamma, config.lambda);
  Vec adv = a.adv;
  if (n > 1) {
    const double mu = adv.mean();
    const double sd = std::sqrt((adv.array() - mu).square().mean());
    adv = (adv.array() - mu) / (sd + 1e-8);
  }
  check_finite(adv, "advantages");

  std::vector<int> all(n);
  std::iota(all.begin(), all.end(), 0);
  const Mat x_all = gather(buffer.data, all, 0, n, &Transition::net_obs, obs);
  const Mat off_all = gather(buffer.data, all, 0, n, &Transition::offset, act);
  const Mat old_mean = pol.net.forward_batch(x_all) + off_all;
  const Vec std = pol.std();
  // Exact mean KL(old || new) for the fixed diagonal std.
  const Vec inv2var = (0.5 * std.array().square().inverse()).matrix();
  auto mean_kl = [&]() {
    const Mat new_mean = pol.net.forward_batch(x_all) + off_all;
    return ((new_mean - old_mean).array().square().colwise() * inv2var.array()).sum() / n;
  };

  if (learner.lr_policy <= 0.0 || config.desired_kl <= 0.0) learner.lr_policy = config.lr_policy;
  const double lr = learner.lr_policy;
  const int mb = std::max(1, std::min(config.minibatch, n));
  std::vector<int> idx = all;
  double policy_sum = 0.0, value_sum = 0.0, clip_sum = 0.0;
  int batches = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(idx.begin(), idx.end(), rng);
    for (int begin = 0; begin < n; begin += mb) {
      const int end = std::min(n, begin + mb);
      const int b = end - begin;
      const Mat x = gather(buffer.data, idx, begin, end, &Transition::net_obs, obs);
      const Mat off = gather(buffer.data, idx, begin, end, &Transition::offset, act);
      const Mat acts = gather(buffer.data, idx, begin, end, &Transition::action, act);
      Vec old_lp(b), adv_b(b), ret_b(b);
      for (int k = 0; k < b; ++k) {
        old_lp[k] = buffer.data[idx[begin + k]].log_prob;
        adv_b[k] = adv[idx[begin + k]];
        ret_b[k] = a.ret[idx[begin + k]];
      }

      Mlp::Cache pc;
      const Mat mean = pol.net.forward_batch(x, &pc) + off;
      const SurrogateResult s = surrogate_loss(mean, std, acts, old_lp, adv_b, config.clip);
      if (!std::isfinite(s.loss)) throw NumericalError("PPO surrogate loss is not finite");
      if (epoch == 0 && begin == 0) {
        Vec lp(b);
        for (int k = 0; k < b; ++k) {
          lp[k] = gaussian_logpdf(DiagGaussian{mean.col(k), std}, acts.col(k));
        }
        stats.first_ratio_error = ((lp - old_lp).array().exp() - 1.0).abs().maxCoeff();
      }
      Vec pg = Vec::Zero(pol.net.n_params());
      pol.net.backward(pc, s.dmean, pg);
      check_finite(pg, "policy gradient");
      clip_grad_norm(pg, config.max_grad_norm);
      learner.policy_opt.step(pol.net.params, pg, lr);

      Mlp::Cache vc;
      const Vec v = learner.value.forward_batch(x, &vc).row(0).transpose();
      Vec dv;
      const double vl = value_loss(v, ret_b, &dv);
      if (!std::isfinite(vl)) throw NumericalError("PPO value loss is not finite");
      Vec vg = Vec::Zero(learner.value.n_params());
      learner.value.backward(vc, config.value_coef * dv.transpose(), vg);
      check_finite(vg, "value gradient");
      clip_grad_norm(vg, config.max_grad_norm);
      learner.value_opt.step(learner.value.params, vg, config.lr_value);

      policy_sum += s.loss;
      value_sum += vl;
      clip_sum += s.clip_fraction;
      ++batches;
    }
    stats.kl = mean_kl();
    // Early stop once the policy has moved far enough from the collector.
    if (config.target_kl > 0.0 && stats.kl > config.target_kl) break;
  }
  if (config.desired_kl > 0.0) {
    // Steers the next update's step size toward the desired KL.
    if (stats.kl > 2.0 * config.desired_kl) learner.lr_policy /= 1.5;
    else if (stats.kl < 0.5 * config.desired_kl) learner.lr_policy *= 1.5;
    learner.lr_policy = std::clamp(learner.lr_policy, config.lr_min, config.lr_max);
  }
  stats.lr_policy = lr;
  stats.policy_loss = policy_sum / batches;
  stats.value_loss = value_sum / batches;
  stats.clip_fraction = clip_sum / batches;
  if (config.normalize_obs) {
    Mat raw(obs, n);
    for (int k = 0; k < n; ++k) raw.col(k) = buffer.data[k].obs;
    pol.norm.update(raw);
  }
  return stats;
}

void write_stats_header(std::ostream& out) {
  out << "update,samples,mean_return,mean_length,policy_loss,value_loss,kl,clip_fraction,lr_policy\n";
}

void write_stats_row(std::ostream& out, long long update, long long samples, const PpoStats& s) {
  out << update << ',' << samples << ',' << s.mean_return << ',' << s.mean_length << ','
      << s.policy_loss << ',' << s.value_loss << ',' << s.kl << ',' << s.clip_fraction << ','
      << s.lr_policy << '\n';
}

void save_learner(Checkpoint& ck, const std::string& prefix, const PpoLearner& learner) {
  ck.put(prefix + ".policy", learner.policy.net);
  ck.blocks[prefix + ".log_std"] = learner.policy.log_std;
  ck.put(prefix + ".norm", learner.policy.norm);
  ck.put(prefix + ".value", learner.value);
  ck.put(prefix + ".policy_opt", learner.policy_opt);
  ck.put(prefix + ".value_opt", learner.value_opt);
  ck.meta["learners"][prefix]["lr_policy"] = learner.lr_policy;
}

void load_learner(const Checkpoint& ck, const std::string& prefix, PpoLearner& learner) {
  ck.get(prefix + ".policy", learner.policy.net);
  learner.policy.log_std = ck.block(prefix + ".log_std");
  ck.get(prefix + ".norm", learner.policy.norm);
  ck.get(prefix + ".value", learner.value);
  ck.get(prefix + ".policy_opt", learner.policy_opt);
  ck.get(prefix + ".value_opt", learner.value_opt);
  learner.lr_policy = ck.meta.at("learners").at(prefix).at("lr_policy").get<double>();
}

}  // namespace pulse

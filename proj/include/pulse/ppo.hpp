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

// Proximal policy optimization with generalized advantage estimation.
//
// Policies are diagonal Gaussians with a fixed standard deviation whose mean
// is `offset + net(normalized obs)`. The offset is supplied by the
// environment per step (a feed-forward term such as the next reference
// pose) and is stored with the transition, so log-probabilities are always
// recomputable from the buffer alone.

#ifndef PULSE_PPO_HPP_
#define PULSE_PPO_HPP_

#include <memory>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"

#include "pulse/nets.hpp"

namespace pulse {

class Env {
 public:
  virtual ~Env() = default;

  virtual int obs_dim() const = 0;
  virtual int act_dim() const = 0;

  virtual Vec reset(Rng& rng) = 0;

  struct Step {
    Vec obs;
    double reward = 0.0;
    bool done = false;      // episode over (failure or time limit)
    bool terminal = false;  // failure: no value bootstrap
  };
  virtual Step step(const Vec& action, Rng& rng) = 0;

  // Feed-forward added to the policy mean for the current observation.
  // Empty means zero.
  virtual Vec action_offset() const { return {}; }
};

struct GaussianPolicy {
  Mlp net;
  Vec log_std;
  RunningNorm norm;

  GaussianPolicy() = default;
  GaussianPolicy(int obs_dim, const std::vector<int>& hidden, int act_dim, Activation act,
                 double std);

  int obs_dim() const { return net.in_dim(); }
  int act_dim() const { return net.out_dim(); }
  Vec std() const { return log_std.array().exp().matrix(); }
  Vec mean(const Vec& obs, const Vec& offset = {}) const;
  DiagGaussian dist(const Vec& obs, const Vec& offset = {}) const;
};

struct Transition {
  Vec obs;          // raw observation
  Vec net_obs;      // normalized observation the networks saw
  Vec action;
  Vec offset;       // mean offset; empty = zero
  double log_prob = 0.0;
  double reward = 0.0;
  double value = 0.0;
  double next_value = 0.0;  // V(s_{t+1}), 0 after a terminal step
  bool done = false;
  bool terminal = false;
  bool episode_start = false;
  bool segment_end = false;  // last step of one env's contiguous segment
  // Auxiliary slots used by distillation and hierarchical control.
  Vec teacher_action;
  Vec prior_mean;
};

struct RolloutBuffer {
  std::vector<Transition> data;
  std::vector<double> episode_returns;  // completed episodes only
  std::vector<int> episode_lengths;

  int size() const { return static_cast<int>(data.size()); }
  double mean_episode_return() const;
  double mean_episode_length() const;
};

// An environment plus its in-progress episode; persists across collects.
struct EnvSlot {
  std::unique_ptr<Env> env;
  Vec obs;
  bool needs_reset = true;
  double ret = 0.0;
  int len = 0;
};

// Steps each slot in turn for a contiguous segment until `size`
// transitions exist. Divergence surfaces from the env as a terminal step.
RolloutBuffer collect(const GaussianPolicy& policy, const Mlp& value, std::vector<EnvSlot>& envs,
                      int size, Rng& rng);

struct Advantages {
  Vec adv;
  Vec ret;
};
Advantages gae(const RolloutBuffer& buffer, double gamma, double lambda);

struct PpoConfig {
  double lr_policy = 2e-5;
  double lr_value = 2e-5;
  double clip = 0.2;
  int epochs = 4;
  int minibatch = 512;
  int buffer = 3072;
  double gamma = 0.99;
  double lambda = 0.95;
  double value_coef = 0.5;
  double max_grad_norm = 50.0;
  bool normalize_obs = true;
  double target_kl = 0.0;  // stop epochs once mean KL exceeds it; 0 disables
  // When positive, the policy step size adapts between updates: divided by
  // 1.5 above twice this KL, multiplied by 1.5 below half of it.
  double desired_kl = 0.0;
  double lr_min = 1e-5;
  double lr_max = 1e-2;
};

void to_json(nlohmann::json& j, const PpoConfig& c);
void from_json(const nlohmann::json& j, PpoConfig& c);

// Clipped surrogate -mean(min(r A, clip(r) A)) over a batch with ratio
// r = exp(logp_new - logp_old), and its gradient with respect to each column
// of `mean`. clip_fraction counts samples with |r - 1| > clip.
struct SurrogateResult {
  double loss = 0.0;
  Mat dmean;
  double clip_fraction = 0.0;
  double ratio_mean = 0.0;
  double ratio_first = 1.0;
};
SurrogateResult surrogate_loss(const Mat& mean, const Vec& std, const Mat& actions,
                               const Vec& old_log_prob, const Vec& adv, double clip);

// 0.5 * mean((v - target)^2) and its gradient per sample.
double value_loss(const Vec& v, const Vec& target, Vec* dv);

struct PpoStats {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double kl = 0.0;             // mean KL(old || new) at the end of the update
  double clip_fraction = 0.0;
  double first_ratio_error = 0.0;  // max |r - 1| on epoch 0, minibatch 0
  double mean_return = 0.0;
  double mean_length = 0.0;
  double lr_policy = 0.0;  // step size used by this update
};

struct PpoLearner {
  GaussianPolicy policy;
  Mlp value;
  Adam policy_opt;
  Adam value_opt;
  double lr_policy = 0.0;  // current policy step size; 0 until the first update
};

PpoStats ppo_update(PpoLearner& learner, const RolloutBuffer& buffer, const PpoConfig& config,
                    Rng& rng);

void write_stats_header(std::ostream& out);
void write_stats_row(std::ostream& out, long long update, long long samples, const PpoStats& s);

void save_learner(Checkpoint& ck, const std::string& prefix, const PpoLearner& learner);
void load_learner(const Checkpoint& ck, const std::string& prefix, PpoLearner& learner);

}  // namespace pulse

#endif  // PULSE_PPO_HPP_

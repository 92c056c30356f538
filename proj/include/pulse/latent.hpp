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

// Latent skill space: an encoder over (proprioception, imitation goal), a
// proprioception-conditioned prior and a decoder from (proprioception, z) to
// PD targets, trained by online distillation from a frozen imitator.
//
// All public functions take raw observations. The model carries a frozen
// copy of the teacher's observation normalizer; proprioception uses its
// leading block, so every network sees inputs on the teacher's scale.

#ifndef PULSE_LATENT_HPP_
#define PULSE_LATENT_HPP_

#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"

#include "pulse/imitator.hpp"

namespace pulse {

struct PulseModel {
  int latent_dim = 0;
  int proprio_dim = 0;
  int goal_dim = 0;
  Mlp encoder;  // proprio + goal -> (mean, log_std)
  Mlp decoder;  // proprio + z -> PD targets
  Mlp prior;    // proprio -> (mean, log_std)
  RunningNorm norm;  // over proprio + goal, frozen

  PulseModel() = default;
  // Random hidden layers and zero output heads, so encoder and prior start
  // at N(0, I) and the decoder at all-zero targets.
  PulseModel(int proprio_dim, int goal_dim, int act_dim, int latent_dim,
             const std::vector<int>& hidden, Activation act, Rng& rng);

  int act_dim() const { return decoder.out_dim(); }
};

DiagGaussian encode(const PulseModel& m, const Vec& proprio, const Vec& goal);
DiagGaussian prior(const PulseModel& m, const Vec& proprio);
Vec decode(const PulseModel& m, const Vec& proprio, const Vec& z);

// Deterministic student: decode(proprio, encoder mean).
MeanActor student_actor(const PulseModel& m);

void save_pulse(Checkpoint& ck, const std::string& prefix, const PulseModel& m);
void load_pulse(const Checkpoint& ck, const std::string& prefix, PulseModel& m);

// Raw-observation batch, one sample per column.
struct DistillBatch {
  Mat proprio;
  Mat goal;
  Mat prev_mean;   // encoder mean at the previous step of the same episode
  Vec has_prev;    // 0 at episode starts, else 1
  Mat teacher;     // teacher mean actions
  Mat noise;       // reparameterization noise, latent_dim x B
  int size() const { return static_cast<int>(proprio.cols()); }
};

struct DistillLoss {
  double total = 0.0;
  double action = 0.0;  // mean over samples of squared action error
  double regu = 0.0;    // mean over samples of squared latent step
  double kl = 0.0;      // mean KL(encoder || prior)
};

struct PulseGrads {
  Vec encoder;
  Vec decoder;
  Vec prior;
};

// action + alpha * regu + beta * kl with z = mean_e + std_e * noise.
// Accumulates parameter gradients into `grads` when given (sized to the
// networks on first use).
DistillLoss distill_loss(const PulseModel& m, const DistillBatch& batch, double alpha,
                         double beta, PulseGrads* grads = nullptr);

struct BetaSchedule {
  double start_value = 0.01;
  double end_value = 0.001;
  long long start_samples = 0;
  long long end_samples = 0;
};
double beta_schedule(long long samples, const BetaSchedule& s);

struct PulseConfig {
  int latent_dim = 16;
  std::vector<int> hidden{256, 128, 64};
  Activation activation = Activation::kSiLU;
  double alpha = 0.005;
  double beta_start = 0.01;
  double beta_end = 0.001;
  double beta_start_frac = 0.25;  // of max_samples
  double beta_end_frac = 0.5;
  double lr = 5e-4;
  int passes = 4;
  int minibatch = 512;
  int buffer = 3072;
  double max_grad_norm = 50.0;
  long long max_samples = 2'000'000;
  int eval_interval = 10;  // buffers
  double target_success = 1.0;
  MiningConfig mining;
  ImitationEnvConfig env;
  // Off: the prior stays N(0, I) and KL pulls the encoder toward it.
  bool learn_prior = true;
  // RL-mixing ablation: adds a PPO loss through the stochastic decoder.
  bool rl_mix = false;
  double rl_action_std = 0.05;
  PpoConfig ppo;
};

void to_json(nlohmann::json& j, const PulseConfig& c);
void from_json(const nlohmann::json& j, PulseConfig& c);

BetaSchedule beta_schedule_for(const PulseConfig& c);

struct DistillStats {
  long long update = 0;
  long long samples = 0;
  double beta = 0.0;
  DistillLoss loss;
  double latent_step = 0.0;  // mean |mean_e(t) - mean_e(t-1)| in the buffer
  double rl_loss = 0.0;
  double eval_success = -1.0;  // -1 when no evaluation ran
};

void write_distill_header(std::ostream& out);
void write_distill_row(std::ostream& out, const DistillStats& s);

// Periodic in-stage checkpoints. Episodes restart at every checkpoint
// boundary whether or not a checkpoint is written, so an interrupted and
// resumed run matches an uninterrupted one exactly.
struct DistillCheckpointing {
  std::string path;
  int every_updates = 0;       // 0 disables checkpoints
  long long stop_after = -1;   // stop once this many updates ran (testing)
};

struct PulseResult {
  PulseModel model;  // best evaluated model
  MetricsReport best_report;
  long long best_update = 0;
  std::vector<EvalRecord> evals;
  long long samples = 0;
  long long updates = 0;
  bool reached_target = false;
  bool stopped = false;  // halted by stop_after
};

// Online distillation with student rollouts, teacher mean annotation and
// hard-clip mining. Resumes from `ckpt->path` when it exists.
PulseResult train_pulse(const HumanoidModel& model, const GaussianPolicy& teacher,
                        const MotionDataset& dataset, const PulseConfig& config,
                        std::uint64_t seed, std::ostream* csv = nullptr,
                        const DistillCheckpointing* ckpt = nullptr);

// Mean |mean_e(t) - mean_e(t-1)| along deterministic student rollouts of
// every clip.
double latent_smoothness(const HumanoidModel& model, const PulseModel& m,
                         const ReferenceSet& ref, const ImitationEnvConfig& config);

}  // namespace pulse

#endif  // PULSE_LATENT_HPP_

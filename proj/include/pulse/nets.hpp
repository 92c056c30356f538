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

// Dense networks with exact backpropagation, diagonal Gaussians, Adam and a
// checkpoint container.
//
// Batches are column-major: a batch of B inputs is an (in x B) matrix. All
// parameters of an Mlp live in one flat vector so optimizers, hashing and
// checkpointing treat every network alike.

#ifndef PULSE_NETS_HPP_
#define PULSE_NETS_HPP_

#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "pulse/common.hpp"

namespace pulse {

enum class Activation { kReLU, kSiLU };

Activation activation_from_string(const std::string& name);
std::string to_string(Activation a);

constexpr double kLogStdMin = -8.0;
constexpr double kLogStdMax = 2.0;

class Mlp {
 public:
  Mlp() = default;
  // sizes = {in, hidden..., out}; every hidden layer uses `act`, the output
  // layer is linear.
  Mlp(std::vector<int> sizes, Activation act);

  int in_dim() const { return sizes_.front(); }
  int out_dim() const { return sizes_.back(); }
  int n_layers() const { return static_cast<int>(sizes_.size()) - 1; }
  int n_params() const { return static_cast<int>(params.size()); }
  const std::vector<int>& sizes() const { return sizes_; }
  Activation activation() const { return act_; }

  // Scaled-uniform hidden layers; the output layer is scaled by
  // `output_scale` (0 gives an exactly zero head).
  void init(Rng& rng, double output_scale = 1.0);

  struct Cache {
    std::vector<Mat> pre;   // per layer, pre-activation
    std::vector<Mat> post;  // per layer input; post[0] is the network input
  };

  Mat forward_batch(const Mat& x, Cache* cache = nullptr) const;
  Vec forward(const Vec& x) const;

  // Accumulates dL/dparams into `grad` (size n_params) and returns dL/dx.
  Mat backward(const Cache& cache, const Mat& dy, Vec& grad) const;

  Vec params;

 private:
  std::vector<int> sizes_;
  Activation act_ = Activation::kSiLU;
  std::vector<int> offsets_;  // start of W_l; b_l follows W_l

  Eigen::Map<const Mat> weight(int l) const;
  Eigen::Map<const Vec> bias(int l) const;
};

double silu(double x);
double silu_grad(double x);

struct DiagGaussian {
  Vec mean;
  Vec std;

  int dim() const { return static_cast<int>(mean.size()); }
  Vec log_std() const { return std.array().log().matrix(); }
  void validate() const;
};

// std = exp(clamp(log_std)).
DiagGaussian gaussian_from_log_std(const Vec& mean, const Vec& log_std);
// Derivative of exp(clamp(l)) bookkeeping: 1 inside the clamp, 0 outside.
Vec log_std_pass(const Vec& log_std);

double gaussian_logpdf(const DiagGaussian& d, const Vec& x);
double kl_diag_gaussian(const DiagGaussian& a, const DiagGaussian& b);

struct KlGrad {
  Vec mean_a, log_std_a, mean_b, log_std_b;
};
KlGrad kl_diag_gaussian_grad(const DiagGaussian& a, const DiagGaussian& b);

struct Sample {
  Vec z;
  Vec noise;
};
Sample reparam_sample(const DiagGaussian& d, Rng& rng);
Vec standard_normal(int n, Rng& rng);

// Throws NumericalError naming `block` when any entry is non-finite.
void check_finite(const Vec& v, const std::string& block);

// Scales `grad` in place so its L2 norm is at most `max_norm`; returns the
// norm before clipping.
double clip_grad_norm(Vec& grad, double max_norm);

class Adam {
 public:
  Adam() = default;
  explicit Adam(int n) : m(Vec::Zero(n)), v(Vec::Zero(n)) {}

  void step(Vec& params, const Vec& grad, double lr);

  Vec m;
  Vec v;
  long long t = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Running per-dimension mean and variance of observations. Stats change
// only through update(), which callers invoke between rollouts so stored
// log-probabilities stay valid for the update that follows.
struct RunningNorm {
  Vec mean;
  Vec var;
  double count = 0.0;
  double clip = 10.0;

  RunningNorm() = default;
  explicit RunningNorm(int n) : mean(Vec::Zero(n)), var(Vec::Ones(n)) {}

  int dim() const { return static_cast<int>(mean.size()); }
  void update(const Mat& batch);  // columns are samples
  Vec apply(const Vec& x) const;
  Mat apply_batch(const Mat& x) const;
  // Restriction to the leading `n` dimensions.
  RunningNorm head(int n) const;
};

// Named parameter blocks plus free-form JSON metadata. Doubles are stored
// as 16-digit hex of their bit pattern, so save/load is bit-exact.
struct Checkpoint {
  std::map<std::string, Vec> blocks;
  nlohmann::json meta = nlohmann::json::object();

  void put(const std::string& name, const Mlp& net);
  void put(const std::string& name, const Adam& opt);
  void get(const std::string& name, Mlp& net) const;
  void get(const std::string& name, Adam& opt) const;
  void put(const std::string& name, const RunningNorm& norm);
  void get(const std::string& name, RunningNorm& norm) const;
  const Vec& block(const std::string& name) const;

  nlohmann::json to_json() const;
  static Checkpoint from_json(const nlohmann::json& j);
  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);
};

std::string encode_doubles(const Vec& v);
Vec decode_doubles(const std::string& hex);

std::string rng_state(const Rng& rng);
void set_rng_state(Rng& rng, const std::string& state);

}  // namespace pulse

#endif  // PULSE_NETS_HPP_

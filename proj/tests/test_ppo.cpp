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
#include <sstream>

#include "doctest.h"
#include "pulse/ppo.hpp"

using namespace pulse;

namespace {

// One-step episodes; reward -(a - 2)^2.
class Bandit : public Env {
 public:
  int obs_dim() const override { return 1; }
  int act_dim() const override { return 1; }
  Vec reset(Rng&) override { return Vec::Ones(1); }
  Step step(const Vec& a, Rng&) override {
    return {Vec::Ones(1), -(a[0] - 2.0) * (a[0] - 2.0), true, true};
  }
};

// Counter env: observation is the step index; fails after `horizon` steps
// and reports a fresh random start on every reset.
class Counter : public Env {
 public:
  explicit Counter(int horizon) : horizon_(horizon) {}
  int obs_dim() const override { return 2; }
  int act_dim() const override { return 2; }
  Vec reset(Rng& rng) override {
    t_ = 0;
    start_ = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    return obs();
  }
  Step step(const Vec& a, Rng&) override {
    ++t_;
    return {obs(), a.sum(), t_ >= horizon_, t_ >= horizon_};
  }
  Vec action_offset() const override { return Vec::Constant(2, 0.5); }

 private:
  Vec obs() const { return Vec{{static_cast<double>(t_), start_}}; }
  int horizon_;
  int t_ = 0;
  double start_ = 0.0;
};

PpoLearner make_learner(int obs, int act, double std, Rng& rng) {
  PpoLearner l;
  l.policy = GaussianPolicy(obs, {16, 16}, act, Activation::kSiLU, std);
  l.policy.net.init(rng, 0.1);
  l.value = Mlp({obs, 16, 16, 1}, Activation::kSiLU);
  l.value.init(rng);
  return l;
}

std::vector<EnvSlot> slots(int n, int horizon) {
  std::vector<EnvSlot> s(n);
  for (auto& e : s) e.env = std::make_unique<Counter>(horizon);
  return s;
}

Transition tr(double r, double v, double next_v, bool done) {
  Transition t;
  t.reward = r;
  t.value = v;
  t.next_value = done ? 0.0 : next_v;
  t.done = t.terminal = done;
  return t;
}

}  // namespace

TEST_CASE("collect") {
  Rng rng(1);
  PpoLearner l = make_learner(2, 2, 0.3, rng);
  SUBCASE("empty request") {
    auto envs = slots(1, 5);
    CHECK(collect(l.policy, l.value, envs, 0, rng).size() == 0);
  }
  SUBCASE("seeded collection is reproducible") {
    auto e1 = slots(2, 7), e2 = slots(2, 7);
    Rng r1(5), r2(5);
    const RolloutBuffer a = collect(l.policy, l.value, e1, 40, r1);
    const RolloutBuffer b = collect(l.policy, l.value, e2, 40, r2);
    REQUIRE(a.size() == 40);
    for (int i = 0; i < 40; ++i) {
      CHECK(a.data[i].action == b.data[i].action);
      CHECK(a.data[i].log_prob == b.data[i].log_prob);
      CHECK(a.data[i].obs == b.data[i].obs);
    }
  }
  SUBCASE("termination starts a fresh episode") {
    auto envs = slots(1, 4);
    const RolloutBuffer b = collect(l.policy, l.value, envs, 12, rng);
    for (int i = 0; i < 12; ++i) {
      CHECK(b.data[i].episode_start == (i % 4 == 0));
      CHECK(b.data[i].done == (i % 4 == 3));
      CHECK(b.data[i].obs[0] == i % 4);
      if (i % 4 == 3) {
        CHECK(b.data[i].next_value == 0.0);
        if (i + 1 < 12) CHECK(b.data[i + 1].obs[1] != b.data[i].obs[1]);
      } else {
        CHECK(b.data[i].next_value == b.data[i + 1].value);
      }
      // Offset is part of the recorded mean.
      const DiagGaussian d = l.policy.dist(b.data[i].obs, b.data[i].offset);
      CHECK(gaussian_logpdf(d, b.data[i].action) == doctest::Approx(b.data[i].log_prob).epsilon(1e-12));
    }
    CHECK(b.episode_returns.size() == 3);
    CHECK(b.episode_lengths == std::vector<int>{4, 4, 4});
  }
  SUBCASE("episodes continue across collects") {
    auto envs = slots(1, 5);
    const RolloutBuffer a = collect(l.policy, l.value, envs, 3, rng);
    const RolloutBuffer b = collect(l.policy, l.value, envs, 3, rng);
    CHECK(a.data.back().segment_end);
    CHECK_FALSE(b.data[0].episode_start);
    CHECK(b.data[0].obs[0] == 3.0);
    CHECK(b.data[2].episode_start);
  }
}

TEST_CASE("generalized advantage estimation") {
  RolloutBuffer b;
  b.data = {tr(1.0, 0.5, 0.2, false), tr(-0.5, 0.2, 0.9, false), tr(2.0, 0.9, 0.0, true),
            tr(0.3, 0.1, 0.4, false), tr(0.7, 0.4, 0.6, false)};
  b.data[4].segment_end = true;
  SUBCASE("lambda 0 is one-step TD") {
    const Advantages a = gae(b, 0.9, 0.0);
    for (int t = 0; t < 5; ++t) {
      const auto& x = b.data[t];
      CHECK(a.adv[t] == x.reward + 0.9 * x.next_value * (x.done ? 0.0 : 1.0) - x.value);
      CHECK(a.ret[t] == doctest::Approx(a.adv[t] + x.value).epsilon(1e-15));
    }
  }
  SUBCASE("lambda 1, gamma 1, zero values gives reward-to-go") {
    RolloutBuffer z = b;
    for (auto& x : z.data) x.value = x.next_value = 0.0;
    const Advantages a = gae(z, 1.0, 1.0);
    CHECK(a.adv[0] == doctest::Approx(2.5));
    CHECK(a.adv[1] == doctest::Approx(1.5));
    CHECK(a.adv[2] == doctest::Approx(2.0));
    CHECK(a.adv[3] == doctest::Approx(1.0));
    CHECK(a.adv[4] == doctest::Approx(0.7));
  }
  SUBCASE("random episode against direct summation") {
    Rng rng(4);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int trial = 0; trial < 20; ++trial) {
      RolloutBuffer e;
      Vec v(6);
      for (int i = 0; i < 6; ++i) v[i] = u(rng);
      for (int t = 0; t < 5; ++t) e.data.push_back(tr(u(rng), v[t], v[t + 1], t == 4 && trial % 2));
      const double g = 0.97, lam = 0.9;
      const Advantages a = gae(e, g, lam);
      for (int t = 0; t < 5; ++t) {
        double sum = 0.0;
        for (int l = 0; t + l < 5; ++l) {
          const auto& x = e.data[t + l];
          sum += std::pow(g * lam, l) * (x.reward + g * x.next_value - x.value);
        }
        CHECK(std::abs(a.adv[t] - sum) < 1e-12);
      }
    }
  }
}

TEST_CASE("surrogate and value losses") {
  Rng rng(8);
  const int act = 3, b = 6;
  const Mat mean = Mat::Random(act, b);
  const Vec std = Vec::Constant(act, 0.4);
  Mat actions = mean + 0.3 * Mat::Random(act, b);
  Vec old_lp(b), adv = Vec::Random(b);
  for (int i = 0; i < b; ++i) old_lp[i] = gaussian_logpdf({mean.col(i), std}, actions.col(i));

  SUBCASE("ratio one gives minus the mean advantage") {
    const SurrogateResult s = surrogate_loss(mean, std, actions, old_lp, adv, 0.2);
    CHECK(s.loss == doctest::Approx(-adv.mean()).epsilon(1e-12));
    CHECK(s.clip_fraction == 0.0);
    CHECK(s.ratio_mean == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("gradients match finite differences") {
    for (int trial = 0; trial < 50; ++trial) {
      Mat m = mean + 0.2 * Mat::Random(act, b);
      const SurrogateResult s = surrogate_loss(m, std, actions, old_lp, adv, 0.2);
      CHECK(s.clip_fraction >= 0.0);
      CHECK(s.clip_fraction <= 1.0);
      const double h = 1e-6;
      for (int k = 0; k < m.size(); ++k) {
        Mat up = m, down = m;
        up.data()[k] += h;
        down.data()[k] -= h;
        const double fd = (surrogate_loss(up, std, actions, old_lp, adv, 0.2).loss -
                           surrogate_loss(down, std, actions, old_lp, adv, 0.2).loss) /
                          (2 * h);
        const double g = s.dmean.data()[k];
        // Skip the measure-zero kinks where the clip switches branch.
        const SurrogateResult su = surrogate_loss(up, std, actions, old_lp, adv, 0.2);
        const SurrogateResult sd = surrogate_loss(down, std, actions, old_lp, adv, 0.2);
        if (su.clip_fraction != sd.clip_fraction) continue;
        CHECK(std::abs(fd - g) <= 1e-4 * std::max(1e-6, std::abs(fd) + std::abs(g)));
      }
    }
  }
  SUBCASE("value loss") {
    const Vec v = Vec::Random(7), target = Vec::Random(7);
    Vec dv;
    const double l = value_loss(v, target, &dv);
    CHECK(l == doctest::Approx(0.5 * (v - target).squaredNorm() / 7));
    for (int k = 0; k < 7; ++k) {
      Vec up = v, down = v;
      up[k] += 1e-6;
      down[k] -= 1e-6;
      CHECK((value_loss(up, target, nullptr) - value_loss(down, target, nullptr)) / 2e-6 ==
            doctest::Approx(dv[k]).epsilon(1e-6));
    }
  }
}

TEST_CASE("ppo update bookkeeping") {
  Rng rng(3);
  PpoLearner l = make_learner(2, 2, 0.3, rng);
  auto envs = slots(2, 6);
  PpoConfig cfg;
  cfg.lr_policy = cfg.lr_value = 1e-3;
  cfg.minibatch = 16;
  const RolloutBuffer buf = collect(l.policy, l.value, envs, 64, rng);

  SUBCASE("first ratios are one and stats are sane") {
    const PpoStats s = ppo_update(l, buf, cfg, rng);
    CHECK(s.first_ratio_error < 1e-6);
    CHECK(s.clip_fraction >= 0.0);
    CHECK(s.clip_fraction <= 1.0);
    CHECK(std::isfinite(s.kl));
    CHECK(s.kl >= 0.0);
    std::ostringstream csv;
    write_stats_header(csv);
    write_stats_row(csv, 1, 64, s);
    CHECK(csv.str().find("update,samples") == 0);
  }
  SUBCASE("zero advantages leave the policy untouched") {
    RolloutBuffer flat = buf;
    for (auto& t : flat.data) {
      t.reward = 0.0;
      t.value = t.next_value = 0.0;
    }
    const Vec before = l.policy.net.params;
    cfg.normalize_obs = false;
    ppo_update(l, flat, cfg, rng);
    CHECK(l.policy.net.params == before);
  }
}

TEST_CASE("adaptive step size follows the KL band") {
  Rng rng(5);
  PpoLearner l = make_learner(2, 2, 0.3, rng);
  auto envs = slots(2, 6);
  const RolloutBuffer buf = collect(l.policy, l.value, envs, 64, rng);
  PpoConfig cfg;
  cfg.minibatch = 16;
  cfg.lr_policy = 1e-2;
  cfg.desired_kl = 1e-9;  // any real step overshoots
  PpoLearner big = l;
  const PpoStats s = ppo_update(big, buf, cfg, rng);
  CHECK(s.lr_policy == 1e-2);
  CHECK(s.kl > 2.0 * cfg.desired_kl);
  CHECK(big.lr_policy == doctest::Approx(1e-2 / 1.5));

  cfg.desired_kl = 1e9;  // nothing reaches half of it
  cfg.lr_policy = 1e-4;
  PpoLearner small = l;
  ppo_update(small, buf, cfg, rng);
  CHECK(small.lr_policy == doctest::Approx(1.5e-4));
  cfg.lr_max = 1.2e-4;
  small.lr_policy = 0.0;
  ppo_update(small, buf, cfg, rng);
  CHECK(small.lr_policy == 1.2e-4);

  cfg.desired_kl = 0.0;  // fixed step size
  PpoLearner fixed = l;
  ppo_update(fixed, buf, cfg, rng);
  CHECK(fixed.lr_policy == cfg.lr_policy);
}

TEST_CASE("bandit converges to the optimum") {
  Rng rng(12);
  PpoLearner l;
  l.policy = GaussianPolicy(1, {8}, 1, Activation::kSiLU, 0.5);
  l.policy.net.init(rng, 0.1);
  l.value = Mlp({1, 8, 1}, Activation::kSiLU);
  l.value.init(rng);
  std::vector<EnvSlot> envs(1);
  envs[0].env = std::make_unique<Bandit>();
  PpoConfig cfg;
  cfg.lr_policy = 1e-2;
  cfg.lr_value = 1e-2;
  cfg.buffer = 64;
  cfg.minibatch = 32;
  cfg.normalize_obs = false;
  for (int u = 0; u < 200; ++u) {
    const RolloutBuffer b = collect(l.policy, l.value, envs, cfg.buffer, rng);
    ppo_update(l, b, cfg, rng);
  }
  CHECK(std::abs(l.policy.mean(Vec::Ones(1))[0] - 2.0) < 0.1);
}

TEST_CASE("learner checkpoint round trip") {
  Rng rng(2);
  PpoLearner l = make_learner(2, 2, 0.3, rng);
  auto envs = slots(1, 6);
  PpoConfig cfg;
  cfg.minibatch = 8;
  ppo_update(l, collect(l.policy, l.value, envs, 32, rng), cfg, rng);
  Checkpoint ck;
  save_learner(ck, "imitator", l);
  PpoLearner back;
  load_learner(Checkpoint::from_json(ck.to_json()), "imitator", back);
  CHECK(back.policy.net.params == l.policy.net.params);
  CHECK(back.policy.norm.mean == l.policy.norm.mean);
  CHECK(back.policy.norm.count == l.policy.norm.count);
  CHECK(back.value_opt.v == l.value_opt.v);
  CHECK(back.policy.log_std == l.policy.log_std);
  CHECK(back.lr_policy == l.lr_policy);
}

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
#include <filesystem>
#include <functional>

#include "doctest.h"
#include "pulse/nets.hpp"

using namespace pulse;

namespace {

Vec random_vec(int n, Rng& rng, double scale = 1.0) {
  std::uniform_real_distribution<double> u(-scale, scale);
  Vec v(n);
  for (int i = 0; i < n; ++i) v[i] = u(rng);
  return v;
}

// Largest relative error between an analytic gradient and central
// differences of `loss` in params (h = 1e-5), with a floor on the scale.
double fd_rel_error(Vec& params, const Vec& grad, const std::function<double()>& loss) {
  constexpr double h = 1e-5;
  double worst = 0.0;
  for (Eigen::Index i = 0; i < params.size(); ++i) {
    const double keep = params[i];
    params[i] = keep + h;
    const double up = loss();
    params[i] = keep - h;
    const double down = loss();
    params[i] = keep;
    const double fd = (up - down) / (2.0 * h);
    worst = std::max(worst, std::abs(fd - grad[i]) / std::max(1e-6, std::abs(fd) + std::abs(grad[i])));
  }
  return worst;
}

}  // namespace

TEST_CASE("forward pass basics") {
  SUBCASE("zero network gives zero") {
    Mlp net({4, 8, 3}, Activation::kSiLU);
    CHECK(net.forward(Vec::Ones(4)).isZero(0.0));
  }
  SUBCASE("relu and silu on a 1x1 identity hidden layer") {
    Mlp relu({1, 1, 1}, Activation::kReLU);
    relu.params << 1.0, 0.0, 1.0, 0.0;  // W1, b1, W2, b2
    CHECK(relu.forward(Vec::Constant(1, -3.0))[0] == 0.0);
    CHECK(relu.forward(Vec::Constant(1, 2.0))[0] == 2.0);
    Mlp s({1, 1, 1}, Activation::kSiLU);
    s.params = relu.params;
    CHECK(s.forward(Vec::Constant(1, 1.0))[0] == doctest::Approx(0.7310585786300049).epsilon(1e-15));
  }
  SUBCASE("dimension mismatch and non-finite output") {
    Mlp net({3, 2}, Activation::kReLU);
    CHECK_THROWS_AS(net.forward(Vec::Zero(4)), DimensionError);
    net.params[0] = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(net.forward(Vec::Ones(3)), NumericalError);
  }
  SUBCASE("batched forward equals per-column forward bit for bit") {
    Rng rng(3);
    Mlp net({5, 16, 16, 4}, Activation::kSiLU);
    net.init(rng);
    Mat x = Mat::Random(5, 7);
    const Mat y = net.forward_batch(x);
    for (int c = 0; c < 7; ++c) CHECK((net.forward(Vec(x.col(c))) - y.col(c)).norm() < 1e-14);
    CHECK(net.forward_batch(x) == y);
  }
  SUBCASE("zero output scale gives an exactly zero head") {
    Rng rng(1);
    Mlp net({6, 32, 32, 4}, Activation::kSiLU);
    net.init(rng, 0.0);
    CHECK(net.forward(random_vec(6, rng)).isZero(0.0));
  }
}

TEST_CASE("gaussian log-density") {
  DiagGaussian std1{Vec::Zero(1), Vec::Ones(1)};
  CHECK(gaussian_logpdf(std1, Vec::Zero(1)) == doctest::Approx(-0.9189385332046727).epsilon(1e-15));

  Rng rng(11);
  std::uniform_real_distribution<double> u(0.1, 3.0);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 1 + trial % 7;
    DiagGaussian d{random_vec(n, rng, 2.0), Vec(n)};
    for (int i = 0; i < n; ++i) d.std[i] = u(rng);
    const Vec x = random_vec(n, rng, 4.0);
    // Extended-precision oracle.
    long double ref = 0.0L;
    for (int i = 0; i < n; ++i) {
      const long double r = (static_cast<long double>(x[i]) - d.mean[i]) / d.std[i];
      ref += -0.5L * r * r - std::log(static_cast<long double>(d.std[i])) -
             0.5L * std::log(2.0L * 3.14159265358979323846264338327950288L);
    }
    const double got = gaussian_logpdf(d, x);
    CHECK(std::abs(got - static_cast<double>(ref)) <= 1e-12 * std::abs(static_cast<double>(ref)));
    // Mean is the mode.
    CHECK(gaussian_logpdf(d, d.mean) >= got);
    CHECK(gaussian_logpdf(d, d.mean) ==
          doctest::Approx(-(d.std.array().log() + 0.9189385332046727).sum()).epsilon(1e-14));
  }
}

TEST_CASE("closed-form KL") {
  DiagGaussian a{Vec::Zero(1), Vec::Ones(1)}, b{Vec::Ones(1), Vec::Ones(1)};
  CHECK(kl_diag_gaussian(a, b) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(kl_diag_gaussian(a, a) == 0.0);

  Rng rng(5);
  std::uniform_real_distribution<double> u(0.5, 1.5);
  for (int pair = 0; pair < 20; ++pair) {
    const int n = 1 + pair % 3;
    DiagGaussian p{random_vec(n, rng), Vec(n)}, q{random_vec(n, rng), Vec(n)};
    for (int i = 0; i < n; ++i) {
      p.std[i] = u(rng);
      q.std[i] = u(rng);
    }
    CHECK(kl_diag_gaussian(p, p) == 0.0);
    const double kl = kl_diag_gaussian(p, q);
    CHECK(kl >= 0.0);
    // Monte-Carlo oracle: E_p[log p - log q].
    constexpr int kN = 1000000;
    double sum = 0.0, sum2 = 0.0;
    for (int s = 0; s < kN; ++s) {
      const Vec x = reparam_sample(p, rng).z;
      const double r = gaussian_logpdf(p, x) - gaussian_logpdf(q, x);
      sum += r;
      sum2 += r * r;
    }
    const double mean = sum / kN;
    const double se = std::sqrt((sum2 / kN - mean * mean) / kN);
    CHECK(std::abs(mean - kl) < 3.0 * se + 1e-12);
  }
}

TEST_CASE("KL gradients match finite differences and vanish at a = b") {
  Rng rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 3;
    Vec p(4 * n);
    p << random_vec(n, rng), random_vec(n, rng, 0.7), random_vec(n, rng), random_vec(n, rng, 0.7);
    auto split = [&](const Vec& v) {
      return std::pair{gaussian_from_log_std(v.segment(0, n), v.segment(n, n)),
                       gaussian_from_log_std(v.segment(2 * n, n), v.segment(3 * n, n))};
    };
    const auto [a, b] = split(p);
    const KlGrad g = kl_diag_gaussian_grad(a, b);
    Vec grad(4 * n);
    grad << g.mean_a, g.log_std_a, g.mean_b, g.log_std_b;
    CHECK(fd_rel_error(p, grad, [&] {
            const auto [x, y] = split(p);
            return kl_diag_gaussian(x, y);
          }) < 1e-4);
    const KlGrad self = kl_diag_gaussian_grad(a, a);
    CHECK(self.mean_a.isZero(0.0));
    CHECK(self.log_std_a.isZero(0.0));
  }
}

TEST_CASE("reparameterized sampling") {
  Rng rng(2);
  DiagGaussian degenerate{Vec::Constant(3, 1.5), Vec::Zero(3)};
  for (int i = 0; i < 10; ++i) CHECK(reparam_sample(degenerate, rng).z == degenerate.mean);

  DiagGaussian d{Vec(2), Vec(2)};
  d.mean << 0.3, -2.0;
  d.std << 0.5, 2.0;
  constexpr int kN = 100000;
  Vec acc = Vec::Zero(2);
  for (int i = 0; i < kN; ++i) {
    const Sample s = reparam_sample(d, rng);
    CHECK((s.z - (d.mean + d.std.cwiseProduct(s.noise))).norm() == 0.0);
    acc += s.z;
  }
  acc /= kN;
  for (int i = 0; i < 2; ++i) CHECK(std::abs(acc[i] - d.mean[i]) < 4.0 * d.std[i] / std::sqrt(kN));

  Rng r1(77), r2(77);
  CHECK(reparam_sample(d, r1).z == reparam_sample(d, r2).z);
}

TEST_CASE("log-std clamp keeps sigma inside its bounds") {
  Vec l(4);
  l << -20.0, -8.0, 2.0, 9.0;
  const DiagGaussian d = gaussian_from_log_std(Vec::Zero(4), l);
  CHECK(d.std[0] == std::exp(kLogStdMin));
  CHECK(d.std[3] == std::exp(kLogStdMax));
  const Vec pass = log_std_pass(l);
  CHECK(pass[0] == 0.0);
  CHECK(pass[1] == 1.0);
  CHECK(pass[3] == 0.0);
}

TEST_CASE("backpropagation matches finite differences") {
  Rng rng(13);
  SUBCASE("half squared norm at zero parameters has zero gradient") {
    Mlp net({3, 8, 2}, Activation::kSiLU);
    Mlp::Cache cache;
    const Mat y = net.forward_batch(Mat(random_vec(3, rng)), &cache);
    Vec grad = Vec::Zero(net.n_params());
    net.backward(cache, y, grad);
    CHECK(grad.isZero(0.0));
  }
  SUBCASE("two-layer silu, 50 random cases") {
    for (int trial = 0; trial < 50; ++trial) {
      Mlp net({4, 6, 3}, Activation::kSiLU);
      net.init(rng);
      net.params += 0.1 * random_vec(net.n_params(), rng);
      const Mat x = Mat::Random(4, 3);
      const Mat w = Mat::Random(3, 3);
      auto loss = [&] { return 0.5 * (net.forward_batch(x).array() * w.array()).square().sum(); };
      Mlp::Cache cache;
      const Mat y = net.forward_batch(x, &cache);
      Vec grad = Vec::Zero(net.n_params());
      net.backward(cache, (y.array() * w.array().square()).matrix(), grad);
      CHECK(fd_rel_error(net.params, grad, loss) < 1e-4);
    }
  }
  SUBCASE("input gradient") {
    Mlp net({5, 7, 7, 2}, Activation::kSiLU);
    net.init(rng);
    Vec x = random_vec(5, rng);
    Mlp::Cache cache;
    net.forward_batch(Mat(x), &cache);
    Vec grad = Vec::Zero(net.n_params());
    const Vec dx = net.backward(cache, Mat::Ones(2, 1), grad).col(0);
    CHECK(fd_rel_error(x, dx, [&] { return net.forward(x).sum(); }) < 1e-4);
  }
  SUBCASE("gaussian head log-likelihood through a relu net") {
    // Output = (mean, log std); loss = -log N(target; mean, exp(clamp(log std))).
    Mlp net({3, 10, 10, 4}, Activation::kReLU);
    net.init(rng);
    const Vec x = random_vec(3, rng), target = random_vec(2, rng);
    auto loss = [&] {
      const Vec y = net.forward(x);
      return -gaussian_logpdf(gaussian_from_log_std(y.head(2), y.tail(2)), target);
    };
    Mlp::Cache cache;
    const Vec y = net.forward_batch(Mat(x), &cache).col(0);
    const DiagGaussian d = gaussian_from_log_std(y.head(2), y.tail(2));
    const Vec r = (target - d.mean).cwiseQuotient(d.std);
    Vec dy(4);
    dy << -r.cwiseQuotient(d.std), (1.0 - r.array().square()).matrix().cwiseProduct(log_std_pass(y.tail(2)));
    Vec grad = Vec::Zero(net.n_params());
    net.backward(cache, Mat(dy), grad);
    CHECK(fd_rel_error(net.params, grad, loss) < 1e-4);
  }
}

TEST_CASE("adam") {
  SUBCASE("zero gradient leaves parameters unchanged") {
    Adam opt(3);
    Vec p = Vec::Constant(3, 0.7);
    opt.step(p, Vec::Zero(3), 0.1);
    CHECK(p == Vec::Constant(3, 0.7));
    CHECK(opt.t == 1);
  }
  SUBCASE("first step moves each coordinate by about lr") {
    Adam opt(4);
    Vec p = Vec::Zero(4);
    Vec g(4);
    g << 3.0, -0.2, 50.0, -7.0;
    opt.step(p, g, 1e-3);
    for (int i = 0; i < 4; ++i) CHECK(std::abs(std::abs(p[i]) - 1e-3) < 1e-9);
  }
  SUBCASE("two-step scalar trace") {
    Adam opt(1);
    Vec p = Vec::Constant(1, 0.5);
    opt.step(p, Vec::Constant(1, 1.0), 0.1);
    CHECK(p[0] == doctest::Approx(0.4000000009999999).epsilon(1e-14));
    opt.step(p, Vec::Constant(1, 2.0), 0.1);
    CHECK(p[0] == doctest::Approx(0.30348179902816613).epsilon(1e-14));
  }
}

TEST_CASE("gradient norm clipping") {
  Vec g(2);
  g << 30.0, 40.0;
  CHECK(clip_grad_norm(g, 50.0) == 50.0);
  CHECK(g.norm() == doctest::Approx(50.0));
  CHECK(clip_grad_norm(g, 5.0) == doctest::Approx(50.0));
  CHECK(g.norm() == doctest::Approx(5.0));
}

TEST_CASE("checkpoint round trip is bit exact") {
  Rng rng(21);
  Mlp net({7, 12, 3}, Activation::kReLU);
  net.init(rng);
  net.params[0] = 1.0 / 3.0;
  net.params[1] = -0.0;
  net.params[2] = 5e-324;
  Adam opt(net.n_params());
  opt.step(net.params, random_vec(net.n_params(), rng), 1e-3);
  rng();

  Checkpoint ck;
  ck.put("policy", net);
  ck.put("policy_opt", opt);
  ck.meta["rng"] = rng_state(rng);
  const auto path = (std::filesystem::temp_directory_path() / "pulse_test_ckpt.json").string();
  ck.save(path);

  const Checkpoint back = Checkpoint::load(path);
  Mlp net2;
  Adam opt2;
  back.get("policy", net2);
  back.get("policy_opt", opt2);
  CHECK(net2.sizes() == net.sizes());
  CHECK(net2.activation() == Activation::kReLU);
  CHECK(std::memcmp(net2.params.data(), net.params.data(), sizeof(double) * net.n_params()) == 0);
  CHECK(opt2.m == opt.m);
  CHECK(opt2.v == opt.v);
  CHECK(opt2.t == opt.t);
  Rng rng2;
  set_rng_state(rng2, back.meta["rng"].get<std::string>());
  CHECK(rng2() == rng());
  std::filesystem::remove(path);

  CHECK_THROWS(Checkpoint::from_json({{"format", "other"}}));
}

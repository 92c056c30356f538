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

#include "pulse/nets.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace pulse {

Activation activation_from_string(const std::string& name) {
  if (name == "relu") return Activation::kReLU;
  if (name == "silu") return Activation::kSiLU;
  throw std::invalid_argument("unknown activation: " + name);
}

std::string to_string(Activation a) { return a == Activation::kReLU ? "relu" : "silu"; }

double silu(double x) { return x / (1.0 + std::exp(-x)); }

double silu_grad(double x) {
  const double s = 1.0 / (1.0 + std::exp(-x));
  return s * (1.0 + x * (1.0 - s));
}

Mlp::Mlp(std::vector<int> sizes, Activation act) : sizes_(std::move(sizes)), act_(act) {
  if (sizes_.size() < 2) throw std::invalid_argument("Mlp needs at least input and output sizes");
  int n = 0;
  for (size_t l = 0; l + 1 < sizes_.size(); ++l) {
    if (sizes_[l] <= 0 || sizes_[l + 1] <= 0) throw std::invalid_argument("Mlp layer sizes must be > 0");
    offsets_.push_back(n);
    n += sizes_[l] * sizes_[l + 1] + sizes_[l + 1];
  }
  params = Vec::Zero(n);
}

Eigen::Map<const Mat> Mlp::weight(int l) const {
  return {params.data() + offsets_[l], sizes_[l + 1], sizes_[l]};
}

Eigen::Map<const Vec> Mlp::bias(int l) const {
  return {params.data() + offsets_[l] + sizes_[l + 1] * sizes_[l], sizes_[l + 1]};
}

void Mlp::init(Rng& rng, double output_scale) {
  for (int l = 0; l < n_layers(); ++l) {
    const double bound = std::sqrt(6.0 / (sizes_[l] + sizes_[l + 1])) *
                         (l + 1 == n_layers() ? output_scale : 1.0);
    std::uniform_real_distribution<double> u(-bound, bound);
    double* w = params.data() + offsets_[l];
    for (int i = 0; i < sizes_[l] * sizes_[l + 1]; ++i) w[i] = bound == 0.0 ? 0.0 : u(rng);
    for (int i = 0; i < sizes_[l + 1]; ++i) w[sizes_[l] * sizes_[l + 1] + i] = 0.0;
  }
}

Mat Mlp::forward_batch(const Mat& x, Cache* cache) const {
  check_dim(x.rows(), in_dim(), "Mlp input");
  if (cache) {
    cache->pre.resize(n_layers());
    cache->post.resize(n_layers());
  }
  Mat h = x;
  for (int l = 0; l < n_layers(); ++l) {
    Mat z = weight(l) * h;
    z.colwise() += bias(l);
    if (cache) cache->post[l] = std::move(h);
    if (l + 1 < n_layers()) {
      h = act_ == Activation::kReLU ? z.cwiseMax(0.0).eval() : z.unaryExpr(&silu).eval();
    } else {
      h = z;
    }
    if (cache) cache->pre[l] = std::move(z);
  }
  if (!h.allFinite()) throw NumericalError("Mlp forward produced a non-finite output");
  return h;
}

Vec Mlp::forward(const Vec& x) const { return forward_batch(x).col(0); }

Mat Mlp::backward(const Cache& cache, const Mat& dy, Vec& grad) const {
  check_dim(grad.size(), n_params(), "Mlp gradient");
  check_dim(dy.rows(), out_dim(), "Mlp output gradient");
  Mat d = dy;
  for (int l = n_layers() - 1; l >= 0; --l) {
    if (l + 1 < n_layers()) {
      const Mat& z = cache.pre[l];
      if (act_ == Activation::kReLU) {
        d.array() *= (z.array() > 0.0).cast<double>();
      } else {
        d.array() *= z.unaryExpr(&silu_grad).array();
      }
    }
    Eigen::Map<Mat> gw(grad.data() + offsets_[l], sizes_[l + 1], sizes_[l]);
    Eigen::Map<Vec> gb(grad.data() + offsets_[l] + sizes_[l + 1] * sizes_[l], sizes_[l + 1]);
    gw.noalias() += d * cache.post[l].transpose();
    gb += d.rowwise().sum();
    d = weight(l).transpose() * d;
  }
  return d;
}

void DiagGaussian::validate() const {
  check_dim(std.size(), mean.size(), "DiagGaussian std");
  if (!mean.allFinite() || !std.allFinite() || (std.array() <= 0.0).any()) {
    throw NumericalError("DiagGaussian needs finite mean and positive finite std");
  }
}

DiagGaussian gaussian_from_log_std(const Vec& mean, const Vec& log_std) {
  check_dim(log_std.size(), mean.size(), "gaussian_from_log_std");
  return {mean, log_std.cwiseMax(kLogStdMin).cwiseMin(kLogStdMax).array().exp().matrix()};
}

Vec log_std_pass(const Vec& log_std) {
  return ((log_std.array() >= kLogStdMin) && (log_std.array() <= kLogStdMax)).cast<double>().matrix();
}

double gaussian_logpdf(const DiagGaussian& d, const Vec& x) {
  check_dim(x.size(), d.dim(), "gaussian_logpdf");
  constexpr double kHalfLog2Pi = 0.91893853320467274178;
  const auto r = ((x - d.mean).array() / d.std.array());
  return -(0.5 * r.square() + d.std.array().log() + kHalfLog2Pi).sum();
}

double kl_diag_gaussian(const DiagGaussian& a, const DiagGaussian& b) {
  check_dim(b.dim(), a.dim(), "kl_diag_gaussian");
  const auto va = a.std.array().square(), vb = b.std.array().square();
  return ((b.std.array() / a.std.array()).log() +
          (va + (a.mean - b.mean).array().square()) / (2.0 * vb) - 0.5)
      .sum();
}

KlGrad kl_diag_gaussian_grad(const DiagGaussian& a, const DiagGaussian& b) {
  check_dim(b.dim(), a.dim(), "kl_diag_gaussian_grad");
  const Vec vb = b.std.array().square();
  const Vec ratio = a.std.array().square() / vb.array();
  const Vec diff = a.mean - b.mean;
  KlGrad g;
  g.mean_a = diff.array() / vb.array();
  g.mean_b = -g.mean_a;
  g.log_std_a = ratio.array() - 1.0;
  g.log_std_b = 1.0 - ratio.array() - diff.array().square() / vb.array();
  return g;
}

Vec standard_normal(int n, Rng& rng) {
  std::normal_distribution<double> nd(0.0, 1.0);
  Vec e(n);
  for (int i = 0; i < n; ++i) e[i] = nd(rng);
  return e;
}

Sample reparam_sample(const DiagGaussian& d, Rng& rng) {
  Sample s;
  s.noise = standard_normal(d.dim(), rng);
  s.z = d.mean + d.std.cwiseProduct(s.noise);
  return s;
}

void check_finite(const Vec& v, const std::string& block) {
  if (!v.allFinite()) throw NumericalError("non-finite values in " + block);
}

double clip_grad_norm(Vec& grad, double max_norm) {
  const double norm = grad.norm();
  if (norm > max_norm && norm > 0.0) grad *= max_norm / norm;
  return norm;
}

void Adam::step(Vec& params, const Vec& grad, double lr) {
  check_dim(grad.size(), params.size(), "Adam gradient");
  if (m.size() != params.size()) {
    m = Vec::Zero(params.size());
    v = Vec::Zero(params.size());
  }
  ++t;
  m = beta1 * m + (1.0 - beta1) * grad;
  v = beta2 * v + (1.0 - beta2) * grad.cwiseProduct(grad);
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  params.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
}

void RunningNorm::update(const Mat& batch) {
  if (batch.cols() == 0) return;
  check_dim(batch.rows(), dim(), "RunningNorm batch");
  // Chan et al. parallel combination of (count, mean, M2).
  const double n = static_cast<double>(batch.cols());
  const Vec bmean = batch.rowwise().mean();
  const Vec bm2 = (batch.colwise() - bmean).array().square().rowwise().sum();
  const double total = count + n;
  const Vec delta = bmean - mean;
  const Vec m2 = var * count + bm2 + delta.cwiseProduct(delta) * (count * n / total);
  mean += delta * (n / total);
  count = total;
  var = m2 / count;
}

Vec RunningNorm::apply(const Vec& x) const {
  check_dim(x.size(), dim(), "RunningNorm input");
  return ((x - mean).array() / (var.array() + 1e-8).sqrt()).cwiseMax(-clip).cwiseMin(clip).matrix();
}

Mat RunningNorm::apply_batch(const Mat& x) const {
  check_dim(x.rows(), dim(), "RunningNorm input");
  const Vec inv = (var.array() + 1e-8).rsqrt().matrix();
  return ((x.colwise() - mean).array().colwise() * inv.array()).cwiseMax(-clip).cwiseMin(clip).matrix();
}

RunningNorm RunningNorm::head(int n) const {
  RunningNorm h;
  h.mean = mean.head(n);
  h.var = var.head(n);
  h.count = count;
  h.clip = clip;
  return h;
}

std::string encode_doubles(const Vec& v) {
  static const char* kHex = "0123456789abcdef";
  std::string out;
  out.reserve(16 * v.size());
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    std::uint64_t bits;
    const double x = v[i];
    std::memcpy(&bits, &x, sizeof(bits));
    for (int s = 60; s >= 0; s -= 4) out.push_back(kHex[(bits >> s) & 0xF]);
  }
  return out;
}

Vec decode_doubles(const std::string& hex) {
  if (hex.size() % 16 != 0) throw std::invalid_argument("encoded doubles must be 16 hex digits each");
  Vec v(static_cast<Eigen::Index>(hex.size() / 16));
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    const std::uint64_t bits = std::stoull(hex.substr(16 * i, 16), nullptr, 16);
    double x;
    std::memcpy(&x, &bits, sizeof(x));
    v[i] = x;
  }
  return v;
}

void Checkpoint::put(const std::string& name, const Mlp& net) {
  blocks[name] = net.params;
  std::vector<int> sizes = net.sizes();
  meta["nets"][name] = {{"sizes", sizes}, {"activation", to_string(net.activation())}};
}

void Checkpoint::put(const std::string& name, const Adam& opt) {
  blocks[name + ".m"] = opt.m;
  blocks[name + ".v"] = opt.v;
  meta["optimizers"][name] = {{"t", opt.t}};
}

const Vec& Checkpoint::block(const std::string& name) const {
  auto it = blocks.find(name);
  if (it == blocks.end()) throw std::invalid_argument("checkpoint has no block " + name);
  return it->second;
}

void Checkpoint::get(const std::string& name, Mlp& net) const {
  const auto& info = meta.at("nets").at(name);
  net = Mlp(info.at("sizes").get<std::vector<int>>(),
            activation_from_string(info.at("activation").get<std::string>()));
  const Vec& p = block(name);
  check_dim(p.size(), net.n_params(), ("checkpoint block " + name).c_str());
  net.params = p;
}

void Checkpoint::get(const std::string& name, Adam& opt) const {
  opt.m = block(name + ".m");
  opt.v = block(name + ".v");
  opt.t = meta.at("optimizers").at(name).at("t").get<long long>();
}

void Checkpoint::put(const std::string& name, const RunningNorm& norm) {
  blocks[name + ".mean"] = norm.mean;
  blocks[name + ".var"] = norm.var;
  meta["norms"][name] = {{"count", norm.count}, {"clip", norm.clip}};
}

void Checkpoint::get(const std::string& name, RunningNorm& norm) const {
  norm.mean = block(name + ".mean");
  norm.var = block(name + ".var");
  norm.count = meta.at("norms").at(name).at("count").get<double>();
  norm.clip = meta.at("norms").at(name).at("clip").get<double>();
}

nlohmann::json Checkpoint::to_json() const {
  nlohmann::json j;
  j["format"] = "pulse-checkpoint";
  j["version"] = 1;
  j["meta"] = meta;
  j["blocks"] = nlohmann::json::object();
  for (const auto& [name, v] : blocks) j["blocks"][name] = encode_doubles(v);
  return j;
}

Checkpoint Checkpoint::from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "pulse-checkpoint") throw std::invalid_argument("not a checkpoint");
  if (j.value("version", 0) != 1) throw std::invalid_argument("unsupported checkpoint version");
  Checkpoint c;
  c.meta = j.at("meta");
  for (const auto& [name, hex] : j.at("blocks").items()) c.blocks[name] = decode_doubles(hex.get<std::string>());
  return c;
}

void Checkpoint::save(const std::string& path) const {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
    out << to_json().dump() << '\n';
  }
  std::rename(tmp.c_str(), path.c_str());
}

Checkpoint Checkpoint::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read checkpoint: " + path);
  return from_json(nlohmann::json::parse(in));
}

std::string rng_state(const Rng& rng) {
  std::ostringstream s;
  s << rng;
  return s.str();
}

void set_rng_state(Rng& rng, const std::string& state) {
  std::istringstream s(state);
  s >> rng;
  if (!s) throw std::invalid_argument("malformed RNG state");
}

}  // namespace pulse

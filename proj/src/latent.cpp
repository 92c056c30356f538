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

#include "pulse/latent.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>

namespace pulse {

namespace {

std::vector<int> layer_sizes(int in, const std::vector<int>& hidden, int out) {
  std::vector<int> s{in};
  s.insert(s.end(), hidden.begin(), hidden.end());
  s.push_back(out);
  return s;
}

Vec concat(const Vec& a, const Vec& b) {
  Vec x(a.size() + b.size());
  x << a, b;
  return x;
}

DiagGaussian split_gaussian(const Vec& out, int dim) {
  return gaussian_from_log_std(out.head(dim), out.tail(dim));
}

}  // namespace

PulseModel::PulseModel(int p_dim, int g_dim, int a_dim, int l_dim, const std::vector<int>& hidden,
                       Activation act, Rng& rng)
    : latent_dim(l_dim),
      proprio_dim(p_dim),
      goal_dim(g_dim),
      encoder(layer_sizes(p_dim + g_dim, hidden, 2 * l_dim), act),
      decoder(layer_sizes(p_dim + l_dim, hidden, a_dim), act),
      prior(layer_sizes(p_dim, hidden, 2 * l_dim), act),
      norm(p_dim + g_dim) {
  if (l_dim < 1) throw std::invalid_argument("latent_dim must be >= 1");
  encoder.init(rng, 0.0);
  decoder.init(rng, 0.01);
  prior.init(rng, 0.0);
}

DiagGaussian encode(const PulseModel& m, const Vec& proprio, const Vec& goal) {
  check_dim(proprio.size(), m.proprio_dim, "encode proprio");
  check_dim(goal.size(), m.goal_dim, "encode goal");
  return split_gaussian(m.encoder.forward(m.norm.apply(concat(proprio, goal))), m.latent_dim);
}

DiagGaussian prior(const PulseModel& m, const Vec& proprio) {
  check_dim(proprio.size(), m.proprio_dim, "prior proprio");
  return split_gaussian(m.prior.forward(m.norm.head(m.proprio_dim).apply(proprio)), m.latent_dim);
}

Vec decode(const PulseModel& m, const Vec& proprio, const Vec& z) {
  check_dim(proprio.size(), m.proprio_dim, "decode proprio");
  check_dim(z.size(), m.latent_dim, "decode z");
  return m.decoder.forward(concat(m.norm.head(m.proprio_dim).apply(proprio), z));
}

MeanActor student_actor(const PulseModel& m) {
  return [&m](const Vec& obs, const Vec&) {
    const Vec p = obs.head(m.proprio_dim);
    return decode(m, p, encode(m, p, obs.segment(m.proprio_dim, m.goal_dim)).mean);
  };
}

void save_pulse(Checkpoint& ck, const std::string& prefix, const PulseModel& m) {
  ck.put(prefix + ".encoder", m.encoder);
  ck.put(prefix + ".decoder", m.decoder);
  ck.put(prefix + ".prior", m.prior);
  ck.put(prefix + ".norm", m.norm);
  ck.meta["pulse"][prefix] = {
      {"latent_dim", m.latent_dim}, {"proprio_dim", m.proprio_dim}, {"goal_dim", m.goal_dim}};
}

void load_pulse(const Checkpoint& ck, const std::string& prefix, PulseModel& m) {
  const auto& info = ck.meta.at("pulse").at(prefix);
  m.latent_dim = info.at("latent_dim");
  m.proprio_dim = info.at("proprio_dim");
  m.goal_dim = info.at("goal_dim");
  ck.get(prefix + ".encoder", m.encoder);
  ck.get(prefix + ".decoder", m.decoder);
  ck.get(prefix + ".prior", m.prior);
  ck.get(prefix + ".norm", m.norm);
  check_dim(m.encoder.out_dim(), 2 * m.latent_dim, "checkpoint encoder head");
  check_dim(m.prior.out_dim(), 2 * m.latent_dim, "checkpoint prior head");
  check_dim(m.decoder.in_dim(), m.proprio_dim + m.latent_dim, "checkpoint decoder input");
}

DistillLoss distill_loss(const PulseModel& m, const DistillBatch& batch, double alpha,
                         double beta, PulseGrads* grads) {
  const int B = batch.size();
  const int P = m.proprio_dim, G = m.goal_dim, L = m.latent_dim;
  if (B == 0) throw std::invalid_argument("distill_loss: empty batch");
  check_dim(batch.goal.cols(), B, "distill goal batch");
  check_dim(batch.noise.rows(), L, "distill noise");
  check_dim(batch.teacher.rows(), m.act_dim(), "distill teacher");

  Mat x(P + G, B);
  x << batch.proprio, batch.goal;
  const Mat xn = m.norm.apply_batch(x);

  Mlp::Cache ec, pc, dc;
  const Mat eo = m.encoder.forward_batch(xn, &ec);
  const Mat po = m.prior.forward_batch(xn.topRows(P), &pc);
  const Mat e_log = eo.bottomRows(L).cwiseMax(kLogStdMin).cwiseMin(kLogStdMax);
  const Mat e_std = e_log.array().exp().matrix();
  const Mat z = eo.topRows(L) + e_std.cwiseProduct(batch.noise);
  Mat xd(P + L, B);
  xd << xn.topRows(P), z;
  const Mat a = m.decoder.forward_batch(xd, &dc);

  const double invB = 1.0 / B;
  DistillLoss out;
  const Mat da = a - batch.teacher;
  out.action = da.squaredNorm() * invB;
  const Mat step = (eo.topRows(L) - batch.prev_mean).array().rowwise() *
                   batch.has_prev.transpose().array();
  out.regu = step.squaredNorm() * invB;
  std::vector<KlGrad> kg(grads ? B : 0);
  for (int k = 0; k < B; ++k) {
    const DiagGaussian e = split_gaussian(eo.col(k), L);
    const DiagGaussian r = split_gaussian(po.col(k), L);
    out.kl += kl_diag_gaussian(e, r);
    if (grads) kg[k] = kl_diag_gaussian_grad(e, r);
  }
  out.kl *= invB;
  out.total = out.action + alpha * out.regu + beta * out.kl;
  if (!std::isfinite(out.total)) throw NumericalError("distillation loss is not finite");
  if (!grads) return out;

  if (grads->encoder.size() != m.encoder.n_params()) grads->encoder = Vec::Zero(m.encoder.n_params());
  if (grads->decoder.size() != m.decoder.n_params()) grads->decoder = Vec::Zero(m.decoder.n_params());
  if (grads->prior.size() != m.prior.n_params()) grads->prior = Vec::Zero(m.prior.n_params());

  const Mat dxd = m.decoder.backward(dc, 2.0 * invB * da, grads->decoder);
  const Mat dz = dxd.bottomRows(L);
  Mat de(2 * L, B), dp(2 * L, B);
  for (int k = 0; k < B; ++k) {
    const Vec e_pass = log_std_pass(eo.col(k).tail(L));
    const Vec p_pass = log_std_pass(po.col(k).tail(L));
    de.col(k).head(L) = dz.col(k) + 2.0 * alpha * invB * step.col(k) + beta * invB * kg[k].mean_a;
    de.col(k).tail(L) = (dz.col(k).cwiseProduct(e_std.col(k)).cwiseProduct(batch.noise.col(k)) +
                         beta * invB * kg[k].log_std_a)
                            .cwiseProduct(e_pass);
    dp.col(k).head(L) = beta * invB * kg[k].mean_b;
    dp.col(k).tail(L) = (beta * invB * kg[k].log_std_b).cwiseProduct(p_pass);
  }
  m.encoder.backward(ec, de, grads->encoder);
  m.prior.backward(pc, dp, grads->prior);
  return out;
}

double beta_schedule(long long samples, const BetaSchedule& s) {
  if (samples <= s.start_samples) return s.start_value;
  if (samples >= s.end_samples) return s.end_value;
  const double u = static_cast<double>(samples - s.start_samples) /
                   static_cast<double>(s.end_samples - s.start_samples);
  return s.start_value + u * (s.end_value - s.start_value);
}

BetaSchedule beta_schedule_for(const PulseConfig& c) {
  return {c.beta_start, c.beta_end, static_cast<long long>(c.beta_start_frac * c.max_samples),
          static_cast<long long>(c.beta_end_frac * c.max_samples)};
}

void to_json(nlohmann::json& j, const PulseConfig& c) {
  j = {{"latent_dim", c.latent_dim},
       {"hidden", c.hidden},
       {"activation", to_string(c.activation)},
       {"alpha", c.alpha},
       {"beta_start", c.beta_start},
       {"beta_end", c.beta_end},
       {"beta_start_frac", c.beta_start_frac},
       {"beta_end_frac", c.beta_end_frac},
       {"lr", c.lr},
       {"passes", c.passes},
       {"minibatch", c.minibatch},
       {"buffer", c.buffer},
       {"max_grad_norm", c.max_grad_norm},
       {"max_samples", c.max_samples},
       {"eval_interval", c.eval_interval},
       {"target_success", c.target_success},
       {"mining", c.mining},
       {"env", c.env},
       {"learn_prior", c.learn_prior},
       {"rl_mix", c.rl_mix},
       {"rl_action_std", c.rl_action_std},
       {"ppo", c.ppo}};
}

void from_json(const nlohmann::json& j, PulseConfig& c) {
  c.latent_dim = j.value("latent_dim", c.latent_dim);
  c.hidden = j.value("hidden", c.hidden);
  if (j.contains("activation")) c.activation = activation_from_string(j.at("activation").get<std::string>());
  c.alpha = j.value("alpha", c.alpha);
  c.beta_start = j.value("beta_start", c.beta_start);
  c.beta_end = j.value("beta_end", c.beta_end);
  c.beta_start_frac = j.value("beta_start_frac", c.beta_start_frac);
  c.beta_end_frac = j.value("beta_end_frac", c.beta_end_frac);
  c.lr = j.value("lr", c.lr);
  c.passes = j.value("passes", c.passes);
  c.minibatch = j.value("minibatch", c.minibatch);
  c.buffer = j.value("buffer", c.buffer);
  c.max_grad_norm = j.value("max_grad_norm", c.max_grad_norm);
  c.max_samples = j.value("max_samples", c.max_samples);
  c.eval_interval = j.value("eval_interval", c.eval_interval);
  c.target_success = j.value("target_success", c.target_success);
  if (j.contains("mining")) from_json(j.at("mining"), c.mining);
  if (j.contains("env")) from_json(j.at("env"), c.env);
  c.learn_prior = j.value("learn_prior", c.learn_prior);
  c.rl_mix = j.value("rl_mix", c.rl_mix);
  c.rl_action_std = j.value("rl_action_std", c.rl_action_std);
  if (j.contains("ppo")) from_json(j.at("ppo"), c.ppo);
}

void write_distill_header(std::ostream& out) {
  out << "update,samples,beta,loss,action,regu,kl,latent_step,rl_loss,eval_success\n";
}

void write_distill_row(std::ostream& out, const DistillStats& s) {
  out << s.update << ',' << s.samples << ',' << s.beta << ',' << s.loss.total << ','
      << s.loss.action << ',' << s.loss.regu << ',' << s.loss.kl << ',' << s.latent_step << ','
      << s.rl_loss << ',' << s.eval_success << '\n';
}

double latent_smoothness(const HumanoidModel& model, const PulseModel& m, const ReferenceSet& ref,
                         const ImitationEnvConfig& config) {
  double sum = 0.0;
  long long count = 0;
  for (int c = 0; c < ref.dataset.size(); ++c) {
    std::vector<Vec> means;
    const MeanActor actor = [&](const Vec& obs, const Vec&) {
      const Vec p = obs.head(m.proprio_dim);
      means.push_back(encode(m, p, obs.segment(m.proprio_dim, m.goal_dim)).mean);
      return decode(m, p, means.back());
    };
    rollout_clip(model, ref, c, actor, config);
    for (size_t t = 1; t < means.size(); ++t) {
      sum += (means[t] - means[t - 1]).norm();
      ++count;
    }
  }
  return count > 0 ? sum / count : 0.0;
}

namespace {

// One collected student step.
struct StudentStep {
  Vec obs;
  Vec offset;
  Vec mean;  // encoder mean at collection
  Vec prev_mean;
  bool has_prev = false;
  Vec noise;  // collection-time latent noise
  Vec action;
};

struct Trainer {
  const HumanoidModel& model;
  const GaussianPolicy& teacher;
  const PulseConfig& config;
  std::shared_ptr<const ReferenceSet> ref;
  std::shared_ptr<ClipSampler> sampler;

  PulseModel student;
  Adam enc_opt, dec_opt, prior_opt;
  Mlp value;  // RL-mixing arm only
  Adam value_opt;
  Rng env_rng, noise_rng, update_rng;
  HardMiner miner;
  PulseResult result;
  bool have_best = false;

  std::unique_ptr<ImitationEnv> env;
  Vec obs;
  Vec last_mean;
  bool needs_reset = true;

  Trainer(const HumanoidModel& mdl, const GaussianPolicy& t, const MotionDataset& ds,
          const PulseConfig& c, std::uint64_t seed)
      : model(mdl),
        teacher(t),
        config(c),
        ref(std::make_shared<const ReferenceSet>(mdl, ds)),
        sampler(std::make_shared<ClipSampler>()),
        env_rng(make_stream(seed, "pulse/env")),
        noise_rng(make_stream(seed, "pulse/noise")),
        update_rng(make_stream(seed, "pulse/update")),
        miner{c.mining} {
    const int P = proprio_dim(mdl), G = goal_dim(mdl);
    if (t.obs_dim() != P + G || t.act_dim() != mdl.n_joints()) {
      throw std::invalid_argument("teacher observation layout does not match the imitation task");
    }
    sampler->ref = ref;
    sampler->mix = c.mining.mix_ratio;
    Rng init = make_stream(seed, "pulse/init");
    student = PulseModel(P, G, mdl.n_joints(), c.latent_dim, c.hidden, c.activation, init);
    student.norm = t.norm;
    enc_opt = Adam(student.encoder.n_params());
    dec_opt = Adam(student.decoder.n_params());
    prior_opt = Adam(student.prior.n_params());
    if (c.rl_mix) {
      value = Mlp(layer_sizes(P + G, c.hidden, 1), c.activation);
      value.init(init);
      value_opt = Adam(value.n_params());
    }
    env = std::make_unique<ImitationEnv>(mdl, sampler, c.env);
  }

  double value_of(const Vec& o) const { return value.forward(student.norm.apply(o))[0]; }

  // Fills `steps` (and `rl` for the RL arm) with student rollouts.
  void collect(int n, std::vector<StudentStep>& steps, RolloutBuffer& rl) {
    const int P = student.proprio_dim, G = student.goal_dim;
    int pending = -1;
    for (int i = 0; i < n; ++i) {
      StudentStep s;
      Transition tr;
      if (needs_reset) {
        obs = env->reset(env_rng);
        needs_reset = false;
        tr.episode_start = true;
      }
      s.obs = obs;
      s.offset = env->action_offset();
      const Vec p = obs.head(P);
      const DiagGaussian e = encode(student, p, obs.segment(P, G));
      s.has_prev = !tr.episode_start;
      s.prev_mean = s.has_prev ? last_mean : Vec::Zero(student.latent_dim);
      s.noise = standard_normal(student.latent_dim, noise_rng);
      s.action = decode(student, p, e.mean + e.std.cwiseProduct(s.noise));
      s.mean = e.mean;
      last_mean = e.mean;
      if (config.rl_mix) {
        const DiagGaussian d{s.action, Vec::Constant(student.act_dim(), config.rl_action_std)};
        s.action = reparam_sample(d, noise_rng).z;
        tr.log_prob = gaussian_logpdf(d, s.action);
        tr.value = value_of(obs);
        if (pending >= 0) rl.data[pending].next_value = tr.value;
      }
      const Env::Step st = env->step(s.action, env_rng);
      obs = st.obs;
      needs_reset = st.done;
      steps.push_back(std::move(s));
      if (config.rl_mix) {
        tr.reward = st.reward;
        tr.done = st.done;
        tr.terminal = st.terminal;
        pending = -1;
        if (st.done) {
          tr.next_value = st.terminal ? 0.0 : value_of(obs);
        } else {
          pending = rl.size();
        }
        rl.data.push_back(std::move(tr));
      }
    }
    if (config.rl_mix && pending >= 0) rl.data[pending].next_value = value_of(obs);
    if (config.rl_mix && !rl.data.empty()) rl.data.back().segment_end = true;
  }

  Mat teacher_actions(const std::vector<StudentStep>& steps) const {
    const int n = static_cast<int>(steps.size());
    Mat x(teacher.obs_dim(), n), off(teacher.act_dim(), n);
    for (int k = 0; k < n; ++k) {
      x.col(k) = steps[k].obs;
      off.col(k) = steps[k].offset;
    }
    return teacher.net.forward_batch(teacher.norm.apply_batch(x)) + off;
  }

  // PPO surrogate through decoder(proprio, mean_e + std_e * stored noise).
  double rl_step(const std::vector<StudentStep>& steps, const RolloutBuffer& rl, const Vec& adv,
                 const Vec& ret, const std::vector<int>& idx, int begin, int end, PulseGrads& g) {
    const int P = student.proprio_dim, G = student.goal_dim, L = student.latent_dim;
    const int b = end - begin;
    Mat x(P + G, b), noise(L, b), acts(student.act_dim(), b);
    Vec old_lp(b), adv_b(b), ret_b(b);
    for (int k = 0; k < b; ++k) {
      const int i = idx[begin + k];
      x.col(k) = steps[i].obs;
      noise.col(k) = steps[i].noise;
      acts.col(k) = steps[i].action;
      old_lp[k] = rl.data[i].log_prob;
      adv_b[k] = adv[i];
      ret_b[k] = ret[i];
    }
    const Mat xn = student.norm.apply_batch(x);
    Mlp::Cache ec, dc, vc;
    const Mat eo = student.encoder.forward_batch(xn, &ec);
    const Mat e_std = eo.bottomRows(L).cwiseMax(kLogStdMin).cwiseMin(kLogStdMax).array().exp().matrix();
    Mat xd(P + L, b);
    xd << xn.topRows(P), eo.topRows(L) + e_std.cwiseProduct(noise);
    const Mat mean = student.decoder.forward_batch(xd, &dc);
    const SurrogateResult s =
        surrogate_loss(mean, Vec::Constant(student.act_dim(), config.rl_action_std), acts, old_lp,
                       adv_b, config.ppo.clip);
    const Mat dz = student.decoder.backward(dc, s.dmean, g.decoder).bottomRows(L);
    Mat de(2 * L, b);
    for (int k = 0; k < b; ++k) {
      de.col(k).head(L) = dz.col(k);
      de.col(k).tail(L) = dz.col(k).cwiseProduct(e_std.col(k)).cwiseProduct(noise.col(k)).cwiseProduct(
          log_std_pass(eo.col(k).tail(L)));
    }
    student.encoder.backward(ec, de, g.encoder);

    const Vec v = value.forward_batch(xn, &vc).row(0).transpose();
    Vec dv;
    value_loss(v, ret_b, &dv);
    Vec vg = Vec::Zero(value.n_params());
    value.backward(vc, config.ppo.value_coef * dv.transpose(), vg);
    clip_grad_norm(vg, config.ppo.max_grad_norm);
    value_opt.step(value.params, vg, config.ppo.lr_value);
    return s.loss;
  }

  DistillStats update(const std::vector<StudentStep>& steps, const RolloutBuffer& rl) {
    const int n = static_cast<int>(steps.size());
    const int P = student.proprio_dim, G = student.goal_dim, L = student.latent_dim;
    const Mat teach = teacher_actions(steps);
    DistillStats st;
    st.beta = beta_schedule(result.samples, beta_schedule_for(config));
    int with_prev = 0;
    for (const StudentStep& s : steps) {
      if (!s.has_prev) continue;
      st.latent_step += (s.mean - s.prev_mean).norm();
      ++with_prev;
    }
    if (with_prev > 0) st.latent_step /= with_prev;

    Vec adv, ret;
    if (config.rl_mix) {
      const Advantages a = gae(rl, config.ppo.gamma, config.ppo.lambda);
      const double mu = a.adv.mean();
      const double sd = std::sqrt((a.adv.array() - mu).square().mean());
      adv = (a.adv.array() - mu) / (sd + 1e-8);
      ret = a.ret;
    }

    std::vector<int> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    const int mb = std::max(1, std::min(config.minibatch, n));
    int batches = 0;
    for (int pass = 0; pass < config.passes; ++pass) {
      std::shuffle(idx.begin(), idx.end(), update_rng);
      for (int begin = 0; begin < n; begin += mb) {
        const int end = std::min(n, begin + mb);
        const int b = end - begin;
        DistillBatch batch;
        batch.proprio.resize(P, b);
        batch.goal.resize(G, b);
        batch.prev_mean.resize(L, b);
        batch.has_prev.resize(b);
        batch.teacher.resize(student.act_dim(), b);
        for (int k = 0; k < b; ++k) {
          const StudentStep& s = steps[idx[begin + k]];
          batch.proprio.col(k) = s.obs.head(P);
          batch.goal.col(k) = s.obs.segment(P, G);
          batch.prev_mean.col(k) = s.prev_mean;
          batch.has_prev[k] = s.has_prev ? 1.0 : 0.0;
          batch.teacher.col(k) = teach.col(idx[begin + k]);
        }
        // Fresh latent noise every pass.
        batch.noise.resize(L, b);
        for (int k = 0; k < b; ++k) batch.noise.col(k) = standard_normal(L, update_rng);
        PulseGrads g;
        const DistillLoss loss = distill_loss(student, batch, config.alpha, st.beta, &g);
        if (config.rl_mix) st.rl_loss += rl_step(steps, rl, adv, ret, idx, begin, end, g);
        check_finite(g.encoder, "encoder gradient");
        check_finite(g.decoder, "decoder gradient");
        check_finite(g.prior, "prior gradient");
        clip_grad_norm(g.encoder, config.max_grad_norm);
        clip_grad_norm(g.decoder, config.max_grad_norm);
        clip_grad_norm(g.prior, config.max_grad_norm);
        enc_opt.step(student.encoder.params, g.encoder, config.lr);
        dec_opt.step(student.decoder.params, g.decoder, config.lr);
        // A fixed prior keeps its zero head, hence exactly N(0, I).
        if (config.learn_prior) prior_opt.step(student.prior.params, g.prior, config.lr);
        st.loss.total += loss.total;
        st.loss.action += loss.action;
        st.loss.regu += loss.regu;
        st.loss.kl += loss.kl;
        ++batches;
      }
    }
    const double inv = 1.0 / std::max(1, batches);
    st.loss.total *= inv;
    st.loss.action *= inv;
    st.loss.regu *= inv;
    st.loss.kl *= inv;
    st.rl_loss *= inv;
    return st;
  }

  MetricsReport evaluate() {
    return evaluate_imitation(model, *ref, student_actor(student), config.env);
  }

  double observe_eval() {
    const MetricsReport rep = evaluate();
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
    if (!have_best || rep.success_rate > result.best_report.success_rate ||
        (rep.success_rate == result.best_report.success_rate &&
         rep.g_mpjpe < result.best_report.g_mpjpe)) {
      have_best = true;
      result.model = student;
      result.best_report = rep;
      result.best_update = result.updates;
    }
    return rep.success_rate;
  }

  void save(const std::string& path) const {
    Checkpoint ck;
    save_pulse(ck, "student", student);
    if (have_best) save_pulse(ck, "best", result.model);
    ck.put("opt.encoder", enc_opt);
    ck.put("opt.decoder", dec_opt);
    ck.put("opt.prior", prior_opt);
    if (config.rl_mix) {
      ck.put("value", value);
      ck.put("opt.value", value_opt);
    }
    nlohmann::json evals = nlohmann::json::array();
    for (const EvalRecord& e : result.evals) evals.push_back(to_json(e));
    ck.meta["distill"] = {{"samples", result.samples},
                          {"updates", result.updates},
                          {"best_update", result.best_update},
                          {"have_best", have_best},
                          {"hard", sampler->hard},
                          {"miner_reference", miner.reference_success},
                          {"miner_stale", miner.stale},
                          {"evals", evals},
                          {"rng", {rng_state(env_rng), rng_state(noise_rng), rng_state(update_rng)}}};
    std::filesystem::path p(path);
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    ck.save(path);
  }

  void load(const std::string& path) {
    const Checkpoint ck = Checkpoint::load(path);
    load_pulse(ck, "student", student);
    ck.get("opt.encoder", enc_opt);
    ck.get("opt.decoder", dec_opt);
    ck.get("opt.prior", prior_opt);
    if (config.rl_mix) {
      ck.get("value", value);
      ck.get("opt.value", value_opt);
    }
    const auto& d = ck.meta.at("distill");
    result.samples = d.at("samples");
    result.updates = d.at("updates");
    result.best_update = d.at("best_update");
    have_best = d.at("have_best");
    sampler->hard = d.at("hard").get<std::vector<int>>();
    miner.reference_success = d.at("miner_reference");
    miner.stale = d.at("miner_stale");
    for (const auto& e : d.at("evals")) {
      EvalRecord r;
      r.update = e.at("update");
      r.samples = e.at("samples");
      r.success = e.at("success");
      r.mpjpe = e.at("mpjpe_mm");
      r.failed = e.at("failed").get<std::vector<int>>();
      r.hard = e.at("hard").get<std::vector<int>>();
      result.evals.push_back(std::move(r));
    }
    set_rng_state(env_rng, d.at("rng").at(0));
    set_rng_state(noise_rng, d.at("rng").at(1));
    set_rng_state(update_rng, d.at("rng").at(2));
    if (have_best) {
      load_pulse(ck, "best", result.model);
      // Evaluation is deterministic, so the report is recomputed.
      result.best_report = evaluate_imitation(model, *ref, student_actor(result.model), config.env);
    }
    needs_reset = true;
  }
};

}  // namespace

PulseResult train_pulse(const HumanoidModel& model, const GaussianPolicy& teacher,
                        const MotionDataset& dataset, const PulseConfig& config,
                        std::uint64_t seed, std::ostream* csv, const DistillCheckpointing* ckpt) {
  Trainer tr(model, teacher, dataset, config, seed);
  const bool checkpoints = ckpt && ckpt->every_updates > 0 && !ckpt->path.empty();
  if (checkpoints && std::filesystem::exists(ckpt->path)) tr.load(ckpt->path);
  if (csv && tr.result.updates == 0) write_distill_header(*csv);
  const int eval_interval = std::max(1, config.eval_interval);

  while (tr.result.samples < config.max_samples) {
    const int n = static_cast<int>(std::min<long long>(config.buffer, config.max_samples - tr.result.samples));
    std::vector<StudentStep> steps;
    steps.reserve(n);
    RolloutBuffer rl;
    tr.collect(n, steps, rl);
    DistillStats st = tr.update(steps, rl);
    tr.result.samples += n;
    ++tr.result.updates;
    st.update = tr.result.updates;
    st.samples = tr.result.samples;
    if (tr.result.updates % eval_interval == 0) {
      st.eval_success = tr.observe_eval();
      if (st.eval_success >= config.target_success) {
        tr.result.reached_target = true;
        if (csv) write_distill_row(*csv, st);
        break;
      }
    }
    if (csv) write_distill_row(*csv, st);
    if (ckpt && ckpt->every_updates > 0 && tr.result.updates % ckpt->every_updates == 0) {
      tr.needs_reset = true;
      if (checkpoints) tr.save(ckpt->path);
      if (ckpt->stop_after >= 0 && tr.result.updates >= ckpt->stop_after) {
        tr.result.stopped = true;
        break;
      }
    }
  }
  if (!tr.result.stopped && !tr.result.reached_target &&
      (tr.result.evals.empty() || tr.result.evals.back().update != tr.result.updates)) {
    tr.observe_eval();
  }
  if (!tr.result.stopped) {
    tr.result.reached_target = tr.result.best_report.success_rate >= config.target_success;
  }
  if (!tr.have_best) tr.result.model = tr.student;
  return std::move(tr.result);
}

}  // namespace pulse

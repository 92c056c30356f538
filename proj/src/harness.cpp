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

#include "pulse/harness.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>

namespace pulse {

namespace fs = std::filesystem;

void to_json(nlohmann::json& j, const ExperimentConfig& c) {
  j = {{"seed", c.seed},
       {"deterministic", c.deterministic},
       {"out_dir", c.out_dir},
       {"physics", c.physics.is_null() ? model_to_json(make_humanoid()) : c.physics},
       {"data",
        {{"source", c.data.source},
         {"jump_thresh_m", c.data.jump_thresh_m},
         {"penetration_thresh_m", c.data.penetration_thresh_m}}},
       {"imitator", c.imitator},
       {"latent", c.latent},
       {"task", c.task},
       {"generate",
        {{"duration_s", c.generate.rollout.duration_s},
         {"substeps", c.generate.rollout.substeps},
         {"dt", c.generate.rollout.dt},
         {"fall_height", c.generate.rollout.fall_height},
         {"noise_scale", c.generate.noise_scale}}},
       {"ablation",
        {{"prior", c.ablation.prior},
         {"prior_action", c.ablation.prior_action},
         {"regu", c.ablation.regu},
         {"no_rl", c.ablation.no_rl}}},
       {"inputs",
        {{"dataset", c.inputs.dataset},
         {"teacher", c.inputs.teacher},
         {"pulse", c.inputs.pulse},
         {"task", c.inputs.task}}},
       {"distill_checkpoint_every", c.distill_checkpoint_every}};
}

void from_json(const nlohmann::json& j, ExperimentConfig& c) {
  c.seed = j.value("seed", c.seed);
  c.deterministic = j.value("deterministic", c.deterministic);
  c.out_dir = j.value("out_dir", c.out_dir);
  if (j.contains("physics")) c.physics = j.at("physics");
  if (j.contains("data")) {
    const auto& d = j.at("data");
    c.data.source = d.value("source", c.data.source);
    c.data.jump_thresh_m = d.value("jump_thresh_m", c.data.jump_thresh_m);
    c.data.penetration_thresh_m = d.value("penetration_thresh_m", c.data.penetration_thresh_m);
  }
  if (j.contains("imitator")) from_json(j.at("imitator"), c.imitator);
  if (j.contains("latent")) from_json(j.at("latent"), c.latent);
  if (j.contains("task")) from_json(j.at("task"), c.task);
  if (j.contains("generate")) {
    const auto& g = j.at("generate");
    c.generate.rollout.duration_s = g.value("duration_s", c.generate.rollout.duration_s);
    c.generate.rollout.substeps = g.value("substeps", c.generate.rollout.substeps);
    c.generate.rollout.dt = g.value("dt", c.generate.rollout.dt);
    c.generate.rollout.fall_height = g.value("fall_height", c.generate.rollout.fall_height);
    c.generate.noise_scale = g.value("noise_scale", c.generate.noise_scale);
  }
  if (j.contains("ablation")) {
    const auto& a = j.at("ablation");
    c.ablation.prior = a.value("prior", c.ablation.prior);
    c.ablation.prior_action = a.value("prior_action", c.ablation.prior_action);
    c.ablation.regu = a.value("regu", c.ablation.regu);
    c.ablation.no_rl = a.value("no_rl", c.ablation.no_rl);
  }
  if (j.contains("inputs")) {
    const auto& i = j.at("inputs");
    c.inputs.dataset = i.value("dataset", c.inputs.dataset);
    c.inputs.teacher = i.value("teacher", c.inputs.teacher);
    c.inputs.pulse = i.value("pulse", c.inputs.pulse);
    c.inputs.task = i.value("task", c.inputs.task);
  }
  c.distill_checkpoint_every = j.value("distill_checkpoint_every", c.distill_checkpoint_every);
}

ExperimentConfig default_config() {
  ExperimentConfig c;
  c.physics = model_to_json(make_humanoid());

  c.imitator.hidden = {128, 64};
  c.imitator.ppo.lr_policy = 3e-4;
  c.imitator.ppo.lr_value = 3e-4;
  c.imitator.ppo.buffer = 2048;
  c.imitator.ppo.minibatch = 256;
  c.imitator.mining.eval_interval = 20;
  c.imitator.max_samples = 5'000'000;

  c.latent.hidden = {128, 64};
  c.latent.max_samples = 1'000'000;

  c.task.hidden = {128, 64};
  c.task.ppo.lr_policy = 3e-4;
  c.task.ppo.lr_value = 3e-4;
  c.task.ppo.buffer = 2048;
  c.task.ppo.minibatch = 256;
  c.task.max_samples = 2'000'000;
  return c;
}

ExperimentConfig load_config(const std::vector<std::string>& layers, const nlohmann::json& overrides) {
  nlohmann::json j = default_config();
  for (const std::string& path : layers) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read config " + path);
    j.merge_patch(nlohmann::json::parse(in));
  }
  j.merge_patch(overrides);
  return j.get<ExperimentConfig>();
}

ExperimentConfig resolve(const ExperimentConfig& config) {
  ExperimentConfig c = config;
  if (c.physics.is_null()) c.physics = model_to_json(make_humanoid());
  c.latent.learn_prior = c.ablation.prior;
  c.task.use_prior = c.ablation.prior_action;
  if (!c.ablation.regu) c.latent.alpha = 0.0;
  c.latent.rl_mix = !c.ablation.no_rl;
  return c;
}

HumanoidModel experiment_model(const ExperimentConfig& c) {
  return c.physics.is_null() ? make_humanoid() : model_from_json(c.physics);
}

std::string git_blob_hash(const std::string& bytes) {
  const std::string blob = "blob " + std::to_string(bytes.size()) + std::string(1, '\0') + bytes;
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(blob.data(), blob.size(), md, &len, EVP_sha1(), nullptr) != 1) {
    throw std::runtime_error("sha1 failed");
  }
  std::string hex;
  char buf[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(buf, sizeof buf, "%02x", md[i]);
    hex += buf;
  }
  return hex;
}

void write_text(const std::string& path, const std::string& text) {
  const fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  // Write-then-rename so an interrupted stage never leaves a torn file.
  const fs::path tmp = p.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << text;
  }
  fs::rename(tmp, p);
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::string file_hash(const std::string& path) { return git_blob_hash(read_text(path)); }

namespace {

const char* const kStageNames[] = {"gen-data", "clean-data", "train-imitator", "distill",
                                   "train-task", "eval", "generate"};

}  // namespace

std::string to_string(Stage s) { return kStageNames[static_cast<int>(s)]; }

Stage stage_from_string(const std::string& name) {
  for (int i = 0; i < static_cast<int>(std::size(kStageNames)); ++i) {
    if (name == kStageNames[i]) return static_cast<Stage>(i);
  }
  throw std::invalid_argument("unknown stage: " + name);
}

std::vector<Stage> all_stages() {
  return {Stage::kGenData, Stage::kClean, Stage::kTrainImitator, Stage::kDistill,
          Stage::kTrainTask, Stage::kEval, Stage::kGenerate};
}

// ---- run directory ----

RunPaths::RunPaths(const ExperimentConfig& c) : out(c.out_dir) {
  raw_dataset = (out / "data" / "manifest.json").string();
  dataset = c.inputs.dataset.empty() ? (out / "clean" / "manifest.json").string() : c.inputs.dataset;
  teacher = c.inputs.teacher.empty() ? (out / "imitator.ckpt").string() : c.inputs.teacher;
  pulse = c.inputs.pulse.empty() ? (out / "pulse.ckpt").string() : c.inputs.pulse;
  task = c.inputs.task.empty() ? (out / "task.ckpt").string() : c.inputs.task;
}

std::string RunPaths::at(const std::string& name) const { return (out / name).string(); }

PpoLearner load_teacher(const std::string& path) {
  PpoLearner l;
  load_learner(Checkpoint::load(path), "imitator", l);
  return l;
}

std::shared_ptr<const PulseModel> load_pulse_model(const std::string& path) {
  auto m = std::make_shared<PulseModel>();
  load_pulse(Checkpoint::load(path), "pulse", *m);
  return m;
}

namespace {

std::string dump(const nlohmann::json& j) { return j.dump(2) + "\n"; }

// Dataset manifest plus every clip it lists.
nlohmann::json dataset_hashes(const std::string& manifest) {
  nlohmann::json h = nlohmann::json::object();
  h[manifest] = file_hash(manifest);
  const auto j = nlohmann::json::parse(read_text(manifest));
  const fs::path dir = fs::path(manifest).parent_path();
  for (const auto& c : j.at("clips")) {
    const std::string p = (dir / c.at("path").get<std::string>()).string();
    h[p] = file_hash(p);
  }
  return h;
}

std::string curve_csv(std::uint64_t seed, const std::vector<CurvePoint>& curve) {
  std::ostringstream s;
  s.precision(17);
  s << "seed,update,samples,train_return,eval_return\n";
  for (const CurvePoint& p : curve) {
    s << seed << ',' << p.update << ',' << p.samples << ',' << p.train_return << ','
      << p.eval_return << '\n';
  }
  return s.str();
}

class Runner {
 public:
  Runner(const ExperimentConfig& config, const RunOptions& options)
      : c_(resolve(config)), paths_(c_), opt_(options), model_(experiment_model(c_)) {
    fs::create_directories(paths_.out);
    const std::string mpath = paths_.at("manifest.json");
    if (fs::exists(mpath)) manifest_ = nlohmann::json::parse(read_text(mpath));
    config_json_ = c_;
    config_hash_ = git_blob_hash(config_json_.dump());
    manifest_["config"] = config_json_;
    manifest_["config_hash"] = config_hash_;
    if (!manifest_.contains("stages")) manifest_["stages"] = nlohmann::json::object();
    save_manifest();
  }

  RunResult run(std::vector<Stage> stages) {
    std::sort(stages.begin(), stages.end());
    stages.erase(std::unique(stages.begin(), stages.end()), stages.end());
    RunResult result;
    for (Stage s : stages) {
      StageOutcome o;
      o.stage = s;
      const std::string name = to_string(s);
      auto& entry = manifest_["stages"][name];
      if (opt_.resume && entry.is_object() && entry.value("status", "") == "done" &&
          entry.value("config_hash", "") == config_hash_) {
        o.skipped = true;
        log(name, "already done");
        result.stages.push_back(o);
        continue;
      }
      entry = {{"status", "running"}, {"config_hash", config_hash_}};
      save_manifest();
      inputs_ = nlohmann::json::object();
      try {
        const bool complete = execute(s);
        entry["status"] = complete ? "done" : "interrupted";
        if (!complete) {
          o.ok = false;
          o.error = "interrupted";
        }
      } catch (const std::exception& e) {
        entry["status"] = "failed";
        entry["error"] = e.what();
        o.ok = false;
        o.error = e.what();
        log(name, std::string("failed: ") + e.what());
      }
      entry["inputs"] = inputs_;
      save_manifest();
      result.stages.push_back(o);
      if (!o.ok) {
        result.exit_code = 10 + static_cast<int>(s);
        break;
      }
    }
    return result;
  }

 private:
  void log(const std::string& stage, const std::string& msg) const {
    if (opt_.log) *opt_.log << "[" << stage << "] " << msg << std::endl;
  }

  void save_manifest() const { write_text(paths_.at("manifest.json"), dump(manifest_)); }

  void note_input(const std::string& path) { inputs_[path] = file_hash(path); }

  MotionDataset dataset() {
    inputs_.update(dataset_hashes(paths_.dataset));
    return read_dataset(paths_.dataset);
  }

  bool execute(Stage s) {
    switch (s) {
      case Stage::kGenData: gen_data(); return true;
      case Stage::kClean: clean(); return true;
      case Stage::kTrainImitator: train_imitator_stage(); return true;
      case Stage::kDistill: return distill();
      case Stage::kTrainTask: train_task_stage(); return true;
      case Stage::kEval:
        write_text(paths_.at("metrics.json"), dump(eval_metrics(c_)));
        log("eval", "wrote metrics.json");
        return true;
      case Stage::kGenerate: generate_stage(); return true;
    }
    return false;
  }

  void gen_data() {
    MotionDataset ds;
    if (c_.data.source == "desk") {
      ds = desk_dataset(model_);
    } else {
      inputs_.update(dataset_hashes(c_.data.source));
      ds = read_dataset(c_.data.source);
    }
    ds.validate(model_);
    fs::remove_all(paths_.out / "data");
    write_dataset((paths_.out / "data").string(), ds);
    log("gen-data", std::to_string(ds.size()) + " clips");
  }

  void clean() {
    inputs_.update(dataset_hashes(paths_.raw_dataset));
    const CleanResult r = clean_dataset(model_, read_dataset(paths_.raw_dataset),
                                        c_.data.jump_thresh_m, c_.data.penetration_thresh_m);
    fs::remove_all(paths_.out / "clean");
    write_dataset((paths_.out / "clean").string(), r.kept);
    nlohmann::json rej = nlohmann::json::array();
    for (const Rejection& x : r.rejected) {
      rej.push_back({{"clip", x.clip}, {"reason", x.reason}, {"frame", x.frame}, {"value", x.value}});
    }
    write_text(paths_.at("clean/rejections.json"), dump(rej));
    log("clean-data", std::to_string(r.kept.size()) + " kept, " + std::to_string(r.rejected.size()) +
                          " rejected");
  }

  void train_imitator_stage() {
    const MotionDataset ds = dataset();
    std::ostringstream csv;
    const ImitatorResult r = pulse::train_imitator(model_, ds, c_.imitator, c_.seed, &csv);
    write_text(paths_.at("imitator.csv"), csv.str());
    nlohmann::json evals = nlohmann::json::array();
    for (const EvalRecord& e : r.evals) evals.push_back(to_json(e));
    write_text(paths_.at("imitator_evals.json"), dump(evals));
    Checkpoint ck;
    save_learner(ck, "imitator", r.best);
    ck.meta["report"] = to_json(r.best_report);
    ck.meta["best_update"] = r.best_update;
    ck.save(paths_.teacher);
    log("train-imitator", "success " + std::to_string(r.best_report.success_rate) + " after " +
                              std::to_string(r.samples) + " samples");
  }

  bool distill() {
    const MotionDataset ds = dataset();
    note_input(paths_.teacher);
    const PpoLearner teacher = load_teacher(paths_.teacher);
    std::ostringstream csv;
    DistillCheckpointing ck{paths_.at("distill_state.ckpt"), c_.distill_checkpoint_every,
                            opt_.distill_stop_after};
    // A resumed run appends to the rows already written.
    const std::string csv_path = paths_.at("distill.csv");
    const bool resuming = fs::exists(ck.path) && fs::exists(csv_path);
    const PulseResult r = train_pulse(model_, teacher.policy, ds, c_.latent, c_.seed, &csv, &ck);
    // train_pulse omits the header when it resumes.
    write_text(csv_path, resuming ? read_text(csv_path) + csv.str() : csv.str());
    if (r.stopped) {
      log("distill", "interrupted after " + std::to_string(r.updates) + " updates");
      return false;
    }
    nlohmann::json evals = nlohmann::json::array();
    for (const EvalRecord& e : r.evals) evals.push_back(to_json(e));
    write_text(paths_.at("distill_evals.json"), dump(evals));
    Checkpoint out;
    save_pulse(out, "pulse", r.model);
    out.meta["report"] = to_json(r.best_report);
    out.save(paths_.pulse);
    log("distill", "student success " + std::to_string(r.best_report.success_rate));
    return true;
  }

  void train_task_stage() {
    const MotionDataset ds = dataset();
    std::shared_ptr<const PulseModel> pulse;
    if (c_.task.space == ActionSpace::kLatent) {
      note_input(paths_.pulse);
      pulse = load_pulse_model(paths_.pulse);
    }
    std::ostringstream csv;
    const TaskResult r = pulse::train_task(model_, pulse, ds, c_.task, c_.seed, &csv);
    write_text(paths_.at("task.csv"), csv.str());
    write_text(paths_.at("task_curve.csv"), curve_csv(c_.seed, r.curve));
    write_text(paths_.at("task_curve.svg"), curves_svg(read_curve_csv(paths_.at("task_curve.csv")),
                                                      "samples", "normalized return"));
    Checkpoint ck;
    save_learner(ck, "task", r.learner);
    ck.meta["first_reach_samples"] = r.first_reach_samples;
    ck.save(paths_.task);
    log("train-task", "final eval " + std::to_string(r.curve.back().eval_return));
  }

  void generate_stage() {
    note_input(paths_.pulse);
    const auto pulse = load_pulse_model(paths_.pulse);
    Rng rng = make_stream(c_.seed, "generate");
    const GenerationResult g = generate(model_, *pulse, standing_state(model_),
                                        c_.generate.noise_scale, rng, c_.generate.rollout);
    write_trajectory_jsonl(paths_.at("generate.jsonl"), model_, g.states);
    write_text(paths_.at("generate.svg"), filmstrip_svg(model_, g.states));
    write_text(paths_.at("generate.json"),
               dump({{"noise_scale", c_.generate.noise_scale},
                     {"time_to_fall_s", g.time_to_fall_s},
                     {"fell", g.fell},
                     {"diverged", g.diverged}}));
    log("generate", "time to fall " + std::to_string(g.time_to_fall_s) + " s");
  }

  ExperimentConfig c_;
  RunPaths paths_;
  RunOptions opt_;
  HumanoidModel model_;
  nlohmann::json manifest_ = nlohmann::json::object();
  nlohmann::json config_json_;
  std::string config_hash_;
  nlohmann::json inputs_;
};

}  // namespace

nlohmann::json eval_imitator_metrics(const ExperimentConfig& config) {
  const ExperimentConfig c = resolve(config);
  const RunPaths p(c);
  const HumanoidModel model = experiment_model(c);
  const ReferenceSet ref(model, read_dataset(p.dataset));
  const PpoLearner teacher = load_teacher(p.teacher);
  return to_json(evaluate_imitation(model, ref, deterministic_actor(teacher.policy), c.imitator.env));
}

nlohmann::json eval_latent_metrics(const ExperimentConfig& config) {
  const ExperimentConfig c = resolve(config);
  const RunPaths p(c);
  const HumanoidModel model = experiment_model(c);
  const ReferenceSet ref(model, read_dataset(p.dataset));
  const auto pulse = load_pulse_model(p.pulse);
  return to_json(evaluate_imitation(model, ref, student_actor(*pulse), c.latent.env));
}

nlohmann::json eval_task_metrics(const ExperimentConfig& config) {
  const ExperimentConfig c = resolve(config);
  const RunPaths p(c);
  const HumanoidModel model = experiment_model(c);
  std::shared_ptr<const PulseModel> pulse;
  if (c.task.space == ActionSpace::kLatent) pulse = load_pulse_model(p.pulse);
  PpoLearner learner;
  load_learner(Checkpoint::load(p.task), "task", learner);
  auto ref = std::make_shared<const ReferenceSet>(
      model, task_dataset(read_dataset(p.dataset), c.task.kind));
  nlohmann::json j = {{"task", to_string(c.task.kind)}};
  if (c.task.kind == TaskKind::kSparseTrack) {
    j["sparse"] = to_json(evaluate_sparse_tracking(model, pulse, ref, c.task, learner.policy));
  } else {
    j["normalized_return"] =
        evaluate_task(model, pulse, *ref, c.task, learner.policy, c.task.eval_episodes, c.seed);
  }
  return j;
}

nlohmann::json eval_metrics(const ExperimentConfig& config) {
  const RunPaths p(resolve(config));
  nlohmann::json j = nlohmann::json::object();
  if (fs::exists(p.teacher)) j["imitator"] = eval_imitator_metrics(config);
  if (fs::exists(p.pulse)) j["student"] = eval_latent_metrics(config);
  if (fs::exists(p.task)) j["task"] = eval_task_metrics(config);
  return j;
}

RunResult run_experiment(const ExperimentConfig& config, const std::vector<Stage>& stages,
                         const RunOptions& options) {
  return Runner(config, options).run(stages);
}

std::vector<AblationFlags> ablation_grid() {
  return {{false, false, false, true}, {false, false, true, true}, {true, true, false, true},
          {true, true, true, false},   {true, false, true, true},  {true, true, true, true}};
}

nlohmann::json run_ablation(const ExperimentConfig& base, const RunOptions& options) {
  const fs::path root(base.out_dir);
  ExperimentConfig shared = base;
  if (shared.inputs.teacher.empty()) {
    ExperimentConfig t = base;
    t.out_dir = (root / "teacher").string();
    const RunResult r = run_experiment(
        t, {Stage::kGenData, Stage::kClean, Stage::kTrainImitator}, options);
    if (r.exit_code != 0) throw std::runtime_error("ablation teacher run failed");
    const RunPaths tp(t);
    shared.inputs.teacher = tp.teacher;
    if (shared.inputs.dataset.empty()) shared.inputs.dataset = tp.dataset;
  }
  shared.task.kind = TaskKind::kSparseTrack;
  shared.task.space = ActionSpace::kLatent;

  nlohmann::json summary = {{"rows", nlohmann::json::array()}};
  const auto grid = ablation_grid();
  for (size_t k = 0; k < grid.size(); ++k) {
    ExperimentConfig row = shared;
    row.ablation = grid[k];
    row.out_dir = (root / ("row" + std::to_string(k + 1))).string();
    const RunResult r =
        run_experiment(row, {Stage::kDistill, Stage::kTrainTask, Stage::kEval}, options);
    nlohmann::json entry = {{"row", k + 1},
                            {"flags",
                             {{"prior", grid[k].prior},
                              {"prior_action", grid[k].prior_action},
                              {"regu", grid[k].regu},
                              {"no_rl", grid[k].no_rl}}},
                            {"exit_code", r.exit_code}};
    const std::string metrics = (fs::path(row.out_dir) / "metrics.json").string();
    if (r.exit_code == 0) entry["metrics"] = nlohmann::json::parse(read_text(metrics));
    summary["rows"].push_back(entry);
  }
  write_text((root / "ablation.json").string(), dump(summary));
  return summary;
}

// ---- SVG ----

Envelope envelope(const std::vector<CurveSeries>& series) {
  Envelope e;
  if (series.empty()) return e;
  for (size_t i = 0; i < series[0].x.size(); ++i) {
    const double x = series[0].x[i];
    double lo = series[0].y[i], hi = lo;
    bool shared = true;
    for (size_t s = 1; s < series.size() && shared; ++s) {
      const auto it = std::find(series[s].x.begin(), series[s].x.end(), x);
      if (it == series[s].x.end()) {
        shared = false;
        break;
      }
      const double y = series[s].y[it - series[s].x.begin()];
      lo = std::min(lo, y);
      hi = std::max(hi, y);
    }
    if (!shared) continue;
    e.x.push_back(x);
    e.lo.push_back(lo);
    e.hi.push_back(hi);
  }
  return e;
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  for (std::string cell; std::getline(ss, cell, ',');) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_number(const std::string& s, const std::string& path) {
  try {
    size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw std::invalid_argument("malformed number '" + s + "' in " + path);
  }
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string tick(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

const char* const kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

}  // namespace

std::vector<CurveSeries> read_curve_csv(const std::string& path, const std::string& x_col,
                                        const std::string& y_col) {
  std::istringstream in(read_text(path));
  std::string line;
  std::vector<CurveSeries> out;
  if (!std::getline(in, line) || line.empty()) return out;
  const auto header = split_csv(line);
  auto col = [&](const std::string& name) {
    const auto it = std::find(header.begin(), header.end(), name);
    return it == header.end() ? -1 : static_cast<int>(it - header.begin());
  };
  const int xi = col(x_col), yi = col(y_col), si = col("seed");
  if (xi < 0 || yi < 0) throw std::invalid_argument(path + ": missing column " + x_col + " or " + y_col);
  std::map<std::string, size_t> index;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = split_csv(line);
    if (cells.size() != header.size()) throw std::invalid_argument(path + ": ragged row");
    const std::string key = si >= 0 ? cells[si] : "";
    auto [it, fresh] = index.emplace(key, out.size());
    if (fresh) out.push_back({si >= 0 ? "seed " + key : fs::path(path).stem().string(), {}, {}});
    out[it->second].x.push_back(parse_number(cells[xi], path));
    out[it->second].y.push_back(parse_number(cells[yi], path));
  }
  return out;
}

std::string curves_svg(const std::vector<CurveSeries>& series, const std::string& x_label,
                       const std::string& y_label) {
  const double W = 640, H = 400, L = 70, R = 20, T = 20, B = 50;
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0;
  double y0 = 0.0, y1 = 1.0;
  for (const CurveSeries& s : series) {
    for (double x : s.x) x0 = std::min(x0, x), x1 = std::max(x1, x);
    for (double y : s.y) y0 = std::min(y0, y), y1 = std::max(y1, y);
  }
  if (!(x0 < x1)) {
    x0 = std::isfinite(x0) ? x0 - 0.5 : 0.0;
    x1 = x0 + 1.0;
  }
  auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
  auto py = [&](double y) { return H - B - (y - y0) / (y1 - y0) * (H - T - B); };

  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
    << "\" viewBox=\"0 0 " << W << ' ' << H << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<g class=\"axes\" stroke=\"black\">\n";
  s << "<line x1=\"" << fmt(L) << "\" y1=\"" << fmt(H - B) << "\" x2=\"" << fmt(W - R) << "\" y2=\""
    << fmt(H - B) << "\"/>\n";
  s << "<line x1=\"" << fmt(L) << "\" y1=\"" << fmt(T) << "\" x2=\"" << fmt(L) << "\" y2=\""
    << fmt(H - B) << "\"/>\n";
  s << "</g>\n<g class=\"ticks\">\n";
  for (int i = 0; i <= 4; ++i) {
    const double x = x0 + (x1 - x0) * i / 4.0, y = y0 + (y1 - y0) * i / 4.0;
    s << "<text x=\"" << fmt(px(x)) << "\" y=\"" << fmt(H - B + 16) << "\" text-anchor=\"middle\">"
      << tick(x) << "</text>\n";
    s << "<text x=\"" << fmt(L - 6) << "\" y=\"" << fmt(py(y) + 4) << "\" text-anchor=\"end\">"
      << tick(y) << "</text>\n";
  }
  s << "</g>\n";
  s << "<text x=\"" << fmt((L + W - R) / 2) << "\" y=\"" << fmt(H - 10)
    << "\" text-anchor=\"middle\">" << x_label << "</text>\n";
  s << "<text x=\"16\" y=\"" << fmt((T + H - B) / 2) << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
    << fmt((T + H - B) / 2) << ")\">" << y_label << "</text>\n";

  if (series.size() > 1) {
    const Envelope e = envelope(series);
    if (!e.x.empty()) {
      s << "<polygon class=\"envelope\" fill=\"#1f77b4\" fill-opacity=\"0.2\" stroke=\"none\" points=\"";
      for (size_t i = 0; i < e.x.size(); ++i) s << fmt(px(e.x[i])) << ',' << fmt(py(e.hi[i])) << ' ';
      for (size_t i = e.x.size(); i-- > 0;) s << fmt(px(e.x[i])) << ',' << fmt(py(e.lo[i])) << ' ';
      s << "\"/>\n";
    }
  }
  for (size_t k = 0; k < series.size(); ++k) {
    const CurveSeries& c = series[k];
    const char* color = kPalette[k % std::size(kPalette)];
    s << "<polyline class=\"series\" fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (size_t i = 0; i < c.x.size(); ++i) s << fmt(px(c.x[i])) << ',' << fmt(py(c.y[i])) << ' ';
    s << "\"/>\n";
    s << "<text x=\"" << fmt(W - R - 4) << "\" y=\"" << fmt(T + 14 * (k + 1))
      << "\" text-anchor=\"end\" fill=\"" << color << "\">" << c.label << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

std::string filmstrip_svg(const HumanoidModel& model, const std::vector<HumanoidState>& states,
                          int every) {
  every = std::max(1, every);
  const double scale = 100.0, spacing = 1.2, H = 260.0, ground = 220.0;
  const int frames = states.empty() ? 0 : (static_cast<int>(states.size()) - 1) / every + 1;
  const double W = std::max(1, frames) * spacing * scale;
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << fmt(W) << "\" height=\"" << H
    << "\" viewBox=\"0 0 " << fmt(W) << ' ' << H << "\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<line x1=\"0\" y1=\"" << fmt(ground) << "\" x2=\"" << fmt(W) << "\" y2=\"" << fmt(ground)
    << "\" stroke=\"#888\"/>\n";
  for (int f = 0; f < frames; ++f) {
    const HumanoidState& st = states[f * every];
    const Kinematics k = forward_kinematics(model, st);
    // Each figure is centered on its own root.
    const double cx = (f + 0.5) * spacing * scale - st.q[0] * scale;
    s << "<g class=\"frame\" stroke=\"#222\" stroke-width=\"3\" stroke-linecap=\"round\">\n";
    for (int l = 0; l < model.n_links(); ++l) {
      const Vec2 a = k.links[l].origin;
      const Vec2 b = k.point(model, l, model.links[l].axis * model.links[l].length);
      s << "<line x1=\"" << fmt(cx + a.x() * scale) << "\" y1=\"" << fmt(ground - a.y() * scale)
        << "\" x2=\"" << fmt(cx + b.x() * scale) << "\" y2=\"" << fmt(ground - b.y() * scale) << "\"/>\n";
    }
    s << "</g>\n";
  }
  s << "</svg>\n";
  return s.str();
}

}  // namespace pulse

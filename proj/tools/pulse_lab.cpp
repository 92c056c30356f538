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

// pulse-lab: command line front end over the experiment harness. Every
// subcommand resolves a layered config, runs inside --out and records the
// resolved config in the run manifest.

#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "pulse/harness.hpp"

namespace {

using pulse::ExperimentConfig;
using pulse::Stage;

struct Common {
  std::vector<std::string> configs;
  std::uint64_t seed = 0;
  bool has_seed = false;
  std::string out;
  bool deterministic = false;
  std::string dataset, teacher, pulse, task_ckpt;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.configs, "JSON config layers, applied in order");
  cmd->add_option_function<std::uint64_t>(
      "--seed", [&c](const std::uint64_t& s) { c.seed = s, c.has_seed = true; }, "root seed");
  cmd->add_option("--out", c.out, "run directory");
  cmd->add_flag("--deterministic", c.deterministic, "single-threaded, bit-reproducible mode");
}

void add_inputs(CLI::App* cmd, Common& c, bool dataset, bool teacher, bool pulse, bool task) {
  if (dataset) cmd->add_option("--dataset", c.dataset, "cleaned dataset manifest");
  if (teacher) cmd->add_option("--teacher", c.teacher, "imitator checkpoint");
  if (pulse) cmd->add_option("--pulse", c.pulse, "latent model checkpoint");
  if (task) cmd->add_option("--task-checkpoint", c.task_ckpt, "task learner checkpoint");
}

nlohmann::json overrides(const Common& c) {
  nlohmann::json j = nlohmann::json::object();
  if (c.has_seed) j["seed"] = c.seed;
  if (!c.out.empty()) j["out_dir"] = c.out;
  if (c.deterministic) j["deterministic"] = true;
  auto& in = j["inputs"] = nlohmann::json::object();
  if (!c.dataset.empty()) in["dataset"] = c.dataset;
  if (!c.teacher.empty()) in["teacher"] = c.teacher;
  if (!c.pulse.empty()) in["pulse"] = c.pulse;
  if (!c.task_ckpt.empty()) in["task"] = c.task_ckpt;
  return j;
}

int run_stages(const ExperimentConfig& config, const std::vector<Stage>& stages) {
  pulse::RunOptions opt;
  opt.log = &std::cerr;
  const pulse::RunResult r = pulse::run_experiment(config, stages, opt);
  for (const auto& s : r.stages) {
    if (!s.ok) std::cerr << "stage " << pulse::to_string(s.stage) << " failed: " << s.error << "\n";
  }
  return r.exit_code;
}

int write_metrics(const ExperimentConfig& config, const std::string& name, const nlohmann::json& j) {
  const std::string path = (std::filesystem::path(config.out_dir) / name).string();
  pulse::write_text(path, j.dump(2) + "\n");
  std::cout << j.dump(2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pulse-lab: imitation, latent distillation and downstream control experiments"};
  app.require_subcommand(1);
  Common common;

  auto* gen = app.add_subcommand("gen-data", "write the procedural dataset (or copy --source)");
  std::string source;
  gen->add_option("--source", source, "dataset manifest to import instead of the desk set");
  auto* clean = app.add_subcommand("clean-data", "drop discontinuous or penetrating clips");
  auto* train_imi = app.add_subcommand("train-imitator", "train the motion imitator");
  auto* eval_imi = app.add_subcommand("eval-imitator", "imitator metrics JSON");
  auto* distill = app.add_subcommand("distill", "distill the imitator into the latent model");
  auto* eval_lat = app.add_subcommand("eval-latent", "student metrics JSON");
  auto* train_task = app.add_subcommand("train-task", "train a downstream task policy");
  auto* eval_task = app.add_subcommand("eval-task", "task metrics JSON");
  std::string task_kind, variant;
  for (auto* cmd : {train_task, eval_task}) {
    cmd->add_option("--task", task_kind, "speed, reach, trajectory or sparse_track");
    cmd->add_option("--variant", variant, "latent, no-prior or torque")
        ->check(CLI::IsMember({"latent", "no-prior", "torque"}));
  }
  auto* gen_motion = app.add_subcommand("generate", "roll out the prior from standing");
  double noise_scale = -1.0, duration = -1.0;
  gen_motion->add_option("--noise-scale", noise_scale, "prior std multiplier");
  gen_motion->add_option("--duration", duration, "seconds");
  auto* plot = app.add_subcommand("plot", "export curves or a trajectory filmstrip as SVG");
  std::vector<std::string> curves;
  std::string trajectory, plot_out, y_col = "eval_return";
  int every = 10;
  plot->add_option("--curves", curves, "curve CSV files");
  plot->add_option("--trajectory", trajectory, "trajectory JSONL");
  plot->add_option("--y", y_col, "curve column to plot");
  plot->add_option("--every", every, "filmstrip frame stride");
  plot->add_option("-o,--output", plot_out, "SVG path")->required();
  auto* ablate = app.add_subcommand("ablate", "six-row latent-space ablation grid");
  auto* run = app.add_subcommand("run", "run pipeline stages in order");
  std::vector<std::string> stage_names;
  run->add_option("--stages", stage_names, "stage names (default: all)");

  for (auto* cmd : app.get_subcommands({})) add_common(cmd, common);
  add_inputs(train_imi, common, true, true, false, false);
  add_inputs(eval_imi, common, true, true, false, false);
  add_inputs(distill, common, true, true, true, false);
  add_inputs(eval_lat, common, true, false, true, false);
  add_inputs(train_task, common, true, false, true, true);
  add_inputs(eval_task, common, true, false, true, true);
  add_inputs(gen_motion, common, false, false, true, false);
  add_inputs(ablate, common, true, true, false, false);

  CLI11_PARSE(app, argc, argv);

  try {
    nlohmann::json patch = overrides(common);
    if (!source.empty()) patch["data"]["source"] = source;
    if (!task_kind.empty()) patch["task"]["kind"] = task_kind;
    if (variant == "torque") patch["task"]["space"] = "torque";
    if (variant == "latent") patch["task"]["space"] = "latent";
    if (variant == "no-prior") {
      patch["task"]["space"] = "latent";
      patch["ablation"]["prior_action"] = false;
    }
    if (noise_scale >= 0.0) patch["generate"]["noise_scale"] = noise_scale;
    if (duration > 0.0) patch["generate"]["duration_s"] = duration;
    const ExperimentConfig config = pulse::load_config(common.configs, patch);

    if (*gen) return run_stages(config, {Stage::kGenData});
    if (*clean) return run_stages(config, {Stage::kClean});
    if (*train_imi) return run_stages(config, {Stage::kTrainImitator});
    if (*distill) return run_stages(config, {Stage::kDistill});
    if (*train_task) return run_stages(config, {Stage::kTrainTask});
    if (*gen_motion) return run_stages(config, {Stage::kGenerate});
    if (*eval_imi) return write_metrics(config, "imitator_metrics.json", pulse::eval_imitator_metrics(config));
    if (*eval_lat) return write_metrics(config, "latent_metrics.json", pulse::eval_latent_metrics(config));
    if (*eval_task) return write_metrics(config, "task_metrics.json", pulse::eval_task_metrics(config));
    if (*run) {
      std::vector<Stage> stages;
      for (const auto& n : stage_names) stages.push_back(pulse::stage_from_string(n));
      return run_stages(config, stages.empty() ? pulse::all_stages() : stages);
    }
    if (*ablate) {
      pulse::RunOptions opt;
      opt.log = &std::cerr;
      std::cout << pulse::run_ablation(config, opt).dump(2) << "\n";
      return 0;
    }
    if (*plot) {
      if (curves.empty() == trajectory.empty()) {
        std::cerr << "plot needs exactly one of --curves or --trajectory\n";
        return 2;
      }
      if (!trajectory.empty()) {
        pulse::write_text(plot_out, pulse::filmstrip_svg(pulse::experiment_model(config),
                                                         pulse::read_trajectory_jsonl(trajectory), every));
      } else {
        std::vector<pulse::CurveSeries> series;
        for (const auto& f : curves) {
          auto s = pulse::read_curve_csv(f, "samples", y_col);
          series.insert(series.end(), s.begin(), s.end());
        }
        pulse::write_text(plot_out, pulse::curves_svg(series, "samples", y_col));
      }
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

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

// Experiment plumbing: layered JSON configuration, staged runs in a
// self-describing directory, ablation grids and SVG export.
//
// Run directory layout (every path relative to `out_dir`):
//   manifest.json          resolved config, input hashes, stage status
//   data/                  generated clips + manifest.json
//   clean/                 kept clips + manifest.json, rejections.json
//   imitator.ckpt          best teacher; imitator.csv, imitator_evals.json
//   distill_state.ckpt     resumable distillation state
//   pulse.ckpt             best student; distill.csv, distill_evals.json
//   task.ckpt              task learner; task.csv, task_curve.csv
//   metrics.json           eval stage output, byte-stable under rerun
//   generate.jsonl         prior rollout; generate.svg, generate.json

#ifndef PULSE_HARNESS_HPP_
#define PULSE_HARNESS_HPP_

#include <cstdint>
#include <filesystem>
#include <memory>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"

#include "pulse/tasks.hpp"

namespace pulse {

// The four independent ablation axes of the latent-space study.
struct AblationFlags {
  bool prior = true;         // learnable prior (else fixed N(0, I))
  bool prior_action = true;  // task residual over the prior mean
  bool regu = true;          // consecutive-latent regularization
  bool no_rl = true;         // pure distillation (else RL mixing)
};

struct DataConfig {
  std::string source = "desk";  // "desk" or a dataset manifest path
  double jump_thresh_m = 0.10;
  double penetration_thresh_m = 0.02;
};

struct GenerateConfig {
  GenerationConfig rollout;
  double noise_scale = 1.0;
};

// Optional input overrides; empty paths resolve inside out_dir.
struct InputPaths {
  std::string dataset;  // cleaned dataset manifest
  std::string teacher;  // imitator checkpoint
  std::string pulse;    // latent model checkpoint
  std::string task;     // task learner checkpoint
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  bool deterministic = true;
  std::string out_dir = "run";
  nlohmann::json physics;  // humanoid model; null selects the default body
  DataConfig data;
  ImitatorConfig imitator;
  PulseConfig latent;
  TaskConfig task;
  GenerateConfig generate;
  AblationFlags ablation;
  InputPaths inputs;
  int distill_checkpoint_every = 10;  // updates
};

void to_json(nlohmann::json& j, const ExperimentConfig& c);
void from_json(const nlohmann::json& j, ExperimentConfig& c);

// Desk-scale defaults for every module.
ExperimentConfig default_config();

// Defaults, then each JSON file as a merge patch in order, then `overrides`.
ExperimentConfig load_config(const std::vector<std::string>& layers,
                             const nlohmann::json& overrides = nlohmann::json::object());

// Folds the ablation flags into the module configs they control.
ExperimentConfig resolve(const ExperimentConfig& c);

HumanoidModel experiment_model(const ExperimentConfig& c);

// SHA-1 of "blob <size>\0<bytes>", hex.
std::string git_blob_hash(const std::string& bytes);
std::string file_hash(const std::string& path);

enum class Stage { kGenData, kClean, kTrainImitator, kDistill, kTrainTask, kEval, kGenerate };
std::string to_string(Stage s);
Stage stage_from_string(const std::string& name);
std::vector<Stage> all_stages();

struct StageOutcome {
  Stage stage = Stage::kGenData;
  bool skipped = false;  // already done under the same config
  bool ok = true;
  std::string error;
};

struct RunOptions {
  bool resume = true;
  std::ostream* log = nullptr;
  long long distill_stop_after = -1;  // interrupts distillation (testing)
};

struct RunResult {
  std::vector<StageOutcome> stages;
  // 0 on success, else 10 + the failing stage's index.
  int exit_code = 0;
};

// Executes `stages` in pipeline order. A failing stage stops the run and
// leaves earlier artifacts in place.
RunResult run_experiment(const ExperimentConfig& config, const std::vector<Stage>& stages,
                         const RunOptions& options = {});

// Artifact locations of a resolved config.
struct RunPaths {
  explicit RunPaths(const ExperimentConfig& c);
  std::string at(const std::string& name) const;

  std::filesystem::path out;
  std::string raw_dataset, dataset, teacher, pulse, task;
};

PpoLearner load_teacher(const std::string& path);
std::shared_ptr<const PulseModel> load_pulse_model(const std::string& path);

// Deterministic evaluations of the artifacts in a run directory. The eval
// stage writes eval_metrics, which holds whichever of the three exist.
nlohmann::json eval_imitator_metrics(const ExperimentConfig& config);
nlohmann::json eval_latent_metrics(const ExperimentConfig& config);
nlohmann::json eval_task_metrics(const ExperimentConfig& config);
nlohmann::json eval_metrics(const ExperimentConfig& config);

// Ablation grid rows 1..6: (prior, prior action, regularization, no RL).
std::vector<AblationFlags> ablation_grid();

// One run directory per grid row under base.out_dir/row<k>, each running
// distill, train-task (sparse tracking) and eval. A shared teacher comes
// from base.inputs.teacher, or is trained once in base.out_dir/teacher.
nlohmann::json run_ablation(const ExperimentConfig& base, const RunOptions& options = {});

// ---- SVG export ----

struct CurveSeries {
  std::string label;
  std::vector<double> x, y;
};

// Per-x min / max over the x values every series shares.
struct Envelope {
  std::vector<double> x, lo, hi;
};
Envelope envelope(const std::vector<CurveSeries>& series);

// CSV with a header row; one series per distinct `seed` column value (one
// series when the column is absent). Empty files give no series.
std::vector<CurveSeries> read_curve_csv(const std::string& path, const std::string& x_col = "samples",
                                        const std::string& y_col = "eval_return");

std::string curves_svg(const std::vector<CurveSeries>& series, const std::string& x_label,
                       const std::string& y_label);

// Side-view stick figures of every `every`-th state, laid out left to right.
std::string filmstrip_svg(const HumanoidModel& model, const std::vector<HumanoidState>& states,
                          int every = 10);

void write_text(const std::string& path, const std::string& text);
std::string read_text(const std::string& path);

}  // namespace pulse

#endif  // PULSE_HARNESS_HPP_

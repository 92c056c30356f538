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

// Reference motion clips in generalized coordinates.

#ifndef PULSE_MOTION_HPP_
#define PULSE_MOTION_HPP_

#include <functional>
#include <string>
#include <vector>

#include "json.hpp"

#include "pulse/common.hpp"
#include "pulse/physics.hpp"

namespace pulse {

struct MotionClip {
  std::string name;
  double fps = 30.0;
  std::vector<Vec> q;
  std::vector<Vec> qdot;
  std::vector<std::string> tags;

  int n_frames() const { return static_cast<int>(q.size()); }
  double duration_s() const { return (n_frames() - 1) / fps; }
  bool has_tag(const std::string& tag) const;
  HumanoidState state(int frame) const;

  // Throws std::invalid_argument on fps <= 0, fewer than 2 frames, frame
  // dimension mismatch or non-finite entries.
  void validate(const HumanoidModel& model) const;
};

struct MotionDataset {
  std::vector<MotionClip> clips;
  std::vector<double> weights;  // one per clip, >= 0, positive sum

  int size() const { return static_cast<int>(clips.size()); }
  void validate(const HumanoidModel& model) const;
  int find(const std::string& name) const;  // -1 when absent
};

// Uniform weights.
MotionDataset make_dataset(std::vector<MotionClip> clips);

// Central differences in the interior, one-sided at the ends.
std::vector<Vec> finite_difference_velocities(const std::vector<Vec>& q, double fps);

// kind is one of walk, hop, squat, reach, stand. Recognized params:
//   walk:  speed (m/s), lean (rad)
//   hop:   height (m), period (s), advance (m per hop)
//   squat: depth (0..1), period (s)
//   reach: peak (shoulder rad), period (s), lean (rad)
//   stand: shoulder, elbow (rad)
// Feet rest on the ground (lowest audit point at z = 0) outside flight.
MotionClip generate_procedural(const HumanoidModel& model, const std::string& kind,
                               const nlohmann::json& params, double duration_s,
                               double fps = 30.0);

// Twelve 4 s clips at 30 fps: four walks (0.5-2 m/s), two hops, two squats,
// two reach arcs and two stands.
MotionDataset desk_dataset(const HumanoidModel& model);

using Controller = std::function<PdAction(const HumanoidState&)>;

// Simulates `controller` from `start` and captures frames at `fps`, taking
// `substeps` physics steps of 1 / (fps * substeps) per frame.
MotionClip record_rollout(const HumanoidModel& model, const HumanoidState& start,
                          const Controller& controller, double duration_s,
                          const std::string& name = "recorded", double fps = 30.0,
                          int substeps = 2);

struct Rejection {
  std::string clip;
  std::string reason;  // "discontinuity" or "penetration"
  int frame = -1;
  double value = 0.0;  // offending jump or depth, m
};

struct CleanResult {
  MotionDataset kept;
  std::vector<Rejection> rejected;
};

// Largest per-frame link jump of a clip: the distance of each audit point
// from the linear interpolation of its neighbouring frames (extrapolation at
// the two ends). Smooth motion scores O(a dt^2) regardless of speed.
struct ClipScan {
  double max_jump = 0.0;
  int jump_frame = -1;
  double max_depth = 0.0;
  int depth_frame = -1;
};
ClipScan scan_clip(const HumanoidModel& model, const MotionClip& clip);

CleanResult clean_dataset(const HumanoidModel& model, const MotionDataset& dataset,
                          double jump_thresh_m = 0.10, double penetration_thresh_m = 0.02);

struct InitialState {
  int clip = 0;
  int frame = 0;
  HumanoidState state;
};

// Clip by weight, frame uniform over [0, n - 2] so a next reference frame
// always exists.
InitialState sample_initial_state(const MotionDataset& dataset, Rng& rng);

void write_clip(const std::string& path, const MotionClip& clip);
MotionClip read_clip(const std::string& path);

// Manifest: {"clips": [{"path": ..., "weight": ...}, ...]}; clip paths are
// relative to the manifest's directory.
void write_dataset(const std::string& dir, const MotionDataset& dataset,
                   const std::string& manifest_name = "manifest.json");
MotionDataset read_dataset(const std::string& manifest_path);

}  // namespace pulse

#endif  // PULSE_MOTION_HPP_

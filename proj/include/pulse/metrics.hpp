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

// Motion-tracking metrics. Positions are meters internally; reported
// errors are millimeters (per frame, per frame squared).

#ifndef PULSE_METRICS_HPP_
#define PULSE_METRICS_HPP_

#include <string>
#include <vector>

#include "json.hpp"

#include "pulse/physics.hpp"

namespace pulse {

// One 2 x J matrix of joint positions per frame; column 0 is the root.
using PoseTrack = std::vector<Mat>;

// Link origins: the root followed by every joint location.
Mat joint_positions(const HumanoidModel& model, const Kinematics& k);
Mat joint_positions(const HumanoidModel& model, const Vec& q);
PoseTrack pose_track(const HumanoidModel& model, const std::vector<Vec>& q);

struct Metrics {
  std::string clip;
  bool success = true;
  int frames = 0;           // frames compared
  bool truncated = false;   // inputs differed in length
  double g_mpjpe = 0.0;     // mm
  double mpjpe = 0.0;       // mm, root-relative
  double acc = 0.0;         // mm / frame^2
  double vel = 0.0;         // mm / frame
};

// Success fails at the first frame whose mean per-joint distance exceeds
// `success_thresh_m` (strictly).
Metrics compute_metrics(const PoseTrack& reference, const PoseTrack& simulated,
                        double success_thresh_m = 0.5);

struct MetricsReport {
  double success_rate = 0.0;
  double g_mpjpe = 0.0;
  double mpjpe = 0.0;
  double acc = 0.0;
  double vel = 0.0;
  int episodes = 0;
  std::vector<Metrics> per_clip;
};

// Errors average over clips; success_rate is the fraction of clips.
MetricsReport aggregate(std::vector<Metrics> per_clip);

nlohmann::json to_json(const Metrics& m);
nlohmann::json to_json(const MetricsReport& r);

}  // namespace pulse

#endif  // PULSE_METRICS_HPP_

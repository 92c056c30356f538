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

#include "pulse/metrics.hpp"

#include <algorithm>

namespace pulse {

Mat joint_positions(const HumanoidModel& model, const Kinematics& k) {
  Mat p(2, model.n_links());
  for (int l = 0; l < model.n_links(); ++l) p.col(l) = k.links[l].origin;
  return p;
}

Mat joint_positions(const HumanoidModel& model, const Vec& q) {
  return joint_positions(model, forward_kinematics(model, q, Vec::Zero(model.n_dof())));
}

PoseTrack pose_track(const HumanoidModel& model, const std::vector<Vec>& q) {
  PoseTrack t;
  t.reserve(q.size());
  for (const Vec& f : q) t.push_back(joint_positions(model, f));
  return t;
}

namespace {

double mean_distance(const Mat& a, const Mat& b) { return (a - b).colwise().norm().mean(); }

Mat root_relative(const Mat& p) { return p.colwise() - Vec2(p.col(0)); }

}  // namespace

Metrics compute_metrics(const PoseTrack& reference, const PoseTrack& simulated,
                        double success_thresh_m) {
  Metrics m;
  const size_t n = std::min(reference.size(), simulated.size());
  m.truncated = reference.size() != simulated.size();
  m.frames = static_cast<int>(n);
  if (n == 0) return m;
  for (size_t f = 0; f < n; ++f) {
    check_dim(simulated[f].cols(), reference[f].cols(), "compute_metrics joints");
    const double d = mean_distance(reference[f], simulated[f]);
    if (d > success_thresh_m) m.success = false;
    m.g_mpjpe += d;
    m.mpjpe += mean_distance(root_relative(reference[f]), root_relative(simulated[f]));
  }
  m.g_mpjpe *= 1000.0 / static_cast<double>(n);
  m.mpjpe *= 1000.0 / static_cast<double>(n);
  if (n >= 2) {
    for (size_t f = 1; f < n; ++f) {
      m.vel += mean_distance(reference[f] - reference[f - 1], simulated[f] - simulated[f - 1]);
    }
    m.vel *= 1000.0 / static_cast<double>(n - 1);
  }
  if (n >= 3) {
    for (size_t f = 1; f + 1 < n; ++f) {
      const Mat ar = reference[f + 1] - 2.0 * reference[f] + reference[f - 1];
      const Mat as = simulated[f + 1] - 2.0 * simulated[f] + simulated[f - 1];
      m.acc += mean_distance(ar, as);
    }
    m.acc *= 1000.0 / static_cast<double>(n - 2);
  }
  return m;
}

MetricsReport aggregate(std::vector<Metrics> per_clip) {
  MetricsReport r;
  r.episodes = static_cast<int>(per_clip.size());
  for (const Metrics& m : per_clip) {
    r.success_rate += m.success ? 1.0 : 0.0;
    r.g_mpjpe += m.g_mpjpe;
    r.mpjpe += m.mpjpe;
    r.acc += m.acc;
    r.vel += m.vel;
  }
  if (r.episodes > 0) {
    const double inv = 1.0 / r.episodes;
    r.success_rate *= inv;
    r.g_mpjpe *= inv;
    r.mpjpe *= inv;
    r.acc *= inv;
    r.vel *= inv;
  }
  r.per_clip = std::move(per_clip);
  return r;
}

nlohmann::json to_json(const Metrics& m) {
  return {{"clip", m.clip},       {"success", m.success}, {"frames", m.frames},
          {"truncated", m.truncated}, {"g_mpjpe_mm", m.g_mpjpe}, {"mpjpe_mm", m.mpjpe},
          {"acc_mm_per_frame2", m.acc}, {"vel_mm_per_frame", m.vel}};
}

nlohmann::json to_json(const MetricsReport& r) {
  nlohmann::json clips = nlohmann::json::array();
  for (const Metrics& m : r.per_clip) clips.push_back(to_json(m));
  return {{"success_rate", r.success_rate}, {"g_mpjpe_mm", r.g_mpjpe}, {"mpjpe_mm", r.mpjpe},
          {"acc_mm_per_frame2", r.acc},     {"vel_mm_per_frame", r.vel}, {"episodes", r.episodes},
          {"per_clip", clips}};
}

}  // namespace pulse

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

#include "pulse/motion.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

namespace pulse {

namespace {

constexpr double kPi = 3.14159265358979323846;

std::vector<double> to_std(const Vec& v) { return {v.data(), v.data() + v.size()}; }

Vec from_json_vec(const nlohmann::json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

bool MotionClip::has_tag(const std::string& tag) const {
  return std::find(tags.begin(), tags.end(), tag) != tags.end();
}

HumanoidState MotionClip::state(int frame) const {
  if (frame < 0 || frame >= n_frames()) {
    throw std::out_of_range("clip " + name + ": frame " + std::to_string(frame) + " out of range");
  }
  return {q[frame], qdot[frame], frame / fps};
}

void MotionClip::validate(const HumanoidModel& model) const {
  if (!(fps > 0.0)) throw std::invalid_argument("clip " + name + ": fps must be > 0");
  if (n_frames() < 2) throw std::invalid_argument("clip " + name + ": needs at least 2 frames");
  if (qdot.size() != q.size()) throw std::invalid_argument("clip " + name + ": q/qdot length mismatch");
  for (int i = 0; i < n_frames(); ++i) {
    if (q[i].size() != model.n_dof() || qdot[i].size() != model.n_dof()) {
      throw DimensionError("clip " + name + ": frame " + std::to_string(i) + " has wrong dimension");
    }
    if (!q[i].allFinite() || !qdot[i].allFinite()) {
      throw std::invalid_argument("clip " + name + ": non-finite frame " + std::to_string(i));
    }
  }
}

void MotionDataset::validate(const HumanoidModel& model) const {
  if (clips.empty()) throw std::invalid_argument("dataset is empty");
  if (weights.size() != clips.size()) throw std::invalid_argument("dataset needs one weight per clip");
  double sum = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw std::invalid_argument("dataset weights must be >= 0");
    sum += w;
  }
  if (!(sum > 0.0)) throw std::invalid_argument("dataset weights must have a positive sum");
  for (const MotionClip& c : clips) c.validate(model);
}

int MotionDataset::find(const std::string& name) const {
  for (int i = 0; i < size(); ++i) {
    if (clips[i].name == name) return i;
  }
  return -1;
}

MotionDataset make_dataset(std::vector<MotionClip> clips) {
  MotionDataset d;
  d.weights.assign(clips.size(), 1.0);
  d.clips = std::move(clips);
  return d;
}

std::vector<Vec> finite_difference_velocities(const std::vector<Vec>& q, double fps) {
  const int n = static_cast<int>(q.size());
  std::vector<Vec> v(n);
  if (n == 0) return v;
  if (n == 1) {
    v[0] = Vec::Zero(q[0].size());
    return v;
  }
  v[0] = (q[1] - q[0]) * fps;
  v[n - 1] = (q[n - 1] - q[n - 2]) * fps;
  for (int i = 1; i + 1 < n; ++i) v[i] = (q[i + 1] - q[i - 1]) * (0.5 * fps);
  return v;
}

namespace {

struct JointIds {
  int hip_l, knee_l, ankle_l, hip_r, knee_r, ankle_r, shoulder, elbow, neck;
  explicit JointIds(const HumanoidModel& m)
      : hip_l(3 + m.joint_index("hip_l")), knee_l(3 + m.joint_index("knee_l")),
        ankle_l(3 + m.joint_index("ankle_l")), hip_r(3 + m.joint_index("hip_r")),
        knee_r(3 + m.joint_index("knee_r")), ankle_r(3 + m.joint_index("ankle_r")),
        shoulder(3 + m.joint_index("shoulder")), elbow(3 + m.joint_index("elbow")),
        neck(3 + m.joint_index("neck")) {}
};

// Sets root z so the lowest audit point touches z = lift, and, unless
// `keep_x`, root x so the mean ankle x equals `anchor_x`.
void place(const HumanoidModel& model, Vec& q, double lift, bool keep_x, double anchor_x) {
  const double x = q[0];
  q[0] = 0.0;
  q[1] = 0.0;
  const Kinematics k = forward_kinematics(model, q, Vec::Zero(model.n_dof()));
  double lowest = std::numeric_limits<double>::infinity();
  for (const Vec2& p : audit_points(model, k)) lowest = std::min(lowest, p.y());
  q[1] = lift - lowest;
  if (keep_x) {
    q[0] = x;
  } else {
    const int fl = model.link_index("foot_l"), fr = model.link_index("foot_r");
    q[0] = anchor_x - 0.5 * (k.links[fl].origin.x() + k.links[fr].origin.x());
  }
}

// Keeps both feet parallel to the ground.
void flat_feet(const JointIds& id, Vec& q) {
  q[id.ankle_l] = -(q[2] + q[id.hip_l] + q[id.knee_l]);
  q[id.ankle_r] = -(q[2] + q[id.hip_r] + q[id.knee_r]);
}

double smooth01(double s) { return 0.5 - 0.5 * std::cos(2.0 * kPi * s); }

// Hip angle that puts the ankle `offset` metres ahead of the root, given the
// rest of `q`. The ankle offset is monotone in the hip angle over the search
// interval for the knee flexions the generators use.
double hip_for_ankle_offset(const HumanoidModel& model, Vec q, int hip, double offset) {
  const int ankle = model.link_index(hip == 3 + model.joint_index("hip_l") ? "foot_l" : "foot_r");
  const auto ahead = [&](double a) {
    q[hip] = a;
    const Kinematics k = forward_kinematics(model, q, Vec::Zero(model.n_dof()));
    return k.links[ankle].origin.x() - q[0];
  };
  double lo = -1.5, hi = 1.5;
  for (int i = 0; i < 60; ++i) {
    const double mid = 0.5 * (lo + hi);
    (ahead(mid) < offset ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace

MotionClip generate_procedural(const HumanoidModel& model, const std::string& kind,
                               const nlohmann::json& params_in, double duration_s, double fps) {
  // A null config means all defaults.
  const nlohmann::json params = params_in.is_null() ? nlohmann::json::object() : params_in;
  if (!(duration_s > 0.0)) throw std::invalid_argument("generate_procedural: duration must be > 0");
  if (!(fps > 0.0)) throw std::invalid_argument("generate_procedural: fps must be > 0");
  static const std::vector<std::string> kinds = {"walk", "hop", "squat", "reach", "stand"};
  if (std::find(kinds.begin(), kinds.end(), kind) == kinds.end()) {
    throw std::invalid_argument("generate_procedural: unknown kind '" + kind + "'");
  }
  const JointIds id(model);
  const int frames = static_cast<int>(std::lround(duration_s * fps)) + 1;

  MotionClip clip;
  clip.name = params.value("name", kind);
  clip.fps = fps;
  clip.tags = {kind};
  if (kind == "walk" || kind == "stand") clip.tags.push_back("locomotion");
  clip.q.reserve(frames);

  for (int i = 0; i < frames; ++i) {
    const double t = i / fps;
    Vec q = Vec::Zero(model.n_dof());
    if (kind == "walk") {
      const double v = params.value("speed", 1.0);
      const double cadence = params.value("cadence", 0.75 + 0.2 * v);  // gait cycles per second
      const double lift = params.value("knee", 0.5 + 0.3 * v);         // swing knee flexion
      const double stride = v / (2.0 * cadence);  // root travel while one foot is planted
      q[2] = params.value("lean", -0.04 * v);
      // Each foot is planted for half a cycle and moves back under the hip
      // at exactly -v, so a constant root velocity leaves it fixed in the world.
      const auto leg = [&](double s, int hip, int knee) {
        double rel = 0.0;
        if (s < 0.5) {
          q[knee] = -0.1;
          rel = stride * (0.5 - 2.0 * s);
        } else {
          const double u = 2.0 * s - 1.0;
          q[knee] = -0.1 - lift * std::sin(kPi * u);
          // Hermite segment whose end slopes match the stance sweep, so the
          // foot leaves and meets the ground at zero world velocity.
          rel = stride * (3.0 * u * u - 2.0 * u * u * u - 0.5 - u * (1.0 - u) * (1.0 - 2.0 * u));
        }
        q[hip] = hip_for_ankle_offset(model, q, hip, rel);
      };
      const double s = cadence * t - std::floor(cadence * t);
      leg(s, id.hip_l, id.knee_l);
      leg(s + 0.5 - std::floor(s + 0.5), id.hip_r, id.knee_r);
      q[id.shoulder] = -0.6 * q[id.hip_l];
      q[id.elbow] = 0.3;
      flat_feet(id, q);
      q[0] = v * t;
      place(model, q, 0.0, true, 0.0);
    } else if (kind == "hop") {
      // Ground phase: absorb, crouch and extend with the feet planted.
      // Flight phase: ballistic, so its duration follows from the apex height.
      const double height = params.value("height", 0.12);
      const double period = params.value("period", 1.0);
      const double advance = params.value("advance", 0.0);
      const double crouch = params.value("crouch", 0.35);
      const double flight = std::min(0.5 * period, std::sqrt(8.0 * height / model.gravity));
      const double ground = period - flight;
      const double hops = std::floor(t / period);
      const double tc = t - hops * period;
      double c = 0.0, up = 0.0, forward = hops * advance;
      if (tc < ground) {
        c = crouch * std::pow(std::sin(kPi * tc / ground), 2);
      } else {
        const double u = (tc - ground) / flight;
        up = 4.0 * height * u * (1.0 - u);
        forward += advance * u;
      }
      q[2] = -0.4 * c;
      q[id.hip_l] = q[id.hip_r] = 1.0 * c;
      q[id.knee_l] = q[id.knee_r] = -1.6 * c;
      q[id.shoulder] = 0.6 * c;
      q[id.elbow] = 0.4;
      flat_feet(id, q);
      place(model, q, up, false, forward);
    } else if (kind == "squat") {
      const double depth = params.value("depth", 0.5);
      const double period = params.value("period", 2.0);
      const double c = depth * smooth01(t / period);
      q[2] = -0.35 * c;
      q[id.hip_l] = q[id.hip_r] = 1.4 * c;
      q[id.knee_l] = q[id.knee_r] = -2.0 * c;
      q[id.shoulder] = 0.9 * c;
      q[id.elbow] = 0.2 * c;
      flat_feet(id, q);
      place(model, q, 0.0, false, 0.0);
    } else if (kind == "reach") {
      const double peak = params.value("peak", 2.5);
      const double period = params.value("period", 2.0);
      const double lean = params.value("lean", 0.0);
      const double c = smooth01(t / period);
      q[2] = lean * c;
      // Hips shift back to balance a forward lean; shins stay vertical.
      q[id.hip_l] = q[id.hip_r] = -1.3 * lean * c;
      q[id.knee_l] = q[id.knee_r] = 0.3 * lean * c;
      q[id.shoulder] = peak * c;
      q[id.elbow] = 0.5 * std::sin(kPi * c);
      q[id.neck] = 0.25 * c;
      flat_feet(id, q);
      place(model, q, 0.0, false, 0.0);
    } else {  // stand
      q[id.shoulder] = params.value("shoulder", 0.0);
      q[id.elbow] = params.value("elbow", 0.0);
      place(model, q, 0.0, false, 0.0);
    }
    clip.q.push_back(std::move(q));
  }
  clip.qdot = finite_difference_velocities(clip.q, fps);
  clip.validate(model);
  return clip;
}

MotionDataset desk_dataset(const HumanoidModel& model) {
  const double d = 4.0;
  std::vector<MotionClip> clips;
  for (double v : {0.5, 1.0, 1.5, 2.0}) {
    char name[32];
    std::snprintf(name, sizeof(name), "walk_%.1f", v);
    clips.push_back(generate_procedural(model, "walk", {{"name", name}, {"speed", v}}, d));
  }
  clips.push_back(generate_procedural(model, "hop", {{"name", "hop_in_place"}, {"height", 0.10}}, d));
  clips.push_back(generate_procedural(
      model, "hop", {{"name", "hop_forward"}, {"height", 0.10}, {"advance", 0.25}}, d));
  clips.push_back(generate_procedural(model, "squat", {{"name", "squat_shallow"}, {"depth", 0.3}}, d));
  clips.push_back(generate_procedural(
      model, "squat", {{"name", "squat_deep"}, {"depth", 0.6}, {"period", 4.0}}, d));
  clips.push_back(generate_procedural(model, "reach", {{"name", "reach_overhead"}, {"peak", 2.5}}, d));
  clips.push_back(generate_procedural(
      model, "reach", {{"name", "reach_forward"}, {"peak", 1.4}, {"lean", -0.3}, {"period", 4.0}},
      d));
  clips.push_back(generate_procedural(model, "stand", {{"name", "stand"}}, d));
  clips.push_back(generate_procedural(
      model, "stand", {{"name", "stand_arm_forward"}, {"shoulder", 1.5}, {"elbow", 0.5}}, d));
  return make_dataset(std::move(clips));
}

MotionClip record_rollout(const HumanoidModel& model, const HumanoidState& start,
                          const Controller& controller, double duration_s,
                          const std::string& name, double fps, int substeps) {
  if (!(duration_s > 0.0) || !(fps > 0.0) || substeps < 1) {
    throw std::invalid_argument("record_rollout: duration, fps and substeps must be positive");
  }
  const int frames = static_cast<int>(std::lround(duration_s * fps)) + 1;
  const double dt = 1.0 / (fps * substeps);
  MotionClip clip;
  clip.name = name;
  clip.fps = fps;
  clip.tags = {"recorded"};
  HumanoidState s = start;
  clip.q.push_back(s.q);
  clip.qdot.push_back(s.qdot);
  for (int i = 1; i < frames; ++i) {
    const PdAction a = controller(s);
    for (int k = 0; k < substeps; ++k) s = step(model, s, a, dt);
    clip.q.push_back(s.q);
    clip.qdot.push_back(s.qdot);
  }
  return clip;
}

ClipScan scan_clip(const HumanoidModel& model, const MotionClip& clip) {
  ClipScan scan;
  const int n = clip.n_frames();
  std::vector<std::vector<Vec2>> pts(n);
  const Vec zero = Vec::Zero(model.n_dof());
  for (int i = 0; i < n; ++i) pts[i] = audit_points(model, forward_kinematics(model, clip.q[i], zero));
  for (int i = 0; i < n; ++i) {
    for (size_t p = 0; p < pts[i].size(); ++p) {
      const double depth = -pts[i][p].y();
      if (depth > scan.max_depth) {
        scan.max_depth = depth;
        scan.depth_frame = i;
      }
      if (n < 2) continue;
      Vec2 predicted;
      if (n == 2) {
        predicted = pts[1 - i][p];
      } else if (i == 0) {
        predicted = 2.0 * pts[1][p] - pts[2][p];
      } else if (i == n - 1) {
        predicted = 2.0 * pts[n - 2][p] - pts[n - 3][p];
      } else {
        predicted = 0.5 * (pts[i - 1][p] + pts[i + 1][p]);
      }
      const double jump = (pts[i][p] - predicted).norm();
      if (jump > scan.max_jump) {
        scan.max_jump = jump;
        scan.jump_frame = i;
      }
    }
  }
  return scan;
}

CleanResult clean_dataset(const HumanoidModel& model, const MotionDataset& dataset,
                          double jump_thresh_m, double penetration_thresh_m) {
  if (!(jump_thresh_m > 0.0) || !(penetration_thresh_m > 0.0)) {
    throw std::invalid_argument("clean_dataset: thresholds must be > 0");
  }
  CleanResult out;
  for (int c = 0; c < dataset.size(); ++c) {
    const MotionClip& clip = dataset.clips[c];
    const ClipScan scan = scan_clip(model, clip);
    if (scan.max_jump > jump_thresh_m) {
      out.rejected.push_back({clip.name, "discontinuity", scan.jump_frame, scan.max_jump});
    } else if (scan.max_depth > penetration_thresh_m) {
      out.rejected.push_back({clip.name, "penetration", scan.depth_frame, scan.max_depth});
    } else {
      out.kept.clips.push_back(clip);
      out.kept.weights.push_back(c < static_cast<int>(dataset.weights.size()) ? dataset.weights[c]
                                                                             : 1.0);
    }
  }
  return out;
}

InitialState sample_initial_state(const MotionDataset& dataset, Rng& rng) {
  if (dataset.clips.empty()) throw std::invalid_argument("sample_initial_state: empty dataset");
  std::discrete_distribution<int> pick(dataset.weights.begin(), dataset.weights.end());
  InitialState s;
  s.clip = dataset.clips.size() == 1 ? 0 : pick(rng);
  const MotionClip& clip = dataset.clips[s.clip];
  std::uniform_int_distribution<int> frame(0, std::max(0, clip.n_frames() - 2));
  s.frame = frame(rng);
  s.state = clip.state(s.frame);
  return s;
}

void write_clip(const std::string& path, const MotionClip& clip) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write clip: " + path);
  const int dims = clip.q.empty() ? 0 : static_cast<int>(clip.q[0].size());
  out << nlohmann::json{{"name", clip.name}, {"fps", clip.fps}, {"dims", dims}, {"tags", clip.tags}}.dump()
      << '\n';
  for (int i = 0; i < clip.n_frames(); ++i) {
    out << nlohmann::json{{"q", to_std(clip.q[i])}, {"qdot", to_std(clip.qdot[i])}}.dump() << '\n';
  }
}

MotionClip read_clip(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read clip: " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("empty clip file: " + path);
  const auto header = nlohmann::json::parse(line);
  MotionClip clip;
  clip.name = header.at("name").get<std::string>();
  clip.fps = header.at("fps").get<double>();
  clip.tags = header.value("tags", std::vector<std::string>{});
  const int dims = header.at("dims").get<int>();
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    clip.q.push_back(from_json_vec(j.at("q")));
    clip.qdot.push_back(from_json_vec(j.at("qdot")));
    if (clip.q.back().size() != dims || clip.qdot.back().size() != dims) {
      throw DimensionError("clip " + clip.name + ": frame dimension differs from header");
    }
  }
  return clip;
}

void write_dataset(const std::string& dir, const MotionDataset& dataset,
                   const std::string& manifest_name) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest;
  manifest["clips"] = nlohmann::json::array();
  for (int i = 0; i < dataset.size(); ++i) {
    const std::string file = dataset.clips[i].name + ".jsonl";
    write_clip((std::filesystem::path(dir) / file).string(), dataset.clips[i]);
    manifest["clips"].push_back({{"path", file}, {"weight", dataset.weights[i]}});
  }
  std::ofstream out(std::filesystem::path(dir) / manifest_name);
  if (!out) throw std::runtime_error("cannot write manifest in " + dir);
  out << manifest.dump(2) << '\n';
}

MotionDataset read_dataset(const std::string& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw std::runtime_error("cannot read manifest: " + manifest_path);
  const auto manifest = nlohmann::json::parse(in);
  const auto base = std::filesystem::path(manifest_path).parent_path();
  MotionDataset d;
  for (const auto& entry : manifest.at("clips")) {
    d.clips.push_back(read_clip((base / entry.at("path").get<std::string>()).string()));
    d.weights.push_back(entry.value("weight", 1.0));
  }
  return d;
}

}  // namespace pulse

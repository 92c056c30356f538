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

// Planar (sagittal) articulated rigid-body simulator.
//
// World coordinates are (x, z) with z up; planar vectors are stored in
// Eigen::Vector2d as (x, z). Angles are counter-clockwise positive when
// viewed with x to the right and z up, so a positive hip angle swings the
// leg forward and a negative root pitch leans the torso forward.
//
// Generalized coordinates are q = (root x, root z, root pitch, joint
// angles...). Joint j connects links[joint.parent] to links[joint.child]
// and the child index is always j + 1; link 0 is the floating base.

#ifndef PULSE_PHYSICS_HPP_
#define PULSE_PHYSICS_HPP_

#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "pulse/common.hpp"

namespace pulse {

struct Link {
  std::string name;
  double mass = 1.0;     // kg
  double inertia = 0.1;  // kg m^2 about the center of mass
  double length = 0.0;   // m, along `axis`
  Vec2 com_offset = Vec2::Zero();  // link frame
  Vec2 axis{0.0, -1.0};            // unit direction from origin to tip
};

struct Joint {
  std::string name;
  int parent = 0;
  int child = 1;
  Vec2 anchor = Vec2::Zero();  // joint location in the parent link frame
  double lower = -3.0;
  double upper = 3.0;
  double kp = 0.0;
  double kd = 0.0;
  double torque_cap = 200.0;
};

struct ContactPoint {
  int link = 0;
  Vec2 offset = Vec2::Zero();
};

struct EndEffector {
  int link = 0;
  Vec2 offset = Vec2::Zero();
};

struct ContactParams {
  bool enabled = true;
  double stiffness = 3.0e4;         // N/m
  double damping = 3.0e3;           // N s/m
  double friction = 0.9;            // Coulomb coefficient
  double tangential_damping = 5.0e3;  // N s/m, viscous friction before the cone
};

struct HumanoidModel {
  std::vector<Link> links;
  std::vector<Joint> joints;
  std::vector<ContactPoint> contact_points;
  std::map<std::string, EndEffector> end_effectors;
  ContactParams contact;
  double gravity = 9.81;
  bool fixed_base = false;          // pins (x, z, pitch) for test rigs
  double limit_stiffness = 2.0e3;   // N m / rad beyond a joint limit
  double limit_damping = 50.0;
  double max_coordinate = 1.0e3;    // divergence bounds
  double max_velocity = 2.0e2;

  int n_joints() const { return static_cast<int>(joints.size()); }
  int n_links() const { return static_cast<int>(links.size()); }
  int n_dof() const { return 3 + n_joints(); }
  int link_index(const std::string& name) const;
  int joint_index(const std::string& name) const;

  // Throws std::invalid_argument describing the first violated invariant.
  void validate() const;
};

// The default 10-link humanoid: torso (base), three-segment legs, one arm
// (upper arm, forearm) and a head; 9 actuated joints.
HumanoidModel make_humanoid();

// A fixed-base chain of `n` identical links hanging from the origin with
// passive joints, contacts disabled. Used by energy and kinematics checks.
HumanoidModel make_pendulum(int n, double length = 1.0, double mass = 1.0);

// One free rigid body with no joints.
HumanoidModel make_free_body(double mass = 1.0, double inertia = 0.1);

nlohmann::json model_to_json(const HumanoidModel& model);
HumanoidModel model_from_json(const nlohmann::json& j);

struct HumanoidState {
  Vec q;
  Vec qdot;
  double time_s = 0.0;
};

HumanoidState zero_state(const HumanoidModel& model);

// Rest pose with both feet on the ground in static equilibrium depth.
HumanoidState standing_state(const HumanoidModel& model);

struct PdAction {
  Vec targets;
};

struct LinkFrame {
  double angle = 0.0;
  double angular_velocity = 0.0;
  Vec2 origin = Vec2::Zero();
  Vec2 origin_velocity = Vec2::Zero();
  Vec2 com = Vec2::Zero();
  Vec2 com_velocity = Vec2::Zero();
};

struct Kinematics {
  std::vector<LinkFrame> links;

  Vec2 point(const HumanoidModel& model, int link, const Vec2& offset) const;
  Vec2 point_velocity(int link, const Vec2& world_point) const;
};

Kinematics forward_kinematics(const HumanoidModel& model, const Vec& q,
                              const Vec& qdot);
inline Kinematics forward_kinematics(const HumanoidModel& model,
                                     const HumanoidState& s) {
  return forward_kinematics(model, s.q, s.qdot);
}

// World positions of every contact point followed by every link origin and
// link tip. Used for ground-penetration audits.
std::vector<Vec2> audit_points(const HumanoidModel& model, const Kinematics& k);

Vec2 end_effector_position(const HumanoidModel& model, const Kinematics& k,
                           const std::string& name);

// 2 x n_dof Jacobian of a world point rigidly attached to `link`.
Mat point_jacobian(const HumanoidModel& model, const Kinematics& k, int link,
                   const Vec2& world_point);

// Joint-space inertia via the composite-rigid-body recursion.
Mat mass_matrix(const HumanoidModel& model, const Vec& q);

// Recursive Newton-Euler inverse dynamics: generalized forces required to
// realize `qddot`, including gravity.
Vec inverse_dynamics(const HumanoidModel& model, const Vec& q, const Vec& qdot,
                     const Vec& qddot);

// Coriolis, centrifugal and gravity terms: inverse_dynamics with qddot = 0.
Vec bias_forces(const HumanoidModel& model, const Vec& q, const Vec& qdot);

double kinetic_energy(const HumanoidModel& model, const Kinematics& k);
double potential_energy(const HumanoidModel& model, const Kinematics& k);

// Explicit clamp(kp (a - q) - kd qdot, +-cap), per joint.
Vec pd_torques(const HumanoidModel& model, const HumanoidState& state,
               const PdAction& action);

struct ContactForce {
  Vec2 point = Vec2::Zero();
  double penetration = 0.0;
  double normal = 0.0;
  double tangential = 0.0;
};

// Explicit penalty forces at the current state.
std::vector<ContactForce> contact_forces(const HumanoidModel& model,
                                         const HumanoidState& state);

class NumericalDivergence : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

struct StepInfo {
  Vec actuator_torques;  // per joint, within +-torque_cap
  Vec limit_torques;     // passive joint-limit springs
  std::vector<ContactForce> contacts;
};

// One semi-implicit Euler substep. Joint PD and contact spring-dampers are
// evaluated at the end-of-step velocity (linearized), then clamped to the
// torque cap, the friction cone and non-negative normal force before being
// applied. Throws NumericalDivergence when the state leaves its bounds.
HumanoidState step(const HumanoidModel& model, const HumanoidState& state,
                   const PdAction& action, double dt,
                   StepInfo* info = nullptr);

// Same integrator with raw joint torques (clamped to the cap) instead of PD.
HumanoidState step_torques(const HumanoidModel& model,
                           const HumanoidState& state, const Vec& torques,
                           double dt, StepInfo* info = nullptr);

// Trajectory export: one JSON object per line with time_s, q, qdot and
// per-link p / theta / v / omega.
nlohmann::json trajectory_frame_json(const HumanoidModel& model,
                                     const HumanoidState& state);
void write_trajectory_jsonl(const std::string& path, const HumanoidModel& model,
                            const std::vector<HumanoidState>& states);
std::vector<HumanoidState> read_trajectory_jsonl(const std::string& path);

}  // namespace pulse

#endif  // PULSE_PHYSICS_HPP_

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

#include "pulse/physics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

namespace pulse {

int HumanoidModel::link_index(const std::string& name) const {
  for (int i = 0; i < n_links(); ++i) {
    if (links[i].name == name) return i;
  }
  throw std::invalid_argument("unknown link: " + name);
}

int HumanoidModel::joint_index(const std::string& name) const {
  for (int i = 0; i < n_joints(); ++i) {
    if (joints[i].name == name) return i;
  }
  throw std::invalid_argument("unknown joint: " + name);
}

void HumanoidModel::validate() const {
  if (links.empty()) throw std::invalid_argument("model has no links");
  if (static_cast<int>(joints.size()) != n_links() - 1) {
    throw std::invalid_argument("joint graph must be a tree: need links - 1 joints");
  }
  for (const Link& l : links) {
    if (!(l.mass > 0.0)) throw std::invalid_argument("link mass must be > 0: " + l.name);
    if (!(l.inertia > 0.0)) throw std::invalid_argument("link inertia must be > 0: " + l.name);
  }
  for (int j = 0; j < n_joints(); ++j) {
    const Joint& jt = joints[j];
    if (jt.child != j + 1) {
      throw std::invalid_argument("joint " + jt.name + " must drive link " + std::to_string(j + 1));
    }
    if (jt.parent < 0 || jt.parent >= jt.child) {
      throw std::invalid_argument("joint " + jt.name + " parent must precede child");
    }
    if (jt.kp < 0.0 || jt.kd < 0.0) throw std::invalid_argument("negative gains on " + jt.name);
    if (!(jt.torque_cap > 0.0)) throw std::invalid_argument("torque_cap must be > 0 on " + jt.name);
    if (!(jt.lower <= jt.upper)) throw std::invalid_argument("inverted limits on " + jt.name);
  }
  for (const ContactPoint& c : contact_points) {
    if (c.link < 0 || c.link >= n_links()) throw std::invalid_argument("contact point on unknown link");
  }
  for (const auto& [name, ee] : end_effectors) {
    if (ee.link < 0 || ee.link >= n_links()) throw std::invalid_argument("end effector on unknown link: " + name);
  }
}

HumanoidModel make_humanoid() {
  HumanoidModel m;
  auto link = [](std::string name, double mass, double inertia, double length,
                 Vec2 com, Vec2 axis) {
    return Link{std::move(name), mass, inertia, length, com, axis};
  };
  const Vec2 up(0.0, 1.0), down(0.0, -1.0);
  // The foot runs from the ankle to the toe so its tip is a contact point.
  const Vec2 heel(-0.09, -0.06), toe(0.17, -0.06);
  const Vec2 fwd = toe.normalized();
  const double foot = toe.norm();
  m.links = {
      link("torso", 30.0, 0.8, 0.5, {0.02, 0.22}, up),
      link("thigh_l", 8.0, 0.15, 0.45, {0.0, -0.2}, down),
      link("shin_l", 4.0, 0.07, 0.45, {0.0, -0.2}, down),
      link("foot_l", 1.2, 0.006, foot, {0.05, -0.03}, fwd),
      link("thigh_r", 8.0, 0.15, 0.45, {0.0, -0.2}, down),
      link("shin_r", 4.0, 0.07, 0.45, {0.0, -0.2}, down),
      link("foot_r", 1.2, 0.006, foot, {0.05, -0.03}, fwd),
      link("upper_arm", 2.5, 0.02, 0.3, {0.0, -0.14}, down),
      link("forearm", 2.0, 0.02, 0.3, {0.0, -0.14}, down),
      link("head", 5.0, 0.03, 0.25, {0.0, 0.12}, up),
  };
  auto joint = [](std::string name, int parent, int child, Vec2 anchor,
                  double lo, double hi, double kp, double kd) {
    return Joint{std::move(name), parent, child, anchor, lo, hi, kp, kd, 200.0};
  };
  m.joints = {
      joint("hip_l", 0, 1, {0.0, 0.0}, -0.8, 1.8, 800.0, 80.0),
      joint("knee_l", 1, 2, {0.0, -0.45}, -2.4, 0.05, 800.0, 80.0),
      joint("ankle_l", 2, 3, {0.0, -0.45}, -0.8, 0.8, 1000.0, 100.0),
      joint("hip_r", 0, 4, {0.0, 0.0}, -0.8, 1.8, 800.0, 80.0),
      joint("knee_r", 4, 5, {0.0, -0.45}, -2.4, 0.05, 800.0, 80.0),
      joint("ankle_r", 5, 6, {0.0, -0.45}, -0.8, 0.8, 1000.0, 100.0),
      joint("shoulder", 0, 7, {0.0, 0.48}, -1.2, 3.0, 150.0, 15.0),
      joint("elbow", 7, 8, {0.0, -0.3}, 0.0, 2.5, 100.0, 10.0),
      joint("neck", 0, 9, {0.0, 0.5}, -0.6, 0.6, 100.0, 10.0),
  };
  m.contact_points = {
      {3, heel}, {3, toe}, {6, heel}, {6, toe},
      {0, {0.0, 0.0}},  {0, {0.0, 0.5}},  {9, {0.0, 0.25}},
      {8, {0.0, -0.3}}, {7, {0.0, -0.3}}, {2, {0.0, 0.0}}, {5, {0.0, 0.0}},
      {3, {0.0, 0.0}},  {6, {0.0, 0.0}},
  };
  m.end_effectors = {
      {"head", {9, {0.0, 0.25}}},
      {"hand", {8, {0.0, -0.3}}},
      {"foot_l", {3, toe}},
      {"foot_r", {6, toe}},
  };
  m.validate();
  return m;
}

HumanoidModel make_pendulum(int n, double length, double mass) {
  if (n < 1) throw std::invalid_argument("pendulum needs at least one link");
  HumanoidModel m;
  m.fixed_base = true;
  m.contact.enabled = false;
  m.links.push_back(Link{"base", 1.0, 1.0, 0.0, Vec2::Zero(), {0.0, -1.0}});
  for (int i = 0; i < n; ++i) {
    m.links.push_back(Link{"rod" + std::to_string(i), mass, mass * length * length / 12.0,
                           length, {0.0, -0.5 * length}, {0.0, -1.0}});
    const Vec2 anchor = i == 0 ? Vec2::Zero() : Vec2(0.0, -length);
    m.joints.push_back(Joint{"pin" + std::to_string(i), i, i + 1, anchor, -1.0e3, 1.0e3,
                             0.0, 0.0, 1.0e6});
  }
  m.end_effectors["tip"] = {n, {0.0, -length}};
  m.validate();
  return m;
}

HumanoidModel make_free_body(double mass, double inertia) {
  HumanoidModel m;
  m.links.push_back(Link{"body", mass, inertia, 0.0, Vec2::Zero(), {1.0, 0.0}});
  m.contact_points.push_back({0, Vec2::Zero()});
  m.validate();
  return m;
}

namespace {

nlohmann::json vec2_json(const Vec2& v) { return {v.x(), v.y()}; }
Vec2 json_vec2(const nlohmann::json& j) { return {j.at(0).get<double>(), j.at(1).get<double>()}; }

}  // namespace

nlohmann::json model_to_json(const HumanoidModel& m) {
  nlohmann::json j;
  for (const Link& l : m.links) {
    j["links"].push_back({{"name", l.name}, {"mass", l.mass}, {"inertia", l.inertia},
                          {"length", l.length}, {"com_offset", vec2_json(l.com_offset)},
                          {"axis", vec2_json(l.axis)}});
  }
  j["joints"] = nlohmann::json::array();
  for (const Joint& jt : m.joints) {
    j["joints"].push_back({{"name", jt.name}, {"parent", jt.parent}, {"child", jt.child},
                           {"anchor", vec2_json(jt.anchor)}, {"lower", jt.lower},
                           {"upper", jt.upper}, {"kp", jt.kp}, {"kd", jt.kd},
                           {"torque_cap", jt.torque_cap}});
  }
  j["contact_points"] = nlohmann::json::array();
  for (const ContactPoint& c : m.contact_points) {
    j["contact_points"].push_back({{"link", c.link}, {"offset", vec2_json(c.offset)}});
  }
  j["end_effectors"] = nlohmann::json::object();
  for (const auto& [name, ee] : m.end_effectors) {
    j["end_effectors"][name] = {{"link", ee.link}, {"offset", vec2_json(ee.offset)}};
  }
  j["contact"] = {{"enabled", m.contact.enabled}, {"stiffness", m.contact.stiffness},
                  {"damping", m.contact.damping}, {"friction", m.contact.friction},
                  {"tangential_damping", m.contact.tangential_damping}};
  j["gravity"] = m.gravity;
  j["fixed_base"] = m.fixed_base;
  j["limit_stiffness"] = m.limit_stiffness;
  j["limit_damping"] = m.limit_damping;
  j["max_coordinate"] = m.max_coordinate;
  j["max_velocity"] = m.max_velocity;
  return j;
}

HumanoidModel model_from_json(const nlohmann::json& j) {
  HumanoidModel m;
  for (const auto& l : j.at("links")) {
    m.links.push_back(Link{l.at("name"), l.at("mass"), l.at("inertia"), l.at("length"),
                           json_vec2(l.at("com_offset")), json_vec2(l.at("axis"))});
  }
  for (const auto& jt : j.at("joints")) {
    m.joints.push_back(Joint{jt.at("name"), jt.at("parent"), jt.at("child"),
                             json_vec2(jt.at("anchor")), jt.at("lower"), jt.at("upper"),
                             jt.at("kp"), jt.at("kd"), jt.at("torque_cap")});
  }
  const nlohmann::json points = j.value("contact_points", nlohmann::json::array());
  for (const auto& c : points) {
    m.contact_points.push_back({c.at("link"), json_vec2(c.at("offset"))});
  }
  const nlohmann::json effectors = j.value("end_effectors", nlohmann::json::object());
  for (const auto& [name, ee] : effectors.items()) {
    m.end_effectors[name] = {ee.at("link"), json_vec2(ee.at("offset"))};
  }
  if (j.contains("contact")) {
    const auto& c = j["contact"];
    m.contact.enabled = c.value("enabled", m.contact.enabled);
    m.contact.stiffness = c.value("stiffness", m.contact.stiffness);
    m.contact.damping = c.value("damping", m.contact.damping);
    m.contact.friction = c.value("friction", m.contact.friction);
    m.contact.tangential_damping = c.value("tangential_damping", m.contact.tangential_damping);
  }
  m.gravity = j.value("gravity", m.gravity);
  m.fixed_base = j.value("fixed_base", m.fixed_base);
  m.limit_stiffness = j.value("limit_stiffness", m.limit_stiffness);
  m.limit_damping = j.value("limit_damping", m.limit_damping);
  m.max_coordinate = j.value("max_coordinate", m.max_coordinate);
  m.max_velocity = j.value("max_velocity", m.max_velocity);
  m.validate();
  return m;
}

HumanoidState zero_state(const HumanoidModel& model) {
  return {Vec::Zero(model.n_dof()), Vec::Zero(model.n_dof()), 0.0};
}

HumanoidState standing_state(const HumanoidModel& model) {
  HumanoidState s = zero_state(model);
  const Kinematics k = forward_kinematics(model, s);
  double lowest = 0.0;
  int touching = 0;
  for (const ContactPoint& c : model.contact_points) {
    lowest = std::min(lowest, k.point(model, c.link, c.offset).y());
  }
  for (const ContactPoint& c : model.contact_points) {
    if (k.point(model, c.link, c.offset).y() < lowest + 1e-9) ++touching;
  }
  double mass = 0.0;
  for (const Link& l : model.links) mass += l.mass;
  const double sink = touching > 0 && model.contact.enabled
                          ? mass * model.gravity / (touching * model.contact.stiffness)
                          : 0.0;
  s.q[1] = -lowest - sink;
  return s;
}

Vec2 Kinematics::point(const HumanoidModel& model, int link, const Vec2& offset) const {
  (void)model;
  const LinkFrame& f = links.at(link);
  return f.origin + rotate(offset, f.angle);
}

Vec2 Kinematics::point_velocity(int link, const Vec2& world_point) const {
  const LinkFrame& f = links.at(link);
  return f.origin_velocity + f.angular_velocity * perp(world_point - f.origin);
}

Kinematics forward_kinematics(const HumanoidModel& model, const Vec& q, const Vec& qdot) {
  check_dim(q.size(), model.n_dof(), "forward_kinematics q");
  check_dim(qdot.size(), model.n_dof(), "forward_kinematics qdot");
  Kinematics k;
  k.links.resize(model.n_links());
  LinkFrame& root = k.links[0];
  root.angle = q[2];
  root.angular_velocity = qdot[2];
  root.origin = {q[0], q[1]};
  root.origin_velocity = {qdot[0], qdot[1]};
  auto finish = [&](int i) {
    LinkFrame& f = k.links[i];
    const Vec2 r = rotate(model.links[i].com_offset, f.angle);
    f.com = f.origin + r;
    f.com_velocity = f.origin_velocity + f.angular_velocity * perp(r);
  };
  finish(0);
  for (int j = 0; j < model.n_joints(); ++j) {
    const Joint& jt = model.joints[j];
    const LinkFrame& p = k.links[jt.parent];
    LinkFrame& c = k.links[jt.child];
    c.angle = p.angle + q[3 + j];
    c.angular_velocity = p.angular_velocity + qdot[3 + j];
    const Vec2 r = rotate(jt.anchor, p.angle);
    c.origin = p.origin + r;
    c.origin_velocity = p.origin_velocity + p.angular_velocity * perp(r);
    finish(jt.child);
  }
  return k;
}

std::vector<Vec2> audit_points(const HumanoidModel& model, const Kinematics& k) {
  std::vector<Vec2> pts;
  pts.reserve(model.contact_points.size() + 2 * model.links.size());
  for (const ContactPoint& c : model.contact_points) pts.push_back(k.point(model, c.link, c.offset));
  for (int i = 0; i < model.n_links(); ++i) {
    pts.push_back(k.links[i].origin);
    pts.push_back(k.point(model, i, model.links[i].length * model.links[i].axis));
  }
  return pts;
}

Vec2 end_effector_position(const HumanoidModel& model, const Kinematics& k,
                           const std::string& name) {
  auto it = model.end_effectors.find(name);
  if (it == model.end_effectors.end()) throw std::invalid_argument("unknown end effector: " + name);
  return k.point(model, it->second.link, it->second.offset);
}

namespace {

// Parent joint dof of every link (-1 for the base), and the ancestor test
// used by the Jacobian and CRBA routines.
int joint_dof_of_link(int link) { return link == 0 ? -1 : 3 + (link - 1); }

int parent_link(const HumanoidModel& m, int link) {
  return link == 0 ? -1 : m.joints[link - 1].parent;
}

// Rotation center of a revolute dof (the base pitch rotates about the base
// origin, joint j rotates about the origin of link j + 1).
Vec2 dof_pivot(const Kinematics& k, int dof) {
  return dof == 2 ? k.links[0].origin : k.links[dof - 2].origin;
}

// Planar spatial inertia about the world origin in (omega, vx, vz) order.
Eigen::Matrix3d body_inertia(double m, double ic, const Vec2& c) {
  Eigen::Matrix3d I;
  I << ic + m * c.squaredNorm(), -m * c.y(), m * c.x(),
       -m * c.y(), m, 0.0,
       m * c.x(), 0.0, m;
  return I;
}

Eigen::Vector3d dof_axis(const Kinematics& k, int dof) {
  if (dof == 0) return {0.0, 1.0, 0.0};
  if (dof == 1) return {0.0, 0.0, 1.0};
  const Vec2 o = dof_pivot(k, dof);
  return {1.0, o.y(), -o.x()};
}

Mat mass_matrix_from(const HumanoidModel& model, const Kinematics& k) {
  const int n = model.n_dof();
  const int nl = model.n_links();
  std::vector<Eigen::Matrix3d> composite(nl);
  for (int i = 0; i < nl; ++i) {
    composite[i] = body_inertia(model.links[i].mass, model.links[i].inertia, k.links[i].com);
  }
  for (int i = nl - 1; i > 0; --i) composite[parent_link(model, i)] += composite[i];

  Mat M = Mat::Zero(n, n);
  for (int d = 0; d < n; ++d) {
    const int sub = d < 3 ? 0 : d - 2;
    const Eigen::Vector3d f = composite[sub] * dof_axis(k, d);
    // Walk from the dof's own link toward the base.
    for (int l = sub; l >= 0; l = parent_link(model, l)) {
      if (l == 0) {
        for (int i = 0; i < 3; ++i) {
          if (d < 3 && i > d) continue;
          M(i, d) = M(d, i) = dof_axis(k, i).dot(f);
        }
      } else {
        const int i = joint_dof_of_link(l);
        if (i > d) continue;
        M(i, d) = M(d, i) = dof_axis(k, i).dot(f);
      }
    }
  }
  return M;
}

Vec inverse_dynamics_from(const HumanoidModel& model, const Kinematics& k, const Vec& qddot) {
  const int nl = model.n_links();
  const Vec2 g(0.0, -model.gravity);
  std::vector<double> alpha(nl);
  std::vector<Vec2> acc_origin(nl), acc_com(nl), force(nl);
  std::vector<double> moment(nl);

  alpha[0] = qddot[2];
  acc_origin[0] = {qddot[0], qddot[1]};
  auto com_acc = [&](int i) {
    const LinkFrame& f = k.links[i];
    const Vec2 r = f.com - f.origin;
    acc_com[i] = acc_origin[i] + alpha[i] * perp(r) -
                 f.angular_velocity * f.angular_velocity * r;
  };
  com_acc(0);
  for (int j = 0; j < model.n_joints(); ++j) {
    const int p = model.joints[j].parent, c = j + 1;
    const LinkFrame& fp = k.links[p];
    const Vec2 r = k.links[c].origin - fp.origin;
    alpha[c] = alpha[p] + qddot[3 + j];
    acc_origin[c] = acc_origin[p] + alpha[p] * perp(r) -
                    fp.angular_velocity * fp.angular_velocity * r;
    com_acc(c);
  }
  for (int i = 0; i < nl; ++i) {
    const Link& l = model.links[i];
    force[i] = l.mass * (acc_com[i] - g);
    moment[i] = l.inertia * alpha[i] + cross2(k.links[i].com - k.links[i].origin, force[i]);
  }
  Vec tau(model.n_dof());
  for (int c = nl - 1; c > 0; --c) {
    const int p = model.joints[c - 1].parent;
    tau[3 + (c - 1)] = moment[c];
    force[p] += force[c];
    moment[p] += moment[c] + cross2(k.links[c].origin - k.links[p].origin, force[c]);
  }
  tau[0] = force[0].x();
  tau[1] = force[0].y();
  tau[2] = moment[0];
  return tau;
}

}  // namespace

Mat point_jacobian(const HumanoidModel& model, const Kinematics& k, int link,
                   const Vec2& world_point) {
  Mat J = Mat::Zero(2, model.n_dof());
  J(0, 0) = 1.0;
  J(1, 1) = 1.0;
  J.col(2) = perp(world_point - k.links[0].origin);
  for (int l = link; l > 0; l = parent_link(model, l)) {
    J.col(joint_dof_of_link(l)) = perp(world_point - k.links[l].origin);
  }
  return J;
}

Mat mass_matrix(const HumanoidModel& model, const Vec& q) {
  return mass_matrix_from(model, forward_kinematics(model, q, Vec::Zero(model.n_dof())));
}

Vec inverse_dynamics(const HumanoidModel& model, const Vec& q, const Vec& qdot,
                     const Vec& qddot) {
  check_dim(qddot.size(), model.n_dof(), "inverse_dynamics qddot");
  return inverse_dynamics_from(model, forward_kinematics(model, q, qdot), qddot);
}

Vec bias_forces(const HumanoidModel& model, const Vec& q, const Vec& qdot) {
  return inverse_dynamics(model, q, qdot, Vec::Zero(model.n_dof()));
}

double kinetic_energy(const HumanoidModel& model, const Kinematics& k) {
  double e = 0.0;
  for (int i = 0; i < model.n_links(); ++i) {
    const LinkFrame& f = k.links[i];
    e += 0.5 * model.links[i].mass * f.com_velocity.squaredNorm() +
         0.5 * model.links[i].inertia * f.angular_velocity * f.angular_velocity;
  }
  return e;
}

double potential_energy(const HumanoidModel& model, const Kinematics& k) {
  double e = 0.0;
  for (int i = 0; i < model.n_links(); ++i) e += model.links[i].mass * model.gravity * k.links[i].com.y();
  return e;
}

Vec pd_torques(const HumanoidModel& model, const HumanoidState& state, const PdAction& action) {
  const int nj = model.n_joints();
  check_dim(action.targets.size(), nj, "pd_torques action");
  check_dim(state.q.size(), model.n_dof(), "pd_torques q");
  Vec tau(nj);
  for (int j = 0; j < nj; ++j) {
    const Joint& jt = model.joints[j];
    const double t = jt.kp * (action.targets[j] - state.q[3 + j]) - jt.kd * state.qdot[3 + j];
    tau[j] = std::clamp(t, -jt.torque_cap, jt.torque_cap);
  }
  return tau;
}

std::vector<ContactForce> contact_forces(const HumanoidModel& model, const HumanoidState& state) {
  const Kinematics k = forward_kinematics(model, state);
  const ContactParams& cp = model.contact;
  std::vector<ContactForce> out;
  out.reserve(model.contact_points.size());
  for (const ContactPoint& c : model.contact_points) {
    ContactForce f;
    f.point = k.point(model, c.link, c.offset);
    if (cp.enabled && f.point.y() < 0.0) {
      f.penetration = -f.point.y();
      const Vec2 v = k.point_velocity(c.link, f.point);
      f.normal = std::max(0.0, cp.stiffness * f.penetration - cp.damping * v.y());
      const double limit = cp.friction * f.normal;
      f.tangential = std::clamp(-cp.tangential_damping * v.x(), -limit, limit);
    }
    out.push_back(f);
  }
  return out;
}

namespace {

enum class Drive { kPd, kTorque };

// Velocity-dependent bias terms and friction-cone limits are refreshed from
// the current end-of-step velocity this many times; fixed for determinism.
constexpr int kOuterPasses = 3;
constexpr int kMaxNewtonIterations = 50;

// One implicit force along `row`: clamp(offset - gain * row.u, lo, hi) as a
// generalized force row^T. It is minus the derivative of the convex
// potential H(s) / gain, so the implicit step is a convex minimization.
struct ImplicitForce {
  Eigen::RowVectorXd row;
  double offset = 0.0;
  double gain = 0.0;
  double lo = -std::numeric_limits<double>::infinity();
  double hi = std::numeric_limits<double>::infinity();

  double arg(const Vec& u) const { return offset - gain * row.dot(u); }
  double force(const Vec& u) const { return std::clamp(arg(u), lo, hi); }
  bool linear(double s) const { return s > lo && s < hi; }
  double potential(const Vec& u) const {
    const double s = arg(u);
    double H;
    if (s > hi) {
      H = hi * s - 0.5 * hi * hi;
    } else if (s < lo) {
      H = lo * s - 0.5 * lo * lo;
    } else {
      H = 0.5 * s * s;
    }
    return H / gain;
  }
};

struct ActiveContact {
  int index;
  double depth;  // negative while still above ground
  Eigen::RowVectorXd jx, jz;
};

// Minimizes 0.5 u'Mu - b'u + dt sum(potentials) over the last m coordinates
// by Newton's method with backtracking; returns the minimizer.
Vec solve_implicit(const Mat& M, const Vec& b, const std::vector<ImplicitForce>& forces,
                   double dt, int m, const Vec& start) {
  const int n = static_cast<int>(b.size());
  auto objective = [&](const Vec& u) {
    double phi = 0.5 * u.dot(M * u) - b.dot(u);
    for (const ImplicitForce& f : forces) phi += dt * f.potential(u);
    return phi;
  };
  Vec u = start;
  u.head(n - m).setZero();
  double phi = objective(u);
  for (int iter = 0; iter < kMaxNewtonIterations; ++iter) {
    Vec grad = M * u - b;
    Mat hess = M;
    std::vector<char> pattern(forces.size());
    for (size_t i = 0; i < forces.size(); ++i) {
      const ImplicitForce& f = forces[i];
      const double s = f.arg(u);
      grad -= dt * std::clamp(s, f.lo, f.hi) * f.row.transpose();
      pattern[i] = f.linear(s);
      if (pattern[i]) hess += dt * f.gain * f.row.transpose() * f.row;
    }
    Vec delta = Vec::Zero(n);
    delta.tail(m) = -hess.bottomRightCorner(m, m).ldlt().solve(grad.tail(m));
    const double slope = grad.dot(delta);
    if (!(slope < 0.0)) break;  // stationary to rounding
    double t = 1.0;
    Vec trial = u + delta;
    double phi_trial = objective(trial);
    while (phi_trial > phi + 1e-4 * t * slope && t > 1e-10) {
      t *= 0.5;
      trial = u + t * delta;
      phi_trial = objective(trial);
    }
    u = trial;
    phi = phi_trial;
    // A full step that keeps the piecewise-linear pattern is exact.
    if (t == 1.0) {
      bool same = true;
      for (size_t i = 0; i < forces.size() && same; ++i) {
        same = forces[i].linear(forces[i].arg(u)) == static_cast<bool>(pattern[i]);
      }
      if (same) break;
    }
  }
  return u;
}

HumanoidState integrate(const HumanoidModel& model, const HumanoidState& state, Drive drive,
                        const Vec& input, double dt, StepInfo* info) {
  const int n = model.n_dof(), nj = model.n_joints();
  check_dim(state.q.size(), n, "step q");
  check_dim(state.qdot.size(), n, "step qdot");
  check_dim(input.size(), nj, drive == Drive::kPd ? "step action" : "step torques");
  if (!(dt > 0.0)) throw std::invalid_argument("step: dt must be > 0");
  if (!state.q.allFinite() || !state.qdot.allFinite()) {
    throw NumericalDivergence("step: non-finite input state");
  }

  const Vec& q = state.q;
  const Vec& qd = state.qdot;
  const Kinematics k = forward_kinematics(model, q, qd);
  const Mat M = mass_matrix_from(model, k);
  Vec h = inverse_dynamics_from(model, k, Vec::Zero(n));
  const ContactParams& cp = model.contact;
  const int first = model.fixed_base ? 3 : 0;
  const int m = n - first;

  Vec target(nj);
  for (int j = 0; j < nj; ++j) {
    const Joint& jt = model.joints[j];
    target[j] = drive == Drive::kPd ? std::clamp(input[j], jt.lower, jt.upper)
                                    : std::clamp(input[j], -jt.torque_cap, jt.torque_cap);
  }

  // Forces that do not depend on the end-of-step velocity.
  Vec fixed = Vec::Zero(n);
  std::vector<ImplicitForce> joint_forces;
  std::vector<int> pd_force(nj, -1), limit_force(nj, -1);
  for (int j = 0; j < nj; ++j) {
    const Joint& jt = model.joints[j];
    const int d = 3 + j;
    Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(n);
    row[d] = 1.0;
    if (drive == Drive::kTorque) {
      fixed[d] += target[j];
    } else {
      const double gain = jt.kp * dt + jt.kd;
      const double offset = jt.kp * (target[j] - q[d]);
      if (gain > 0.0) {
        pd_force[j] = static_cast<int>(joint_forces.size());
        joint_forces.push_back({row, offset, gain, -jt.torque_cap, jt.torque_cap});
      } else {
        fixed[d] += std::clamp(offset, -jt.torque_cap, jt.torque_cap);
      }
    }
    const double excess = q[d] > jt.upper ? q[d] - jt.upper : (q[d] < jt.lower ? q[d] - jt.lower : 0.0);
    if (excess != 0.0) {
      limit_force[j] = static_cast<int>(joint_forces.size());
      joint_forces.push_back({row, -model.limit_stiffness * excess,
                              model.limit_stiffness * dt + model.limit_damping});
    }
  }

  std::vector<ActiveContact> active;
  if (cp.enabled) {
    for (int i = 0; i < static_cast<int>(model.contact_points.size()); ++i) {
      const ContactPoint& c = model.contact_points[i];
      const Vec2 p = k.point(model, c.link, c.offset);
      // Points that may reach the ground within the step are included; the
      // implicit spring acts on the end-of-step depth, so it engages at onset.
      const double vz = k.point_velocity(c.link, p).y();
      if (p.y() >= 0.0 && p.y() + 2.0 * dt * vz >= 0.0) continue;
      const Mat J = point_jacobian(model, k, c.link, p);
      active.push_back({i, -p.y(), J.row(0), J.row(1)});
    }
  }
  const double normal_gain = cp.stiffness * dt + cp.damping;
  auto normal_force = [&](const ActiveContact& c) {
    return ImplicitForce{c.jz, cp.stiffness * c.depth, normal_gain, 0.0};
  };

  Vec u = qd;
  for (int pass = 0; pass < kOuterPasses; ++pass) {
    if (pass > 0) {
      h = inverse_dynamics_from(model, forward_kinematics(model, q, 0.5 * (qd + u)),
                                Vec::Zero(n));
    }
    std::vector<ImplicitForce> forces = joint_forces;
    for (const ActiveContact& c : active) {
      const ImplicitForce nf = normal_force(c);
      forces.push_back(nf);
      if (cp.tangential_damping > 0.0) {
        const double cone = cp.friction * nf.force(u);
        forces.push_back({c.jx, 0.0, cp.tangential_damping, -cone, cone});
      }
    }
    u = solve_implicit(M, M * qd + dt * (fixed - h), forces, dt, m, u);
  }

  // Final forces at the solved velocity, clamped, then applied explicitly.
  Vec actuator(nj), limit = Vec::Zero(nj);
  Vec f = fixed - h;
  for (int j = 0; j < nj; ++j) {
    const int d = 3 + j;
    actuator[j] = pd_force[j] >= 0 ? joint_forces[pd_force[j]].force(u)
                                   : (drive == Drive::kTorque ? target[j] : fixed[d]);
    if (limit_force[j] >= 0) {
      limit[j] = joint_forces[limit_force[j]].force(u);
      f[d] += limit[j];
    }
    if (pd_force[j] >= 0) f[d] += actuator[j];
  }
  std::vector<ContactForce> contacts;
  if (info) {
    contacts.resize(model.contact_points.size());
    for (size_t i = 0; i < model.contact_points.size(); ++i) {
      const ContactPoint& c = model.contact_points[i];
      contacts[i].point = k.point(model, c.link, c.offset);
    }
  }
  for (const ActiveContact& c : active) {
    const double normal = normal_force(c).force(u);
    const double cone = cp.friction * normal;
    const double tangential = std::clamp(-cp.tangential_damping * c.jx.dot(u), -cone, cone);
    f += normal * c.jz.transpose() + tangential * c.jx.transpose();
    if (info) {
      contacts[c.index].penetration = std::max(0.0, c.depth);
      contacts[c.index].normal = normal;
      contacts[c.index].tangential = tangential;
    }
  }

  Vec qdd = Vec::Zero(n);
  qdd.tail(m) = M.bottomRightCorner(m, m).ldlt().solve(f.tail(m));
  HumanoidState next;
  next.qdot = qd + dt * qdd;
  next.q = q + dt * next.qdot;
  next.time_s = state.time_s + dt;

  for (int i = 0; i < n; ++i) {
    if (!std::isfinite(next.q[i]) || !std::isfinite(next.qdot[i]) ||
        std::abs(next.q[i]) > model.max_coordinate || std::abs(next.qdot[i]) > model.max_velocity) {
      throw NumericalDivergence("step: coordinate " + std::to_string(i) + " left its bounds");
    }
  }
  if (info) {
    info->actuator_torques = std::move(actuator);
    info->limit_torques = std::move(limit);
    info->contacts = std::move(contacts);
  }
  return next;
}

}  // namespace

HumanoidState step(const HumanoidModel& model, const HumanoidState& state, const PdAction& action,
                   double dt, StepInfo* info) {
  return integrate(model, state, Drive::kPd, action.targets, dt, info);
}

HumanoidState step_torques(const HumanoidModel& model, const HumanoidState& state,
                           const Vec& torques, double dt, StepInfo* info) {
  return integrate(model, state, Drive::kTorque, torques, dt, info);
}

nlohmann::json trajectory_frame_json(const HumanoidModel& model, const HumanoidState& s) {
  const Kinematics k = forward_kinematics(model, s);
  nlohmann::json links = nlohmann::json::array();
  for (const LinkFrame& f : k.links) {
    links.push_back({{"p", {f.com.x(), f.com.y()}},
                     {"theta", f.angle},
                     {"v", {f.com_velocity.x(), f.com_velocity.y()}},
                     {"omega", f.angular_velocity}});
  }
  return {{"time_s", s.time_s},
          {"q", std::vector<double>(s.q.data(), s.q.data() + s.q.size())},
          {"qdot", std::vector<double>(s.qdot.data(), s.qdot.data() + s.qdot.size())},
          {"links", links}};
}

void write_trajectory_jsonl(const std::string& path, const HumanoidModel& model,
                            const std::vector<HumanoidState>& states) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  for (const HumanoidState& s : states) out << trajectory_frame_json(model, s).dump() << '\n';
}

std::vector<HumanoidState> read_trajectory_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::vector<HumanoidState> states;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    const auto q = j.at("q").get<std::vector<double>>();
    const auto qd = j.at("qdot").get<std::vector<double>>();
    states.push_back({Eigen::Map<const Vec>(q.data(), q.size()),
                      Eigen::Map<const Vec>(qd.data(), qd.size()), j.at("time_s").get<double>()});
  }
  return states;
}

}  // namespace pulse

#include <algorithm>
#include <cmath>

#include "ragmark/error.hpp"
#include "ragmark/physics.hpp"

namespace ragmark {
namespace {

Vec3 v3(const Vec3d& a) { return {a[0], a[1], a[2]}; }
Quat q4(const Quat4d& q) { return Quat(q[0], q[1], q[2], q[3]).normalized(); }

// Two unit vectors completing `axis` to an orthonormal basis.
std::pair<Vec3, Vec3> perpendiculars(const Vec3& axis) {
  Vec3 ref = std::abs(axis.x()) < 0.9 ? Vec3::UnitX() : Vec3::UnitY();
  Vec3 p1 = axis.cross(ref).normalized();
  Vec3 p2 = axis.cross(p1).normalized();
  return {p1, p2};
}

// Nearest ancestor that is not a synthesized link.
int real_parent(const ArticulatedModel& m, int body) {
  int p = m.bodies[body].parent;
  while (p != kWorld && m.bodies[p].synthesized()) p = m.bodies[p].parent;
  return p;
}

int real_parent_or_self(const ArticulatedModel& m, int body) {
  while (body != kWorld && m.bodies[body].synthesized()) body = m.bodies[body].parent;
  return body;
}

bool collides(const GeomSpec& a, const GeomSpec& b) {
  return (a.contype & b.conaffinity) != 0 || (b.contype & a.conaffinity) != 0;
}

bool self_collidable(GeomShape s) { return s == GeomShape::Sphere || s == GeomShape::Capsule; }

}  // namespace

void PhysicsConfig::validate() const {
  if (!(dt > 0) || !std::isfinite(dt)) throw Error(ErrorCode::InvalidValue, "dt must be > 0");
  if (solver_iterations < 1) throw Error(ErrorCode::InvalidValue, "solver_iterations must be >= 1");
  if (!(baumgarte_beta >= 0 && baumgarte_beta <= 1)) {
    throw Error(ErrorCode::InvalidValue, "baumgarte_beta must be in [0, 1]");
  }
  if (!(friction_default >= 0)) throw Error(ErrorCode::InvalidValue, "friction_default must be >= 0");
  if (!gravity.allFinite()) throw Error(ErrorCode::InvalidValue, "gravity must be finite");
}

Articulation::Articulation(ArticulatedModel model) : model_(std::move(model)) {
  validate_model(model_);
  for (const auto& j : model_.joints) {
    if (!j.extra_axes.empty()) {
      throw Error(ErrorCode::InvalidValue, "joint '" + j.name + "' is multi-axis; expand the model first");
    }
  }
  const int n = body_count();
  inv_mass_.resize(n);
  inv_inertia_.resize(n);
  for (int i = 0; i < n; ++i) {
    const auto& b = model_.bodies[i];
    inv_mass_[i] = 1.0 / b.mass;
    inv_inertia_[i] = Vec3(1.0 / b.inertia[0], 1.0 / b.inertia[1], 1.0 / b.inertia[2]);
  }

  joints_.reserve(model_.joints.size());
  for (size_t ji = 0; ji < model_.joints.size(); ++ji) {
    const JointSpec& spec = model_.joints[ji];
    const BodySpec& child = model_.bodies[spec.child_body];
    Joint j;
    j.parent = child.parent;
    j.child = spec.child_body;
    j.type = spec.type;
    j.rest = q4(child.local_quat);
    j.anchor_child = v3(spec.anchor);
    j.anchor_parent = v3(child.local_pos) + j.rest * j.anchor_child;
    j.axis_child = v3(spec.axis).normalized();
    j.axis_parent = (j.rest * j.axis_child).normalized();
    std::tie(j.perp1_parent, j.perp2_parent) = perpendiculars(j.axis_parent);
    j.lo = spec.range_lo;
    j.hi = spec.range_hi;
    j.damping = spec.damping;
    if (auto a = model_.actuator_of_joint(static_cast<int>(ji))) {
      j.actuator = *a;
      j.gear = model_.actuators[*a].gear;
    }
    joints_.push_back(j);
  }
  free_root_ = !model_.joint_of_body(model_.root_index).has_value();

  // Resolve chain ends and build shortcuts for nested joints.
  std::vector<int> synth_child(n, -1);
  for (int b = 0; b < n; ++b) {
    int p = model_.bodies[b].parent;
    if (p != kWorld && model_.bodies[p].synthesized()) synth_child[p] = b;
  }
  auto chain_end = [&](int body) {
    while (body >= 0 && model_.bodies[body].synthesized() && synth_child[body] >= 0) body = synth_child[body];
    return body;
  };
  for (auto& j : joints_) {
    j.drive_parent = j.parent == kWorld ? kWorld : real_parent_or_self(model_, j.parent);
    j.drive_child = chain_end(j.child);
  }
  for (int c = 0; c < n; ++c) {
    const BodySpec& body = model_.bodies[c];
    if (body.synthesized() || body.parent == kWorld || !model_.bodies[body.parent].synthesized()) continue;
    // Pose of the child in the real parent's frame at rest, composed down the chain.
    std::vector<int> chain;
    for (int b = c; b != kWorld && (b == c || model_.bodies[b].synthesized()); b = model_.bodies[b].parent) {
      chain.push_back(b);
    }
    Shortcut sc;
    sc.parent = model_.bodies[chain.back()].parent;
    sc.child = c;
    Vec3 pos = Vec3::Zero();
    Quat rot = Quat::Identity();
    for (auto it = chain.rbegin(); it != chain.rend(); ++it) {
      pos = pos + rot * v3(model_.bodies[*it].local_pos);
      rot = rot * q4(model_.bodies[*it].local_quat);
    }
    const Joint& last = joints_[*model_.joint_of_body(c)];
    sc.anchor_child = last.anchor_child;
    sc.anchor_parent = pos + rot * last.anchor_child;
    if (chain.size() == 2) {
      const Joint& first = joints_[*model_.joint_of_body(chain.back())];
      sc.universal = true;
      sc.axis_parent = first.axis_parent;
      sc.axis_child = last.axis_child;
      sc.rest_dot = sc.axis_parent.dot(rot * sc.axis_child);
    }
    shortcuts_.push_back(sc);
  }

  for (int a = 0; a < n; ++a) {
    for (int b = a + 1; b < n; ++b) {
      if (real_parent(model_, b) == a || real_parent(model_, a) == b) continue;
      if (model_.bodies[a].synthesized() || model_.bodies[b].synthesized()) continue;
      bool any = false;
      for (const auto& ga : model_.bodies[a].geoms) {
        for (const auto& gb : model_.bodies[b].geoms) {
          any = any || (self_collidable(ga.shape) && self_collidable(gb.shape) && collides(ga, gb));
        }
      }
      if (any) self_pairs_.emplace_back(a, b);
    }
  }
}

SpawnPose Articulation::default_spawn() const {
  SpawnPose s;
  const auto& root = model_.bodies[model_.root_index];
  s.root_pos = v3(root.local_pos);
  s.root_quat = q4(root.local_quat);
  s.joint_pos.resize(joints_.size());
  for (size_t i = 0; i < joints_.size(); ++i) s.joint_pos[i] = std::clamp(0.0, joints_[i].lo, joints_[i].hi);
  return s;
}

double apply_motor(double action, const ActuatorSpec& actuator) {
  return actuator.gear * std::clamp(action, -1.0, 1.0);
}

std::pair<Vec3, Vec3> joint_anchors(const SceneState& s, const Articulation& art, int joint) {
  const auto& j = art.joints()[joint];
  const RigidState& c = s.bodies[j.child];
  Vec3 on_child = c.pos + c.quat * j.anchor_child;
  Vec3 on_parent = j.parent == kWorld
                       ? j.anchor_parent
                       : Vec3(s.bodies[j.parent].pos + s.bodies[j.parent].quat * j.anchor_parent);
  return {on_parent, on_child};
}

void update_joint_state(SceneState& s, const Articulation& art) {
  const auto& joints = art.joints();
  s.joint_pos.resize(joints.size());
  s.joint_vel.resize(joints.size());
  for (size_t i = 0; i < joints.size(); ++i) {
    const auto& j = joints[i];
    const RigidState& c = s.bodies[j.child];
    Quat qp = j.parent == kWorld ? Quat::Identity() : s.bodies[j.parent].quat;
    Vec3 wp = j.parent == kWorld ? Vec3::Zero() : s.bodies[j.parent].ang_vel;
    Vec3 vp = j.parent == kWorld ? Vec3::Zero() : s.bodies[j.parent].lin_vel;
    Vec3 axis_w = qp * j.axis_parent;
    if (j.type == JointType::Hinge) {
      Quat dev = j.rest.conjugate() * (qp.conjugate() * c.quat);
      double angle = 2.0 * std::atan2(dev.vec().dot(j.axis_child), dev.w());
      if (angle > M_PI) angle -= 2.0 * M_PI;
      if (angle < -M_PI) angle += 2.0 * M_PI;
      s.joint_pos[i] = angle;
      s.joint_vel[i] = (c.ang_vel - wp).dot(axis_w);
    } else {
      auto [ap, ac] = joint_anchors(s, art, static_cast<int>(i));
      s.joint_pos[i] = (ac - ap).dot(axis_w);
      Vec3 pp = j.parent == kWorld ? Vec3::Zero() : s.bodies[j.parent].pos;
      Vec3 vel_c = c.lin_vel + c.ang_vel.cross(ac - c.pos);
      Vec3 vel_p = vp + wp.cross(ac - pp);
      s.joint_vel[i] = (vel_c - vel_p).dot(axis_w);
    }
  }
}

SceneState init_scene(const Articulation& art, const Terrain& terrain, const PhysicsConfig& config,
                      const SpawnPose& spawn) {
  config.validate();
  const auto& model = art.model();
  const auto& joints = art.joints();
  if (spawn.joint_pos.size() != joints.size()) {
    throw Error(ErrorCode::DimensionMismatch, "spawn joint vector length");
  }
  if (!spawn.joint_vel.empty() && spawn.joint_vel.size() != joints.size()) {
    throw Error(ErrorCode::DimensionMismatch, "spawn joint velocity length");
  }
  for (size_t i = 0; i < joints.size(); ++i) {
    double q = spawn.joint_pos[i];
    if (!std::isfinite(q) || q < joints[i].lo || q > joints[i].hi) {
      throw Error(ErrorCode::RangeViolation, "joint '" + model.joints[i].name + "' = " + std::to_string(q));
    }
  }

  std::vector<int> joint_of(model.bodies.size(), -1);
  for (size_t i = 0; i < joints.size(); ++i) joint_of[joints[i].child] = static_cast<int>(i);

  SceneState s;
  s.bodies.resize(model.bodies.size());
  for (size_t bi = 0; bi < model.bodies.size(); ++bi) {
    const BodySpec& b = model.bodies[bi];
    RigidState& st = s.bodies[bi];
    const int ji = joint_of[bi];
    if (b.parent == kWorld && ji < 0) {
      st.pos = spawn.root_pos;
      st.quat = spawn.root_quat.normalized();
      st.lin_vel = spawn.root_lin_vel;
      st.ang_vel = spawn.root_ang_vel;
      continue;
    }
    Vec3 ppos = Vec3::Zero();
    Quat pquat = Quat::Identity();
    Vec3 pv = Vec3::Zero(), pw = Vec3::Zero();
    if (b.parent != kWorld) {
      ppos = s.bodies[b.parent].pos;
      pquat = s.bodies[b.parent].quat;
      pv = s.bodies[b.parent].lin_vel;
      pw = s.bodies[b.parent].ang_vel;
    }
    Vec3 local_pos = v3(b.local_pos);
    Quat local_quat = q4(b.local_quat);
    double qdot = 0;
    if (ji >= 0) {
      const auto& j = joints[ji];
      double q = spawn.joint_pos[ji];
      qdot = spawn.joint_vel.empty() ? 0.0 : spawn.joint_vel[ji];
      if (j.type == JointType::Hinge) {
        Quat r(Eigen::AngleAxisd(q, j.axis_child));
        // rotate about the anchor: x_parent = rest_pos + rest * (a + R (x - a))
        local_pos = local_pos + local_quat * (j.anchor_child - r * j.anchor_child);
        local_quat = local_quat * r;
      } else {
        local_pos = local_pos + local_quat * (j.axis_child * q);
      }
    }
    st.pos = ppos + pquat * local_pos;
    st.quat = (pquat * local_quat).normalized();
    st.lin_vel = pv + pw.cross(st.pos - ppos);
    st.ang_vel = pw;
    if (ji >= 0 && qdot != 0) {
      const auto& j = joints[ji];
      Vec3 axis_w = pquat * j.axis_parent;
      if (j.type == JointType::Hinge) {
        Vec3 anchor_w = st.pos + st.quat * j.anchor_child;
        st.ang_vel += axis_w * qdot;
        st.lin_vel += (axis_w * qdot).cross(st.pos - anchor_w);
      } else {
        st.lin_vel += axis_w * qdot;
      }
    }
  }
  if (model.planar) project_planar(s);
  update_joint_state(s, art);
  s.contacts = find_contacts(s, art, terrain, kContactSolverMargin);
  for (const auto& c : s.contacts) {
    if (c.other_body < 0 && c.depth > kSpawnPenetrationTolerance) {
      throw Error(ErrorCode::SpawnPenetration,
                  "body '" + model.bodies[c.body].name + "' penetrates terrain by " + std::to_string(c.depth) + " m");
    }
  }
  s.warm.joints.assign(art.warm_slots(), 0.0);
  return s;
}

void project_planar(SceneState& s) {
  for (auto& b : s.bodies) {
    b.pos.z() = 0.0;
    b.lin_vel.z() = 0.0;
    b.ang_vel.x() = 0.0;
    b.ang_vel.y() = 0.0;
    Quat q(b.quat.w(), 0.0, 0.0, b.quat.z());
    double n = q.norm();
    b.quat = n > 0 ? Quat(q.w() / n, 0.0, 0.0, q.z() / n) : Quat::Identity();
  }
}

double mechanical_energy(const SceneState& s, const Articulation& art, const PhysicsConfig& config) {
  double e = 0;
  for (int i = 0; i < art.body_count(); ++i) {
    const auto& b = s.bodies[i];
    const auto& spec = art.model().bodies[i];
    Vec3 w_body = b.quat.conjugate() * b.ang_vel;
    Vec3 inertia(spec.inertia[0], spec.inertia[1], spec.inertia[2]);
    e += 0.5 * spec.mass * b.lin_vel.squaredNorm();
    e += 0.5 * w_body.dot(inertia.cwiseProduct(w_body));
    e -= spec.mass * config.gravity.dot(b.pos);
  }
  return e;
}

Vec3 linear_momentum(const SceneState& s, const Articulation& art) {
  Vec3 p = Vec3::Zero();
  for (int i = 0; i < art.body_count(); ++i) p += art.model().bodies[i].mass * s.bodies[i].lin_vel;
  return p;
}

}  // namespace ragmark

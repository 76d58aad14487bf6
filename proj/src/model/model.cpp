#include <Eigen/Geometry>
#include <cmath>
#include <map>

#include "ragmark/error.hpp"
#include "ragmark/model.hpp"

namespace ragmark {
namespace {

double norm(const Vec3d& v) { return std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]); }
double norm(const Quat4d& q) { return std::sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]); }

template <size_t N>
bool close(const std::array<double, N>& a, const std::array<double, N>& b, double tol) {
  for (size_t i = 0; i < N; ++i) {
    if (std::abs(a[i] - b[i]) > tol) return false;
  }
  return true;
}

bool close(double a, double b, double tol) { return std::abs(a - b) <= tol; }

}  // namespace

int ArticulatedModel::body_index(std::string_view n) const {
  for (size_t i = 0; i < bodies.size(); ++i) {
    if (bodies[i].name == n) return static_cast<int>(i);
  }
  return -1;
}

int ArticulatedModel::joint_index(std::string_view n) const {
  for (size_t i = 0; i < joints.size(); ++i) {
    if (joints[i].name == n) return static_cast<int>(i);
  }
  return -1;
}

std::vector<int> ArticulatedModel::bodies_with_label(std::string_view tag) const {
  std::vector<int> out;
  for (size_t i = 0; i < bodies.size(); ++i) {
    if (bodies[i].has_label(tag)) out.push_back(static_cast<int>(i));
  }
  return out;
}

std::optional<int> ArticulatedModel::joint_of_body(int body) const {
  for (size_t i = 0; i < joints.size(); ++i) {
    if (joints[i].child_body == body) return static_cast<int>(i);
  }
  return std::nullopt;
}

std::optional<int> ArticulatedModel::actuator_of_joint(int joint) const {
  for (size_t i = 0; i < actuators.size(); ++i) {
    if (actuators[i].joint == joint) return static_cast<int>(i);
  }
  return std::nullopt;
}

bool approx_equal(const ArticulatedModel& a, const ArticulatedModel& b, double tol) {
  if (a.name != b.name || a.planar != b.planar || a.root_index != b.root_index) return false;
  if (a.bodies.size() != b.bodies.size() || a.joints.size() != b.joints.size() ||
      a.actuators.size() != b.actuators.size() || a.world_geoms.size() != b.world_geoms.size()) {
    return false;
  }
  auto geom_eq = [tol](const GeomSpec& x, const GeomSpec& y) {
    return x.name == y.name && x.shape == y.shape && close(x.size, y.size, tol) &&
           close(x.local_pos, y.local_pos, tol) && close(x.local_quat, y.local_quat, tol) &&
           close(x.friction, y.friction, tol) && x.contype == y.contype &&
           x.conaffinity == y.conaffinity;
  };
  for (size_t i = 0; i < a.bodies.size(); ++i) {
    const auto &x = a.bodies[i], &y = b.bodies[i];
    if (x.name != y.name || x.parent != y.parent || x.labels != y.labels ||
        !close(x.local_pos, y.local_pos, tol) || !close(x.local_quat, y.local_quat, tol) ||
        !close(x.mass, y.mass, tol) || !close(x.inertia, y.inertia, tol) ||
        x.geoms.size() != y.geoms.size()) {
      return false;
    }
    for (size_t g = 0; g < x.geoms.size(); ++g) {
      if (!geom_eq(x.geoms[g], y.geoms[g])) return false;
    }
  }
  for (size_t i = 0; i < a.joints.size(); ++i) {
    const auto &x = a.joints[i], &y = b.joints[i];
    if (x.name != y.name || x.child_body != y.child_body || x.type != y.type ||
        !close(x.axis, y.axis, tol) || !close(x.range_lo, y.range_lo, tol) ||
        !close(x.range_hi, y.range_hi, tol) || !close(x.damping, y.damping, tol) ||
        !close(x.anchor, y.anchor, tol) || x.extra_axes.size() != y.extra_axes.size()) {
      return false;
    }
    for (size_t k = 0; k < x.extra_axes.size(); ++k) {
      const auto &p = x.extra_axes[k], &q = y.extra_axes[k];
      if (!close(p.axis, q.axis, tol) || !close(p.range_lo, q.range_lo, tol) ||
          !close(p.range_hi, q.range_hi, tol)) {
        return false;
      }
    }
  }
  for (size_t i = 0; i < a.actuators.size(); ++i) {
    const auto &x = a.actuators[i], &y = b.actuators[i];
    if (x.name != y.name || x.joint != y.joint || !close(x.gear, y.gear, tol)) return false;
  }
  for (size_t i = 0; i < a.world_geoms.size(); ++i) {
    if (!geom_eq(a.world_geoms[i], b.world_geoms[i])) return false;
  }
  return true;
}

void validate_model(const ArticulatedModel& m) {
  const int n = static_cast<int>(m.bodies.size());
  if (n == 0) throw Error(ErrorCode::InvalidValue, "model has no bodies");
  if (m.root_index < 0 || m.root_index >= n || m.bodies[m.root_index].parent != kWorld) {
    throw Error(ErrorCode::InvalidValue, "root index does not name a top-level body");
  }
  for (int i = 0; i < n; ++i) {
    // Walking up must reach the world within n hops.
    int cur = i, hops = 0;
    while (cur != kWorld) {
      if (cur < kWorld || cur >= n) throw Error(ErrorCode::InvalidValue, "body parent index out of range");
      if (++hops > n) throw Error(ErrorCode::CycleDetected, "body '" + m.bodies[i].name + "'");
      cur = m.bodies[cur].parent;
    }
  }
  for (int i = 0; i < n; ++i) {
    const BodySpec& b = m.bodies[i];
    if (i != m.root_index && b.parent == kWorld) {
      throw Error(ErrorCode::InvalidValue, "more than one root body");
    }
    if (b.parent >= i) throw Error(ErrorCode::InvalidValue, "body '" + b.name + "' precedes its parent");
    if (!(b.mass > 0)) throw Error(ErrorCode::InvalidValue, "body '" + b.name + "' mass must be > 0");
    for (double v : b.inertia) {
      if (!(v > 0)) throw Error(ErrorCode::InvalidValue, "body '" + b.name + "' inertia must be > 0");
    }
    if (std::abs(norm(b.local_quat) - 1.0) > 1e-9) {
      throw Error(ErrorCode::InvalidValue, "body '" + b.name + "' quaternion not unit");
    }
    for (const auto& g : b.geoms) {
      if (std::abs(norm(g.local_quat) - 1.0) > 1e-9) {
        throw Error(ErrorCode::InvalidValue, "geom quaternion not unit in body '" + b.name + "'");
      }
      if (g.friction < 0) throw Error(ErrorCode::InvalidValue, "negative friction");
    }
  }
  std::vector<int> joints_per_body(n, 0);
  for (const auto& j : m.joints) {
    if (j.child_body < 0 || j.child_body >= n) throw Error(ErrorCode::InvalidValue, "joint body out of range");
    ++joints_per_body[j.child_body];
    if (std::abs(norm(j.axis) - 1.0) > 1e-9) throw Error(ErrorCode::InvalidValue, "joint '" + j.name + "' axis not unit");
    if (!std::isfinite(j.range_lo) || !std::isfinite(j.range_hi) || !(j.range_lo < j.range_hi)) {
      throw Error(ErrorCode::InvalidValue, "joint '" + j.name + "' range invalid");
    }
    for (const auto& e : j.extra_axes) {
      if (std::abs(norm(e.axis) - 1.0) > 1e-9 || !(e.range_lo < e.range_hi)) {
        throw Error(ErrorCode::InvalidValue, "joint '" + j.name + "' extra axis invalid");
      }
    }
  }
  for (int i = 0; i < n; ++i) {
    if (joints_per_body[i] > 1) throw Error(ErrorCode::InvalidValue, "body '" + m.bodies[i].name + "' has several joints");
  }
  std::vector<int> actuated(m.joints.size(), 0);
  for (const auto& a : m.actuators) {
    if (a.joint < 0 || a.joint >= static_cast<int>(m.joints.size())) {
      throw Error(ErrorCode::InvalidValue, "actuator '" + a.name + "' joint out of range");
    }
    if (++actuated[a.joint] > 1) throw Error(ErrorCode::InvalidValue, "joint '" + m.joints[a.joint].name + "' has two actuators");
    if (!(a.gear > 0)) throw Error(ErrorCode::InvalidValue, "actuator '" + a.name + "' gear must be > 0");
  }
}

void validate_labels(const ArticulatedModel& model, const std::set<std::string>& required) {
  for (const auto& tag : required) {
    if (model.bodies_with_label(tag).empty()) throw Error(ErrorCode::MissingLabel, tag);
  }
}

ArticulatedModel expand_multi_axis(const ArticulatedModel& in) {
  bool any = false;
  for (const auto& j : in.joints) any = any || !j.extra_axes.empty();
  if (!any) return in;

  ArticulatedModel out;
  out.name = in.name;
  out.planar = in.planar;
  out.world_geoms = in.world_geoms;

  std::vector<int> body_map(in.bodies.size(), -1);
  std::map<int, std::vector<int>> joint_map;  // old joint -> new joints
  std::vector<std::optional<int>> joint_of(in.bodies.size());
  for (size_t j = 0; j < in.joints.size(); ++j) joint_of[in.joints[j].child_body] = static_cast<int>(j);

  for (size_t bi = 0; bi < in.bodies.size(); ++bi) {
    BodySpec body = in.bodies[bi];
    int parent = body.parent == kWorld ? kWorld : body_map[body.parent];
    std::optional<int> old_joint = joint_of[bi];
    if (!old_joint || in.joints[*old_joint].extra_axes.empty()) {
      body.parent = parent;
      body_map[bi] = static_cast<int>(out.bodies.size());
      out.bodies.push_back(body);
      if (old_joint) {
        JointSpec j = in.joints[*old_joint];
        j.child_body = body_map[bi];
        joint_map[*old_joint] = {static_cast<int>(out.joints.size())};
        out.joints.push_back(j);
      }
      continue;
    }

    const JointSpec& src = in.joints[*old_joint];
    std::vector<JointAxis> axes;
    axes.push_back({src.axis, src.range_lo, src.range_hi});
    for (const auto& e : src.extra_axes) axes.push_back(e);

    // Synthesized bodies sit at the joint anchor with the child's rest orientation,
    // so every axis keeps its meaning in the child frame.
    Eigen::Quaterniond q(body.local_quat[0], body.local_quat[1], body.local_quat[2], body.local_quat[3]);
    Eigen::Vector3d anchor(src.anchor[0], src.anchor[1], src.anchor[2]);
    Eigen::Vector3d anchor_in_parent =
        Eigen::Vector3d(body.local_pos[0], body.local_pos[1], body.local_pos[2]) + q * anchor;

    std::vector<int> new_joints;
    int link_parent = parent;
    for (size_t k = 0; k + 1 < axes.size(); ++k) {
      BodySpec synth;
      synth.name = body.name + "_link" + std::to_string(k + 1);
      synth.parent = link_parent;
      if (k == 0) {
        synth.local_pos = {anchor_in_parent.x(), anchor_in_parent.y(), anchor_in_parent.z()};
        synth.local_quat = body.local_quat;
      }
      synth.mass = kSynthMass;
      synth.inertia = {kSynthInertia, kSynthInertia, kSynthInertia};
      synth.labels = {"synthesized"};
      int sidx = static_cast<int>(out.bodies.size());
      out.bodies.push_back(synth);

      JointSpec j;
      j.name = k == 0 ? src.name : src.name + "_" + std::to_string(k + 1);
      j.child_body = sidx;
      j.type = JointType::Hinge;
      j.axis = axes[k].axis;
      j.range_lo = axes[k].range_lo;
      j.range_hi = axes[k].range_hi;
      j.damping = src.damping;
      new_joints.push_back(static_cast<int>(out.joints.size()));
      out.joints.push_back(j);
      link_parent = sidx;
    }

    body.parent = link_parent;
    body.local_pos = {-src.anchor[0], -src.anchor[1], -src.anchor[2]};
    body.local_quat = {1, 0, 0, 0};
    body_map[bi] = static_cast<int>(out.bodies.size());
    out.bodies.push_back(body);

    JointSpec last;
    last.name = src.name + "_" + std::to_string(axes.size());
    last.child_body = body_map[bi];
    last.type = JointType::Hinge;
    last.axis = axes.back().axis;
    last.range_lo = axes.back().range_lo;
    last.range_hi = axes.back().range_hi;
    last.damping = src.damping;
    last.anchor = src.anchor;
    new_joints.push_back(static_cast<int>(out.joints.size()));
    out.joints.push_back(last);
    joint_map[*old_joint] = new_joints;
  }

  for (const auto& a : in.actuators) {
    const auto& targets = joint_map.at(a.joint);
    for (size_t k = 0; k < targets.size(); ++k) {
      ActuatorSpec na = a;
      na.joint = targets[k];
      if (k > 0) na.name = a.name + "_" + std::to_string(k + 1);
      out.actuators.push_back(na);
    }
  }
  out.root_index = body_map[in.root_index];
  validate_model(out);
  return out;
}

}  // namespace ragmark

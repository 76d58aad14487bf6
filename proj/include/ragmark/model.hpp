#pragma once

// Articulated model description and the MJCF-subset reader/writer.
//
// Supported XML subset:
//   <mujoco model="name" planar="true|false">
//     <worldbody>
//       <geom type="plane"/>                       (optional ground marker)
//       <body name pos quat labels>                (exactly one root body)
//         <inertial mass diaginertia/>             (optional; else derived from geoms)
//         <geom name type size pos quat fromto friction density contype conaffinity/>
//         <joint name type axis range damping pos axis2 range2 axis3 range3/>
//         <body ...> ... </body>
//       </body>
//     </worldbody>
//     <actuator><motor name joint gear/></actuator>
//   </mujoco>
//
// Hinge ranges are degrees in the file and radians in memory. A root body
// without a joint floats freely; a root body with a joint hangs from the world.

#include <array>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace ragmark {

using Vec3d = std::array<double, 3>;
using Quat4d = std::array<double, 4>;  // w, x, y, z

inline constexpr int kWorld = -1;

enum class GeomShape { Capsule, Sphere, Box, Plane };
enum class JointType { Hinge, Slide };

std::string_view to_string(GeomShape shape);
std::string_view to_string(JointType type);

struct GeomSpec {
  std::string name;
  GeomShape shape = GeomShape::Sphere;
  // capsule: {radius, half_length, 0} along local z; sphere: {radius, 0, 0};
  // box: half extents; plane: unused.
  Vec3d size{0, 0, 0};
  Vec3d local_pos{0, 0, 0};
  Quat4d local_quat{1, 0, 0, 0};
  double friction = 1.0;
  int contype = 1;
  int conaffinity = 1;

  bool operator==(const GeomSpec&) const = default;
};

struct BodySpec {
  std::string name;
  int parent = kWorld;
  Vec3d local_pos{0, 0, 0};
  Quat4d local_quat{1, 0, 0, 0};
  double mass = 1.0;
  Vec3d inertia{1, 1, 1};
  std::vector<GeomSpec> geoms;
  std::set<std::string> labels;

  bool has_label(std::string_view tag) const { return labels.count(std::string(tag)) > 0; }
  bool synthesized() const { return has_label("synthesized"); }

  bool operator==(const BodySpec&) const = default;
};

/// Additional rotation axis carried by a multi-axis joint before expansion.
struct JointAxis {
  Vec3d axis{0, 0, 1};
  double range_lo = 0;
  double range_hi = 0;

  bool operator==(const JointAxis&) const = default;
};

struct JointSpec {
  std::string name;
  int child_body = 0;
  JointType type = JointType::Hinge;
  Vec3d axis{0, 0, 1};
  double range_lo = 0;
  double range_hi = 0;
  double damping = 0;
  Vec3d anchor{0, 0, 0};  // in the child body frame
  std::vector<JointAxis> extra_axes;

  bool operator==(const JointSpec&) const = default;
};

struct ActuatorSpec {
  std::string name;
  int joint = 0;
  double gear = 1.0;

  bool operator==(const ActuatorSpec&) const = default;
};

struct ArticulatedModel {
  std::string name;
  bool planar = false;
  std::vector<BodySpec> bodies;
  std::vector<JointSpec> joints;
  std::vector<ActuatorSpec> actuators;
  std::vector<GeomSpec> world_geoms;
  int root_index = 0;

  int body_index(std::string_view name) const;
  int joint_index(std::string_view name) const;
  /// Bodies carrying `tag`, in index order.
  std::vector<int> bodies_with_label(std::string_view tag) const;
  /// Joint acting on `body`, if any (post-expansion models have at most one).
  std::optional<int> joint_of_body(int body) const;
  /// Actuator driving `joint`, if any.
  std::optional<int> actuator_of_joint(int joint) const;

  bool operator==(const ArticulatedModel&) const = default;
};

/// Field-by-field comparison with an absolute tolerance on every real number.
bool approx_equal(const ArticulatedModel& a, const ArticulatedModel& b, double tol);

ArticulatedModel parse_model(std::string_view xml);
ArticulatedModel load_model_file(const std::string& path);

/// Canonical serialization in the same XML subset (explicit inertials, no fromto).
std::string serialize_model(const ArticulatedModel& model);

/// Replace every multi-axis joint with a chain of single-axis hinges through
/// synthesized intermediate bodies (mass kSynthMass, inertia kSynthInertia).
ArticulatedModel expand_multi_axis(const ArticulatedModel& model);

inline constexpr double kSynthMass = 0.01;
inline constexpr double kSynthInertia = 1e-4;

/// Structural invariants: tree order, positive mass/inertia, unit quaternions
/// and axes, finite ordered ranges, one actuator per joint at most.
void validate_model(const ArticulatedModel& model);

/// Throws MissingLabel for the first tag of `required` carried by no body.
void validate_labels(const ArticulatedModel& model, const std::set<std::string>& required);

}  // namespace ragmark

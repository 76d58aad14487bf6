#pragma once

// Maximal-coordinate rigid-body simulation with a sequential-impulse solver.
//
// World frame is y-up with +x forward; planar models live in the x-y plane
// and rotate about z. Every body is simulated as a free 6-DOF rigid body and
// joints are enforced as velocity constraints with Baumgarte feedback.

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "ragmark/model.hpp"

namespace ragmark {

using Vec3 = Eigen::Vector3d;
using Quat = Eigen::Quaterniond;
using Mat3 = Eigen::Matrix3d;

struct PhysicsConfig {
  double dt = 1.0 / 250.0;
  Vec3 gravity{0.0, -9.81, 0.0};
  int solver_iterations = 10;
  double baumgarte_beta = 0.2;
  double friction_default = 1.0;
  bool warm_start = true;

  /// Throws InvalidValue when a field is out of its admissible range.
  void validate() const;
};

class Terrain {
 public:
  enum class Kind { FlatPlane, Heightfield };

  static Terrain flat();
  /// Samples start at x = x0 and are `spacing` apart.
  static Terrain heightfield(std::vector<double> heights, double spacing, double x0 = 0.0);

  Kind kind() const { return kind_; }
  const std::vector<double>& heights() const { return heights_; }
  double spacing() const { return spacing_; }
  double x0() const { return x0_; }

  double height(double x) const;
  /// dy/dx of the interpolant (zero outside the sampled span).
  double slope(double x) const;

 private:
  Kind kind_ = Kind::FlatPlane;
  std::vector<double> heights_;
  double spacing_ = 1.0;
  double x0_ = 0.0;
};

double query_height(const Terrain& terrain, double x);

struct RigidState {
  Vec3 pos = Vec3::Zero();
  Quat quat = Quat::Identity();
  Vec3 lin_vel = Vec3::Zero();
  Vec3 ang_vel = Vec3::Zero();
};

struct Contact {
  int body = 0;
  int geom = 0;
  Vec3 point = Vec3::Zero();
  Vec3 normal = Vec3::UnitY();  // points from the other surface toward `body`
  double depth = 0.0;           // max(0, -distance)
  double distance = 0.0;        // signed gap; negative when penetrating
  int other_body = -1;  // -1: terrain
  int other_geom = -1;
  int feature = 0;      // capsule end / box corner, used to match warm-start impulses
};

using ContactSet = std::vector<Contact>;

/// Accumulated impulses carried between steps for warm starting.
struct WarmStart {
  std::vector<double> joints;  // Articulation::warm_slots() entries
  struct ContactImpulse {
    std::uint64_t key = 0;
    double normal = 0, tangent1 = 0, tangent2 = 0;
  };
  std::vector<ContactImpulse> contacts;  // sorted by key
};

struct SceneState {
  std::vector<RigidState> bodies;
  std::vector<double> joint_pos;
  std::vector<double> joint_vel;
  ContactSet contacts;
  double time = 0.0;
  std::int64_t step_count = 0;
  WarmStart warm;
};

/// Root pose and joint configuration used to place a model in the world.
struct SpawnPose {
  Vec3 root_pos = Vec3::Zero();
  Quat root_quat = Quat::Identity();
  Vec3 root_lin_vel = Vec3::Zero();
  Vec3 root_ang_vel = Vec3::Zero();
  std::vector<double> joint_pos;
  std::vector<double> joint_vel;  // empty: zero
};

/// Simulation-ready view of an ArticulatedModel: joint frames, inverse masses
/// and the collision filter, computed once and shared read-only.
class Articulation {
 public:
  struct Joint {
    int parent = kWorld;
    int child = 0;
    JointType type = JointType::Hinge;
    Vec3 anchor_parent = Vec3::Zero();  // parent frame (world frame for world joints)
    Vec3 anchor_child = Vec3::Zero();
    Vec3 axis_parent = Vec3::UnitZ();
    Vec3 axis_child = Vec3::UnitZ();
    Vec3 perp1_parent = Vec3::UnitX();
    Vec3 perp2_parent = Vec3::UnitY();
    Quat rest = Quat::Identity();  // child orientation relative to parent at q = 0
    double lo = 0, hi = 0;
    double damping = 0;
    int actuator = -1;
    double gear = 0;
    // Real bodies at the ends of a nested-joint chain. Motor torque, damping
    // and limits act between these so load bypasses the synthesized links.
    int drive_parent = kWorld;
    int drive_child = 0;
  };

  /// Direct constraint between the real bodies at both ends of a nested-joint
  /// chain; redundant with the chain itself.
  struct Shortcut {
    int parent = kWorld;
    int child = 0;
    Vec3 anchor_parent = Vec3::Zero();
    Vec3 anchor_child = Vec3::Zero();
    bool universal = false;  // two-axis chain: the two axes stay at their rest angle
    Vec3 axis_parent = Vec3::UnitZ();
    Vec3 axis_child = Vec3::UnitX();
    double rest_dot = 0;
  };

  explicit Articulation(ArticulatedModel model);

  const ArticulatedModel& model() const { return model_; }
  int body_count() const { return static_cast<int>(model_.bodies.size()); }
  int joint_count() const { return static_cast<int>(joints_.size()); }
  int actuator_count() const { return static_cast<int>(model_.actuators.size()); }
  const std::vector<Joint>& joints() const { return joints_; }
  const std::vector<Shortcut>& shortcuts() const { return shortcuts_; }
  /// Length of WarmStart::joints.
  size_t warm_slots() const { return joints_.size() * 6 + shortcuts_.size() * 4; }
  double inv_mass(int body) const { return inv_mass_[body]; }
  const Vec3& inv_inertia(int body) const { return inv_inertia_[body]; }
  bool free_root() const { return free_root_; }
  /// Body pairs (i < j) eligible for self-collision: non-adjacent, filters agree.
  const std::vector<std::pair<int, int>>& self_pairs() const { return self_pairs_; }
  /// Default spawn: root at its model pose, all joints at 0 clamped into range.
  SpawnPose default_spawn() const;

 private:
  ArticulatedModel model_;
  std::vector<Joint> joints_;
  std::vector<Shortcut> shortcuts_;
  std::vector<double> inv_mass_;
  std::vector<Vec3> inv_inertia_;
  std::vector<std::pair<int, int>> self_pairs_;
  bool free_root_ = true;
};

using ArticulationPtr = std::shared_ptr<const Articulation>;

/// Forward kinematics from a spawn pose; validates ranges and penetration.
SceneState init_scene(const Articulation& art, const Terrain& terrain, const PhysicsConfig& config,
                      const SpawnPose& spawn);

/// One semi-implicit Euler step. Torques are per actuator (N·m or N).
void step_physics(SceneState& state, const Articulation& art, std::span<const double> joint_torques,
                  const PhysicsConfig& config, const Terrain& terrain);

/// gear * clamp(action, -1, 1)
double apply_motor(double action, const ActuatorSpec& actuator);

/// Removes out-of-plane motion (z translation, rotation about x and y).
void project_planar(SceneState& state);

/// Joint positions and velocities from body states.
void update_joint_state(SceneState& state, const Articulation& art);

/// Contact generation for the current body poses (terrain and self-collision).
ContactSet find_contacts(const SceneState& state, const Articulation& art, const Terrain& terrain,
                         double margin);

/// World position of a joint's anchor as seen from the parent and the child.
std::pair<Vec3, Vec3> joint_anchors(const SceneState& state, const Articulation& art, int joint);

/// Kinetic + gravitational potential energy (potential relative to y = 0).
double mechanical_energy(const SceneState& state, const Articulation& art, const PhysicsConfig& config);
Vec3 linear_momentum(const SceneState& state, const Articulation& art);

/// Contacts whose gap is below this count as touching.
inline constexpr double kContactReportMargin = 0.01;
/// Gap within which the solver tracks a contact speculatively.
inline constexpr double kContactSolverMargin = 0.03;

inline bool is_touching(const Contact& c) { return c.distance <= kContactReportMargin; }
/// Allowed initial penetration at spawn.
inline constexpr double kSpawnPenetrationTolerance = 0.01;

}  // namespace ragmark

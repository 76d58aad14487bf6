#pragma once

// Benchmark environments built from reward / termination / observation
// callbacks over an articulated scene, plus the task hooks wrappers use.

#include <functional>
#include <memory>
#include <random>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "ragmark/physics.hpp"

namespace ragmark {

using Rng = std::mt19937_64;

enum class EnvId { Hopper, Walker2d, Humanoid, Ant, Slider, Pendulum };

std::string_view to_string(EnvId id);
/// Throws UnknownEnv.
EnvId parse_env_id(std::string_view name);
std::vector<EnvId> all_env_ids();

struct RewardWeights {
  double w_velocity = 1.0;
  double w_upright = 0.1;
  double w_effort = 0.1;
  double low_height_penalty = 1.0;
  double height_threshold = 1.1;
  double w_joint_limit = 0.2;
  double w_phase = 0.1;
};

struct TerminationParams {
  double min_height = 0.0;       // 0 disables
  double max_head_tilt = 0.0;    // 0 disables
  double max_body_tilt = 0.0;    // 0 disables
  bool non_foot_contact_terminates = false;
};

enum class StepStatus { Running, Terminated, Truncated };

enum class TerminationReason { None, LowHeight, HeadTilt, BodyTilt, NonFootContact, NonFinite, EarlyTermination };

std::string_view to_string(StepStatus s);
std::string_view to_string(TerminationReason r);

struct Termination {
  StepStatus status = StepStatus::Running;
  TerminationReason reason = TerminationReason::None;

  static Termination running() { return {}; }
  static Termination terminated(TerminationReason r) { return {StepStatus::Terminated, r}; }
};

/// Individual reward contributions, already weighted and signed.
struct RewardTerms {
  double velocity = 0;
  double upright = 0;
  double effort = 0;  // <= 0
  double height = 0;  // <= 0
  double joint_limit = 0;
  double phase = 0;
  double task = 0;

  double total() const { return velocity + upright + effort + height + joint_limit + phase + task; }
};

struct EnvInstance;

/// Per-instance hooks stacked on a base environment (controller goals,
/// imitation, terrain). Each instance owns its own copies.
class Task {
 public:
  virtual ~Task() = default;
  virtual std::string name() const = 0;
  virtual std::unique_ptr<Task> clone() const = 0;
  virtual int extra_obs_dim() const { return 0; }
  /// After the scene is re-spawned, before the first observation.
  virtual void on_reset(EnvInstance&, Rng&) {}
  /// Before the physics substeps of a decision step.
  virtual void on_decision(EnvInstance&) {}
  /// Terrain to spawn on; called before the scene is built.
  virtual std::shared_ptr<const Terrain> terrain_for_reset(EnvInstance&, Rng&) { return nullptr; }
  virtual double reward(const EnvInstance&, const RewardTerms&, double current) { return current; }
  virtual Termination terminate(const EnvInstance&, Termination base) { return base; }
  virtual void observe(const EnvInstance&, std::vector<double>&) const {}
};

struct EnvSpec {
  EnvId id = EnvId::Hopper;
  std::string env_id;
  ArticulationPtr articulation;
  int obs_dim = 0;  // base observation, without task extensions
  int act_dim = 0;
  bool planar = false;
  RewardWeights reward_weights;
  TerminationParams termination;
  PhysicsConfig physics;
  int episode_cap = 1000;
  double reset_noise = 0.005;
  double phase_period = 1.0;  // humanoid phase clock, seconds

  int pelvis = -1;
  int head = -1;   // hopper
  int torso = -1;  // ant tilt
  int left_foot = -1, right_foot = -1;  // humanoid phase
  std::vector<int> feet;
  std::vector<int> tracked;  // bodies whose relative pose/velocity is observed
  std::set<int> effort_ignore;

  std::string asset_path;
  std::string asset_sha256;

  std::function<RewardTerms(const EnvInstance&)> reward_fn;
  std::function<Termination(const EnvInstance&)> terminate_fn;
  std::function<void(const EnvInstance&, std::vector<double>&)> observe_fn;

  const ArticulatedModel& model() const { return articulation->model(); }
};

using EnvSpecPtr = std::shared_ptr<const EnvSpec>;

/// Asset directory: $RAGMARK_ASSETS if set, else the build-time default.
std::string assets_dir();

/// Documented observation length for each shipped environment.
int expected_obs_dim(EnvId id);

/// Loads `<assets>/<env>.xml`, wires the env's callbacks and checks the
/// observation length against the documented table.
EnvSpecPtr make_env_spec(EnvId id, const std::string& assets = assets_dir());
EnvSpecPtr make_env_spec(const std::string& env_id);

struct EnvInstance {
  EnvSpecPtr spec;
  SceneState scene;
  std::shared_ptr<const Terrain> terrain;
  std::vector<double> last_action;
  std::vector<double> torques;
  int decision_step = 0;
  double phase_clock = 0;
  double episode_return = 0;
  double target_velocity = 0;  // slider command
  double start_x = 0;
  Termination status;
  std::vector<std::unique_ptr<Task>> tasks;

  EnvInstance() = default;
  explicit EnvInstance(EnvSpecPtr s);
  EnvInstance(const EnvInstance& other);
  EnvInstance& operator=(const EnvInstance& other);
  EnvInstance(EnvInstance&&) = default;
  EnvInstance& operator=(EnvInstance&&) = default;

  int obs_dim() const;
  int act_dim() const { return spec->act_dim; }
  const RigidState& pelvis() const { return scene.bodies[spec->pelvis]; }
  /// Pelvis height above the terrain directly below it.
  double pelvis_height() const;
  double forward_distance() const { return pelvis().pos.x() - start_x; }
  template <typename T>
  T* find_task() const {
    for (const auto& t : tasks) {
      if (auto* p = dynamic_cast<T*>(t.get())) return p;
    }
    return nullptr;
  }
};

struct DecisionResult {
  std::vector<double> obs;
  double reward = 0;
  RewardTerms terms;
  Termination status;
};

/// Re-spawn with joint noise and return the initial observation.
std::vector<double> agent_reset(EnvInstance& inst, Rng& rng);

/// Hold `action` for `decision_frequency` physics steps, then evaluate reward,
/// termination and observation once. NonFiniteState is reported as
/// terminated(non_finite) rather than thrown.
DecisionResult step_decision(EnvInstance& inst, std::span<const double> action, int decision_frequency);

std::vector<double> build_observation(const EnvInstance& inst);
RewardTerms step_reward(const EnvInstance& inst);
Termination terminate_check(const EnvInstance& inst);

/// Sum of squared actions clamped to [-1, 1], skipping `ignore`.
double get_effort(std::span<const double> actions, const std::set<int>& ignore = {});
/// World-up component of the up axis of the single body carrying `label`.
double uprightness(const SceneState& state, const ArticulatedModel& model, std::string_view label);
double tilt(const SceneState& state, const ArticulatedModel& model, std::string_view label);
double uprightness(const RigidState& body);
/// Joints within 1% of range width from either bound.
int joints_at_limit_count(const SceneState& state, const Articulation& art);
/// sin(2 pi phi) * sign(x_left - x_right), phi = (clock mod T) / T.
double phase_bonus(double phase_clock, double period, double x_left_foot, double x_right_foot);

struct CollisionVerdict {
  bool foot_only = true;
  int body = -1;  // first non-foot body touching the terrain
};
CollisionVerdict on_terrain_collision(const ContactSet& contacts, const ArticulatedModel& model);

}  // namespace ragmark

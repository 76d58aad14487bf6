#pragma once

// Task wrappers over env-suite: player controller goals, reference-motion
// imitation and generated terrain with an adversarial generator.

#include <array>
#include <functional>
#include <map>
#include <optional>

#include "ragmark/env.hpp"

namespace ragmark {

// ---------------------------------------------------------------- controller

enum class ControllerMode { Continuous, Discrete };

enum class DiscreteGoal { Left, Right, Stationary, Jump, JumpLeft, JumpRight };

inline constexpr int kDiscreteGoalCount = 6;

std::string_view to_string(DiscreteGoal g);
/// Throws InvalidValue.
DiscreteGoal parse_goal(std::string_view name);
/// -1, 0 or +1.
double goal_direction(DiscreteGoal g);
bool is_jump(DiscreteGoal g);

struct ControllerGoal {
  ControllerMode mode = ControllerMode::Discrete;
  double target_velocity = 0;  // continuous mode
  DiscreteGoal discrete_goal = DiscreteGoal::Stationary;
  int steps_until_resample = 0;

  /// v* in [-1, 1] for either mode.
  double command() const;
  bool jumping() const { return mode == ControllerMode::Discrete && is_jump(discrete_goal); }
};

ControllerGoal sample_goal(ControllerMode mode, Rng& rng);

struct ControllerParams {
  ControllerMode mode = ControllerMode::Discrete;
  double v_max = 2.0;
  double w_jump = 0.5;
  double jump_window = 1.0;  // s after goal assignment
};

/// w_velocity * (v_max - |vx - v* v_max|) / v_max.
double tracking_term(double w_velocity, double vx, double command, double v_max);

class ControllerTask : public Task {
 public:
  explicit ControllerTask(ControllerParams p = {});

  std::string name() const override;
  std::unique_ptr<Task> clone() const override { return std::make_unique<ControllerTask>(*this); }
  int extra_obs_dim() const override { return params_.mode == ControllerMode::Discrete ? kDiscreteGoalCount : 1; }
  void on_reset(EnvInstance& inst, Rng& rng) override;
  void on_decision(EnvInstance& inst) override;
  double reward(const EnvInstance& inst, const RewardTerms& terms, double current) override;
  void observe(const EnvInstance& inst, std::vector<double>& obs) const override;

  const ControllerGoal& goal() const { return goal_; }
  /// Externally chosen goal (UI); applied from the next decision step and
  /// held until the next one.
  void set_goal(DiscreteGoal g);
  void set_goal(double target_velocity);
  const ControllerParams& params() const { return params_; }

 private:
  void assign(const ControllerGoal& g, const EnvInstance& inst);

  ControllerParams params_;
  ControllerGoal goal_;
  double goal_time_ = 0;
  bool hold_ = false;
  std::optional<ControllerGoal> pending_;
  Rng rng_;
};

// ---------------------------------------------------------------- imitation

struct MotionFrame {
  double t = 0;
  std::vector<double> q;
  std::array<double, 3> root{};  // x, y, angle
};

struct ReferenceMotion {
  std::string name;
  int joints = 0;
  bool loop = false;
  std::vector<MotionFrame> frames;

  double duration() const { return frames.empty() ? 0.0 : frames.back().t; }
};

/// Throws InvalidValue on malformed text, EmptyMotion when there are no frames.
ReferenceMotion parse_motion(const std::string& text);
ReferenceMotion load_motion(const std::string& path);
std::string format_motion(const ReferenceMotion& m);

/// Interpolated frame at time t; wraps when looping, clamps otherwise.
MotionFrame sample_reference(const ReferenceMotion& m, double t);

/// Sinusoidal gait for the six planar walker joints.
ReferenceMotion walker_gait_motion(double period = 1.0, double fps = 30.0);
/// Single-joint swing q(t) = amplitude sin(2 pi t / period).
ReferenceMotion pendulum_motion(double amplitude = 0.6, double period = 1.5, double fps = 60.0);
/// "walker-gait" or "pendulum"; throws InvalidValue.
ReferenceMotion generate_motion(const std::string& kind);

double pose_distance(std::span<const double> q, std::span<const double> ref);
/// exp(-k_p * sum (q - ref)^2); throws DimensionMismatch.
double imitation_reward(std::span<const double> q, std::span<const double> ref, double k_p = 2.0);
/// Terminated(early_termination) iff the pose distance exceeds d_max.
Termination imitation_terminate(std::span<const double> q, std::span<const double> ref, double d_max = 1.5);

struct ImitationParams {
  double k_p = 2.0;
  double d_max = 1.5;  // infinity never terminates
};

/// Replaces the base reward with the imitation reward and appends
/// [sin 2 pi phi, cos 2 pi phi] with phi = t / duration.
class ImitationTask : public Task {
 public:
  ImitationTask(std::shared_ptr<const ReferenceMotion> motion, ImitationParams p = {});

  std::string name() const override;
  std::unique_ptr<Task> clone() const override { return std::make_unique<ImitationTask>(*this); }
  int extra_obs_dim() const override { return 2; }
  double reward(const EnvInstance& inst, const RewardTerms& terms, double current) override;
  Termination terminate(const EnvInstance& inst, Termination base) override;
  void observe(const EnvInstance& inst, std::vector<double>& obs) const override;

  /// Actuated joint positions, in actuator order.
  static std::vector<double> actuated_pose(const EnvInstance& inst);
  const ReferenceMotion& motion() const { return *motion_; }
  double last_reward() const { return last_reward_; }

 private:
  std::shared_ptr<const ReferenceMotion> motion_;
  ImitationParams params_;
  double last_reward_ = 0;
};

// ---------------------------------------------------------------- terrain

struct Bounds {
  double min = 0, max = 0;
  double clip(double v) const { return std::clamp(v, min, max); }
};

struct TerrainChallenge {
  double bump_height = 0.3;
  double bump_spacing = 2.0;
  double slope = 0.05;
  double gap_width = 0.4;
  Bounds bump_height_bounds{0.0, 0.3};
  Bounds bump_spacing_bounds{1.0, 4.0};
  Bounds slope_bounds{0.0, 0.1};
  Bounds gap_width_bounds{0.0, 0.5};
  double difficulty = 0.0;
  double difficulty_cap = 0.8;
  int height_obs_count = 10;
  double height_obs_spacing = 0.2;

  /// Throws InvalidValue when a parameter is outside its bounds.
  void validate() const;
};

inline constexpr double kTerrainLength = 50.0;
inline constexpr double kTerrainSpacing = 0.1;
inline constexpr double kSpawnPad = 2.0;

/// Heightfield over [0, 50] m at 0.1 m spacing. The first 2 m stay flat.
Terrain generate_terrain(const TerrainChallenge& c, Rng& rng);

/// [y(x + i s) - y(x)] for i = 1..K.
std::vector<double> height_observation(const Terrain& terrain, double pelvis_x, int K, double spacing);

struct AdversaryState {
  TerrainChallenge current;
  double current_reward = 0;
  bool measured = false;
  int proposals = 0;
  int accepted = 0;
  /// Mean agent reward on each accepted challenge, in order.
  std::vector<double> accepted_rewards;

  double acceptance_rate() const { return proposals ? double(accepted) / proposals : 0.0; }
};

/// Gaussian step of 5% of each bound range, clipped to the bounds and to
/// difficulty <= difficulty_cap.
TerrainChallenge propose_challenge(const TerrainChallenge& c, Rng& rng);

/// Mean agent reward on a challenge (one evaluation window).
using ChallengeEvaluator = std::function<double(const TerrainChallenge&)>;

/// One hill-climbing step. The proposal replaces the current challenge only
/// if its measured mean agent reward is lower. Returns true on acceptance.
bool adversarial_update(AdversaryState& state, const ChallengeEvaluator& evaluate, Rng& rng);

class TerrainTask : public Task {
 public:
  explicit TerrainTask(TerrainChallenge c = {});

  std::string name() const override { return "terrain"; }
  std::unique_ptr<Task> clone() const override { return std::make_unique<TerrainTask>(*this); }
  int extra_obs_dim() const override { return challenge_.height_obs_count; }
  std::shared_ptr<const Terrain> terrain_for_reset(EnvInstance& inst, Rng& rng) override;
  void observe(const EnvInstance& inst, std::vector<double>& obs) const override;

  const TerrainChallenge& challenge() const { return challenge_; }
  /// Takes effect at the next reset; the observation length must not change.
  void set_challenge(const TerrainChallenge& c);

 private:
  TerrainChallenge challenge_;
};

// ---------------------------------------------------------------- factory

/// Wrapper names: controller-discrete, controller-continuous,
/// imitation:<walker-gait|pendulum|path>, terrain. Options come from the
/// run-config extras. Throws ConfigError for unknown names.
void apply_wrappers(EnvInstance& inst, const std::vector<std::string>& names,
                    const std::map<std::string, std::string>& options = {});

TerrainChallenge challenge_from_options(const std::map<std::string, std::string>& options);

}  // namespace ragmark

#include <cmath>

#include "ragmark/error.hpp"
#include "ragmark/tasks.hpp"

namespace ragmark {

namespace {

constexpr std::array<std::string_view, kDiscreteGoalCount> kGoalNames = {"left", "right", "stationary",
                                                                         "jump", "jump_left", "jump_right"};

}  // namespace

std::string_view to_string(DiscreteGoal g) { return kGoalNames[static_cast<int>(g)]; }

DiscreteGoal parse_goal(std::string_view name) {
  for (int k = 0; k < kDiscreteGoalCount; ++k) {
    if (kGoalNames[k] == name) return static_cast<DiscreteGoal>(k);
  }
  throw Error(ErrorCode::InvalidValue, "unknown goal '" + std::string(name) + "'");
}

double goal_direction(DiscreteGoal g) {
  switch (g) {
    case DiscreteGoal::Left:
    case DiscreteGoal::JumpLeft: return -1.0;
    case DiscreteGoal::Right:
    case DiscreteGoal::JumpRight: return 1.0;
    default: return 0.0;
  }
}

bool is_jump(DiscreteGoal g) {
  return g == DiscreteGoal::Jump || g == DiscreteGoal::JumpLeft || g == DiscreteGoal::JumpRight;
}

double ControllerGoal::command() const {
  return mode == ControllerMode::Continuous ? target_velocity : goal_direction(discrete_goal);
}

ControllerGoal sample_goal(ControllerMode mode, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  ControllerGoal g;
  g.mode = mode;
  if (mode == ControllerMode::Continuous) {
    g.target_velocity = std::uniform_real_distribution<double>(-1.0, 1.0)(rng);
  } else {
    const double base = u(rng);
    const bool jump = u(rng) < 0.25;
    if (base < 0.4) g.discrete_goal = jump ? DiscreteGoal::JumpLeft : DiscreteGoal::Left;
    else if (base < 0.8) g.discrete_goal = jump ? DiscreteGoal::JumpRight : DiscreteGoal::Right;
    else g.discrete_goal = jump ? DiscreteGoal::Jump : DiscreteGoal::Stationary;
  }
  g.steps_until_resample = std::uniform_int_distribution<int>(40, 240)(rng);
  return g;
}

double tracking_term(double w_velocity, double vx, double command, double v_max) {
  return w_velocity * (v_max - std::abs(vx - command * v_max)) / v_max;
}

ControllerTask::ControllerTask(ControllerParams p) : params_(p) {
  goal_.mode = p.mode;
  if (p.v_max <= 0 || p.w_jump < 0 || p.jump_window < 0) throw Error(ErrorCode::InvalidValue, "controller params");
}

std::string ControllerTask::name() const {
  return params_.mode == ControllerMode::Discrete ? "controller-discrete" : "controller-continuous";
}

void ControllerTask::assign(const ControllerGoal& g, const EnvInstance& inst) {
  goal_ = g;
  goal_time_ = inst.phase_clock;
}

void ControllerTask::on_reset(EnvInstance& inst, Rng& rng) {
  rng_.seed(rng());
  if (hold_ && pending_) {
    assign(*pending_, inst);
  } else if (hold_) {
    assign(goal_, inst);
  } else {
    assign(sample_goal(params_.mode, rng_), inst);
  }
}

void ControllerTask::on_decision(EnvInstance& inst) {
  if (pending_) {
    assign(*pending_, inst);
    pending_.reset();
    return;
  }
  if (hold_) return;
  if (--goal_.steps_until_resample <= 0) assign(sample_goal(params_.mode, rng_), inst);
}

double ControllerTask::reward(const EnvInstance& inst, const RewardTerms& terms, double current) {
  const double w = inst.spec->reward_weights.w_velocity;
  const RigidState& p = inst.pelvis();
  double r = current - terms.velocity + tracking_term(w, p.lin_vel.x(), goal_.command(), params_.v_max);
  if (goal_.jumping() && inst.phase_clock - goal_time_ <= params_.jump_window) {
    r += params_.w_jump * std::max(0.0, p.lin_vel.y());
  }
  return r;
}

void ControllerTask::observe(const EnvInstance&, std::vector<double>& obs) const {
  if (params_.mode == ControllerMode::Continuous) {
    obs.push_back(goal_.target_velocity);
    return;
  }
  for (int k = 0; k < kDiscreteGoalCount; ++k) obs.push_back(k == static_cast<int>(goal_.discrete_goal) ? 1.0 : 0.0);
}

void ControllerTask::set_goal(DiscreteGoal g) {
  if (params_.mode != ControllerMode::Discrete) throw Error(ErrorCode::InvalidValue, "continuous controller");
  ControllerGoal next;
  next.mode = params_.mode;
  next.discrete_goal = g;
  pending_ = next;
  hold_ = true;
}

void ControllerTask::set_goal(double target_velocity) {
  if (params_.mode != ControllerMode::Continuous) throw Error(ErrorCode::InvalidValue, "discrete controller");
  if (!(target_velocity >= -1.0 && target_velocity <= 1.0)) throw Error(ErrorCode::InvalidValue, "target velocity");
  ControllerGoal next;
  next.mode = params_.mode;
  next.target_velocity = target_velocity;
  pending_ = next;
  hold_ = true;
}

}  // namespace ragmark

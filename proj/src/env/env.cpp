#include "ragmark/env.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>

#include "ragmark/error.hpp"
#include "ragmark/util.hpp"

namespace ragmark {

std::string_view to_string(EnvId id) {
  switch (id) {
    case EnvId::Hopper: return "hopper";
    case EnvId::Walker2d: return "walker2d";
    case EnvId::Humanoid: return "humanoid";
    case EnvId::Ant: return "ant";
    case EnvId::Slider: return "slider";
    case EnvId::Pendulum: return "pendulum";
  }
  return "?";
}

std::vector<EnvId> all_env_ids() {
  return {EnvId::Hopper, EnvId::Walker2d, EnvId::Humanoid, EnvId::Ant, EnvId::Slider, EnvId::Pendulum};
}

EnvId parse_env_id(std::string_view name) {
  for (EnvId id : all_env_ids()) {
    if (to_string(id) == name) return id;
  }
  throw Error(ErrorCode::UnknownEnv, "unknown environment '" + std::string(name) + "'");
}

std::string_view to_string(StepStatus s) {
  switch (s) {
    case StepStatus::Running: return "running";
    case StepStatus::Terminated: return "terminated";
    case StepStatus::Truncated: return "truncated";
  }
  return "?";
}

std::string_view to_string(TerminationReason r) {
  switch (r) {
    case TerminationReason::None: return "none";
    case TerminationReason::LowHeight: return "low_height";
    case TerminationReason::HeadTilt: return "head_tilt";
    case TerminationReason::BodyTilt: return "body_tilt";
    case TerminationReason::NonFootContact: return "non_foot_contact";
    case TerminationReason::NonFinite: return "non_finite";
    case TerminationReason::EarlyTermination: return "early_termination";
  }
  return "?";
}

std::string assets_dir() {
  if (const char* env = std::getenv("RAGMARK_ASSETS"); env && *env) return env;
  return RAGMARK_DEFAULT_ASSETS;
}

int expected_obs_dim(EnvId id) {
  switch (id) {
    case EnvId::Hopper: return 31;
    case EnvId::Walker2d: return 43;
    case EnvId::Humanoid: return 125;
    case EnvId::Ant: return 75;
    case EnvId::Slider: return 8;
    case EnvId::Pendulum: return 7;
  }
  return 0;
}

// ---------------------------------------------------------------- helpers

double get_effort(std::span<const double> actions, const std::set<int>& ignore) {
  double sum = 0;
  for (size_t i = 0; i < actions.size(); ++i) {
    if (ignore.count(static_cast<int>(i))) continue;
    double a = std::clamp(actions[i], -1.0, 1.0);
    sum += a * a;
  }
  return sum;
}

double uprightness(const RigidState& body) { return (body.quat * Vec3::UnitY()).y(); }

namespace {

int single_label(const ArticulatedModel& model, std::string_view label) {
  auto bodies = model.bodies_with_label(label);
  if (bodies.size() != 1) {
    throw Error(ErrorCode::MissingLabel, "expected exactly one body labeled '" + std::string(label) + "', found " +
                                             std::to_string(bodies.size()));
  }
  return bodies.front();
}

}  // namespace

double uprightness(const SceneState& state, const ArticulatedModel& model, std::string_view label) {
  return uprightness(state.bodies[single_label(model, label)]);
}

double tilt(const SceneState& state, const ArticulatedModel& model, std::string_view label) {
  return 1.0 - uprightness(state, model, label);
}

int joints_at_limit_count(const SceneState& state, const Articulation& art) {
  int count = 0;
  const auto& joints = art.joints();
  for (size_t i = 0; i < joints.size(); ++i) {
    double band = 0.01 * (joints[i].hi - joints[i].lo);
    double q = state.joint_pos[i];
    if (q <= joints[i].lo + band || q >= joints[i].hi - band) ++count;
  }
  return count;
}

double phase_bonus(double phase_clock, double period, double x_left_foot, double x_right_foot) {
  double phi = std::fmod(phase_clock, period) / period;
  double d = x_left_foot - x_right_foot;
  double sign = d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0);
  return std::sin(2.0 * M_PI * phi) * sign;
}

CollisionVerdict on_terrain_collision(const ContactSet& contacts, const ArticulatedModel& model) {
  for (const auto& c : contacts) {
    if (c.other_body >= 0 || !is_touching(c)) continue;
    if (!model.bodies[c.body].has_label("foot")) return {false, c.body};
  }
  return {};
}

// ---------------------------------------------------------------- callbacks

namespace {

void observe_generic(const EnvInstance& inst, std::vector<double>& obs) {
  const EnvSpec& spec = *inst.spec;
  const RigidState& p = inst.pelvis();
  const int dims = spec.planar ? 2 : 3;
  obs.push_back(inst.pelvis_height());
  Vec3 up = p.quat * Vec3::UnitY();
  for (int k = 0; k < dims; ++k) obs.push_back(up[k]);
  for (int k = 0; k < dims; ++k) obs.push_back(p.lin_vel[k]);
  const auto& joints = spec.articulation->joints();
  for (size_t i = 0; i < joints.size(); ++i) {
    double mid = 0.5 * (joints[i].lo + joints[i].hi);
    obs.push_back(2.0 * (inst.scene.joint_pos[i] - mid) / (joints[i].hi - joints[i].lo));
  }
  for (size_t i = 0; i < joints.size(); ++i) obs.push_back(0.1 * inst.scene.joint_vel[i]);
  for (int f : spec.feet) {
    bool touching = false;
    for (const auto& c : inst.scene.contacts) {
      touching = touching || (c.body == f && c.other_body < 0 && is_touching(c));
    }
    obs.push_back(touching ? 1.0 : 0.0);
  }
  if (spec.id == EnvId::Humanoid) {
    double phi = 2.0 * M_PI * inst.phase_clock / spec.phase_period;
    obs.push_back(std::sin(phi));
    obs.push_back(std::cos(phi));
  }
  for (int b : spec.tracked) {
    const RigidState& s = inst.scene.bodies[b];
    Vec3 rel = s.pos - p.pos;
    for (int k = 0; k < dims; ++k) obs.push_back(rel[k]);
    for (int k = 0; k < dims; ++k) obs.push_back(s.lin_vel[k]);
  }
  if (spec.id == EnvId::Slider) obs.push_back(inst.target_velocity);
}

RewardTerms reward_biped(const EnvInstance& inst) {
  const EnvSpec& spec = *inst.spec;
  const RewardWeights& w = spec.reward_weights;
  RewardTerms t;
  t.velocity = w.w_velocity * inst.pelvis().lin_vel.x();
  t.upright = w.w_upright * uprightness(inst.pelvis());
  t.effort = -w.w_effort * get_effort(inst.last_action, spec.effort_ignore);
  t.height = inst.pelvis_height() < w.height_threshold ? -w.low_height_penalty : 0.0;
  if (spec.id == EnvId::Humanoid) {
    t.phase = w.w_phase * phase_bonus(inst.phase_clock, spec.phase_period,
                                      inst.scene.bodies[spec.left_foot].pos.x(),
                                      inst.scene.bodies[spec.right_foot].pos.x());
  }
  return t;
}

RewardTerms reward_ant(const EnvInstance& inst) {
  const EnvSpec& spec = *inst.spec;
  const RewardWeights& w = spec.reward_weights;
  RewardTerms t;
  t.velocity = w.w_velocity * inst.pelvis().lin_vel.x();
  t.effort = -w.w_effort * get_effort(inst.last_action, spec.effort_ignore);
  t.joint_limit = -w.w_joint_limit * joints_at_limit_count(inst.scene, *spec.articulation);
  return t;
}

RewardTerms reward_slider(const EnvInstance& inst) {
  RewardTerms t;
  t.task = -std::abs(inst.scene.joint_vel[0] - inst.target_velocity);
  return t;
}

RewardTerms reward_none(const EnvInstance&) { return {}; }

Termination terminate_generic(const EnvInstance& inst) {
  const EnvSpec& spec = *inst.spec;
  const TerminationParams& tp = spec.termination;
  if (tp.non_foot_contact_terminates && !on_terrain_collision(inst.scene.contacts, spec.model()).foot_only) {
    return Termination::terminated(TerminationReason::NonFootContact);
  }
  if (tp.min_height > 0 && inst.pelvis_height() < tp.min_height) {
    return Termination::terminated(TerminationReason::LowHeight);
  }
  if (tp.max_head_tilt > 0 && spec.head >= 0 && 1.0 - uprightness(inst.scene.bodies[spec.head]) > tp.max_head_tilt) {
    return Termination::terminated(TerminationReason::HeadTilt);
  }
  if (tp.max_body_tilt > 0 && spec.torso >= 0 &&
      1.0 - uprightness(inst.scene.bodies[spec.torso]) > tp.max_body_tilt) {
    return Termination::terminated(TerminationReason::BodyTilt);
  }
  return Termination::running();
}

}  // namespace

// ---------------------------------------------------------------- spec

EnvSpecPtr make_env_spec(EnvId id, const std::string& assets) {
  auto spec = std::make_shared<EnvSpec>();
  spec->id = id;
  spec->env_id = std::string(to_string(id));
  spec->asset_path = assets + "/" + spec->env_id + ".xml";
  std::string bytes = read_file(spec->asset_path);
  spec->asset_sha256 = sha256_hex(bytes);
  ArticulatedModel model = expand_multi_axis(parse_model(bytes));
  spec->planar = model.planar;
  spec->articulation = std::make_shared<const Articulation>(model);
  const ArticulatedModel& m = spec->model();
  spec->act_dim = static_cast<int>(m.actuators.size());

  std::set<std::string> required = {"pelvis"};
  if (id == EnvId::Hopper) required = {"pelvis", "foot", "head"};
  if (id == EnvId::Walker2d || id == EnvId::Humanoid) required = {"pelvis", "foot"};
  if (id == EnvId::Ant) required = {"pelvis", "foot", "torso"};
  validate_labels(m, required);
  spec->pelvis = single_label(m, "pelvis");
  spec->feet = m.bodies_with_label("foot");
  if (id == EnvId::Hopper) spec->head = single_label(m, "head");
  if (id == EnvId::Ant) spec->torso = single_label(m, "torso");
  for (int b = 0; b < static_cast<int>(m.bodies.size()); ++b) {
    if (b != spec->pelvis && !m.bodies[b].synthesized()) spec->tracked.push_back(b);
  }

  spec->physics.dt = (id == EnvId::Humanoid || id == EnvId::Ant) ? 1.0 / 500.0 : 1.0 / 250.0;
  spec->observe_fn = observe_generic;
  switch (id) {
    case EnvId::Hopper:
      spec->reward_fn = reward_biped;
      spec->terminate_fn = terminate_generic;
      spec->termination = {0.3, 0.4, 0.0, true};
      break;
    case EnvId::Walker2d:
      spec->reward_fn = reward_biped;
      spec->terminate_fn = terminate_generic;
      spec->termination = {0.0, 0.0, 0.0, true};
      break;
    case EnvId::Humanoid:
      spec->reward_fn = reward_biped;
      spec->terminate_fn = terminate_generic;
      spec->reward_weights.height_threshold = 1.2;
      spec->termination = {0.0, 0.0, 0.0, true};
      spec->left_foot = m.body_index("left_foot");
      spec->right_foot = m.body_index("right_foot");
      if (spec->left_foot < 0 || spec->right_foot < 0) {
        throw Error(ErrorCode::MissingLabel, "humanoid needs left_foot and right_foot bodies");
      }
      break;
    case EnvId::Ant:
      spec->reward_fn = reward_ant;
      spec->terminate_fn = terminate_generic;
      spec->termination = {0.0, 0.0, 0.2, false};
      break;
    case EnvId::Slider:
      spec->reward_fn = reward_slider;
      spec->terminate_fn = [](const EnvInstance&) { return Termination::running(); };
      spec->episode_cap = 200;
      break;
    case EnvId::Pendulum:
      spec->reward_fn = reward_none;
      spec->terminate_fn = [](const EnvInstance&) { return Termination::running(); };
      spec->episode_cap = 500;
      break;
  }

  // Measure the layout on a default spawn and hold it to the documented table.
  EnvInstance probe(spec);
  probe.terrain = std::make_shared<const Terrain>(Terrain::flat());
  probe.scene = init_scene(*spec->articulation, *probe.terrain, spec->physics, spec->articulation->default_spawn());
  std::vector<double> obs;
  spec->observe_fn(probe, obs);
  spec->obs_dim = static_cast<int>(obs.size());
  if (spec->obs_dim != expected_obs_dim(id)) {
    throw Error(ErrorCode::DimensionMismatch, spec->env_id + " observation length " + std::to_string(spec->obs_dim) +
                                                  " != documented " + std::to_string(expected_obs_dim(id)));
  }
  return spec;
}

EnvSpecPtr make_env_spec(const std::string& env_id) { return make_env_spec(parse_env_id(env_id)); }

// ---------------------------------------------------------------- instance

EnvInstance::EnvInstance(EnvSpecPtr s) : spec(std::move(s)) {
  last_action.assign(spec->act_dim, 0.0);
  torques.assign(spec->act_dim, 0.0);
  terrain = std::make_shared<const Terrain>(Terrain::flat());
}

EnvInstance::EnvInstance(const EnvInstance& o)
    : spec(o.spec),
      scene(o.scene),
      terrain(o.terrain),
      last_action(o.last_action),
      torques(o.torques),
      decision_step(o.decision_step),
      phase_clock(o.phase_clock),
      episode_return(o.episode_return),
      target_velocity(o.target_velocity),
      start_x(o.start_x),
      status(o.status) {
  for (const auto& t : o.tasks) tasks.push_back(t->clone());
}

EnvInstance& EnvInstance::operator=(const EnvInstance& o) {
  if (this != &o) {
    EnvInstance copy(o);
    *this = std::move(copy);
  }
  return *this;
}

int EnvInstance::obs_dim() const {
  int d = spec->obs_dim;
  for (const auto& t : tasks) d += t->extra_obs_dim();
  return d;
}

double EnvInstance::pelvis_height() const {
  const RigidState& p = pelvis();
  return p.pos.y() - terrain->height(p.pos.x());
}

std::vector<double> build_observation(const EnvInstance& inst) {
  std::vector<double> obs;
  obs.reserve(inst.obs_dim());
  inst.spec->observe_fn(inst, obs);
  for (const auto& t : inst.tasks) t->observe(inst, obs);
  for (double v : obs) {
    if (!std::isfinite(v)) throw Error(ErrorCode::NonFiniteObservation, inst.spec->env_id + " observation");
  }
  return obs;
}

RewardTerms step_reward(const EnvInstance& inst) { return inst.spec->reward_fn(inst); }

Termination terminate_check(const EnvInstance& inst) {
  Termination t = inst.spec->terminate_fn(inst);
  for (const auto& task : inst.tasks) t = task->terminate(inst, t);
  if (t.status == StepStatus::Running && inst.decision_step >= inst.spec->episode_cap) {
    t.status = StepStatus::Truncated;
  }
  return t;
}

std::vector<double> agent_reset(EnvInstance& inst, Rng& rng) {
  const EnvSpec& spec = *inst.spec;
  const Articulation& art = *spec.articulation;
  inst.terrain = std::make_shared<const Terrain>(Terrain::flat());
  for (const auto& t : inst.tasks) {
    if (auto terrain = t->terrain_for_reset(inst, rng)) inst.terrain = std::move(terrain);
  }
  SpawnPose spawn = art.default_spawn();
  std::uniform_real_distribution<double> noise(-spec.reset_noise, spec.reset_noise);
  spawn.joint_vel.resize(spawn.joint_pos.size());
  for (size_t i = 0; i < spawn.joint_pos.size(); ++i) {
    const auto& j = art.joints()[i];
    spawn.joint_pos[i] = std::clamp(spawn.joint_pos[i] + noise(rng), j.lo, j.hi);
    spawn.joint_vel[i] = noise(rng);
  }
  spawn.root_pos.y() += inst.terrain->height(spawn.root_pos.x());
  inst.scene = init_scene(art, *inst.terrain, spec.physics, spawn);
  inst.last_action.assign(spec.act_dim, 0.0);
  inst.torques.assign(spec.act_dim, 0.0);
  inst.decision_step = 0;
  inst.phase_clock = 0;
  inst.episode_return = 0;
  inst.status = Termination::running();
  inst.start_x = inst.pelvis().pos.x();
  if (spec.id == EnvId::Slider) inst.target_velocity = std::uniform_real_distribution<double>(-1.0, 1.0)(rng);
  for (const auto& t : inst.tasks) t->on_reset(inst, rng);
  return build_observation(inst);
}

DecisionResult step_decision(EnvInstance& inst, std::span<const double> action, int decision_frequency) {
  const EnvSpec& spec = *inst.spec;
  if (static_cast<int>(action.size()) != spec.act_dim) {
    throw Error(ErrorCode::ShapeMismatch, "action length " + std::to_string(action.size()) + " != " +
                                              std::to_string(spec.act_dim));
  }
  for (double a : action) {
    if (!std::isfinite(a)) throw Error(ErrorCode::NonFiniteAction, "non-finite action");
  }
  const auto& actuators = spec.model().actuators;
  for (int i = 0; i < spec.act_dim; ++i) {
    inst.last_action[i] = action[i];
    inst.torques[i] = apply_motor(action[i], actuators[i]);
  }
  for (const auto& t : inst.tasks) t->on_decision(inst);

  DecisionResult out;
  try {
    for (int k = 0; k < decision_frequency; ++k) {
      step_physics(inst.scene, *spec.articulation, inst.torques, spec.physics, *inst.terrain);
    }
  } catch (const Error& e) {
    if (e.code() != ErrorCode::NonFiniteState) throw;
    inst.decision_step += 1;
    out.status = Termination::terminated(TerminationReason::NonFinite);
    inst.status = out.status;
    return out;
  }
  inst.decision_step += 1;
  inst.phase_clock += decision_frequency * spec.physics.dt;

  out.terms = step_reward(inst);
  double r = out.terms.total();
  for (const auto& t : inst.tasks) r = t->reward(inst, out.terms, r);
  out.reward = r;
  inst.episode_return += r;
  out.status = terminate_check(inst);
  inst.status = out.status;
  try {
    out.obs = build_observation(inst);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::NonFiniteObservation) throw;
    out.status = Termination::terminated(TerminationReason::NonFinite);
    inst.status = out.status;
    out.obs.clear();
  }
  return out;
}

}  // namespace ragmark

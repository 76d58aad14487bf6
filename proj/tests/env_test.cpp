#include <gtest/gtest.h>

#include <cmath>

#include "ragmark/env.hpp"
#include "ragmark/error.hpp"

using namespace ragmark;

namespace {

// Instance at the default spawn with no reset noise.
EnvInstance at_rest(EnvId id) {
  EnvInstance inst(make_env_spec(id));
  const Articulation& art = *inst.spec->articulation;
  inst.scene = init_scene(art, *inst.terrain, inst.spec->physics, art.default_spawn());
  inst.start_x = inst.pelvis().pos.x();
  return inst;
}

Quat about_z(double angle) { return Quat(Eigen::AngleAxisd(angle, Vec3::UnitZ())); }

}  // namespace

TEST(Dims, MatchTable) {
  struct Row {
    EnvId id;
    int obs, act;
  };
  for (Row r : {Row{EnvId::Hopper, 31, 4}, Row{EnvId::Walker2d, 43, 6}, Row{EnvId::Humanoid, 125, 21},
                Row{EnvId::Ant, 75, 8}}) {
    auto spec = make_env_spec(r.id);
    EXPECT_EQ(spec->obs_dim, r.obs) << spec->env_id;
    EXPECT_EQ(spec->act_dim, r.act) << spec->env_id;
    EXPECT_EQ(spec->obs_dim, expected_obs_dim(r.id));
  }
}

TEST(Dims, UnknownEnv) {
  try {
    make_env_spec(std::string("cheetah"));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::UnknownEnv);
  }
}

TEST(Observation, HopperAtRest) {
  EnvInstance inst = at_rest(EnvId::Hopper);
  auto obs = build_observation(inst);
  ASSERT_EQ(obs.size(), 31u);
  EXPECT_NEAR(obs[0], 1.25, 1e-12);
  EXPECT_NEAR(obs[1], 0.0, 1e-12);  // up x
  EXPECT_NEAR(obs[2], 1.0, 1e-12);  // up y
  EXPECT_EQ(obs[3], 0.0);
  EXPECT_EQ(obs[4], 0.0);
}

TEST(Observation, MidpointJointIsZero) {
  EnvInstance inst = at_rest(EnvId::Hopper);
  const auto& j = inst.spec->articulation->joints()[0];
  inst.scene.joint_pos[0] = 0.5 * (j.lo + j.hi);
  auto obs = build_observation(inst);
  EXPECT_NEAR(obs[5], 0.0, 1e-12);
}

TEST(Observation, FootContactFlag) {
  EnvInstance inst = at_rest(EnvId::Hopper);
  const int n = inst.act_dim();
  const size_t flag = 5 + 2 * n;
  inst.scene.contacts.clear();
  EXPECT_EQ(build_observation(inst)[flag], 0.0);
  Contact c;
  c.body = inst.spec->feet.front();
  c.distance = 0.0;
  inst.scene.contacts.push_back(c);
  EXPECT_EQ(build_observation(inst)[flag], 1.0);
}

TEST(Observation, LengthStableOverEpisode) {
  EnvInstance inst(make_env_spec(EnvId::Walker2d));
  Rng rng(3);
  auto obs = agent_reset(inst, rng);
  std::uniform_real_distribution<double> u(-1, 1);
  std::vector<double> a(inst.act_dim());
  for (int t = 0; t < 200; ++t) {
    for (double& v : a) v = u(rng);
    auto r = step_decision(inst, a, 5);
    if (r.status.status != StepStatus::Running) obs = agent_reset(inst, rng);
    else EXPECT_EQ(static_cast<int>(r.obs.size()), inst.spec->obs_dim);
  }
}

TEST(Reset, DeterministicAndClears) {
  EnvInstance a(make_env_spec(EnvId::Humanoid)), b(a.spec);
  Rng r1(42), r2(42);
  EXPECT_EQ(agent_reset(a, r1), agent_reset(b, r2));
  std::vector<double> act(a.act_dim(), 0.3);
  step_decision(a, act, 5);
  step_decision(a, act, 5);
  EXPECT_NE(a.episode_return, 0.0);
  agent_reset(a, r1);
  EXPECT_EQ(a.episode_return, 0.0);
  EXPECT_EQ(a.decision_step, 0);
}

TEST(Reward, HopperStandingStill) {
  EnvInstance inst = at_rest(EnvId::Hopper);
  RewardTerms t = step_reward(inst);
  EXPECT_NEAR(t.total(), 0.1, 1e-12);
  EXPECT_NEAR(t.upright, 0.1, 1e-12);
}

TEST(Reward, HopperLowHeightPenalty) {
  EnvInstance inst = at_rest(EnvId::Hopper);
  inst.scene.bodies[inst.spec->pelvis].pos.y() = 1.0;
  EXPECT_DOUBLE_EQ(step_reward(inst).height, -1.0);
}

TEST(Reward, AntAllJointsAtLimit) {
  EnvInstance inst = at_rest(EnvId::Ant);
  const auto& joints = inst.spec->articulation->joints();
  for (size_t i = 0; i < joints.size(); ++i) inst.scene.joint_pos[i] = joints[i].hi;
  EXPECT_NEAR(step_reward(inst).joint_limit, -0.2 * 8, 1e-12);
}

TEST(Reward, MonotoneInEffort) {
  EnvInstance inst = at_rest(EnvId::Walker2d);
  double prev = step_reward(inst).total();
  for (double a : {0.1, 0.4, 0.9, 1.0, 1.7}) {
    inst.last_action.assign(inst.act_dim(), 0.0);
    inst.last_action[2] = -a;
    double r = step_reward(inst).total();
    EXPECT_LE(r, prev);
    prev = r;
  }
}

TEST(Helpers, Effort) {
  EXPECT_EQ(get_effort(std::vector<double>{0, 0, 0}), 0.0);
  EXPECT_EQ(get_effort(std::vector<double>{1, -1}), 2.0);
  EXPECT_EQ(get_effort(std::vector<double>{1, -1}, {0}), 1.0);
  EXPECT_EQ(get_effort(std::vector<double>{3}), 1.0);
}

TEST(Helpers, UprightnessAndTilt) {
  RigidState s;
  EXPECT_DOUBLE_EQ(uprightness(s), 1.0);
  s.quat = about_z(M_PI / 2);
  EXPECT_NEAR(uprightness(s), 0.0, 1e-12);
  s.quat = about_z(M_PI);
  EXPECT_NEAR(uprightness(s), -1.0, 1e-12);

  EnvInstance inst = at_rest(EnvId::Hopper);
  const auto& m = inst.spec->model();
  EXPECT_NEAR(tilt(inst.scene, m, "head"), 0.0, 1e-12);
  inst.scene.bodies[inst.spec->head].quat = about_z(M_PI / 2);
  EXPECT_NEAR(tilt(inst.scene, m, "head"), 1.0, 1e-12);
  for (double ang : {0.1, 0.7, 2.0}) {
    inst.scene.bodies[inst.spec->head].quat = about_z(ang);
    EXPECT_EQ(tilt(inst.scene, m, "head"), 1.0 - uprightness(inst.scene, m, "head"));
  }
  try {
    uprightness(inst.scene, m, "tail");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::MissingLabel);
  }
}

TEST(Helpers, JointsAtLimitBand) {
  EnvInstance inst = at_rest(EnvId::Ant);
  const auto& joints = inst.spec->articulation->joints();
  for (size_t i = 0; i < joints.size(); ++i) inst.scene.joint_pos[i] = 0.5 * (joints[i].lo + joints[i].hi);
  EXPECT_EQ(joints_at_limit_count(inst.scene, *inst.spec->articulation), 0);
  inst.scene.joint_pos[0] = joints[0].hi;
  EXPECT_EQ(joints_at_limit_count(inst.scene, *inst.spec->articulation), 1);
  inst.scene.joint_pos[0] = joints[0].hi - 0.005 * (joints[0].hi - joints[0].lo);
  EXPECT_EQ(joints_at_limit_count(inst.scene, *inst.spec->articulation), 1);
  inst.scene.joint_pos[0] = joints[0].hi - 0.02 * (joints[0].hi - joints[0].lo);
  EXPECT_EQ(joints_at_limit_count(inst.scene, *inst.spec->articulation), 0);
}

TEST(Helpers, PhaseBonus) {
  EXPECT_EQ(phase_bonus(0.25, 1.0, 0.3, 0.3), 0.0);
  EXPECT_NEAR(phase_bonus(0.25, 1.0, 0.5, 0.1), 1.0, 1e-12);
  EXPECT_NEAR(phase_bonus(0.75, 1.0, 0.5, 0.1), -1.0, 1e-12);
  EXPECT_NEAR(phase_bonus(1.25, 1.0, 0.5, 0.1), 1.0, 1e-12);
}

TEST(Helpers, TerrainCollisionVerdict) {
  EnvInstance inst = at_rest(EnvId::Hopper);
  const auto& m = inst.spec->model();
  ContactSet cs;
  EXPECT_TRUE(on_terrain_collision(cs, m).foot_only);
  Contact c;
  c.body = inst.spec->feet.front();
  cs.push_back(c);
  EXPECT_TRUE(on_terrain_collision(cs, m).foot_only);
  c.body = inst.spec->head;
  cs.push_back(c);
  auto v = on_terrain_collision(cs, m);
  EXPECT_FALSE(v.foot_only);
  EXPECT_EQ(v.body, inst.spec->head);
}

TEST(Termination, HopperLowHeight) {
  EnvInstance inst = at_rest(EnvId::Hopper);
  inst.scene.contacts.clear();
  inst.scene.bodies[inst.spec->pelvis].pos.y() = 0.25;
  auto t = terminate_check(inst);
  EXPECT_EQ(t.status, StepStatus::Terminated);
  EXPECT_EQ(t.reason, TerminationReason::LowHeight);
}

TEST(Termination, HeightRuleMonotone) {
  EnvInstance inst = at_rest(EnvId::Hopper);
  inst.scene.contacts.clear();
  bool seen = false;
  for (double h = 1.0; h > 0.0; h -= 0.01) {
    inst.scene.bodies[inst.spec->pelvis].pos.y() = h;
    bool low = terminate_check(inst).reason == TerminationReason::LowHeight;
    if (seen) EXPECT_TRUE(low) << h;
    seen = seen || low;
  }
  EXPECT_TRUE(seen);
}

TEST(Termination, HopperHeadTilt) {
  EnvInstance inst = at_rest(EnvId::Hopper);
  inst.scene.contacts.clear();
  inst.scene.bodies[inst.spec->head].quat = about_z(std::acos(0.5));  // tilt 0.5
  EXPECT_EQ(terminate_check(inst).reason, TerminationReason::HeadTilt);
  inst.scene.bodies[inst.spec->head].quat = about_z(std::acos(0.7));  // tilt 0.3
  EXPECT_EQ(terminate_check(inst).status, StepStatus::Running);
}

TEST(Termination, WalkerTorsoContact) {
  EnvInstance inst = at_rest(EnvId::Walker2d);
  inst.scene.contacts.clear();
  Contact c;
  c.body = inst.spec->model().bodies_with_label("torso").front();
  inst.scene.contacts.push_back(c);
  auto t = terminate_check(inst);
  EXPECT_EQ(t.status, StepStatus::Terminated);
  EXPECT_EQ(t.reason, TerminationReason::NonFootContact);
}

TEST(Termination, AntTilt) {
  EnvInstance inst = at_rest(EnvId::Ant);
  inst.scene.bodies[inst.spec->torso].quat = about_z(std::acos(0.95));  // tilt 0.05
  EXPECT_EQ(terminate_check(inst).status, StepStatus::Running);
  inst.scene.bodies[inst.spec->torso].quat = about_z(std::acos(0.7));
  EXPECT_EQ(terminate_check(inst).reason, TerminationReason::BodyTilt);
}

TEST(Termination, CapTruncates) {
  EnvInstance inst = at_rest(EnvId::Ant);
  inst.decision_step = inst.spec->episode_cap;
  auto t = terminate_check(inst);
  EXPECT_EQ(t.status, StepStatus::Truncated);
}

TEST(Step, HopperStaysPlanar) {
  EnvInstance inst(make_env_spec(EnvId::Hopper));
  Rng rng(11);
  agent_reset(inst, rng);
  std::uniform_real_distribution<double> u(-1, 1);
  std::vector<double> torques(inst.act_dim());
  const auto& acts = inst.spec->model().actuators;
  double max_z = 0;
  for (int t = 0; t < 10000; ++t) {
    if (t % 10 == 0) {
      for (int i = 0; i < inst.act_dim(); ++i) torques[i] = apply_motor(u(rng), acts[i]);
    }
    step_physics(inst.scene, *inst.spec->articulation, torques, inst.spec->physics, *inst.terrain);
    for (const auto& b : inst.scene.bodies) max_z = std::max(max_z, std::abs(b.pos.z()));
    if (terminate_check(inst).status != StepStatus::Running) agent_reset(inst, rng);
  }
  EXPECT_EQ(max_z, 0.0);
}

TEST(Step, DecisionFrequencyAdvancesTime) {
  EnvInstance inst(make_env_spec(EnvId::Hopper));
  Rng rng(1);
  agent_reset(inst, rng);
  std::vector<double> a(inst.act_dim(), 0.0);
  step_decision(inst, a, 5);
  EXPECT_NEAR(inst.scene.time, 5 * inst.spec->physics.dt, 1e-12);
  EXPECT_EQ(inst.scene.step_count, 5);
}

TEST(Step, ShapeAndFiniteChecks) {
  EnvInstance inst(make_env_spec(EnvId::Hopper));
  Rng rng(1);
  agent_reset(inst, rng);
  std::vector<double> a(3, 0.0);
  EXPECT_THROW(step_decision(inst, a, 5), Error);
  std::vector<double> b(4, 0.0);
  b[1] = std::nan("");
  try {
    step_decision(inst, b, 5);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NonFiniteAction);
  }
}

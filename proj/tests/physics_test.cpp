#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "ragmark/error.hpp"
#include "ragmark/physics.hpp"
#include "test_models.hpp"

using namespace ragmark;

namespace {

Articulation make(const std::string& xml) { return Articulation(expand_multi_axis(parse_model(xml))); }

// Time between successive downward zero crossings of joint 0, averaged.
double measure_period(double length, double dt) {
  Articulation art = make(fixtures::pendulum_xml(length));
  PhysicsConfig cfg;
  cfg.dt = dt;
  SpawnPose spawn = art.default_spawn();
  spawn.joint_pos[0] = 0.1;
  SceneState s = init_scene(art, Terrain::flat(), cfg, spawn);
  std::vector<double> none;
  std::vector<double> crossings;
  double prev = s.joint_pos[0], prev_t = s.time;
  while (crossings.size() < 4 && s.time < 20) {
    step_physics(s, art, none, cfg, Terrain::flat());
    double q = s.joint_pos[0];
    if (prev > 0 && q <= 0) crossings.push_back(prev_t + (s.time - prev_t) * prev / (prev - q));
    prev = q;
    prev_t = s.time;
  }
  return (crossings.back() - crossings.front()) / static_cast<double>(crossings.size() - 1);
}

}  // namespace

TEST(Physics, FreeBodyAdvancesExactly) {
  Articulation art = make(fixtures::kSphereXml);
  PhysicsConfig cfg;
  cfg.dt = 0.004;
  cfg.gravity.setZero();
  SpawnPose spawn = art.default_spawn();
  spawn.root_lin_vel = Vec3(1, 0, 0);
  SceneState s = init_scene(art, Terrain::flat(), cfg, spawn);
  step_physics(s, art, {}, cfg, Terrain::flat());
  EXPECT_DOUBLE_EQ(s.bodies[0].pos.x(), 0.004);
  EXPECT_DOUBLE_EQ(s.bodies[0].pos.y(), 1.0);
}

TEST(Physics, FreeFallVelocityAfterOneSecond) {
  Articulation art = make(fixtures::kSphereXml);
  PhysicsConfig cfg;
  SpawnPose spawn = art.default_spawn();
  spawn.root_pos = Vec3(0, 100, 0);
  SceneState s = init_scene(art, Terrain::flat(), cfg, spawn);
  for (int i = 0; i < 250; ++i) step_physics(s, art, {}, cfg, Terrain::flat());
  EXPECT_NEAR(s.bodies[0].lin_vel.y(), -9.81, 1e-9);
}

TEST(Physics, PendulumPeriodMatchesSmallAngleFormula) {
  double expected = 2 * M_PI * std::sqrt(1.0 / 9.81);
  double measured = measure_period(1.0, 1.0 / 250.0);
  EXPECT_NEAR(measured / expected, 1.0, 0.02) << measured;
}

TEST(Physics, PendulumEnergyDriftBounded) {
  Articulation art = make(fixtures::pendulum_xml(1.0));
  PhysicsConfig cfg;
  cfg.dt = 1.0 / 500.0;
  SpawnPose spawn = art.default_spawn();
  const double e_bottom = mechanical_energy(init_scene(art, Terrain::flat(), cfg, spawn), art, cfg);
  spawn.joint_pos[0] = 0.5;
  SceneState s = init_scene(art, Terrain::flat(), cfg, spawn);
  double e0 = mechanical_energy(s, art, cfg);
  double swing0 = e0 - e_bottom;  // energy above the bottom of the arc
  double worst = 0;
  for (int i = 0; i < 5000; ++i) {
    step_physics(s, art, {}, cfg, Terrain::flat());
    worst = std::max(worst, std::abs(mechanical_energy(s, art, cfg) - e0));
  }
  EXPECT_LT(worst / swing0, 0.05);
}

TEST(Physics, MomentumConservedForIsolatedChain) {
  Articulation art = make(fixtures::kFreeChainXml);
  PhysicsConfig cfg;
  cfg.gravity.setZero();
  SpawnPose spawn = art.default_spawn();
  spawn.root_lin_vel = Vec3(0.3, -0.2, 0.1);
  spawn.root_ang_vel = Vec3(0.5, 1.0, -2.0);
  spawn.joint_vel = {1.5, -2.0};
  SceneState s = init_scene(art, Terrain::flat(), cfg, spawn);
  Vec3 p0 = linear_momentum(s, art);
  for (int i = 0; i < 1000; ++i) step_physics(s, art, {}, cfg, Terrain::flat());
  EXPECT_LT((linear_momentum(s, art) - p0).norm(), 1e-6);
}

TEST(Physics, HingeAnchorDriftStaysSmall) {
  Articulation art = make(fixtures::kChainXml);
  PhysicsConfig cfg;
  SceneState s = init_scene(art, Terrain::flat(), cfg, art.default_spawn());
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-1, 1);
  std::vector<double> tau(3);
  double worst = 0;
  for (int i = 0; i < 10000; ++i) {
    if (i % 25 == 0) {
      for (int k = 0; k < 3; ++k) tau[k] = apply_motor(u(rng), art.model().actuators[k]);
    }
    step_physics(s, art, tau, cfg, Terrain::flat());
    for (int j = 0; j < art.joint_count(); ++j) {
      auto [a, b] = joint_anchors(s, art, j);
      worst = std::max(worst, (a - b).norm());
    }
  }
  EXPECT_LT(worst, 1e-3);
}

TEST(Physics, JointLimitsHoldUnderSaturatedTorque) {
  Articulation art = make(fixtures::kChainXml);
  PhysicsConfig cfg;
  SceneState s = init_scene(art, Terrain::flat(), cfg, art.default_spawn());
  std::vector<double> tau = {20, -10, 5};
  double worst = 0;
  for (int i = 0; i < 2000; ++i) {
    if (i == 1000) tau = {-20, 10, -5};
    step_physics(s, art, tau, cfg, Terrain::flat());
    for (int j = 0; j < art.joint_count(); ++j) {
      const auto& jt = art.joints()[j];
      double q = s.joint_pos[j];
      worst = std::max(worst, std::abs(q - std::clamp(q, jt.lo, jt.hi)));
    }
  }
  EXPECT_LT(worst, 0.05);
}

TEST(Physics, RestingBoxPenetrationSmall) {
  Articulation art = make(fixtures::kBoxXml);
  PhysicsConfig cfg;
  SpawnPose spawn = art.default_spawn();
  spawn.root_pos = Vec3(0, 0.105, 0);
  SceneState s = init_scene(art, Terrain::flat(), cfg, spawn);
  for (int i = 0; i < 1000; ++i) step_physics(s, art, {}, cfg, Terrain::flat());
  double lowest = s.bodies[0].pos.y() - 0.1;
  EXPECT_GT(lowest, -5e-3);
  EXPECT_LT(s.bodies[0].lin_vel.norm(), 1e-2);
}

TEST(Physics, SpawnPenetrationRejected) {
  Articulation art = make(fixtures::kBoxXml);
  SpawnPose spawn = art.default_spawn();
  spawn.root_pos = Vec3(0, 0.05, 0);
  try {
    init_scene(art, Terrain::flat(), PhysicsConfig{}, spawn);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::SpawnPenetration);
  }
}

TEST(Physics, SpawnOutsideRangeRejected) {
  Articulation art = make(fixtures::kChainXml);
  SpawnPose spawn = art.default_spawn();
  spawn.joint_pos[1] = 2.0;
  try {
    init_scene(art, Terrain::flat(), PhysicsConfig{}, spawn);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::RangeViolation);
  }
}

TEST(Physics, MotorClamps) {
  ActuatorSpec a;
  a.gear = 100;
  EXPECT_EQ(apply_motor(0.0, a), 0.0);
  EXPECT_EQ(apply_motor(1.0, a), 100.0);
  EXPECT_EQ(apply_motor(1.5, a), 100.0);
  EXPECT_EQ(apply_motor(-3.0, a), -100.0);
}

TEST(Physics, HeightQuery) {
  EXPECT_EQ(query_height(Terrain::flat(), 12.3), 0.0);
  Terrain t = Terrain::heightfield({0.0, 1.0}, 1.0);
  EXPECT_DOUBLE_EQ(query_height(t, 0.5), 0.5);
  EXPECT_DOUBLE_EQ(query_height(t, 5.0), 1.0);
  EXPECT_DOUBLE_EQ(query_height(t, -5.0), 0.0);
}

TEST(Physics, ProjectPlanarIsIdempotent) {
  SceneState s;
  s.bodies.resize(1);
  s.bodies[0].lin_vel = Vec3(1, 2, 0.3);
  s.bodies[0].ang_vel = Vec3(0.1, 0.2, 0.3);
  s.bodies[0].quat = Quat(Eigen::AngleAxisd(0.3, Vec3(1, 1, 1).normalized()));
  project_planar(s);
  EXPECT_EQ(s.bodies[0].lin_vel.z(), 0.0);
  SceneState once = s;
  project_planar(s);
  EXPECT_EQ(s.bodies[0].quat.coeffs(), once.bodies[0].quat.coeffs());
  EXPECT_EQ(s.bodies[0].ang_vel, once.bodies[0].ang_vel);
}

TEST(Physics, StepIsDeterministic) {
  Articulation art = make(fixtures::kChainXml);
  PhysicsConfig cfg;
  SceneState a = init_scene(art, Terrain::flat(), cfg, art.default_spawn());
  SceneState b = a;
  std::vector<double> tau = {3, -2, 1};
  for (int i = 0; i < 500; ++i) {
    step_physics(a, art, tau, cfg, Terrain::flat());
    step_physics(b, art, tau, cfg, Terrain::flat());
  }
  for (int i = 0; i < art.body_count(); ++i) {
    EXPECT_EQ(a.bodies[i].pos, b.bodies[i].pos);
    EXPECT_EQ(a.bodies[i].quat.coeffs(), b.bodies[i].quat.coeffs());
  }
}

TEST(Physics, TorqueLengthChecked) {
  Articulation art = make(fixtures::kChainXml);
  PhysicsConfig cfg;
  SceneState s = init_scene(art, Terrain::flat(), cfg, art.default_spawn());
  std::vector<double> tau = {1.0};
  EXPECT_THROW(step_physics(s, art, tau, cfg, Terrain::flat()), Error);
}

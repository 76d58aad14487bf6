#include <gtest/gtest.h>

#include "ragmark/error.hpp"
#include "ragmark/vec_scene.hpp"

using namespace ragmark;

namespace {

std::vector<double> random_actions(Rng& rng, size_t n) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> a(n);
  for (double& v : a) v = u(rng);
  return a;
}

void expect_same(const BatchTransition& a, const BatchTransition& b) {
  EXPECT_EQ(a.obs, b.obs);
  EXPECT_EQ(a.rewards, b.rewards);
  EXPECT_EQ(a.status, b.status);
  EXPECT_EQ(a.reset_flags, b.reset_flags);
  EXPECT_EQ(a.terminal_obs, b.terminal_obs);
}

}  // namespace

TEST(VecScene, ResetShape) {
  VecScene scene(make_env_spec(EnvId::Hopper), 16);
  BatchTransition b = scene.reset(1);
  EXPECT_EQ(b.agents, 16);
  EXPECT_EQ(b.obs_dim, 31);
  EXPECT_EQ(b.obs.size(), 16u * 31u);
  for (int i = 0; i < 16; ++i) {
    EXPECT_EQ(b.reset_flags[i], 1);
    EXPECT_EQ(b.rewards[i], 0.0);
  }
  VecScene one(make_env_spec(EnvId::Hopper), 1);
  EXPECT_EQ(one.reset(1).obs.size(), 31u);
}

TEST(VecScene, ResetDeterministic) {
  auto spec = make_env_spec(EnvId::Walker2d);
  VecScene a(spec, 4), b(spec, 4);
  expect_same(a.reset(9), b.reset(9));
  EXPECT_NE(a.reset(9).obs, a.reset(10).obs);
}

TEST(VecScene, StepBeforeResetRejected) {
  VecScene scene(make_env_spec(EnvId::Hopper), 2);
  std::vector<double> a(8, 0.0);
  try {
    scene.step(a);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::BadState);
  }
}

TEST(VecScene, ShapeMismatch) {
  VecScene scene(make_env_spec(EnvId::Hopper), 2);
  scene.reset(0);
  std::vector<double> a(7, 0.0);
  try {
    scene.step(a);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ShapeMismatch);
  }
  a.assign(8, 0.0);
  a[3] = INFINITY;
  try {
    scene.step(a);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NonFiniteAction);
  }
}

TEST(VecScene, DecisionFrequencyAdvancesTime) {
  VecScene scene(make_env_spec(EnvId::Hopper), 3, 5);
  scene.reset(0);
  std::vector<double> a(12, 0.0);
  scene.step(a);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(scene.instance(i).scene.time, 5 * scene.spec().physics.dt, 1e-12);
}

TEST(VecScene, ParallelMatchesSerial) {
  auto spec = make_env_spec(EnvId::Hopper);
  VecScene par(spec, 8), ser(spec, 8);
  par.set_threads(4);
  expect_same(par.reset(5), ser.reset(5));
  Rng rng(2);
  for (int t = 0; t < 300; ++t) {
    auto a = random_actions(rng, 8 * 4);
    expect_same(par.step(a), ser.step_serial(a));
  }
}

TEST(VecScene, DeterministicStream) {
  auto spec = make_env_spec(EnvId::Ant);
  VecScene a(spec, 4), b(spec, 4);
  a.reset(3);
  b.reset(3);
  Rng r1(8), r2(8);
  for (int t = 0; t < 100; ++t) expect_same(a.step(random_actions(r1, 32)), b.step(random_actions(r2, 32)));
}

TEST(VecScene, StepAccounting) {
  VecScene scene(make_env_spec(EnvId::Hopper), 5);
  scene.reset(0);
  std::vector<double> a(20, 0.0);
  for (int t = 0; t < 7; ++t) scene.step(a);
  EXPECT_EQ(scene.totals().steps, 35);
}

TEST(VecScene, AutoResetFlagsFreshEpisodes) {
  VecScene scene(make_env_spec(EnvId::Hopper), 4);
  scene.reset(0);
  Rng rng(1);
  int resets = 0;
  for (int t = 0; t < 400; ++t) {
    BatchTransition b = scene.step(random_actions(rng, 16));
    for (int i = 0; i < 4; ++i) {
      if (b.status[i] == StepStatus::Running) {
        EXPECT_EQ(b.reset_flags[i], 0);
        EXPECT_GT(scene.instance(i).decision_step, 0);
      } else {
        ++resets;
        EXPECT_EQ(b.reset_flags[i], 1);
        EXPECT_EQ(scene.instance(i).decision_step, 0);
        // the returned row is the new episode's first observation
        EXPECT_EQ(std::vector<double>(b.obs_row(i).begin(), b.obs_row(i).end()),
                  build_observation(scene.instance(i)));
      }
    }
    EXPECT_EQ(static_cast<int>(b.finished.size()),
              std::count(b.reset_flags.begin(), b.reset_flags.end(), std::uint8_t{1}));
  }
  EXPECT_GT(resets, 0);
}

TEST(VecScene, FallingHopperTerminatesAndResets) {
  VecScene scene(make_env_spec(EnvId::Hopper), 1);
  scene.reset(0);
  std::vector<double> a(4, 0.0);
  a[0] = 1.0;  // waist torque topples the torso
  for (int t = 0; t < 500; ++t) {
    double before = scene.instance(0).pelvis_height();
    BatchTransition b = scene.step(a);
    if (b.status[0] == StepStatus::Running) continue;
    EXPECT_EQ(b.status[0], StepStatus::Terminated);
    EXPECT_EQ(b.reset_flags[0], 1);
    EXPECT_LT(before, 1.25);
    EXPECT_NEAR(b.obs[0], 1.25, 1e-12);  // fresh spawn height
    return;
  }
  FAIL() << "hopper never terminated";
}

TEST(VecScene, InstancesIndependent) {
  auto spec = make_env_spec(EnvId::Walker2d);
  VecScene a(spec, 3), b(spec, 3);
  a.reset(4);
  b.reset(4);
  Rng rng(6);
  std::uniform_real_distribution<double> u(-1, 1);
  for (int t = 0; t < 50; ++t) {
    auto acts = random_actions(rng, 18);
    auto other = acts;
    for (int k = 0; k < 6; ++k) other[k] = u(rng);  // perturb instance 0 only
    BatchTransition x = a.step(acts), y = b.step(other);
    for (int i = 1; i < 3; ++i) {
      EXPECT_EQ(x.rewards[i], y.rewards[i]);
      EXPECT_EQ(std::vector<double>(x.obs_row(i).begin(), x.obs_row(i).end()),
                std::vector<double>(y.obs_row(i).begin(), y.obs_row(i).end()));
    }
  }
}

TEST(VecScene, TruncationAtCap) {
  auto spec = std::make_shared<EnvSpec>(*make_env_spec(EnvId::Slider));
  spec->episode_cap = 10;
  VecScene scene(EnvSpecPtr(spec), 2);
  scene.reset(0);
  std::vector<double> a(2, 0.0);
  for (int t = 0; t < 9; ++t) EXPECT_EQ(scene.step(a).status[0], StepStatus::Running);
  BatchTransition b = scene.step(a);
  EXPECT_EQ(b.status[0], StepStatus::Truncated);
  EXPECT_EQ(b.finished.size(), 2u);
  EXPECT_EQ(b.finished[0].length, 10);
}

TEST(Bench, ReportsPositiveThroughput) {
  VecScene scene(make_env_spec(EnvId::Hopper), 4);
  BenchReport r = bench_throughput(scene, 0.2, ActionSource::Random, 1);
  EXPECT_GT(r.agent_steps_per_second, 0);
  EXPECT_EQ(r.total_agent_steps, 4 * r.vec_steps);
  std::string text = r.to_text();
  EXPECT_NE(text.find("environment=hopper\n"), std::string::npos);
  EXPECT_NE(text.find("agent_steps_per_second="), std::string::npos);
}

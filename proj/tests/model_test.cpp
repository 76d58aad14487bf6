#include <gtest/gtest.h>

#include "ragmark/env.hpp"
#include "ragmark/error.hpp"
#include "ragmark/model.hpp"
#include "ragmark/util.hpp"
#include "test_models.hpp"

using namespace ragmark;

namespace {

ErrorCode code_of(std::string_view xml) {
  try {
    parse_model(xml);
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error raised";
  return ErrorCode::IoError;
}

const char* kOneHinge = R"(<mujoco model="one"><worldbody>
  <body name="b" pos="0 1 0">
    <inertial mass="2" diaginertia="0.1 0.2 0.3"/>
    <joint name="j" type="hinge" axis="0 0 1" range="-30 60"/>
  </body>
</worldbody><actuator><motor joint="j" gear="5"/></actuator></mujoco>)";

std::string asset(const std::string& name) { return read_file(assets_dir() + "/" + name + ".xml"); }

const char* kBall = R"(<mujoco model="ball"><worldbody>
  <body name="a" pos="0 2 0">
    <geom type="sphere" size="0.1"/>
    <body name="b" pos="0 -0.5 0">
      <joint name="ball" type="hinge" axis="0 0 1" range="-45 45" axis2="1 0 0" range2="-30 30"
             axis3="0 1 0" range3="-20 20"/>
      <geom type="sphere" size="0.1"/>
    </body>
  </body>
</worldbody><actuator><motor joint="ball" gear="10"/></actuator></mujoco>)";

}  // namespace

TEST(Parse, SingleHingeBody) {
  ArticulatedModel m = parse_model(kOneHinge);
  EXPECT_EQ(m.bodies.size(), 1u);
  EXPECT_EQ(m.joints.size(), 1u);
  EXPECT_EQ(m.actuators.size(), 1u);
  EXPECT_DOUBLE_EQ(m.bodies[0].mass, 2.0);
  EXPECT_NEAR(m.joints[0].range_lo, -M_PI / 6, 1e-12);
  EXPECT_NEAR(m.joints[0].range_hi, M_PI / 3, 1e-12);
  EXPECT_DOUBLE_EQ(m.actuators[0].gear, 5.0);
}

TEST(Parse, HopperHasFourActuators) {
  ArticulatedModel m = parse_model(asset("hopper"));
  EXPECT_EQ(m.actuators.size(), 4u);
  EXPECT_TRUE(m.planar);
}

TEST(Parse, ZeroMassRejected) {
  EXPECT_EQ(code_of(R"(<mujoco><worldbody><body name="b"><inertial mass="0" diaginertia="1 1 1"/></body>
                       </worldbody></mujoco>)"),
            ErrorCode::InvalidValue);
}

TEST(Parse, MalformedXml) { EXPECT_EQ(code_of("<mujoco><worldbody>"), ErrorCode::MalformedXml); }

TEST(Parse, UnknownElement) {
  EXPECT_EQ(code_of(R"(<mujoco><worldbody><body name="b"><site name="s"/></body></worldbody></mujoco>)"),
            ErrorCode::UnknownTag);
  EXPECT_EQ(code_of(R"(<mujoco><tendon/></mujoco>)"), ErrorCode::UnknownTag);
}

TEST(Parse, UnknownAttribute) {
  EXPECT_EQ(code_of(R"(<mujoco><worldbody><body name="b" color="red"><geom type="sphere" size="1"/></body>
                       </worldbody></mujoco>)"),
            ErrorCode::UnknownTag);
}

TEST(Parse, BadRangeRejected) {
  EXPECT_EQ(code_of(R"(<mujoco><worldbody><body name="b"><geom type="sphere" size="0.1"/>
                       <joint name="j" axis="0 0 1" range="10 10"/></body></worldbody></mujoco>)"),
            ErrorCode::InvalidValue);
}

TEST(Parse, BadQuaternionRejected) {
  EXPECT_EQ(code_of(R"(<mujoco><worldbody><body name="b" quat="0 0 0 0"><geom type="sphere" size="0.1"/></body>
                       </worldbody></mujoco>)"),
            ErrorCode::InvalidValue);
}

TEST(Parse, NonPositiveGeomSize) {
  EXPECT_EQ(code_of(R"(<mujoco><worldbody><body name="b"><geom type="sphere" size="0"/></body>
                       </worldbody></mujoco>)"),
            ErrorCode::InvalidValue);
}

TEST(Parse, DuplicateActuatorRejected) {
  EXPECT_EQ(code_of(R"(<mujoco><worldbody><body name="b"><geom type="sphere" size="0.1"/>
                       <joint name="j" axis="0 0 1" range="-10 10"/></body></worldbody>
                       <actuator><motor joint="j" gear="1"/><motor joint="j" gear="2"/></actuator></mujoco>)"),
            ErrorCode::InvalidValue);
}

TEST(Validate, CycleDetected) {
  ArticulatedModel m = parse_model(fixtures::kChainXml);
  m.bodies[1].parent = 2;
  m.bodies[2].parent = 1;
  try {
    validate_model(m);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::CycleDetected);
  }
}

TEST(Validate, ParentPrecedesChild) {
  for (const char* env : {"hopper", "walker2d", "humanoid", "ant"}) {
    ArticulatedModel m = expand_multi_axis(parse_model(asset(env)));
    for (int i = 0; i < static_cast<int>(m.bodies.size()); ++i) EXPECT_LT(m.bodies[i].parent, i) << env;
  }
}

TEST(Validate, Labels) {
  ArticulatedModel hopper = parse_model(asset("hopper"));
  EXPECT_NO_THROW(validate_labels(hopper, {"pelvis", "foot", "head"}));
  ArticulatedModel chain = parse_model(fixtures::kChainXml);
  try {
    validate_labels(chain, {"foot"});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::MissingLabel);
  }
  EXPECT_NO_THROW(validate_labels(chain, {}));
}

TEST(Parse, Deterministic) {
  std::string src = asset("humanoid");
  EXPECT_EQ(parse_model(src), parse_model(src));
}

TEST(Serialize, RoundTrip) {
  for (const char* env : {"hopper", "walker2d", "humanoid", "ant", "slider", "pendulum"}) {
    ArticulatedModel m = parse_model(asset(env));
    ArticulatedModel back = parse_model(serialize_model(m));
    EXPECT_TRUE(approx_equal(m, back, 1e-9)) << env;
  }
  ArticulatedModel ball = parse_model(kBall);
  EXPECT_TRUE(approx_equal(ball, parse_model(serialize_model(ball)), 1e-9));
}

TEST(Expand, SingleAxisIsFixpoint) {
  ArticulatedModel m = parse_model(fixtures::kChainXml);
  EXPECT_EQ(expand_multi_axis(m), m);
}

TEST(Expand, ThreeAxisBall) {
  ArticulatedModel m = expand_multi_axis(parse_model(kBall));
  EXPECT_EQ(m.joints.size(), 3u);
  EXPECT_EQ(m.actuators.size(), 3u);
  int synth = 0;
  for (const auto& b : m.bodies) {
    if (!b.synthesized()) continue;
    ++synth;
    EXPECT_DOUBLE_EQ(b.mass, kSynthMass);
    for (double v : b.inertia) EXPECT_DOUBLE_EQ(v, kSynthInertia);
  }
  EXPECT_EQ(synth, 2);
  for (const auto& j : m.joints) EXPECT_TRUE(j.extra_axes.empty());
  EXPECT_NO_THROW(validate_model(m));
}

TEST(Expand, HumanoidHas21Actuators) {
  ArticulatedModel m = expand_multi_axis(parse_model(asset("humanoid")));
  EXPECT_EQ(m.actuators.size(), 21u);
  EXPECT_EQ(m.joints.size(), 21u);
}

TEST(Expand, Idempotent) {
  ArticulatedModel once = expand_multi_axis(parse_model(asset("humanoid")));
  EXPECT_EQ(expand_multi_axis(once), once);
}

#include <cmath>

#include "ragmark/error.hpp"
#include "ragmark/tasks.hpp"

namespace ragmark {

namespace {

using Options = std::map<std::string, std::string>;

double option(const Options& o, const std::string& key, double fallback) {
  auto it = o.find(key);
  if (it == o.end()) return fallback;
  try {
    size_t used = 0;
    double v = std::stod(it->second, &used);
    if (used != it->second.size() || std::isnan(v)) throw std::invalid_argument(it->second);
    return v;
  } catch (const std::exception&) {
    throw Error(ErrorCode::ConfigError, key + ": expected a number, got '" + it->second + "'");
  }
}

}  // namespace

TerrainChallenge challenge_from_options(const Options& o) {
  TerrainChallenge c;
  auto bounds = [&](const std::string& name, Bounds b) {
    return Bounds{option(o, name + "_min", b.min), option(o, name + "_max", b.max)};
  };
  c.bump_height_bounds = bounds("bump_height", c.bump_height_bounds);
  c.bump_spacing_bounds = bounds("bump_spacing", c.bump_spacing_bounds);
  c.slope_bounds = bounds("slope", c.slope_bounds);
  c.gap_width_bounds = bounds("gap_width", c.gap_width_bounds);
  c.bump_height = c.bump_height_bounds.max;
  c.bump_spacing = c.bump_spacing_bounds.clip(c.bump_spacing);
  c.slope = c.slope_bounds.max;
  c.gap_width = c.gap_width_bounds.max;
  c.difficulty = option(o, "difficulty", c.difficulty);
  c.difficulty_cap = option(o, "difficulty_cap", c.difficulty_cap);
  c.height_obs_count = static_cast<int>(option(o, "height_obs_count", c.height_obs_count));
  c.height_obs_spacing = option(o, "height_obs_spacing", c.height_obs_spacing);
  try {
    c.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::ConfigError, e.what());
  }
  return c;
}

void apply_wrappers(EnvInstance& inst, const std::vector<std::string>& names, const Options& o) {
  for (const auto& name : names) {
    if (name == "controller-discrete" || name == "controller-continuous") {
      if (!inst.spec->planar) throw Error(ErrorCode::ConfigError, name + ": controller tasks need a planar env");
      ControllerParams p;
      p.mode = name == "controller-discrete" ? ControllerMode::Discrete : ControllerMode::Continuous;
      p.v_max = option(o, "v_max", p.v_max);
      p.w_jump = option(o, "w_jump", p.w_jump);
      p.jump_window = option(o, "jump_window", p.jump_window);
      inst.tasks.push_back(std::make_unique<ControllerTask>(p));
    } else if (name.rfind("imitation:", 0) == 0) {
      const std::string source = name.substr(10);
      auto motion = std::make_shared<const ReferenceMotion>(
          source == "walker-gait" || source == "pendulum" ? generate_motion(source) : load_motion(source));
      if (motion->joints != inst.act_dim()) {
        throw Error(ErrorCode::DimensionMismatch, "motion '" + motion->name + "' has " +
                                                      std::to_string(motion->joints) + " joints, env has " +
                                                      std::to_string(inst.act_dim()) + " actuators");
      }
      ImitationParams p;
      p.k_p = option(o, "k_p", p.k_p);
      p.d_max = option(o, "d_max", p.d_max);
      inst.tasks.push_back(std::make_unique<ImitationTask>(motion, p));
    } else if (name == "terrain") {
      inst.tasks.push_back(std::make_unique<TerrainTask>(challenge_from_options(o)));
    } else {
      throw Error(ErrorCode::ConfigError,
                  "unknown wrapper '" + name + "' (controller-discrete, controller-continuous, imitation:<motion>, terrain)");
    }
  }
}

}  // namespace ragmark

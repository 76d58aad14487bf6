#include <spdlog/spdlog.h>
#include <yaml-cpp/yaml.h>

#include <cmath>
#include <set>

#include "ragmark/error.hpp"
#include "ragmark/ppo.hpp"
#include "ragmark/util.hpp"

namespace ragmark {

namespace {

// Run-level keys read outside the trainer.
const std::set<std::string> kRunKeys = {
    // physics / scene
    "dt", "solver_iterations", "baumgarte_beta", "friction_default", "agents", "decision_frequency",
    "episode_cap",
    // reward weights
    "w_velocity", "w_upright", "w_effort", "low_height_penalty", "height_threshold", "w_joint_limit", "w_phase",
    // controller
    "controller", "v_max", "w_jump", "jump_window",
    // imitation
    "motion", "k_p", "d_max",
    // terrain
    "bump_height_min", "bump_height_max", "bump_spacing_min", "bump_spacing_max", "slope_min", "slope_max",
    "gap_width_min", "gap_width_max", "difficulty", "difficulty_cap", "height_obs_count", "height_obs_spacing",
    "adversary_window",
    // evaluation
    "eval_episodes",
    // curiosity settings are accepted and ignored while use_curiosity is false
    "curiosity_strength", "curiosity_enc_size"};

double to_number(const std::string& key, const std::string& value) {
  try {
    size_t used = 0;
    double v = std::stod(value, &used);
    if (used != value.size() || !std::isfinite(v)) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw Error(ErrorCode::ConfigError, key + ": expected a number, got '" + value + "'");
  }
}

std::int64_t to_integer(const std::string& key, const std::string& value) {
  double v = to_number(key, value);
  if (v != std::floor(v)) throw Error(ErrorCode::ConfigError, key + ": expected an integer, got '" + value + "'");
  return static_cast<std::int64_t>(v);
}

bool to_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "True") return true;
  if (value == "false" || value == "False") return false;
  throw Error(ErrorCode::ConfigError, key + ": expected true or false, got '" + value + "'");
}

void apply_key(RunConfig& rc, const std::string& key, const std::string& value) {
  TrainerConfig& t = rc.trainer;
  if (key == "normalize") t.normalize = to_bool(key, value);
  else if (key == "num_epoch") t.num_epoch = static_cast<int>(to_integer(key, value));
  else if (key == "beta") t.beta = to_number(key, value);
  else if (key == "epsilon") t.epsilon = to_number(key, value);
  else if (key == "gamma") t.gamma = to_number(key, value);
  else if (key == "lambda") t.lambda = to_number(key, value);
  else if (key == "learning_rate") t.learning_rate = to_number(key, value);
  else if (key == "time_horizon") t.time_horizon = static_cast<int>(to_integer(key, value));
  else if (key == "batch_size") t.batch_size = static_cast<int>(to_integer(key, value));
  else if (key == "buffer_size") t.buffer_size = static_cast<int>(to_integer(key, value));
  else if (key == "max_steps") t.max_steps = to_integer(key, value);
  else if (key == "summary_freq") t.summary_freq = static_cast<int>(to_integer(key, value));
  else if (key == "num_layers") t.num_layers = static_cast<int>(to_integer(key, value));
  else if (key == "hidden_units") t.hidden_units = static_cast<int>(to_integer(key, value));
  else if (key == "value_loss_coef") t.value_loss_coef = to_number(key, value);
  else if (key == "grad_clip_norm") t.grad_clip_norm = to_number(key, value);
  else if (key == "seed") t.seed = static_cast<std::uint64_t>(to_integer(key, value));
  else if (key == "use_curiosity") {
    if (to_bool(key, value)) throw Error(ErrorCode::Unsupported, "use_curiosity: the curiosity module is not supported");
  } else if (key == "use_recurrent") {
    if (to_bool(key, value)) throw Error(ErrorCode::Unsupported, "use_recurrent: recurrent policies are not supported");
  } else if (kRunKeys.count(key)) {
    rc.extras[key] = value;
  } else {
    spdlog::warn("config section '{}': unknown key '{}' ignored", rc.heading, key);
    return;
  }
  rc.entries.emplace_back(key, value);
}

void apply_section(RunConfig& rc, const YAML::Node& section, const std::string& name) {
  if (section.IsNull()) return;
  if (!section.IsMap()) throw Error(ErrorCode::ConfigError, "section '" + name + "' must be a mapping");
  for (const auto& kv : section) {
    const std::string key = kv.first.as<std::string>();
    if (!kv.second.IsScalar()) throw Error(ErrorCode::ConfigError, key + ": expected a scalar value");
    apply_key(rc, key, kv.second.Scalar());
  }
}

}  // namespace

std::string config_heading(EnvId id) {
  switch (id) {
    case EnvId::Hopper: return "DeepMindHopperBrain";
    case EnvId::Walker2d: return "DeepMindWalkerBrain";
    case EnvId::Humanoid: return "DeepMindHumanoidBrain";
    case EnvId::Ant: return "OpenAIAntBrain";
    case EnvId::Slider: return "SliderBrain";
    case EnvId::Pendulum: return "PendulumBrain";
  }
  return "default";
}

RunConfig parse_run_config(const std::string& yaml_text, const std::string& heading) {
  YAML::Node root;
  try {
    root = YAML::Load(yaml_text);
  } catch (const YAML::Exception& e) {
    throw Error(ErrorCode::ConfigError, std::string("yaml: ") + e.what());
  }
  if (!root.IsMap()) throw Error(ErrorCode::ConfigError, "config must be a mapping of sections");
  if (!root[heading]) throw Error(ErrorCode::ConfigError, "section '" + heading + "' not found");
  RunConfig rc;
  rc.heading = heading;
  if (root["default"] && heading != "default") apply_section(rc, root["default"], "default");
  apply_section(rc, root[heading], heading);
  validate(rc.trainer);
  return rc;
}

RunConfig load_run_config(const std::string& path, const std::string& heading) {
  return parse_run_config(read_file(path), heading);
}

double RunConfig::number(const std::string& key, double fallback) const {
  auto it = extras.find(key);
  return it == extras.end() ? fallback : to_number(key, it->second);
}

int RunConfig::integer(const std::string& key, int fallback) const {
  auto it = extras.find(key);
  return it == extras.end() ? fallback : static_cast<int>(to_integer(key, it->second));
}

std::string RunConfig::text(const std::string& key, const std::string& fallback) const {
  auto it = extras.find(key);
  return it == extras.end() ? fallback : it->second;
}

}  // namespace ragmark

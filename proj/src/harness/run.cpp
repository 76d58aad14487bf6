#include <spdlog/spdlog.h>
#include <yaml-cpp/yaml.h>

#include <cstdio>
#include <filesystem>
#include <sstream>

#include "ragmark/error.hpp"
#include "ragmark/harness.hpp"
#include "ragmark/util.hpp"

namespace ragmark {

namespace fs = std::filesystem;

namespace {

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double option_number(const std::map<std::string, std::string>& o, const std::string& key, double fallback) {
  auto it = o.find(key);
  if (it == o.end()) return fallback;
  try {
    size_t used = 0;
    double v = std::stod(it->second, &used);
    if (used == it->second.size()) return v;
  } catch (const std::exception&) {
  }
  throw Error(ErrorCode::ConfigError, key + ": expected a number, got '" + it->second + "'");
}

Json trainer_json(const TrainerConfig& t) {
  Json j;
  j["normalize"] = t.normalize;
  j["num_epoch"] = t.num_epoch;
  j["beta"] = t.beta;
  j["epsilon"] = t.epsilon;
  j["gamma"] = t.gamma;
  j["lambda"] = t.lambda;
  j["learning_rate"] = t.learning_rate;
  j["time_horizon"] = t.time_horizon;
  j["batch_size"] = t.batch_size;
  j["buffer_size"] = t.buffer_size;
  j["max_steps"] = t.max_steps;
  j["summary_freq"] = t.summary_freq;
  j["num_layers"] = t.num_layers;
  j["hidden_units"] = t.hidden_units;
  j["value_loss_coef"] = t.value_loss_coef;
  j["grad_clip_norm"] = t.grad_clip_norm;
  j["seed"] = t.seed;
  return j;
}

Json eval_json(const EvalReport& e) {
  Json j;
  j["episodes"] = e.episodes;
  j["mean_return"] = e.mean_return;
  j["mean_length"] = e.mean_length;
  j["mean_forward_distance"] = e.mean_forward_distance;
  return j;
}

// Writes checkpoints and CSVs as training goes.
class RunSink : public TrainSink {
 public:
  RunSink(const fs::path& dir, CheckpointMeta meta) : dir_(dir), meta_(std::move(meta)) {}

  void metrics(const MetricRow& row) override {
    rows_.push_back(row);
    write_file_atomic((dir_ / "metrics.csv").string(), metrics_csv(rows_));
    write_file_atomic((dir_ / "timing.csv").string(), timing_csv(rows_));
    spdlog::info("step {} mean_return {:.3f} mean_length {:.1f} steps/s {:.0f}", row.step, row.mean_return,
                 row.mean_length, row.steps_per_sec);
  }

  void checkpoint(const PolicyParams& params, std::int64_t) override {
    save_checkpoint((dir_ / "checkpoints" / "latest.rgmk").string(), params, meta_);
  }

 private:
  fs::path dir_;
  CheckpointMeta meta_;
  std::vector<MetricRow> rows_;
};

}  // namespace

RunSetup make_run_setup(const std::string& env_id, const std::string& config_path) {
  RunSetup s;
  const EnvId id = parse_env_id(env_id);
  s.env_id = std::string(to_string(id));
  s.config_path = config_path;
  const std::string text = read_file(config_path);
  s.config_sha256 = sha256_hex(text);
  s.config = parse_run_config(text, config_heading(id));
  s.agents = s.config.integer("agents", s.agents);
  s.decision_frequency = s.config.integer("decision_frequency", s.decision_frequency);
  s.seed = s.config.trainer.seed;
  return s;
}

EnvSpecPtr spec_with_overrides(EnvId id, const std::map<std::string, std::string>& o, const std::string& assets) {
  EnvSpecPtr base = make_env_spec(id, assets);
  static const char* kKeys[] = {"dt", "solver_iterations", "baumgarte_beta", "friction_default", "episode_cap",
                                "w_velocity", "w_upright", "w_effort", "low_height_penalty", "height_threshold",
                                "w_joint_limit", "w_phase"};
  bool any = false;
  for (const char* k : kKeys) any = any || o.count(k);
  if (!any) return base;

  auto spec = std::make_shared<EnvSpec>(*base);
  PhysicsConfig& p = spec->physics;
  p.dt = option_number(o, "dt", p.dt);
  p.solver_iterations = static_cast<int>(option_number(o, "solver_iterations", p.solver_iterations));
  p.baumgarte_beta = option_number(o, "baumgarte_beta", p.baumgarte_beta);
  p.friction_default = option_number(o, "friction_default", p.friction_default);
  try {
    p.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::ConfigError, e.what());
  }
  spec->episode_cap = static_cast<int>(option_number(o, "episode_cap", spec->episode_cap));
  if (spec->episode_cap < 1) throw Error(ErrorCode::ConfigError, "episode_cap must be >= 1");
  RewardWeights& w = spec->reward_weights;
  w.w_velocity = option_number(o, "w_velocity", w.w_velocity);
  w.w_upright = option_number(o, "w_upright", w.w_upright);
  w.w_effort = option_number(o, "w_effort", w.w_effort);
  w.low_height_penalty = option_number(o, "low_height_penalty", w.low_height_penalty);
  w.height_threshold = option_number(o, "height_threshold", w.height_threshold);
  w.w_joint_limit = option_number(o, "w_joint_limit", w.w_joint_limit);
  w.w_phase = option_number(o, "w_phase", w.w_phase);
  return spec;
}

EnvInstance make_instance(const std::string& env_id, const std::vector<std::string>& wrappers,
                          const std::map<std::string, std::string>& options, const std::string& assets) {
  EnvInstance inst(spec_with_overrides(parse_env_id(env_id), options, assets));
  apply_wrappers(inst, wrappers, options);
  return inst;
}

EnvInstance make_prototype(const RunSetup& setup) {
  return make_instance(setup.env_id, setup.wrappers, setup.config.extras);
}

EnvInstance make_prototype(const CheckpointMeta& meta, const std::string& assets) {
  std::map<std::string, std::string> options;
  for (const auto& [k, v] : meta.config) options[k] = v;
  return make_instance(meta.env_id, meta.wrappers, options, assets);
}

CheckpointMeta checkpoint_meta(const RunSetup& setup, const EnvSpec& spec) {
  CheckpointMeta m;
  m.env_id = setup.env_id;
  m.asset_sha256 = spec.asset_sha256;
  m.decision_frequency = setup.decision_frequency;
  m.wrappers = setup.wrappers;
  for (const auto& [k, v] : setup.config.extras) m.config.emplace_back(k, v);
  return m;
}

std::string metrics_csv(const std::vector<MetricRow>& rows) {
  std::string out = "step,mean_return,mean_length\n";
  for (const auto& r : rows) out += std::to_string(r.step) + "," + fmt17(r.mean_return) + "," + fmt17(r.mean_length) + "\n";
  return out;
}

std::string timing_csv(const std::vector<MetricRow>& rows) {
  std::string out = "step,steps_per_sec\n";
  for (const auto& r : rows) out += std::to_string(r.step) + "," + fmt17(r.steps_per_sec) + "\n";
  return out;
}

Json dimension_table(const std::string& assets) {
  Json table = Json::array();
  for (EnvId id : all_env_ids()) {
    EnvSpecPtr spec = make_env_spec(id, assets);
    Json row;
    row["env"] = to_string(id);
    row["obs_dim"] = spec->obs_dim;
    row["act_dim"] = spec->act_dim;
    row["documented_obs_dim"] = expected_obs_dim(id);
    table.push_back(std::move(row));
  }
  return table;
}

Json build_manifest(const RunSetup& setup, const EnvSpec& spec, const RunOutcome* outcome) {
  Json m;
  m["format"] = "ragmark-run";
  m["version"] = 1;
  m["env_id"] = setup.env_id;
  m["agents"] = setup.agents;
  m["decision_frequency"] = setup.decision_frequency;
  m["seed"] = setup.seed;
  m["threads"] = setup.threads;
  m["wrappers"] = setup.wrappers;

  Json cfg;
  cfg["path"] = setup.config_path;
  cfg["sha256"] = setup.config_sha256;
  cfg["heading"] = setup.config.heading;
  Json entries = Json::object();
  for (const auto& [k, v] : setup.config.entries) entries[k] = v;
  cfg["entries"] = std::move(entries);
  cfg["trainer"] = trainer_json(setup.config.trainer);
  m["config"] = std::move(cfg);

  Json assets;
  assets["path"] = fs::path(spec.asset_path).filename().string();
  assets["sha256"] = spec.asset_sha256;
  m["assets"] = std::move(assets);
  m["dimensions"] = dimension_table(fs::path(spec.asset_path).parent_path().string());

  if (outcome) {
    const TrainResult& r = outcome->result;
    Json bench;
    bench["wall_seconds"] = r.wall_seconds;
    bench["steps_per_sec"] = r.wall_seconds > 0 ? r.total_agent_steps / r.wall_seconds : 0.0;
    bench["host"] = host_note();
    m["bench"] = std::move(bench);
    Json res;
    res["total_agent_steps"] = r.total_agent_steps;
    res["updates"] = r.updates;
    if (!r.metrics.empty()) {
      res["final_mean_return"] = r.metrics.back().mean_return;
      res["final_mean_length"] = r.metrics.back().mean_length;
    }
    res["metrics"] = "metrics.csv";
    res["timing"] = "timing.csv";
    res["checkpoint"] = "checkpoints/final.rgmk";
    m["results"] = std::move(res);
    m["eval"] = eval_json(outcome->eval);
  }
  return m;
}

RunOutcome run_training(const RunSetup& setup, const std::string& out_dir) {
  const fs::path dir(out_dir);
  std::error_code ec;
  fs::create_directories(dir / "checkpoints", ec);
  if (ec) throw Error(ErrorCode::IoError, "cannot create " + (dir / "checkpoints").string() + ": " + ec.message());

  EnvInstance proto = make_prototype(setup);
  const EnvSpec& spec = *proto.spec;
  RunOutcome out;
  out.manifest_path = (dir / "manifest.json").string();
  out.checkpoint_path = (dir / "checkpoints" / "final.rgmk").string();
  try {
    write_file_atomic(out.manifest_path, build_manifest(setup, spec, nullptr).dump(2) + "\n");
  } catch (const Error&) {
    fs::remove(dir / "checkpoints", ec);
    throw;
  }

  VecScene scene(proto, setup.agents, setup.decision_frequency);
  scene.set_threads(setup.threads);
  TrainerConfig tc = setup.config.trainer;
  tc.seed = setup.seed;
  const CheckpointMeta meta = checkpoint_meta(setup, spec);
  RunSink sink(dir, meta);
  out.result = train(scene, tc, &sink);
  save_checkpoint(out.checkpoint_path, out.result.params, meta);
  save_checkpoint((dir / "checkpoints" / "latest.rgmk").string(), out.result.params, meta);
  write_file_atomic((dir / "metrics.csv").string(), metrics_csv(out.result.metrics));
  write_file_atomic((dir / "timing.csv").string(), timing_csv(out.result.metrics));

  const int episodes = setup.config.integer("eval_episodes", 10);
  out.eval = evaluate(out.result.params, proto, episodes, true, setup.decision_frequency, setup.seed + 1);
  write_file_atomic(out.manifest_path, build_manifest(setup, spec, &out).dump(2) + "\n");
  return out;
}

RunSetup setup_from_manifest(const std::string& path) {
  Json m = Json::parse(read_file(path), nullptr, false);
  if (m.is_discarded() || !m.is_object() || m.value("format", "") != "ragmark-run") {
    throw Error(ErrorCode::ConfigError, path + ": not a run manifest");
  }
  try {
    RunSetup s;
    s.env_id = m.at("env_id").get<std::string>();
    s.agents = m.at("agents").get<int>();
    s.decision_frequency = m.at("decision_frequency").get<int>();
    s.seed = m.at("seed").get<std::uint64_t>();
    s.threads = m.value("threads", 0);
    s.wrappers = m.value("wrappers", std::vector<std::string>{});
    const Json& cfg = m.at("config");
    s.config_path = cfg.value("path", "");
    s.config_sha256 = cfg.value("sha256", "");
    YAML::Emitter y;
    y << YAML::BeginMap << YAML::Key << cfg.at("heading").get<std::string>() << YAML::Value << YAML::BeginMap;
    for (const auto& [k, v] : cfg.at("entries").items()) y << YAML::Key << k << YAML::Value << v.get<std::string>();
    y << YAML::EndMap << YAML::EndMap;
    s.config = parse_run_config(y.c_str(), cfg.at("heading").get<std::string>());
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ConfigError, path + ": " + e.what());
  }
}

std::map<std::string, std::string> parse_key_values(const std::string& text) {
  std::map<std::string, std::string> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    out[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return out;
}

}  // namespace ragmark

#pragma once

// Operational shell: run directories and manifests, the newline-delimited
// JSON vec-env protocol over TCP, and the websocket viewer.

#include <atomic>
#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "ragmark/ppo.hpp"
#include "ragmark/tasks.hpp"
#include "ragmark/vec_scene.hpp"

namespace ragmark {

using Json = nlohmann::ordered_json;

// ---------------------------------------------------------------- runs

struct RunSetup {
  std::string env_id = "hopper";
  int agents = 16;
  int decision_frequency = 5;
  std::uint64_t seed = 0;
  int threads = 0;  // 0: OpenMP default
  std::vector<std::string> wrappers;
  std::string config_path;
  std::string config_sha256;
  RunConfig config;
};

/// Reads the env's config section. agents and decision_frequency come from
/// the file when present; the seed is the trainer seed.
RunSetup make_run_setup(const std::string& env_id, const std::string& config_path);

/// Env spec with the physics, reward and episode keys from `options` applied.
EnvSpecPtr spec_with_overrides(EnvId id, const std::map<std::string, std::string>& options,
                               const std::string& assets = assets_dir());

/// Single instance with overrides and wrappers applied.
EnvInstance make_instance(const std::string& env_id, const std::vector<std::string>& wrappers,
                          const std::map<std::string, std::string>& options,
                          const std::string& assets = assets_dir());

EnvInstance make_prototype(const RunSetup& setup);
EnvInstance make_prototype(const CheckpointMeta& meta, const std::string& assets = assets_dir());
CheckpointMeta checkpoint_meta(const RunSetup& setup, const EnvSpec& spec);

/// step,mean_return,mean_length. Depends only on the run's inputs.
std::string metrics_csv(const std::vector<MetricRow>& rows);
/// step,steps_per_sec.
std::string timing_csv(const std::vector<MetricRow>& rows);

/// obs/act dims of every shipped env next to the documented values.
Json dimension_table(const std::string& assets = assets_dir());

struct RunOutcome {
  TrainResult result;
  EvalReport eval;
  std::string checkpoint_path;
  std::string manifest_path;
};

/// Trains into `out_dir`: manifest.json, metrics.csv, timing.csv,
/// checkpoints/latest.rgmk and checkpoints/final.rgmk. Throws IoError when
/// the directory cannot be written.
RunOutcome run_training(const RunSetup& setup, const std::string& out_dir);

Json build_manifest(const RunSetup& setup, const EnvSpec& spec, const RunOutcome* outcome);
/// Rebuilds the setup a manifest was written from.
RunSetup setup_from_manifest(const std::string& path);

/// `key=value` lines (BenchReport text).
std::map<std::string, std::string> parse_key_values(const std::string& text);

// ---------------------------------------------------------------- protocol

/// One vec-env client session. Every input line yields exactly one reply
/// line (without the trailing newline).
class ProtocolSession {
 public:
  /// A non-empty `only_env` rejects hellos for any other env.
  explicit ProtocolSession(std::string assets = assets_dir(), std::string only_env = "");

  std::string handle(std::string_view line);
  bool closed() const { return closed_; }
  const VecScene* scene() const { return scene_.get(); }

  static Json error(std::string_view code, const std::string& msg);

 private:
  Json hello(const Json& msg);
  Json reset(const Json& msg);
  Json step(const Json& msg);
  Json goal(const Json& msg);
  Json obs_message(const std::string& type, const BatchTransition& t) const;

  std::string assets_;
  std::string only_env_;
  std::unique_ptr<VecScene> scene_;
  std::uint64_t seed_ = 0;
  bool has_obs_ = false;
  bool closed_ = false;
  BatchTransition last_;
};

/// TCP server, one thread per connection. Port 0 picks a free port.
class VecEnvServer {
 public:
  explicit VecEnvServer(std::string assets = assets_dir(), std::string only_env = "");
  ~VecEnvServer();
  VecEnvServer(const VecEnvServer&) = delete;
  VecEnvServer& operator=(const VecEnvServer&) = delete;

  void start(std::uint16_t port, const std::string& host = "127.0.0.1");
  std::uint16_t port() const { return port_; }
  /// Blocks until stop().
  void wait();
  void stop();
  std::int64_t sessions() const { return sessions_.load(); }

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  std::string assets_;
  std::string only_env_;
  std::uint16_t port_ = 0;
  std::atomic<std::int64_t> sessions_{0};
};

// ---------------------------------------------------------------- viewer

/// A single-agent scene driven by a checkpointed policy, with goals set by
/// the viewer rather than sampled.
class UiSession {
 public:
  UiSession(const Checkpoint& ck, std::uint64_t seed = 0, std::string assets = assets_dir());

  /// Advances one decision step (auto-resets at episode end).
  void step();
  Json frame() const;
  /// Throws InvalidValue for unknown goals, BadState without a controller.
  void set_goal(const std::string& value);
  std::int64_t steps() const { return steps_; }
  double decision_seconds() const;
  const EnvInstance& instance() const { return inst_; }

 private:
  PolicyParams params_;
  EnvInstance inst_;
  int decision_frequency_ = 5;
  Rng rng_;
  std::vector<double> obs_;
  double last_reward_ = 0;
  std::int64_t steps_ = 0;
  mutable bool send_terrain_ = true;
};

/// Websocket viewer server. Each connected client gets its own session that
/// free-runs at the decision rate; nothing is stepped without a client.
class UiServer {
 public:
  struct Options {
    std::string assets = assets_dir();
    std::uint64_t seed = 0;
    /// Seconds between decision steps; 0 uses the simulated decision period.
    double tick = 0;
  };

  UiServer(Checkpoint ck, Options opts);
  ~UiServer();
  UiServer(const UiServer&) = delete;
  UiServer& operator=(const UiServer&) = delete;

  void start(std::uint16_t port, const std::string& host = "127.0.0.1");
  std::uint16_t port() const { return port_; }
  void wait();
  void stop();
  /// Decision steps taken across all sessions.
  std::int64_t steps() const { return steps_.load(); }

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  std::uint16_t port_ = 0;
  std::atomic<std::int64_t> steps_{0};
};

}  // namespace ragmark

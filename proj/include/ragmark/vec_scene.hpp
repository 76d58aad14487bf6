#pragma once

// N independent environment instances stepped as one batch, with auto-reset.

#include <cstdint>
#include <exception>
#include <span>
#include <string>
#include <vector>

#include "ragmark/env.hpp"

namespace ragmark {

/// Summary of an episode that ended inside a batch call.
struct EpisodeEnd {
  int instance = 0;
  double episode_return = 0;
  int length = 0;
  double forward_distance = 0;
  Termination status;
};

struct BatchTransition {
  int agents = 0;
  int obs_dim = 0;
  std::vector<double> obs;  // agents x obs_dim, row-major
  std::vector<double> rewards;
  std::vector<StepStatus> status;
  std::vector<TerminationReason> reasons;
  std::vector<std::uint8_t> reset_flags;
  // Last observation of each finished episode (rows of `reset` instances); zeros
  // when the episode ended on a non-finite state.
  std::vector<double> terminal_obs;
  std::vector<EpisodeEnd> finished;

  std::span<const double> obs_row(int i) const { return {obs.data() + size_t(i) * obs_dim, size_t(obs_dim)}; }
  std::span<const double> terminal_row(int i) const {
    return {terminal_obs.data() + size_t(i) * obs_dim, size_t(obs_dim)};
  }
};

struct VecTotals {
  std::int64_t steps = 0;  // agent decision steps
  std::int64_t episodes = 0;
  double wall_seconds = 0;
};

class VecScene {
 public:
  /// N copies of `prototype` (tasks are cloned per instance).
  VecScene(const EnvInstance& prototype, int agents = 16, int decision_frequency = 5);
  VecScene(EnvSpecPtr spec, int agents = 16, int decision_frequency = 5);

  int agents() const { return static_cast<int>(instances_.size()); }
  int obs_dim() const { return obs_dim_; }
  int act_dim() const { return spec_->act_dim; }
  int decision_frequency() const { return decision_frequency_; }
  const EnvSpec& spec() const { return *spec_; }
  EnvSpecPtr spec_ptr() const { return spec_; }
  const VecTotals& totals() const { return totals_; }
  EnvInstance& instance(int i) { return instances_[i]; }
  const EnvInstance& instance(int i) const { return instances_[i]; }

  /// OpenMP threads used by step(); 0 keeps the runtime default.
  void set_threads(int n) { threads_ = n; }
  int threads() const;

  /// Resets every instance with a sub-seed derived from (seed, index).
  BatchTransition reset(std::uint64_t seed);
  /// Instances fan out over OpenMP threads.
  BatchTransition step(std::span<const double> actions);
  /// Same contract as step(), one instance after another.
  BatchTransition step_serial(std::span<const double> actions);

 private:
  void check_actions(std::span<const double> actions) const;
  BatchTransition make_batch() const;
  void step_one(int i, std::span<const double> action, BatchTransition& out);
  void collect(BatchTransition& out, double seconds);

  EnvSpecPtr spec_;
  std::vector<EnvInstance> instances_;
  std::vector<Rng> rngs_;
  int decision_frequency_;
  int obs_dim_;
  int threads_ = 0;
  bool was_reset_ = false;
  VecTotals totals_;
};

enum class ActionSource { Zeros, Random };

struct BenchReport {
  std::string env_id;
  int agents = 0;
  int decision_frequency = 0;
  double dt = 0;
  int threads = 0;
  std::int64_t vec_steps = 0;
  std::int64_t total_agent_steps = 0;
  std::int64_t episodes = 0;
  double elapsed_seconds = 0;
  double agent_steps_per_second = 0;
  double physics_steps_per_second = 0;
  std::string action_source;
  std::string host;

  /// Flat `key=value` lines.
  std::string to_text() const;
};

/// Steps `scene` for `seconds` of wall clock.
BenchReport bench_throughput(VecScene& scene, double seconds, ActionSource source, std::uint64_t seed = 0,
                             bool serial = false);

std::string host_note();

}  // namespace ragmark

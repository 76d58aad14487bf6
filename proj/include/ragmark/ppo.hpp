#pragma once

// PPO with a clipped surrogate, GAE, running observation normalization and
// a Gaussian actor-critic with separate policy and value stacks.

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "ragmark/env.hpp"
#include "ragmark/vec_scene.hpp"

namespace ragmark {

// ---------------------------------------------------------------- config

struct TrainerConfig {
  bool normalize = true;
  int num_epoch = 3;
  double beta = 1e-2;  // entropy coefficient
  double epsilon = 0.2;
  double gamma = 0.99;
  double lambda = 0.95;
  double learning_rate = 1e-3;
  int time_horizon = 128;
  int batch_size = 2048;
  int buffer_size = 10240;
  std::int64_t max_steps = 300000;  // per agent, decision steps
  int summary_freq = 1000;
  int num_layers = 2;
  int hidden_units = 64;
  double value_loss_coef = 0.5;
  double grad_clip_norm = 0.5;
  std::uint64_t seed = 0;
};

/// Throws ConfigError naming the first violated bound.
void validate(const TrainerConfig& config);

/// A config file section: trainer keys plus the run-level keys that
/// wrappers, physics and the harness read.
struct RunConfig {
  std::string heading;
  TrainerConfig trainer;
  std::map<std::string, std::string> extras;
  std::vector<std::pair<std::string, std::string>> entries;  // as written, file order

  bool has(const std::string& key) const { return extras.count(key) > 0; }
  double number(const std::string& key, double fallback) const;
  int integer(const std::string& key, int fallback) const;
  std::string text(const std::string& key, const std::string& fallback) const;
};

/// Section name used for each environment (DeepMindHopperBrain, ...).
std::string config_heading(EnvId id);

/// Parses `name: value` lines under `heading`. A `default` section, if
/// present, is applied first. Unknown keys are logged and skipped;
/// `use_curiosity: true` and `use_recurrent: true` throw Unsupported.
RunConfig parse_run_config(const std::string& yaml_text, const std::string& heading);
RunConfig load_run_config(const std::string& path, const std::string& heading);

// ---------------------------------------------------------------- network

inline constexpr double kLogStdInit = -0.5;

/// Two fully connected tanh stacks, one under a linear mean head and one under
/// a linear value head, plus a state-independent log-std. All parameters live in one flat vector.
template <typename T>
class ActorCritic {
 public:
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
  using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;
  using RowVec = Eigen::Matrix<T, 1, Eigen::Dynamic>;

  struct Layer {
    int in = 0, out = 0;
    Eigen::Index w = 0, b = 0;  // offsets into theta
  };

  /// Per-layer activations kept for the backward pass; [0] is the input.
  struct Cache {
    std::vector<Mat> pi_acts, v_acts;
    Mat mean;
    RowVec value;
  };

  ActorCritic() = default;
  ActorCritic(int obs_dim, int act_dim, int num_layers, int hidden_units);

  int obs_dim() const { return obs_dim_; }
  int act_dim() const { return act_dim_; }
  int num_layers() const { return static_cast<int>(pi_stream_.size()); }
  int hidden_units() const { return hidden_; }
  Eigen::Index size() const { return theta.size(); }
  Eigen::Index log_std_offset() const { return log_std_; }

  /// Scaled-normal weights, zero biases, policy head scaled by 0.01.
  /// Policy and value each have their own hidden stack.
  void init(Rng& rng);

  auto log_std() const { return theta.segment(log_std_, act_dim_); }
  auto log_std() { return theta.segment(log_std_, act_dim_); }

  /// X is obs_dim x batch.
  void forward(const Mat& X, Cache& cache) const;
  /// Gradient of a scalar loss given its partials w.r.t. the mean (act x batch),
  /// the value (1 x batch) and the log-std.
  Vec backward(const Cache& cache, const Mat& d_mean, const RowVec& d_value, const Vec& d_log_std) const;

  template <typename U>
  ActorCritic<U> cast() const {
    ActorCritic<U> out(obs_dim_, act_dim_, num_layers(), hidden_);
    out.theta = theta.template cast<U>();
    return out;
  }

  Vec theta;

 private:
  Layer add_layer(int in, int out, Eigen::Index& cursor);
  Eigen::Map<const Mat> weight(const Layer& l) const { return {theta.data() + l.w, l.out, l.in}; }
  Eigen::Map<const Vec> bias(const Layer& l) const { return {theta.data() + l.b, l.out}; }

  int obs_dim_ = 0, act_dim_ = 0, hidden_ = 0;
  std::vector<Layer> pi_stream_, v_stream_;
  Layer pi_, v_;
  Eigen::Index log_std_ = 0;
};

extern template class ActorCritic<float>;
extern template class ActorCritic<double>;

/// Running per-element mean/variance (parallel-merge form of Welford's update).
class Normalizer {
 public:
  Normalizer() = default;
  explicit Normalizer(int dim);

  int dim() const { return static_cast<int>(mean_.size()); }
  double count() const { return count_; }
  const Eigen::VectorXd& mean() const { return mean_; }
  /// Population variance; zero before two samples.
  Eigen::VectorXd variance() const;

  void update(std::span<const double> obs);
  /// Rows of a row-major rows x dim block.
  void update_batch(std::span<const double> rows, int n);
  /// (x - mean) / sqrt(var + 1e-8), clamped to [-5, 5], in single precision.
  void apply(std::span<const double> obs, float* out) const;

  /// Replaces the statistics (used when loading).
  void assign(double count, const Eigen::VectorXd& mean, const Eigen::VectorXd& variance);

  bool operator==(const Normalizer&) const = default;

 private:
  double count_ = 0;
  Eigen::VectorXd mean_;
  Eigen::VectorXd m2_;
};

struct PolicyParams {
  ActorCritic<float> net;
  Normalizer normalizer;
  bool normalize = true;

  int obs_dim() const { return net.obs_dim(); }
  int act_dim() const { return net.act_dim(); }
  /// Network input for one raw observation.
  void prepare(std::span<const double> obs, float* out) const;
};

PolicyParams make_policy(int obs_dim, int act_dim, const TrainerConfig& config, Rng& rng);

/// Policy mean for one raw observation.
std::vector<double> act_deterministic(const PolicyParams& params, std::span<const double> obs);

// ---------------------------------------------------------------- advantages

struct GaeResult {
  std::vector<double> advantages;
  std::vector<double> returns;
};

/// One agent's trajectory. `statuses[t]` marks how step t ended: terminated
/// bootstraps 0, truncated bootstraps `truncation_values[t]`, running chains
/// into t+1 (the last step into `bootstrap_value`). Advantages are not
/// standardized here.
GaeResult compute_gae(std::span<const double> rewards, std::span<const double> values,
                      std::span<const StepStatus> statuses, std::span<const double> truncation_values,
                      double gamma, double lambda, double bootstrap_value);

/// In place: mean 0, std 1 (population std, eps 1e-8).
void standardize(std::span<double> values);

// ---------------------------------------------------------------- loss / update

template <typename T>
struct Minibatch {
  typename ActorCritic<T>::Mat obs;      // obs_dim x M (already normalized)
  typename ActorCritic<T>::Mat actions;  // act_dim x M
  typename ActorCritic<T>::Vec old_log_prob;
  typename ActorCritic<T>::Vec advantages;
  typename ActorCritic<T>::Vec returns;
};

struct LossCoefficients {
  double epsilon = 0.2;
  double beta = 1e-2;
  double value_loss_coef = 0.5;
};

template <typename T>
struct LossResult {
  T total = 0;
  T policy_loss = 0;
  T value_loss = 0;
  T entropy = 0;
  T clip_fraction = 0;
  typename ActorCritic<T>::Vec grad;  // empty unless requested
};

/// -mean(min(r A, clip(r) A)) + c_v mean((V - R)^2) - beta * entropy.
template <typename T>
LossResult<T> ppo_loss(const ActorCritic<T>& net, const Minibatch<T>& batch, const LossCoefficients& coef,
                       bool with_grad);

/// Closed-form entropy of the diagonal Gaussian.
template <typename T>
T gaussian_entropy(const typename ActorCritic<T>::Vec& log_std);

template <typename T>
T gaussian_log_prob(const T* x, const T* mean, const T* log_std, int n);

/// Adam with global-norm gradient clipping.
class Adam {
 public:
  Adam() = default;
  Adam(Eigen::Index size, double learning_rate, double clip_norm);
  /// Returns the pre-clip gradient norm.
  double step(Eigen::VectorXf& theta, const Eigen::VectorXf& grad);

 private:
  Eigen::VectorXf m_, v_;
  double lr_ = 1e-3, clip_ = 0.5;
  double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  std::int64_t t_ = 0;
};

/// Flat transitions of one collection phase. Observations are stored already
/// normalized.
struct RolloutBuffer {
  int obs_dim = 0, act_dim = 0;
  std::vector<float> obs;
  std::vector<float> actions;
  std::vector<double> log_probs;
  std::vector<double> values;
  std::vector<double> rewards;
  std::vector<StepStatus> statuses;
  std::vector<double> advantages;
  std::vector<double> returns;

  size_t size() const { return rewards.size(); }
};

struct UpdateStats {
  double policy_loss = 0;
  double value_loss = 0;
  double entropy = 0;
  double clip_fraction = 0;
  double grad_norm = 0;
  int minibatches = 0;
};

UpdateStats ppo_update(PolicyParams& params, Adam& optimizer, const RolloutBuffer& buffer,
                       const TrainerConfig& config, Rng& rng);

// ---------------------------------------------------------------- train / evaluate

struct MetricRow {
  std::int64_t step = 0;  // per-agent decision steps
  double mean_return = 0;
  double mean_length = 0;
  double steps_per_sec = 0;  // agent decision steps per wall second
};

class TrainSink {
 public:
  virtual ~TrainSink() = default;
  virtual void metrics(const MetricRow&) {}
  virtual void update(const UpdateStats&, std::int64_t /*step*/) {}
  virtual void checkpoint(const PolicyParams&, std::int64_t /*step*/) {}
};

struct TrainResult {
  PolicyParams params;
  std::int64_t total_agent_steps = 0;
  int updates = 0;
  double wall_seconds = 0;
  std::vector<MetricRow> metrics;
};

/// Collect/update until agents x max_steps agent decision steps.
TrainResult train(VecScene& env, const TrainerConfig& config, TrainSink* sink = nullptr);

struct EvalReport {
  int episodes = 0;
  double mean_return = 0;
  double mean_length = 0;
  double mean_forward_distance = 0;

  bool operator==(const EvalReport&) const = default;
};

/// Sequential episodes on a copy of `prototype` with the normalizer frozen.
EvalReport evaluate(const PolicyParams& params, const EnvInstance& prototype, int episodes, bool deterministic,
                    int decision_frequency, std::uint64_t seed);

// ---------------------------------------------------------------- checkpoint

struct CheckpointMeta {
  std::string env_id;
  std::string asset_sha256;
  int decision_frequency = 5;
  std::vector<std::string> wrappers;
  std::vector<std::pair<std::string, std::string>> config;
};

/// Magic `RGMK1`, u32 little-endian header length, UTF-8 JSON header, then
/// little-endian float32 arrays: network parameters, normalizer mean,
/// normalizer variance.
void save_checkpoint(const std::string& path, const PolicyParams& params, const CheckpointMeta& meta);

struct Checkpoint {
  PolicyParams params;
  CheckpointMeta meta;
};

Checkpoint load_checkpoint(const std::string& path);

}  // namespace ragmark

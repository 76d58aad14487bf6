#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>

#include "ragmark/error.hpp"
#include "ragmark/ppo.hpp"

namespace ragmark {

namespace {

constexpr double kLog2Pi = 1.8378770664093453;  // log(2 pi)

}  // namespace

// ---------------------------------------------------------------- advantages

GaeResult compute_gae(std::span<const double> rewards, std::span<const double> values,
                      std::span<const StepStatus> statuses, std::span<const double> truncation_values,
                      double gamma, double lambda, double bootstrap_value) {
  const size_t n = rewards.size();
  if (values.size() != n || statuses.size() != n || truncation_values.size() != n) {
    throw Error(ErrorCode::LengthMismatch, "gae inputs must share one length");
  }
  GaeResult out;
  out.advantages.assign(n, 0.0);
  out.returns.assign(n, 0.0);
  double next_adv = 0.0;
  for (size_t k = n; k-- > 0;) {
    double next_value = 0.0;
    bool chain = false;
    switch (statuses[k]) {
      case StepStatus::Terminated: next_value = 0.0; break;
      case StepStatus::Truncated: next_value = truncation_values[k]; break;
      case StepStatus::Running:
        next_value = k + 1 < n ? values[k + 1] : bootstrap_value;
        chain = k + 1 < n;
        break;
    }
    const double delta = rewards[k] + gamma * next_value - values[k];
    next_adv = delta + (chain ? gamma * lambda * next_adv : 0.0);
    out.advantages[k] = next_adv;
    out.returns[k] = next_adv + values[k];
  }
  return out;
}

void standardize(std::span<double> values) {
  if (values.empty()) return;
  const double n = static_cast<double>(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / n) + 1e-8;
  for (double& v : values) v = (v - mean) / sd;
}

// ---------------------------------------------------------------- loss

template <typename T>
T gaussian_entropy(const typename ActorCritic<T>::Vec& log_std) {
  return log_std.sum() + T(0.5) * T(1.0 + kLog2Pi) * static_cast<T>(log_std.size());
}

template <typename T>
T gaussian_log_prob(const T* x, const T* mean, const T* log_std, int n) {
  T lp = 0;
  for (int a = 0; a < n; ++a) {
    const T z = (x[a] - mean[a]) * std::exp(-log_std[a]);
    lp += T(-0.5) * z * z - log_std[a] - T(0.5 * kLog2Pi);
  }
  return lp;
}

template <typename T>
LossResult<T> ppo_loss(const ActorCritic<T>& net, const Minibatch<T>& batch, const LossCoefficients& coef,
                       bool with_grad) {
  using Mat = typename ActorCritic<T>::Mat;
  using Vec = typename ActorCritic<T>::Vec;
  using RowVec = typename ActorCritic<T>::RowVec;
  const int M = static_cast<int>(batch.obs.cols());
  const int A = net.act_dim();
  if (batch.actions.cols() != M || batch.old_log_prob.size() != M || batch.advantages.size() != M ||
      batch.returns.size() != M || M == 0) {
    throw Error(ErrorCode::LengthMismatch, "minibatch columns");
  }
  typename ActorCritic<T>::Cache cache;
  net.forward(batch.obs, cache);
  const Vec log_std = net.log_std();
  const Vec inv_var = (T(-2) * log_std).array().exp();
  const T eps = static_cast<T>(coef.epsilon);

  LossResult<T> out;
  Vec d_logp(M);
  T clipped = 0;
  for (int i = 0; i < M; ++i) {
    const T lp = gaussian_log_prob<T>(batch.actions.col(i).data(), cache.mean.col(i).data(), log_std.data(), A);
    const T ratio = std::exp(lp - batch.old_log_prob[i]);
    const T adv = batch.advantages[i];
    const T unclipped_term = ratio * adv;
    const T clipped_term = std::clamp(ratio, T(1) - eps, T(1) + eps) * adv;
    out.policy_loss -= std::min(unclipped_term, clipped_term);
    d_logp[i] = unclipped_term <= clipped_term ? -ratio * adv / T(M) : T(0);
    if (std::abs(ratio - T(1)) > eps) clipped += 1;
  }
  out.policy_loss /= T(M);
  out.clip_fraction = clipped / T(M);
  const RowVec v_err = cache.value - batch.returns.transpose();
  out.value_loss = v_err.squaredNorm() / T(M);
  out.entropy = gaussian_entropy<T>(log_std);
  const T c_v = static_cast<T>(coef.value_loss_coef), beta = static_cast<T>(coef.beta);
  out.total = out.policy_loss + c_v * out.value_loss - beta * out.entropy;

  if (with_grad) {
    const Mat diff = batch.actions - cache.mean;
    Mat d_mean = diff.array().colwise() * inv_var.array();
    d_mean = d_mean.array().rowwise() * d_logp.transpose().array();
    // d lp / d log_std = z^2 - 1
    Mat z2 = diff.array().square().colwise() * inv_var.array();
    Vec d_log_std = ((z2.array() - T(1)).rowwise() * d_logp.transpose().array()).rowwise().sum().matrix();
    d_log_std.array() -= beta;
    RowVec d_value = (T(2) * c_v / T(M)) * v_err;
    out.grad = net.backward(cache, d_mean, d_value, d_log_std);
  }
  return out;
}

template float gaussian_entropy<float>(const ActorCritic<float>::Vec&);
template double gaussian_entropy<double>(const ActorCritic<double>::Vec&);
template float gaussian_log_prob<float>(const float*, const float*, const float*, int);
template double gaussian_log_prob<double>(const double*, const double*, const double*, int);
template LossResult<float> ppo_loss<float>(const ActorCritic<float>&, const Minibatch<float>&,
                                           const LossCoefficients&, bool);
template LossResult<double> ppo_loss<double>(const ActorCritic<double>&, const Minibatch<double>&,
                                             const LossCoefficients&, bool);

// ---------------------------------------------------------------- optimizer

Adam::Adam(Eigen::Index size, double learning_rate, double clip_norm)
    : m_(Eigen::VectorXf::Zero(size)), v_(Eigen::VectorXf::Zero(size)), lr_(learning_rate), clip_(clip_norm) {}

double Adam::step(Eigen::VectorXf& theta, const Eigen::VectorXf& grad) {
  const double norm = grad.cast<double>().norm();
  const float scale = (clip_ > 0 && norm > clip_) ? static_cast<float>(clip_ / norm) : 1.0f;
  ++t_;
  const float b1 = static_cast<float>(beta1_), b2 = static_cast<float>(beta2_);
  m_ = b1 * m_ + (1.0f - b1) * (scale * grad);
  v_ = b2 * v_ + (1.0f - b2) * (scale * grad).cwiseAbs2();
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  const float step = static_cast<float>(lr_ * std::sqrt(c2) / c1);
  theta.array() -= step * m_.array() / (v_.array().sqrt() + static_cast<float>(eps_));
  return norm;
}

// ---------------------------------------------------------------- update

UpdateStats ppo_update(PolicyParams& params, Adam& optimizer, const RolloutBuffer& buffer,
                       const TrainerConfig& config, Rng& rng) {
  const int n = static_cast<int>(buffer.size());
  if (n == 0) throw Error(ErrorCode::LengthMismatch, "empty rollout buffer");
  const int D = buffer.obs_dim, A = buffer.act_dim;
  const int mb = std::min(config.batch_size, n);
  const LossCoefficients coef{config.epsilon, config.beta, config.value_loss_coef};
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);

  UpdateStats stats;
  Minibatch<float> batch;
  for (int epoch = 0; epoch < config.num_epoch; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (int start = 0; start + mb <= n; start += mb) {
      batch.obs.resize(D, mb);
      batch.actions.resize(A, mb);
      batch.old_log_prob.resize(mb);
      batch.advantages.resize(mb);
      batch.returns.resize(mb);
      for (int j = 0; j < mb; ++j) {
        const int s = order[start + j];
        std::copy_n(buffer.obs.data() + size_t(s) * D, D, batch.obs.col(j).data());
        std::copy_n(buffer.actions.data() + size_t(s) * A, A, batch.actions.col(j).data());
        batch.old_log_prob[j] = static_cast<float>(buffer.log_probs[s]);
        batch.advantages[j] = static_cast<float>(buffer.advantages[s]);
        batch.returns[j] = static_cast<float>(buffer.returns[s]);
      }
      LossResult<float> loss = ppo_loss(params.net, batch, coef, true);
      if (!std::isfinite(loss.total) || !loss.grad.allFinite()) {
        throw Error(ErrorCode::NonFiniteLoss, "policy " + std::to_string(loss.policy_loss) + " value " +
                                                  std::to_string(loss.value_loss));
      }
      stats.grad_norm += optimizer.step(params.net.theta, loss.grad);
      stats.policy_loss += loss.policy_loss;
      stats.value_loss += loss.value_loss;
      stats.entropy += loss.entropy;
      stats.clip_fraction += loss.clip_fraction;
      stats.minibatches += 1;
    }
  }
  if (stats.minibatches > 0) {
    const double k = stats.minibatches;
    stats.policy_loss /= k;
    stats.value_loss /= k;
    stats.entropy /= k;
    stats.clip_fraction /= k;
    stats.grad_norm /= k;
  }
  return stats;
}

// ---------------------------------------------------------------- train

void validate(const TrainerConfig& c) {
  auto fail = [](const std::string& what) { throw Error(ErrorCode::ConfigError, what); };
  if (!(c.gamma > 0 && c.gamma <= 1)) fail("gamma must be in (0, 1]");
  if (!(c.lambda >= 0 && c.lambda <= 1)) fail("lambda must be in [0, 1]");
  if (!(c.epsilon > 0)) fail("epsilon must be > 0");
  if (!(c.beta >= 0)) fail("beta must be >= 0");
  if (!(c.learning_rate > 0)) fail("learning_rate must be > 0");
  if (c.time_horizon < 1) fail("time_horizon must be >= 1");
  if (c.batch_size < 1) fail("batch_size must be >= 1");
  if (c.buffer_size < 1 || c.buffer_size % c.batch_size != 0) fail("buffer_size must be a multiple of batch_size");
  if (c.num_epoch < 1) fail("num_epoch must be >= 1");
  if (c.max_steps < 0) fail("max_steps must be >= 0");
  if (c.summary_freq < 1) fail("summary_freq must be >= 1");
  if (c.num_layers < 0 || c.hidden_units < 1) fail("network shape");
  if (!(c.value_loss_coef >= 0) || !(c.grad_clip_norm >= 0)) fail("value_loss_coef and grad_clip_norm must be >= 0");
}

namespace {

using Clock = std::chrono::steady_clock;

struct ValueProbe {
  const PolicyParams& params;
  std::vector<float> x;
  ActorCritic<float>::Cache cache;

  double operator()(std::span<const double> obs) {
    x.resize(obs.size());
    params.prepare(obs, x.data());
    params.net.forward(Eigen::Map<ActorCritic<float>::Mat>(x.data(), long(x.size()), 1), cache);
    return cache.value(0);
  }
};

}  // namespace

TrainResult train(VecScene& env, const TrainerConfig& config, TrainSink* sink) {
  validate(config);
  const int N = env.agents(), D = env.obs_dim(), A = env.act_dim();
  Rng rng(config.seed);
  TrainResult result;
  result.params = make_policy(D, A, config, rng);
  PolicyParams& params = result.params;
  if (config.max_steps == 0) return result;

  Adam optimizer(params.net.size(), config.learning_rate, config.grad_clip_norm);
  std::normal_distribution<double> normal(0.0, 1.0);
  const auto t0 = Clock::now();
  const std::int64_t per_agent_batch = std::max(1, config.buffer_size / N);

  BatchTransition cur = env.reset(config.seed);
  std::int64_t done = 0;
  std::int64_t next_summary = config.summary_freq;
  std::vector<double> ep_returns, ep_lengths;
  MetricRow last_row;

  ActorCritic<float>::Mat X(D, N);
  ActorCritic<float>::Cache cache;
  std::vector<double> actions(size_t(N) * A);

  while (done < config.max_steps) {
    const int T = static_cast<int>(std::min<std::int64_t>(per_agent_batch, config.max_steps - done));
    // agent-major layout: slot(i, t) = i * T + t
    RolloutBuffer buf;
    buf.obs_dim = D;
    buf.act_dim = A;
    const size_t total = size_t(N) * T;
    buf.obs.resize(total * D);
    buf.actions.resize(total * A);
    buf.log_probs.resize(total);
    buf.values.resize(total);
    buf.rewards.resize(total);
    buf.statuses.resize(total);
    std::vector<double> trunc_values(total, 0.0);

    for (int t = 0; t < T; ++t) {
      if (params.normalize) params.normalizer.update_batch(cur.obs, N);
      for (int i = 0; i < N; ++i) params.prepare(cur.obs_row(i), X.col(i).data());
      params.net.forward(X, cache);
      const auto log_std = params.net.log_std();
      for (int i = 0; i < N; ++i) {
        const size_t slot = size_t(i) * T + t;
        float* a = buf.actions.data() + slot * A;
        for (int k = 0; k < A; ++k) {
          a[k] = static_cast<float>(cache.mean(k, i) + std::exp(log_std[k]) * normal(rng));
          actions[size_t(i) * A + k] = a[k];
        }
        std::copy_n(X.col(i).data(), D, buf.obs.data() + slot * D);
        buf.log_probs[slot] = gaussian_log_prob<float>(a, cache.mean.col(i).data(), log_std.data(), A);
        buf.values[slot] = cache.value(i);
      }

      BatchTransition next = env.step(actions);
      ValueProbe probe{params, {}, {}};
      for (int i = 0; i < N; ++i) {
        const size_t slot = size_t(i) * T + t;
        buf.rewards[slot] = next.rewards[i];
        StepStatus s = next.status[i];
        if (s == StepStatus::Truncated) {
          trunc_values[slot] = probe(next.terminal_row(i));
        } else if (s == StepStatus::Running && (t + 1) % config.time_horizon == 0 && t + 1 < T) {
          // segment boundary inside the buffer: bootstrap from the next stored value
          s = StepStatus::Truncated;
          trunc_values[slot] = std::numeric_limits<double>::quiet_NaN();
        }
        buf.statuses[slot] = s;
      }
      for (const auto& e : next.finished) {
        ep_returns.push_back(e.episode_return);
        ep_lengths.push_back(e.length);
      }
      cur = std::move(next);
    }

    buf.advantages.resize(total);
    buf.returns.resize(total);
    ValueProbe probe{params, {}, {}};
    for (int i = 0; i < N; ++i) {
      const size_t base = size_t(i) * T;
      for (int t = 0; t + 1 < T; ++t) {
        if (std::isnan(trunc_values[base + t])) trunc_values[base + t] = buf.values[base + t + 1];
      }
      const double bootstrap = probe(cur.obs_row(i));
      GaeResult g = compute_gae(std::span(buf.rewards).subspan(base, T), std::span(buf.values).subspan(base, T),
                                std::span(buf.statuses).subspan(base, T), std::span(trunc_values).subspan(base, T),
                                config.gamma, config.lambda, bootstrap);
      std::copy(g.advantages.begin(), g.advantages.end(), buf.advantages.begin() + base);
      std::copy(g.returns.begin(), g.returns.end(), buf.returns.begin() + base);
    }
    standardize(buf.advantages);

    UpdateStats stats = ppo_update(params, optimizer, buf, config, rng);
    result.updates += 1;
    done += T;
    result.total_agent_steps = done * N;
    if (sink) sink->update(stats, done);

    if (done >= next_summary || done >= config.max_steps) {
      MetricRow row;
      row.step = done;
      if (!ep_returns.empty()) {
        row.mean_return = std::accumulate(ep_returns.begin(), ep_returns.end(), 0.0) / ep_returns.size();
        row.mean_length = std::accumulate(ep_lengths.begin(), ep_lengths.end(), 0.0) / ep_lengths.size();
      } else {
        row.mean_return = last_row.mean_return;
        row.mean_length = last_row.mean_length;
      }
      const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
      row.steps_per_sec = secs > 0 ? static_cast<double>(result.total_agent_steps) / secs : 0.0;
      ep_returns.clear();
      ep_lengths.clear();
      last_row = row;
      result.metrics.push_back(row);
      if (sink) {
        sink->metrics(row);
        sink->checkpoint(params, done);
      }
      next_summary = (done / config.summary_freq + 1) * config.summary_freq;
    }
  }
  result.wall_seconds = std::chrono::duration<double>(Clock::now() - t0).count();
  return result;
}

// ---------------------------------------------------------------- evaluate

EvalReport evaluate(const PolicyParams& params, const EnvInstance& prototype, int episodes, bool deterministic,
                    int decision_frequency, std::uint64_t seed) {
  if (episodes <= 0) throw Error(ErrorCode::EmptyEvaluation, "episodes must be > 0");
  if (prototype.obs_dim() != params.obs_dim() || prototype.act_dim() != params.act_dim()) {
    throw Error(ErrorCode::DimensionMismatch, "policy does not match environment");
  }
  EnvInstance inst(prototype);
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const int D = params.obs_dim(), A = params.act_dim();
  ActorCritic<float>::Mat x(D, 1);
  ActorCritic<float>::Cache cache;
  std::vector<double> action(A);
  EvalReport rep;
  rep.episodes = episodes;
  for (int ep = 0; ep < episodes; ++ep) {
    std::vector<double> obs = agent_reset(inst, rng);
    double forward = 0.0;
    while (true) {
      params.prepare(obs, x.data());
      params.net.forward(x, cache);
      for (int k = 0; k < A; ++k) {
        action[k] = cache.mean(k, 0);
        if (!deterministic) action[k] += std::exp(static_cast<double>(params.net.log_std()[k])) * normal(rng);
      }
      DecisionResult r = step_decision(inst, action, decision_frequency);
      if (std::isfinite(inst.forward_distance())) forward = inst.forward_distance();
      if (r.status.status != StepStatus::Running) break;
      obs = std::move(r.obs);
    }
    rep.mean_return += inst.episode_return;
    rep.mean_length += inst.decision_step;
    rep.mean_forward_distance += forward;
  }
  rep.mean_return /= episodes;
  rep.mean_length /= episodes;
  rep.mean_forward_distance /= episodes;
  return rep;
}

}  // namespace ragmark

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "ragmark/error.hpp"
#include "ragmark/ppo.hpp"
#include "ragmark/util.hpp"

using namespace ragmark;

namespace {

// O(T^2) advantage: explicit sum of discounted residuals up to the segment end.
std::vector<double> gae_double_sum(const std::vector<double>& r, const std::vector<double>& v,
                                   const std::vector<StepStatus>& s, const std::vector<double>& trunc, double gamma,
                                   double lambda, double bootstrap) {
  const size_t n = r.size();
  auto delta = [&](size_t t) {
    double next;
    if (s[t] == StepStatus::Terminated) next = 0;
    else if (s[t] == StepStatus::Truncated) next = trunc[t];
    else next = t + 1 < n ? v[t + 1] : bootstrap;
    return r[t] + gamma * next - v[t];
  };
  std::vector<double> adv(n, 0.0);
  for (size_t t = 0; t < n; ++t) {
    double weight = 1.0;
    for (size_t k = t; k < n; ++k) {
      adv[t] += weight * delta(k);
      if (s[k] != StepStatus::Running) break;
      weight *= gamma * lambda;
    }
  }
  return adv;
}

Minibatch<double> random_batch(const ActorCritic<double>& net, int M, Rng& rng, double logp_jitter) {
  std::normal_distribution<double> n01(0, 1);
  std::uniform_real_distribution<double> jit(-logp_jitter, logp_jitter);
  Minibatch<double> b;
  b.obs = ActorCritic<double>::Mat(net.obs_dim(), M);
  b.actions = ActorCritic<double>::Mat(net.act_dim(), M);
  for (Eigen::Index k = 0; k < b.obs.size(); ++k) b.obs.data()[k] = n01(rng);
  for (Eigen::Index k = 0; k < b.actions.size(); ++k) b.actions.data()[k] = n01(rng) * 0.6;
  ActorCritic<double>::Cache cache;
  net.forward(b.obs, cache);
  b.old_log_prob.resize(M);
  b.advantages.resize(M);
  b.returns.resize(M);
  for (int i = 0; i < M; ++i) {
    b.old_log_prob[i] = gaussian_log_prob<double>(b.actions.col(i).data(), cache.mean.col(i).data(),
                                                  net.log_std().eval().data(), net.act_dim()) +
                        jit(rng);
    b.advantages[i] = n01(rng);
    b.returns[i] = n01(rng);
  }
  return b;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("ragmark_" + name)).string();
}

TrainerConfig small_config() {
  TrainerConfig c;
  c.batch_size = 64;
  c.buffer_size = 256;
  c.time_horizon = 16;
  c.max_steps = 300;
  c.summary_freq = 64;
  c.num_layers = 1;
  c.hidden_units = 16;
  c.seed = 5;
  return c;
}

}  // namespace

// ---------------------------------------------------------------- GAE

TEST(Gae, SingleStepUndiscounted) {
  std::vector<double> r{2.0}, v{0.5}, tr{0.0};
  std::vector<StepStatus> s{StepStatus::Running};
  GaeResult g = compute_gae(r, v, s, tr, 1.0, 0.95, 1.5);
  EXPECT_DOUBLE_EQ(g.advantages[0], 2.0 + 1.5 - 0.5);
  EXPECT_DOUBLE_EQ(g.returns[0], g.advantages[0] + 0.5);
}

TEST(Gae, LambdaZeroIsTdResidual) {
  std::vector<double> r{1, 2, 3}, v{0.1, 0.2, 0.3}, tr{0, 0, 0};
  std::vector<StepStatus> s(3, StepStatus::Running);
  GaeResult g = compute_gae(r, v, s, tr, 0.9, 0.0, 0.4);
  EXPECT_DOUBLE_EQ(g.advantages[0], 1 + 0.9 * 0.2 - 0.1);
  EXPECT_DOUBLE_EQ(g.advantages[1], 2 + 0.9 * 0.3 - 0.2);
  EXPECT_DOUBLE_EQ(g.advantages[2], 3 + 0.9 * 0.4 - 0.3);
}

TEST(Gae, TerminationVersusTruncation) {
  std::vector<double> r{1.0}, v{0.0}, tr{10.0};
  GaeResult term = compute_gae(r, v, std::vector<StepStatus>{StepStatus::Terminated}, tr, 0.5, 0.9, 99.0);
  GaeResult trunc = compute_gae(r, v, std::vector<StepStatus>{StepStatus::Truncated}, tr, 0.5, 0.9, 99.0);
  EXPECT_DOUBLE_EQ(term.advantages[0], 1.0);
  EXPECT_DOUBLE_EQ(trunc.advantages[0], 6.0);
}

TEST(Gae, MatchesDoubleSumOracle) {
  Rng rng(123);
  std::uniform_real_distribution<double> u(-1, 1);
  std::uniform_int_distribution<int> len(1, 32), kind(0, 9);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = len(rng);
    std::vector<double> r(n), v(n), tr(n);
    std::vector<StepStatus> s(n);
    for (int t = 0; t < n; ++t) {
      r[t] = u(rng);
      v[t] = u(rng);
      tr[t] = u(rng);
      int k = kind(rng);
      s[t] = k == 0 ? StepStatus::Terminated : k == 1 ? StepStatus::Truncated : StepStatus::Running;
    }
    const double gamma = 0.9 + 0.1 * std::abs(u(rng)), lambda = std::abs(u(rng)), boot = u(rng);
    GaeResult g = compute_gae(r, v, s, tr, gamma, lambda, boot);
    std::vector<double> oracle = gae_double_sum(r, v, s, tr, gamma, lambda, boot);
    for (int t = 0; t < n; ++t) {
      EXPECT_NEAR(g.advantages[t], oracle[t], 1e-6) << "trial " << trial << " t " << t;
      EXPECT_NEAR(g.returns[t], oracle[t] + v[t], 1e-6);
    }
  }
}

TEST(Gae, LengthMismatch) {
  std::vector<double> r{1, 2}, v{1}, tr{0, 0};
  std::vector<StepStatus> s(2, StepStatus::Running);
  try {
    compute_gae(r, v, s, tr, 0.99, 0.95, 0.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::LengthMismatch);
  }
}

TEST(Gae, Standardize) {
  std::vector<double> a{1, 2, 3, 4, 10};
  standardize(a);
  double mean = 0, var = 0;
  for (double x : a) mean += x;
  mean /= a.size();
  for (double x : a) var += (x - mean) * (x - mean);
  EXPECT_NEAR(mean, 0, 1e-12);
  EXPECT_NEAR(var / a.size(), 1, 1e-6);
}

// ---------------------------------------------------------------- normalizer

TEST(Normalizer, FirstObservationMapsToZero) {
  Normalizer n(3);
  std::vector<double> x{4.0, -2.0, 7.5};
  n.update(x);
  float out[3];
  n.apply(x, out);
  for (float v : out) EXPECT_NEAR(v, 0.0f, 1e-6f);
}

TEST(Normalizer, ConstantStreamConvergesToZero) {
  Normalizer n(2);
  std::vector<double> x{3.0, -1.0};
  for (int i = 0; i < 1000; ++i) n.update(x);
  float out[2];
  n.apply(x, out);
  EXPECT_NEAR(out[0], 0.0f, 1e-6f);
  EXPECT_NEAR(out[1], 0.0f, 1e-6f);
}

TEST(Normalizer, MatchesTwoPassStatistics) {
  Rng rng(77);
  std::normal_distribution<double> g(3.0, 2.0);
  const int dim = 4;
  std::vector<std::vector<double>> samples;
  Normalizer n(dim);
  for (int chunk = 0; chunk < 50; ++chunk) {
    const int rows = 1 + chunk % 7;
    std::vector<double> block;
    for (int r = 0; r < rows; ++r) {
      std::vector<double> s(dim);
      for (int k = 0; k < dim; ++k) s[k] = g(rng) * (k + 1);
      samples.push_back(s);
      block.insert(block.end(), s.begin(), s.end());
    }
    n.update_batch(block, rows);
  }
  for (int k = 0; k < dim; ++k) {
    double mean = 0;
    for (const auto& s : samples) mean += s[k];
    mean /= samples.size();
    double var = 0;
    for (const auto& s : samples) var += (s[k] - mean) * (s[k] - mean);
    var /= samples.size();
    EXPECT_NEAR(n.mean()[k], mean, 1e-6);
    EXPECT_NEAR(n.variance()[k], var, 1e-6);
  }
  EXPECT_EQ(n.count(), static_cast<double>(samples.size()));
}

TEST(Normalizer, ClampsToFive) {
  Normalizer n(1);
  for (double v : {0.0, 1.0, 0.0, 1.0}) n.update(std::vector<double>{v});
  float out;
  n.apply(std::vector<double>{100.0}, &out);
  EXPECT_EQ(out, 5.0f);
}

// ---------------------------------------------------------------- loss

TEST(Loss, GradientMatchesFiniteDifferences) {
  Rng rng(9);
  ActorCritic<double> net(3, 2, 1, 4);
  ASSERT_LE(net.size(), 64);
  net.init(rng);
  std::normal_distribution<double> n01(0, 1);
  for (Eigen::Index k = 0; k < net.size(); ++k) net.theta[k] += 0.3 * n01(rng);
  Minibatch<double> b = random_batch(net, 12, rng, 0.15);
  LossCoefficients coef{0.2, 0.01, 0.5};
  auto analytic = ppo_loss(net, b, coef, true).grad;
  Eigen::VectorXd numeric(net.size());
  const double h = 1e-6;
  for (Eigen::Index k = 0; k < net.size(); ++k) {
    ActorCritic<double> plus = net, minus = net;
    plus.theta[k] += h;
    minus.theta[k] -= h;
    numeric[k] = (ppo_loss(plus, b, coef, false).total - ppo_loss(minus, b, coef, false).total) / (2 * h);
  }
  const double rel = (analytic - numeric).norm() / std::max(analytic.norm(), numeric.norm());
  EXPECT_LT(rel, 1e-3);
  for (Eigen::Index k = 0; k < net.size(); ++k) {
    EXPECT_NEAR(analytic[k], numeric[k], 1e-3 * std::max(1.0, std::abs(numeric[k]))) << "param " << k;
  }
}

TEST(Loss, MatchesHandComputation) {
  // No hidden layer: mean = w x + b, value = u x + c.
  ActorCritic<double> net(1, 1, 0, 1);
  ASSERT_EQ(net.size(), 5);
  const double w = 0.5, bias = -0.1, u = 2.0, c = 0.3, ls = -0.2;
  net.theta << w, bias, u, c, ls;
  Minibatch<double> b;
  b.obs = ActorCritic<double>::Mat(1, 4);
  b.obs << 1.0, -1.0, 0.5, 2.0;
  b.actions = ActorCritic<double>::Mat(1, 4);
  b.actions << 0.2, -0.7, 0.4, 1.5;
  b.old_log_prob = Eigen::Vector4d(-0.9, -1.1, -0.6, -1.3);
  b.advantages = Eigen::Vector4d(1.0, -0.5, 2.0, -1.5);
  b.returns = Eigen::Vector4d(1.0, 0.0, -1.0, 4.0);
  const double eps = 0.2, beta = 0.01, cv = 0.5;

  const double sigma = std::exp(ls);
  double pol = 0, val = 0;
  for (int i = 0; i < 4; ++i) {
    const double x = b.obs(0, i), a = b.actions(0, i);
    const double mu = w * x + bias;
    const double lp = -0.5 * std::pow((a - mu) / sigma, 2) - ls - 0.5 * std::log(2 * M_PI);
    const double ratio = std::exp(lp - b.old_log_prob[i]);
    const double adv = b.advantages[i];
    const double clipped = std::min(std::max(ratio, 1 - eps), 1 + eps);
    pol += std::min(ratio * adv, clipped * adv);
    val += std::pow(u * x + c - b.returns[i], 2);
  }
  const double entropy = ls + 0.5 * std::log(2 * M_PI * M_E);
  const double expected = -pol / 4 + cv * val / 4 - beta * entropy;
  auto r = ppo_loss(net, b, LossCoefficients{eps, beta, cv}, false);
  EXPECT_NEAR(r.total, expected, 1e-10);
  EXPECT_NEAR(r.entropy, entropy, 1e-12);
}

TEST(Loss, UnitRatioGivesZeroPolicyTerm) {
  Rng rng(4);
  ActorCritic<double> net(2, 2, 1, 3);
  net.init(rng);
  Minibatch<double> b = random_batch(net, 40, rng, 0.0);
  std::vector<double> adv(b.advantages.data(), b.advantages.data() + 40);
  standardize(adv);
  for (int i = 0; i < 40; ++i) b.advantages[i] = adv[i];
  auto r = ppo_loss(net, b, LossCoefficients{0.2, 0.0, 0.0}, false);
  EXPECT_NEAR(r.policy_loss, 0.0, 1e-9);
  EXPECT_EQ(r.clip_fraction, 0.0);
}

TEST(Loss, ClippedSampleHasNoPolicyGradient) {
  ActorCritic<double> net(1, 1, 0, 1);
  net.theta << 0.3, 0.1, 0.0, 0.0, -0.5;
  Minibatch<double> b;
  b.obs = ActorCritic<double>::Mat::Constant(1, 1, 1.0);
  b.actions = ActorCritic<double>::Mat::Constant(1, 1, 0.2);
  ActorCritic<double>::Cache cache;
  net.forward(b.obs, cache);
  const double ls = -0.5;
  const double lp = gaussian_log_prob<double>(b.actions.data(), cache.mean.data(), &ls, 1);
  const double eps = 0.2;
  b.old_log_prob = Eigen::VectorXd::Constant(1, lp - std::log(1 + 2 * eps));  // ratio = 1 + 2 eps
  b.advantages = Eigen::VectorXd::Constant(1, 1.0);
  b.returns = Eigen::VectorXd::Constant(1, 0.0);
  auto r = ppo_loss(net, b, LossCoefficients{eps, 0.0, 0.0}, true);
  EXPECT_NEAR(r.grad.norm(), 0.0, 1e-12);
  EXPECT_EQ(r.clip_fraction, 1.0);
}

TEST(Loss, EntropyClosedForm) {
  Eigen::VectorXd ls(3);
  ls << -0.5, 0.1, 1.2;
  double expected = 0;
  for (int k = 0; k < 3; ++k) expected += ls[k] + 0.5 * std::log(2 * M_PI * M_E);
  EXPECT_NEAR(gaussian_entropy<double>(ls), expected, 1e-9);
}

TEST(Loss, ClipFractionInUnitInterval) {
  Rng rng(12);
  ActorCritic<double> net(3, 2, 2, 5);
  net.init(rng);
  for (double jitter : {0.0, 0.1, 0.5, 3.0}) {
    auto r = ppo_loss(net, random_batch(net, 30, rng, jitter), LossCoefficients{}, false);
    EXPECT_GE(r.clip_fraction, 0.0);
    EXPECT_LE(r.clip_fraction, 1.0);
  }
}

// ---------------------------------------------------------------- config

TEST(Config, ParsesSection) {
  const char* text = R"(
default:
  seed: 3
DeepMindHopperBrain:
  beta: 1.0e-2
  epsilon: 0.20
  gamma: 0.99
  lambda: 0.95
  learning_rate: 1.0e-3
  num_epoch: 3
  time_horizon: 128
  summary_freq: 1000
  use_recurrent: false
  normalize: true
  num_layers: 2
  hidden_units: 90
  batch_size: 2048
  buffer_size: 10240
  max_steps: 3e5
  use_curiosity: false
  curiosity_strength: 0.01
  curiosity_enc_size: 256
  some_future_key: 1
)";
  RunConfig rc = parse_run_config(text, "DeepMindHopperBrain");
  EXPECT_EQ(rc.trainer.max_steps, 300000);
  EXPECT_EQ(rc.trainer.hidden_units, 90);
  EXPECT_EQ(rc.trainer.seed, 3u);
  EXPECT_DOUBLE_EQ(rc.trainer.beta, 0.01);
  EXPECT_EQ(rc.entries.front().first, "seed");
  for (const auto& [k, v] : rc.entries) EXPECT_NE(k, "some_future_key");
}

TEST(Config, CuriosityRejected) {
  try {
    parse_run_config("B:\n  use_curiosity: true\n", "B");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Unsupported);
  }
}

TEST(Config, InvalidValues) {
  auto code = [](const std::string& text) {
    try {
      parse_run_config(text, "B");
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::IoError;
  };
  EXPECT_EQ(code("B:\n  batch_size: 100\n  buffer_size: 250\n"), ErrorCode::ConfigError);
  EXPECT_EQ(code("B:\n  gamma: 1.5\n"), ErrorCode::ConfigError);
  EXPECT_EQ(code("B:\n  num_epoch: three\n"), ErrorCode::ConfigError);
  EXPECT_EQ(code("A:\n  gamma: 0.9\n"), ErrorCode::ConfigError);
}

// ---------------------------------------------------------------- train / evaluate / checkpoint

TEST(Train, ZeroStepsReturnsInitialParams) {
  VecScene env(make_env_spec(EnvId::Slider), 4);
  TrainerConfig c = small_config();
  c.max_steps = 0;
  TrainResult r = train(env, c);
  EXPECT_EQ(r.updates, 0);
  EXPECT_EQ(r.total_agent_steps, 0);
  Rng rng(c.seed);
  EXPECT_EQ(r.params.net.theta, make_policy(env.obs_dim(), env.act_dim(), c, rng).net.theta);
}

TEST(Train, ExactStepTotal) {
  VecScene env(make_env_spec(EnvId::Slider), 4);
  TrainerConfig c = small_config();
  TrainResult r = train(env, c);
  EXPECT_EQ(r.total_agent_steps, 4 * 300);
  EXPECT_EQ(env.totals().steps, 4 * 300);
  EXPECT_EQ(r.updates, 5);  // 64 + 64 + 64 + 64 + 44 per agent
}

TEST(Train, DeterministicMetrics) {
  auto spec = make_env_spec(EnvId::Hopper);
  TrainerConfig c = small_config();
  VecScene a(spec, 4), b(spec, 4);
  TrainResult ra = train(a, c), rb = train(b, c);
  ASSERT_EQ(ra.metrics.size(), rb.metrics.size());
  for (size_t k = 0; k < ra.metrics.size(); ++k) {
    EXPECT_EQ(ra.metrics[k].step, rb.metrics[k].step);
    EXPECT_EQ(ra.metrics[k].mean_return, rb.metrics[k].mean_return);
    EXPECT_EQ(ra.metrics[k].mean_length, rb.metrics[k].mean_length);
  }
  EXPECT_EQ(ra.params.net.theta, rb.params.net.theta);
}

TEST(Evaluate, EmptyEvaluation) {
  auto spec = make_env_spec(EnvId::Hopper);
  Rng rng(1);
  PolicyParams p = make_policy(spec->obs_dim, spec->act_dim, TrainerConfig{}, rng);
  try {
    evaluate(p, EnvInstance(spec), 0, true, 5, 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyEvaluation);
  }
}

TEST(Evaluate, UntrainedHopperFallsAndIsReproducible) {
  auto spec = make_env_spec(EnvId::Hopper);
  Rng rng(1);
  PolicyParams p = make_policy(spec->obs_dim, spec->act_dim, TrainerConfig{}, rng);
  p.normalize = false;
  EvalReport a = evaluate(p, EnvInstance(spec), 5, false, 5, 21);
  EvalReport b = evaluate(p, EnvInstance(spec), 5, false, 5, 21);
  EXPECT_EQ(a, b);
  EXPECT_LT(a.mean_length, spec->episode_cap / 4.0);
}

TEST(Checkpoint, RoundTripIsBitwise) {
  VecScene env(make_env_spec(EnvId::Slider), 4);
  TrainerConfig c = small_config();
  TrainResult r = train(env, c);
  const std::string path = temp_path("roundtrip.rgmk");
  CheckpointMeta meta;
  meta.env_id = "slider";
  meta.config = {{"max_steps", "300"}};
  save_checkpoint(path, r.params, meta);
  Checkpoint ck = load_checkpoint(path);
  EXPECT_EQ(ck.meta.env_id, "slider");
  EXPECT_EQ(ck.params.net.theta, r.params.net.theta);
  EXPECT_EQ(ck.params.normalizer.count(), r.params.normalizer.count());
  EnvInstance proto(env.spec_ptr());
  EvalReport before = evaluate(r.params, proto, 3, true, 5, 8);
  EvalReport after = evaluate(ck.params, proto, 3, true, 5, 8);
  EXPECT_EQ(before, after);
  EvalReport sb = evaluate(r.params, proto, 3, false, 5, 8);
  EvalReport sa = evaluate(ck.params, proto, 3, false, 5, 8);
  EXPECT_EQ(sb, sa);
  std::filesystem::remove(path);
}

TEST(Checkpoint, Errors) {
  try {
    load_checkpoint(temp_path("does_not_exist.rgmk"));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::FileNotFound);
  }
  const std::string path = temp_path("garbage.rgmk");
  write_file_atomic(path, "NOTACHECKPOINT");
  try {
    load_checkpoint(path);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::BadCheckpoint);
  }
  std::filesystem::remove(path);
}

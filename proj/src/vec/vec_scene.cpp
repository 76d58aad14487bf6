#include "ragmark/vec_scene.hpp"

#include <omp.h>

#include <chrono>
#include <cmath>
#include <sstream>
#include <thread>

#include "ragmark/error.hpp"

namespace ragmark {

namespace {

using Clock = std::chrono::steady_clock;

Rng sub_rng(std::uint64_t seed, int index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index)};
  return Rng(seq);
}

}  // namespace

VecScene::VecScene(const EnvInstance& prototype, int agents, int decision_frequency)
    : spec_(prototype.spec), decision_frequency_(decision_frequency) {
  if (agents < 1) throw Error(ErrorCode::InvalidValue, "agents must be >= 1");
  if (decision_frequency < 1) throw Error(ErrorCode::InvalidValue, "decision_frequency must be >= 1");
  instances_.reserve(agents);
  for (int i = 0; i < agents; ++i) instances_.emplace_back(prototype);
  rngs_.resize(agents);
  obs_dim_ = prototype.obs_dim();
}

VecScene::VecScene(EnvSpecPtr spec, int agents, int decision_frequency)
    : VecScene(EnvInstance(std::move(spec)), agents, decision_frequency) {}

int VecScene::threads() const { return threads_ > 0 ? threads_ : omp_get_max_threads(); }

BatchTransition VecScene::make_batch() const {
  BatchTransition b;
  b.agents = agents();
  b.obs_dim = obs_dim_;
  b.obs.assign(size_t(b.agents) * obs_dim_, 0.0);
  b.rewards.assign(b.agents, 0.0);
  b.status.assign(b.agents, StepStatus::Running);
  b.reasons.assign(b.agents, TerminationReason::None);
  b.reset_flags.assign(b.agents, 0);
  b.terminal_obs.assign(size_t(b.agents) * obs_dim_, 0.0);
  return b;
}

BatchTransition VecScene::reset(std::uint64_t seed) {
  auto t0 = Clock::now();
  BatchTransition out = make_batch();
  for (int i = 0; i < agents(); ++i) {
    rngs_[i] = sub_rng(seed, i);
    std::vector<double> obs;
    try {
      obs = agent_reset(instances_[i], rngs_[i]);
    } catch (const Error& e) {
      throw Error(e.code(), "instance " + std::to_string(i) + ": " + e.what());
    }
    std::copy(obs.begin(), obs.end(), out.obs.begin() + size_t(i) * obs_dim_);
    out.reset_flags[i] = 1;
  }
  was_reset_ = true;
  totals_.wall_seconds += std::chrono::duration<double>(Clock::now() - t0).count();
  return out;
}

void VecScene::check_actions(std::span<const double> actions) const {
  if (!was_reset_) throw Error(ErrorCode::BadState, "step before reset");
  const size_t want = size_t(agents()) * act_dim();
  if (actions.size() != want) {
    throw Error(ErrorCode::ShapeMismatch,
                "actions length " + std::to_string(actions.size()) + " != " + std::to_string(want));
  }
  for (double a : actions) {
    if (!std::isfinite(a)) throw Error(ErrorCode::NonFiniteAction, "non-finite action");
  }
}

void VecScene::step_one(int i, std::span<const double> actions, BatchTransition& out) {
  EnvInstance& inst = instances_[i];
  const int A = act_dim();
  DecisionResult r = step_decision(inst, actions.subspan(size_t(i) * A, A), decision_frequency_);
  out.rewards[i] = r.reward;
  out.status[i] = r.status.status;
  out.reasons[i] = r.status.reason;
  double* row = out.obs.data() + size_t(i) * obs_dim_;
  if (r.status.status == StepStatus::Running) {
    std::copy(r.obs.begin(), r.obs.end(), row);
    return;
  }
  if (!r.obs.empty()) std::copy(r.obs.begin(), r.obs.end(), out.terminal_obs.begin() + size_t(i) * obs_dim_);
  std::vector<double> obs;
  EpisodeEnd end{i, inst.episode_return, inst.decision_step, inst.forward_distance(), r.status};
  obs = agent_reset(inst, rngs_[i]);
  std::copy(obs.begin(), obs.end(), row);
  out.reset_flags[i] = 1;
  out.finished[i] = end;
}

void VecScene::collect(BatchTransition& out, double seconds) {
  std::vector<EpisodeEnd> ends;
  for (int i = 0; i < agents(); ++i) {
    if (out.reset_flags[i]) ends.push_back(out.finished[i]);
  }
  out.finished = std::move(ends);
  totals_.steps += agents();
  totals_.episodes += static_cast<std::int64_t>(out.finished.size());
  totals_.wall_seconds += seconds;
}

BatchTransition VecScene::step(std::span<const double> actions) {
  check_actions(actions);
  auto t0 = Clock::now();
  BatchTransition out = make_batch();
  out.finished.resize(agents());
  std::vector<std::exception_ptr> errors(agents());
  const int n = agents();
#pragma omp parallel for schedule(dynamic, 1) num_threads(threads())
  for (int i = 0; i < n; ++i) {
    try {
      step_one(i, actions, out);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  collect(out, std::chrono::duration<double>(Clock::now() - t0).count());
  return out;
}

BatchTransition VecScene::step_serial(std::span<const double> actions) {
  check_actions(actions);
  auto t0 = Clock::now();
  BatchTransition out = make_batch();
  out.finished.resize(agents());
  for (int i = 0; i < agents(); ++i) step_one(i, actions, out);
  collect(out, std::chrono::duration<double>(Clock::now() - t0).count());
  return out;
}

// ---------------------------------------------------------------- bench

std::string host_note() {
  std::ostringstream s;
  s << "cores=" << std::thread::hardware_concurrency() << ";omp_max_threads=" << omp_get_max_threads();
#if defined(__clang__)
  s << ";compiler=clang-" << __clang_major__ << "." << __clang_minor__;
#elif defined(__GNUC__)
  s << ";compiler=gcc-" << __GNUC__ << "." << __GNUC_MINOR__;
#endif
  return s.str();
}

std::string BenchReport::to_text() const {
  std::ostringstream s;
  s.precision(10);
  s << "environment=" << env_id << "\n"
    << "agents=" << agents << "\n"
    << "decision_frequency=" << decision_frequency << "\n"
    << "dt=" << dt << "\n"
    << "threads=" << threads << "\n"
    << "action_source=" << action_source << "\n"
    << "vec_steps=" << vec_steps << "\n"
    << "total_agent_steps=" << total_agent_steps << "\n"
    << "episodes=" << episodes << "\n"
    << "elapsed_seconds=" << elapsed_seconds << "\n"
    << "agent_steps_per_second=" << agent_steps_per_second << "\n"
    << "physics_steps_per_second=" << physics_steps_per_second << "\n"
    << "host=" << host << "\n";
  return s.str();
}

BenchReport bench_throughput(VecScene& scene, double seconds, ActionSource source, std::uint64_t seed,
                             bool serial) {
  if (!(seconds > 0)) throw Error(ErrorCode::InvalidValue, "bench duration must be > 0");
  scene.reset(seed);
  Rng rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> actions(size_t(scene.agents()) * scene.act_dim(), 0.0);
  BenchReport rep;
  const auto t0 = Clock::now();
  double elapsed = 0;
  while (elapsed < seconds) {
    if (source == ActionSource::Random) {
      for (double& a : actions) a = u(rng);
    }
    BatchTransition b = serial ? scene.step_serial(actions) : scene.step(actions);
    rep.vec_steps += 1;
    rep.episodes += static_cast<std::int64_t>(b.finished.size());
    elapsed = std::chrono::duration<double>(Clock::now() - t0).count();
  }
  rep.env_id = scene.spec().env_id;
  rep.agents = scene.agents();
  rep.decision_frequency = scene.decision_frequency();
  rep.dt = scene.spec().physics.dt;
  rep.threads = serial ? 1 : scene.threads();
  rep.total_agent_steps = rep.vec_steps * scene.agents();
  rep.elapsed_seconds = elapsed;
  rep.agent_steps_per_second = static_cast<double>(rep.total_agent_steps) / elapsed;
  rep.physics_steps_per_second = rep.agent_steps_per_second * scene.decision_frequency();
  rep.action_source = source == ActionSource::Random ? "random" : "zeros";
  rep.host = host_note();
  return rep;
}

}  // namespace ragmark

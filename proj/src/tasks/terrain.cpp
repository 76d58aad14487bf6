#include <cmath>

#include "ragmark/error.hpp"
#include "ragmark/tasks.hpp"

namespace ragmark {

namespace {

constexpr double kBumpHalfWidth = 0.3;

void check_bounds(const char* name, double v, const Bounds& b) {
  if (!(b.min <= b.max) || !(v >= b.min && v <= b.max)) {
    throw Error(ErrorCode::InvalidValue, std::string(name) + " " + std::to_string(v) + " outside [" +
                                             std::to_string(b.min) + ", " + std::to_string(b.max) + "]");
  }
}

}  // namespace

void TerrainChallenge::validate() const {
  check_bounds("bump_height", bump_height, bump_height_bounds);
  check_bounds("bump_spacing", bump_spacing, bump_spacing_bounds);
  check_bounds("slope", slope, slope_bounds);
  check_bounds("gap_width", gap_width, gap_width_bounds);
  check_bounds("difficulty_cap", difficulty_cap, {0.0, 1.0});
  check_bounds("difficulty", difficulty, {0.0, 1.0});
  if (bump_spacing_bounds.min <= 0) throw Error(ErrorCode::InvalidValue, "bump_spacing must be positive");
  if (height_obs_count < 0) throw Error(ErrorCode::InvalidValue, "height_obs_count must be >= 0");
  if (!(height_obs_spacing > 0)) throw Error(ErrorCode::InvalidValue, "height_obs_spacing must be positive");
}

Terrain generate_terrain(const TerrainChallenge& c, Rng& rng) {
  c.validate();
  const int n = static_cast<int>(std::lround(kTerrainLength / kTerrainSpacing)) + 1;
  const double d = c.difficulty;
  std::vector<double> h(n, 0.0);
  auto x_of = [](int i) { return i * kTerrainSpacing; };

  for (int i = 0; i < n; ++i) {
    if (x_of(i) > kSpawnPad) h[i] = d * c.slope * (x_of(i) - kSpawnPad);
  }

  // Bumps sit on grid points so the crest is sampled exactly.
  std::uniform_real_distribution<double> offset(0.5, 0.5 + c.bump_spacing);
  const double bump = d * c.bump_height;
  for (double center = kSpawnPad + offset(rng); center < kTerrainLength; center += c.bump_spacing) {
    const int ci = static_cast<int>(std::lround(center / kTerrainSpacing));
    for (int i = std::max(0, ci - 3); i <= std::min(n - 1, ci + 3); ++i) {
      const double u = (i - ci) * kTerrainSpacing / kBumpHalfWidth;
      if (std::abs(u) < 1.0 && x_of(i) > kSpawnPad) h[i] += bump * 0.5 * (1.0 + std::cos(M_PI * u));
    }
  }

  std::uniform_real_distribution<double> gap_step(4.0, 8.0);
  const double width = d * c.gap_width;
  for (double start = kSpawnPad + gap_step(rng); width > 0 && start < kTerrainLength; start += gap_step(rng)) {
    for (int i = 0; i < n; ++i) {
      const double x = x_of(i);
      if (x >= start && x < start + width) h[i] = d * c.slope * (x - kSpawnPad) - 1.0;
    }
  }
  return Terrain::heightfield(std::move(h), kTerrainSpacing, 0.0);
}

std::vector<double> height_observation(const Terrain& terrain, double pelvis_x, int K, double spacing) {
  if (K < 0) throw Error(ErrorCode::InvalidValue, "height observation count");
  std::vector<double> out(K);
  const double base = terrain.height(pelvis_x);
  for (int i = 1; i <= K; ++i) out[i - 1] = terrain.height(pelvis_x + i * spacing) - base;
  return out;
}

TerrainChallenge propose_challenge(const TerrainChallenge& c, Rng& rng) {
  std::normal_distribution<double> n01(0.0, 1.0);
  auto step = [&](double v, const Bounds& b) { return b.clip(v + 0.05 * (b.max - b.min) * n01(rng)); };
  TerrainChallenge p = c;
  p.bump_height = step(c.bump_height, c.bump_height_bounds);
  p.bump_spacing = step(c.bump_spacing, c.bump_spacing_bounds);
  p.slope = step(c.slope, c.slope_bounds);
  p.gap_width = step(c.gap_width, c.gap_width_bounds);
  p.difficulty = std::clamp(c.difficulty + 0.05 * n01(rng), 0.0, c.difficulty_cap);
  return p;
}

bool adversarial_update(AdversaryState& state, const ChallengeEvaluator& evaluate, Rng& rng) {
  if (!state.measured) {
    state.current.difficulty = std::min(state.current.difficulty, state.current.difficulty_cap);
    state.current_reward = evaluate(state.current);
    state.measured = true;
    state.accepted_rewards.push_back(state.current_reward);
  }
  TerrainChallenge proposal = propose_challenge(state.current, rng);
  const double reward = evaluate(proposal);
  state.proposals += 1;
  if (!(reward < state.current_reward)) return false;
  state.current = proposal;
  state.current_reward = reward;
  state.accepted += 1;
  state.accepted_rewards.push_back(reward);
  return true;
}

TerrainTask::TerrainTask(TerrainChallenge c) : challenge_(c) { challenge_.validate(); }

std::shared_ptr<const Terrain> TerrainTask::terrain_for_reset(EnvInstance&, Rng& rng) {
  return std::make_shared<const Terrain>(generate_terrain(challenge_, rng));
}

void TerrainTask::observe(const EnvInstance& inst, std::vector<double>& obs) const {
  auto h = height_observation(*inst.terrain, inst.pelvis().pos.x(), challenge_.height_obs_count,
                              challenge_.height_obs_spacing);
  obs.insert(obs.end(), h.begin(), h.end());
}

void TerrainTask::set_challenge(const TerrainChallenge& c) {
  if (c.height_obs_count != challenge_.height_obs_count) {
    throw Error(ErrorCode::ShapeMismatch, "height_obs_count cannot change on a live scene");
  }
  c.validate();
  challenge_ = c;
}

}  // namespace ragmark

#include <cmath>
#include <limits>
#include <sstream>

#include "ragmark/error.hpp"
#include "ragmark/tasks.hpp"
#include "ragmark/util.hpp"

namespace ragmark {

namespace {

Error bad_motion(int line, const std::string& why) {
  return Error(ErrorCode::InvalidValue, "motion line " + std::to_string(line) + ": " + why);
}

}  // namespace

ReferenceMotion parse_motion(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  ReferenceMotion m;
  bool header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    std::istringstream ls(line);
    std::string first;
    if (!(ls >> first)) continue;
    if (!header) {
      std::string joints, loop;
      if (first != "motion" || !(ls >> m.name >> joints >> loop)) throw bad_motion(lineno, "expected 'motion <name> joints=<n> loop=<0|1>'");
      if (joints.rfind("joints=", 0) != 0 || loop.rfind("loop=", 0) != 0) throw bad_motion(lineno, "header fields");
      try {
        m.joints = std::stoi(joints.substr(7));
      } catch (const std::exception&) {
        throw bad_motion(lineno, "joints");
      }
      if (m.joints < 1) throw bad_motion(lineno, "joints must be positive");
      const std::string lv = loop.substr(5);
      if (lv != "0" && lv != "1") throw bad_motion(lineno, "loop must be 0 or 1");
      m.loop = lv == "1";
      header = true;
      continue;
    }
    std::vector<double> values;
    try {
      size_t used = 0;
      values.push_back(std::stod(first, &used));
      if (used != first.size()) throw std::invalid_argument(first);
      std::string tok;
      while (ls >> tok) {
        values.push_back(std::stod(tok, &used));
        if (used != tok.size()) throw std::invalid_argument(tok);
      }
    } catch (const std::exception&) {
      throw bad_motion(lineno, "expected numbers");
    }
    if (values.size() != size_t(m.joints) + 4) {
      throw bad_motion(lineno, "expected " + std::to_string(m.joints + 4) + " values, got " + std::to_string(values.size()));
    }
    for (double v : values) {
      if (!std::isfinite(v)) throw bad_motion(lineno, "non-finite value");
    }
    MotionFrame f;
    f.t = values[0];
    f.q.assign(values.begin() + 1, values.begin() + 1 + m.joints);
    f.root = {values[m.joints + 1], values[m.joints + 2], values[m.joints + 3]};
    if (!m.frames.empty() && f.t <= m.frames.back().t) throw bad_motion(lineno, "frame times must increase");
    if (m.frames.empty() && f.t < 0) throw bad_motion(lineno, "negative frame time");
    m.frames.push_back(std::move(f));
  }
  if (!header) throw Error(ErrorCode::EmptyMotion, "motion has no header");
  if (m.frames.empty()) throw Error(ErrorCode::EmptyMotion, "motion '" + m.name + "' has no frames");
  return m;
}

ReferenceMotion load_motion(const std::string& path) { return parse_motion(read_file(path)); }

std::string format_motion(const ReferenceMotion& m) {
  std::ostringstream out;
  out.precision(17);
  out << "motion " << m.name << " joints=" << m.joints << " loop=" << (m.loop ? 1 : 0) << "\n";
  for (const auto& f : m.frames) {
    out << f.t;
    for (double q : f.q) out << ' ' << q;
    for (double r : f.root) out << ' ' << r;
    out << "\n";
  }
  return out.str();
}

MotionFrame sample_reference(const ReferenceMotion& m, double t) {
  if (m.frames.empty()) throw Error(ErrorCode::EmptyMotion, "motion '" + m.name + "' has no frames");
  const auto& frames = m.frames;
  const double t0 = frames.front().t, t1 = frames.back().t;
  if (m.loop && t1 > t0 && (t < t0 || t > t1)) {
    t = t0 + std::fmod(t - t0, t1 - t0);
    if (t < t0) t += t1 - t0;
  }
  if (t <= t0) return frames.front();
  if (t >= t1) return frames.back();
  auto hi = std::upper_bound(frames.begin(), frames.end(), t, [](double v, const MotionFrame& f) { return v < f.t; });
  const MotionFrame& b = *hi;
  const MotionFrame& a = *(hi - 1);
  const double s = (t - a.t) / (b.t - a.t);
  MotionFrame out;
  out.t = t;
  out.q.resize(a.q.size());
  for (size_t i = 0; i < a.q.size(); ++i) out.q[i] = a.q[i] + s * (b.q[i] - a.q[i]);
  for (int k = 0; k < 3; ++k) out.root[k] = a.root[k] + s * (b.root[k] - a.root[k]);
  return out;
}

ReferenceMotion walker_gait_motion(double period, double fps) {
  ReferenceMotion m;
  m.name = "walker-gait";
  m.joints = 6;
  m.loop = true;
  const int n = static_cast<int>(std::round(period * fps));
  for (int k = 0; k <= n; ++k) {
    const double t = period * k / n;
    const double w = 2.0 * M_PI * t / period;
    MotionFrame f;
    f.t = t;
    // right hip, knee, ankle, then left; legs half a cycle apart, knees only flex
    for (double shift : {0.0, M_PI}) {
      f.q.push_back(0.5 * std::sin(w + shift));
      f.q.push_back(-0.6 * std::max(0.0, std::sin(w + shift + 0.5 * M_PI)));
      f.q.push_back(0.2 * std::sin(w + shift - 0.5 * M_PI));
    }
    f.root = {1.2 * t, 1.25, 0.0};
    m.frames.push_back(std::move(f));
  }
  return m;
}

ReferenceMotion pendulum_motion(double amplitude, double period, double fps) {
  ReferenceMotion m;
  m.name = "pendulum";
  m.joints = 1;
  m.loop = true;
  const int n = static_cast<int>(std::round(period * fps));
  for (int k = 0; k <= n; ++k) {
    const double t = period * k / n;
    const double q = k == n ? 0.0 : amplitude * std::sin(2.0 * M_PI * t / period);
    MotionFrame f;
    f.t = t;
    f.q = {q};
    f.root = {0.5 * std::sin(q), 1.5 - 0.5 * std::cos(q), q};
    m.frames.push_back(std::move(f));
  }
  return m;
}

ReferenceMotion generate_motion(const std::string& kind) {
  if (kind == "walker-gait") return walker_gait_motion();
  if (kind == "pendulum") return pendulum_motion();
  throw Error(ErrorCode::InvalidValue, "unknown motion kind '" + kind + "' (walker-gait, pendulum)");
}

double pose_distance(std::span<const double> q, std::span<const double> ref) {
  if (q.size() != ref.size()) {
    throw Error(ErrorCode::DimensionMismatch, "pose has " + std::to_string(q.size()) + " joints, reference has " +
                                                  std::to_string(ref.size()));
  }
  double d = 0;
  for (size_t i = 0; i < q.size(); ++i) d += (q[i] - ref[i]) * (q[i] - ref[i]);
  return d;
}

double imitation_reward(std::span<const double> q, std::span<const double> ref, double k_p) {
  return std::exp(-k_p * pose_distance(q, ref));
}

Termination imitation_terminate(std::span<const double> q, std::span<const double> ref, double d_max) {
  return pose_distance(q, ref) > d_max ? Termination::terminated(TerminationReason::EarlyTermination)
                                       : Termination::running();
}

ImitationTask::ImitationTask(std::shared_ptr<const ReferenceMotion> motion, ImitationParams p)
    : motion_(std::move(motion)), params_(p) {
  if (!motion_ || motion_->frames.empty()) throw Error(ErrorCode::EmptyMotion, "imitation needs a motion");
  if (!(params_.d_max > 0) || !(params_.k_p > 0)) throw Error(ErrorCode::InvalidValue, "k_p and d_max must be positive");
}

std::string ImitationTask::name() const { return "imitation:" + motion_->name; }

std::vector<double> ImitationTask::actuated_pose(const EnvInstance& inst) {
  const auto& actuators = inst.spec->model().actuators;
  std::vector<double> q(actuators.size());
  for (size_t i = 0; i < actuators.size(); ++i) q[i] = inst.scene.joint_pos[actuators[i].joint];
  return q;
}

double ImitationTask::reward(const EnvInstance& inst, const RewardTerms&, double) {
  last_reward_ = imitation_reward(actuated_pose(inst), sample_reference(*motion_, inst.phase_clock).q, params_.k_p);
  return last_reward_;
}

Termination ImitationTask::terminate(const EnvInstance& inst, Termination base) {
  if (base.status != StepStatus::Running) return base;
  return imitation_terminate(actuated_pose(inst), sample_reference(*motion_, inst.phase_clock).q, params_.d_max);
}

void ImitationTask::observe(const EnvInstance& inst, std::vector<double>& obs) const {
  const double d = motion_->duration();
  const double phi = d > 0 ? inst.phase_clock / d : 0.0;
  obs.push_back(std::sin(2.0 * M_PI * phi));
  obs.push_back(std::cos(2.0 * M_PI * phi));
}

}  // namespace ragmark

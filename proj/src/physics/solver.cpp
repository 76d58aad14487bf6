#include <algorithm>
#include <cmath>
#include <limits>

#include "ragmark/error.hpp"
#include "ragmark/physics.hpp"

namespace ragmark {
namespace {

constexpr int kJointRows = 6;
constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kContactSlop = 0.002;
constexpr double kLimitMargin = 0.05;
constexpr int kPositionIterations = 3;

Mat3 skew(const Vec3& v) {
  Mat3 m;
  m << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
  return m;
}

// Working velocities and inverse mass properties; slot n is the static world.
struct Bodies {
  std::vector<Vec3> v, w;
  std::vector<double> im;
  std::vector<Mat3> iI;
};

template <int D>
struct Block {
  using RowMat = Eigen::Matrix<double, D, 3>;
  using Vec = Eigen::Matrix<double, D, 1>;
  int a = 0, b = 0;
  RowMat la, aa, lb, ab;
  Eigen::Matrix<double, D, D> k_inv;
  Vec target;
  Vec acc;
  double lo = -kInf, hi = kInf;  // scalar rows only
  double* warm = nullptr;        // D consecutive slots

  void prepare(const Bodies& B) {
    Eigen::Matrix<double, D, D> k = B.im[a] * la * la.transpose() + aa * B.iI[a] * aa.transpose() +
                                    B.im[b] * lb * lb.transpose() + ab * B.iI[b] * ab.transpose();
    if constexpr (D == 1) {
      k_inv(0, 0) = k(0, 0) > 1e-12 ? 1.0 / k(0, 0) : 0.0;
    } else {
      k_inv = k.inverse();
    }
  }

  Vec velocity(const Bodies& B) const { return la * B.v[a] + aa * B.w[a] + lb * B.v[b] + ab * B.w[b]; }

  void apply(Bodies& B, const Vec& impulse) const {
    B.v[a] += B.im[a] * (la.transpose() * impulse);
    B.w[a] += B.iI[a] * (aa.transpose() * impulse);
    B.v[b] += B.im[b] * (lb.transpose() * impulse);
    B.w[b] += B.iI[b] * (ab.transpose() * impulse);
  }

  void solve(Bodies& B) {
    Vec delta = k_inv * (target - velocity(B));
    if constexpr (D == 1) {
      double old = acc(0);
      acc(0) = std::clamp(old + delta(0), lo, hi);
      delta(0) = acc(0) - old;
    } else {
      acc += delta;
    }
    apply(B, delta);
  }
};

using Row = Block<1>;

struct ContactRows {
  Row normal, t1, t2;
  double mu = 0;
  std::uint64_t key = 0;
};

// Scratch reused across steps by the stepping thread.
struct Scratch {
  Bodies bodies;
  std::vector<Block<3>> blocks3;
  std::vector<Block<2>> blocks2;
  std::vector<Row> rows;
  std::vector<ContactRows> contacts;
  std::vector<double> limit_warm;
};

thread_local Scratch scratch;

std::uint64_t contact_key(const Contact& c) {
  auto u = [](int x) { return static_cast<std::uint64_t>(x + 1) & 0xffff; };
  return (u(c.body) << 48) | (u(c.geom) << 32) | (u(c.other_body) << 16) | (u(c.other_geom) << 8) |
         (static_cast<std::uint64_t>(c.feature) & 0xff);
}

Eigen::Matrix<double, 1, 3> row(const Vec3& v) { return v.transpose(); }


void rotate(Quat& q, const Vec3& theta) {
  Quat spin(0.0, theta.x(), theta.y(), theta.z());
  Quat dq = spin * q;
  q.coeffs() += 0.5 * dq.coeffs();
  q.normalize();
}

// Nonlinear Gauss-Seidel pass on hinge anchors and axes after integration,
// removing the drift left by the velocity-level solve.
void correct_hinges(SceneState& s, const Articulation& art, const Bodies& B, int world) {
  static const RigidState kGround;
  for (int pass = 0; pass < kPositionIterations; ++pass) {
    for (const auto& j : art.joints()) {
      if (j.type != JointType::Hinge) continue;
      const int a = j.parent == kWorld ? world : j.parent;
      const int b = j.child;
      RigidState& cb = s.bodies[b];
      RigidState scratch_a = kGround;
      RigidState& ca = j.parent == kWorld ? scratch_a : s.bodies[j.parent];
      Vec3 ra = ca.quat * j.anchor_parent;
      Vec3 rb = cb.quat * j.anchor_child;
      Vec3 err = (cb.pos + rb) - (ca.pos + ra);
      Mat3 sa = skew(ra), sb = skew(rb);
      Mat3 k = (B.im[a] + B.im[b]) * Mat3::Identity() - sa * B.iI[a] * sa - sb * B.iI[b] * sb;
      Vec3 p = -k.inverse() * err;
      cb.pos += B.im[b] * p;
      rotate(cb.quat, B.iI[b] * rb.cross(p));
      if (j.parent != kWorld) {
        ca.pos -= B.im[a] * p;
        rotate(ca.quat, -(B.iI[a] * ra.cross(p)));
      }

      Vec3 axis = cb.quat * j.axis_child;
      Vec3 b1 = ca.quat * j.perp1_parent, b2 = ca.quat * j.perp2_parent;
      Eigen::Matrix<double, 2, 3> u;
      u.row(0) = axis.cross(b1).transpose();
      u.row(1) = axis.cross(b2).transpose();
      Eigen::Matrix2d k2 = u * (B.iI[a] + B.iI[b]) * u.transpose();
      Eigen::Vector2d c(b1.dot(axis), b2.dot(axis));
      Eigen::Vector2d lambda = -k2.inverse() * c;
      Vec3 impulse = u.transpose() * lambda;
      rotate(cb.quat, B.iI[b] * impulse);
      if (j.parent != kWorld) rotate(ca.quat, -(B.iI[a] * impulse));
    }
    for (const auto& sc : art.shortcuts()) {
      const int a = sc.parent == kWorld ? world : sc.parent;
      RigidState& cb = s.bodies[sc.child];
      RigidState scratch_a = kGround;
      RigidState& ca = sc.parent == kWorld ? scratch_a : s.bodies[sc.parent];
      Vec3 ra = ca.quat * sc.anchor_parent;
      Vec3 rb = cb.quat * sc.anchor_child;
      Vec3 err = (cb.pos + rb) - (ca.pos + ra);
      Mat3 sa = skew(ra), sb = skew(rb);
      Mat3 k = (B.im[a] + B.im[sc.child]) * Mat3::Identity() - sa * B.iI[a] * sa - sb * B.iI[sc.child] * sb;
      Vec3 p = -k.inverse() * err;
      cb.pos += B.im[sc.child] * p;
      rotate(cb.quat, B.iI[sc.child] * rb.cross(p));
      if (sc.parent != kWorld) {
        ca.pos -= B.im[a] * p;
        rotate(ca.quat, -(B.iI[a] * ra.cross(p)));
      }
    }
  }
}

}  // namespace

void step_physics(SceneState& s, const Articulation& art, std::span<const double> torques,
                  const PhysicsConfig& config, const Terrain& terrain) {
  const int n = art.body_count();
  const int world = n;
  const double dt = config.dt;
  const double beta_dt = config.baumgarte_beta / dt;
  const auto& joints = art.joints();
  const auto& model = art.model();
  if (static_cast<int>(torques.size()) != art.actuator_count()) {
    throw Error(ErrorCode::DimensionMismatch, "torque vector length " + std::to_string(torques.size()) +
                                                  " != actuator count " + std::to_string(art.actuator_count()));
  }
  for (double t : torques) {
    if (!std::isfinite(t)) throw Error(ErrorCode::NonFiniteAction, "non-finite torque");
  }
  if (s.warm.joints.size() != art.warm_slots()) s.warm.joints.assign(art.warm_slots(), 0.0);

  Scratch& S = scratch;
  Bodies& B = S.bodies;
  B.v.resize(n + 1);
  B.w.resize(n + 1);
  B.im.resize(n + 1);
  B.iI.resize(n + 1);
  B.v[world].setZero();
  B.w[world].setZero();
  B.im[world] = 0.0;
  B.iI[world].setZero();

  // (1) external forces: gravity and motor torques
  for (int i = 0; i < n; ++i) {
    const RigidState& b = s.bodies[i];
    Mat3 R = b.quat.toRotationMatrix();
    B.im[i] = art.inv_mass(i);
    B.iI[i] = R * art.inv_inertia(i).asDiagonal() * R.transpose();
    B.v[i] = b.lin_vel + config.gravity * dt;
    B.w[i] = b.ang_vel;
  }

  auto slot = [world](int body) { return body == kWorld ? world : body; };
  auto parent_pose = [&](const Articulation::Joint& j, Vec3& pos, Quat& q) {
    if (j.parent == kWorld) {
      pos.setZero();
      q = Quat::Identity();
    } else {
      pos = s.bodies[j.parent].pos;
      q = s.bodies[j.parent].quat;
    }
  };

  for (size_t ji = 0; ji < joints.size(); ++ji) {
    const auto& j = joints[ji];
    if (j.actuator < 0) continue;
    const double tau = torques[j.actuator];
    if (tau == 0.0) continue;
    Vec3 pp;
    Quat pq;
    parent_pose(j, pp, pq);
    Vec3 axis = pq * j.axis_parent;
    const int a = slot(j.parent), b = j.child;
    if (j.type == JointType::Hinge) {
      const int da = slot(j.drive_parent), db = j.drive_child;
      B.w[db] += B.iI[db] * (axis * tau * dt);
      B.w[da] -= B.iI[da] * (axis * tau * dt);
    } else {
      auto [ap, ac] = joint_anchors(s, art, static_cast<int>(ji));
      Vec3 f = axis * tau * dt;
      B.v[b] += B.im[b] * f;
      B.w[b] += B.iI[b] * (ac - s.bodies[b].pos).cross(f);
      B.v[a] -= B.im[a] * f;
      if (j.parent != kWorld) B.w[a] -= B.iI[a] * (ac - pp).cross(f);
    }
  }

  // (2) constraint setup
  S.blocks3.clear();
  S.blocks2.clear();
  S.rows.clear();
  S.contacts.clear();
  S.limit_warm.clear();

  for (size_t ji = 0; ji < joints.size(); ++ji) {
    const auto& j = joints[ji];
    const int a = slot(j.parent), b = j.child;
    double* warm = &s.warm.joints[ji * kJointRows];
    Vec3 pp;
    Quat pq;
    parent_pose(j, pp, pq);
    const RigidState& cb = s.bodies[b];
    Vec3 anchor_a = pp + pq * j.anchor_parent;
    Vec3 anchor_b = cb.pos + cb.quat * j.anchor_child;
    Vec3 ra = anchor_a - pp;
    Vec3 rb = anchor_b - cb.pos;
    Vec3 axis_a = pq * j.axis_parent;
    Vec3 axis_b = cb.quat * j.axis_child;

    Row limit_row;
    limit_row.a = a;
    limit_row.b = b;

    if (j.type == JointType::Hinge) {
      Block<3> p;
      p.a = a;
      p.b = b;
      p.la = -Mat3::Identity();
      p.aa = skew(ra);
      p.lb = Mat3::Identity();
      p.ab = -skew(rb);
      p.target = -beta_dt * (anchor_b - anchor_a);
      p.warm = warm;
      S.blocks3.push_back(p);

      Block<2> r;
      r.a = a;
      r.b = b;
      Vec3 b1 = pq * j.perp1_parent, b2 = pq * j.perp2_parent;
      Vec3 u1 = axis_b.cross(b1), u2 = axis_b.cross(b2);
      r.la.setZero();
      r.lb.setZero();
      r.ab.row(0) = u1.transpose();
      r.ab.row(1) = u2.transpose();
      r.aa = -r.ab;
      r.target << -beta_dt * b1.dot(axis_b), -beta_dt * b2.dot(axis_b);
      r.warm = warm + 3;
      S.blocks2.push_back(r);

      limit_row.a = slot(j.drive_parent);
      limit_row.b = j.drive_child;
      limit_row.la.setZero();
      limit_row.lb.setZero();
      limit_row.ab = row(axis_a);
      limit_row.aa = -row(axis_a);
    } else {
      Vec3 d = anchor_b - anchor_a;
      Block<2> l;
      l.a = a;
      l.b = b;
      Vec3 n1 = pq * j.perp1_parent, n2 = pq * j.perp2_parent;
      l.lb.row(0) = n1.transpose();
      l.lb.row(1) = n2.transpose();
      l.la = -l.lb;
      l.ab.row(0) = rb.cross(n1).transpose();
      l.ab.row(1) = rb.cross(n2).transpose();
      l.aa.row(0) = -(ra + d).cross(n1).transpose();
      l.aa.row(1) = -(ra + d).cross(n2).transpose();
      l.target << -beta_dt * d.dot(n1), -beta_dt * d.dot(n2);
      l.warm = warm;
      S.blocks2.push_back(l);

      Block<3> r;
      r.a = a;
      r.b = b;
      r.la.setZero();
      r.lb.setZero();
      r.ab = Mat3::Identity();
      r.aa = -Mat3::Identity();
      Quat err = cb.quat * (pq * j.rest).conjugate();
      if (err.w() < 0) err.coeffs() *= -1.0;
      r.target = -beta_dt * 2.0 * err.vec();
      r.warm = warm + 2;
      S.blocks3.push_back(r);

      limit_row.lb = row(axis_a);
      limit_row.la = -row(axis_a);
      limit_row.ab = row(rb.cross(axis_a));
      limit_row.aa = -row((ra + d).cross(axis_a));
    }

    // implicit joint damping, applied once before the iterations
    if (j.damping > 0) {
      Row damp = limit_row;
      damp.prepare(B);
      if (damp.k_inv(0, 0) > 0) {
        double k = 1.0 / damp.k_inv(0, 0);
        double qdot = damp.velocity(B)(0);
        double impulse = -qdot * j.damping * dt / (1.0 + k * j.damping * dt);
        damp.apply(B, Eigen::Matrix<double, 1, 1>(impulse));
      }
    }

    // limits: speculative within a margin of the bound
    const double q = s.joint_pos.empty() ? 0.0 : s.joint_pos[ji];
    const double qdot = s.joint_vel.empty() ? 0.0 : s.joint_vel[ji];
    const double reach = kLimitMargin + std::abs(qdot) * dt;
    double* limit_warm = warm + 5;
    bool limit_active = false;
    if (q - j.lo < reach) {
      double c = q - j.lo;
      limit_row.target(0) = c > 0 ? -c / dt : -beta_dt * c;
      limit_row.lo = 0.0;
      limit_row.hi = kInf;
      limit_active = true;
    } else if (j.hi - q < reach) {
      double c = j.hi - q;
      limit_row.la = -limit_row.la;
      limit_row.aa = -limit_row.aa;
      limit_row.lb = -limit_row.lb;
      limit_row.ab = -limit_row.ab;
      limit_row.target(0) = c > 0 ? -c / dt : -beta_dt * c;
      limit_row.lo = 0.0;
      limit_row.hi = kInf;
      limit_active = true;
    }
    if (limit_active) {
      limit_row.warm = limit_warm;
      S.rows.push_back(limit_row);
    } else {
      *limit_warm = 0.0;
    }
  }

  const auto& shortcuts = art.shortcuts();
  for (size_t k = 0; k < shortcuts.size(); ++k) {
    const auto& sc = shortcuts[k];
    double* warm = &s.warm.joints[joints.size() * kJointRows + k * 4];
    const int a = slot(sc.parent), b = sc.child;
    const RigidState& cb = s.bodies[b];
    Vec3 pp = sc.parent == kWorld ? Vec3::Zero() : Vec3(s.bodies[sc.parent].pos);
    Quat pq = sc.parent == kWorld ? Quat::Identity() : s.bodies[sc.parent].quat;
    Vec3 ra = pq * sc.anchor_parent;
    Vec3 rb = cb.quat * sc.anchor_child;
    Block<3> p;
    p.a = a;
    p.b = b;
    p.la = -Mat3::Identity();
    p.aa = skew(ra);
    p.lb = Mat3::Identity();
    p.ab = -skew(rb);
    p.target = -beta_dt * ((cb.pos + rb) - (pp + ra));
    p.warm = warm;
    S.blocks3.push_back(p);
    if (sc.universal) {
      Vec3 a1 = pq * sc.axis_parent, a2 = cb.quat * sc.axis_child;
      Row r;
      r.a = a;
      r.b = b;
      r.la.setZero();
      r.lb.setZero();
      r.ab = row(a2.cross(a1));
      r.aa = row(a1.cross(a2));
      r.target(0) = -beta_dt * (a1.dot(a2) - sc.rest_dot);
      r.warm = warm + 3;
      S.rows.push_back(r);
    }
  }

  // contacts from the previous step's detection pass
  for (const Contact& c : s.contacts) {
    ContactRows cr;
    cr.key = contact_key(c);
    const int b = c.body;
    const int a = c.other_body < 0 ? world : c.other_body;
    Vec3 rb = c.point - s.bodies[b].pos;
    Vec3 ra = c.other_body < 0 ? Vec3::Zero() : Vec3(c.point - s.bodies[c.other_body].pos);
    const GeomSpec& g = model.bodies[b].geoms[c.geom];
    double other_friction = c.other_body < 0 ? config.friction_default
                                             : model.bodies[c.other_body].geoms[c.other_geom].friction;
    cr.mu = std::sqrt(g.friction * other_friction);
    Vec3 n = c.normal;
    Vec3 ref = std::abs(n.x()) < 0.9 ? Vec3::UnitX() : Vec3::UnitZ();
    Vec3 t1 = (ref - n * n.dot(ref)).normalized();
    Vec3 t2 = n.cross(t1);
    auto fill = [&](Row& r, const Vec3& dir) {
      r.a = a;
      r.b = b;
      r.lb = row(dir);
      r.ab = row(rb.cross(dir));
      r.la = -row(dir);
      r.aa = c.other_body < 0 ? Eigen::Matrix<double, 1, 3>::Zero() : Eigen::Matrix<double, 1, 3>(-row(ra.cross(dir)));
      r.target.setZero();
      r.acc.setZero();
    };
    fill(cr.normal, n);
    fill(cr.t1, t1);
    fill(cr.t2, t2);
    double d = c.distance;
    cr.normal.target(0) = d > 0 ? -d / dt : beta_dt * std::max(0.0, -d - kContactSlop);
    cr.normal.lo = 0.0;
    cr.normal.hi = kInf;
    S.contacts.push_back(cr);
  }

  for (auto& blk : S.blocks3) {
    blk.prepare(B);
    for (int k = 0; k < 3; ++k) blk.acc(k) = config.warm_start ? blk.warm[k] : 0.0;
    blk.apply(B, blk.acc);
  }
  for (auto& blk : S.blocks2) {
    blk.prepare(B);
    for (int k = 0; k < 2; ++k) blk.acc(k) = config.warm_start ? blk.warm[k] : 0.0;
    blk.apply(B, blk.acc);
  }
  for (auto& r : S.rows) {
    r.prepare(B);
    r.acc(0) = config.warm_start ? std::clamp(*r.warm, r.lo, r.hi) : 0.0;
    r.apply(B, r.acc);
  }
  const auto& cache = s.warm.contacts;
  for (auto& cr : S.contacts) {
    cr.normal.prepare(B);
    cr.t1.prepare(B);
    cr.t2.prepare(B);
    if (!config.warm_start) continue;
    auto it = std::lower_bound(cache.begin(), cache.end(), cr.key,
                               [](const WarmStart::ContactImpulse& ci, std::uint64_t k) { return ci.key < k; });
    if (it != cache.end() && it->key == cr.key) {
      cr.normal.acc(0) = it->normal;
      cr.t1.acc(0) = it->tangent1;
      cr.t2.acc(0) = it->tangent2;
      cr.normal.apply(B, cr.normal.acc);
      cr.t1.apply(B, cr.t1.acc);
      cr.t2.apply(B, cr.t2.acc);
    }
  }

  for (int it = 0; it < config.solver_iterations; ++it) {
    for (auto& blk : S.blocks3) blk.solve(B);
    for (auto& blk : S.blocks2) blk.solve(B);
    for (auto& r : S.rows) r.solve(B);
    for (auto& cr : S.contacts) {
      double limit = cr.mu * cr.normal.acc(0);
      cr.t1.lo = cr.t2.lo = -limit;
      cr.t1.hi = cr.t2.hi = limit;
      cr.t1.solve(B);
      cr.t2.solve(B);
      cr.normal.solve(B);
    }
  }

  for (auto& blk : S.blocks3) {
    for (int k = 0; k < 3; ++k) blk.warm[k] = blk.acc(k);
  }
  for (auto& blk : S.blocks2) {
    for (int k = 0; k < 2; ++k) blk.warm[k] = blk.acc(k);
  }
  for (auto& r : S.rows) *r.warm = r.acc(0);
  s.warm.contacts.clear();
  for (const auto& cr : S.contacts) {
    s.warm.contacts.push_back({cr.key, cr.normal.acc(0), cr.t1.acc(0), cr.t2.acc(0)});
  }
  std::sort(s.warm.contacts.begin(), s.warm.contacts.end(),
            [](const auto& x, const auto& y) { return x.key < y.key; });

  // (3) integrate positions from the solved velocities
  for (int i = 0; i < n; ++i) {
    RigidState& b = s.bodies[i];
    b.lin_vel = B.v[i];
    b.ang_vel = B.w[i];
    if (model.planar) {
      b.lin_vel.z() = 0.0;
      b.ang_vel.x() = 0.0;
      b.ang_vel.y() = 0.0;
    }
    b.pos += b.lin_vel * dt;
    Quat spin(0.0, b.ang_vel.x(), b.ang_vel.y(), b.ang_vel.z());
    Quat dq = spin * b.quat;
    b.quat.coeffs() += 0.5 * dt * dq.coeffs();
    b.quat.normalize();
  }
  correct_hinges(s, art, B, world);
  if (model.planar) project_planar(s);

  // (4) derived state
  s.time += dt;
  s.step_count += 1;
  for (const auto& b : s.bodies) {
    if (!b.pos.allFinite() || !b.quat.coeffs().allFinite() || !b.lin_vel.allFinite() || !b.ang_vel.allFinite()) {
      throw Error(ErrorCode::NonFiniteState, "non-finite body state at step " + std::to_string(s.step_count));
    }
  }
  update_joint_state(s, art);
  s.contacts = find_contacts(s, art, terrain, kContactSolverMargin);
}

}  // namespace ragmark

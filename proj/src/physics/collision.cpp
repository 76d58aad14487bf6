#include <algorithm>
#include <cmath>

#include "ragmark/error.hpp"
#include "ragmark/physics.hpp"

namespace ragmark {

Terrain Terrain::flat() { return Terrain{}; }

Terrain Terrain::heightfield(std::vector<double> heights, double spacing, double x0) {
  if (heights.empty()) throw Error(ErrorCode::InvalidValue, "heightfield needs at least one sample");
  if (!(spacing > 0) || !std::isfinite(spacing)) throw Error(ErrorCode::InvalidValue, "heightfield spacing must be > 0");
  for (double h : heights) {
    if (!std::isfinite(h)) throw Error(ErrorCode::InvalidValue, "heightfield heights must be finite");
  }
  Terrain t;
  t.kind_ = Kind::Heightfield;
  t.heights_ = std::move(heights);
  t.spacing_ = spacing;
  t.x0_ = x0;
  return t;
}

double Terrain::height(double x) const {
  if (kind_ == Kind::FlatPlane) return 0.0;
  double u = (x - x0_) / spacing_;
  const double last = static_cast<double>(heights_.size() - 1);
  if (u <= 0.0) return heights_.front();
  if (u >= last) return heights_.back();
  auto i = static_cast<size_t>(u);
  double f = u - static_cast<double>(i);
  return heights_[i] + f * (heights_[i + 1] - heights_[i]);
}

double Terrain::slope(double x) const {
  if (kind_ == Kind::FlatPlane || heights_.size() < 2) return 0.0;
  double u = (x - x0_) / spacing_;
  const double last = static_cast<double>(heights_.size() - 1);
  if (u <= 0.0 || u >= last) return 0.0;
  auto i = static_cast<size_t>(u);
  return (heights_[i + 1] - heights_[i]) / spacing_;
}

double query_height(const Terrain& terrain, double x) { return terrain.height(x); }

namespace {

bool touches_terrain(const GeomSpec& g) { return (g.contype & 1) != 0 || (g.conaffinity & 1) != 0; }

void point_vs_terrain(const Terrain& terrain, const Vec3& center, double radius, int body, int geom,
                      int feature, double margin, ContactSet& out) {
  const double h = terrain.height(center.x());
  const double s = terrain.slope(center.x());
  Vec3 n(-s, 1.0, 0.0);
  n.normalize();
  const double dist = (center.y() - h) * n.y() - radius;
  if (dist > margin) return;
  Contact c;
  c.body = body;
  c.geom = geom;
  c.feature = feature;
  c.normal = n;
  c.distance = dist;
  c.depth = std::max(0.0, -dist);
  c.point = center - n * radius;
  out.push_back(c);
}

struct Segment {
  Vec3 a, b;
  double radius;
};

Segment world_segment(const RigidState& s, const GeomSpec& g) {
  Vec3 center = s.pos + s.quat * Vec3(g.local_pos[0], g.local_pos[1], g.local_pos[2]);
  if (g.shape == GeomShape::Sphere) return {center, center, g.size[0]};
  Quat gq = s.quat * Quat(g.local_quat[0], g.local_quat[1], g.local_quat[2], g.local_quat[3]);
  Vec3 half = gq * Vec3(0, 0, g.size[1]);
  return {center - half, center + half, g.size[0]};
}

// Closest points between segments p1-q1 and p2-q2 (Ericson, Real-Time Collision Detection 5.1.9).
void closest_points(const Vec3& p1, const Vec3& q1, const Vec3& p2, const Vec3& q2, Vec3& c1, Vec3& c2) {
  Vec3 d1 = q1 - p1, d2 = q2 - p2, r = p1 - p2;
  double a = d1.squaredNorm(), e = d2.squaredNorm(), f = d2.dot(r);
  double s = 0, t = 0;
  constexpr double eps = 1e-12;
  if (a <= eps && e <= eps) {
    c1 = p1;
    c2 = p2;
    return;
  }
  if (a <= eps) {
    t = std::clamp(f / e, 0.0, 1.0);
  } else {
    double c = d1.dot(r);
    if (e <= eps) {
      s = std::clamp(-c / a, 0.0, 1.0);
    } else {
      double b = d1.dot(d2), denom = a * e - b * b;
      s = denom > eps ? std::clamp((b * f - c * e) / denom, 0.0, 1.0) : 0.0;
      t = (b * s + f) / e;
      if (t < 0) {
        t = 0;
        s = std::clamp(-c / a, 0.0, 1.0);
      } else if (t > 1) {
        t = 1;
        s = std::clamp((b - c) / a, 0.0, 1.0);
      }
    }
  }
  c1 = p1 + d1 * s;
  c2 = p2 + d2 * t;
}

}  // namespace

ContactSet find_contacts(const SceneState& state, const Articulation& art, const Terrain& terrain,
                         double margin) {
  ContactSet out;
  const auto& model = art.model();
  for (int bi = 0; bi < art.body_count(); ++bi) {
    const RigidState& s = state.bodies[bi];
    const auto& geoms = model.bodies[bi].geoms;
    for (int gi = 0; gi < static_cast<int>(geoms.size()); ++gi) {
      const GeomSpec& g = geoms[gi];
      if (!touches_terrain(g)) continue;
      switch (g.shape) {
        case GeomShape::Sphere:
        case GeomShape::Capsule: {
          Segment seg = world_segment(s, g);
          point_vs_terrain(terrain, seg.a, seg.radius, bi, gi, 0, margin, out);
          if (g.shape == GeomShape::Capsule) point_vs_terrain(terrain, seg.b, seg.radius, bi, gi, 1, margin, out);
          break;
        }
        case GeomShape::Box: {
          Vec3 center = s.pos + s.quat * Vec3(g.local_pos[0], g.local_pos[1], g.local_pos[2]);
          Quat gq = s.quat * Quat(g.local_quat[0], g.local_quat[1], g.local_quat[2], g.local_quat[3]);
          for (int k = 0; k < 8; ++k) {
            Vec3 corner((k & 1 ? 1 : -1) * g.size[0], (k & 2 ? 1 : -1) * g.size[1], (k & 4 ? 1 : -1) * g.size[2]);
            point_vs_terrain(terrain, center + gq * corner, 0.0, bi, gi, k, margin, out);
          }
          break;
        }
        case GeomShape::Plane:
          break;
      }
    }
  }

  for (const auto& [ba, bb] : art.self_pairs()) {
    const auto& ga_list = model.bodies[ba].geoms;
    const auto& gb_list = model.bodies[bb].geoms;
    for (int ga = 0; ga < static_cast<int>(ga_list.size()); ++ga) {
      const GeomSpec& g1 = ga_list[ga];
      if (g1.shape != GeomShape::Sphere && g1.shape != GeomShape::Capsule) continue;
      for (int gb = 0; gb < static_cast<int>(gb_list.size()); ++gb) {
        const GeomSpec& g2 = gb_list[gb];
        if (g2.shape != GeomShape::Sphere && g2.shape != GeomShape::Capsule) continue;
        if ((g1.contype & g2.conaffinity) == 0 && (g2.contype & g1.conaffinity) == 0) continue;
        Segment s1 = world_segment(state.bodies[ba], g1);
        Segment s2 = world_segment(state.bodies[bb], g2);
        Vec3 c1, c2;
        closest_points(s1.a, s1.b, s2.a, s2.b, c1, c2);
        Vec3 d = c1 - c2;
        double len = d.norm();
        double dist = len - s1.radius - s2.radius;
        if (dist > margin || len < 1e-9) continue;
        Contact c;
        c.body = ba;
        c.geom = ga;
        c.other_body = bb;
        c.other_geom = gb;
        c.normal = d / len;
        c.distance = dist;
        c.depth = std::max(0.0, -dist);
        c.point = c2 + c.normal * (s2.radius + 0.5 * dist);
        out.push_back(c);
      }
    }
  }
  return out;
}

}  // namespace ragmark

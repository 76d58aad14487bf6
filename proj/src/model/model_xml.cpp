#include <expat.h>

#include <Eigen/Geometry>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <memory>
#include <numbers>
#include <sstream>

#include "ragmark/error.hpp"
#include "ragmark/model.hpp"

namespace ragmark {
namespace {

constexpr double kDefaultDensity = 1000.0;
constexpr double kDegToRad = std::numbers::pi / 180.0;

struct Element {
  std::string tag;
  std::map<std::string, std::string> attrs;
  std::vector<std::unique_ptr<Element>> children;
  long line = 0;
};

struct SaxState {
  std::unique_ptr<Element> root;
  std::vector<Element*> stack;
  XML_Parser parser = nullptr;
};

void on_start(void* user, const XML_Char* name, const XML_Char** atts) {
  auto* st = static_cast<SaxState*>(user);
  auto el = std::make_unique<Element>();
  el->tag = name;
  el->line = static_cast<long>(XML_GetCurrentLineNumber(st->parser));
  for (int i = 0; atts[i] != nullptr; i += 2) el->attrs[atts[i]] = atts[i + 1];
  Element* raw = el.get();
  if (st->stack.empty()) {
    st->root = std::move(el);
  } else {
    st->stack.back()->children.push_back(std::move(el));
  }
  st->stack.push_back(raw);
}

void on_end(void* user, const XML_Char*) { static_cast<SaxState*>(user)->stack.pop_back(); }

std::unique_ptr<Element> read_tree(std::string_view xml) {
  SaxState st;
  std::unique_ptr<XML_ParserStruct, decltype(&XML_ParserFree)> parser(XML_ParserCreate("UTF-8"),
                                                                       &XML_ParserFree);
  st.parser = parser.get();
  XML_SetUserData(parser.get(), &st);
  XML_SetElementHandler(parser.get(), on_start, on_end);
  if (XML_Parse(parser.get(), xml.data(), static_cast<int>(xml.size()), XML_TRUE) ==
      XML_STATUS_ERROR) {
    std::ostringstream msg;
    msg << "line " << XML_GetCurrentLineNumber(parser.get()) << ": "
        << XML_ErrorString(XML_GetErrorCode(parser.get()));
    throw Error(ErrorCode::MalformedXml, msg.str());
  }
  if (!st.root) throw Error(ErrorCode::MalformedXml, "empty document");
  return std::move(st.root);
}

[[noreturn]] void fail(ErrorCode code, const Element& el, const std::string& what) {
  throw Error(code, "<" + el.tag + "> line " + std::to_string(el.line) + ": " + what);
}

void check_attrs(const Element& el, std::initializer_list<std::string_view> allowed) {
  for (const auto& [key, _] : el.attrs) {
    bool ok = false;
    for (auto a : allowed) ok = ok || key == a;
    if (!ok) fail(ErrorCode::UnknownTag, el, "unsupported attribute '" + key + "'");
  }
}

std::vector<double> parse_numbers(const Element& el, const std::string& key) {
  const std::string& text = el.attrs.at(key);
  std::vector<double> out;
  const char* p = text.data();
  const char* end = p + text.size();
  while (p < end) {
    while (p < end && std::isspace(static_cast<unsigned char>(*p))) ++p;
    if (p == end) break;
    double v = 0;
    auto [next, ec] = std::from_chars(p, end, v);
    if (ec != std::errc() || !std::isfinite(v)) {
      fail(ErrorCode::InvalidValue, el, "attribute '" + key + "' is not a list of finite numbers");
    }
    out.push_back(v);
    p = next;
  }
  return out;
}

std::optional<std::vector<double>> numbers_if(const Element& el, const std::string& key,
                                              size_t expected) {
  if (!el.attrs.count(key)) return std::nullopt;
  auto v = parse_numbers(el, key);
  if (expected != 0 && v.size() != expected) {
    fail(ErrorCode::InvalidValue, el,
         "attribute '" + key + "' expects " + std::to_string(expected) + " numbers");
  }
  return v;
}

Vec3d vec3_or(const Element& el, const std::string& key, Vec3d fallback) {
  auto v = numbers_if(el, key, 3);
  return v ? Vec3d{(*v)[0], (*v)[1], (*v)[2]} : fallback;
}

Quat4d quat_or_identity(const Element& el) {
  auto v = numbers_if(el, "quat", 4);
  if (!v) return {1, 0, 0, 0};
  Quat4d q{(*v)[0], (*v)[1], (*v)[2], (*v)[3]};
  double n = std::sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]);
  if (std::abs(n - 1.0) > 1e-9) fail(ErrorCode::InvalidValue, el, "quaternion is not unit length");
  return q;
}

double number_or(const Element& el, const std::string& key, double fallback) {
  auto v = numbers_if(el, key, 1);
  return v ? (*v)[0] : fallback;
}

int int_or(const Element& el, const std::string& key, int fallback) {
  auto v = numbers_if(el, key, 1);
  if (!v) return fallback;
  if ((*v)[0] != std::floor((*v)[0]) || (*v)[0] < 0) {
    fail(ErrorCode::InvalidValue, el, "attribute '" + key + "' must be a non-negative integer");
  }
  return static_cast<int>((*v)[0]);
}

bool bool_or(const Element& el, const std::string& key, bool fallback) {
  auto it = el.attrs.find(key);
  if (it == el.attrs.end()) return fallback;
  if (it->second == "true") return true;
  if (it->second == "false") return false;
  fail(ErrorCode::InvalidValue, el, "attribute '" + key + "' must be true or false");
}

Eigen::Quaterniond to_eigen(const Quat4d& q) { return {q[0], q[1], q[2], q[3]}; }
Quat4d from_eigen(const Eigen::Quaterniond& q) { return {q.w(), q.x(), q.y(), q.z()}; }
Eigen::Vector3d to_eigen(const Vec3d& v) { return {v[0], v[1], v[2]}; }

Vec3d unit_axis(const Element& el, const std::string& key, Vec3d fallback) {
  Vec3d a = vec3_or(el, key, fallback);
  double n = std::sqrt(a[0] * a[0] + a[1] * a[1] + a[2] * a[2]);
  if (n < 1e-12) fail(ErrorCode::InvalidValue, el, "zero-length joint axis");
  return {a[0] / n, a[1] / n, a[2] / n};
}

// Mass and diagonal inertia about the body origin, from geoms at the given density.
void accumulate_geom_mass(const GeomSpec& g, double density, double& mass, Eigen::Matrix3d& inertia) {
  double m = 0;
  Eigen::Vector3d local = Eigen::Vector3d::Zero();
  switch (g.shape) {
    case GeomShape::Sphere: {
      double r = g.size[0];
      m = density * 4.0 / 3.0 * std::numbers::pi * r * r * r;
      local.setConstant(0.4 * m * r * r);
      break;
    }
    case GeomShape::Capsule: {
      double r = g.size[0], h = g.size[1];
      double mc = density * std::numbers::pi * r * r * 2.0 * h;
      double ms = density * 4.0 / 3.0 * std::numbers::pi * r * r * r;
      m = mc + ms;
      double axial = mc * r * r / 2.0 + ms * 0.4 * r * r;
      double l = 2.0 * h;
      double trans = mc * (r * r / 4.0 + l * l / 12.0) +
                     ms * (0.4 * r * r + h * h + 3.0 * h * r / 4.0);
      local = {trans, trans, axial};
      break;
    }
    case GeomShape::Box: {
      double a = 2 * g.size[0], b = 2 * g.size[1], c = 2 * g.size[2];
      m = density * a * b * c;
      local = {m * (b * b + c * c) / 12.0, m * (a * a + c * c) / 12.0, m * (a * a + b * b) / 12.0};
      break;
    }
    case GeomShape::Plane:
      return;
  }
  Eigen::Matrix3d R = to_eigen(g.local_quat).toRotationMatrix();
  Eigen::Vector3d d = to_eigen(g.local_pos);
  inertia += R * local.asDiagonal() * R.transpose() +
             m * (d.squaredNorm() * Eigen::Matrix3d::Identity() - d * d.transpose());
  mass += m;
}

GeomSpec parse_geom(const Element& el, double& density_out) {
  check_attrs(el, {"name", "type", "size", "pos", "quat", "fromto", "friction", "density",
                   "contype", "conaffinity"});
  if (!el.children.empty()) fail(ErrorCode::UnknownTag, *el.children.front(), "geom has children");
  GeomSpec g;
  if (auto it = el.attrs.find("name"); it != el.attrs.end()) g.name = it->second;
  std::string type = el.attrs.count("type") ? el.attrs.at("type") : "sphere";
  if (type == "capsule") g.shape = GeomShape::Capsule;
  else if (type == "sphere") g.shape = GeomShape::Sphere;
  else if (type == "box") g.shape = GeomShape::Box;
  else if (type == "plane") g.shape = GeomShape::Plane;
  else fail(ErrorCode::UnknownTag, el, "unsupported geom type '" + type + "'");

  auto size = numbers_if(el, "size", 0).value_or(std::vector<double>{});
  g.local_pos = vec3_or(el, "pos", {0, 0, 0});
  g.local_quat = quat_or_identity(el);
  if (auto fr = numbers_if(el, "friction", 0)) {
    if (fr->empty() || (*fr)[0] < 0) fail(ErrorCode::InvalidValue, el, "friction must be >= 0");
    g.friction = (*fr)[0];
  }
  g.contype = int_or(el, "contype", 1);
  g.conaffinity = int_or(el, "conaffinity", 1);
  density_out = number_or(el, "density", kDefaultDensity);
  if (density_out <= 0) fail(ErrorCode::InvalidValue, el, "density must be > 0");

  auto need = [&](size_t n) {
    if (size.size() < n) fail(ErrorCode::InvalidValue, el, "geom size needs " + std::to_string(n) + " values");
    for (size_t i = 0; i < n; ++i) {
      if (!(size[i] > 0)) fail(ErrorCode::InvalidValue, el, "geom size must be strictly positive");
    }
  };
  switch (g.shape) {
    case GeomShape::Sphere:
      need(1);
      g.size = {size[0], 0, 0};
      break;
    case GeomShape::Box:
      need(3);
      g.size = {size[0], size[1], size[2]};
      break;
    case GeomShape::Plane:
      g.size = {0, 0, 0};
      break;
    case GeomShape::Capsule:
      if (auto ft = numbers_if(el, "fromto", 6)) {
        if (el.attrs.count("pos") || el.attrs.count("quat")) {
          fail(ErrorCode::InvalidValue, el, "fromto excludes pos/quat");
        }
        need(1);
        Eigen::Vector3d a((*ft)[0], (*ft)[1], (*ft)[2]);
        Eigen::Vector3d b((*ft)[3], (*ft)[4], (*ft)[5]);
        Eigen::Vector3d axis = b - a;
        double len = axis.norm();
        if (len < 1e-12) fail(ErrorCode::InvalidValue, el, "degenerate fromto");
        Eigen::Vector3d mid = 0.5 * (a + b);
        g.local_pos = {mid.x(), mid.y(), mid.z()};
        g.local_quat = from_eigen(
            Eigen::Quaterniond::FromTwoVectors(Eigen::Vector3d::UnitZ(), axis / len).normalized());
        g.size = {size[0], 0.5 * len, 0};
      } else {
        need(2);
        g.size = {size[0], size[1], 0};
      }
      break;
  }
  return g;
}

JointSpec parse_joint(const Element& el) {
  check_attrs(el, {"name", "type", "axis", "range", "damping", "pos", "axis2", "range2", "axis3",
                   "range3"});
  if (!el.children.empty()) fail(ErrorCode::UnknownTag, *el.children.front(), "joint has children");
  JointSpec j;
  if (!el.attrs.count("name")) fail(ErrorCode::InvalidValue, el, "joint needs a name");
  j.name = el.attrs.at("name");
  std::string type = el.attrs.count("type") ? el.attrs.at("type") : "hinge";
  if (type == "hinge") j.type = JointType::Hinge;
  else if (type == "slide") j.type = JointType::Slide;
  else fail(ErrorCode::UnknownTag, el, "unsupported joint type '" + type + "'");
  double scale = j.type == JointType::Hinge ? kDegToRad : 1.0;

  auto read_range = [&](const std::string& key, double& lo, double& hi) {
    auto r = numbers_if(el, key, 2);
    if (!r) fail(ErrorCode::InvalidValue, el, "joint needs a finite '" + key + "'");
    lo = (*r)[0] * scale;
    hi = (*r)[1] * scale;
    if (!(lo < hi)) fail(ErrorCode::InvalidValue, el, "range lower bound must be below upper bound");
  };
  j.axis = unit_axis(el, "axis", {0, 0, 1});
  read_range("range", j.range_lo, j.range_hi);
  j.damping = number_or(el, "damping", 0.0);
  if (j.damping < 0) fail(ErrorCode::InvalidValue, el, "damping must be >= 0");
  j.anchor = vec3_or(el, "pos", {0, 0, 0});

  for (int k = 2; k <= 3; ++k) {
    std::string ak = "axis" + std::to_string(k), rk = "range" + std::to_string(k);
    bool has_axis = el.attrs.count(ak) > 0, has_range = el.attrs.count(rk) > 0;
    if (!has_axis && !has_range) continue;
    if (has_axis != has_range) fail(ErrorCode::InvalidValue, el, ak + " and " + rk + " go together");
    if (j.type != JointType::Hinge) fail(ErrorCode::InvalidValue, el, "multi-axis joints must be hinges");
    if (k == 3 && j.extra_axes.empty()) fail(ErrorCode::InvalidValue, el, "axis3 without axis2");
    JointAxis extra;
    extra.axis = unit_axis(el, ak, {0, 0, 1});
    read_range(rk, extra.range_lo, extra.range_hi);
    j.extra_axes.push_back(extra);
  }
  return j;
}

struct Builder {
  ArticulatedModel model;
  std::map<std::string, int> body_names;
  std::map<std::string, int> joint_names;

  void body(const Element& el, int parent) {
    check_attrs(el, {"name", "pos", "quat", "labels"});
    BodySpec b;
    if (!el.attrs.count("name")) fail(ErrorCode::InvalidValue, el, "body needs a name");
    b.name = el.attrs.at("name");
    if (body_names.count(b.name)) fail(ErrorCode::InvalidValue, el, "duplicate body name '" + b.name + "'");
    b.parent = parent;
    b.local_pos = vec3_or(el, "pos", {0, 0, 0});
    b.local_quat = quat_or_identity(el);
    if (auto it = el.attrs.find("labels"); it != el.attrs.end()) {
      std::istringstream ss(it->second);
      for (std::string tag; ss >> tag;) b.labels.insert(tag);
    }
    const int index = static_cast<int>(model.bodies.size());
    body_names[b.name] = index;
    model.bodies.push_back(b);

    const Element* inertial = nullptr;
    double geom_mass = 0;
    Eigen::Matrix3d geom_inertia = Eigen::Matrix3d::Zero();
    std::vector<const Element*> child_bodies;
    int joint_count = 0;
    for (const auto& child : el.children) {
      if (child->tag == "geom") {
        double density = kDefaultDensity;
        GeomSpec g = parse_geom(*child, density);
        if (g.shape == GeomShape::Plane) fail(ErrorCode::InvalidValue, *child, "plane geoms belong to worldbody");
        accumulate_geom_mass(g, density, geom_mass, geom_inertia);
        model.bodies[index].geoms.push_back(g);
      } else if (child->tag == "joint") {
        if (++joint_count > 1) {
          fail(ErrorCode::InvalidValue, *child, "one joint per body; use axis2/axis3 for multi-axis joints");
        }
        JointSpec j = parse_joint(*child);
        if (joint_names.count(j.name)) fail(ErrorCode::InvalidValue, *child, "duplicate joint name '" + j.name + "'");
        j.child_body = index;
        joint_names[j.name] = static_cast<int>(model.joints.size());
        model.joints.push_back(j);
      } else if (child->tag == "inertial") {
        if (inertial) fail(ErrorCode::InvalidValue, *child, "duplicate inertial");
        inertial = child.get();
      } else if (child->tag == "body") {
        child_bodies.push_back(child.get());
      } else {
        fail(ErrorCode::UnknownTag, *child, "unsupported element");
      }
    }

    BodySpec& spec = model.bodies[index];
    if (inertial) {
      check_attrs(*inertial, {"mass", "diaginertia"});
      if (!inertial->attrs.count("mass") || !inertial->attrs.count("diaginertia")) {
        fail(ErrorCode::InvalidValue, *inertial, "inertial needs mass and diaginertia");
      }
      spec.mass = number_or(*inertial, "mass", 0);
      spec.inertia = vec3_or(*inertial, "diaginertia", {0, 0, 0});
      if (!(spec.mass > 0)) fail(ErrorCode::InvalidValue, *inertial, "mass must be > 0");
      for (double v : spec.inertia) {
        if (!(v > 0)) fail(ErrorCode::InvalidValue, *inertial, "inertia must be > 0");
      }
    } else {
      if (!(geom_mass > 0)) fail(ErrorCode::InvalidValue, el, "body has no inertial and no massive geoms");
      spec.mass = geom_mass;
      spec.inertia = {geom_inertia(0, 0), geom_inertia(1, 1), geom_inertia(2, 2)};
    }
    for (const Element* c : child_bodies) body(*c, index);
  }

  void actuators(const Element& el) {
    check_attrs(el, {});
    for (const auto& child : el.children) {
      if (child->tag != "motor") fail(ErrorCode::UnknownTag, *child, "unsupported actuator");
      check_attrs(*child, {"name", "joint", "gear"});
      if (!child->attrs.count("joint")) fail(ErrorCode::InvalidValue, *child, "motor needs a joint");
      const std::string& jn = child->attrs.at("joint");
      auto it = joint_names.find(jn);
      if (it == joint_names.end()) fail(ErrorCode::InvalidValue, *child, "motor references unknown joint '" + jn + "'");
      ActuatorSpec a;
      a.name = child->attrs.count("name") ? child->attrs.at("name") : jn;
      a.joint = it->second;
      a.gear = number_or(*child, "gear", 1.0);
      if (!(a.gear > 0)) fail(ErrorCode::InvalidValue, *child, "gear must be > 0");
      model.actuators.push_back(a);
    }
  }
};

}  // namespace

std::string_view to_string(GeomShape shape) {
  switch (shape) {
    case GeomShape::Capsule: return "capsule";
    case GeomShape::Sphere: return "sphere";
    case GeomShape::Box: return "box";
    case GeomShape::Plane: return "plane";
  }
  return "?";
}

std::string_view to_string(JointType type) { return type == JointType::Hinge ? "hinge" : "slide"; }

ArticulatedModel parse_model(std::string_view xml) {
  auto root = read_tree(xml);
  if (root->tag != "mujoco") fail(ErrorCode::UnknownTag, *root, "root element must be <mujoco>");
  check_attrs(*root, {"model", "planar"});

  Builder b;
  b.model.name = root->attrs.count("model") ? root->attrs.at("model") : "";
  b.model.planar = bool_or(*root, "planar", false);
  bool seen_world = false;
  for (const auto& child : root->children) {
    if (child->tag == "worldbody") {
      if (seen_world) fail(ErrorCode::InvalidValue, *child, "duplicate worldbody");
      seen_world = true;
      check_attrs(*child, {});
      int roots = 0;
      for (const auto& wc : child->children) {
        if (wc->tag == "body") {
          if (++roots > 1) fail(ErrorCode::InvalidValue, *wc, "exactly one root body is supported");
          b.body(*wc, kWorld);
        } else if (wc->tag == "geom") {
          double density = 0;
          GeomSpec g = parse_geom(*wc, density);
          if (g.shape != GeomShape::Plane) fail(ErrorCode::InvalidValue, *wc, "only plane geoms in worldbody");
          b.model.world_geoms.push_back(g);
        } else {
          fail(ErrorCode::UnknownTag, *wc, "unsupported element");
        }
      }
      if (roots == 0) fail(ErrorCode::InvalidValue, *child, "worldbody has no body");
    } else if (child->tag == "actuator") {
      if (!seen_world) fail(ErrorCode::InvalidValue, *child, "actuator must follow worldbody");
      b.actuators(*child);
    } else {
      fail(ErrorCode::UnknownTag, *child, "unsupported element");
    }
  }
  if (!seen_world) fail(ErrorCode::InvalidValue, *root, "missing worldbody");
  b.model.root_index = 0;
  validate_model(b.model);
  return b.model;
}

ArticulatedModel load_model_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::FileNotFound, path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_model(ss.str());
}

namespace {

std::string fmt_num(double v) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, end);
}

template <size_t N>
std::string fmt_arr(const std::array<double, N>& a) {
  std::string s;
  for (size_t i = 0; i < N; ++i) s += (i ? " " : "") + fmt_num(a[i]);
  return s;
}

void write_body(std::ostringstream& out, const ArticulatedModel& m, int index, int depth) {
  const BodySpec& b = m.bodies[index];
  std::string pad(2 * depth, ' ');
  out << pad << "<body name=\"" << b.name << "\" pos=\"" << fmt_arr(b.local_pos) << "\" quat=\""
      << fmt_arr(b.local_quat) << "\"";
  if (!b.labels.empty()) {
    std::string tags;
    for (const auto& t : b.labels) tags += (tags.empty() ? "" : " ") + t;
    out << " labels=\"" << tags << "\"";
  }
  out << ">\n";
  out << pad << "  <inertial mass=\"" << fmt_num(b.mass) << "\" diaginertia=\"" << fmt_arr(b.inertia)
      << "\"/>\n";
  for (const auto& j : m.joints) {
    if (j.child_body != index) continue;
    double scale = j.type == JointType::Hinge ? 180.0 / std::numbers::pi : 1.0;
    out << pad << "  <joint name=\"" << j.name << "\" type=\"" << to_string(j.type) << "\" axis=\""
        << fmt_arr(j.axis) << "\" range=\"" << fmt_num(j.range_lo * scale) << " "
        << fmt_num(j.range_hi * scale) << "\" damping=\"" << fmt_num(j.damping) << "\" pos=\""
        << fmt_arr(j.anchor) << "\"";
    for (size_t k = 0; k < j.extra_axes.size(); ++k) {
      const auto& e = j.extra_axes[k];
      out << " axis" << k + 2 << "=\"" << fmt_arr(e.axis) << "\" range" << k + 2 << "=\""
          << fmt_num(e.range_lo * scale) << " " << fmt_num(e.range_hi * scale) << "\"";
    }
    out << "/>\n";
  }
  for (const auto& g : b.geoms) {
    out << pad << "  <geom";
    if (!g.name.empty()) out << " name=\"" << g.name << "\"";
    out << " type=\"" << to_string(g.shape) << "\"";
    if (g.shape == GeomShape::Sphere) out << " size=\"" << fmt_num(g.size[0]) << "\"";
    if (g.shape == GeomShape::Capsule) out << " size=\"" << fmt_num(g.size[0]) << " " << fmt_num(g.size[1]) << "\"";
    if (g.shape == GeomShape::Box) out << " size=\"" << fmt_arr(g.size) << "\"";
    out << " pos=\"" << fmt_arr(g.local_pos) << "\" quat=\"" << fmt_arr(g.local_quat)
        << "\" friction=\"" << fmt_num(g.friction) << "\" contype=\"" << g.contype
        << "\" conaffinity=\"" << g.conaffinity << "\"/>\n";
  }
  for (int c = 0; c < static_cast<int>(m.bodies.size()); ++c) {
    if (m.bodies[c].parent == index) write_body(out, m, c, depth + 1);
  }
  out << pad << "</body>\n";
}

}  // namespace

std::string serialize_model(const ArticulatedModel& model) {
  std::ostringstream out;
  out << "<mujoco model=\"" << model.name << "\" planar=\"" << (model.planar ? "true" : "false") << "\">\n";
  out << "  <worldbody>\n";
  for (const auto& g : model.world_geoms) {
    out << "    <geom";
    if (!g.name.empty()) out << " name=\"" << g.name << "\"";
    out << " type=\"plane\" friction=\"" << fmt_num(g.friction) << "\"/>\n";
  }
  write_body(out, model, model.root_index, 2);
  out << "  </worldbody>\n";
  if (!model.actuators.empty()) {
    out << "  <actuator>\n";
    for (const auto& a : model.actuators) {
      out << "    <motor name=\"" << a.name << "\" joint=\"" << model.joints[a.joint].name
          << "\" gear=\"" << fmt_num(a.gear) << "\"/>\n";
    }
    out << "  </actuator>\n";
  }
  out << "</mujoco>\n";
  return out.str();
}

}  // namespace ragmark

#pragma once

// Triangle meshes: parametric primitives, ray casting, point/box queries and
// ASCII OFF I/O.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "graspgen/error.hpp"

namespace graspgen {

struct TriangleMesh {
  std::vector<Eigen::Vector3d> vertices;
  std::vector<std::array<int, 3>> triangles;

  bool empty() const { return triangles.empty(); }

  std::array<Eigen::Vector3d, 3> corners(std::size_t i) const {
    const auto& t = triangles[i];
    return {vertices[t[0]], vertices[t[1]], vertices[t[2]]};
  }

  /// Unnormalized (area-weighted, x2) outward normal following CCW winding.
  Eigen::Vector3d cross(std::size_t i) const {
    const auto [a, b, c] = corners(i);
    return (b - a).cross(c - a);
  }

  double triangle_area(std::size_t i) const { return 0.5 * cross(i).norm(); }

  Eigen::Vector3d unit_normal(std::size_t i) const { return cross(i).normalized(); }

  double surface_area() const {
    double s = 0.0;
    for (std::size_t i = 0; i < triangles.size(); ++i) s += triangle_area(i);
    return s;
  }

  /// Signed volume by the divergence theorem; positive for outward winding.
  double volume() const {
    double v = 0.0;
    for (std::size_t i = 0; i < triangles.size(); ++i) {
      const auto [a, b, c] = corners(i);
      v += a.dot(b.cross(c));
    }
    return v / 6.0;
  }

  Eigen::AlignedBox3d bounds() const {
    Eigen::AlignedBox3d box;
    for (const auto& v : vertices) box.extend(v);
    return box;
  }

  /// Radius of the smallest sphere centered at the bounding-box center that
  /// contains every vertex.
  double bounding_radius() const {
    const Eigen::Vector3d c = bounds().center();
    double r = 0.0;
    for (const auto& v : vertices) r = std::max(r, (v - c).norm());
    return r;
  }

  /// Every undirected edge shared by exactly two triangles.
  bool is_watertight() const {
    std::map<std::pair<int, int>, int> edges;
    for (const auto& t : triangles) {
      for (int k = 0; k < 3; ++k) {
        int a = t[k], b = t[(k + 1) % 3];
        if (a > b) std::swap(a, b);
        ++edges[{a, b}];
      }
    }
    return std::all_of(edges.begin(), edges.end(), [](const auto& e) { return e.second == 2; });
  }

  void validate() const {
    const int n = static_cast<int>(vertices.size());
    for (const auto& v : vertices)
      if (!v.allFinite()) throw InvalidInput("mesh: non-finite vertex");
    for (std::size_t i = 0; i < triangles.size(); ++i) {
      for (int idx : triangles[i])
        if (idx < 0 || idx >= n) throw InvalidInput("mesh: triangle index out of range");
      if (triangle_area(i) <= 1e-12) throw InvalidInput("mesh: degenerate triangle");
    }
  }

  TriangleMesh transformed(const Eigen::Matrix3d& r, const Eigen::Vector3d& t) const {
    TriangleMesh out = *this;
    for (auto& v : out.vertices) v = r * v + t;
    return out;
  }
};

// ---------------------------------------------------------------------------
// Primitives. Dimensions are meters:
//   box:               (size_x, size_y, size_z)
//   cylinder:          (radius, height, -)        axis along z
//   sphere:            (radius, -, -)
//   capped_composite:  (radius, shaft_length, -)  capsule, axis along z

enum class PrimitiveKind { Box, Cylinder, Sphere, CappedComposite };

inline std::string primitive_name(PrimitiveKind k) {
  switch (k) {
    case PrimitiveKind::Box: return "box";
    case PrimitiveKind::Cylinder: return "cylinder";
    case PrimitiveKind::Sphere: return "sphere";
    case PrimitiveKind::CappedComposite: return "capped_composite";
  }
  return "?";
}

inline PrimitiveKind parse_primitive(const std::string& s) {
  if (s == "box") return PrimitiveKind::Box;
  if (s == "cylinder") return PrimitiveKind::Cylinder;
  if (s == "sphere") return PrimitiveKind::Sphere;
  if (s == "capped_composite" || s == "capsule") return PrimitiveKind::CappedComposite;
  throw InvalidInput("unknown primitive kind '" + s + "'");
}

namespace detail {

inline TriangleMesh make_box(const Eigen::Vector3d& size) {
  TriangleMesh m;
  const Eigen::Vector3d h = 0.5 * size;
  for (int i = 0; i < 8; ++i)
    m.vertices.emplace_back((i & 1) ? h.x() : -h.x(), (i & 2) ? h.y() : -h.y(),
                            (i & 4) ? h.z() : -h.z());
  const int quads[6][4] = {{0, 2, 3, 1}, {4, 5, 7, 6}, {0, 1, 5, 4},
                           {2, 6, 7, 3}, {0, 4, 6, 2}, {1, 3, 7, 5}};
  for (const auto& q : quads) {
    m.triangles.push_back({q[0], q[1], q[2]});
    m.triangles.push_back({q[0], q[2], q[3]});
  }
  return m;
}

/// Surface of revolution about z from a profile of (radius, z) rings running
/// bottom to top; poles are rings with radius 0.
inline TriangleMesh make_revolution(const std::vector<std::pair<double, double>>& profile,
                                    int segments) {
  TriangleMesh m;
  std::vector<std::vector<int>> ring_ids;
  for (const auto& [radius, z] : profile) {
    std::vector<int> ids;
    if (radius == 0.0) {
      ids.push_back(static_cast<int>(m.vertices.size()));
      m.vertices.emplace_back(0.0, 0.0, z);
    } else {
      for (int s = 0; s < segments; ++s) {
        const double a = 2.0 * std::numbers::pi * s / segments;
        ids.push_back(static_cast<int>(m.vertices.size()));
        m.vertices.emplace_back(radius * std::cos(a), radius * std::sin(a), z);
      }
    }
    ring_ids.push_back(std::move(ids));
  }
  for (std::size_t k = 0; k + 1 < ring_ids.size(); ++k) {
    const auto& lo = ring_ids[k];
    const auto& hi = ring_ids[k + 1];
    for (int s = 0; s < segments; ++s) {
      const int s1 = (s + 1) % segments;
      if (lo.size() == 1) {
        m.triangles.push_back({lo[0], hi[s1], hi[s]});
      } else if (hi.size() == 1) {
        m.triangles.push_back({lo[s], lo[s1], hi[0]});
      } else {
        m.triangles.push_back({lo[s], lo[s1], hi[s1]});
        m.triangles.push_back({lo[s], hi[s1], hi[s]});
      }
    }
  }
  return m;
}

}  // namespace detail

inline TriangleMesh make_primitive(PrimitiveKind kind, const Eigen::Vector3d& dims,
                                   int resolution = 32) {
  if (resolution < 8) throw InvalidInput("make_primitive: resolution must be >= 8");
  const auto need = [&](int count) {
    for (int i = 0; i < count; ++i)
      if (!(dims[i] > 0.0) || !std::isfinite(dims[i]))
        throw InvalidInput("make_primitive: dimensions must be positive");
  };
  TriangleMesh mesh;
  switch (kind) {
    case PrimitiveKind::Box:
      need(3);
      mesh = detail::make_box(dims);
      break;
    case PrimitiveKind::Cylinder: {
      need(2);
      const double r = dims[0], h = 0.5 * dims[1];
      mesh = detail::make_revolution({{0.0, -h}, {r, -h}, {r, h}, {0.0, h}}, resolution);
      break;
    }
    case PrimitiveKind::Sphere: {
      need(1);
      const double r = dims[0];
      const int rings = std::max(4, resolution / 2);
      std::vector<std::pair<double, double>> profile;
      for (int k = 0; k <= rings; ++k) {
        const double phi = std::numbers::pi * k / rings;
        profile.emplace_back(k == 0 || k == rings ? 0.0 : r * std::sin(phi), -r * std::cos(phi));
      }
      mesh = detail::make_revolution(profile, resolution);
      break;
    }
    case PrimitiveKind::CappedComposite: {
      need(2);
      const double r = dims[0], h = 0.5 * dims[1];
      const int cap_rings = std::max(2, resolution / 4);
      std::vector<std::pair<double, double>> profile;
      for (int k = 0; k <= cap_rings; ++k) {
        const double phi = 0.5 * std::numbers::pi * k / cap_rings;
        profile.emplace_back(k == 0 ? 0.0 : r * std::sin(phi), -h - r * std::cos(phi));
      }
      for (int k = cap_rings; k >= 0; --k) {
        const double phi = 0.5 * std::numbers::pi * k / cap_rings;
        profile.emplace_back(k == 0 ? 0.0 : r * std::sin(phi), h + r * std::cos(phi));
      }
      mesh = detail::make_revolution(profile, resolution);
      break;
    }
  }
  const Eigen::Vector3d c = mesh.bounds().center();
  for (auto& v : mesh.vertices) v -= c;
  return mesh;
}

// ---------------------------------------------------------------------------
// Ray casting (Moller-Trumbore, two-sided).

struct RayHit {
  double t = 0.0;
  std::size_t triangle = 0;
  Eigen::Vector3d point = Eigen::Vector3d::Zero();
  Eigen::Vector3d normal = Eigen::Vector3d::Zero();  // outward unit normal
};

inline std::optional<double> intersect_triangle(const Eigen::Vector3d& origin,
                                                const Eigen::Vector3d& dir,
                                                const Eigen::Vector3d& a,
                                                const Eigen::Vector3d& b,
                                                const Eigen::Vector3d& c) {
  const Eigen::Vector3d e1 = b - a, e2 = c - a;
  const Eigen::Vector3d p = dir.cross(e2);
  const double det = e1.dot(p);
  if (std::abs(det) < 1e-18) return std::nullopt;
  const double inv = 1.0 / det;
  const Eigen::Vector3d s = origin - a;
  // Slightly inclusive so a ray through a shared edge is never lost to
  // rounding in both neighbours.
  constexpr double eps = 1e-10;
  const double u = s.dot(p) * inv;
  if (u < -eps || u > 1.0 + eps) return std::nullopt;
  const Eigen::Vector3d q = s.cross(e1);
  const double v = dir.dot(q) * inv;
  if (v < -eps || u + v > 1.0 + eps) return std::nullopt;
  return e2.dot(q) * inv;
}

/// Nearest hit with t in (t_min, t_max].
inline std::optional<RayHit> cast_ray(const TriangleMesh& mesh, const Eigen::Vector3d& origin,
                                      const Eigen::Vector3d& dir,
                                      double t_max = std::numeric_limits<double>::infinity(),
                                      double t_min = 0.0) {
  std::optional<RayHit> best;
  for (std::size_t i = 0; i < mesh.triangles.size(); ++i) {
    const auto [a, b, c] = mesh.corners(i);
    const auto t = intersect_triangle(origin, dir, a, b, c);
    if (!t || *t <= t_min || *t > t_max) continue;
    if (!best || *t < best->t) best = RayHit{*t, i, {}, {}};
  }
  if (best) {
    best->point = origin + best->t * dir;
    best->normal = mesh.unit_normal(best->triangle);
  }
  return best;
}

// ---------------------------------------------------------------------------
// Closest point queries.

inline Eigen::Vector3d closest_point_on_triangle(const Eigen::Vector3d& p, const Eigen::Vector3d& a,
                                                 const Eigen::Vector3d& b,
                                                 const Eigen::Vector3d& c) {
  const Eigen::Vector3d ab = b - a, ac = c - a, ap = p - a;
  const double d1 = ab.dot(ap), d2 = ac.dot(ap);
  if (d1 <= 0.0 && d2 <= 0.0) return a;
  const Eigen::Vector3d bp = p - b;
  const double d3 = ab.dot(bp), d4 = ac.dot(bp);
  if (d3 >= 0.0 && d4 <= d3) return b;
  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0) return a + (d1 / (d1 - d3)) * ab;
  const Eigen::Vector3d cp = p - c;
  const double d5 = ab.dot(cp), d6 = ac.dot(cp);
  if (d6 >= 0.0 && d5 <= d6) return c;
  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0) return a + (d2 / (d2 - d6)) * ac;
  const double va = d3 * d6 - d5 * d4;
  if (va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0)
    return b + ((d4 - d3) / ((d4 - d3) + (d5 - d6))) * (c - b);
  const double denom = 1.0 / (va + vb + vc);
  return a + ab * (vb * denom) + ac * (vc * denom);
}

struct SurfacePoint {
  Eigen::Vector3d point = Eigen::Vector3d::Zero();
  std::size_t triangle = 0;
  double distance = std::numeric_limits<double>::infinity();
};

inline SurfacePoint closest_surface_point(const TriangleMesh& mesh, const Eigen::Vector3d& p) {
  SurfacePoint best;
  for (std::size_t i = 0; i < mesh.triangles.size(); ++i) {
    const auto [a, b, c] = mesh.corners(i);
    const Eigen::Vector3d q = closest_point_on_triangle(p, a, b, c);
    const double d = (q - p).norm();
    if (d < best.distance) best = {q, i, d};
  }
  return best;
}

inline double point_mesh_distance(const TriangleMesh& mesh, const Eigen::Vector3d& p) {
  return closest_surface_point(mesh, p).distance;
}

// ---------------------------------------------------------------------------
// Triangle vs axis-aligned box overlap (separating axis test).

inline bool triangle_box_overlap(const Eigen::Vector3d& center, const Eigen::Vector3d& half,
                                 const Eigen::Vector3d& a, const Eigen::Vector3d& b,
                                 const Eigen::Vector3d& c) {
  const Eigen::Vector3d v0 = a - center, v1 = b - center, v2 = c - center;
  for (int k = 0; k < 3; ++k) {
    const double lo = std::min({v0[k], v1[k], v2[k]});
    const double hi = std::max({v0[k], v1[k], v2[k]});
    if (lo > half[k] || hi < -half[k]) return false;
  }
  const Eigen::Vector3d e[3] = {v1 - v0, v2 - v1, v0 - v2};
  const Eigen::Vector3d n = e[0].cross(e[1]);
  {
    double r = half.dot(n.cwiseAbs());
    double s = n.dot(v0);
    if (std::abs(s) > r) return false;
  }
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      Eigen::Vector3d axis = Eigen::Vector3d::Unit(i).cross(e[j]);
      if (axis.squaredNorm() < 1e-30) continue;
      const double p0 = axis.dot(v0), p1 = axis.dot(v1), p2 = axis.dot(v2);
      const double r = half.dot(axis.cwiseAbs());
      if (std::min({p0, p1, p2}) > r || std::max({p0, p1, p2}) < -r) return false;
    }
  }
  return true;
}

/// True when any triangle intersects the axis-aligned box or the box lies
/// entirely inside a closed mesh.
inline bool mesh_intersects_box(const TriangleMesh& mesh, const Eigen::Vector3d& center,
                                const Eigen::Vector3d& half) {
  for (std::size_t i = 0; i < mesh.triangles.size(); ++i) {
    const auto [a, b, c] = mesh.corners(i);
    if (triangle_box_overlap(center, half, a, b, c)) return true;
  }
  // Containment: odd crossing count along a fixed ray from the box center.
  const Eigen::Vector3d dir = Eigen::Vector3d(0.5773, 0.5774, 0.5775).normalized();
  int crossings = 0;
  for (std::size_t i = 0; i < mesh.triangles.size(); ++i) {
    const auto [a, b, c] = mesh.corners(i);
    const auto t = intersect_triangle(center, dir, a, b, c);
    if (t && *t > 0.0) ++crossings;
  }
  return crossings % 2 == 1;
}

// ---------------------------------------------------------------------------
// ASCII OFF.

inline std::string to_off(const TriangleMesh& mesh) {
  std::string out = "OFF\n" + std::to_string(mesh.vertices.size()) + " " +
                    std::to_string(mesh.triangles.size()) + " 0\n";
  char buf[128];
  for (const auto& v : mesh.vertices) {
    std::snprintf(buf, sizeof buf, "%.17g %.17g %.17g\n", v.x(), v.y(), v.z());
    out += buf;
  }
  for (const auto& t : mesh.triangles) {
    std::snprintf(buf, sizeof buf, "3 %d %d %d\n", t[0], t[1], t[2]);
    out += buf;
  }
  return out;
}

inline TriangleMesh parse_off(std::istream& in) {
  std::string tag;
  if (!(in >> tag) || tag != "OFF") throw FormatError("OFF: missing header");
  std::size_t nv = 0, nf = 0, ne = 0;
  if (!(in >> nv >> nf >> ne)) throw FormatError("OFF: bad counts line");
  TriangleMesh m;
  m.vertices.resize(nv);
  for (auto& v : m.vertices)
    if (!(in >> v.x() >> v.y() >> v.z())) throw FormatError("OFF: truncated vertex list");
  for (std::size_t f = 0; f < nf; ++f) {
    int k = 0;
    if (!(in >> k)) throw FormatError("OFF: truncated face list");
    std::vector<int> idx(k);
    for (auto& i : idx)
      if (!(in >> i)) throw FormatError("OFF: truncated face");
    if (k < 3) throw FormatError("OFF: face with fewer than 3 vertices");
    for (int j = 1; j + 1 < k; ++j) m.triangles.push_back({idx[0], idx[j], idx[j + 1]});
  }
  m.validate();
  return m;
}

inline TriangleMesh load_off(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path);
  return parse_off(in);
}

inline void save_off(const TriangleMesh& mesh, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path);
  out << to_off(mesh);
}

}  // namespace graspgen

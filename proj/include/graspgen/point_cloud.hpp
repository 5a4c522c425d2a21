#pragma once

// Point clouds: surface sampling, single-view rendering, training-time
// augmentation and the GGPC binary format.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "graspgen/error.hpp"
#include "graspgen/mesh.hpp"
#include "graspgen/random.hpp"
#include "graspgen/se3.hpp"

namespace graspgen {

using PointMatrix = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;

/// `points` are expressed relative to `centroid`: the object-frame position
/// of row i is points.row(i) + centroid (before any augmentation rotation).
struct PointCloud {
  PointMatrix points;
  Eigen::Vector3d centroid = Eigen::Vector3d::Zero();

  Eigen::Index size() const { return points.rows(); }
  Eigen::Vector3d point(Eigen::Index i) const { return points.row(i).transpose(); }
};

inline PointCloud mean_center(const PointCloud& cloud) {
  if (cloud.size() < 1) throw InvalidInput("mean_center: empty cloud");
  PointCloud out;
  const Eigen::RowVector3d mean = cloud.points.colwise().mean();
  out.points = cloud.points.rowwise() - mean;
  out.centroid = cloud.centroid + mean.transpose();
  return out;
}

/// Area-weighted uniform surface sampling.
inline PointCloud sample_surface(const TriangleMesh& mesh, std::size_t n, std::uint64_t seed) {
  if (mesh.empty()) throw InvalidInput("sample_surface: empty mesh");
  if (n < 1) throw InvalidInput("sample_surface: n must be >= 1");
  std::vector<double> cdf(mesh.triangles.size());
  double total = 0.0;
  for (std::size_t i = 0; i < mesh.triangles.size(); ++i) {
    total += mesh.triangle_area(i);
    cdf[i] = total;
  }
  Rng rng(seed);
  PointCloud cloud;
  cloud.points.resize(static_cast<Eigen::Index>(n), 3);
  for (std::size_t k = 0; k < n; ++k) {
    const double u = rng.uniform() * total;
    std::size_t tri = static_cast<std::size_t>(std::upper_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
    tri = std::min(tri, cdf.size() - 1);
    const auto [a, b, c] = mesh.corners(tri);
    const double r1 = std::sqrt(rng.uniform());
    const double r2 = rng.uniform();
    const Eigen::Vector3d p = (1.0 - r1) * a + r1 * (1.0 - r2) * b + r1 * r2 * c;
    cloud.points.row(static_cast<Eigen::Index>(k)) = p.transpose();
  }
  return cloud;
}

/// Pinhole camera at `camera` looking at the mesh bounds center; the
/// width x height ray grid spans exactly the bounding sphere. One point per
/// ray that hits, at the nearest intersection.
inline PointCloud render_partial(const TriangleMesh& mesh, const Eigen::Vector3d& camera,
                                 int width, int height) {
  if (mesh.empty()) throw InvalidInput("render_partial: empty mesh");
  if (width < 1 || height < 1) throw InvalidInput("render_partial: empty image grid");
  const Eigen::Vector3d target = mesh.bounds().center();
  const double radius = mesh.bounding_radius();
  const double dist = (camera - target).norm();
  if (!(dist > radius)) throw InvalidInput("render_partial: camera inside bounding sphere");

  const Eigen::Vector3d forward = (target - camera) / dist;
  Eigen::Vector3d up = std::abs(forward.z()) < 0.9 ? Eigen::Vector3d::UnitZ() : Eigen::Vector3d::UnitX();
  const Eigen::Vector3d right = forward.cross(up).normalized();
  up = right.cross(forward);
  const double half = std::tan(std::asin(radius / dist));

  std::vector<Eigen::Vector3d> hits;
  for (int j = 0; j < height; ++j) {
    for (int i = 0; i < width; ++i) {
      const double u = ((i + 0.5) / width * 2.0 - 1.0) * half;
      const double v = ((j + 0.5) / height * 2.0 - 1.0) * half;
      const Eigen::Vector3d dir = (forward + u * right + v * up).normalized();
      if (auto hit = cast_ray(mesh, camera, dir)) hits.push_back(hit->point);
    }
  }
  if (hits.empty()) throw EmptyView("render_partial: no ray hit the mesh");
  PointCloud cloud;
  cloud.points.resize(static_cast<Eigen::Index>(hits.size()), 3);
  for (std::size_t k = 0; k < hits.size(); ++k)
    cloud.points.row(static_cast<Eigen::Index>(k)) = hits[k].transpose();
  return cloud;
}

/// Uniform direction on the upper (z >= 0) hemisphere at 3x the bounding radius.
inline Eigen::Vector3d random_viewpoint(const TriangleMesh& mesh, Rng& rng) {
  const double z = rng.uniform();
  const double phi = 2.0 * std::numbers::pi * rng.uniform();
  const double s = std::sqrt(std::max(0.0, 1.0 - z * z));
  const Eigen::Vector3d dir(s * std::cos(phi), s * std::sin(phi), z);
  return mesh.bounds().center() + 3.0 * mesh.bounding_radius() * dir;
}

// ---------------------------------------------------------------------------

struct AugmentConfig {
  bool random_so3 = false;
  std::size_t subsample_n = 0;  // 0 keeps every point
  std::size_t viewpoint_count = 1;
  double outlier_fraction = 0.0;
  double outlier_offset = 0.02;

  void validate(std::size_t source_n) const {
    if (subsample_n > source_n) throw InvalidInput("augment: subsample_n exceeds cloud size");
    if (!(outlier_fraction >= 0.0 && outlier_fraction <= 0.2))
      throw InvalidInput("augment: outlier_fraction outside [0, 0.2]");
    if (outlier_fraction > 0.0 && !(outlier_offset > 0.0))
      throw InvalidInput("augment: outlier_offset must be positive");
  }
};

/// Augmented cloud plus the rotation applied after centering: an object-frame
/// point x maps to rotation * (x - cloud.centroid).
struct AugmentResult {
  PointCloud cloud;
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  std::size_t outliers = 0;
};

/// Mean-center, optionally rotate uniformly on SO(3), subsample, then inject
/// ceil(outlier_fraction * N) points at least outlier_offset off the surface.
inline AugmentResult augment(const PointCloud& input, const AugmentConfig& cfg,
                             const TriangleMesh& mesh, std::uint64_t seed) {
  cfg.validate(static_cast<std::size_t>(input.size()));
  Rng rng(seed);
  AugmentResult out;
  PointCloud centered = mean_center(input);
  if (cfg.random_so3) {
    out.rotation = random_rotation(rng);
    centered.points = centered.points * out.rotation.transpose();
  }
  if (cfg.subsample_n > 0 && cfg.subsample_n < static_cast<std::size_t>(centered.size())) {
    const auto keep = rng.choose(static_cast<std::size_t>(centered.size()), cfg.subsample_n);
    PointMatrix sub(static_cast<Eigen::Index>(keep.size()), 3);
    for (std::size_t k = 0; k < keep.size(); ++k)
      sub.row(static_cast<Eigen::Index>(k)) = centered.points.row(static_cast<Eigen::Index>(keep[k]));
    centered.points = std::move(sub);
  }
  const auto n = static_cast<std::size_t>(centered.size());
  const auto n_out = static_cast<std::size_t>(std::ceil(cfg.outlier_fraction * static_cast<double>(n) - 1e-9));
  if (n_out > 0) {
    if (mesh.empty()) throw InvalidInput("augment: outlier injection needs the mesh");
    const TriangleMesh local = mesh.transformed(out.rotation, -out.rotation * centered.centroid);
    PointMatrix grown(static_cast<Eigen::Index>(n + n_out), 3);
    grown.topRows(static_cast<Eigen::Index>(n)) = centered.points;
    for (std::size_t k = 0; k < n_out; ++k) {
      const Eigen::Vector3d seed_pt = centered.point(static_cast<Eigen::Index>(rng.index(n)));
      const SurfacePoint sp = closest_surface_point(local, seed_pt);
      const Eigen::Vector3d normal = local.unit_normal(sp.triangle);
      // Spread along the tangent plane, then push outward until clear.
      const Eigen::Vector3d t1 = normal.unitOrthogonal();
      const Eigen::Vector3d t2 = normal.cross(t1);
      Eigen::Vector3d p = sp.point + cfg.outlier_offset * (1.0 + 0.5 * rng.uniform()) * normal +
                          cfg.outlier_offset * (rng.uniform(-0.5, 0.5) * t1 + rng.uniform(-0.5, 0.5) * t2);
      while (point_mesh_distance(local, p) < cfg.outlier_offset) p += 0.5 * cfg.outlier_offset * normal;
      grown.row(static_cast<Eigen::Index>(n + k)) = p.transpose();
    }
    centered.points = std::move(grown);
    out.outliers = n_out;
  }
  out.cloud = std::move(centered);
  return out;
}

// ---------------------------------------------------------------------------
// GGPC: "GGPC" | u32 version | u64 N | N x 3 float64 | centroid 3 x float64.
// Little-endian throughout.

static_assert(std::endian::native == std::endian::little, "GGPC I/O assumes a little-endian host");

inline constexpr std::uint32_t kCloudFormatVersion = 1;

inline std::string encode_cloud(const PointCloud& cloud) {
  std::string out("GGPC", 4);
  const std::uint32_t version = kCloudFormatVersion;
  const std::uint64_t n = static_cast<std::uint64_t>(cloud.size());
  out.append(reinterpret_cast<const char*>(&version), 4);
  out.append(reinterpret_cast<const char*>(&n), 8);
  out.append(reinterpret_cast<const char*>(cloud.points.data()), n * 3 * sizeof(double));
  out.append(reinterpret_cast<const char*>(cloud.centroid.data()), 3 * sizeof(double));
  return out;
}

inline PointCloud decode_cloud(const std::string& bytes) {
  if (bytes.size() < 16 || bytes.compare(0, 4, "GGPC") != 0) throw FormatError("GGPC: bad magic");
  std::uint32_t version = 0;
  std::uint64_t n = 0;
  std::memcpy(&version, bytes.data() + 4, 4);
  std::memcpy(&n, bytes.data() + 8, 8);
  if (version != kCloudFormatVersion) throw FormatError("GGPC: unsupported version");
  if (bytes.size() != 16 + (n * 3 + 3) * sizeof(double)) throw FormatError("GGPC: size mismatch");
  PointCloud cloud;
  cloud.points.resize(static_cast<Eigen::Index>(n), 3);
  std::memcpy(cloud.points.data(), bytes.data() + 16, n * 3 * sizeof(double));
  std::memcpy(cloud.centroid.data(), bytes.data() + 16 + n * 3 * sizeof(double), 3 * sizeof(double));
  return cloud;
}

inline void save_cloud(const PointCloud& cloud, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path);
  const std::string bytes = encode_cloud(cloud);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline PointCloud load_cloud(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_cloud(bytes);
}

}  // namespace graspgen

#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <numbers>
#include <sstream>

#include "graspgen/mesh.hpp"
#include "graspgen/point_cloud.hpp"
#include "oracles.hpp"

using namespace graspgen;

namespace {

// Heron's formula, independent of the cross-product area in TriangleMesh.
double heron_area(const TriangleMesh& m) {
  double total = 0.0;
  for (std::size_t i = 0; i < m.triangles.size(); ++i) {
    const auto [a, b, c] = m.corners(i);
    const double x = (b - a).norm(), y = (c - b).norm(), z = (a - c).norm();
    const double s = 0.5 * (x + y + z);
    total += std::sqrt(std::max(0.0, s * (s - x) * (s - y) * (s - z)));
  }
  return total;
}

// Tetrahedra fanned from an arbitrary apex; any apex gives the same closed-surface volume.
double fan_volume(const TriangleMesh& m, const Eigen::Vector3d& apex) {
  double v = 0.0;
  for (std::size_t i = 0; i < m.triangles.size(); ++i) {
    const auto [a, b, c] = m.corners(i);
    v += (a - apex).dot((b - apex).cross(c - apex)) / 6.0;
  }
  return v;
}

// Distance from p to the nearest triangle, by barycentric projection on each.
double on_some_triangle(const TriangleMesh& m, const Eigen::Vector3d& p) {
  double best = 1e300;
  for (std::size_t i = 0; i < m.triangles.size(); ++i) {
    const auto [a, b, c] = m.corners(i);
    const Eigen::Vector3d n = (b - a).cross(c - a).normalized();
    const double off = (p - a).dot(n);
    const Eigen::Vector3d q = p - off * n;
    Eigen::Matrix<double, 3, 2> e;
    e << b - a, c - a;
    const Eigen::Vector2d uv = e.colPivHouseholderQr().solve(q - a);
    if (uv[0] >= -1e-9 && uv[1] >= -1e-9 && uv.sum() <= 1.0 + 1e-9) best = std::min(best, std::abs(off));
  }
  return best;
}

// Exact distance to an axis-aligned box surface of half extents h centered at the origin.
double box_surface_distance(const Eigen::Vector3d& p, const Eigen::Vector3d& h) {
  const Eigen::Vector3d q = p.cwiseAbs() - h;
  const double outside = q.cwiseMax(0.0).norm();
  const double inside = std::min(q.maxCoeff(), 0.0);
  return outside > 0.0 ? outside : -inside;
}

}  // namespace

TEST(Primitive, BoxCountsAndArea) {
  const TriangleMesh box = make_primitive(PrimitiveKind::Box, {0.1, 0.1, 0.1});
  EXPECT_EQ(box.vertices.size(), 8u);
  EXPECT_EQ(box.triangles.size(), 12u);
  EXPECT_NEAR(heron_area(box), 0.06, 1e-12);
  EXPECT_TRUE(box.is_watertight());
  EXPECT_NEAR(fan_volume(box, {0.3, -0.2, 0.1}), 1e-3, 1e-15);
}

TEST(Primitive, CylinderAreaWithinPolygonalDeficit) {
  const TriangleMesh cyl = make_primitive(PrimitiveKind::Cylinder, {0.03, 0.1, 0.0}, 32);
  const double r = 0.03, h = 0.1;
  const double analytic = 2 * std::numbers::pi * r * h + 2 * std::numbers::pi * r * r;
  EXPECT_NEAR(analytic, 0.02451, 1e-5);
  EXPECT_LT(std::abs(heron_area(cyl) - analytic) / analytic, 0.01);
  EXPECT_TRUE(cyl.is_watertight());
}

TEST(Primitive, SphereVolume) {
  const TriangleMesh sph = make_primitive(PrimitiveKind::Sphere, {0.05, 0.0, 0.0}, 64);
  const double analytic = 4.0 / 3.0 * std::numbers::pi * std::pow(0.05, 3);
  EXPECT_LT(std::abs(fan_volume(sph, {0.01, 0.02, -0.03}) - analytic) / analytic, 0.01);
  EXPECT_TRUE(sph.is_watertight());
}

TEST(Primitive, AllKindsWatertightAndCentered) {
  for (auto kind : {PrimitiveKind::Box, PrimitiveKind::Cylinder, PrimitiveKind::Sphere, PrimitiveKind::CappedComposite}) {
    const TriangleMesh m = make_primitive(kind, {0.03, 0.08, 0.05}, 16);
    EXPECT_TRUE(m.is_watertight()) << primitive_name(kind);
    EXPECT_LT(m.bounds().center().norm(), 1e-12);
    EXPECT_GT(fan_volume(m, Eigen::Vector3d::Zero()), 0.0);
    for (std::size_t i = 0; i < m.triangles.size(); ++i) EXPECT_GT(m.triangle_area(i), 1e-12);
  }
}

TEST(Primitive, RejectsBadParameters) {
  EXPECT_THROW(make_primitive(PrimitiveKind::Box, {0.1, 0.0, 0.1}), InvalidInput);
  EXPECT_THROW(make_primitive(PrimitiveKind::Sphere, {-0.1, 0.0, 0.0}), InvalidInput);
  EXPECT_THROW(make_primitive(PrimitiveKind::Cylinder, {0.1, 0.1, 0.0}, 4), InvalidInput);
}

TEST(SampleSurface, AreaWeightedChiSquare) {
  // Two disjoint triangles with areas 1 : 3.
  TriangleMesh m;
  m.vertices = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {3, 0, 1}, {0, 1, 1}};
  m.triangles = {{0, 1, 2}, {3, 4, 5}};
  const std::size_t n = 4000;
  const PointCloud c = sample_surface(m, n, 42);
  std::size_t low = 0;
  for (Eigen::Index i = 0; i < c.size(); ++i) low += c.points(i, 2) < 0.5;
  const double e0 = n * 0.25, e1 = n * 0.75;
  const double chi2 = std::pow(low - e0, 2) / e0 + std::pow((n - low) - e1, 2) / e1;
  EXPECT_LT(chi2, 6.635);  // 99% quantile, 1 dof
}

TEST(SampleSurface, PointsOnSurfaceAndDeterministic) {
  const TriangleMesh m = make_primitive(PrimitiveKind::CappedComposite, {0.02, 0.06, 0.0}, 16);
  const PointCloud a = sample_surface(m, 300, 9);
  const PointCloud b = sample_surface(m, 300, 9);
  EXPECT_TRUE(a.points == b.points);
  for (Eigen::Index i = 0; i < a.size(); ++i) EXPECT_LT(on_some_triangle(m, a.point(i)), 1e-9);
  const PointCloud one = sample_surface(m, 1, 3);
  ASSERT_EQ(one.size(), 1);
  EXPECT_LT(on_some_triangle(m, one.point(0)), 1e-9);
  EXPECT_THROW(sample_surface(TriangleMesh{}, 10, 0), InvalidInput);
}

TEST(RenderPartial, BoxFromAboveSeesOnlyTopFaceAndIsVisible) {
  const TriangleMesh box = make_primitive(PrimitiveKind::Box, {0.1, 0.08, 0.06});
  const Eigen::Vector3d cam(0, 0, 3 * box.bounding_radius());
  const PointCloud c = render_partial(box, cam, 24, 24);
  ASSERT_GT(c.size(), 0);
  for (Eigen::Index i = 0; i < c.size(); ++i) {
    const Eigen::Vector3d p = c.point(i);
    EXPECT_NEAR(p.z(), 0.03, 1e-9);  // the only face with outward normal +z
    for (std::size_t t = 0; t < box.triangles.size(); ++t) {
      const auto [a, b, d] = box.corners(t);
      EXPECT_FALSE(oracle::segment_hits_triangle(cam, p, a, b, d)) << "point " << i << " occluded by " << t;
    }
  }
}

TEST(RenderPartial, BruteForceVisibilityOnCurvedShape) {
  const TriangleMesh m = make_primitive(PrimitiveKind::CappedComposite, {0.02, 0.06, 0.0}, 12);
  const Eigen::Vector3d cam = 3 * m.bounding_radius() * Eigen::Vector3d(1, 0.5, 0.7).normalized();
  const PointCloud c = render_partial(m, cam, 16, 16);
  for (Eigen::Index i = 0; i < c.size(); ++i) {
    EXPECT_LT(on_some_triangle(m, c.point(i)), 1e-9);
    for (std::size_t t = 0; t < m.triangles.size(); ++t) {
      const auto [a, b, d] = m.corners(t);
      ASSERT_FALSE(oracle::segment_hits_triangle(cam, c.point(i), a, b, d));
    }
  }
}

TEST(RenderPartial, SphereViewSpansAtMostAHemisphere) {
  const TriangleMesh sph = make_primitive(PrimitiveKind::Sphere, {0.05, 0.0, 0.0}, 48);
  Rng rng(5);
  for (int trial = 0; trial < 5; ++trial) {
    const Eigen::Vector3d cam = random_viewpoint(sph, rng);
    const Eigen::Vector3d axis = cam.normalized();
    const PointCloud c = render_partial(sph, cam, 32, 32);
    double worst = 0.0;
    for (Eigen::Index i = 0; i < c.size(); ++i)
      worst = std::max(worst, std::acos(std::clamp(c.point(i).normalized().dot(axis), -1.0, 1.0)));
    // Facets bulge a little beyond the ideal silhouette.
    EXPECT_LE(worst, std::numbers::pi / 2 + 2 * std::numbers::pi / 48);
  }
}

TEST(RenderPartial, OppositeCamerasCoverTheWholeSurface) {
  // Box seen along both body diagonals: each camera sees three faces.
  const Eigen::Vector3d size(0.06, 0.06, 0.06);
  const TriangleMesh box = make_primitive(PrimitiveKind::Box, size);
  const double dist = 3 * box.bounding_radius();
  const Eigen::Vector3d dir = Eigen::Vector3d::Ones().normalized();
  const int grid = 48;
  const PointCloud a = render_partial(box, dist * dir, grid, grid);
  const PointCloud b = render_partial(box, -dist * dir, grid, grid);

  // Surface spacing between neighbouring rays at the farthest point, at the
  // face incidence angle (cos = 1/sqrt(3)).
  const double half = std::tan(std::asin(box.bounding_radius() / dist));
  const double far = dist + box.bounding_radius();
  const double pitch = 2 * half / grid * far * std::sqrt(3.0);

  const PointCloud complete = sample_surface(box, 2000, 1);
  double hausdorff = 0.0;
  for (Eigen::Index i = 0; i < complete.size(); ++i) {
    double best = 1e300;
    for (const PointCloud* v : {&a, &b})
      for (Eigen::Index j = 0; j < v->size(); ++j) best = std::min(best, (v->point(j) - complete.point(i)).norm());
    hausdorff = std::max(hausdorff, best);
  }
  EXPECT_LT(hausdorff, pitch);
}

TEST(RenderPartial, Errors) {
  const TriangleMesh box = make_primitive(PrimitiveKind::Box, {0.1, 0.1, 0.1});
  EXPECT_THROW(render_partial(box, {0.0, 0.0, 0.01}, 8, 8), InvalidInput);
  // A lone triangle seen exactly edge-on: its single ray grazes the plane.
  TriangleMesh sliver;
  sliver.vertices = {{-1, 0, 0}, {1, 0, 0}, {0, 0, 1}};
  sliver.triangles = {{0, 1, 2}};
  EXPECT_THROW(render_partial(sliver, {5.0, 0.0, 0.5}, 1, 1), EmptyView);
}

TEST(Augment, AllOffOnlyCenters) {
  const TriangleMesh m = make_primitive(PrimitiveKind::Box, {0.05, 0.06, 0.07});
  PointCloud raw = sample_surface(m, 500, 2);
  raw.points.rowwise() += Eigen::RowVector3d(0.3, -0.1, 0.2);
  const AugmentResult r = augment(raw, {}, m, 11);
  const PointCloud expect = mean_center(raw);
  EXPECT_TRUE(r.cloud.points.isApprox(expect.points, 1e-15));
  EXPECT_LT(r.cloud.points.colwise().mean().norm(), 1e-9);
  EXPECT_EQ(r.outliers, 0u);
  EXPECT_TRUE(r.rotation.isIdentity());
}

TEST(Augment, OutliersAreExactCountAndClearOfSurface) {
  const Eigen::Vector3d size(0.08, 0.05, 0.04);
  const TriangleMesh m = make_primitive(PrimitiveKind::Box, size);
  const PointCloud raw = sample_surface(m, 1000, 4);
  AugmentConfig cfg;
  cfg.outlier_fraction = 0.05;
  cfg.outlier_offset = 0.03;
  const AugmentResult r = augment(raw, cfg, m, 8);
  ASSERT_EQ(r.cloud.size(), 1050);
  EXPECT_EQ(r.outliers, 50u);
  // Undo centering to measure against the analytic box.
  for (Eigen::Index i = 1000; i < 1050; ++i) {
    const Eigen::Vector3d object_frame = r.rotation.transpose() * r.cloud.point(i) + r.cloud.centroid;
    EXPECT_GE(box_surface_distance(object_frame, size / 2), 0.03 - 1e-12);
  }
}

TEST(Augment, RandomRotationIsAnIsometry) {
  const TriangleMesh sph = make_primitive(PrimitiveKind::Sphere, {0.04, 0.0, 0.0}, 32);
  const PointCloud raw = mean_center(sample_surface(sph, 400, 6));
  AugmentConfig cfg;
  cfg.random_so3 = true;
  const AugmentResult r = augment(raw, cfg, sph, 12);
  EXPECT_FALSE(r.rotation.isIdentity(1e-3));
  EXPECT_TRUE(is_rotation(r.rotation));
  for (Eigen::Index i = 0; i < raw.size(); ++i)
    EXPECT_NEAR(r.cloud.point(i).norm(), (raw.point(i) - r.cloud.centroid + raw.centroid).norm(), 1e-12);
}

TEST(Augment, SubsampleAndDeterminism) {
  const TriangleMesh m = make_primitive(PrimitiveKind::Cylinder, {0.02, 0.08, 0.0});
  const PointCloud raw = sample_surface(m, 600, 3);
  AugmentConfig cfg;
  cfg.random_so3 = true;
  cfg.subsample_n = 128;
  cfg.outlier_fraction = 0.1;
  const auto a = augment(raw, cfg, m, 99);
  const auto b = augment(raw, cfg, m, 99);
  const auto c = augment(raw, cfg, m, 100);
  EXPECT_EQ(a.cloud.size(), 128 + 13);
  EXPECT_TRUE(a.cloud.points == b.cloud.points);
  EXPECT_FALSE(a.cloud.points == c.cloud.points);
  cfg.subsample_n = 601;
  EXPECT_THROW(augment(raw, cfg, m, 1), InvalidInput);
  cfg.subsample_n = 0;
  cfg.outlier_fraction = 0.3;
  EXPECT_THROW(augment(raw, cfg, m, 1), InvalidInput);
}

TEST(MeanCenter, Idempotent) {
  const TriangleMesh m = make_primitive(PrimitiveKind::Box, {0.1, 0.02, 0.03});
  PointCloud raw = sample_surface(m, 257, 1);
  raw.points.rowwise() += Eigen::RowVector3d(1.0, 2.0, 3.0);
  const PointCloud once = mean_center(raw);
  const PointCloud twice = mean_center(once);
  EXPECT_LT((once.points - twice.points).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((once.centroid - twice.centroid).norm(), 1e-12);
  EXPECT_THROW(mean_center(PointCloud{}), InvalidInput);
}

TEST(CloudFormat, RoundTripAndHeader) {
  const TriangleMesh m = make_primitive(PrimitiveKind::Sphere, {0.03, 0, 0}, 16);
  const PointCloud c = mean_center(sample_surface(m, 77, 5));
  const std::string bytes = encode_cloud(c);
  ASSERT_EQ(bytes.substr(0, 4), "GGPC");
  std::uint64_t n = 0;
  std::memcpy(&n, bytes.data() + 8, 8);
  EXPECT_EQ(n, 77u);
  EXPECT_EQ(bytes.size(), 16 + (77 * 3 + 3) * 8u);
  const PointCloud d = decode_cloud(bytes);
  EXPECT_TRUE(d.points == c.points);
  EXPECT_TRUE(d.centroid == c.centroid);

  std::string bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(decode_cloud(bad), FormatError);
  EXPECT_THROW(decode_cloud(bytes.substr(0, bytes.size() - 1)), FormatError);
}

TEST(MeshFormat, OffRoundTrip) {
  const TriangleMesh m = make_primitive(PrimitiveKind::CappedComposite, {0.02, 0.05, 0}, 12);
  std::istringstream in(to_off(m));
  const TriangleMesh back = parse_off(in);
  ASSERT_EQ(back.vertices.size(), m.vertices.size());
  ASSERT_EQ(back.triangles, m.triangles);
  for (std::size_t i = 0; i < m.vertices.size(); ++i) EXPECT_TRUE(back.vertices[i] == m.vertices[i]);

  std::istringstream quad("OFF\n4 1 0\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n4 0 1 2 3\n");
  EXPECT_EQ(parse_off(quad).triangles.size(), 2u);
  std::istringstream junk("PLY\n");
  EXPECT_THROW(parse_off(junk), FormatError);
  std::istringstream truncated("OFF\n3 1 0\n0 0 0\n1 0 0\n");
  EXPECT_THROW(parse_off(truncated), FormatError);
}

#pragma once

// Toy object suites and per-object view assembly (complete and single-view
// clouds mixed at a configurable ratio).

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "graspgen/error.hpp"
#include "graspgen/grasp_oracle.hpp"
#include "graspgen/mesh.hpp"
#include "graspgen/point_cloud.hpp"
#include "graspgen/random.hpp"

namespace graspgen {

struct ObjectSuiteSpec {
  std::vector<PrimitiveKind> kinds{PrimitiveKind::Box, PrimitiveKind::Cylinder, PrimitiveKind::Sphere,
                                   PrimitiveKind::CappedComposite};
  std::size_t count = 16;
  double size_scale_lo = 0.8;  // multiplies the nominal dimensions below
  double size_scale_hi = 1.2;
  int resolution = 24;
  std::uint64_t seed = 0;
  std::string prefix = "obj";
};

/// Nominal dimensions (meters) per kind, sized for an 8 cm jaw opening.
inline Eigen::Vector3d nominal_dims(PrimitiveKind kind) {
  switch (kind) {
    case PrimitiveKind::Box: return {0.04, 0.05, 0.09};
    case PrimitiveKind::Cylinder: return {0.022, 0.10, 0.0};
    case PrimitiveKind::Sphere: return {0.028, 0.0, 0.0};
    case PrimitiveKind::CappedComposite: return {0.02, 0.06, 0.0};
  }
  return {0.05, 0.05, 0.05};
}

/// Object k cycles through `kinds`; each dimension is scaled independently
/// by a draw from [size_scale_lo, size_scale_hi].
inline std::vector<ObjectEntry> make_object_suite(const ObjectSuiteSpec& spec) {
  if (spec.kinds.empty()) throw InvalidInput("object suite: no primitive kinds");
  if (!(spec.size_scale_lo > 0.0 && spec.size_scale_hi >= spec.size_scale_lo))
    throw InvalidInput("object suite: bad size range");
  std::vector<ObjectEntry> out;
  for (std::size_t k = 0; k < spec.count; ++k) {
    Rng rng(derive_seed(spec.seed, k));
    const PrimitiveKind kind = spec.kinds[k % spec.kinds.size()];
    Eigen::Vector3d dims = nominal_dims(kind);
    for (int i = 0; i < 3; ++i) dims[i] *= rng.uniform(spec.size_scale_lo, spec.size_scale_hi);
    char id[64];
    std::snprintf(id, sizeof id, "%s%02zu_%s", spec.prefix.c_str(), k, primitive_name(kind).c_str());
    out.push_back({id, make_primitive(kind, dims, spec.resolution)});
  }
  return out;
}

struct ViewConfig {
  std::size_t views = 8;
  double partial_ratio = 0.5;
  std::size_t points = 256;
  int image_grid = 40;
};

/// Subsampled, mean-centered clouds: round(partial_ratio * views) single-view
/// renders from random upper-hemisphere cameras, the rest complete samples.
inline std::vector<PointCloud> make_views(const TriangleMesh& mesh, const ViewConfig& cfg, std::uint64_t seed) {
  if (!(cfg.partial_ratio >= 0.0 && cfg.partial_ratio <= 1.0)) throw InvalidInput("views: partial_ratio outside [0, 1]");
  const auto partial = static_cast<std::size_t>(std::lround(cfg.partial_ratio * static_cast<double>(cfg.views)));
  std::vector<PointCloud> out;
  for (std::size_t v = 0; v < cfg.views; ++v) {
    const std::uint64_t s = derive_seed(seed, v);
    PointCloud raw;
    if (v < partial) {
      Rng rng(s);
      const Eigen::Vector3d cam = random_viewpoint(mesh, rng);
      int grid = cfg.image_grid;
      raw = render_partial(mesh, cam, grid, grid);
      while (static_cast<std::size_t>(raw.size()) < cfg.points && grid < 512) {
        grid *= 2;
        raw = render_partial(mesh, cam, grid, grid);
      }
    } else {
      raw = sample_surface(mesh, cfg.points * 4, s);
    }
    AugmentConfig aug;
    aug.subsample_n = std::min<std::size_t>(cfg.points, static_cast<std::size_t>(raw.size()));
    out.push_back(augment(raw, aug, mesh, derive_seed(s, 7)).cloud);
  }
  return out;
}

/// A single complete, mean-centered cloud used for inference and evaluation.
inline PointCloud complete_view(const TriangleMesh& mesh, std::size_t points, std::uint64_t seed) {
  AugmentConfig aug;
  aug.subsample_n = points;
  return augment(sample_surface(mesh, points * 4, seed), aug, mesh, derive_seed(seed, 7)).cloud;
}

}  // namespace graspgen

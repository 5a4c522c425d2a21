#pragma once

// Evaluation: coverage, precision, precision-coverage curves, pose errors,
// Earth-Mover's distance between grasp sets, and the threshold/batch sweep.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>

#include "graspgen/discriminator.hpp"
#include "graspgen/error.hpp"
#include "graspgen/grasp_oracle.hpp"
#include "graspgen/random.hpp"
#include "graspgen/se3.hpp"

namespace graspgen {

enum class CoverageMatch { Translation, Pose };

namespace detail {

/// Uniform hash grid over translations with cell size equal to the query
/// radius, so a radius query only inspects the 27 neighboring cells.
class TranslationGrid {
 public:
  TranslationGrid(const std::vector<GraspPose>& poses, double cell) : cell_(cell) {
    for (std::size_t i = 0; i < poses.size(); ++i) {
      points_.push_back(poses[i].translation);
      cells_[key(cell_of(poses[i].translation))].push_back(i);
    }
  }

  bool any_within(const Eigen::Vector3d& q, double radius) const {
    const Eigen::Vector3i c = cell_of(q);
    for (int dx = -1; dx <= 1; ++dx)
      for (int dy = -1; dy <= 1; ++dy)
        for (int dz = -1; dz <= 1; ++dz) {
          const auto it = cells_.find(key(c + Eigen::Vector3i(dx, dy, dz)));
          if (it == cells_.end()) continue;
          for (std::size_t i : it->second)
            if ((points_[i] - q).norm() <= radius) return true;
        }
    return false;
  }

 private:
  Eigen::Vector3i cell_of(const Eigen::Vector3d& p) const {
    return {static_cast<int>(std::floor(p.x() / cell_)), static_cast<int>(std::floor(p.y() / cell_)),
            static_cast<int>(std::floor(p.z() / cell_))};
  }
  static std::uint64_t key(const Eigen::Vector3i& c) {
    const auto u = [](int v) { return static_cast<std::uint64_t>(static_cast<std::uint32_t>(v)) & 0x1fffffULL; };
    return (u(c.x()) << 42) | (u(c.y()) << 21) | u(c.z());
  }

  double cell_;
  std::vector<Eigen::Vector3d> points_;
  std::unordered_map<std::uint64_t, std::vector<std::size_t>> cells_;
};

}  // namespace detail

/// Fraction of ground-truth positives with a predicted grasp within `radius`.
/// Matching is non-injective: each ground-truth grasp is matched on its own.
inline double coverage(const std::vector<GraspPose>& predicted, const std::vector<GraspPose>& gt,
                       double radius = 0.01, CoverageMatch match = CoverageMatch::Translation) {
  if (gt.empty()) throw InvalidInput("coverage: empty ground-truth set");
  if (predicted.empty()) return 0.0;
  std::size_t hit = 0;
  if (match == CoverageMatch::Translation) {
    const detail::TranslationGrid grid(predicted, radius);
    for (const auto& g : gt) hit += grid.any_within(g.translation, radius) ? 1 : 0;
  } else {
    for (const auto& g : gt) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& p : predicted) best = std::min(best, pose_distance(g, p));
      hit += best <= radius ? 1 : 0;
    }
  }
  return static_cast<double>(hit) / static_cast<double>(gt.size());
}

inline std::vector<std::uint8_t> oracle_labels(const std::vector<GraspPose>& grasps, const TriangleMesh& mesh,
                                               const GripperModel& gripper) {
  std::vector<std::uint8_t> out;
  out.reserve(grasps.size());
  for (const auto& g : grasps) out.push_back(label_grasp(mesh, g, gripper) ? 1 : 0);
  return out;
}

inline double precision(const std::vector<GraspPose>& grasps, const TriangleMesh& mesh, const GripperModel& gripper) {
  if (grasps.empty()) throw InvalidInput("precision: empty grasp set");
  const auto labels = oracle_labels(grasps, mesh, gripper);
  return static_cast<double>(std::count(labels.begin(), labels.end(), std::uint8_t{1})) /
         static_cast<double>(labels.size());
}

// ---------------------------------------------------------------------------

struct CurvePoint {
  double threshold = 0.0;
  double precision = 0.0;
  double coverage = 0.0;
  std::size_t retained = 0;
};

struct PrecisionCoverageCurve {
  std::vector<CurvePoint> points;
  double auc = 0.0;
};

/// Trapezoidal area of precision over coverage, on points sorted by
/// coverage. Below the smallest coverage the curve is held at that point's
/// precision, so a single point yields its precision x coverage rectangle.
inline double curve_auc(std::vector<CurvePoint> pts) {
  if (pts.empty()) return 0.0;
  std::sort(pts.begin(), pts.end(), [](const CurvePoint& a, const CurvePoint& b) {
    return a.coverage < b.coverage || (a.coverage == b.coverage && a.precision < b.precision);
  });
  double area = pts.front().coverage * pts.front().precision;
  for (std::size_t i = 1; i < pts.size(); ++i)
    area += 0.5 * (pts[i].coverage - pts[i - 1].coverage) * (pts[i].precision + pts[i - 1].precision);
  return area;
}

/// Curve from scores with oracle labels already known for each scored grasp.
inline PrecisionCoverageCurve precision_coverage_curve(const ScoredGrasps& scored,
                                                       const std::vector<std::uint8_t>& labels,
                                                       const std::vector<GraspPose>& gt,
                                                       const std::vector<double>& thresholds,
                                                       double radius = 0.01) {
  if (!std::is_sorted(thresholds.begin(), thresholds.end()))
    throw InvalidInput("precision_coverage_curve: thresholds must be ascending");
  if (labels.size() != scored.size()) throw InvalidInput("precision_coverage_curve: one label per grasp");
  PrecisionCoverageCurve curve;
  for (double thr : thresholds) {
    CurvePoint p{thr, 0.0, 0.0, 0};
    std::vector<GraspPose> kept;
    std::size_t good = 0;
    for (std::size_t i = 0; i < scored.size(); ++i) {
      if (scored.scores[i] >= thr) {
        kept.push_back(scored.grasps[i]);
        good += labels[i];
      }
    }
    p.retained = kept.size();
    if (!kept.empty()) {
      p.precision = static_cast<double>(good) / static_cast<double>(kept.size());
      p.coverage = coverage(kept, gt, radius);
    }
    curve.points.push_back(p);
  }
  curve.auc = curve_auc(curve.points);
  return curve;
}

inline PrecisionCoverageCurve precision_coverage_curve(const ScoredGrasps& scored, const std::vector<GraspPose>& gt,
                                                       const TriangleMesh& mesh, const GripperModel& gripper,
                                                       const std::vector<double>& thresholds,
                                                       double radius = 0.01) {
  return precision_coverage_curve(scored, oracle_labels(scored.grasps, mesh, gripper), gt, thresholds, radius);
}

/// Area under the ROC curve (Mann-Whitney statistic, ties count one half).
inline double roc_auc(const std::vector<double>& scores, const std::vector<std::uint8_t>& labels) {
  if (scores.size() != labels.size()) throw InvalidInput("roc_auc: size mismatch");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0.0;
  std::size_t pos = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double mid_rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k)
      if (labels[order[k]]) {
        rank_sum += mid_rank;
        ++pos;
      }
    i = j;
  }
  const std::size_t neg = scores.size() - pos;
  if (pos == 0 || neg == 0) throw InvalidInput("roc_auc: both classes required");
  return (rank_sum - 0.5 * static_cast<double>(pos) * static_cast<double>(pos + 1)) /
         (static_cast<double>(pos) * static_cast<double>(neg));
}

// ---------------------------------------------------------------------------

struct PoseErrors {
  double translation = 0.0;  // meters
  double rotation = 0.0;     // radians
};

/// For each prediction, the nearest ground truth under pose_distance; means
/// of the translation and rotation parts of that match.
inline PoseErrors pose_errors(const std::vector<GraspPose>& predicted, const std::vector<GraspPose>& gt) {
  if (predicted.empty() || gt.empty()) throw InvalidInput("pose_errors: empty input");
  PoseErrors sum;
  for (const auto& p : predicted) {
    double best = std::numeric_limits<double>::infinity();
    double bt = 0.0, br = 0.0;
    for (const auto& g : gt) {
      const double t = (p.translation - g.translation).norm();
      if (t >= best) continue;
      const double r = rotation_angle(p.rotation, g.rotation);
      if (t + r < best) {
        best = t + r;
        bt = t;
        br = r;
      }
    }
    sum.translation += bt;
    sum.rotation += br;
  }
  const double n = static_cast<double>(predicted.size());
  return {sum.translation / n, sum.rotation / n};
}

// ---------------------------------------------------------------------------

struct Assignment {
  std::vector<std::size_t> column_of_row;
  double total_cost = 0.0;
};

/// Exact minimum-cost perfect matching on a square cost matrix
/// (shortest augmenting paths with dual potentials, O(n^3)).
inline Assignment linear_sum_assignment(const Eigen::MatrixXd& cost) {
  if (cost.rows() != cost.cols()) throw InvalidInput("linear_sum_assignment: square matrix required");
  const auto n = static_cast<std::size_t>(cost.rows());
  Assignment out;
  if (n == 0) return out;
  if (!cost.allFinite()) throw InvalidInput("linear_sum_assignment: non-finite cost");
  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  std::vector<char> used(n + 1);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::fill(minv.begin(), minv.end(), kInf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = kInf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(static_cast<Eigen::Index>(i0 - 1), static_cast<Eigen::Index>(j - 1)) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  out.column_of_row.assign(n, 0);
  for (std::size_t j = 1; j <= n; ++j) out.column_of_row[p[j] - 1] = j - 1;
  for (std::size_t i = 0; i < n; ++i)
    out.total_cost += cost(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(out.column_of_row[i]));
  return out;
}

inline Eigen::MatrixXd pose_cost_matrix(const std::vector<GraspPose>& a, const std::vector<GraspPose>& b) {
  Eigen::MatrixXd c(static_cast<Eigen::Index>(a.size()), static_cast<Eigen::Index>(b.size()));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b.size(); ++j)
      c(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = pose_distance(a[i], b[j]);
  return c;
}

struct EmdResult {
  double mean = 0.0;
  std::vector<double> per_repeat;
  std::size_t subsample = 0;
};

/// Mean optimal one-to-one matching cost between random equal-size
/// subsamples of two grasp sets, averaged over repeats.
inline EmdResult emd(const std::vector<GraspPose>& a, const std::vector<GraspPose>& b, std::size_t n_sub = 500,
                     std::size_t repeats = 5, std::uint64_t seed = 0) {
  if (a.empty() || b.empty()) throw InvalidInput("emd: empty grasp set");
  if (repeats < 1) throw InvalidInput("emd: repeats must be >= 1");
  EmdResult out;
  out.subsample = std::min({n_sub, a.size(), b.size()});
  Rng rng(seed);
  for (std::size_t r = 0; r < repeats; ++r) {
    std::vector<GraspPose> sa, sb;
    for (std::size_t i : rng.choose(a.size(), out.subsample)) sa.push_back(a[i]);
    for (std::size_t i : rng.choose(b.size(), out.subsample)) sb.push_back(b[i]);
    const Assignment as = linear_sum_assignment(pose_cost_matrix(sa, sb));
    out.per_repeat.push_back(as.total_cost / static_cast<double>(out.subsample));
  }
  out.mean = std::accumulate(out.per_repeat.begin(), out.per_repeat.end(), 0.0) /
             static_cast<double>(out.per_repeat.size());
  return out;
}

struct EmdReport {
  std::vector<std::string> object_ids;
  std::vector<double> values;
  std::size_t subsample = 0;
  std::size_t repeats = 0;
  double aggregate_mean = 0.0;
};

// ---------------------------------------------------------------------------

struct EvalObject {
  std::string id;
  TriangleMesh mesh;
  PointCloud cloud;                 // mean-centered, centroid recorded
  std::vector<GraspPose> gt_positives;
};

struct SweepRow {
  std::size_t batch = 0;
  double threshold = 0.0;
  std::string object_id;  // "all" for the pooled row
  std::size_t retained = 0;
  std::size_t positives = 0;
  std::optional<double> precision;  // undefined when nothing is retained
};

/// Full batch-size x threshold sweep. For each object and batch size the
/// generator is sampled once; thresholds are applied to the same scores.
inline std::vector<SweepRow> tuning_sweep(const GeneratorCheckpoint& gen, const DiscriminatorCheckpoint& disc,
                                          const std::vector<EvalObject>& objects, const GripperModel& gripper,
                                          const std::vector<std::size_t>& batch_sizes,
                                          const std::vector<double>& thresholds, std::uint64_t seed) {
  if (batch_sizes.empty() || thresholds.empty()) throw InvalidInput("tuning_sweep: empty grid");
  std::vector<SweepRow> rows;
  for (std::size_t bi = 0; bi < batch_sizes.size(); ++bi) {
    const std::size_t B = batch_sizes[bi];
    std::vector<SweepRow> pooled(thresholds.size());
    for (std::size_t k = 0; k < objects.size(); ++k) {
      const auto& obj = objects[k];
      const auto grasps = sample_grasps(obj.cloud, gen, B, derive_seed(seed, k * 1000003 + B));
      const ScoredGrasps scored = score_grasps(obj.cloud, grasps, disc);
      const auto labels = oracle_labels(grasps, obj.mesh, gripper);
      for (std::size_t ti = 0; ti < thresholds.size(); ++ti) {
        SweepRow r{B, thresholds[ti], obj.id, 0, 0, std::nullopt};
        for (std::size_t i = 0; i < grasps.size(); ++i) {
          if (scored.scores[i] >= thresholds[ti]) {
            ++r.retained;
            r.positives += labels[i];
          }
        }
        if (r.retained > 0) r.precision = static_cast<double>(r.positives) / static_cast<double>(r.retained);
        pooled[ti].retained += r.retained;
        pooled[ti].positives += r.positives;
        rows.push_back(std::move(r));
      }
    }
    for (std::size_t ti = 0; ti < thresholds.size(); ++ti) {
      SweepRow r{B, thresholds[ti], "all", pooled[ti].retained, pooled[ti].positives, std::nullopt};
      if (r.retained > 0) r.precision = static_cast<double>(r.positives) / static_cast<double>(r.retained);
      rows.push_back(std::move(r));
    }
  }
  return rows;
}

}  // namespace graspgen

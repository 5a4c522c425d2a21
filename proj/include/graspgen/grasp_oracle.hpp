#pragma once

// Analytic grasp-success oracles, candidate proposal sampling and the
// line-delimited grasp dataset format.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Eigenvalues>
#include <nlohmann/json.hpp>

#include "graspgen/error.hpp"
#include "graspgen/mesh.hpp"
#include "graspgen/point_cloud.hpp"
#include "graspgen/random.hpp"
#include "graspgen/se3.hpp"

namespace graspgen {

enum class GripperKind { ParallelJaw, Suction };

inline std::string gripper_name(GripperKind k) {
  return k == GripperKind::ParallelJaw ? "parallel_jaw" : "suction";
}

inline GripperKind parse_gripper(const std::string& s) {
  if (s == "parallel_jaw") return GripperKind::ParallelJaw;
  if (s == "suction") return GripperKind::Suction;
  throw InvalidInput("unknown gripper kind '" + s + "'");
}

/// Gripper frame: `approach_axis` points from the palm toward the object; the
/// jaws close along the next axis cyclically (z approach -> x closing). The
/// grasp origin is the midpoint of the closing segment (jaw) or the cup
/// center (suction).
struct GripperModel {
  GripperKind kind = GripperKind::ParallelJaw;
  double max_width = 0.08;
  double finger_depth = 0.05;  // suction: length of the approach stroke
  double friction_mu = 0.5;
  double cup_radius = 0.015;
  int approach_axis = 2;

  double finger_thickness = 0.01;
  double finger_width = 0.02;
  double palm_thickness = 0.02;
  double tip_extension = 0.01;     // finger length past the closing line
  double collision_margin = 0.001;
  double suction_max_angle = 15.0 * std::numbers::pi / 180.0;
  double suction_flatness = 0.1;   // fraction of cup_radius

  static GripperModel parallel_jaw() { return {}; }
  static GripperModel suction() {
    GripperModel g;
    g.kind = GripperKind::Suction;
    return g;
  }

  void validate() const {
    if (approach_axis < 0 || approach_axis > 2) throw InvalidInput("gripper: approach_axis must be 0, 1 or 2");
    if (!(friction_mu > 0.0)) throw InvalidInput("gripper: friction_mu must be positive");
    if (kind == GripperKind::ParallelJaw && !(max_width > 0.0))
      throw InvalidInput("gripper: max_width must be positive");
    if (kind == GripperKind::Suction && !(cup_radius > 0.0))
      throw InvalidInput("gripper: cup_radius must be positive");
    if (!(finger_depth > 0.0)) throw InvalidInput("gripper: finger_depth must be positive");
  }

  /// Margin used to inflate the mesh bounding box for proposals.
  double proposal_margin() const { return kind == GripperKind::ParallelJaw ? max_width : 2.0 * cup_radius; }

  nlohmann::json to_json() const {
    return {{"kind", gripper_name(kind)},         {"max_width", max_width},
            {"finger_depth", finger_depth},       {"friction_mu", friction_mu},
            {"cup_radius", cup_radius},           {"approach_axis", approach_axis},
            {"finger_thickness", finger_thickness}, {"finger_width", finger_width},
            {"palm_thickness", palm_thickness},   {"tip_extension", tip_extension},
            {"collision_margin", collision_margin}};
  }
};

struct LabeledGraspSet {
  std::string object_id;
  GripperKind gripper = GripperKind::ParallelJaw;
  std::vector<GraspPose> grasps;
  std::vector<std::uint8_t> labels;  // 1 = positive

  std::size_t size() const { return grasps.size(); }

  void check() const {
    if (grasps.size() != labels.size()) throw InvalidInput("grasp set: grasps and labels differ in length");
  }

  std::vector<GraspPose> select(bool positive) const {
    std::vector<GraspPose> out;
    for (std::size_t i = 0; i < grasps.size(); ++i)
      if ((labels[i] != 0) == positive) out.push_back(grasps[i]);
    return out;
  }
  std::vector<GraspPose> positives() const { return select(true); }
  std::vector<GraspPose> negatives() const { return select(false); }

  std::size_t positive_count() const {
    return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), std::uint8_t{1}));
  }
  double positive_rate() const {
    return grasps.empty() ? 0.0 : static_cast<double>(positive_count()) / static_cast<double>(grasps.size());
  }
};

namespace detail {

/// Rows are the canonical (closing, lateral, approach) axes in gripper coordinates.
inline Eigen::Matrix3d canonical_axes(int approach_axis) {
  Eigen::Matrix3d m = Eigen::Matrix3d::Zero();
  m(0, (approach_axis + 1) % 3) = 1.0;
  m(1, (approach_axis + 2) % 3) = 1.0;
  m(2, approach_axis) = 1.0;
  return m;
}

/// Mesh expressed in the canonical grasp frame (x closing, z approach).
inline TriangleMesh to_grasp_frame(const TriangleMesh& mesh, const GraspPose& grasp, int approach_axis) {
  const Eigen::Matrix3d world_to_local = canonical_axes(approach_axis) * grasp.rotation.transpose();
  return mesh.transformed(world_to_local, -world_to_local * grasp.translation);
}

}  // namespace detail

/// Parallel-jaw oracle: two opposing contacts on the closing segment, both
/// inside the friction cone, and a collision-free finger/palm body.
inline bool label_antipodal(const TriangleMesh& mesh, const GraspPose& grasp, const GripperModel& g) {
  if (g.kind != GripperKind::ParallelJaw) throw InvalidInput("label_antipodal: parallel-jaw gripper required");
  const double w = g.max_width;
  const double reach = w / 2 + g.finger_thickness + g.finger_depth + g.palm_thickness + g.collision_margin;
  const Eigen::Vector3d c = mesh.bounds().center();
  if ((c - grasp.translation).norm() > mesh.bounding_radius() + reach) return false;

  const TriangleMesh local = detail::to_grasp_frame(mesh, grasp, g.approach_axis);
  const auto left = cast_ray(local, {-w / 2, 0.0, 0.0}, Eigen::Vector3d::UnitX(), w);
  if (!left) return false;
  const auto right = cast_ray(local, {w / 2, 0.0, 0.0}, -Eigen::Vector3d::UnitX(), w);
  if (!right) return false;
  if (left->point.x() > right->point.x()) return false;

  const double cone = std::cos(std::atan(g.friction_mu));
  if (-left->normal.x() < cone || right->normal.x() < cone) return false;

  const double m = g.collision_margin;
  const double z_tip = g.tip_extension;
  const double z_base = g.tip_extension - g.finger_depth;
  const Eigen::Vector3d finger_half(g.finger_thickness / 2 + m, g.finger_width / 2 + m, g.finger_depth / 2 + m);
  // Inner finger faces sit at +-w/2 after inflation: the margin never eats
  // into the opening, so anything up to max_width across fits.
  const double finger_x = w / 2 + m + g.finger_thickness / 2;
  const double finger_z = 0.5 * (z_tip + z_base);
  if (mesh_intersects_box(local, {-finger_x, 0.0, finger_z}, finger_half)) return false;
  if (mesh_intersects_box(local, {finger_x, 0.0, finger_z}, finger_half)) return false;
  const Eigen::Vector3d palm_half(w / 2 + g.finger_thickness + m, g.finger_width / 2 + m, g.palm_thickness / 2 + m);
  if (mesh_intersects_box(local, {0.0, 0.0, z_base - g.palm_thickness / 2}, palm_half)) return false;
  return true;
}

/// Suction oracle: the approach ray reaches the surface within the stroke,
/// the surface normal is within the angle gate, and the patch under the cup
/// is planar to within suction_flatness * cup_radius.
inline bool label_suction(const TriangleMesh& mesh, const GraspPose& grasp, const GripperModel& g) {
  if (g.kind != GripperKind::Suction) throw InvalidInput("label_suction: suction gripper required");
  const double r = g.cup_radius;
  const Eigen::Vector3d c = mesh.bounds().center();
  if ((c - grasp.translation).norm() > mesh.bounding_radius() + g.finger_depth + r) return false;

  const TriangleMesh local = detail::to_grasp_frame(mesh, grasp, g.approach_axis);
  const Eigen::Vector3d dir = Eigen::Vector3d::UnitZ();
  const auto center = cast_ray(local, Eigen::Vector3d::Zero(), dir, g.finger_depth);
  if (!center) return false;
  if (-center->normal.z() < std::cos(g.suction_max_angle)) return false;

  // Rays parallel to the approach axis over the cup footprint.
  std::vector<Eigen::Vector3d> patch{center->point};
  const double stroke = center->t + 2.0 * r;
  for (double ring : {0.5 * r, r}) {
    for (int k = 0; k < 8; ++k) {
      const double a = 2.0 * std::numbers::pi * k / 8;
      const Eigen::Vector3d o(ring * std::cos(a), ring * std::sin(a), 0.0);
      const auto hit = cast_ray(local, o, dir, stroke);
      if (!hit || hit->normal.z() >= 0.0) return false;
      patch.push_back(hit->point);
    }
  }
  Eigen::Vector3d mean = Eigen::Vector3d::Zero();
  for (const auto& p : patch) mean += p;
  mean /= static_cast<double>(patch.size());
  Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
  for (const auto& p : patch) cov += (p - mean) * (p - mean).transpose();
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(cov);
  const Eigen::Vector3d normal = es.eigenvectors().col(0);
  double dev = 0.0;
  for (const auto& p : patch) dev = std::max(dev, std::abs((p - mean).dot(normal)));
  return dev <= g.suction_flatness * r;
}

inline bool label_grasp(const TriangleMesh& mesh, const GraspPose& grasp, const GripperModel& g) {
  return g.kind == GripperKind::ParallelJaw ? label_antipodal(mesh, grasp, g) : label_suction(mesh, grasp, g);
}

// ---------------------------------------------------------------------------
// Proposals.

struct ProposalConfig {
  /// Share of proposals drawn uniformly in the inflated bounding box; the
  /// rest are anchored on a surface point along the closing/approach axis.
  double box_fraction = 0.25;
};

/// Orientations are Haar-uniform. Translations lie in the mesh bounding box
/// inflated by GripperModel::proposal_margin().
inline std::vector<GraspPose> sample_candidate_grasps(const TriangleMesh& mesh, std::size_t n,
                                                      const GripperModel& g, std::uint64_t seed,
                                                      const ProposalConfig& cfg = {}) {
  if (n < 1) throw InvalidInput("sample_candidate_grasps: n must be >= 1");
  if (mesh.empty()) throw InvalidInput("sample_candidate_grasps: empty mesh");
  g.validate();
  Rng rng(seed);
  const Eigen::AlignedBox3d box = mesh.bounds();
  const double margin = g.proposal_margin();
  const Eigen::Vector3d lo = box.min().array() - margin;
  const Eigen::Vector3d hi = box.max().array() + margin;
  const PointCloud anchors = sample_surface(mesh, n, derive_seed(seed, 1));
  const Eigen::Matrix3d axes = detail::canonical_axes(g.approach_axis);

  std::vector<GraspPose> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    GraspPose pose;
    pose.rotation = random_rotation(rng);
    const double pick = rng.uniform();
    const double along = rng.uniform();
    if (pick < cfg.box_fraction) {
      for (int k = 0; k < 3; ++k) pose.translation[k] = lo[k] + (hi[k] - lo[k]) * rng.uniform();
    } else {
      const Eigen::Vector3d p = anchors.point(static_cast<Eigen::Index>(i));
      const Eigen::Matrix3d world_axes = pose.rotation * axes.transpose();
      if (g.kind == GripperKind::ParallelJaw) {
        pose.translation = p + (along - 0.5) * g.max_width * world_axes.col(0);
      } else {
        pose.translation = p - along * std::min(g.finger_depth, margin) * world_axes.col(2);
      }
    }
    out.push_back(pose);
  }
  return out;
}

struct ObjectEntry {
  std::string id;
  TriangleMesh mesh;
};

struct DatasetBuild {
  std::vector<LabeledGraspSet> sets;
  std::vector<double> positive_rates;
  std::vector<std::string> zero_positive;  // flagged, still retained
};

inline DatasetBuild build_offline_dataset(const std::vector<ObjectEntry>& objects, const GripperModel& g,
                                          std::size_t n_per_object, std::uint64_t seed,
                                          const ProposalConfig& cfg = {}) {
  if (n_per_object < 1) throw InvalidInput("build_offline_dataset: n_per_object must be >= 1");
  g.validate();
  DatasetBuild out;
  for (std::size_t k = 0; k < objects.size(); ++k) {
    const auto& obj = objects[k];
    LabeledGraspSet set{obj.id, g.kind, {}, {}};
    set.grasps = sample_candidate_grasps(obj.mesh, n_per_object, g, derive_seed(seed, k), cfg);
    set.labels.reserve(set.grasps.size());
    for (const auto& grasp : set.grasps) set.labels.push_back(label_grasp(obj.mesh, grasp, g) ? 1 : 0);
    out.positive_rates.push_back(set.positive_rate());
    if (set.positive_count() == 0) out.zero_positive.push_back(obj.id);
    out.sets.push_back(std::move(set));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Line-delimited JSON: a header record, then one record per grasp:
//   {"object_id", "gripper", "quat_wxyz": [4], "trans": [3], "label"[, "score"]}

inline constexpr int kGraspFormatVersion = 1;

inline nlohmann::json grasp_record(const std::string& object_id, GripperKind kind, const GraspPose& pose,
                                   int label) {
  const auto q = to_quat_wxyz(pose.rotation);
  return {{"object_id", object_id},
          {"gripper", gripper_name(kind)},
          {"quat_wxyz", {q[0], q[1], q[2], q[3]}},
          {"trans", {pose.translation.x(), pose.translation.y(), pose.translation.z()}},
          {"label", label}};
}

inline GraspPose parse_pose(const nlohmann::json& rec) {
  const auto q = rec.at("quat_wxyz").get<std::array<double, 4>>();
  const auto t = rec.at("trans").get<std::array<double, 3>>();
  return {from_quat_wxyz(q), Eigen::Vector3d(t[0], t[1], t[2])};
}

inline nlohmann::json grasp_file_header(const GripperModel& g, const std::string& config_hash,
                                        const std::string& provenance) {
  return {{"format", "graspgen-grasps"},
          {"version", kGraspFormatVersion},
          {"oracle", g.to_json()},
          {"config_hash", config_hash},
          {"provenance", provenance}};
}

inline std::string write_grasp_lines(const LabeledGraspSet& set, const nlohmann::json& header,
                                     const std::vector<double>* scores = nullptr) {
  set.check();
  std::string out = header.dump() + "\n";
  for (std::size_t i = 0; i < set.size(); ++i) {
    auto rec = grasp_record(set.object_id, set.gripper, set.grasps[i], set.labels[i]);
    if (scores) rec["score"] = (*scores)[i];
    out += rec.dump() + "\n";
  }
  return out;
}

struct GraspFile {
  nlohmann::json header;
  LabeledGraspSet set;
  std::vector<double> scores;  // empty unless every record carries a score
};

inline GraspFile read_grasp_lines(std::istream& in) {
  GraspFile f;
  std::string line;
  std::size_t line_no = 0;
  bool all_scored = true;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("grasp file line " + std::to_string(line_no) + ": " + e.what());
    }
    if (line_no == 1) {
      if (rec.value("format", "") != "graspgen-grasps") throw FormatError("grasp file: missing header");
      if (rec.value("version", 0) != kGraspFormatVersion) throw FormatError("grasp file: unsupported version");
      f.header = rec;
      continue;
    }
    f.set.object_id = rec.at("object_id").get<std::string>();
    f.set.gripper = parse_gripper(rec.at("gripper").get<std::string>());
    f.set.grasps.push_back(parse_pose(rec));
    f.set.labels.push_back(static_cast<std::uint8_t>(rec.at("label").get<int>() != 0));
    if (rec.contains("score")) {
      f.scores.push_back(rec["score"].get<double>());
    } else {
      all_scored = false;
    }
  }
  if (f.header.is_null()) throw FormatError("grasp file: empty");
  if (!all_scored) f.scores.clear();
  return f;
}

inline GraspFile load_grasp_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path);
  return read_grasp_lines(in);
}

}  // namespace graspgen

#pragma once

// Grasp discriminator: a scoring head over [frozen object embedding, grasp
// coordinates], trained on offline, on-generator or mixed labeled grasps.

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "graspgen/autodiff.hpp"
#include "graspgen/diffusion.hpp"
#include "graspgen/error.hpp"
#include "graspgen/grasp_oracle.hpp"
#include "graspgen/nn.hpp"
#include "graspgen/random.hpp"

namespace graspgen {

enum class Provenance { Offline, OnGenerator, Mixed };

inline std::string provenance_name(Provenance p) {
  switch (p) {
    case Provenance::Offline: return "offline";
    case Provenance::OnGenerator: return "on_generator";
    case Provenance::Mixed: return "mixed";
  }
  return "?";
}

inline Provenance parse_provenance(const std::string& s) {
  if (s == "offline") return Provenance::Offline;
  if (s == "on_generator" || s == "ongen") return Provenance::OnGenerator;
  if (s == "mixed") return Provenance::Mixed;
  throw InvalidInput("unknown provenance '" + s + "'");
}

struct ScoredGrasps {
  std::vector<GraspPose> grasps;
  std::vector<double> scores;
  std::vector<std::size_t> source_index;  // position in the unfiltered list
  bool empty_flag = false;

  std::size_t size() const { return grasps.size(); }
};

/// Samples B grasps per object with the generator and labels each with the
/// oracle. Object k draws from derive_seed(seed, k).
inline std::vector<LabeledGraspSet> build_on_generator_dataset(const GeneratorCheckpoint& gen,
                                                               const std::vector<ObjectEntry>& objects,
                                                               const std::vector<PointCloud>& clouds,
                                                               const GripperModel& gripper, std::size_t B,
                                                               std::uint64_t seed) {
  if (objects.size() != clouds.size()) throw InvalidInput("build_on_generator_dataset: one cloud per object");
  std::vector<LabeledGraspSet> out;
  for (std::size_t k = 0; k < objects.size(); ++k) {
    LabeledGraspSet set{objects[k].id, gripper.kind, sample_grasps(clouds[k], gen, B, derive_seed(seed, k)), {}};
    for (const auto& g : set.grasps) set.labels.push_back(label_grasp(objects[k].mesh, g, gripper) ? 1 : 0);
    out.push_back(std::move(set));
  }
  return out;
}

struct DiscriminatorConfig {
  std::vector<int> hidden{256, 256};
  int steps = 3000;
  double lr = 1e-3;
  int batch = 256;
  std::uint64_t seed = 0;
  Provenance provenance = Provenance::OnGenerator;
  double mix_ratio = 0.5;       // share of on-generator rows in mixed mode
  bool balance_labels = true;   // draw positives and negatives 50-50 per object

  void validate() const {
    if (batch < 1 || steps < 0) throw InvalidInput("discriminator: batch must be >= 1 and steps >= 0");
    if (!(lr > 0.0)) throw InvalidInput("discriminator: lr must be positive");
    if (!(mix_ratio >= 0.0 && mix_ratio <= 1.0)) throw InvalidInput("discriminator: mix_ratio outside [0, 1]");
  }
};

struct DiscriminatorCheckpoint {
  nn::EncoderWeights encoder;  // frozen copy of the generator encoder
  nn::Mlp head;
  double kappa = 1.0;
  RotationReprKind repr = RotationReprKind::LieAlgebra;
  Provenance provenance = Provenance::OnGenerator;
  std::uint64_t config_hash = 0;

  int input_width() const { return encoder.embedding_dim + grasp_width(repr); }

  nn::Checkpoint to_checkpoint() const {
    nn::Checkpoint ck;
    ck.put_scalar("meta.kappa", kappa);
    ck.put_u64("meta.config_hash", config_hash);
    ck.put_scalar("meta.repr", static_cast<double>(repr));
    ck.put_scalar("meta.provenance", static_cast<double>(provenance));
    ck.put_scalar("meta.embedding_dim", encoder.embedding_dim);
    const auto& w = head.spec().widths;
    ck.put_vector("meta.head_widths", {w.begin(), w.end()});
    ck.store(encoder.parameters());
    ck.store(head.parameters());
    return ck;
  }

  static DiscriminatorCheckpoint from_checkpoint(const nn::Checkpoint& ck) {
    DiscriminatorCheckpoint d;
    d.kappa = ck.scalar("meta.kappa");
    d.config_hash = ck.u64("meta.config_hash");
    d.repr = static_cast<RotationReprKind>(static_cast<int>(ck.scalar("meta.repr")));
    d.provenance = static_cast<Provenance>(static_cast<int>(ck.scalar("meta.provenance")));
    Rng rng(0);
    d.encoder = nn::EncoderWeights(static_cast<int>(ck.scalar("meta.embedding_dim")), rng);
    std::vector<int> widths;
    for (double v : ck.vector("meta.head_widths")) widths.push_back(static_cast<int>(v));
    d.head = nn::Mlp({widths}, rng, "disc.head");
    if (d.head.in_width() != d.input_width()) throw FormatError("discriminator checkpoint: head width mismatch");
    auto enc = d.encoder.parameters();
    ck.restore(enc);
    auto head = d.head.parameters();
    ck.restore(head);
    return d;
  }
};

/// Everything the discriminator trainer needs for one object. Either grasp
/// set may be empty depending on the provenance mode.
struct DiscriminatorObject {
  std::string id;
  std::vector<PointCloud> views;
  LabeledGraspSet offline;
  LabeledGraspSet on_generator;
};

namespace detail {

inline ad::Matrix grasp_features(const Eigen::VectorXd& embedding, const std::vector<GraspPose>& grasps,
                                 const Eigen::Vector3d& centroid, double kappa, RotationReprKind repr) {
  const Eigen::Index e = embedding.size();
  const int d = grasp_width(repr);
  ad::Matrix x(static_cast<Eigen::Index>(grasps.size()), e + d);
  for (std::size_t i = 0; i < grasps.size(); ++i) {
    x.row(static_cast<Eigen::Index>(i)).head(e) = embedding.transpose();
    x.row(static_cast<Eigen::Index>(i)).tail(d) = normalize_grasp(grasps[i], centroid, kappa, repr).transpose();
  }
  return x;
}

struct LabelIndex {
  std::vector<std::size_t> pos, neg;
  explicit LabelIndex(const LabeledGraspSet& s) {
    for (std::size_t i = 0; i < s.size(); ++i) (s.labels[i] ? pos : neg).push_back(i);
  }
  bool empty() const { return pos.empty() && neg.empty(); }
};

}  // namespace detail

struct DiscriminatorReport {
  std::vector<double> losses;
  std::size_t positives = 0;
  std::size_t negatives = 0;
};

/// Trains only the scoring head; the encoder is copied from the generator and
/// never receives gradients.
inline DiscriminatorCheckpoint train_discriminator(const std::vector<DiscriminatorObject>& objects,
                                                   const nn::EncoderWeights& frozen_encoder, double kappa,
                                                   RotationReprKind repr, const DiscriminatorConfig& cfg,
                                                   DiscriminatorReport* report = nullptr) {
  cfg.validate();
  DiscriminatorCheckpoint out;
  out.kappa = kappa;
  out.repr = repr;
  out.provenance = cfg.provenance;
  out.encoder = frozen_encoder;
  {
    // Deep copy: the checkpoint owns its encoder tensors.
    Rng dummy(0);
    out.encoder = nn::EncoderWeights(frozen_encoder.embedding_dim, dummy);
    auto dst = out.encoder.parameters();
    const auto src = frozen_encoder.parameters();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i].mutable_value() = src[i].value();
  }
  Rng init_rng(derive_seed(cfg.seed, 0xd15c));
  std::vector<int> widths{out.input_width()};
  widths.insert(widths.end(), cfg.hidden.begin(), cfg.hidden.end());
  widths.push_back(1);
  out.head = nn::Mlp({widths}, init_rng, "disc.head");

  // Frozen embeddings, one per view.
  std::vector<std::vector<Eigen::VectorXd>> embeddings(objects.size());
  for (std::size_t k = 0; k < objects.size(); ++k)
    for (const auto& v : objects[k].views) embeddings[k].push_back(nn::encode_cloud(v, out.encoder));

  const bool use_off = cfg.provenance != Provenance::OnGenerator;
  const bool use_on = cfg.provenance != Provenance::Offline;
  std::vector<detail::LabelIndex> off_idx, on_idx;
  std::size_t pos = 0, neg = 0;
  std::vector<std::size_t> usable;
  for (std::size_t k = 0; k < objects.size(); ++k) {
    off_idx.emplace_back(use_off ? objects[k].offline : LabeledGraspSet{});
    on_idx.emplace_back(use_on ? objects[k].on_generator : LabeledGraspSet{});
    pos += off_idx.back().pos.size() + on_idx.back().pos.size();
    neg += off_idx.back().neg.size() + on_idx.back().neg.size();
    if (!objects[k].views.empty() && (!off_idx.back().empty() || !on_idx.back().empty())) usable.push_back(k);
  }
  if (pos == 0 || neg == 0) throw DegenerateLabels("train_discriminator: training labels contain a single class");
  if (report) {
    report->positives = pos;
    report->negatives = neg;
  }

  Rng rng(derive_seed(cfg.seed, 0x7ea2));
  nn::Adam opt(out.head.parameters(), {cfg.lr});
  const int d = grasp_width(repr);
  const Eigen::Index e = out.encoder.embedding_dim;
  for (int s = 0; s < cfg.steps; ++s) {
    ad::Matrix x(cfg.batch, e + d);
    ad::Matrix y(cfg.batch, 1);
    for (int r = 0; r < cfg.batch; ++r) {
      const std::size_t k = usable[rng.index(usable.size())];
      const std::size_t v = rng.index(objects[k].views.size());
      bool from_on = use_on;
      if (use_on && use_off) from_on = rng.uniform() < cfg.mix_ratio;
      if (from_on && on_idx[k].empty()) from_on = false;
      if (!from_on && off_idx[k].empty()) from_on = true;
      const LabeledGraspSet& set = from_on ? objects[k].on_generator : objects[k].offline;
      const detail::LabelIndex& idx = from_on ? on_idx[k] : off_idx[k];
      std::size_t i;
      if (cfg.balance_labels && !idx.pos.empty() && !idx.neg.empty()) {
        const auto& cls = rng.uniform() < 0.5 ? idx.pos : idx.neg;
        i = cls[rng.index(cls.size())];
      } else {
        i = rng.index(set.size());
      }
      x.row(r).head(e) = embeddings[k][v].transpose();
      x.row(r).tail(d) = normalize_grasp(set.grasps[i], objects[k].views[v].centroid, kappa, repr).transpose();
      y(r, 0) = set.labels[i] ? 1.0 : 0.0;
    }
    opt.zero_grad();
    const ad::Tensor loss = ad::bce_with_logits(out.head(ad::Tensor::constant(std::move(x))), y);
    loss.backward();
    opt.step();
    if (report) report->losses.push_back(loss.item());
  }
  return out;
}

/// Raw sigmoid scores for precomputed head inputs.
inline std::vector<double> score_features(const DiscriminatorCheckpoint& disc, ad::Matrix features) {
  ad::NoGradGuard no_grad;
  const ad::Matrix logits = disc.head(ad::Tensor::constant(std::move(features))).value();
  std::vector<double> s(static_cast<std::size_t>(logits.rows()));
  for (Eigen::Index i = 0; i < logits.rows(); ++i) s[static_cast<std::size_t>(i)] = ad::sigmoid_scalar(logits(i, 0));
  return s;
}

/// One embedding per cloud, reused for every grasp. Grasps are in the object
/// frame; the cloud carries its centroid.
inline ScoredGrasps score_grasps(const PointCloud& cloud, const std::vector<GraspPose>& grasps,
                                 const DiscriminatorCheckpoint& disc) {
  ScoredGrasps out;
  out.grasps = grasps;
  out.source_index.resize(grasps.size());
  std::iota(out.source_index.begin(), out.source_index.end(), std::size_t{0});
  if (grasps.empty()) {
    out.empty_flag = true;
    return out;
  }
  const Eigen::VectorXd emb = nn::encode_cloud(cloud, disc.encoder);
  out.scores = score_features(disc, detail::grasp_features(emb, grasps, cloud.centroid, disc.kappa, disc.repr));
  return out;
}

/// Keeps scores >= threshold, then the top_k by score (ties by original
/// index). An empty result is valid and flagged.
inline ScoredGrasps filter_grasps(const ScoredGrasps& scored, double threshold, std::size_t top_k) {
  if (!(threshold >= 0.0 && threshold <= 1.0)) throw InvalidInput("filter_grasps: threshold outside [0, 1]");
  if (top_k < 1) throw InvalidInput("filter_grasps: top_k must be >= 1");
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < scored.size(); ++i)
    if (scored.scores[i] >= threshold) keep.push_back(i);
  std::stable_sort(keep.begin(), keep.end(),
                   [&](std::size_t a, std::size_t b) { return scored.scores[a] > scored.scores[b]; });
  if (keep.size() > top_k) keep.resize(top_k);
  ScoredGrasps out;
  for (std::size_t i : keep) {
    out.grasps.push_back(scored.grasps[i]);
    out.scores.push_back(scored.scores[i]);
    out.source_index.push_back(scored.source_index.empty() ? i : scored.source_index[i]);
  }
  out.empty_flag = out.grasps.empty();
  return out;
}

}  // namespace graspgen

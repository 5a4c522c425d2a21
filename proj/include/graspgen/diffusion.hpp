#pragma once

// DDPM grasp generator over SO(3) x R^3. Translations are scaled by kappa and
// rotations are carried in a [-1, 1] representation; the two channels are
// noised and denoised with independent schedules.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "graspgen/autodiff.hpp"
#include "graspgen/error.hpp"
#include "graspgen/grasp_oracle.hpp"
#include "graspgen/nn.hpp"
#include "graspgen/point_cloud.hpp"
#include "graspgen/random.hpp"
#include "graspgen/se3.hpp"

namespace graspgen {

struct NoiseSchedule {
  std::vector<double> betas;
  std::vector<double> alphas;
  std::vector<double> alpha_bars;

  int steps() const { return static_cast<int>(betas.size()); }

  static NoiseSchedule from_betas(std::vector<double> betas) {
    NoiseSchedule s;
    s.betas = std::move(betas);
    double prod = 1.0;
    for (double b : s.betas) {
      s.alphas.push_back(1.0 - b);
      prod *= 1.0 - b;
      s.alpha_bars.push_back(prod);
    }
    s.validate();
    return s;
  }

  /// Betas evenly spaced from `start` to `end` over T steps.
  static NoiseSchedule linear(int T, double start, double end) {
    if (T < 1) throw InvalidInput("noise schedule: T must be >= 1");
    std::vector<double> b(static_cast<std::size_t>(T));
    for (int t = 0; t < T; ++t) b[t] = T == 1 ? start : start + (end - start) * t / (T - 1);
    if (T > 1) b.back() = end;  // exact endpoint, free of rounding
    return from_betas(std::move(b));
  }

  void validate() const {
    if (betas.empty()) throw InvalidInput("noise schedule: empty");
    for (double b : betas)
      if (!(b > 0.0 && b < 1.0)) throw InvalidInput("noise schedule: beta outside (0, 1)");
    for (std::size_t t = 1; t < alpha_bars.size(); ++t)
      if (!(alpha_bars[t] < alpha_bars[t - 1])) throw InvalidInput("noise schedule: alpha_bar not decreasing");
  }
};

struct DualSchedule {
  NoiseSchedule translation;
  NoiseSchedule rotation;

  int steps() const { return translation.steps(); }
  const NoiseSchedule& channel(bool is_translation) const { return is_translation ? translation : rotation; }
};

enum class KappaReduction { MeanAxis, MaxAxis };
enum class ReverseVariance { Beta, Posterior };

struct NormalizationStats {
  double kappa = 1.0;
  std::size_t objects_used = 0;
  std::size_t objects_skipped = 0;  // no positive grasps
};

/// kappa = 1 / mean over objects of the positive-grasp translation extent.
inline NormalizationStats compute_kappa(const std::vector<LabeledGraspSet>& sets,
                                        KappaReduction reduction = KappaReduction::MeanAxis) {
  NormalizationStats stats;
  double total = 0.0;
  for (const auto& set : sets) {
    set.check();
    Eigen::Vector3d lo = Eigen::Vector3d::Constant(std::numeric_limits<double>::infinity());
    Eigen::Vector3d hi = -lo;
    std::size_t count = 0;
    for (std::size_t i = 0; i < set.size(); ++i) {
      if (!set.labels[i]) continue;
      lo = lo.cwiseMin(set.grasps[i].translation);
      hi = hi.cwiseMax(set.grasps[i].translation);
      ++count;
    }
    if (count == 0) {
      ++stats.objects_skipped;
      continue;
    }
    const Eigen::Vector3d extent = hi - lo;
    total += reduction == KappaReduction::MeanAxis ? extent.mean() : extent.maxCoeff();
    ++stats.objects_used;
  }
  if (stats.objects_used == 0) throw InvalidInput("compute_kappa: no object has a positive grasp");
  const double mean_extent = total / static_cast<double>(stats.objects_used);
  if (!(mean_extent > 0.0)) throw DegenerateExtent("compute_kappa: positive grasp translations have zero extent");
  stats.kappa = 1.0 / mean_extent;
  return stats;
}

// ---------------------------------------------------------------------------
// Grasp coordinates: [kappa * (t - centroid), rotation repr].

inline int grasp_width(RotationReprKind kind) { return 3 + repr_width(kind); }

inline Eigen::VectorXd normalize_grasp(const GraspPose& g, const Eigen::Vector3d& centroid, double kappa,
                                       RotationReprKind kind) {
  Eigen::VectorXd x(grasp_width(kind));
  x.head<3>() = kappa * (g.translation - centroid);
  x.tail(repr_width(kind)) = rotation_to_repr(g.rotation, kind).values;
  return x;
}

inline GraspPose denormalize_grasp(const Eigen::VectorXd& x, const Eigen::Vector3d& centroid, double kappa,
                                   RotationReprKind kind) {
  GraspPose g;
  g.translation = x.head<3>() / kappa + centroid;
  g.rotation = repr_to_rotation({kind, x.tail(repr_width(kind))});
  return g;
}

struct NoisedGrasp {
  Eigen::VectorXd noisy;
  Eigen::VectorXd noise;
};

/// q(x_t | x_0) per channel: sqrt(abar) x + sqrt(1 - abar) eps.
inline NoisedGrasp forward_noise(const Eigen::VectorXd& x, int t, const DualSchedule& sched, Rng& rng) {
  if (t < 0 || t >= sched.steps()) throw InvalidInput("forward_noise: timestep out of range");
  NoisedGrasp out{Eigen::VectorXd(x.size()), Eigen::VectorXd(x.size())};
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double abar = sched.channel(i < 3).alpha_bars[t];
    out.noise[i] = rng.normal();
    out.noisy[i] = std::sqrt(abar) * x[i] + std::sqrt(1.0 - abar) * out.noise[i];
  }
  return out;
}

inline NoisedGrasp forward_noise(const Eigen::VectorXd& x, int t, const DualSchedule& sched, std::uint64_t seed) {
  Rng rng(seed);
  return forward_noise(x, t, sched, rng);
}

// ---------------------------------------------------------------------------

struct GeneratorConfig {
  int T = 10;
  double beta_trans_start = 1e-4, beta_trans_end = 0.2;
  double beta_rot_start = 1e-4, beta_rot_end = 0.2;
  RotationReprKind repr = RotationReprKind::LieAlgebra;
  std::optional<double> fixed_kappa;
  KappaReduction kappa_reduction = KappaReduction::MeanAxis;
  ReverseVariance variance = ReverseVariance::Posterior;  // the "small" variance
  int embedding_dim = 128;
  std::vector<int> head_hidden{256, 256, 256, 256};
  int time_dims = 32;
  int steps = 20000;
  double lr = 1e-3;
  int batch = 128;           // grasps per step
  int clouds_per_step = 8;
  int cloud_points = 256;
  std::uint64_t seed = 0;
  double cloud_mix_ratio = 0.5;  // share of partial views per object

  DualSchedule schedule() const {
    return {NoiseSchedule::linear(T, beta_trans_start, beta_trans_end),
            NoiseSchedule::linear(T, beta_rot_start, beta_rot_end)};
  }

  void validate() const {
    if (T < 1) throw InvalidInput("generator: T must be >= 1");
    if (batch < 1 || clouds_per_step < 1 || batch % clouds_per_step != 0)
      throw InvalidInput("generator: batch must be a positive multiple of clouds_per_step");
    if (steps < 0) throw InvalidInput("generator: steps must be >= 0");
    if (!(lr > 0.0)) throw InvalidInput("generator: lr must be positive");
    if (fixed_kappa && !(*fixed_kappa > 0.0 && std::isfinite(*fixed_kappa)))
      throw InvalidInput("generator: fixed kappa must be positive");
    if (!(cloud_mix_ratio >= 0.0 && cloud_mix_ratio <= 1.0))
      throw InvalidInput("generator: cloud_mix_ratio outside [0, 1]");
    schedule();
  }
};

/// phi(t, x_t, X): object embedding, an MLP over sinusoidal timestep
/// features and an MLP over noisy grasp coordinates, concatenated into the
/// noise-prediction head.
class NoisePredictor {
 public:
  NoisePredictor() = default;
  NoisePredictor(const GeneratorConfig& cfg, Rng& rng)
      : repr_(cfg.repr), time_dims_(cfg.time_dims), steps_(cfg.T) {
    const int d = grasp_width(cfg.repr);
    encoder = nn::EncoderWeights(cfg.embedding_dim, rng);
    time_mlp = nn::Mlp({{cfg.time_dims, 64, 64}}, rng, "gen.time");
    grasp_mlp = nn::Mlp({{d, 128, 128}}, rng, "gen.grasp");
    std::vector<int> widths{cfg.embedding_dim + 64 + 128};
    widths.insert(widths.end(), cfg.head_hidden.begin(), cfg.head_hidden.end());
    widths.push_back(d);
    head = nn::Mlp({widths}, rng, "gen.head");
    time_table_.resize(cfg.T + 1, cfg.time_dims);
    for (int t = 0; t <= cfg.T; ++t) time_table_.row(t) = nn::positional_encoding(t, cfg.time_dims).transpose();
  }

  /// `embedding` holds one row per grasp row of `noisy`.
  ad::Tensor forward(const ad::Tensor& embedding, const std::vector<int>& timesteps, const ad::Tensor& noisy) const {
    ad::Matrix pe(static_cast<Eigen::Index>(timesteps.size()), time_dims_);
    for (std::size_t i = 0; i < timesteps.size(); ++i)
      pe.row(static_cast<Eigen::Index>(i)) = time_table_.row(timesteps[i]);
    const ad::Tensor time_feat = ad::relu(time_mlp(ad::Tensor::constant(std::move(pe))));
    const ad::Tensor grasp_feat = ad::relu(grasp_mlp(noisy));
    return head(ad::concat({embedding, time_feat, grasp_feat}));
  }

  std::vector<ad::Tensor> parameters() const {
    std::vector<ad::Tensor> out = encoder.parameters();
    for (const auto* m : {&time_mlp, &grasp_mlp, &head}) {
      auto p = m->parameters();
      out.insert(out.end(), p.begin(), p.end());
    }
    return out;
  }

  RotationReprKind repr() const { return repr_; }

  nn::EncoderWeights encoder;
  nn::Mlp time_mlp;
  nn::Mlp grasp_mlp;
  nn::Mlp head;

 private:
  RotationReprKind repr_ = RotationReprKind::LieAlgebra;
  int time_dims_ = 32;
  int steps_ = 10;
  ad::Matrix time_table_;
};

struct GeneratorCheckpoint {
  GeneratorConfig config;
  DualSchedule schedule;
  NormalizationStats norm;
  NoisePredictor net;
  std::uint64_t config_hash = 0;

  nn::Checkpoint to_checkpoint() const {
    nn::Checkpoint ck;
    ck.put_scalar("meta.kappa", norm.kappa);
    ck.put_u64("meta.config_hash", config_hash);
    ck.put_scalar("meta.T", config.T);
    ck.put_scalar("meta.repr", static_cast<double>(config.repr));
    ck.put_scalar("meta.variance", static_cast<double>(config.variance));
    ck.put_scalar("meta.embedding_dim", config.embedding_dim);
    ck.put_scalar("meta.time_dims", config.time_dims);
    ck.put_scalar("meta.cloud_points", config.cloud_points);
    ck.put_vector("meta.head_hidden", {config.head_hidden.begin(), config.head_hidden.end()});
    ck.put_vector("schedule.beta_trans", schedule.translation.betas);
    ck.put_vector("schedule.beta_rot", schedule.rotation.betas);
    ck.store(net.parameters());
    return ck;
  }

  static GeneratorCheckpoint from_checkpoint(const nn::Checkpoint& ck) {
    GeneratorCheckpoint g;
    g.config.T = static_cast<int>(ck.scalar("meta.T"));
    g.config.repr = static_cast<RotationReprKind>(static_cast<int>(ck.scalar("meta.repr")));
    g.config.variance = static_cast<ReverseVariance>(static_cast<int>(ck.scalar("meta.variance")));
    g.config.embedding_dim = static_cast<int>(ck.scalar("meta.embedding_dim"));
    g.config.time_dims = static_cast<int>(ck.scalar("meta.time_dims"));
    g.config.cloud_points = static_cast<int>(ck.scalar("meta.cloud_points"));
    g.config.head_hidden.clear();
    for (double w : ck.vector("meta.head_hidden")) g.config.head_hidden.push_back(static_cast<int>(w));
    g.config_hash = ck.u64("meta.config_hash");
    g.norm.kappa = ck.scalar("meta.kappa");
    g.schedule = {NoiseSchedule::from_betas(ck.vector("schedule.beta_trans")),
                  NoiseSchedule::from_betas(ck.vector("schedule.beta_rot"))};
    if (g.schedule.steps() != g.config.T || g.schedule.rotation.steps() != g.config.T)
      throw FormatError("generator checkpoint: schedule length differs from T");
    Rng rng(0);
    g.net = NoisePredictor(g.config, rng);
    auto params = g.net.parameters();
    ck.restore(params);
    if (g.net.grasp_mlp.in_width() != grasp_width(g.config.repr))
      throw FormatError("generator checkpoint: representation does not match head width");
    return g;
  }
};

// ---------------------------------------------------------------------------
// Training.

/// One object as seen by the trainers: mean-centered views (each with its
/// object-frame centroid and the same point count) and grasps in the object
/// frame.
struct TrainingObject {
  std::string id;
  std::vector<PointCloud> views;
  std::vector<GraspPose> positives;
};

struct TrainingReport {
  std::vector<double> losses;
  std::size_t objects_used = 0;
};

namespace detail {

inline ad::Matrix stack_views(const std::vector<const PointCloud*>& views) {
  const Eigen::Index n = views.front()->size();
  ad::Matrix pts(n * static_cast<Eigen::Index>(views.size()), 3);
  for (std::size_t g = 0; g < views.size(); ++g) {
    if (views[g]->size() != n) throw ShapeError("views in a batch must share a point count");
    pts.middleRows(static_cast<Eigen::Index>(g) * n, n) = views[g]->points;
  }
  return pts;
}

struct DenoiseBatch {
  std::vector<const PointCloud*> views;
  std::vector<Eigen::Index> view_of_row;
  std::vector<int> timesteps;
  ad::Matrix noisy;
  ad::Matrix noise;
};

inline DenoiseBatch draw_denoise_batch(const std::vector<const TrainingObject*>& pool, const GeneratorConfig& cfg,
                                       const DualSchedule& sched, double kappa, Rng& rng) {
  const int d = grasp_width(cfg.repr);
  const int per_cloud = cfg.batch / cfg.clouds_per_step;
  DenoiseBatch b;
  b.noisy.resize(cfg.batch, d);
  b.noise.resize(cfg.batch, d);
  Eigen::Index row = 0;
  for (int c = 0; c < cfg.clouds_per_step; ++c) {
    const TrainingObject& obj = *pool[rng.index(pool.size())];
    const PointCloud& view = obj.views[rng.index(obj.views.size())];
    b.views.push_back(&view);
    for (int k = 0; k < per_cloud; ++k, ++row) {
      const GraspPose& g = obj.positives[rng.index(obj.positives.size())];
      const int t = static_cast<int>(rng.index(static_cast<std::size_t>(sched.steps())));
      const NoisedGrasp n = forward_noise(normalize_grasp(g, view.centroid, kappa, cfg.repr), t, sched, rng);
      b.noisy.row(row) = n.noisy.transpose();
      b.noise.row(row) = n.noise.transpose();
      b.timesteps.push_back(t);
      b.view_of_row.push_back(c);
    }
  }
  return b;
}

/// Mean over rows of ||eps - phi||^2.
inline ad::Tensor denoise_loss(const NoisePredictor& net, const DenoiseBatch& b) {
  const ad::Tensor emb =
      net.encoder.forward(ad::Tensor::constant(stack_views(b.views)), static_cast<Eigen::Index>(b.views.size()));
  const ad::Tensor pred = net.forward(ad::gather_rows(emb, b.view_of_row), b.timesteps, ad::Tensor::constant(b.noisy));
  return ad::scale(ad::mse(pred, ad::Tensor::constant(b.noise)), static_cast<double>(b.noise.cols()));
}

inline std::vector<const TrainingObject*> objects_with_positives(const std::vector<TrainingObject>& objects) {
  std::vector<const TrainingObject*> pool;
  for (const auto& o : objects)
    if (!o.positives.empty() && !o.views.empty()) pool.push_back(&o);
  return pool;
}

}  // namespace detail

/// Denoising loss of `ckpt` on a minibatch drawn with `seed` (no gradient).
inline double evaluate_denoise_loss(const GeneratorCheckpoint& ckpt, const std::vector<TrainingObject>& objects,
                                    std::uint64_t seed) {
  const auto pool = detail::objects_with_positives(objects);
  if (pool.empty()) throw InvalidInput("evaluate_denoise_loss: no positives");
  Rng rng(seed);
  ad::NoGradGuard no_grad;
  const auto batch = detail::draw_denoise_batch(pool, ckpt.config, ckpt.schedule, ckpt.norm.kappa, rng);
  return detail::denoise_loss(ckpt.net, batch).item();
}

/// Initializes a generator (weights drawn from config.seed) without training.
inline GeneratorCheckpoint init_generator(const GeneratorConfig& cfg, const NormalizationStats& norm) {
  cfg.validate();
  GeneratorCheckpoint ckpt;
  ckpt.config = cfg;
  ckpt.schedule = cfg.schedule();
  ckpt.norm = norm;
  Rng init_rng(derive_seed(cfg.seed, 0x1417));
  ckpt.net = NoisePredictor(cfg, init_rng);
  return ckpt;
}

/// Minimizes the denoising loss over (object view, positive grasp, t, eps)
/// minibatches. Continues from `ckpt` for cfg.steps steps.
inline TrainingReport train_generator(GeneratorCheckpoint& ckpt, const std::vector<TrainingObject>& objects,
                                      int steps, std::uint64_t stream = 0) {
  const auto pool = detail::objects_with_positives(objects);
  if (pool.empty()) throw InvalidInput("train_generator: empty positive set");
  TrainingReport report;
  report.objects_used = pool.size();
  Rng rng(derive_seed(ckpt.config.seed, 0x7ea1 + stream));
  nn::Adam opt(ckpt.net.parameters(), {ckpt.config.lr});
  report.losses.reserve(static_cast<std::size_t>(steps));
  for (int s = 0; s < steps; ++s) {
    const auto batch = detail::draw_denoise_batch(pool, ckpt.config, ckpt.schedule, ckpt.norm.kappa, rng);
    opt.zero_grad();
    const ad::Tensor loss = detail::denoise_loss(ckpt.net, batch);
    loss.backward();
    // Cosine decay to 10% of the base rate.
    const double progress = steps > 1 ? static_cast<double>(s) / (steps - 1) : 1.0;
    opt.step(ckpt.config.lr * (0.55 + 0.45 * std::cos(std::numbers::pi * progress)));
    report.losses.push_back(loss.item());
    if (!std::isfinite(report.losses.back())) throw OptimizerError("loss", "non-finite denoising loss");
  }
  return report;
}

inline GeneratorCheckpoint train_generator(const GeneratorConfig& cfg, const NormalizationStats& norm,
                                           const std::vector<TrainingObject>& objects,
                                           TrainingReport* report = nullptr) {
  if (detail::objects_with_positives(objects).empty()) throw InvalidInput("train_generator: empty positive set");
  GeneratorCheckpoint ckpt = init_generator(cfg, norm);
  TrainingReport r = train_generator(ckpt, objects, cfg.steps);
  if (report) *report = std::move(r);
  return ckpt;
}

// ---------------------------------------------------------------------------
// Sampling.

struct SampleStats {
  std::size_t network_evaluations = 0;  // forward passes of the head
  std::size_t rows_evaluated = 0;       // sum of batch rows over those passes
  std::size_t encoder_evaluations = 0;
};

/// Ancestral DDPM reverse process, run independently per channel. Each batch
/// element draws from its own stream derived from (seed, element index).
inline std::vector<GraspPose> sample_grasps(const PointCloud& cloud, const GeneratorCheckpoint& ckpt, std::size_t B,
                                            std::uint64_t seed, SampleStats* stats = nullptr) {
  if (B < 1) throw InvalidInput("sample_grasps: B must be >= 1");
  if (cloud.size() < 1) throw InvalidInput("sample_grasps: empty cloud");
  ad::NoGradGuard no_grad;
  const int d = grasp_width(ckpt.config.repr);
  const int T = ckpt.schedule.steps();
  const auto rows = static_cast<Eigen::Index>(B);

  const ad::Matrix emb = ckpt.net.encoder.forward(ad::Tensor::constant(cloud.points), 1).value();
  const ad::Tensor emb_rows = ad::Tensor::constant(emb.replicate(rows, 1));
  if (stats) ++stats->encoder_evaluations;

  std::vector<Rng> streams;
  streams.reserve(B);
  for (std::size_t b = 0; b < B; ++b) streams.emplace_back(derive_seed(seed, b));

  ad::Matrix x(rows, d);
  for (Eigen::Index b = 0; b < rows; ++b)
    for (int j = 0; j < d; ++j) x(b, j) = streams[static_cast<std::size_t>(b)].normal();

  for (int t = T - 1; t >= 0; --t) {
    const std::vector<int> ts(B, t);
    const ad::Matrix eps = ckpt.net.forward(emb_rows, ts, ad::Tensor::constant(x)).value();
    if (stats) {
      ++stats->network_evaluations;
      stats->rows_evaluated += B;
    }
    for (int j = 0; j < d; ++j) {
      const NoiseSchedule& s = ckpt.schedule.channel(j < 3);
      const double beta = s.betas[t], alpha = s.alphas[t], abar = s.alpha_bars[t];
      const double coef = beta / std::sqrt(1.0 - abar);
      double sigma = 0.0;
      if (t > 0) {
        sigma = ckpt.config.variance == ReverseVariance::Beta
                    ? std::sqrt(beta)
                    : std::sqrt(beta * (1.0 - s.alpha_bars[t - 1]) / (1.0 - abar));
      }
      for (Eigen::Index b = 0; b < rows; ++b) x(b, j) = (x(b, j) - coef * eps(b, j)) / std::sqrt(alpha);
      if (t > 0)
        for (Eigen::Index b = 0; b < rows; ++b) x(b, j) += sigma * streams[static_cast<std::size_t>(b)].normal();
    }
  }

  std::vector<GraspPose> out;
  out.reserve(B);
  for (Eigen::Index b = 0; b < rows; ++b)
    out.push_back(denormalize_grasp(x.row(b).transpose(), cloud.centroid, ckpt.norm.kappa, ckpt.config.repr));
  return out;
}

}  // namespace graspgen

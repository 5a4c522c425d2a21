#pragma once

// End-to-end recipe: offline data -> generator -> on-generator data ->
// discriminator -> sampling -> evaluation, plus EMD and the tuning sweep.
//
// Every stage writes into <out>/<stage>-<hash>/ where <hash> covers the
// config of the stage and everything upstream, so a stale artifact can never
// be picked up by a downstream stage. Stage directories are built under a
// temporary name and renamed into place once complete.

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <unistd.h>

#include <nlohmann/json.hpp>

#include "graspgen/config.hpp"
#include "graspgen/diffusion.hpp"
#include "graspgen/discriminator.hpp"
#include "graspgen/error.hpp"
#include "graspgen/grasp_oracle.hpp"
#include "graspgen/metrics.hpp"
#include "graspgen/point_cloud.hpp"
#include "graspgen/report.hpp"
#include "graspgen/suite.hpp"

namespace graspgen {

inline constexpr const char* kToolVersion = "1.0.0";

/// An upstream stage artifact is absent or unreadable.
class MissingStage : public Error {
 public:
  MissingStage(std::string stage, const std::string& what) : Error(what), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

enum class Stage { Data, Generator, OnGenerator, Discriminator, Sample, Eval, Emd, Sweep };

inline std::string stage_name(Stage s) {
  switch (s) {
    case Stage::Data: return "data";
    case Stage::Generator: return "generator";
    case Stage::OnGenerator: return "ongen";
    case Stage::Discriminator: return "discriminator";
    case Stage::Sample: return "sample";
    case Stage::Eval: return "eval";
    case Stage::Emd: return "emd";
    case Stage::Sweep: return "sweep";
  }
  return "?";
}

/// The command that produces a stage, for error messages.
inline std::string stage_command(Stage s) {
  switch (s) {
    case Stage::Data: return "gen-data";
    case Stage::Generator: return "train-gen";
    case Stage::OnGenerator: return "build-ongen";
    case Stage::Discriminator: return "train-disc";
    case Stage::Sample: return "sample";
    case Stage::Eval: return "eval";
    case Stage::Emd: return "emd";
    case Stage::Sweep: return "sweep";
  }
  return "?";
}

/// Same kinds and size ranges as the training suite, different draws.
inline ObjectSuiteSpec held_out_suite() {
  ObjectSuiteSpec s;
  s.seed = 1;
  s.prefix = "eval";
  return s;
}

struct PipelineConfig {
  std::uint64_t seed = 0;
  std::string out_dir = "out";

  ObjectSuiteSpec suite;
  ObjectSuiteSpec eval_suite = held_out_suite();
  GripperModel gripper;
  ProposalConfig proposal;

  std::size_t grasps_per_object = 2000;
  std::size_t eval_grasps_per_object = 2000;
  std::size_t views = 8;   // per kind (partial and complete)
  std::size_t points = 256;
  int image_grid = 40;

  GeneratorConfig generator;
  std::size_t ongen_per_object = 2000;
  DiscriminatorConfig discriminator;

  std::size_t sample_batch = 512;
  std::size_t top_k = 512;
  double threshold = 0.7;

  std::vector<double> eval_thresholds{0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95};
  double coverage_radius = 0.01;

  std::size_t emd_subsample = 500;
  std::size_t emd_repeats = 5;

  std::vector<std::size_t> sweep_batches{16, 64, 256};
  std::vector<double> sweep_thresholds{0.0, 0.5, 0.7, 0.9, 0.99};

  // Explicit per-section seeds; unset ones derive from `seed`. The object
  // suites use their own seed fields so that --seed never changes the objects.
  std::map<std::string, std::uint64_t> section_seeds;

  std::uint64_t seed_for(const std::string& section) const {
    if (section == "suite") return suite.seed;
    if (section == "eval_suite") return eval_suite.seed;
    if (auto it = section_seeds.find(section); it != section_seeds.end()) return it->second;
    return derive_seed(seed, fnv1a(section.data(), section.size()));
  }

  void validate() const {
    gripper.validate();
    generator.validate();
    discriminator.validate();
    if (suite.count < 1 || eval_suite.count < 1) throw InvalidInput("suite: count must be >= 1");
    if (grasps_per_object < 1 || eval_grasps_per_object < 1 || ongen_per_object < 1)
      throw InvalidInput("data: grasp counts must be >= 1");
    if (views < 1 || points < 1) throw InvalidInput("data: views and points must be >= 1");
    if (static_cast<int>(points) != generator.cloud_points)
      throw InvalidInput("data: points must match the generator cloud size");
    if (sample_batch < 1 || top_k < 1) throw InvalidInput("sample: batch and top_k must be >= 1");
    if (!(threshold >= 0.0 && threshold <= 1.0)) throw InvalidInput("sample: threshold outside [0, 1]");
    if (!std::is_sorted(eval_thresholds.begin(), eval_thresholds.end()))
      throw InvalidInput("eval: thresholds must be ascending");
    if (!(coverage_radius > 0.0)) throw InvalidInput("eval: radius must be positive");
    if (emd_subsample < 1 || emd_repeats < 1) throw InvalidInput("emd: subsample and repeats must be >= 1");
    if (sweep_batches.empty() || sweep_thresholds.empty()) throw InvalidInput("sweep: empty grid");
  }
};

// ---------------------------------------------------------------------------
// Config text.

namespace detail {

using Setter = std::function<void(PipelineConfig&, const std::string&)>;

inline std::vector<PrimitiveKind> parse_kinds(const std::string& s) {
  std::vector<PrimitiveKind> out;
  for (const auto& k : split_list(s)) out.push_back(parse_primitive(k));
  if (out.empty()) throw InvalidInput("empty kind list");
  return out;
}

inline std::pair<double, double> parse_range(const std::string& s) {
  const auto v = parse_real_list(s);
  if (v.size() != 2) throw InvalidInput("expected 'start, end'");
  return {v[0], v[1]};
}

inline std::vector<int> parse_widths(const std::string& s) {
  std::vector<int> out;
  for (auto v : parse_count_list(s)) out.push_back(static_cast<int>(v));
  return out;
}

inline void add_suite_keys(std::map<std::string, Setter>& m, const std::string& sec, ObjectSuiteSpec PipelineConfig::*f) {
  m[sec + ".kinds"] = [f](PipelineConfig& c, const std::string& v) { (c.*f).kinds = parse_kinds(v); };
  m[sec + ".count"] = [f](PipelineConfig& c, const std::string& v) { (c.*f).count = parse_count(v); };
  m[sec + ".scale_lo"] = [f](PipelineConfig& c, const std::string& v) { (c.*f).size_scale_lo = parse_real(v); };
  m[sec + ".scale_hi"] = [f](PipelineConfig& c, const std::string& v) { (c.*f).size_scale_hi = parse_real(v); };
  m[sec + ".resolution"] = [f](PipelineConfig& c, const std::string& v) {
    (c.*f).resolution = static_cast<int>(parse_count(v));
  };
  m[sec + ".prefix"] = [f](PipelineConfig& c, const std::string& v) {
    if (v.empty() || v.find_first_of("/\\ ") != std::string::npos) throw InvalidInput("bad object id prefix");
    (c.*f).prefix = v;
  };
}

inline const std::map<std::string, Setter>& config_schema() {
  static const std::map<std::string, Setter> schema = [] {
    std::map<std::string, Setter> m;
    using C = PipelineConfig;
    const auto seed_key = [&m](const std::string& sec) {
      m[sec + ".seed"] = [sec](C& c, const std::string& v) { c.section_seeds[sec] = parse_count(v); };
    };
    m["run.seed"] = [](C& c, const std::string& v) { c.seed = parse_count(v); };
    m["run.out_dir"] = [](C& c, const std::string& v) {
      if (v.empty()) throw InvalidInput("empty out_dir");
      c.out_dir = v;
    };

    add_suite_keys(m, "suite", &C::suite);
    add_suite_keys(m, "eval_suite", &C::eval_suite);
    m["suite.seed"] = [](C& c, const std::string& v) { c.suite.seed = parse_count(v); };
    m["eval_suite.seed"] = [](C& c, const std::string& v) { c.eval_suite.seed = parse_count(v); };

    m["gripper.kind"] = [](C& c, const std::string& v) { c.gripper.kind = parse_gripper(v); };
    m["gripper.max_width"] = [](C& c, const std::string& v) { c.gripper.max_width = parse_real(v); };
    m["gripper.finger_depth"] = [](C& c, const std::string& v) { c.gripper.finger_depth = parse_real(v); };
    m["gripper.friction_mu"] = [](C& c, const std::string& v) { c.gripper.friction_mu = parse_real(v); };
    m["gripper.cup_radius"] = [](C& c, const std::string& v) { c.gripper.cup_radius = parse_real(v); };
    m["gripper.approach_axis"] = [](C& c, const std::string& v) {
      c.gripper.approach_axis = static_cast<int>(parse_count(v));
    };
    m["gripper.finger_thickness"] = [](C& c, const std::string& v) { c.gripper.finger_thickness = parse_real(v); };
    m["gripper.finger_width"] = [](C& c, const std::string& v) { c.gripper.finger_width = parse_real(v); };
    m["gripper.palm_thickness"] = [](C& c, const std::string& v) { c.gripper.palm_thickness = parse_real(v); };
    m["gripper.tip_extension"] = [](C& c, const std::string& v) { c.gripper.tip_extension = parse_real(v); };
    m["gripper.collision_margin"] = [](C& c, const std::string& v) { c.gripper.collision_margin = parse_real(v); };

    m["data.grasps_per_object"] = [](C& c, const std::string& v) { c.grasps_per_object = parse_count(v); };
    m["data.eval_grasps_per_object"] = [](C& c, const std::string& v) { c.eval_grasps_per_object = parse_count(v); };
    m["data.box_fraction"] = [](C& c, const std::string& v) {
      c.proposal.box_fraction = parse_real(v);
      if (!(c.proposal.box_fraction >= 0.0 && c.proposal.box_fraction <= 1.0))
        throw InvalidInput("box_fraction outside [0, 1]");
    };
    m["data.views"] = [](C& c, const std::string& v) { c.views = parse_count(v); };
    m["data.points"] = [](C& c, const std::string& v) {
      c.points = parse_count(v);
      c.generator.cloud_points = static_cast<int>(c.points);
    };
    m["data.image_grid"] = [](C& c, const std::string& v) { c.image_grid = static_cast<int>(parse_count(v)); };
    seed_key("data");

    m["generator.T"] = [](C& c, const std::string& v) { c.generator.T = static_cast<int>(parse_count(v)); };
    m["generator.beta_trans"] = [](C& c, const std::string& v) {
      std::tie(c.generator.beta_trans_start, c.generator.beta_trans_end) = parse_range(v);
    };
    m["generator.beta_rot"] = [](C& c, const std::string& v) {
      std::tie(c.generator.beta_rot_start, c.generator.beta_rot_end) = parse_range(v);
    };
    m["generator.repr"] = [](C& c, const std::string& v) { c.generator.repr = parse_repr(v); };
    m["generator.kappa_mode"] = [](C& c, const std::string& v) {
      if (v == "computed") {
        c.generator.fixed_kappa.reset();
      } else if (v.rfind("fixed:", 0) == 0) {
        c.generator.fixed_kappa = parse_real(v.substr(6));
      } else {
        throw InvalidInput("kappa_mode must be 'computed' or 'fixed:<value>'");
      }
    };
    m["generator.kappa_reduction"] = [](C& c, const std::string& v) {
      if (v == "mean_axis") c.generator.kappa_reduction = KappaReduction::MeanAxis;
      else if (v == "max_axis") c.generator.kappa_reduction = KappaReduction::MaxAxis;
      else throw InvalidInput("kappa_reduction must be mean_axis or max_axis");
    };
    m["generator.variance"] = [](C& c, const std::string& v) {
      if (v == "beta") c.generator.variance = ReverseVariance::Beta;
      else if (v == "posterior") c.generator.variance = ReverseVariance::Posterior;
      else throw InvalidInput("variance must be beta or posterior");
    };
    m["generator.embedding_dim"] = [](C& c, const std::string& v) {
      c.generator.embedding_dim = static_cast<int>(parse_count(v));
    };
    m["generator.head_hidden"] = [](C& c, const std::string& v) { c.generator.head_hidden = parse_widths(v); };
    m["generator.time_dims"] = [](C& c, const std::string& v) {
      c.generator.time_dims = static_cast<int>(parse_count(v));
    };
    m["generator.steps"] = [](C& c, const std::string& v) { c.generator.steps = static_cast<int>(parse_count(v)); };
    m["generator.lr"] = [](C& c, const std::string& v) { c.generator.lr = parse_real(v); };
    m["generator.batch"] = [](C& c, const std::string& v) { c.generator.batch = static_cast<int>(parse_count(v)); };
    m["generator.clouds_per_step"] = [](C& c, const std::string& v) {
      c.generator.clouds_per_step = static_cast<int>(parse_count(v));
    };
    m["generator.cloud_mix_ratio"] = [](C& c, const std::string& v) { c.generator.cloud_mix_ratio = parse_real(v); };
    seed_key("generator");

    m["ongen.grasps_per_object"] = [](C& c, const std::string& v) { c.ongen_per_object = parse_count(v); };
    seed_key("ongen");

    m["discriminator.hidden"] = [](C& c, const std::string& v) { c.discriminator.hidden = parse_widths(v); };
    m["discriminator.steps"] = [](C& c, const std::string& v) {
      c.discriminator.steps = static_cast<int>(parse_count(v));
    };
    m["discriminator.lr"] = [](C& c, const std::string& v) { c.discriminator.lr = parse_real(v); };
    m["discriminator.batch"] = [](C& c, const std::string& v) {
      c.discriminator.batch = static_cast<int>(parse_count(v));
    };
    m["discriminator.provenance"] = [](C& c, const std::string& v) {
      c.discriminator.provenance = parse_provenance(v);
    };
    m["discriminator.mix_ratio"] = [](C& c, const std::string& v) { c.discriminator.mix_ratio = parse_real(v); };
    m["discriminator.balance_labels"] = [](C& c, const std::string& v) {
      c.discriminator.balance_labels = parse_bool(v);
    };
    seed_key("discriminator");

    m["sample.batch"] = [](C& c, const std::string& v) { c.sample_batch = parse_count(v); };
    m["sample.top_k"] = [](C& c, const std::string& v) { c.top_k = parse_count(v); };
    m["sample.threshold"] = [](C& c, const std::string& v) { c.threshold = parse_real(v); };
    seed_key("sample");

    m["eval.thresholds"] = [](C& c, const std::string& v) { c.eval_thresholds = parse_real_list(v); };
    m["eval.radius"] = [](C& c, const std::string& v) { c.coverage_radius = parse_real(v); };

    m["emd.subsample"] = [](C& c, const std::string& v) { c.emd_subsample = parse_count(v); };
    m["emd.repeats"] = [](C& c, const std::string& v) { c.emd_repeats = parse_count(v); };
    seed_key("emd");

    m["sweep.batches"] = [](C& c, const std::string& v) {
      c.sweep_batches.clear();
      for (auto b : parse_count_list(v)) c.sweep_batches.push_back(b);
    };
    m["sweep.thresholds"] = [](C& c, const std::string& v) { c.sweep_thresholds = parse_real_list(v); };
    seed_key("sweep");
    return m;
  }();
  return schema;
}

inline void apply_entry(PipelineConfig& cfg, const ConfigEntry& e) {
  const std::string full = e.section + "." + e.key;
  const auto& schema = config_schema();
  const auto it = schema.find(full);
  if (it == schema.end()) {
    if (e.section.empty()) throw ConfigError(e.line, "key '" + e.key + "' outside any [section]");
    throw ConfigError(e.line, "unknown key '" + full + "'");
  }
  try {
    it->second(cfg, e.value);
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& ex) {
    throw ConfigError(e.line, full + ": " + ex.what());
  }
}

}  // namespace detail

/// Parses and validates a config. Cross-key validation failures report the
/// line of the last entry of the section at fault when it can be identified.
inline PipelineConfig parse_pipeline_config(const std::string& text) {
  PipelineConfig cfg;
  const auto entries = parse_config_text(text);
  std::map<std::string, std::size_t> section_line;
  for (const auto& e : entries) {
    detail::apply_entry(cfg, e);
    section_line[e.section] = e.line;
  }
  try {
    cfg.validate();
  } catch (const Error& ex) {
    const std::string msg = ex.what();
    const auto colon = msg.find(':');
    const std::string sec = colon == std::string::npos ? "" : msg.substr(0, colon);
    const auto it = section_line.find(sec);
    throw ConfigError(it == section_line.end() ? 0 : it->second, msg);
  }
  return cfg;
}

inline PipelineConfig load_pipeline_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(0, "cannot read " + path);
  return parse_pipeline_config(std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()));
}

// ---------------------------------------------------------------------------
// Stage fingerprints.

namespace detail {

inline nlohmann::json suite_json(const ObjectSuiteSpec& s, std::uint64_t seed) {
  std::vector<std::string> kinds;
  for (auto k : s.kinds) kinds.push_back(primitive_name(k));
  return {{"kinds", kinds},         {"count", s.count},           {"scale_lo", s.size_scale_lo},
          {"scale_hi", s.size_scale_hi}, {"resolution", s.resolution}, {"seed", seed},
          {"prefix", s.prefix}};
}

inline nlohmann::json generator_json(const GeneratorConfig& g, std::uint64_t seed) {
  return {{"T", g.T},
          {"beta_trans", {g.beta_trans_start, g.beta_trans_end}},
          {"beta_rot", {g.beta_rot_start, g.beta_rot_end}},
          {"repr", repr_name(g.repr)},
          {"kappa_fixed", g.fixed_kappa ? nlohmann::json(*g.fixed_kappa) : nlohmann::json()},
          {"kappa_reduction", static_cast<int>(g.kappa_reduction)},
          {"variance", static_cast<int>(g.variance)},
          {"embedding_dim", g.embedding_dim},
          {"head_hidden", g.head_hidden},
          {"time_dims", g.time_dims},
          {"steps", g.steps},
          {"lr", g.lr},
          {"batch", g.batch},
          {"clouds_per_step", g.clouds_per_step},
          {"cloud_points", g.cloud_points},
          {"cloud_mix_ratio", g.cloud_mix_ratio},
          {"seed", seed}};
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline std::uint64_t hash_json(const nlohmann::json& j) {
  const std::string s = j.dump();
  return fnv1a(s.data(), s.size());
}

}  // namespace detail

/// The config fragment that determines a stage's outputs, including the
/// fingerprint of every stage it reads from.
inline nlohmann::json stage_inputs(const PipelineConfig& c, Stage s);

inline std::uint64_t stage_hash(const PipelineConfig& c, Stage s) { return detail::hash_json(stage_inputs(c, s)); }

inline nlohmann::json stage_inputs(const PipelineConfig& c, Stage s) {
  using nlohmann::json;
  switch (s) {
    case Stage::Data:
      return {{"stage", "data"},
              {"suite", detail::suite_json(c.suite, c.seed_for("suite"))},
              {"eval_suite", detail::suite_json(c.eval_suite, c.seed_for("eval_suite"))},
              {"gripper", c.gripper.to_json()},
              {"box_fraction", c.proposal.box_fraction},
              {"grasps_per_object", c.grasps_per_object},
              {"eval_grasps_per_object", c.eval_grasps_per_object},
              {"views", c.views},
              {"points", c.points},
              {"image_grid", c.image_grid},
              {"seed", c.seed_for("data")}};
    case Stage::Generator:
      return {{"stage", "generator"},
              {"upstream", detail::hex64(stage_hash(c, Stage::Data))},
              {"generator", detail::generator_json(c.generator, c.seed_for("generator"))}};
    case Stage::OnGenerator:
      return {{"stage", "ongen"},
              {"upstream", detail::hex64(stage_hash(c, Stage::Generator))},
              {"grasps_per_object", c.ongen_per_object},
              {"seed", c.seed_for("ongen")}};
    case Stage::Discriminator: {
      const auto& d = c.discriminator;
      return {{"stage", "discriminator"},
              {"upstream", detail::hex64(stage_hash(c, Stage::OnGenerator))},
              {"hidden", d.hidden},
              {"steps", d.steps},
              {"lr", d.lr},
              {"batch", d.batch},
              {"provenance", provenance_name(d.provenance)},
              {"mix_ratio", d.mix_ratio},
              {"balance_labels", d.balance_labels},
              {"seed", c.seed_for("discriminator")}};
    }
    case Stage::Sample:
      return {{"stage", "sample"},
              {"upstream", detail::hex64(stage_hash(c, Stage::Discriminator))},
              {"batch", c.sample_batch},
              {"top_k", c.top_k},
              {"threshold", c.threshold},
              {"seed", c.seed_for("sample")}};
    case Stage::Eval:
      return {{"stage", "eval"},
              {"upstream", detail::hex64(stage_hash(c, Stage::Sample))},
              {"thresholds", c.eval_thresholds},
              {"radius", c.coverage_radius}};
    case Stage::Emd:
      return {{"stage", "emd"},
              {"upstream", detail::hex64(stage_hash(c, Stage::OnGenerator))},
              {"subsample", c.emd_subsample},
              {"repeats", c.emd_repeats},
              {"seed", c.seed_for("emd")}};
    case Stage::Sweep:
      return {{"stage", "sweep"},
              {"upstream", detail::hex64(stage_hash(c, Stage::Discriminator))},
              {"batches", c.sweep_batches},
              {"thresholds", c.sweep_thresholds},
              {"seed", c.seed_for("sweep")}};
  }
  return {};
}

/// Fingerprint of the whole effective config.
inline std::uint64_t config_hash(const PipelineConfig& c) {
  nlohmann::json all = nlohmann::json::array();
  for (Stage s : {Stage::Eval, Stage::Emd, Stage::Sweep}) all.push_back(stage_inputs(c, s));
  return detail::hash_json(all);
}

// ---------------------------------------------------------------------------

namespace detail {

namespace fs = std::filesystem;

inline void write_file(const fs::path& path, const std::string& bytes) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("cannot write " + path.string());
}

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot read " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

inline std::string views_name(std::size_t v, bool partial) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s_%02zu.ggpc", partial ? "partial" : "complete", v);
  return buf;
}

}  // namespace detail

/// Runs the stages of one config. Commands read their inputs from the
/// content-addressed directories of upstream stages and fail with
/// MissingStage when those are absent.
class Pipeline {
 public:
  using Log = std::function<void(const std::string&)>;

  explicit Pipeline(PipelineConfig cfg, Log log = {}) : cfg_(std::move(cfg)), log_(std::move(log)) {
    if (const char* env = std::getenv("GG_OUT_DIR"); env && *env) cfg_.out_dir = env;
  }

  const PipelineConfig& config() const { return cfg_; }
  std::filesystem::path out_dir() const { return cfg_.out_dir; }

  std::string hash_hex(Stage s) const { return detail::hex64(stage_hash(cfg_, s)); }

  std::filesystem::path stage_dir(Stage s) const { return out_dir() / (stage_name(s) + "-" + hash_hex(s)); }

  bool stage_complete(Stage s) const { return std::filesystem::exists(stage_dir(s) / "stage.json"); }

  void run(Stage s) {
    switch (s) {
      case Stage::Data: return gen_data();
      case Stage::Generator: return train_gen();
      case Stage::OnGenerator: return build_ongen();
      case Stage::Discriminator: return train_disc();
      case Stage::Sample: return sample();
      case Stage::Eval: return eval();
      case Stage::Emd: return emd();
      case Stage::Sweep: return sweep();
    }
  }

  /// Every stage in dependency order, skipping stages already complete.
  void run_all() {
    for (Stage s : {Stage::Data, Stage::Generator, Stage::OnGenerator, Stage::Discriminator, Stage::Sample,
                    Stage::Eval, Stage::Emd, Stage::Sweep}) {
      if (stage_complete(s)) {
        say(stage_name(s) + ": up to date (" + stage_dir(s).string() + ")");
        continue;
      }
      run(s);
    }
  }

  // -- gen-data ------------------------------------------------------------

  void gen_data() {
    StageWriter w(*this, Stage::Data);
    const auto train = make_object_suite(cfg_.suite);
    const auto held_out = make_object_suite(cfg_.eval_suite);
    const std::uint64_t seed = cfg_.seed_for("data");
    const auto header = grasp_file_header(cfg_.gripper, hash_hex(Stage::Data), "offline");

    report::Csv stats({"metric", "object_id", "value"});
    const auto build = [&](const std::vector<ObjectEntry>& objs, const std::string& group, std::size_t n,
                           std::uint64_t s, bool with_views) {
      const DatasetBuild ds = build_offline_dataset(objs, cfg_.gripper, n, derive_seed(s, 1), cfg_.proposal);
      for (std::size_t k = 0; k < objs.size(); ++k) {
        const auto& obj = objs[k];
        w.put(group + "/" + obj.id + "/mesh.off", to_off(obj.mesh));
        w.put(group + "/" + obj.id + "/grasps.jsonl", write_grasp_lines(ds.sets[k], header));
        stats.add({"positive_rate", obj.id, report::num(ds.positive_rates[k])});
        if (ds.sets[k].positive_count() == 0) say("warning: " + obj.id + " has no positive grasps");
        const std::uint64_t vs = derive_seed(s, 100 + k);
        if (with_views) {
          ViewConfig vc{cfg_.views, 1.0, cfg_.points, cfg_.image_grid};
          const auto partial = make_views(obj.mesh, vc, derive_seed(vs, 1));
          vc.partial_ratio = 0.0;
          const auto complete = make_views(obj.mesh, vc, derive_seed(vs, 2));
          for (std::size_t v = 0; v < cfg_.views; ++v) {
            w.put(group + "/" + obj.id + "/" + detail::views_name(v, true), encode_cloud(partial[v]));
            w.put(group + "/" + obj.id + "/" + detail::views_name(v, false), encode_cloud(complete[v]));
          }
        } else {
          w.put(group + "/" + obj.id + "/cloud.ggpc", encode_cloud(complete_view(obj.mesh, cfg_.points, vs)));
        }
        say(group + " " + obj.id + ": positive rate " + report::num(ds.positive_rates[k]));
      }
    };
    build(train, "train", cfg_.grasps_per_object, seed, true);
    build(held_out, "heldout", cfg_.eval_grasps_per_object, derive_seed(seed, 2), false);

    nlohmann::json index{{"train", nlohmann::json::array()}, {"heldout", nlohmann::json::array()}};
    for (const auto& o : train) index["train"].push_back(o.id);
    for (const auto& o : held_out) index["heldout"].push_back(o.id);
    w.put("objects.json", index.dump(2) + "\n");
    w.put("stats.csv", stats.str());
    w.commit();
  }

  // -- train-gen -------------------------------------------------------------

  void train_gen() {
    const auto data = require(Stage::Data);
    StageWriter w(*this, Stage::Generator);
    const auto train = load_group(data, "train");
    std::vector<LabeledGraspSet> sets;
    for (const auto& o : train) sets.push_back(o.grasps);
    NormalizationStats norm;
    if (cfg_.generator.fixed_kappa) {
      norm.kappa = *cfg_.generator.fixed_kappa;
    } else {
      norm = compute_kappa(sets, cfg_.generator.kappa_reduction);
    }
    say("kappa = " + report::num(norm.kappa));
    GeneratorConfig gc = cfg_.generator;
    gc.seed = cfg_.seed_for("generator");
    std::vector<TrainingObject> objects;
    for (const auto& o : train) objects.push_back({o.id, mix_views(o, gc.cloud_mix_ratio), o.grasps.positives()});
    TrainingReport rep;
    GeneratorCheckpoint ckpt = train_generator(gc, norm, objects, &rep);
    ckpt.config_hash = stage_hash(cfg_, Stage::Generator);
    w.put("generator.ggck", ckpt.to_checkpoint().encode());
    report::Csv losses({"step", "loss"});
    for (std::size_t i = 0; i < rep.losses.size(); ++i) losses.add({std::to_string(i), report::num(rep.losses[i])});
    w.put("losses.csv", losses.str());
    report::Csv summary({"metric", "object_id", "value"});
    summary.add({"kappa", "all", report::num(norm.kappa)});
    summary.add({"objects_used", "all", std::to_string(rep.objects_used)});
    summary.add({"objects_skipped", "all", std::to_string(norm.objects_skipped)});
    if (!rep.losses.empty()) summary.add({"final_loss", "all", report::num(rep.losses.back())});
    w.put("summary.csv", summary.str());
    w.commit();
  }

  // -- build-ongen -----------------------------------------------------------

  void build_ongen() {
    const auto data = require(Stage::Data);
    const auto gen_dir = require(Stage::Generator);
    StageWriter w(*this, Stage::OnGenerator);
    const auto gen = load_generator(gen_dir);
    const auto train = load_group(data, "train");
    std::vector<ObjectEntry> objs;
    std::vector<PointCloud> clouds;
    for (const auto& o : train) {
      objs.push_back({o.id, o.mesh});
      clouds.push_back(o.complete.front());
    }
    const auto sets = build_on_generator_dataset(gen, objs, clouds, cfg_.gripper, cfg_.ongen_per_object,
                                                 cfg_.seed_for("ongen"));
    const auto header = grasp_file_header(cfg_.gripper, hash_hex(Stage::OnGenerator), "on_generator");
    report::Csv stats({"metric", "object_id", "value"});
    for (const auto& s : sets) {
      w.put(s.object_id + ".jsonl", write_grasp_lines(s, header));
      stats.add({"positive_rate", s.object_id, report::num(s.positive_rate())});
      say("ongen " + s.object_id + ": positive rate " + report::num(s.positive_rate()));
    }
    w.put("stats.csv", stats.str());
    w.commit();
  }

  // -- train-disc ------------------------------------------------------------

  void train_disc() {
    const auto data = require(Stage::Data);
    const auto gen_dir = require(Stage::Generator);
    const auto ongen = require(Stage::OnGenerator);
    StageWriter w(*this, Stage::Discriminator);
    const auto gen = load_generator(gen_dir);
    const auto train = load_group(data, "train");
    std::vector<DiscriminatorObject> objects;
    for (const auto& o : train) {
      objects.push_back({o.id, mix_views(o, cfg_.generator.cloud_mix_ratio), o.grasps,
                         load_grasp_file((ongen / (o.id + ".jsonl")).string()).set});
    }
    DiscriminatorConfig dc = cfg_.discriminator;
    dc.seed = cfg_.seed_for("discriminator");
    DiscriminatorReport rep;
    DiscriminatorCheckpoint disc =
        train_discriminator(objects, gen.net.encoder, gen.norm.kappa, gen.config.repr, dc, &rep);
    disc.config_hash = stage_hash(cfg_, Stage::Discriminator);
    w.put("discriminator.ggck", disc.to_checkpoint().encode());
    report::Csv losses({"step", "loss"});
    for (std::size_t i = 0; i < rep.losses.size(); ++i) losses.add({std::to_string(i), report::num(rep.losses[i])});
    w.put("losses.csv", losses.str());
    w.commit();
  }

  // -- sample ----------------------------------------------------------------

  /// B generated grasps per held-out object, scored; also the filtered set.
  void sample() {
    const auto data = require(Stage::Data);
    const auto gen_dir = require(Stage::Generator);
    const auto disc_dir = require(Stage::Discriminator);
    StageWriter w(*this, Stage::Sample);
    const auto gen = load_generator(gen_dir);
    const auto disc = load_discriminator(disc_dir);
    const auto objs = load_group(data, "heldout");
    const auto header = grasp_file_header(cfg_.gripper, hash_hex(Stage::Sample), "generated");
    const std::uint64_t seed = cfg_.seed_for("sample");
    report::Csv counts({"metric", "object_id", "value"});
    for (std::size_t k = 0; k < objs.size(); ++k) {
      const auto& o = objs[k];
      const auto grasps = sample_grasps(o.cloud, gen, cfg_.sample_batch, derive_seed(seed, k));
      const ScoredGrasps scored = score_grasps(o.cloud, grasps, disc);
      const ScoredGrasps kept = filter_grasps(scored, cfg_.threshold, cfg_.top_k);
      const auto labels = oracle_labels(grasps, o.mesh, cfg_.gripper);
      w.put(o.id + ".jsonl", scored_lines(o, scored, labels, header));
      w.put(o.id + ".filtered.jsonl", scored_lines(o, kept, labels, header));
      counts.add({"sampled", o.id, std::to_string(scored.size())});
      counts.add({"retained", o.id, std::to_string(kept.size())});
      say("sample " + o.id + ": " + std::to_string(kept.size()) + "/" + std::to_string(scored.size()) + " retained");
    }
    w.put("counts.csv", counts.str());
    w.commit();
  }

  // -- eval ------------------------------------------------------------------

  void eval() {
    const auto data = require(Stage::Data);
    const auto samples = require(Stage::Sample);
    StageWriter w(*this, Stage::Eval);
    const auto objs = load_group(data, "heldout");
    report::Csv curve_csv({"object_id", "threshold", "precision", "coverage", "retained"});
    report::Csv summary({"metric", "object_id", "value"});
    std::vector<report::Series> series;
    std::size_t passing = 0;
    for (const auto& o : objs) {
      const GraspFile all = load_grasp_file((samples / (o.id + ".jsonl")).string());
      const GraspFile kept = load_grasp_file((samples / (o.id + ".filtered.jsonl")).string());
      const auto gt = o.grasps.positives();
      // Stored labels are the oracle labels of the generated grasps.
      const ScoredGrasps scored{all.set.grasps, all.scores, {}, all.set.grasps.empty()};
      if (gt.empty()) {
        say("warning: " + o.id + " has no ground-truth positives; skipped");
        summary.add({"skipped", o.id, "1"});
        continue;
      }
      const auto curve =
          precision_coverage_curve(scored, all.set.labels, gt, cfg_.eval_thresholds, cfg_.coverage_radius);
      report::Series s{o.id, {}, {}};
      for (const auto& p : curve.points) {
        curve_csv.add({o.id, report::num(p.threshold),
                       p.retained ? report::num(p.precision) : std::string(report::kUndefined),
                       report::num(p.coverage), std::to_string(p.retained)});
        s.x.push_back(p.coverage);
        s.y.push_back(p.precision);
      }
      series.push_back(std::move(s));
      const double raw_precision = static_cast<double>(all.set.positive_count()) / static_cast<double>(all.set.size());
      std::optional<double> kept_precision;
      if (kept.set.size()) kept_precision = kept.set.positive_rate();
      const double kept_coverage = coverage(kept.set.grasps, gt, cfg_.coverage_radius);
      summary.add({"auc", o.id, report::num(curve.auc)});
      summary.add({"precision_raw", o.id, report::num(raw_precision)});
      summary.add({"coverage_raw", o.id, report::num(coverage(all.set.grasps, gt, cfg_.coverage_radius))});
      summary.add({"precision_filtered", o.id, report::num(kept_precision)});
      summary.add({"coverage_filtered", o.id, report::num(kept_coverage)});
      summary.add({"retained", o.id, std::to_string(kept.set.size())});
      const PoseErrors pe = pose_errors(all.set.grasps, gt);
      summary.add({"translation_error", o.id, report::num(pe.translation)});
      summary.add({"rotation_error", o.id, report::num(pe.rotation)});
      if (all.set.positive_count() > 0 && all.set.positive_count() < all.set.size())
        summary.add({"roc_auc", o.id, report::num(roc_auc(all.scores, all.set.labels))});
      const bool pass = kept_precision && *kept_precision >= 0.7 && kept_coverage >= 0.4;
      passing += pass ? 1 : 0;
    }
    summary.add({"objects_meeting_target", "all", std::to_string(passing)});
    w.put("curves.csv", curve_csv.str());
    w.put("summary.csv", summary.str());
    w.put("curves.svg", report::svg_line_plot(series, "precision vs coverage", "coverage", "precision"));
    w.commit();
  }

  // -- emd -------------------------------------------------------------------

  /// Per training object: EMD between on-generator and offline negatives,
  /// and between two disjoint halves of the offline negatives.
  void emd() {
    const auto data = require(Stage::Data);
    const auto ongen = require(Stage::OnGenerator);
    StageWriter w(*this, Stage::Emd);
    const auto train = load_group(data, "train");
    const std::uint64_t seed = cfg_.seed_for("emd");
    report::Csv csv({"metric", "object_id", "value"});
    std::vector<double> shifts, withins;
    for (std::size_t k = 0; k < train.size(); ++k) {
      const auto& o = train[k];
      const auto off = o.grasps.negatives();
      const auto on = load_grasp_file((ongen / (o.id + ".jsonl")).string()).set.negatives();
      if (off.size() < 2 || on.empty()) {
        csv.add({"skipped", o.id, "1"});
        continue;
      }
      const auto [half_a, half_b] = split_halves(off, derive_seed(seed, 2 * k));
      const double shift = graspgen::emd(on, off, cfg_.emd_subsample, cfg_.emd_repeats, derive_seed(seed, 2 * k + 1)).mean;
      const double within = graspgen::emd(half_a, half_b, cfg_.emd_subsample, cfg_.emd_repeats,
                                           derive_seed(seed, 2 * k + 1)).mean;
      csv.add({"emd_ongen_vs_offline", o.id, report::num(shift)});
      csv.add({"emd_offline_split", o.id, report::num(within)});
      shifts.push_back(shift);
      withins.push_back(within);
      say("emd " + o.id + ": shift " + report::num(shift) + ", within " + report::num(within));
    }
    const auto mean = [](const std::vector<double>& v) {
      return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    };
    csv.add({"emd_ongen_vs_offline", "all", report::num(mean(shifts))});
    csv.add({"emd_offline_split", "all", report::num(mean(withins))});
    csv.add({"subsample", "all", std::to_string(cfg_.emd_subsample)});
    csv.add({"repeats", "all", std::to_string(cfg_.emd_repeats)});
    w.put("emd.csv", csv.str());
    w.put("emd_hist.svg", report::svg_histogram(shifts, 10, "EMD on-generator vs offline negatives", "EMD"));
    w.commit();
  }

  // -- sweep -----------------------------------------------------------------

  void sweep() {
    const auto data = require(Stage::Data);
    const auto gen_dir = require(Stage::Generator);
    const auto disc_dir = require(Stage::Discriminator);
    StageWriter w(*this, Stage::Sweep);
    const auto gen = load_generator(gen_dir);
    const auto disc = load_discriminator(disc_dir);
    std::vector<EvalObject> objs;
    for (auto& o : load_group(data, "heldout")) objs.push_back({o.id, o.mesh, o.cloud, o.grasps.positives()});
    const auto rows = tuning_sweep(gen, disc, objs, cfg_.gripper, cfg_.sweep_batches, cfg_.sweep_thresholds,
                                   cfg_.seed_for("sweep"));
    report::Csv csv({"batch", "threshold", "object_id", "retained", "positives", "precision"});
    std::vector<report::Series> series;
    for (const auto& r : rows) {
      csv.add({std::to_string(r.batch), report::num(r.threshold), r.object_id, std::to_string(r.retained),
               std::to_string(r.positives), report::num(r.precision)});
      if (r.object_id != "all" || !r.precision) continue;
      const std::string name = "B=" + std::to_string(r.batch);
      if (series.empty() || series.back().name != name) series.push_back({name, {}, {}});
      series.back().x.push_back(r.threshold);
      series.back().y.push_back(*r.precision);
    }
    w.put("sweep.csv", csv.str());
    w.put("sweep.svg", report::svg_line_plot(series, "precision vs threshold", "threshold", "precision"));
    w.commit();
  }

  // -- artifact access -------------------------------------------------------

  struct StoredObject {
    std::string id;
    TriangleMesh mesh;
    LabeledGraspSet grasps;
    std::vector<PointCloud> partial, complete;  // training objects
    PointCloud cloud;                           // held-out objects
  };

  std::vector<StoredObject> load_group(const std::filesystem::path& data, const std::string& group) const {
    const auto index = nlohmann::json::parse(detail::read_file(data / "objects.json"));
    std::vector<StoredObject> out;
    for (const auto& id_json : index.at(group)) {
      const std::string id = id_json.get<std::string>();
      const auto dir = data / group / id;
      StoredObject o;
      o.id = id;
      o.mesh = load_off((dir / "mesh.off").string());
      o.grasps = load_grasp_file((dir / "grasps.jsonl").string()).set;
      o.grasps.object_id = id;
      if (group == "train") {
        for (std::size_t v = 0; v < cfg_.views; ++v) {
          o.partial.push_back(load_cloud((dir / detail::views_name(v, true)).string()));
          o.complete.push_back(load_cloud((dir / detail::views_name(v, false)).string()));
        }
      } else {
        o.cloud = load_cloud((dir / "cloud.ggpc").string());
      }
      out.push_back(std::move(o));
    }
    return out;
  }

  GeneratorCheckpoint load_generator(const std::filesystem::path& dir) const {
    return GeneratorCheckpoint::from_checkpoint(nn::Checkpoint::decode(detail::read_file(dir / "generator.ggck")));
  }

  DiscriminatorCheckpoint load_discriminator(const std::filesystem::path& dir) const {
    return DiscriminatorCheckpoint::from_checkpoint(
        nn::Checkpoint::decode(detail::read_file(dir / "discriminator.ggck")));
  }

  std::filesystem::path require(Stage s) const {
    if (!stage_complete(s))
      throw MissingStage(stage_name(s), "missing upstream stage '" + stage_name(s) + "' (expected " +
                                            stage_dir(s).string() + "); run '" + stage_command(s) + "' first");
    return stage_dir(s);
  }

 private:
  /// Collects a stage's files in a temporary directory and renames it into
  /// place on commit; an abandoned writer removes its temporary directory.
  class StageWriter {
   public:
    StageWriter(Pipeline& p, Stage s) : p_(p), stage_(s) {
      final_ = p.stage_dir(s);
      tmp_ = p.out_dir() / (".tmp-" + final_.filename().string() + "-" + std::to_string(::getpid()));
      std::filesystem::remove_all(tmp_);
      std::filesystem::create_directories(tmp_);
      p.say(stage_name(s) + ": writing " + final_.string());
    }
    ~StageWriter() {
      if (!committed_) {
        std::error_code ec;
        std::filesystem::remove_all(tmp_, ec);
      }
    }
    StageWriter(const StageWriter&) = delete;
    StageWriter& operator=(const StageWriter&) = delete;

    void put(const std::string& rel, const std::string& bytes) {
      detail::write_file(tmp_ / rel, bytes);
      files_.push_back(rel);
    }

    void commit() {
      nlohmann::json info{{"stage", stage_name(stage_)},
                          {"hash", p_.hash_hex(stage_)},
                          {"inputs", stage_inputs(p_.cfg_, stage_)},
                          {"files", files_}};
      detail::write_file(tmp_ / "stage.json", info.dump(2) + "\n");
      std::filesystem::remove_all(final_);
      std::filesystem::rename(tmp_, final_);
      committed_ = true;
      p_.record(stage_, files_);
    }

   private:
    Pipeline& p_;
    Stage stage_;
    std::filesystem::path final_, tmp_;
    std::vector<std::string> files_;
    bool committed_ = false;
  };

  void say(const std::string& msg) const {
    if (log_) log_(msg);
  }

  /// round(ratio * views) partial views followed by complete ones.
  std::vector<PointCloud> mix_views(const StoredObject& o, double ratio) const {
    const std::size_t n = o.partial.size();
    const auto partial = static_cast<std::size_t>(std::lround(ratio * static_cast<double>(n)));
    std::vector<PointCloud> out(o.partial.begin(), o.partial.begin() + static_cast<std::ptrdiff_t>(partial));
    out.insert(out.end(), o.complete.begin(), o.complete.begin() + static_cast<std::ptrdiff_t>(n - partial));
    return out;
  }

  /// Scored grasps with their oracle labels (labels indexed like the
  /// unfiltered sample, mapped through source_index).
  static std::string scored_lines(const StoredObject& o, const ScoredGrasps& s, const std::vector<std::uint8_t>& labels,
                                  const nlohmann::json& header) {
    LabeledGraspSet set{o.id, o.grasps.gripper, s.grasps, {}};
    for (std::size_t i = 0; i < s.size(); ++i) set.labels.push_back(labels[s.source_index[i]]);
    return write_grasp_lines(set, header, &s.scores);
  }

  static std::pair<std::vector<GraspPose>, std::vector<GraspPose>> split_halves(const std::vector<GraspPose>& v,
                                                                                 std::uint64_t seed) {
    Rng rng(seed);
    const auto order = rng.choose(v.size(), v.size());
    std::vector<GraspPose> a, b;
    for (std::size_t i = 0; i < order.size(); ++i) (i % 2 ? b : a).push_back(v[order[i]]);
    return {a, b};
  }

  /// Updates <out>/manifest.json (written to a temporary file, then renamed).
  void record(Stage s, const std::vector<std::string>& files) const {
    const auto path = out_dir() / "manifest.json";
    nlohmann::json m;
    if (std::filesystem::exists(path)) {
      try {
        m = nlohmann::json::parse(detail::read_file(path));
      } catch (const std::exception&) {
        m = nlohmann::json::object();
      }
    }
    m["config_hash"] = detail::hex64(config_hash(cfg_));
    m["seed"] = cfg_.seed;
    m["versions"] = {{"tool", kToolVersion},
                     {"grasp_format", kGraspFormatVersion},
                     {"cloud_format", kCloudFormatVersion},
                     {"checkpoint_format", nn::kCheckpointVersion}};
    nlohmann::json artifacts = nlohmann::json::array();
    for (const auto& f : files) artifacts.push_back((stage_dir(s) / f).string());
    m["stages"][stage_name(s)] = {{"hash", hash_hex(s)},
                                  {"path", stage_dir(s).string()},
                                  {"artifacts", artifacts},
                                  {"completed_at", detail::utc_now()}};
    const auto tmp = out_dir() / (".manifest.json.tmp-" + std::to_string(::getpid()));
    detail::write_file(tmp, m.dump(2) + "\n");
    std::filesystem::rename(tmp, path);
  }

  PipelineConfig cfg_;
  Log log_;
};

}  // namespace graspgen

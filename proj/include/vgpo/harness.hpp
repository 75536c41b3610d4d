#pragma once

// Experiment front-end: strict config parsing, ablation presets, run
// directories (config, manifest, metrics stream, checkpoints), curve export
// and the phenomena report.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>
#include <openssl/evp.h>

#include "vgpo/trainer.hpp"

namespace vgpo {

inline constexpr int kMetricsSchemaVersion = 1;

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Config

namespace detail {

inline std::string json_type_name(const nlohmann::json& v) {
  if (v.is_number_unsigned() || v.is_number_integer()) return "integer";
  return v.type_name();
}

inline double as_number(const std::string& key, const nlohmann::json& v) {
  if (!v.is_number()) throw ConfigError("config: key '" + key + "' expects a number, got " + json_type_name(v));
  return v.get<double>();
}

inline std::size_t as_count(const std::string& key, const nlohmann::json& v) {
  if (v.is_number_unsigned()) return v.get<std::size_t>();
  if (v.is_number_integer())
    throw ConfigError("config: key '" + key + "' expects a non-negative integer, got " + v.dump());
  throw ConfigError("config: key '" + key + "' expects a non-negative integer, got " + json_type_name(v));
}

inline bool as_bool(const std::string& key, const nlohmann::json& v) {
  if (!v.is_boolean()) throw ConfigError("config: key '" + key + "' expects true or false, got " + json_type_name(v));
  return v.get<bool>();
}

inline std::string as_string(const std::string& key, const nlohmann::json& v) {
  if (!v.is_string()) throw ConfigError("config: key '" + key + "' expects a string, got " + json_type_name(v));
  return v.get<std::string>();
}

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

/// `key = value` lines, '#' comments. Values are read as JSON scalars/arrays
/// when they parse as such, otherwise as bare strings.
inline nlohmann::json parse_key_value(std::string_view text) {
  nlohmann::json doc = nlohmann::json::object();
  std::istringstream is{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config: line " + std::to_string(lineno) + ": expected 'key = value'");
    const auto key = trim(std::string_view(body).substr(0, eq));
    const auto raw = trim(std::string_view(body).substr(eq + 1));
    if (key.empty()) throw ConfigError("config: line " + std::to_string(lineno) + ": empty key");
    if (doc.contains(key)) throw ConfigError("config: duplicate key '" + key + "'");
    auto parsed = nlohmann::json::parse(raw, nullptr, false);
    doc[key] = parsed.is_discarded() ? nlohmann::json(raw) : parsed;
  }
  return doc;
}

}  // namespace detail

inline nlohmann::json config_to_json(const TrainConfig& c) {
  nlohmann::json j;
  j["task"] = std::string(to_string(c.task));
  j["reward_sharpness"] = c.reward_sharpness;
  j["hidden_dims"] = c.hidden_dims;
  j["group_size"] = c.group_size;
  j["sampling_steps"] = c.sampling_steps;
  j["noise_level"] = c.noise_level;
  j["shared_initial_noise"] = c.shared_initial_noise;
  j["train_steps"] = c.train_steps;
  j["batch_contexts"] = c.batch_contexts;
  j["inner_epochs"] = c.inner_epochs;
  j["lr"] = c.lr;
  j["eps_clip"] = c.eps_clip;
  j["beta_kl"] = c.beta_kl;
  j["estimator"] = std::string(to_string(c.estimator));
  j["tcrm_enabled"] = c.tcrm_enabled;
  j["value_weights"] = c.value_weights;
  j["gamma"] = c.gamma;
  j["k"] = c.k;
  j["eps_std"] = c.eps_std;
  j["eps_mean"] = c.eps_mean;
  j["pretrain_steps"] = c.pretrain_steps;
  j["pretrain_batch"] = c.pretrain_batch;
  j["pretrain_lr"] = c.pretrain_lr;
  j["eval_interval"] = c.eval_interval;
  j["eval_samples_per_context"] = c.eval_samples_per_context;
  j["accuracy_threshold"] = c.accuracy_threshold;
  j["checkpoint_interval"] = c.checkpoint_interval;
  j["seed"] = c.seed;
  return j;
}

/// Applies the keys of a flat JSON object onto `base`; unknown keys and type
/// mismatches are rejected, and the result is validated.
inline TrainConfig config_from_json(const nlohmann::json& doc, TrainConfig base = {}) {
  using namespace detail;
  if (!doc.is_object()) throw ConfigError("config: top level must be an object of key/value pairs");
  TrainConfig& c = base;
  for (const auto& [key, v] : doc.items()) {
    if (key == "task") {
      try {
        c.task = task_kind_from_string(as_string(key, v));
      } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("config: ") + e.what());
      }
    } else if (key == "reward_sharpness") c.reward_sharpness = as_number(key, v);
    else if (key == "hidden_dims") {
      if (!v.is_array()) throw ConfigError("config: key 'hidden_dims' expects an array of integers");
      c.hidden_dims.clear();
      for (const auto& h : v) c.hidden_dims.push_back(as_count(key, h));
    } else if (key == "group_size") c.group_size = as_count(key, v);
    else if (key == "sampling_steps") c.sampling_steps = as_count(key, v);
    else if (key == "noise_level") c.noise_level = as_number(key, v);
    else if (key == "shared_initial_noise") c.shared_initial_noise = as_bool(key, v);
    else if (key == "train_steps") c.train_steps = as_count(key, v);
    else if (key == "batch_contexts") c.batch_contexts = as_count(key, v);
    else if (key == "inner_epochs") c.inner_epochs = as_count(key, v);
    else if (key == "lr") c.lr = as_number(key, v);
    else if (key == "eps_clip") c.eps_clip = as_number(key, v);
    else if (key == "beta_kl") c.beta_kl = as_number(key, v);
    else if (key == "estimator") {
      try {
        c.estimator = estimator_from_string(as_string(key, v));
      } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("config: ") + e.what());
      }
    } else if (key == "tcrm_enabled") c.tcrm_enabled = as_bool(key, v);
    else if (key == "value_weights") c.value_weights = as_bool(key, v);
    else if (key == "gamma") c.gamma = as_number(key, v);
    else if (key == "k") c.k = as_number(key, v);
    else if (key == "eps_std") c.eps_std = as_number(key, v);
    else if (key == "eps_mean") c.eps_mean = as_number(key, v);
    else if (key == "pretrain_steps") c.pretrain_steps = as_count(key, v);
    else if (key == "pretrain_batch") c.pretrain_batch = as_count(key, v);
    else if (key == "pretrain_lr") c.pretrain_lr = as_number(key, v);
    else if (key == "eval_interval") c.eval_interval = as_count(key, v);
    else if (key == "eval_samples_per_context") c.eval_samples_per_context = as_count(key, v);
    else if (key == "accuracy_threshold") c.accuracy_threshold = as_number(key, v);
    else if (key == "checkpoint_interval") c.checkpoint_interval = as_count(key, v);
    else if (key == "seed") c.seed = as_count(key, v);
    else throw ConfigError("config: unknown key '" + key + "'");
  }
  // flow-grpo never uses dense rewards; an explicit contradiction is still an error
  if (c.estimator == Estimator::flow_grpo && !doc.contains("tcrm_enabled")) c.tcrm_enabled = false;
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return c;
}

/// Parses a config document: JSON object, or `key = value` lines. Empty text
/// yields the defaults.
inline TrainConfig parse_config(std::string_view text) {
  const auto body = detail::trim(text);
  if (body.empty()) return config_from_json(nlohmann::json::object());
  nlohmann::json doc;
  if (body.front() == '{' || body.front() == '[') {
    doc = nlohmann::json::parse(body, nullptr, false);
    if (doc.is_discarded()) throw ConfigError("config: malformed JSON");
  } else {
    doc = detail::parse_key_value(body);
  }
  return config_from_json(doc);
}

inline TrainConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("config: cannot read " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config(ss.str());
}

inline std::string emit_config(const TrainConfig& c) { return config_to_json(c).dump(2) + "\n"; }

// ---------------------------------------------------------------------------
// Presets

enum class Preset { vgpo, flow_grpo, tcrm_only, adae_only };

inline constexpr std::array<Preset, 4> kAllPresets = {Preset::vgpo, Preset::flow_grpo, Preset::tcrm_only,
                                                      Preset::adae_only};

inline std::string_view to_string(Preset p) {
  switch (p) {
    case Preset::vgpo: return "vgpo";
    case Preset::flow_grpo: return "flow-grpo";
    case Preset::tcrm_only: return "tcrm-only";
    case Preset::adae_only: return "adae-only";
  }
  return "?";
}

inline Preset preset_from_string(std::string_view s) {
  for (auto p : kAllPresets)
    if (to_string(p) == s) return p;
  throw std::invalid_argument("unknown preset '" + std::string(s) + "'");
}

/// Presets only touch the estimator, dense-reward, k and omega switches.
inline TrainConfig apply_preset(TrainConfig c, Preset p, double k_vgpo = 0.5) {
  switch (p) {
    case Preset::vgpo:
      c.estimator = Estimator::vgpo, c.tcrm_enabled = true, c.value_weights = true, c.k = k_vgpo;
      break;
    case Preset::flow_grpo:
      c.estimator = Estimator::flow_grpo, c.tcrm_enabled = false, c.value_weights = false, c.k = 0.0;
      break;
    case Preset::tcrm_only:
      c.estimator = Estimator::vgpo, c.tcrm_enabled = true, c.value_weights = true, c.k = 0.0;
      break;
    case Preset::adae_only:
      c.estimator = Estimator::vgpo, c.tcrm_enabled = false, c.value_weights = false, c.k = k_vgpo;
      break;
  }
  return c;
}

// ---------------------------------------------------------------------------
// Records

inline nlohmann::json to_json(const MetricRecord& m) {
  nlohmann::json j;
  j["schema_version"] = kMetricsSchemaVersion;
  j["kind"] = "eval";
  j["step"] = m.step;
  j["mean_reward"] = m.mean_reward;
  j["accuracy"] = m.accuracy;
  j["quality_mean"] = m.quality_mean;
  j["group_reward_std_mean"] = m.group_reward_std_mean;
  j["kl_mean"] = m.kl_mean;
  j["update_norm"] = m.update_norm;
  return j;
}

inline nlohmann::json to_json(const TrainRecord& r) {
  nlohmann::json j;
  j["schema_version"] = kMetricsSchemaVersion;
  j["kind"] = "train";
  j["step"] = r.step;
  j["rollout_reward_mean"] = r.rollout_reward_mean;
  j["group_reward_std_mean"] = r.group_reward_std_mean;
  j["objective"] = r.objective;
  j["kl_mean"] = r.kl_mean;
  j["update_norm"] = r.update_norm;
  j["advantage_abs_mean"] = r.advantage_abs_mean;
  j["low_std_columns"] = r.low_std_columns;
  return j;
}

inline MetricRecord metric_from_json(const nlohmann::json& j) {
  if (j.value("schema_version", 0) != kMetricsSchemaVersion)
    throw std::runtime_error("metrics: unsupported schema_version");
  MetricRecord m;
  m.step = j.at("step").get<std::size_t>();
  m.mean_reward = j.at("mean_reward").get<double>();
  m.accuracy = j.at("accuracy").get<double>();
  m.quality_mean = j.at("quality_mean").get<double>();
  m.group_reward_std_mean = j.at("group_reward_std_mean").get<double>();
  m.kl_mean = j.at("kl_mean").get<double>();
  m.update_norm = j.at("update_norm").get<double>();
  return m;
}

/// Eval records of a metrics.jsonl stream, in file order.
inline std::vector<MetricRecord> read_eval_metrics(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("metrics: cannot read " + path.string());
  std::vector<MetricRecord> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    if (j.at("kind") == "eval") out.push_back(metric_from_json(j));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Hashing

/// Hex SHA-1 of "blob <size>\0<content>", as git computes object ids.
inline std::string git_blob_hash(std::string_view content) {
  const std::string header = "blob " + std::to_string(content.size()) + '\0';
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx) throw std::runtime_error("sha1: context allocation failed");
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int len = 0;
  const bool ok = EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) == 1 &&
                  EVP_DigestUpdate(ctx, header.data(), header.size()) == 1 &&
                  EVP_DigestUpdate(ctx, content.data(), content.size()) == 1 &&
                  EVP_DigestFinal_ex(ctx, md.data(), &len) == 1;
  EVP_MD_CTX_free(ctx);
  if (!ok) throw std::runtime_error("sha1: digest failed");
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int(md[i]);
  return os.str();
}

inline std::string read_file_bytes(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read " + p.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

// ---------------------------------------------------------------------------
// Runs

/// Pretrained reference policy, fully determined by the config's seed,
/// task, architecture and pretraining settings.
inline ParamVector pretrain_reference(const TrainConfig& cfg, std::vector<double>* loss_log = nullptr) {
  cfg.validate();
  const Mlp net(cfg.architecture());
  Rng rng(derive_seed(cfg.seed, {stream::kPretrain}));
  return pretrain(net, cfg.task_spec(), net.init_params(derive_seed(cfg.seed, {stream::kInit})),
                  PretrainOptions{cfg.pretrain_steps, cfg.pretrain_batch, cfg.pretrain_lr}, rng, loss_log);
}

struct RunOptions {
  std::optional<std::filesystem::path> out_dir;  // nothing is written when empty
  std::optional<ParamVector> reference;  // pretrained here when empty
  std::optional<std::filesystem::path> reference_path;  // recorded in the manifest
  std::string label;
};

struct RunResult {
  std::vector<MetricRecord> evals;
  std::vector<TrainRecord> train;
  ParamVector reference;
  ParamVector final_params;
};

/// Files in a run directory:
///   config.json     effective configuration
///   manifest.json   seed, schema version, git-style hash of the inputs
///   metrics.jsonl   eval and train records (deterministic given config)
///   timing.jsonl    wall-clock per record (not deterministic)
///   pretrained.ckpt, final.ckpt, checkpoint_<step>.ckpt
inline RunResult run(const TrainConfig& cfg, const RunOptions& opts = {}) {
  cfg.validate();
  RunResult result;
  const auto arch = cfg.architecture();

  std::ofstream metrics, timing;
  const auto& dir = opts.out_dir;
  const std::string config_text = emit_config(cfg);
  if (dir) {
    std::filesystem::create_directories(*dir);
    std::ofstream(*dir / "config.json") << config_text;
    metrics.open(*dir / "metrics.jsonl", std::ios::trunc);
    timing.open(*dir / "timing.jsonl", std::ios::trunc);
    if (!metrics || !timing) throw std::runtime_error("run: cannot open metrics files in " + dir->string());
  }

  result.reference = opts.reference ? *opts.reference : pretrain_reference(cfg);
  if (result.reference.size() != arch.param_count())
    throw std::invalid_argument("run: reference parameters do not match the configured architecture");

  if (dir) {
    std::string inputs = config_text;
    if (opts.reference_path) inputs += read_file_bytes(*opts.reference_path);
    nlohmann::json manifest;
    manifest["schema_version"] = kMetricsSchemaVersion;
    manifest["seed"] = cfg.seed;
    manifest["input_hash"] = git_blob_hash(inputs);
    manifest["config_hash"] = git_blob_hash(config_text);
    manifest["reference_checkpoint"] = opts.reference_path ? nlohmann::json(opts.reference_path->string())
                                                           : nlohmann::json(nullptr);
    manifest["label"] = opts.label;
    std::ofstream(*dir / "manifest.json") << manifest.dump(2) << "\n";
    save_checkpoint((*dir / "pretrained.ckpt").string(), arch, result.reference);
  }

  Trainer trainer(cfg, result.reference);
  auto emit_eval = [&](MetricRecord m) {
    if (!result.train.empty()) {
      m.kl_mean = result.train.back().kl_mean;
      m.update_norm = result.train.back().update_norm;
    }
    result.evals.push_back(m);
    if (dir) {
      metrics << to_json(m).dump() << '\n';
      timing << nlohmann::json{{"kind", "eval"}, {"step", m.step}, {"wallclock_ms", m.wallclock_ms}}.dump() << '\n';
      metrics.flush();
      timing.flush();
    }
  };

  try {
    emit_eval(trainer.evaluate(0));
    for (std::size_t s = 1; s <= cfg.train_steps; ++s) {
      const auto rec = trainer.train_step(s);
      result.train.push_back(rec);
      if (dir) {
        metrics << to_json(rec).dump() << '\n';
        timing << nlohmann::json{{"kind", "train"}, {"step", s}, {"wallclock_ms", rec.wallclock_ms}}.dump() << '\n';
      }
      if (s % cfg.eval_interval == 0 || s == cfg.train_steps) emit_eval(trainer.evaluate(s));
      if (dir && cfg.checkpoint_interval > 0 && s % cfg.checkpoint_interval == 0)
        save_checkpoint((*dir / ("checkpoint_" + std::to_string(s) + ".ckpt")).string(), arch,
                        trainer.policies().current);
    }
  } catch (...) {
    if (dir) {
      metrics.flush();
      timing.flush();
    }
    throw;
  }
  result.final_params = trainer.policies().current;
  if (dir) save_checkpoint((*dir / "final.ckpt").string(), arch, result.final_params);
  return result;
}

/// CSV with one row per eval record.
inline void write_curves_csv(std::ostream& os, std::span<const MetricRecord> evals) {
  os << "step,mean_reward,accuracy,quality_mean,group_reward_std_mean,kl_mean,update_norm\n";
  os << std::setprecision(17);
  for (const auto& m : evals)
    os << m.step << ',' << m.mean_reward << ',' << m.accuracy << ',' << m.quality_mean << ','
       << m.group_reward_std_mean << ',' << m.kl_mean << ',' << m.update_norm << '\n';
}

inline std::filesystem::path dump_curves(const std::filesystem::path& run_dir,
                                         std::optional<std::filesystem::path> out = std::nullopt) {
  const auto evals = read_eval_metrics(run_dir / "metrics.jsonl");
  const auto path = out.value_or(run_dir / "curves.csv");
  std::ofstream os(path);
  if (!os) throw std::runtime_error("dump-curves: cannot write " + path.string());
  write_curves_csv(os, evals);
  return path;
}

// ---------------------------------------------------------------------------
// Phenomena

inline double median(std::vector<double> v) {
  if (v.empty()) throw std::invalid_argument("median: empty input");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

struct StdTrend {
  bool evaluated = false;  // false when the run did not converge
  bool decreasing = false;  // final-quartile mean < first-quartile mean
  double first_quartile_mean = 0.0;
  double final_quartile_mean = 0.0;
  std::string note;
};

/// A run counts as converging when its final eval reward exceeds the initial
/// one by at least `min_improvement`.
inline StdTrend reward_std_trend(std::span<const MetricRecord> evals, double min_improvement = 0.05) {
  StdTrend t;
  if (evals.size() < 4 || evals.back().mean_reward < evals.front().mean_reward + min_improvement) {
    t.note = "no convergence, std trend not evaluated";
    return t;
  }
  const std::size_t q = evals.size() / 4;
  double first = 0.0, last = 0.0;
  for (std::size_t i = 0; i < q; ++i) {
    first += evals[i].group_reward_std_mean;
    last += evals[evals.size() - q + i].group_reward_std_mean;
  }
  t.evaluated = true;
  t.first_quartile_mean = first / static_cast<double>(q);
  t.final_quartile_mean = last / static_cast<double>(q);
  t.decreasing = t.final_quartile_mean < t.first_quartile_mean;
  t.note = t.decreasing ? "reward std decreases as the policy converges" : "reward std does not decrease";
  return t;
}

/// First eval step whose reward reaches fraction * (final eval reward).
inline std::optional<std::size_t> steps_to_threshold(std::span<const MetricRecord> evals, double fraction = 0.8) {
  if (evals.empty()) return std::nullopt;
  const double threshold = fraction * evals.back().mean_reward;
  for (const auto& m : evals)
    if (m.mean_reward >= threshold) return m.step;
  return std::nullopt;
}

/// sparse / dense steps-to-threshold; > 1 means the dense run is faster.
inline double convergence_speedup(double sparse_steps, double dense_steps) {
  if (dense_steps <= 0.0) return sparse_steps <= 0.0 ? 1.0 : std::numeric_limits<double>::infinity();
  return sparse_steps / dense_steps;
}

/// Quality drop from the first eval at the point where the reward first
/// reaches `target`, interpolating linearly between bracketing evals.
inline std::optional<double> quality_drop_at_reward(std::span<const MetricRecord> evals, double target) {
  if (evals.empty()) return std::nullopt;
  const double q0 = evals.front().quality_mean;
  if (evals.front().mean_reward >= target) return 0.0;
  for (std::size_t i = 1; i < evals.size(); ++i) {
    const auto& a = evals[i - 1];
    const auto& b = evals[i];
    if (b.mean_reward >= target) {
      const double span = b.mean_reward - a.mean_reward;
      const double w = span > 0.0 ? (target - a.mean_reward) / span : 1.0;
      return q0 - (a.quality_mean + w * (b.quality_mean - a.quality_mean));
    }
  }
  return std::nullopt;
}

/// Eval series per preset, indexed by seed (matched across presets).
using RunSet = std::map<std::string, std::vector<std::vector<MetricRecord>>>;

struct TradeoffRow {
  std::size_t seed_index = 0;
  double matched_reward = 0.0;
  double vgpo_quality_drop = 0.0;
  double flow_grpo_quality_drop = 0.0;
  double vgpo_final_reward = 0.0;
  double flow_grpo_final_reward = 0.0;
  double vgpo_final_quality = 0.0;
  double flow_grpo_final_quality = 0.0;
};

struct PhenomenaReport {
  std::map<std::string, std::vector<StdTrend>> std_trends;
  std::vector<double> dense_steps;  // tcrm-only (or vgpo) steps-to-threshold per seed
  std::vector<double> sparse_steps;  // flow-grpo
  double median_dense_steps = 0.0;
  double median_sparse_steps = 0.0;
  double speedup = 1.0;
  bool dense_not_slower = false;
  std::vector<TradeoffRow> tradeoff;
  double median_vgpo_quality_drop = 0.0;
  double median_flow_grpo_quality_drop = 0.0;
  bool vgpo_quality_drop_not_worse = false;
};

inline double steps_or_last(std::span<const MetricRecord> evals, double fraction) {
  const auto s = steps_to_threshold(evals, fraction);
  return static_cast<double>(s ? *s : evals.back().step);
}

/// Requires "vgpo" and "flow-grpo" series with matching seed counts; uses
/// "tcrm-only" as the dense-reward arm when present, otherwise "vgpo".
inline PhenomenaReport reproduce_phenomena(const RunSet& runs, double threshold_fraction = 0.8) {
  for (const char* need : {"vgpo", "flow-grpo"})
    if (!runs.contains(need) || runs.at(need).empty())
      throw std::invalid_argument(std::string("phenomena: missing runs for preset '") + need + "'");
  const auto& vg = runs.at("vgpo");
  const auto& fg = runs.at("flow-grpo");
  const auto& dense = runs.contains("tcrm-only") ? runs.at("tcrm-only") : vg;
  if (vg.size() != fg.size() || dense.size() != fg.size())
    throw std::invalid_argument("phenomena: presets must have the same number of seeds");
  for (const auto& [name, series] : runs)
    for (const auto& s : series)
      if (s.empty()) throw std::invalid_argument("phenomena: empty eval series for preset '" + name + "'");

  PhenomenaReport rep;
  for (const auto& [name, series] : runs)
    for (const auto& s : series) rep.std_trends[name].push_back(reward_std_trend(s));

  for (std::size_t i = 0; i < fg.size(); ++i) {
    rep.dense_steps.push_back(steps_or_last(dense[i], threshold_fraction));
    rep.sparse_steps.push_back(steps_or_last(fg[i], threshold_fraction));
  }
  rep.median_dense_steps = median(rep.dense_steps);
  rep.median_sparse_steps = median(rep.sparse_steps);
  rep.speedup = convergence_speedup(rep.median_sparse_steps, rep.median_dense_steps);
  rep.dense_not_slower = rep.median_dense_steps <= rep.median_sparse_steps;

  std::vector<double> vd, fd;
  for (std::size_t i = 0; i < fg.size(); ++i) {
    TradeoffRow row;
    row.seed_index = i;
    row.vgpo_final_reward = vg[i].back().mean_reward;
    row.flow_grpo_final_reward = fg[i].back().mean_reward;
    row.vgpo_final_quality = vg[i].back().quality_mean;
    row.flow_grpo_final_quality = fg[i].back().quality_mean;
    auto peak = [](const std::vector<MetricRecord>& s) {
      double m = s.front().mean_reward;
      for (const auto& r : s) m = std::max(m, r.mean_reward);
      return m;
    };
    row.matched_reward = std::min(peak(vg[i]), peak(fg[i]));
    row.vgpo_quality_drop = quality_drop_at_reward(vg[i], row.matched_reward).value_or(0.0);
    row.flow_grpo_quality_drop = quality_drop_at_reward(fg[i], row.matched_reward).value_or(0.0);
    vd.push_back(row.vgpo_quality_drop);
    fd.push_back(row.flow_grpo_quality_drop);
    rep.tradeoff.push_back(row);
  }
  rep.median_vgpo_quality_drop = median(vd);
  rep.median_flow_grpo_quality_drop = median(fd);
  rep.vgpo_quality_drop_not_worse = rep.median_vgpo_quality_drop <= rep.median_flow_grpo_quality_drop;
  return rep;
}

inline nlohmann::json to_json(const PhenomenaReport& r) {
  nlohmann::json j;
  for (const auto& [name, trends] : r.std_trends) {
    auto& arr = j["reward_std_trend"][name];
    arr = nlohmann::json::array();
    for (const auto& t : trends)
      arr.push_back({{"evaluated", t.evaluated},
                     {"decreasing", t.decreasing},
                     {"first_quartile_mean", t.first_quartile_mean},
                     {"final_quartile_mean", t.final_quartile_mean},
                     {"note", t.note}});
  }
  j["convergence"] = {{"dense_steps", r.dense_steps},
                      {"sparse_steps", r.sparse_steps},
                      {"median_dense_steps", r.median_dense_steps},
                      {"median_sparse_steps", r.median_sparse_steps},
                      {"speedup", r.speedup},
                      {"dense_not_slower", r.dense_not_slower}};
  auto& rows = j["quality_vs_reward"]["rows"];
  rows = nlohmann::json::array();
  for (const auto& t : r.tradeoff)
    rows.push_back({{"seed_index", t.seed_index},
                    {"matched_reward", t.matched_reward},
                    {"vgpo_quality_drop", t.vgpo_quality_drop},
                    {"flow_grpo_quality_drop", t.flow_grpo_quality_drop},
                    {"vgpo_final_reward", t.vgpo_final_reward},
                    {"flow_grpo_final_reward", t.flow_grpo_final_reward},
                    {"vgpo_final_quality", t.vgpo_final_quality},
                    {"flow_grpo_final_quality", t.flow_grpo_final_quality}});
  j["quality_vs_reward"]["median_vgpo_quality_drop"] = r.median_vgpo_quality_drop;
  j["quality_vs_reward"]["median_flow_grpo_quality_drop"] = r.median_flow_grpo_quality_drop;
  j["quality_vs_reward"]["vgpo_quality_drop_not_worse"] = r.vgpo_quality_drop_not_worse;
  return j;
}

inline void write_tradeoff_csv(std::ostream& os, const PhenomenaReport& r) {
  os << "seed_index,matched_reward,vgpo_quality_drop,flow_grpo_quality_drop,vgpo_final_reward,"
        "flow_grpo_final_reward,vgpo_final_quality,flow_grpo_final_quality\n";
  os << std::setprecision(17);
  for (const auto& t : r.tradeoff)
    os << t.seed_index << ',' << t.matched_reward << ',' << t.vgpo_quality_drop << ',' << t.flow_grpo_quality_drop
       << ',' << t.vgpo_final_reward << ',' << t.flow_grpo_final_reward << ',' << t.vgpo_final_quality << ','
       << t.flow_grpo_final_quality << '\n';
}

}  // namespace vgpo

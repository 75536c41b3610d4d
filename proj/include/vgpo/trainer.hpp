#pragma once

// Policy optimization loop: flow-matching pretraining, the clipped surrogate
// with a KL penalty against the reference policy, and one training step
// (refresh old policy, roll out groups, estimate advantages, ascend).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "vgpo/advantage.hpp"
#include "vgpo/diffnet.hpp"
#include "vgpo/flow.hpp"
#include "vgpo/random.hpp"
#include "vgpo/rollout.hpp"
#include "vgpo/tasks.hpp"

namespace vgpo {

struct TrainConfig {
  // task
  TaskKind task = TaskKind::mode_preference;
  double reward_sharpness = 0.0;  // <= 0 keeps the task default
  // network
  std::vector<std::size_t> hidden_dims = {64, 64};
  // sampling
  std::size_t group_size = 8;
  std::size_t sampling_steps = 10;
  double noise_level = 0.7;
  bool shared_initial_noise = true;
  // optimization
  std::size_t train_steps = 1000;
  std::size_t batch_contexts = 4;
  std::size_t inner_epochs = 1;
  double lr = 1e-3;
  double eps_clip = 0.2;
  double beta_kl = 0.01;
  // advantages
  Estimator estimator = Estimator::vgpo;
  bool tcrm_enabled = true;
  bool value_weights = true;
  double gamma = 0.9;
  double k = 0.5;
  double eps_std = 1e-8;
  double eps_mean = 1e-6;
  // pretraining
  std::size_t pretrain_steps = 3000;
  std::size_t pretrain_batch = 256;
  double pretrain_lr = 2e-3;
  // evaluation and output
  std::size_t eval_interval = 25;
  std::size_t eval_samples_per_context = 256;
  double accuracy_threshold = 0.5;
  std::size_t checkpoint_interval = 250;  // 0 disables periodic checkpoints
  std::uint64_t seed = 0;

  bool operator==(const TrainConfig&) const = default;

  void validate() const {
    if (group_size < 2) throw std::invalid_argument("config: group_size must be >= 2");
    if (sampling_steps < 2) throw std::invalid_argument("config: sampling_steps must be >= 2");
    if (!(noise_level >= 0.0)) throw std::invalid_argument("config: noise_level must be >= 0");
    if (batch_contexts < 1) throw std::invalid_argument("config: batch_contexts must be >= 1");
    if (inner_epochs < 1) throw std::invalid_argument("config: inner_epochs must be >= 1");
    if (!(lr > 0.0)) throw std::invalid_argument("config: lr must be > 0");
    if (!(eps_clip > 0.0)) throw std::invalid_argument("config: eps_clip must be > 0");
    if (!(beta_kl >= 0.0)) throw std::invalid_argument("config: beta_kl must be >= 0");
    if (!(gamma >= 0.0 && gamma < 1.0)) throw std::invalid_argument("config: gamma must be in [0, 1)");
    if (!(k >= 0.0)) throw std::invalid_argument("config: k must be >= 0");
    if (!(eps_std > 0.0)) throw std::invalid_argument("config: eps_std must be > 0");
    if (!(eps_mean > 0.0)) throw std::invalid_argument("config: eps_mean must be > 0");
    if (estimator == Estimator::flow_grpo && tcrm_enabled)
      throw std::invalid_argument("config: estimator flow-grpo requires tcrm_enabled = false");
    if (!(pretrain_lr > 0.0)) throw std::invalid_argument("config: pretrain_lr must be > 0");
    if (pretrain_batch < 1) throw std::invalid_argument("config: pretrain_batch must be >= 1");
    if (eval_interval < 1) throw std::invalid_argument("config: eval_interval must be >= 1");
    if (eval_samples_per_context < 1) throw std::invalid_argument("config: eval_samples_per_context must be >= 1");
    if (!(accuracy_threshold >= 0.0 && accuracy_threshold <= 1.0))
      throw std::invalid_argument("config: accuracy_threshold must be in [0, 1]");
    for (auto h : hidden_dims)
      if (h == 0) throw std::invalid_argument("config: hidden_dims entries must be >= 1");
    schedule();
  }

  TaskSpec task_spec() const {
    TaskSpec t = task_by_kind(task);
    if (reward_sharpness > 0.0) t.reward_sharpness = reward_sharpness;
    t.validate();
    return t;
  }

  Architecture architecture() const {
    const auto t = task_spec();
    return Architecture{t.state_dim, t.context_count, hidden_dims, Activation::tanh};
  }

  NoiseSchedule schedule() const { return NoiseSchedule::make(noise_level, sampling_steps); }

  AdvantageSettings advantage_settings() const {
    return {estimator, tcrm_enabled, value_weights, gamma, k, eps_std, eps_mean};
  }
};

/// current theta, old theta (generates rollouts), reference theta (KL anchor).
struct PolicyTriplet {
  ParamVector current;
  ParamVector old;
  ParamVector reference;

  static PolicyTriplet from_reference(const ParamVector& ref) { return {ref, ref, ref}; }
};

// ---------------------------------------------------------------------------
// Pretraining

struct PretrainOptions {
  std::size_t steps = 3000;
  std::size_t batch = 256;
  double lr = 2e-3;
};

/// Minimizes the flow-matching loss on task data starting from `init`.
/// Contexts are drawn uniformly and independently of the data.
inline ParamVector pretrain(const Mlp& net, const TaskSpec& task, ParamVector init, const PretrainOptions& opts,
                            Rng& rng, std::vector<double>* loss_log = nullptr) {
  if (init.size() != net.param_count()) throw std::invalid_argument("pretrain: parameter length mismatch");
  AdamState adam(net.param_count());
  const AdamConfig cfg{opts.lr};
  std::vector<FmSample> batch(opts.batch);
  std::uniform_real_distribution<double> utau(0.0, 1.0);
  for (std::size_t s = 0; s < opts.steps; ++s) {
    for (auto& b : batch) {
      b.context = sample_context(task, rng);
      b.x0 = sample_data(task, b.context, rng);
      b.x1 = sample_noise(task.state_dim, rng);
      b.tau = utau(rng);
    }
    const auto lg = fm_loss_and_grad(net, init, batch);
    if (!std::isfinite(lg.loss))
      throw std::runtime_error("pretrain: loss diverged at step " + std::to_string(s));
    if (loss_log) loss_log->push_back(lg.loss);
    adam_update(init, lg.gradient, adam, cfg);
  }
  return init;
}

// ---------------------------------------------------------------------------
// Clipped surrogate

struct SurrogateResult {
  double objective = 0.0;  // surrogate_mean - beta * kl_mean
  double surrogate_mean = 0.0;
  double kl_mean = 0.0;
  std::vector<double> ratios;  // one per (group, trajectory, step)
  std::vector<double> gradient;  // d objective / d current params
};

/// Mean over groups, trajectories and steps of
///   min(r A, clip(r, 1 - eps, 1 + eps) A) - beta * KL(pi_theta || pi_ref),
/// with r = exp(logp_theta - logp_old). Only the current policy's step mean
/// is recomputed; states, noises and logp_old come from the rollouts.
inline SurrogateResult surrogate_loss_and_grad(const Mlp& net, const PolicyTriplet& policies,
                                               std::span<const RolloutGroup> groups,
                                               std::span<const AdvantageTable> advantages,
                                               const NoiseSchedule& schedule, double eps_clip, double beta_kl) {
  if (groups.size() != advantages.size()) throw std::invalid_argument("surrogate: one advantage table per group");
  if (!(transition_variance(1.0, schedule) > 0.0))
    throw std::domain_error("surrogate: deterministic sampler (a = 0) has no policy ratio; RL needs a > 0");

  std::size_t n = 0;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const auto& grp = groups[g];
    const auto& A = advantages[g].values;
    if (A.rows() != grp.group_size() || A.cols() != grp.steps())
      throw std::invalid_argument("surrogate: advantage table shape does not match group");
    for (const auto& tr : grp.trajectories) {
      if (tr.steps() != schedule.steps) throw std::invalid_argument("surrogate: trajectory length mismatch");
      if (tr.logp_old.size() != tr.steps()) throw std::invalid_argument("surrogate: missing old log-probabilities");
    }
    n += grp.group_size() * grp.steps();
  }
  if (n == 0) throw std::invalid_argument("surrogate: empty batch");

  SurrogateResult out;
  out.gradient.assign(net.param_count(), 0.0);
  out.ratios.reserve(n);
  const double inv_n = 1.0 / static_cast<double>(n);
  const std::size_t T = schedule.steps;
  std::vector<double> upstream;
  Tape tape;

  for (std::size_t g = 0; g < groups.size(); ++g) {
    const auto& grp = groups[g];
    const auto& A = advantages[g].values;
    for (std::size_t i = 0; i < grp.group_size(); ++i) {
      const auto& tr = grp.trajectories[i];
      for (std::size_t j = 0; j < T; ++j) {
        const double tau = schedule.tau(T - j);
        const auto& x = tr.states[j];
        const auto& x_next = tr.states[j + 1];
        const NetInput in{x, tau, tr.context};

        StepDistribution cur{transition_mean(x, net.forward(policies.current, in, tape), tau, schedule),
                             transition_variance(tau, schedule)};
        const double logp = transition_logpdf(x_next, cur);
        const double r = std::exp(logp - tr.logp_old[j]);
        const double adv = A(i, j);
        const double clipped = std::clamp(r, 1.0 - eps_clip, 1.0 + eps_clip);
        const bool unclipped_branch = r * adv <= clipped * adv;
        const double term = unclipped_branch ? r * adv : clipped * adv;

        double kl = 0.0;
        StepDistribution ref;
        if (beta_kl > 0.0) {
          ref = {transition_mean(x, net.forward(policies.reference, in), tau, schedule), cur.variance};
          kl = kl_step(cur, ref);
        }
        out.surrogate_mean += term * inv_n;
        out.kl_mean += kl * inv_n;
        out.ratios.push_back(r);

        // d/d mean: surrogate via d logp / d mean = (x_next - mean) / var,
        // KL via (mean - mean_ref) / var.
        const double dmean_dv = mean_velocity_jacobian(tau, schedule);
        upstream.assign(x.size(), 0.0);
        bool any = false;
        for (std::size_t d = 0; d < x.size(); ++d) {
          double gm = 0.0;
          if (unclipped_branch && adv != 0.0) gm += adv * r * (x_next[d] - cur.mean[d]) / cur.variance;
          if (beta_kl > 0.0) gm -= beta_kl * (cur.mean[d] - ref.mean[d]) / cur.variance;
          upstream[d] = gm * dmean_dv * inv_n;
          any = any || upstream[d] != 0.0;
        }
        if (any) net.backward(policies.current, tape, upstream, out.gradient);
      }
    }
  }
  out.objective = out.surrogate_mean - beta_kl * out.kl_mean;
  return out;
}

// ---------------------------------------------------------------------------
// Training step and evaluation

/// Statistics of one optimization step, measured on its SDE rollouts.
struct TrainRecord {
  std::size_t step = 0;
  double rollout_reward_mean = 0.0;
  double group_reward_std_mean = 0.0;
  double objective = 0.0;
  double kl_mean = 0.0;
  double update_norm = 0.0;
  double advantage_abs_mean = 0.0;
  std::size_t low_std_columns = 0;  // columns flagged by near_zero_std_diagnostic
  double wallclock_ms = 0.0;
};

/// Evaluation of the current policy on deterministic ODE samples.
struct MetricRecord {
  std::size_t step = 0;
  double mean_reward = 0.0;
  double accuracy = 0.0;  // fraction of samples with reward > threshold
  double quality_mean = 0.0;
  double group_reward_std_mean = 0.0;
  double kl_mean = 0.0;  // from the most recent training step
  double update_norm = 0.0;  // from the most recent training step
  double wallclock_ms = 0.0;
};

inline double elapsed_ms(std::chrono::steady_clock::time_point since) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - since).count();
}

class Trainer {
 public:
  Trainer(TrainConfig config, const ParamVector& reference)
      : config_(std::move(config)),
        task_((config_.validate(), config_.task_spec())),
        net_(config_.architecture()),
        schedule_(config_.schedule()),
        policies_(PolicyTriplet::from_reference(reference)),
        adam_(net_.param_count()) {
    if (reference.size() != net_.param_count()) throw std::invalid_argument("Trainer: reference has wrong length");
  }

  const TrainConfig& config() const { return config_; }
  const TaskSpec& task() const { return task_; }
  const Mlp& net() const { return net_; }
  const NoiseSchedule& schedule() const { return schedule_; }
  const PolicyTriplet& policies() const { return policies_; }
  PolicyTriplet& policies() { return policies_; }

  /// theta_old <- theta, then samples batch_contexts groups under theta_old.
  std::vector<RolloutGroup> collect(std::size_t step_index) {
    policies_.old = policies_.current;
    Rng ctx_rng(derive_seed(config_.seed, {stream::kContexts, step_index}));
    const NetField field{net_, policies_.old};
    const RolloutOptions opts{config_.estimator == Estimator::vgpo && config_.tcrm_enabled,
                              config_.shared_initial_noise};
    std::vector<RolloutGroup> groups;
    groups.reserve(config_.batch_contexts);
    for (std::size_t b = 0; b < config_.batch_contexts; ++b) {
      const std::size_t c = sample_context(task_, ctx_rng);
      groups.push_back(rollout_group(field, task_, c, config_.group_size, schedule_,
                                     GroupSeed{config_.seed, step_index, b}, opts));
    }
    return groups;
  }

  /// Estimates advantages for `groups` and applies inner_epochs ascent steps.
  TrainRecord update(std::span<const RolloutGroup> groups, std::size_t step_index) {
    TrainRecord rec;
    rec.step = step_index;
    const auto settings = config_.advantage_settings();
    std::vector<AdvantageTable> adv;
    adv.reserve(groups.size());
    double reward_sum = 0.0, std_sum = 0.0, abs_sum = 0.0;
    std::size_t reward_n = 0, abs_n = 0;
    for (const auto& g : groups) {
      auto ga = estimate_advantages(g, settings);
      const auto rewards = g.terminal_rewards();
      for (double r : rewards) reward_sum += r;
      reward_n += rewards.size();
      std_sum += column_stats(rewards).std;
      for (std::size_t j = 0; j < ga.q.cols(); ++j)
        if (near_zero_std_diagnostic(ga.q.column(j), 1e-2, settings.eps_std).flagged) ++rec.low_std_columns;
      for (double a : ga.advantages.values.data()) abs_sum += std::abs(a);
      abs_n += ga.advantages.values.data().size();
      adv.push_back(std::move(ga.advantages));
    }
    if (!groups.empty()) {
      rec.rollout_reward_mean = reward_sum / static_cast<double>(reward_n);
      rec.group_reward_std_mean = std_sum / static_cast<double>(groups.size());
      rec.advantage_abs_mean = abs_n ? abs_sum / static_cast<double>(abs_n) : 0.0;
    }

    const ParamVector before = policies_.current;
    const AdamConfig acfg{config_.lr};
    std::vector<double> descent(net_.param_count());
    for (std::size_t epoch = 0; epoch < config_.inner_epochs; ++epoch) {
      const auto s = surrogate_loss_and_grad(net_, policies_, groups, adv, schedule_, config_.eps_clip,
                                             config_.beta_kl);
      if (epoch == 0) {
        rec.objective = s.objective;
        rec.kl_mean = s.kl_mean;
      }
      for (std::size_t p = 0; p < descent.size(); ++p) descent[p] = -s.gradient[p];
      adam_update(policies_.current, descent, adam_, acfg);
    }
    if (!policies_.current.all_finite())
      throw std::runtime_error("train step " + std::to_string(step_index) + ": parameters became non-finite");
    rec.update_norm = l2_distance(before, policies_.current);
    return rec;
  }

  TrainRecord train_step(std::size_t step_index) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto groups = collect(step_index);
    auto rec = update(groups, step_index);
    rec.wallclock_ms = elapsed_ms(t0);
    return rec;
  }

  /// ODE evaluation with fixed evaluation noise, plus the within-group SDE
  /// reward std per context.
  MetricRecord evaluate(std::size_t step) const {
    const auto t0 = std::chrono::steady_clock::now();
    MetricRecord m;
    m.step = step;
    const NetField field{net_, policies_.current};
    double rsum = 0.0, qsum = 0.0;
    std::size_t hits = 0, n = 0;
    for (std::size_t c = 0; c < task_.context_count; ++c) {
      Rng rng(derive_seed(config_.seed, {stream::kEval, c}));
      for (std::size_t s = 0; s < config_.eval_samples_per_context; ++s) {
        const auto x1 = sample_noise(task_.state_dim, rng);
        const auto x0 = ode_sample(field, x1, c, schedule_.steps);
        const double r = reward(task_, x0, c);
        rsum += r;
        qsum += quality(task_, x0);
        if (r > config_.accuracy_threshold) ++hits;
        ++n;
      }
    }
    m.mean_reward = rsum / static_cast<double>(n);
    m.quality_mean = qsum / static_cast<double>(n);
    m.accuracy = static_cast<double>(hits) / static_cast<double>(n);

    double std_sum = 0.0;
    if (transition_variance(1.0, schedule_) > 0.0) {
      const std::uint64_t eval_seed = derive_seed(config_.seed, {stream::kEval});
      for (std::size_t c = 0; c < task_.context_count; ++c) {
        const auto g = rollout_group(field, task_, c, config_.group_size, schedule_, GroupSeed{eval_seed, 0, c},
                                     RolloutOptions{false, config_.shared_initial_noise});
        std_sum += column_stats(g.terminal_rewards()).std;
      }
    }
    m.group_reward_std_mean = std_sum / static_cast<double>(task_.context_count);
    m.wallclock_ms = elapsed_ms(t0);
    return m;
  }

 private:
  TrainConfig config_;
  TaskSpec task_;
  Mlp net_;
  NoiseSchedule schedule_;
  PolicyTriplet policies_;
  AdamState adam_;
};

}  // namespace vgpo

#pragma once

// Denoising-MDP rollouts: groups of SDE trajectories under a frozen policy,
// with per-step instant rewards from one-step ODE projection.
//
// Indexing: a trajectory with T steps stores states[0] = s_T ... states[T] = s_0.
// Step j (0-based) moves states[j] -> states[j+1] and corresponds to
// t = T - j, taken at tau_t = (T - j) / T. instant_rewards[j] is R_t.

#include <cmath>
#include <cstdint>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "vgpo/flow.hpp"
#include "vgpo/random.hpp"
#include "vgpo/tasks.hpp"

namespace vgpo {

struct Trajectory {
  std::size_t context = 0;
  std::vector<std::vector<double>> states;  // T + 1
  std::vector<std::vector<double>> noises;  // T step noises
  std::vector<StepDistribution> step_dists;  // T, under the generating policy
  std::vector<double> logp_old;  // T; empty when the schedule is deterministic (a = 0)
  std::vector<double> instant_rewards;  // T: R_T ... R_1; empty if not computed
  double terminal_reward = 0.0;

  std::size_t steps() const { return step_dists.size(); }
  const std::vector<double>& terminal_state() const { return states.back(); }
};

struct RolloutGroup {
  std::size_t context = 0;
  std::vector<Trajectory> trajectories;

  std::size_t group_size() const { return trajectories.size(); }
  std::size_t steps() const { return trajectories.empty() ? 0 : trajectories.front().steps(); }

  std::vector<double> terminal_rewards() const {
    std::vector<double> r;
    r.reserve(trajectories.size());
    for (const auto& t : trajectories) r.push_back(t.terminal_reward);
    return r;
  }
};

struct RolloutOptions {
  bool compute_instant_rewards = true;
  bool shared_initial_noise = false;  // one s_T per group instead of per trajectory
};

/// R_t = reward(s_{t-1} - tau_{t-1} * v(s_{t-1}, tau_{t-1})).
template <VelocityField F>
double instant_reward(const F& field_old, std::span<const double> s_next, double tau_next, const TaskSpec& task,
                      std::size_t context) {
  return reward(task, ode_project(field_old, s_next, tau_next, context), context);
}

/// Samples one trajectory. `rng` supplies the initial state (unless
/// `initial` is given) and then the T step noises.
template <VelocityField F>
Trajectory rollout_trajectory(const F& field_old, const TaskSpec& task, std::size_t context,
                              const NoiseSchedule& schedule, Rng& rng, const RolloutOptions& opts,
                              const std::vector<double>* initial = nullptr) {
  const std::size_t T = schedule.steps;
  Trajectory tr;
  tr.context = context;
  tr.states.reserve(T + 1);
  tr.states.push_back(initial ? *initial : sample_noise(task.state_dim, rng));
  tr.noises.reserve(T);
  tr.step_dists.reserve(T);
  const bool stochastic = transition_variance(1.0, schedule) > 0.0;
  for (std::size_t j = 0; j < T; ++j) {
    const std::size_t t = T - j;
    auto noise = sample_noise(task.state_dim, rng);
    try {
      StepResult step = sde_step(field_old, tr.states.back(), schedule.tau(t), context, schedule, noise);
      if (stochastic) tr.logp_old.push_back(transition_logpdf(step.x_next, step.dist));
      tr.noises.push_back(std::move(noise));
      tr.step_dists.push_back(std::move(step.dist));
      tr.states.push_back(std::move(step.x_next));
      if (opts.compute_instant_rewards)
        tr.instant_rewards.push_back(instant_reward(field_old, tr.states.back(), schedule.tau(t - 1), task, context));
    } catch (const std::exception& e) {
      throw std::runtime_error("rollout: trajectory aborted at step t=" + std::to_string(t) + ": " + e.what());
    }
  }
  tr.terminal_reward = reward(task, tr.states.back(), context);
  return tr;
}

/// Identifies the random streams of one group: trajectory i draws from
/// derive_seed(run_seed, {kRollout, step, slot, i}).
struct GroupSeed {
  std::uint64_t run_seed = 0;
  std::uint64_t step = 0;
  std::uint64_t slot = 0;

  std::uint64_t trajectory_seed(std::uint64_t i) const {
    return derive_seed(run_seed, {stream::kRollout, step, slot, i});
  }
};

template <VelocityField F>
RolloutGroup rollout_group(const F& field_old, const TaskSpec& task, std::size_t context, std::size_t group_size,
                           const NoiseSchedule& schedule, const GroupSeed& seed, const RolloutOptions& opts = {}) {
  if (group_size < 2) throw std::invalid_argument("rollout_group: group size must be >= 2");
  schedule.validate();
  RolloutGroup g;
  g.context = context;
  g.trajectories.reserve(group_size);
  std::vector<double> shared;
  if (opts.shared_initial_noise) {
    Rng r(seed.trajectory_seed(~std::uint64_t{0}));
    shared = sample_noise(task.state_dim, r);
  }
  for (std::size_t i = 0; i < group_size; ++i) {
    Rng rng(seed.trajectory_seed(i));
    g.trajectories.push_back(
        rollout_trajectory(field_old, task, context, schedule, rng, opts, opts.shared_initial_noise ? &shared : nullptr));
  }
  return g;
}

/// One JSON object per trajectory: context, index, states, instant and
/// terminal rewards, old log-probabilities, and optionally per-step Q / omega /
/// advantage rows supplied by the caller.
struct TrajectoryAnnotations {
  std::span<const double> q;
  std::span<const double> omega;
  std::span<const double> advantage;
};

inline nlohmann::json trajectory_to_json(const Trajectory& tr, std::size_t index,
                                         const TrajectoryAnnotations* ann = nullptr) {
  nlohmann::json j;
  j["context"] = tr.context;
  j["index"] = index;
  j["states"] = tr.states;
  j["instant_rewards"] = tr.instant_rewards;
  j["terminal_reward"] = tr.terminal_reward;
  j["logp_old"] = tr.logp_old;
  if (ann) {
    j["q"] = std::vector<double>(ann->q.begin(), ann->q.end());
    j["omega"] = std::vector<double>(ann->omega.begin(), ann->omega.end());
    j["advantage"] = std::vector<double>(ann->advantage.begin(), ann->advantage.end());
  }
  return j;
}

inline void write_group_jsonl(std::ostream& os, const RolloutGroup& g,
                              std::span<const TrajectoryAnnotations> ann = {}) {
  for (std::size_t i = 0; i < g.trajectories.size(); ++i)
    os << trajectory_to_json(g.trajectories[i], i, ann.empty() ? nullptr : &ann[i]).dump() << '\n';
}

}  // namespace vgpo

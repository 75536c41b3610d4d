#pragma once

// Synthetic generative tasks: Gaussian-mixture data, conditioning contexts,
// analytic rewards in [0, 1], and a log-density quality score that does not
// depend on the context.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "vgpo/random.hpp"

namespace vgpo {

enum class TaskKind { mode_preference, half_plane, ring };

inline std::string_view to_string(TaskKind k) {
  switch (k) {
    case TaskKind::mode_preference: return "mode-preference";
    case TaskKind::half_plane: return "half-plane";
    case TaskKind::ring: return "ring";
  }
  return "?";
}

inline TaskKind task_kind_from_string(std::string_view s) {
  if (s == "mode-preference") return TaskKind::mode_preference;
  if (s == "half-plane") return TaskKind::half_plane;
  if (s == "ring") return TaskKind::ring;
  throw std::invalid_argument("unknown task '" + std::string(s) + "' (expected mode-preference, half-plane or ring)");
}

struct Mode {
  std::vector<double> center;
  double weight = 1.0;
};

struct TaskSpec {
  TaskKind kind = TaskKind::mode_preference;
  std::size_t state_dim = 2;
  std::vector<Mode> modes;
  double mode_variance = 0.15;  // isotropic, per coordinate
  std::size_t context_count = 1;
  double reward_sharpness = 1.0;
  double ring_radius = 3.0;  // ring task only

  void validate() const {
    if (state_dim == 0) throw std::invalid_argument("TaskSpec: state_dim must be >= 1");
    if (modes.empty()) throw std::invalid_argument("TaskSpec: at least one mode required");
    double wsum = 0.0;
    for (const auto& m : modes) {
      if (m.center.size() != state_dim) throw std::invalid_argument("TaskSpec: mode center has wrong dimension");
      if (!(m.weight >= 0.0)) throw std::invalid_argument("TaskSpec: negative mode weight");
      wsum += m.weight;
    }
    if (std::abs(wsum - 1.0) > 1e-9) throw std::invalid_argument("TaskSpec: mixture weights must sum to 1");
    if (!(mode_variance > 0.0)) throw std::invalid_argument("TaskSpec: mode_variance must be positive");
    if (context_count == 0) throw std::invalid_argument("TaskSpec: context_count must be >= 1");
    if (kind == TaskKind::mode_preference && context_count > modes.size())
      throw std::invalid_argument("TaskSpec: mode-preference needs context_count <= number of modes");
    if (!(reward_sharpness >= 0.0)) throw std::invalid_argument("TaskSpec: reward_sharpness must be >= 0");
    if (kind == TaskKind::half_plane && state_dim < 1) throw std::invalid_argument("TaskSpec: half-plane needs x[0]");
  }
};

/// Equal-weight modes on a circle of the given radius, mode i at angle 2 pi i / n.
inline std::vector<Mode> circle_modes(std::size_t n, double radius) {
  std::vector<Mode> modes;
  for (std::size_t i = 0; i < n; ++i) {
    const double th = 2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n);
    modes.push_back({{radius * std::cos(th), radius * std::sin(th)}, 1.0 / static_cast<double>(n)});
  }
  return modes;
}

/// 8 modes on a radius-3 circle, variance 0.15, context i prefers mode i.
inline TaskSpec mode_preference_task() {
  TaskSpec t;
  t.kind = TaskKind::mode_preference;
  t.state_dim = 2;
  t.modes = circle_modes(8, 3.0);
  t.mode_variance = 0.15;
  t.context_count = 8;
  t.reward_sharpness = 1.0;
  return t;
}

/// Two modes at (+-2, 0); reward logistic(sharpness * x[0]).
inline TaskSpec half_plane_task() {
  TaskSpec t;
  t.kind = TaskKind::half_plane;
  t.state_dim = 2;
  t.modes = {{{-2.0, 0.0}, 0.5}, {{2.0, 0.0}, 0.5}};
  t.mode_variance = 0.15;
  t.context_count = 1;
  t.reward_sharpness = 2.0;
  return t;
}

/// Four modes on a radius-2 circle; reward peaks on the radius-3 ring.
inline TaskSpec ring_task() {
  TaskSpec t;
  t.kind = TaskKind::ring;
  t.state_dim = 2;
  t.modes = circle_modes(4, 2.0);
  t.mode_variance = 0.15;
  t.context_count = 1;
  t.reward_sharpness = 2.0;
  t.ring_radius = 3.0;
  return t;
}

inline TaskSpec task_by_kind(TaskKind k) {
  switch (k) {
    case TaskKind::mode_preference: return mode_preference_task();
    case TaskKind::half_plane: return half_plane_task();
    case TaskKind::ring: return ring_task();
  }
  throw std::invalid_argument("task_by_kind: unknown kind");
}

/// 1D mode-preference task with modes at -offset and +offset.
inline TaskSpec two_mode_1d_task(double offset = 1.5, double variance = 0.1) {
  TaskSpec t;
  t.kind = TaskKind::mode_preference;
  t.state_dim = 1;
  t.modes = {{{-offset}, 0.5}, {{offset}, 0.5}};
  t.mode_variance = variance;
  t.context_count = 2;
  t.reward_sharpness = 1.0;
  return t;
}

/// 1D single Gaussian N(mean, variance).
inline TaskSpec gaussian_1d_task(double mean, double variance) {
  TaskSpec t;
  t.kind = TaskKind::mode_preference;
  t.state_dim = 1;
  t.modes = {{{mean}, 1.0}};
  t.mode_variance = variance;
  t.context_count = 1;
  t.reward_sharpness = 1.0;
  return t;
}

enum class RewardKind { terminal, projected };

/// Reward model handle. `kind` records whether it scores terminal samples or
/// one-step projections; the scoring rule itself is the task's.
struct RewardModel {
  const TaskSpec& task;
  RewardKind kind = RewardKind::terminal;
};

inline std::size_t sample_context(const TaskSpec& task, Rng& rng) {
  if (task.context_count == 1) return 0;
  return std::uniform_int_distribution<std::size_t>(0, task.context_count - 1)(rng);
}

/// Draw from the full mixture. The context is accepted for interface symmetry
/// but pretraining data is deliberately context-agnostic.
inline std::vector<double> sample_data(const TaskSpec& task, std::size_t context, Rng& rng) {
  if (context >= task.context_count) throw std::invalid_argument("sample_data: context out of range");
  std::size_t k = 0;
  if (task.modes.size() > 1) {
    const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    double acc = 0.0;
    k = task.modes.size() - 1;
    for (std::size_t i = 0; i < task.modes.size(); ++i) {
      acc += task.modes[i].weight;
      if (u < acc) {
        k = i;
        break;
      }
    }
  }
  const double sd = std::sqrt(task.mode_variance);
  std::vector<double> x(task.state_dim);
  for (std::size_t d = 0; d < x.size(); ++d) x[d] = task.modes[k].center[d] + sd * standard_normal(rng);
  return x;
}

inline std::vector<double> sample_noise(std::size_t dim, Rng& rng) {
  std::vector<double> x(dim);
  for (auto& v : x) v = standard_normal(rng);
  return x;
}

inline double reward(const TaskSpec& task, std::span<const double> x, std::size_t context) {
  if (x.size() != task.state_dim) throw std::invalid_argument("reward: dimension mismatch");
  for (double v : x)
    if (!std::isfinite(v)) throw std::invalid_argument("reward: non-finite state");
  switch (task.kind) {
    case TaskKind::mode_preference: {
      if (context >= task.context_count) throw std::invalid_argument("reward: context out of range");
      const auto& c = task.modes[context].center;
      double sq = 0.0;
      for (std::size_t d = 0; d < x.size(); ++d) sq += (x[d] - c[d]) * (x[d] - c[d]);
      return std::exp(-task.reward_sharpness * sq);
    }
    case TaskKind::half_plane: {
      const double z = task.reward_sharpness * x[0];
      // numerically stable logistic
      return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
    }
    case TaskKind::ring: {
      double sq = 0.0;
      for (double v : x) sq += v * v;
      const double dr = std::sqrt(sq) - task.ring_radius;
      return std::exp(-task.reward_sharpness * dr * dr);
    }
  }
  throw std::logic_error("reward: unknown task kind");
}

inline double reward(const RewardModel& rm, std::span<const double> x, std::size_t context) {
  return reward(rm.task, x, context);
}

/// Exact log-density of x under the task's full mixture.
inline double quality(const TaskSpec& task, std::span<const double> x) {
  if (x.size() != task.state_dim) throw std::invalid_argument("quality: dimension mismatch");
  const double D = static_cast<double>(task.state_dim);
  const double log_norm = -0.5 * D * std::log(2.0 * std::numbers::pi * task.mode_variance);
  std::vector<double> terms;
  terms.reserve(task.modes.size());
  for (const auto& m : task.modes) {
    if (m.weight <= 0.0) continue;
    double sq = 0.0;
    for (std::size_t d = 0; d < x.size(); ++d) sq += (x[d] - m.center[d]) * (x[d] - m.center[d]);
    terms.push_back(std::log(m.weight) + log_norm - sq / (2.0 * task.mode_variance));
  }
  const double mx = *std::max_element(terms.begin(), terms.end());
  double s = 0.0;
  for (double t : terms) s += std::exp(t - mx);
  return mx + std::log(s);
}

}  // namespace vgpo

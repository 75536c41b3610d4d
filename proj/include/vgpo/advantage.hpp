#pragma once

// Advantage estimators over a group of G trajectories with T steps each.
//
// Tables are G x T, row i = trajectory, column j = generation step j
// (t = T - j, so column T-1 holds t = 1, the step that produces x_0).
//
//   Q_t        = sum_{k=0}^{t-1} gamma^k R_{t-k}         (Q_1 = R_1)
//   omega_t    = Q_t / mean_t(Q)                          per trajectory
//   grpo       = (r - mean_i r) / std_i r                 broadcast over t
//   relative   = (Q_t - mean_i Q_t) / std_i Q_t           per column
//   adae       = omega * ((1 + alpha) Q - mean) / std,    alpha = k * std
//              -> omega * k * Q                           as std -> 0
//
// std is the population standard deviation (divide by G). A column whose std
// is below eps_std takes its zero-variance limit instead of dividing.

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "vgpo/rollout.hpp"

namespace vgpo {

class Table {
 public:
  Table() = default;
  Table(std::size_t rows, std::size_t cols, double fill = 0.0) : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }
  std::span<double> row(std::size_t i) { return {data_.data() + i * cols_, cols_}; }
  std::span<const double> row(std::size_t i) const { return {data_.data() + i * cols_, cols_}; }
  std::vector<double> column(std::size_t j) const {
    std::vector<double> c(rows_);
    for (std::size_t i = 0; i < rows_; ++i) c[i] = (*this)(i, j);
    return c;
  }
  const std::vector<double>& data() const { return data_; }

  bool operator==(const Table&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

struct ColumnStats {
  double mean = 0.0;
  double std = 0.0;  // population
};

inline ColumnStats column_stats(std::span<const double> v) {
  if (v.empty()) throw std::invalid_argument("column_stats: empty column");
  const double n = static_cast<double>(v.size());
  double s = 0.0;
  for (double x : v) s += x;
  const double mean = s / n;
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / n)};
}

inline ColumnStats column_stats(const Table& t, std::size_t j) {
  const auto c = t.column(j);
  return column_stats(c);
}

/// Q in generation order (R_T ... R_1 in, Q_T ... Q_1 out) via Q_1 = R_1,
/// Q_t = R_t + gamma * Q_{t-1}.
inline std::vector<double> cumulative_values(std::span<const double> instant_rewards, double gamma) {
  if (!(gamma >= 0.0 && gamma < 1.0)) throw std::invalid_argument("cumulative_values: gamma must be in [0, 1)");
  std::vector<double> q(instant_rewards.size());
  double acc = 0.0;
  for (std::size_t j = instant_rewards.size(); j-- > 0;) {
    acc = (j + 1 == instant_rewards.size()) ? instant_rewards[j] : instant_rewards[j] + gamma * acc;
    q[j] = acc;
  }
  return q;
}

/// omega_t = Q_t / mean_t(Q); all ones when mean_t(Q) < eps_mean.
inline std::vector<double> value_weights(std::span<const double> q, double eps_mean = 1e-6) {
  if (q.empty()) return {};
  double s = 0.0;
  for (double v : q) {
    if (!std::isfinite(v)) throw std::invalid_argument("value_weights: non-finite value");
    s += v;
  }
  const double mean = s / static_cast<double>(q.size());
  std::vector<double> w(q.size(), 1.0);
  if (mean < eps_mean) return w;
  for (std::size_t t = 0; t < q.size(); ++t) w[t] = q[t] / mean;
  return w;
}

inline Table value_weight_table(const Table& q, double eps_mean = 1e-6) {
  Table w(q.rows(), q.cols());
  for (std::size_t i = 0; i < q.rows(); ++i) {
    const auto row = value_weights(q.row(i), eps_mean);
    std::copy(row.begin(), row.end(), w.row(i).begin());
  }
  return w;
}

/// (x - mean) / std per column; zero column when std < eps_std.
inline Table group_relative(const Table& q, double eps_std = 1e-8) {
  if (q.rows() < 2) throw std::invalid_argument("group_relative: group size must be >= 2");
  Table a(q.rows(), q.cols());
  for (std::size_t j = 0; j < q.cols(); ++j) {
    const auto st = column_stats(q, j);
    if (st.std < eps_std) continue;
    for (std::size_t i = 0; i < q.rows(); ++i) a(i, j) = (q(i, j) - st.mean) / st.std;
  }
  return a;
}

/// Terminal rewards normalized over the group and broadcast to all T steps.
inline Table grpo_terminal_advantage(std::span<const double> terminal_rewards, std::size_t steps,
                                     double eps_std = 1e-8) {
  if (terminal_rewards.size() < 2) throw std::invalid_argument("grpo_terminal_advantage: group size must be >= 2");
  const auto st = column_stats(terminal_rewards);
  Table a(terminal_rewards.size(), steps);
  if (st.std < eps_std) return a;
  for (std::size_t i = 0; i < terminal_rewards.size(); ++i) {
    const double v = (terminal_rewards[i] - st.mean) / st.std;
    for (std::size_t j = 0; j < steps; ++j) a(i, j) = v;
  }
  return a;
}

enum class Estimator { flow_grpo, vgpo };

inline std::string_view to_string(Estimator e) { return e == Estimator::flow_grpo ? "flow-grpo" : "vgpo"; }

inline Estimator estimator_from_string(std::string_view s) {
  if (s == "flow-grpo") return Estimator::flow_grpo;
  if (s == "vgpo") return Estimator::vgpo;
  throw std::invalid_argument("unknown estimator '" + std::string(s) + "' (expected flow-grpo or vgpo)");
}

struct AdvantageTable {
  Table values;
  Estimator estimator = Estimator::vgpo;
  double k = 0.0;
  double eps_std = 1e-8;
};

/// Adaptive dual advantage: omega * ((1 + k std) Q - mean) / std, or its
/// zero-variance limit omega * k * Q.
inline AdvantageTable adae(const Table& q, double k, const Table& omega, double eps_std = 1e-8) {
  if (q.rows() < 2) throw std::invalid_argument("adae: group size must be >= 2");
  if (!(k >= 0.0)) throw std::invalid_argument("adae: k must be >= 0");
  if (omega.rows() != q.rows() || omega.cols() != q.cols()) throw std::invalid_argument("adae: omega shape mismatch");
  AdvantageTable out{Table(q.rows(), q.cols()), Estimator::vgpo, k, eps_std};
  for (std::size_t j = 0; j < q.cols(); ++j) {
    const auto st = column_stats(q, j);
    if (st.std < eps_std) {
      for (std::size_t i = 0; i < q.rows(); ++i) out.values(i, j) = omega(i, j) * k * q(i, j);
      continue;
    }
    const double alpha = k * st.std;
    for (std::size_t i = 0; i < q.rows(); ++i)
      out.values(i, j) = omega(i, j) * (((1.0 + alpha) * q(i, j) - st.mean) / st.std);
  }
  return out;
}

/// Reports how strongly pure relative normalization would amplify a column.
struct StdDiagnostic {
  double std = 0.0;
  double amplification = 1.0;  // 1 / std; +inf once the guard is active
  bool flagged = false;  // std < threshold
  bool guard_active = false;  // std < eps_std: estimators take the degenerate branch
};

inline StdDiagnostic near_zero_std_diagnostic(std::span<const double> column, double threshold = 1e-2,
                                              double eps_std = 1e-8) {
  const auto st = column_stats(column);
  StdDiagnostic d;
  d.std = st.std;
  d.flagged = st.std < threshold;
  d.guard_active = st.std < eps_std;
  d.amplification = d.guard_active ? std::numeric_limits<double>::infinity() : 1.0 / st.std;
  return d;
}

// ---------------------------------------------------------------------------
// Group pipeline

struct AdvantageSettings {
  Estimator estimator = Estimator::vgpo;
  bool tcrm = true;  // dense instant rewards; otherwise Q_t = terminal reward
  bool value_weights = true;  // otherwise omega = 1
  double gamma = 0.9;
  double k = 0.5;
  double eps_std = 1e-8;
  double eps_mean = 1e-6;
};

struct GroupAdvantages {
  Table q;
  Table omega;
  AdvantageTable advantages;
};

inline GroupAdvantages estimate_advantages(const RolloutGroup& g, const AdvantageSettings& s) {
  const std::size_t G = g.group_size(), T = g.steps();
  GroupAdvantages out;
  out.q = Table(G, T);
  for (std::size_t i = 0; i < G; ++i) {
    const auto& tr = g.trajectories[i];
    if (s.estimator == Estimator::vgpo && s.tcrm) {
      if (tr.instant_rewards.size() != T) throw std::invalid_argument("estimate_advantages: missing instant rewards");
      const auto q = cumulative_values(tr.instant_rewards, s.gamma);
      std::copy(q.begin(), q.end(), out.q.row(i).begin());
    } else {
      for (std::size_t j = 0; j < T; ++j) out.q(i, j) = tr.terminal_reward;
    }
  }
  if (s.estimator == Estimator::flow_grpo) {
    out.omega = Table(G, T, 1.0);
    out.advantages = {grpo_terminal_advantage(g.terminal_rewards(), T, s.eps_std), Estimator::flow_grpo, 0.0,
                      s.eps_std};
    return out;
  }
  out.omega = s.value_weights ? value_weight_table(out.q, s.eps_mean) : Table(G, T, 1.0);
  out.advantages = adae(out.q, s.k, out.omega, s.eps_std);
  return out;
}

}  // namespace vgpo

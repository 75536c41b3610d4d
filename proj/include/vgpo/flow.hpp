#pragma once

// Rectified-flow primitives: the linear noising path, the flow-matching loss,
// Euler ODE sampling, the marginal-preserving SDE step used for exploration,
// Gaussian transition densities and the per-step KL between two policies.
//
// Time convention: generation runs tau = 1 -> 0 over T uniform steps,
// tau_i = i / T, dt = 1 / T. Step t moves from tau_t to tau_{t-1}.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <numbers>
#include <span>
#include <stdexcept>
#include <vector>

#include "vgpo/diffnet.hpp"

namespace vgpo {

/// Anything callable as field(x, tau, context) -> velocity.
template <typename F>
concept VelocityField = requires(const F& f, std::span<const double> x, double tau, std::size_t c) {
  { f(x, tau, c) } -> std::convertible_to<std::vector<double>>;
};

/// Velocity field backed by the MLP and a parameter snapshot.
struct NetField {
  const Mlp& net;
  const ParamVector& params;

  std::vector<double> operator()(std::span<const double> x, double tau, std::size_t context) const {
    return net.forward(params, NetInput{x, tau, context});
  }
};

struct NoiseSchedule {
  double a = 0.7;
  std::size_t steps = 10;
  double clamp_lo = 0.05;
  double clamp_hi = 0.95;

  /// Clamp bounds [1/(2T), 1 - 1/(2T)].
  static NoiseSchedule make(double a, std::size_t steps) {
    NoiseSchedule s;
    s.a = a;
    s.steps = steps;
    if (steps > 0) {
      s.clamp_lo = 1.0 / (2.0 * static_cast<double>(steps));
      s.clamp_hi = 1.0 - s.clamp_lo;
    }
    s.validate();
    return s;
  }

  void validate() const {
    if (!(a >= 0.0) || !std::isfinite(a)) throw std::invalid_argument("NoiseSchedule: a must be >= 0");
    if (steps < 2) throw std::invalid_argument("NoiseSchedule: need at least 2 steps");
    if (!(clamp_lo > 0.0 && clamp_lo < clamp_hi && clamp_hi < 1.0))
      throw std::invalid_argument("NoiseSchedule: clamp bounds must satisfy 0 < lo < hi < 1");
  }

  double dt() const { return 1.0 / static_cast<double>(steps); }
  /// tau_t = t / T
  double tau(std::size_t t) const { return static_cast<double>(t) / static_cast<double>(steps); }
  double clamp(double tau) const { return std::clamp(tau, clamp_lo, clamp_hi); }
};

/// Isotropic Gaussian over the next state.
struct StepDistribution {
  std::vector<double> mean;
  double variance = 0.0;
};

inline std::vector<double> interpolate(std::span<const double> x0, std::span<const double> x1, double tau) {
  if (x0.size() != x1.size()) throw std::invalid_argument("interpolate: dimension mismatch");
  if (!(tau >= 0.0 && tau <= 1.0)) throw std::invalid_argument("interpolate: tau outside [0, 1]");
  std::vector<double> out(x0.size());
  for (std::size_t d = 0; d < x0.size(); ++d) out[d] = (1.0 - tau) * x0[d] + tau * x1[d];
  return out;
}

/// sigma(tau) = a * sqrt(tau' / (1 - tau')), tau' clamped into the schedule bounds.
inline double sigma(double tau, const NoiseSchedule& schedule) {
  if (!(tau >= 0.0 && tau <= 1.0)) throw std::invalid_argument("sigma: tau outside [0, 1]");
  const double tc = schedule.clamp(tau);
  return schedule.a * std::sqrt(tc / (1.0 - tc));
}

/// d mean / d v (a scalar times identity) for the SDE step taken at tau.
inline double mean_velocity_jacobian(double tau, const NoiseSchedule& schedule) {
  const double tc = schedule.clamp(tau);
  const double s = sigma(tau, schedule);
  const double coef = s * s / (2.0 * tc);
  return -schedule.dt() * (1.0 + coef * (1.0 - tc));
}

/// mean = x - [v + sigma^2 / (2 tau') * (x + (1 - tau') v)] * dt
inline std::vector<double> transition_mean(std::span<const double> x, std::span<const double> v, double tau,
                                           const NoiseSchedule& schedule) {
  if (x.size() != v.size()) throw std::invalid_argument("transition_mean: dimension mismatch");
  const double tc = schedule.clamp(tau);
  const double s = sigma(tau, schedule);
  const double coef = s * s / (2.0 * tc);
  const double dt = schedule.dt();
  std::vector<double> mean(x.size());
  for (std::size_t d = 0; d < x.size(); ++d) {
    const double drift = v[d] + coef * (x[d] + (1.0 - tc) * v[d]);
    mean[d] = x[d] - drift * dt;
    if (!std::isfinite(mean[d])) throw std::runtime_error("transition_mean: non-finite value");
  }
  return mean;
}

inline double transition_variance(double tau, const NoiseSchedule& schedule) {
  const double s = sigma(tau, schedule);
  return s * s * schedule.dt();
}

struct StepResult {
  std::vector<double> x_next;
  StepDistribution dist;
};

/// One exploration step from tau to tau - dt. With a = 0 this is exactly the
/// Euler step x - dt * v.
template <VelocityField F>
StepResult sde_step(const F& field, std::span<const double> x, double tau, std::size_t context,
                    const NoiseSchedule& schedule, std::span<const double> noise) {
  if (!(tau > 0.0 && tau <= 1.0)) throw std::invalid_argument("sde_step: tau outside (0, 1]");
  if (noise.size() != x.size()) throw std::invalid_argument("sde_step: noise dimension mismatch");
  const std::vector<double> v = field(x, tau, context);
  StepResult r;
  r.dist.mean = transition_mean(x, v, tau, schedule);
  r.dist.variance = transition_variance(tau, schedule);
  r.x_next = r.dist.mean;
  const double s = sigma(tau, schedule);
  if (s != 0.0) {
    const double scale = s * std::sqrt(schedule.dt());
    for (std::size_t d = 0; d < x.size(); ++d) {
      r.x_next[d] += scale * noise[d];
      if (!std::isfinite(r.x_next[d])) throw std::runtime_error("sde_step: non-finite state");
    }
  }
  return r;
}

template <VelocityField F>
std::vector<double> ode_step(const F& field, std::span<const double> x, double tau, std::size_t context, double dt) {
  const std::vector<double> v = field(x, tau, context);
  std::vector<double> out(x.size());
  for (std::size_t d = 0; d < x.size(); ++d) out[d] = x[d] - v[d] * dt;
  return out;
}

/// Euler integration from tau = 1 to 0 in `steps` uniform steps.
template <VelocityField F>
std::vector<double> ode_sample(const F& field, std::span<const double> x_start, std::size_t context,
                               std::size_t steps) {
  std::vector<double> x(x_start.begin(), x_start.end());
  const double n = static_cast<double>(steps);
  const double dt = 1.0 / n;
  for (std::size_t t = steps; t >= 1; --t) x = ode_step(field, x, static_cast<double>(t) / n, context, dt);
  return x;
}

/// One-step projection to a virtual terminal sample: x0_hat = s - tau * v(s, tau).
template <VelocityField F>
std::vector<double> ode_project(const F& field, std::span<const double> s, double tau, std::size_t context) {
  if (!(tau >= 0.0 && tau <= 1.0)) throw std::invalid_argument("ode_project: tau outside [0, 1]");
  if (tau == 0.0) return {s.begin(), s.end()};
  const std::vector<double> v = field(s, tau, context);
  std::vector<double> out(s.size());
  for (std::size_t d = 0; d < s.size(); ++d) out[d] = s[d] - tau * v[d];
  return out;
}

inline double transition_logpdf(std::span<const double> x_next, const StepDistribution& dist) {
  if (!(dist.variance > 0.0))
    throw std::domain_error("transition_logpdf: deterministic step (variance <= 0) has no density");
  if (x_next.size() != dist.mean.size()) throw std::invalid_argument("transition_logpdf: dimension mismatch");
  double sq = 0.0;
  for (std::size_t d = 0; d < x_next.size(); ++d) {
    const double r = x_next[d] - dist.mean[d];
    sq += r * r;
  }
  const double D = static_cast<double>(x_next.size());
  return -0.5 * D * std::log(2.0 * std::numbers::pi * dist.variance) - sq / (2.0 * dist.variance);
}

/// KL(p || q) for two isotropic Gaussians sharing a variance.
inline double kl_step(const StepDistribution& p, const StepDistribution& q) {
  if (!(p.variance > 0.0)) throw std::domain_error("kl_step: variance must be positive");
  if (std::abs(p.variance - q.variance) > 1e-12) throw std::invalid_argument("kl_step: variance mismatch");
  if (p.mean.size() != q.mean.size()) throw std::invalid_argument("kl_step: dimension mismatch");
  double sq = 0.0;
  for (std::size_t d = 0; d < p.mean.size(); ++d) {
    const double r = p.mean[d] - q.mean[d];
    sq += r * r;
  }
  return sq / (2.0 * p.variance);
}

// ---------------------------------------------------------------------------
// Flow-matching objective

struct FmSample {
  std::vector<double> x0;  // data
  std::vector<double> x1;  // noise
  double tau = 0.0;
  std::size_t context = 0;
};

struct LossAndGrad {
  double loss = 0.0;
  std::vector<double> gradient;
};

/// Mean over the batch of || (x1 - x0) - v(x_tau, tau) ||^2 and its parameter gradient.
inline LossAndGrad fm_loss_and_grad(const Mlp& net, const ParamVector& params, std::span<const FmSample> batch) {
  if (batch.empty()) throw std::invalid_argument("fm_loss_and_grad: empty batch");
  LossAndGrad out{0.0, std::vector<double>(net.param_count(), 0.0)};
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  std::vector<double> upstream;
  Tape tape;
  for (const auto& s : batch) {
    const auto xt = interpolate(s.x0, s.x1, s.tau);
    const auto& pred = net.forward(params, NetInput{xt, s.tau, s.context}, tape);
    upstream.assign(pred.size(), 0.0);
    double sq = 0.0;
    for (std::size_t d = 0; d < pred.size(); ++d) {
      const double r = pred[d] - (s.x1[d] - s.x0[d]);
      sq += r * r;
      upstream[d] = 2.0 * r * inv_n;
    }
    out.loss += sq * inv_n;
    net.backward(params, tape, upstream, out.gradient);
  }
  return out;
}

}  // namespace vgpo

#pragma once

#include <cmath>
#include <fstream>
#include <iomanip>
#include <string>
#include <vector>

#include "lldiff/core/error.hpp"

namespace lldiff {

/// Parameters that determine a schedule; archived with checkpoints and runs.
struct ScheduleParams {
  int steps = 50;
  double beta_min = 0.002;
  double beta_max = 0.4;
  double eta = 0.0;
};

/// Cumulative signal-retention coefficients alpha[0..T] (alpha[0] = 1) and
/// per-step sampling noise sigma[1..T]. Immutable once built.
class DiffusionSchedule {
 public:
  int steps() const { return static_cast<int>(alpha_.size()) - 1; }
  double eta() const { return eta_; }
  /// t in 0..T
  double alpha(int t) const { return alpha_.at(static_cast<std::size_t>(t)); }
  /// t in 1..T
  double sigma(int t) const { return sigma_.at(static_cast<std::size_t>(t - 1)); }
  const std::vector<double>& alphas() const { return alpha_; }
  const std::vector<double>& sigmas() const { return sigma_; }
  const ScheduleParams& params() const { return params_; }

  void check_step(int t) const {
    require(t >= 1 && t <= steps(), ErrorCode::out_of_range,
            "diffusion step " + std::to_string(t) + " outside 1.." + std::to_string(steps()));
  }

  /// 1 - alpha[t-1] - sigma[t]^2, the radicand of the residual coefficient.
  double residual_radicand(int t) const {
    check_step(t);
    return 1.0 - alpha(t - 1) - sigma(t) * sigma(t);
  }

  /// Validates every invariant and builds the schedule.
  static DiffusionSchedule from_arrays(std::vector<double> alpha, std::vector<double> sigma, double eta,
                                       ScheduleParams params = {}) {
    require(alpha.size() >= 2, ErrorCode::schedule_invariant, "schedule needs T >= 1");
    require(sigma.size() + 1 == alpha.size(), ErrorCode::schedule_invariant, "sigma length must equal T");
    require(alpha[0] == 1.0, ErrorCode::schedule_invariant, "alpha[0] must be exactly 1");
    require(eta >= 0.0, ErrorCode::schedule_invariant, "eta must be nonnegative");
    for (std::size_t t = 1; t < alpha.size(); ++t) {
      require(alpha[t] > 0.0 && alpha[t] <= 1.0 && std::isfinite(alpha[t]), ErrorCode::schedule_invariant,
              "alpha[" + std::to_string(t) + "] outside (0,1]");
      if (t >= 2)
        require(alpha[t] < alpha[t - 1], ErrorCode::schedule_invariant,
                "alpha not strictly decreasing at t=" + std::to_string(t));
    }
    for (std::size_t t = 1; t <= sigma.size(); ++t) {
      const double s = sigma[t - 1];
      require(s >= 0.0 && std::isfinite(s), ErrorCode::schedule_invariant, "sigma must be >= 0");
      require(1.0 - alpha[t - 1] - s * s >= 0.0, ErrorCode::schedule_invariant,
              "negative residual radicand at t=" + std::to_string(t));
      if (eta == 0.0) require(s == 0.0, ErrorCode::schedule_invariant, "eta = 0 requires sigma = 0");
    }
    DiffusionSchedule out;
    params.steps = static_cast<int>(sigma.size());
    params.eta = eta;
    out.alpha_ = std::move(alpha);
    out.sigma_ = std::move(sigma);
    out.eta_ = eta;
    out.params_ = params;
    return out;
  }

  /// CSV of (t, alpha, sigma); row t = 0 carries sigma 0.
  void write_csv(const std::string& path) const {
    std::ofstream os(path);
    require(static_cast<bool>(os), ErrorCode::io, "cannot write " + path);
    os << "t,alpha,sigma\n" << std::setprecision(17);
    for (int t = 0; t <= steps(); ++t) os << t << ',' << alpha(t) << ',' << (t == 0 ? 0.0 : sigma(t)) << '\n';
  }

 private:
  std::vector<double> alpha_;
  std::vector<double> sigma_;
  double eta_ = 0.0;
  ScheduleParams params_{};
};

/// sigma_t = eta * sqrt((1 - a_{t-1}) / (1 - a_t)) * sqrt(1 - a_t / a_{t-1}).
inline std::vector<double> sigma_from_eta(const std::vector<double>& alpha, double eta) {
  require(alpha.size() >= 2 && alpha[0] == 1.0, ErrorCode::schedule_invariant, "invalid alpha sequence");
  require(eta >= 0.0 && std::isfinite(eta), ErrorCode::invalid_argument, "eta must be finite and >= 0");
  std::vector<double> sigma(alpha.size() - 1, 0.0);
  if (eta == 0.0) return sigma;
  for (std::size_t t = 1; t < alpha.size(); ++t) {
    const double prev = alpha[t - 1];
    const double cur = alpha[t];
    require(cur > 0.0 && cur < prev, ErrorCode::schedule_invariant, "alpha must be strictly decreasing");
    const double s = eta * std::sqrt((1.0 - prev) / (1.0 - cur)) * std::sqrt(1.0 - cur / prev);
    require(1.0 - prev - s * s >= 0.0, ErrorCode::schedule_invariant,
            "sigma violates residual constraint at t=" + std::to_string(t));
    sigma[t - 1] = s;
  }
  return sigma;
}

/// Linear beta ramp, alpha[t] = prod_{s<=t} (1 - beta_s).
inline DiffusionSchedule make_schedule(int steps, double beta_min, double beta_max, double eta) {
  require(steps >= 1, ErrorCode::invalid_argument, "T must be positive");
  require(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0, ErrorCode::invalid_argument,
          "betas must satisfy 0 < beta_min <= beta_max < 1");
  require(eta >= 0.0, ErrorCode::invalid_argument, "eta must be nonnegative");
  std::vector<double> alpha(static_cast<std::size_t>(steps) + 1);
  alpha[0] = 1.0;
  for (int t = 1; t <= steps; ++t) {
    const double beta =
        steps == 1 ? beta_min : beta_min + (beta_max - beta_min) * static_cast<double>(t - 1) / (steps - 1);
    alpha[static_cast<std::size_t>(t)] = alpha[static_cast<std::size_t>(t) - 1] * (1.0 - beta);
  }
  auto sigma = sigma_from_eta(alpha, eta);
  return DiffusionSchedule::from_arrays(std::move(alpha), std::move(sigma), eta,
                                        ScheduleParams{steps, beta_min, beta_max, eta});
}

inline DiffusionSchedule make_schedule(const ScheduleParams& p) {
  return make_schedule(p.steps, p.beta_min, p.beta_max, p.eta);
}

}  // namespace lldiff

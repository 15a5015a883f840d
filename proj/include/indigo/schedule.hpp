#pragma once

#include <cmath>
#include <vector>

#include "indigo/common.hpp"

namespace indigo {

// Variance schedule for the T-step forward chain. Time is 1-indexed: beta,
// alpha, sigma are defined for t in [1,T]; alpha_bar additionally defines
// alpha_bar(0) = 1, which makes sigma(1) exactly 0. All quantities are
// computed and stored in double regardless of the tensor scalar type.
class NoiseSchedule {
 public:
  explicit NoiseSchedule(std::vector<double> betas) : beta_(std::move(betas)) {
    if (beta_.empty()) throw ConfigError("NoiseSchedule: need at least one step");
    alpha_bar_.resize(beta_.size() + 1);
    alpha_bar_[0] = 1.0;
    for (std::size_t i = 0; i < beta_.size(); ++i) {
      if (!(beta_[i] > 0.0 && beta_[i] < 1.0))
        throw ConfigError("NoiseSchedule: beta[" + std::to_string(i + 1) + "] = " +
                          std::to_string(beta_[i]) + " outside (0,1)");
      alpha_bar_[i + 1] = alpha_bar_[i] * (1.0 - beta_[i]);
    }
  }

  static NoiseSchedule linear(int steps, double beta_start, double beta_end) {
    if (steps < 1) throw ConfigError("NoiseSchedule: steps must be >= 1");
    std::vector<double> b(static_cast<std::size_t>(steps));
    for (int i = 0; i < steps; ++i)
      b[static_cast<std::size_t>(i)] =
          steps == 1 ? beta_start
                     : beta_start + (beta_end - beta_start) * static_cast<double>(i) / (steps - 1);
    return NoiseSchedule(std::move(b));
  }

  int steps() const { return static_cast<int>(beta_.size()); }

  double beta(int t) const {
    check_t(t, 1);
    return beta_[static_cast<std::size_t>(t - 1)];
  }
  double alpha(int t) const { return 1.0 - beta(t); }
  double alpha_bar(int t) const {
    check_t(t, 0);
    return alpha_bar_[static_cast<std::size_t>(t)];
  }

  // Reverse-step noise scale; sigma(1) = 0 because alpha_bar(0) = 1.
  double sigma(int t) const {
    return std::sqrt((1.0 - alpha_bar(t - 1)) / (1.0 - alpha_bar(t)) * beta(t));
  }

  // Posterior mean q(x_{t-1} | x_t, x_0) = c_xt * x_t + c_x0 * x_0.
  double posterior_coef_xt(int t) const {
    return std::sqrt(alpha(t)) * (1.0 - alpha_bar(t - 1)) / (1.0 - alpha_bar(t));
  }
  double posterior_coef_x0(int t) const {
    return std::sqrt(alpha_bar(t - 1)) * beta(t) / (1.0 - alpha_bar(t));
  }

  const std::vector<double>& betas() const { return beta_; }

 private:
  void check_t(int t, int lo) const {
    if (t < lo || t > steps())
      throw Error("NoiseSchedule: t = " + std::to_string(t) + " outside [" + std::to_string(lo) +
                  "," + std::to_string(steps()) + "]");
  }

  std::vector<double> beta_;
  std::vector<double> alpha_bar_;
};

}  // namespace indigo

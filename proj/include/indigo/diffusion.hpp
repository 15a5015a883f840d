#pragma once

#include "indigo/autodiff.hpp"
#include "indigo/rng.hpp"
#include "indigo/schedule.hpp"

// Forward/reverse diffusion in the signed data domain. Coefficients are
// computed once in double and cast to the tensor scalar, and the plain and
// on-tape variants share the same kernel sequences, so a direct call and a
// recorded graph produce bitwise-identical values.

namespace indigo {

template <typename S>
struct MarginalCoef {
  S c_x0, c_eps;
};

template <typename S>
MarginalCoef<S> marginal_coef(int t, const NoiseSchedule& s) {
  return {static_cast<S>(std::sqrt(s.alpha_bar(t))),
          static_cast<S>(std::sqrt(1.0 - s.alpha_bar(t)))};
}

template <typename S>
struct PredictCoef {
  S c_eps, c_inv;
};

template <typename S>
PredictCoef<S> predict_coef(int t, const NoiseSchedule& s) {
  return {static_cast<S>(std::sqrt(1.0 - s.alpha_bar(t))),
          static_cast<S>(1.0 / std::sqrt(s.alpha_bar(t)))};
}

// x_t = sqrt(abar_t) x_0 + sqrt(1 - abar_t) eps
template <typename S>
Tensor<S> forward_marginal(const Tensor<S>& x0, int t, const Tensor<S>& eps,
                           const NoiseSchedule& s) {
  require_same_shape(x0, eps, "forward_marginal");
  const auto c = marginal_coef<S>(t, s);
  return add(scale(x0, c.c_x0), scale(eps, c.c_eps));
}

template <typename S>
ValueId forward_marginal_graph(Tape<S>& tp, ValueId x0, ValueId eps, int t,
                               const NoiseSchedule& s) {
  const auto c = marginal_coef<S>(t, s);
  return add(tp, scale(tp, x0, c.c_x0), scale(tp, eps, c.c_eps));
}

// One step of the forward chain: x_t = sqrt(1-beta_t) x_{t-1} + sqrt(beta_t) g
template <typename S>
Tensor<S> forward_chain_step(const Tensor<S>& x_prev, int t, Rng& rng, const NoiseSchedule& s) {
  const S ca = static_cast<S>(std::sqrt(1.0 - s.beta(t)));
  const S cb = static_cast<S>(std::sqrt(s.beta(t)));
  Tensor<S> g = rng.template gaussian_tensor<S>(x_prev.shape());
  return add(scale(x_prev, ca), scale(g, cb));
}

// x_{0,t} = (x_t - sqrt(1-abar_t) eps_hat) / sqrt(abar_t)
template <typename S>
Tensor<S> predict_x0(const Tensor<S>& x_t, int t, const Tensor<S>& eps_hat,
                     const NoiseSchedule& s) {
  require_same_shape(x_t, eps_hat, "predict_x0");
  const auto c = predict_coef<S>(t, s);
  return scale(sub(x_t, scale(eps_hat, c.c_eps)), c.c_inv);
}

template <typename S>
ValueId predict_x0_graph(Tape<S>& tp, ValueId x_t, ValueId eps_hat, int t,
                         const NoiseSchedule& s) {
  const auto c = predict_coef<S>(t, s);
  return scale(tp, sub(tp, x_t, scale(tp, eps_hat, c.c_eps)), c.c_inv);
}

// Ancestral reverse step from the posterior mean around (x_t, x_{0,t}) plus
// sigma_t z. The caller must pass z = 0 at t = 1 (sigma(1) is 0 anyway, but
// the draw itself must be skipped for reproducibility).
template <typename S>
Tensor<S> posterior_step(const Tensor<S>& x_t, const Tensor<S>& x0t, int t, const Tensor<S>& z,
                         const NoiseSchedule& s) {
  require_same_shape(x_t, x0t, "posterior_step");
  require_same_shape(x_t, z, "posterior_step");
  if (t == 1 && max_abs(z) != 0.0)
    throw Error("posterior_step: z must be zero at t = 1");
  const S c_xt = static_cast<S>(s.posterior_coef_xt(t));
  const S c_x0 = static_cast<S>(s.posterior_coef_x0(t));
  const S c_z = static_cast<S>(s.sigma(t));
  return add(add(scale(x_t, c_xt), scale(x0t, c_x0)), scale(z, c_z));
}

// sum_squares(eps - eps_hat) where x_t is formed on-tape from (x0, eps) and
// eps_hat comes from `pred`, a callable (Tape&, ValueId x_t) -> ValueId.
template <typename S, typename PredGraph>
ValueId ddpm_loss_graph(Tape<S>& tp, ValueId x0, ValueId eps, int t, const NoiseSchedule& s,
                        PredGraph&& pred) {
  ValueId x_t = forward_marginal_graph(tp, x0, eps, t, s);
  ValueId eps_hat = pred(tp, x_t);
  return sum_squares(tp, sub(tp, eps, eps_hat));
}

// Full reverse pass T..1 from pure noise; eps_fn(x, t) supplies the noise
// prediction. Output is mapped to the unit data range and clipped there only.
template <typename S, typename EpsFn>
Tensor<S> ancestral_sample(EpsFn&& eps_fn, const Shape& shape, const NoiseSchedule& s, Rng& rng) {
  Tensor<S> x = rng.template gaussian_tensor<S>(shape);
  for (int t = s.steps(); t >= 1; --t) {
    const Tensor<S> eps_hat = eps_fn(x, t);
    const Tensor<S> x0t = predict_x0(x, t, eps_hat, s);
    const Tensor<S> z =
        t > 1 ? rng.template gaussian_tensor<S>(shape) : Tensor<S>::zeros(shape);
    x = posterior_step(x, x0t, t, z, s);
    if (!x.all_finite())
      throw NumericError("ancestral_sample: non-finite state at t = " + std::to_string(t));
  }
  return clip01(affine(x, S(0.5), S(0.5)));
}

}  // namespace indigo

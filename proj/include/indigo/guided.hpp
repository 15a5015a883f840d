#pragma once

// Guided reverse diffusion: the WINN-consistency sampler and a
// measurement-domain baseline that differentiates through H directly. Both
// share the unconditional step exactly, so zeta = 0 reduces either sampler to
// ancestral sampling bitwise under a shared seed.

#include <algorithm>
#include <cmath>
#include <type_traits>
#include <vector>

#include "indigo/degrade.hpp"
#include "indigo/denoiser.hpp"
#include "indigo/diffusion.hpp"
#include "indigo/winn.hpp"

namespace indigo {

struct GuidanceConfig {
  double zeta = 0.5;             // guidance scale
  std::uint64_t seed = 0;        // chain seed (x_T and the per-step z draws)
  std::vector<int> trace_steps;  // t values at which to keep snapshots

  void validate() const {
    if (zeta < 0) throw ConfigError("zeta must be >= 0, got " + std::to_string(zeta));
  }
};

// Intermediate quantities at one step, all in the unit data range.
template <typename S>
struct TraceSnapshot {
  int t{};
  Tensor<S> x0t;   // clean-image prediction, full resolution
  Tensor<S> ct;    // its coarse band under the winn
  Tensor<S> xhat;  // reconstruction with the measurement as coarse band
};

template <typename S>
struct SampleResult {
  Tensor<S> image;
  std::vector<TraceSnapshot<S>> trace;
};

// The frozen-parameter noise-prediction subgraph of a trained model.
template <typename S>
auto model_eps_graph(const DenoiserModel<S>& m) {
  return [&m](Tape<S>& tp, ValueId xt, int t) {
    BoundParams b = bind_params(tp, m.params, false);
    ParamCursor cur(b);
    ValueId out = eps_graph(tp, m.cfg, cur, xt, t);
    cur.finish();
    return out;
  };
}

template <typename F, typename S>
concept EpsGraphFn = std::is_invocable_r_v<ValueId, F&, Tape<S>&, ValueId, int>;

template <typename S>
struct GuidanceIds {
  ValueId xt{}, x0t{}, u{}, coarse{}, xhat{}, loss{};
};

// The consistency loss on a tape: x_{0,t} from the noise prediction, mapped
// to the unit range, split by the winn; the measurement replaces the coarse
// band and the inverse transform rebuilds a consistent image. The loss
// |xhat - x0|^2 is differentiable w.r.t. x_t through the denoiser and both
// winn passes; all parameters stay frozen. `eps(tp, xt, t)` builds the noise
// prediction subgraph.
template <typename S, EpsGraphFn<S> EpsGraph>
GuidanceIds<S> guidance_graph(Tape<S>& tp, const Tensor<S>& x_t, int t, const Tensor<S>& y,
                              EpsGraph&& eps, const WinnModel<S>& winn, const NoiseSchedule& s) {
  GuidanceIds<S> ids;
  ids.xt = tp.leaf(x_t, true);
  ValueId eps_hat = eps(tp, ids.xt, t);
  ids.x0t = predict_x0_graph(tp, ids.xt, eps_hat, t, s);
  ids.u = affine(tp, ids.x0t, S(0.5), S(0.5));
  BoundParams wb = bind_params(tp, winn.params, false);
  auto f = winn_forward_graph(tp, winn.cfg, wb, ids.u);
  ids.coarse = f.coarse;
  if (y.shape() != tp.value(f.coarse).shape())
    throw ShapeError("guidance: measurement " + shape_str(y.shape()) +
                     " does not match the winn coarse band " +
                     shape_str(tp.value(f.coarse).shape()));
  ids.xhat = winn_inverse_graph(tp, winn.cfg, wb, tp.constant(y), f.details);
  ids.loss = sum_squares(tp, sub(tp, ids.xhat, ids.u));
  return ids;
}

// Baseline consistency loss |y - H(x_{0,t})|^2 in the measurement domain;
// only available when H has a closed form (a synthetic DegradationOp) — a
// learned degradation offers nothing to differentiate here.
template <typename S>
struct BaselineIds {
  ValueId xt{}, x0t{}, u{}, loss{};
};

template <typename S, EpsGraphFn<S> EpsGraph>
BaselineIds<S> baseline_graph(Tape<S>& tp, const Tensor<S>& x_t, int t, const Tensor<S>& y,
                              EpsGraph&& eps, const DegradationOp& op, const NoiseSchedule& s) {
  BaselineIds<S> ids;
  ids.xt = tp.leaf(x_t, true);
  ValueId eps_hat = eps(tp, ids.xt, t);
  ids.x0t = predict_x0_graph(tp, ids.xt, eps_hat, t, s);
  ids.u = affine(tp, ids.x0t, S(0.5), S(0.5));
  ValueId hx = degradation_graph(tp, op, ids.u);
  if (y.shape() != tp.value(hx).shape())
    throw ShapeError("baseline: measurement " + shape_str(y.shape()) + " does not match H output " +
                     shape_str(tp.value(hx).shape()));
  ids.loss = sum_squares(tp, sub(tp, tp.constant(y), hx));
  return ids;
}

namespace detail {

struct GuidedStepIds {
  ValueId xt{}, x0t{}, loss{};
};

// One reverse step shared by both samplers. `build` makes the guidance tape;
// when no guidance is wanted the plain path evaluates the same kernels, so
// values stay bitwise identical.
template <typename S, EpsGraphFn<S> EpsGraph, typename Build, typename Snap>
Tensor<S> guided_step(const Tensor<S>& x_t, int t, EpsGraph&& eps, const NoiseSchedule& s,
                      const GuidanceConfig& cfg, Rng& rng, Build&& build, Snap&& snap,
                      bool want_snap, const char* who) {
  const Tensor<S> z = t > 1 ? rng.template gaussian_tensor<S>(x_t.shape())
                            : Tensor<S>::zeros(x_t.shape());
  if (cfg.zeta == 0.0 && !want_snap) {
    Tape<S> tp;
    ValueId eps_hat = eps(tp, tp.constant(x_t), t);
    const Tensor<S> x0t = predict_x0(x_t, t, tp.value(eps_hat), s);
    return posterior_step(x_t, x0t, t, z, s);
  }
  Tape<S> tp;
  const GuidedStepIds ids = build(tp);
  const Tensor<S> xt1 = posterior_step(x_t, tp.value(ids.x0t), t, z, s);
  if (want_snap) snap(tp);
  if (cfg.zeta == 0.0) return xt1;
  GradientMap<S> g = gradient(tp, ids.loss);
  const Tensor<S>& gx = g.at(ids.xt);
  if (!gx.all_finite())
    throw NumericError(std::string(who) + ": non-finite guidance gradient at t = " +
                       std::to_string(t));
  return sub(xt1, scale(gx, static_cast<S>(cfg.zeta)));
}

inline bool keep_step(const GuidanceConfig& cfg, int t) {
  return std::find(cfg.trace_steps.begin(), cfg.trace_steps.end(), t) != cfg.trace_steps.end();
}

}  // namespace detail

// One step of the winn-guided sampler: the ancestral update from the
// un-corrected x_{0,t}, then the additive guidance correction
// -zeta * d/dx_t |xhat - x0|^2.
template <typename S, EpsGraphFn<S> EpsGraph>
Tensor<S> indigo_step(const Tensor<S>& x_t, int t, const Tensor<S>& y, EpsGraph&& eps,
                      const WinnModel<S>& winn, const NoiseSchedule& s, const GuidanceConfig& cfg,
                      Rng& rng, TraceSnapshot<S>* out_snap = nullptr) {
  cfg.validate();
  GuidanceIds<S> ids;
  return detail::guided_step(
      x_t, t, eps, s, cfg, rng,
      [&](Tape<S>& tp) {
        ids = guidance_graph(tp, x_t, t, y, eps, winn, s);
        return detail::GuidedStepIds{ids.xt, ids.x0t, ids.loss};
      },
      [&](Tape<S>& tp) {
        out_snap->t = t;
        out_snap->x0t = tp.value(ids.u);
        out_snap->ct = tp.value(ids.coarse);
        out_snap->xhat = tp.value(ids.xhat);
      },
      out_snap != nullptr, "indigo_step");
}

template <typename S>
Tensor<S> indigo_step(const Tensor<S>& x_t, int t, const Tensor<S>& y, const DenoiserModel<S>& m,
                      const WinnModel<S>& winn, const NoiseSchedule& s, const GuidanceConfig& cfg,
                      Rng& rng, TraceSnapshot<S>* out_snap = nullptr) {
  return indigo_step(x_t, t, y, model_eps_graph(m), winn, s, cfg, rng, out_snap);
}

// The measurement-domain baseline step; identical except for the loss.
template <typename S, EpsGraphFn<S> EpsGraph>
Tensor<S> baseline_step(const Tensor<S>& x_t, int t, const Tensor<S>& y, EpsGraph&& eps,
                        const DegradationOp& op, const NoiseSchedule& s,
                        const GuidanceConfig& cfg, Rng& rng) {
  cfg.validate();
  return detail::guided_step(
      x_t, t, eps, s, cfg, rng,
      [&](Tape<S>& tp) {
        auto ids = baseline_graph(tp, x_t, t, y, eps, op, s);
        return detail::GuidedStepIds{ids.xt, ids.x0t, ids.loss};
      },
      [](Tape<S>&) {}, false, "baseline_step");
}

namespace detail {

template <typename S, typename StepFn>
SampleResult<S> sample_loop(const Shape& shape, const NoiseSchedule& s, const GuidanceConfig& cfg,
                            const char* who, StepFn&& step) {
  cfg.validate();
  SampleResult<S> out;
  Rng rng(cfg.seed);
  Tensor<S> x = rng.template gaussian_tensor<S>(shape);
  for (int t = s.steps(); t >= 1; --t) {
    x = step(x, t, rng, &out.trace);
    if (!x.all_finite())
      throw NumericError(std::string(who) + ": non-finite state at t = " + std::to_string(t));
  }
  out.image = clip01(affine(x, S(0.5), S(0.5)));
  return out;
}

}  // namespace detail

// Full guided chain from pure noise; returns the unit-range image (clipped at
// the output only) plus any requested snapshots.
template <typename S, EpsGraphFn<S> EpsGraph>
SampleResult<S> indigo_sample(const Tensor<S>& y, EpsGraph&& eps, const WinnModel<S>& winn,
                              const Shape& shape, const NoiseSchedule& s,
                              const GuidanceConfig& cfg) {
  return detail::sample_loop<S>(
      shape, s, cfg, "indigo_sample",
      [&](const Tensor<S>& x, int t, Rng& rng, std::vector<TraceSnapshot<S>>* trace) {
        TraceSnapshot<S> snap;
        const bool keep = detail::keep_step(cfg, t);
        Tensor<S> nx = indigo_step(x, t, y, eps, winn, s, cfg, rng, keep ? &snap : nullptr);
        if (keep) trace->push_back(std::move(snap));
        return nx;
      });
}

template <typename S>
SampleResult<S> indigo_sample(const Tensor<S>& y, const DenoiserModel<S>& m,
                              const WinnModel<S>& winn, const NoiseSchedule& s,
                              const GuidanceConfig& cfg) {
  return indigo_sample(y, model_eps_graph(m), winn, {m.cfg.channels, m.cfg.height, m.cfg.width}, s, cfg);
}

template <typename S, EpsGraphFn<S> EpsGraph>
SampleResult<S> baseline_sample(const Tensor<S>& y, EpsGraph&& eps, const DegradationOp& op,
                                const Shape& shape, const NoiseSchedule& s,
                                const GuidanceConfig& cfg) {
  return detail::sample_loop<S>(
      shape, s, cfg, "baseline_sample",
      [&](const Tensor<S>& x, int t, Rng& rng, std::vector<TraceSnapshot<S>>*) {
        return baseline_step(x, t, y, eps, op, s, cfg, rng);
      });
}

template <typename S>
SampleResult<S> baseline_sample(const Tensor<S>& y, const DenoiserModel<S>& m,
                                const DegradationOp& op, const NoiseSchedule& s,
                                const GuidanceConfig& cfg) {
  return baseline_sample(y, model_eps_graph(m), op, {m.cfg.channels, m.cfg.height, m.cfg.width}, s, cfg);
}

// || coarse(winn_forward(x)) - y ||_2 — how far a unit-range image is from
// explaining the measurement through the winn.
template <typename S>
double consistency_residual(const Tensor<S>& x, const Tensor<S>& y, const WinnModel<S>& winn) {
  WinnPyramid<S> pyr = winn_forward(winn, x);
  require_same_shape(pyr.coarse, y, "consistency_residual");
  return std::sqrt(static_cast<double>(sum_squares(sub(pyr.coarse, y)).value()));
}

}  // namespace indigo

#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "indigo/degrade.hpp"
#include "indigo/denoiser.hpp"
#include "indigo/guided.hpp"
#include "indigo/winn.hpp"

// The gradient-check suite behind the `gradcheck` command: every
// differentiable primitive against central differences in both scalar types,
// then the composite losses the lab differentiates in anger — the denoiser
// training loss w.r.t. its parameters, the winn coarse-matching loss w.r.t.
// its parameters, and the guidance / baseline losses w.r.t. the state x_t.
//
// Float32 central differences on deep relu pipelines hit an error floor near
// 1e-2 from kink crossings, far above the gradient's true accuracy, so the
// deep float32 claims are split into an oracle chain: double analytic vs
// double FD (noise-free), and float analytic vs double analytic (precision).

namespace indigo {

struct CheckResult {
  std::string name;
  double err = 0.0;  // worst observed error for the check
  double tol = 0.0;
  bool pass = false;
};

namespace detail {

template <typename S>
struct CheckTols;
template <>
struct CheckTols<float> {
  static constexpr double step = 1e-3, tol = 1e-3;
};
template <>
struct CheckTols<double> {
  static constexpr double step = 1e-6, tol = 1e-6;
};

// Values in +-[lo, hi]: bounded away from zero so relu kinks stay clear of
// the FD step. Conv cases use a smaller range because float FD noise grows
// with the loss magnitude.
template <typename S>
Tensor<S> margin_tensor(Rng& rng, const Shape& shape, double lo = 0.1, double hi = 1.1) {
  Tensor<S> t(shape);
  for (std::size_t i = 0; i < t.numel(); ++i) {
    const double u = lo + (hi - lo) * rng.uniform();
    t.flat(i) = static_cast<S>(rng.uniform() < 0.5 ? -u : u);
  }
  return t;
}

// Linear probe loss sum(y * probe): keeps |loss| at the gradient's scale so
// float32 FD stays well inside tolerance.
template <typename S>
ValueId probe_loss(Tape<S>& t, ValueId y, const Tensor<S>& probe) {
  return reduce_sum(t, mul(t, y, t.constant(probe)));
}

// Distance from the nearest relu kink anywhere in the graph: the smallest
// |input| feeding a leaky-relu node (+inf when the graph has none).
template <typename S>
double kink_margin(const Tape<S>& tp) {
  double m = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < tp.size(); ++i) {
    const TapeNode<S>& n = tp.node_at(i);
    if (n.kind != OpKind::kLeakyRelu) continue;
    const Tensor<S>& x = tp.value(n.in[0]);
    for (std::size_t j = 0; j < x.numel(); ++j)
      m = std::min(m, std::abs(static_cast<double>(x.flat(j))));
  }
  return m;
}

// A kink inside the FD step makes the central difference measure a slope
// average instead of the gradient, however correct the gradient is, so FD
// instances are redrawn until every relu input clears the kink by a few
// steps. `margin_of(attempt)` builds the candidate instance and reports its
// kink margin; the caller rebuilds from the returned attempt's stream.
// Attempts are bounded; if none clears, the widest margin seen wins.
template <typename MarginFn>
int best_kink_attempt(const MarginFn& margin_of, double step) {
  double best = -1.0;
  int best_attempt = 0;
  for (int attempt = 0; attempt < 32; ++attempt) {
    const double m = margin_of(attempt);
    if (m > best) {
      best = m;
      best_attempt = attempt;
    }
    if (best > 4.0 * step) break;
  }
  return best_attempt;
}

template <typename S>
void randomize_all(ParamSet<S>& p, Rng& rng, double scale) {
  for (std::size_t i = 0; i < p.size(); ++i) {
    Tensor<S>& v = p.item(i).value;
    v = rng.gaussian_tensor<S>(v.shape());
    v.array() *= static_cast<S>(scale);
  }
}

// Mirror one parameter set into another scalar type, value for value.
template <typename B, typename A>
void cast_params(const ParamSet<A>& src, ParamSet<B>& dst) {
  for (std::size_t i = 0; i < src.size(); ++i)
    dst.item(i).value = cast_tensor<B>(src.item(i).value);
}

// Error metric: worst |analytic - fd| over every coordinate of every
// argument, relative to the gradient vector's max magnitude. A per-tensor
// relative error would divide FD noise by near-zero entries (a bias whose
// gradient cancels to ~0), measuring noise rather than gradient bugs; real
// defects (wrong sign, scale, indexing) surface at the vector scale.
template <typename S>
double program_fd_error(const Program<S>& prog, const std::vector<Tensor<S>>& inputs,
                        double step) {
  Evaluation<S> ev = evaluate(prog, inputs);
  auto g = gradient(ev.tape, ev.output);
  double num = 0.0, den = 1e-6;
  for (std::size_t a = 0; a < inputs.size(); ++a) {
    Tensor<S> fd = finite_difference_gradient(prog, inputs, a, step);
    const Tensor<S>& ga = g.at(ev.inputs[a]);
    num = std::max(num, max_abs_diff(ga, fd));
    den = std::max({den, max_abs(ga), max_abs(fd)});
  }
  return num / den;
}

// Same vector-scale metric between the float and double analytic gradients
// of the same program evaluated on mirrored inputs.
inline double precision_error(const Program<float>& pf, const std::vector<Tensor<float>>& inf,
                              const Program<double>& pd, const std::vector<Tensor<double>>& ind) {
  Evaluation<float> evf = evaluate(pf, inf);
  auto gf = gradient(evf.tape, evf.output);
  Evaluation<double> evd = evaluate(pd, ind);
  auto gd = gradient(evd.tape, evd.output);
  double num = 0.0, den = 1e-6;
  for (std::size_t a = 0; a < inf.size(); ++a) {
    const Tensor<double> ga = cast_tensor<double>(gf.at(evf.inputs[a]));
    const Tensor<double>& gb = gd.at(evd.inputs[a]);
    num = std::max(num, max_abs_diff(ga, gb));
    den = std::max({den, max_abs(ga), max_abs(gb)});
  }
  return num / den;
}

template <typename S>
void primitive_checks(std::vector<CheckResult>& out, std::uint64_t seed) {
  const char* dt = std::is_same_v<S, float> ? "float32" : "float64";
  using Made = std::pair<Program<S>, std::vector<Tensor<S>>>;
  std::uint64_t stream = 0;
  const auto run = [&](const char* op, const std::function<Made(Rng&, int)>& make) {
    ++stream;
    double worst = 0.0;
    for (int i = 0; i < 10; ++i) {
      const auto build = [&](int attempt) {
        Rng rng = Rng::stream(seed, stream * 4096 + static_cast<std::uint64_t>(i) * 64 +
                                        static_cast<std::uint64_t>(attempt));
        return make(rng, i);
      };
      const int won = best_kink_attempt(
          [&](int attempt) {
            auto [prog, inputs] = build(attempt);
            return kink_margin(evaluate(prog, inputs, false).tape);
          },
          CheckTols<S>::step);
      auto [prog, inputs] = build(won);
      worst = std::max(worst, program_fd_error(prog, inputs, CheckTols<S>::step));
    }
    out.push_back({std::string("primitive ") + op + " (" + dt + ")", worst, CheckTols<S>::tol,
                   worst < CheckTols<S>::tol});
  };

  run("add", [](Rng& rng, int) -> Made {
    auto a = margin_tensor<S>(rng, {2, 3, 4});
    auto b = margin_tensor<S>(rng, {2, 3, 4});
    return Made{[](Tape<S>& t, const std::vector<ValueId>& in) {
                  return sum_squares(t, add(t, in[0], in[1]));
                },
                {a, b}};
  });
  run("sub", [](Rng& rng, int) -> Made {
    auto a = margin_tensor<S>(rng, {2, 3, 4});
    auto b = margin_tensor<S>(rng, {2, 3, 4});
    return Made{[](Tape<S>& t, const std::vector<ValueId>& in) {
                  return sum_squares(t, sub(t, in[0], in[1]));
                },
                {a, b}};
  });
  run("mul", [](Rng& rng, int) -> Made {
    auto a = margin_tensor<S>(rng, {2, 3, 4});
    auto b = margin_tensor<S>(rng, {2, 3, 4});
    return Made{[](Tape<S>& t, const std::vector<ValueId>& in) {
                  return sum_squares(t, mul(t, in[0], in[1]));
                },
                {a, b}};
  });
  run("mul scalar broadcast", [](Rng& rng, int) -> Made {
    auto s = margin_tensor<S>(rng, {});
    auto a = margin_tensor<S>(rng, {2, 3, 4});
    return Made{[](Tape<S>& t, const std::vector<ValueId>& in) {
                  return add(t, sum_squares(t, mul(t, in[0], in[1])),
                             sum_squares(t, mul(t, in[1], in[0])));
                },
                {s, a}};
  });
  run("affine", [](Rng& rng, int) -> Made {
    auto a = margin_tensor<S>(rng, {2, 3, 4});
    return Made{[](Tape<S>& t, const std::vector<ValueId>& in) {
                  return sum_squares(t, affine(t, in[0], S(1.7), S(-0.3)));
                },
                {a}};
  });
  run("leaky_relu", [](Rng& rng, int) -> Made {
    auto a = margin_tensor<S>(rng, {2, 3, 4});
    return Made{[](Tape<S>& t, const std::vector<ValueId>& in) {
                  return sum_squares(t, leaky_relu(t, in[0], S(0.1)));
                },
                {a}};
  });
  run("relu", [](Rng& rng, int) -> Made {
    auto a = margin_tensor<S>(rng, {2, 3, 4});
    return Made{[](Tape<S>& t, const std::vector<ValueId>& in) {
                  return sum_squares(t, relu(t, in[0]));
                },
                {a}};
  });
  run("reduce_sum", [](Rng& rng, int) -> Made {
    auto a = margin_tensor<S>(rng, {2, 3, 4});
    return Made{[](Tape<S>& t, const std::vector<ValueId>& in) {
                  auto r = reduce_sum(t, in[0]);
                  return mul(t, r, r);
                },
                {a}};
  });
  run("sum_squares", [](Rng& rng, int) -> Made {
    auto a = margin_tensor<S>(rng, {2, 3, 4});
    return Made{
        [](Tape<S>& t, const std::vector<ValueId>& in) { return sum_squares(t, in[0]); }, {a}};
  });
  run("linear", [](Rng& rng, int) -> Made {
    auto w = margin_tensor<S>(rng, {3, 4});
    auto x = margin_tensor<S>(rng, {4});
    auto b = margin_tensor<S>(rng, {3});
    return Made{[](Tape<S>& t, const std::vector<ValueId>& in) {
                  return sum_squares(t, linear(t, in[0], in[1], in[2]));
                },
                {w, x, b}};
  });
  run("bias_add_channels", [](Rng& rng, int) -> Made {
    auto img = margin_tensor<S>(rng, {3, 4, 4});
    auto b = margin_tensor<S>(rng, {3});
    return Made{[](Tape<S>& t, const std::vector<ValueId>& in) {
                  return sum_squares(t, bias_add_channels(t, in[0], in[1]));
                },
                {img, b}};
  });
  run("conv2d", [](Rng& rng, int) -> Made {
    const int stride = 1 + static_cast<int>(rng.uniform_index(2));
    const int pad = static_cast<int>(rng.uniform_index(2));
    const std::size_t cin = 1 + rng.uniform_index(2), cout = 1 + rng.uniform_index(2);
    const std::size_t k = rng.uniform_index(2) ? 3 : 1;
    const std::size_t h = 4 + rng.uniform_index(2);
    auto x = margin_tensor<S>(rng, {cin, h, h}, 0.08, 0.48);
    auto w = margin_tensor<S>(rng, {cout, cin, k, k}, 0.08, 0.48);
    auto b = margin_tensor<S>(rng, {cout}, 0.08, 0.48);
    const Shape os{cout, conv_out_extent(h, k, stride, pad, "t"),
                   conv_out_extent(h, k, stride, pad, "t")};
    auto probe = margin_tensor<S>(rng, os, 0.08, 0.48);
    return Made{[stride, pad, probe](Tape<S>& t, const std::vector<ValueId>& in) {
                  return probe_loss(t, conv2d(t, in[0], in[1], in[2], stride, pad), probe);
                },
                {x, w, b}};
  });
  run("depthwise_conv2d", [](Rng& rng, int) -> Made {
    const int stride = 1 + static_cast<int>(rng.uniform_index(2));
    const int pad = static_cast<int>(rng.uniform_index(2));
    const std::size_t c = 1 + rng.uniform_index(3);
    auto x = margin_tensor<S>(rng, {c, 5, 5}, 0.08, 0.48);
    auto w = margin_tensor<S>(rng, {c, 3, 3}, 0.08, 0.48);
    auto b = margin_tensor<S>(rng, {c}, 0.08, 0.48);
    const std::size_t oe = conv_out_extent(5, 3, stride, pad, "t");
    auto probe = margin_tensor<S>(rng, {c, oe, oe}, 0.08, 0.48);
    return Made{[stride, pad, probe](Tape<S>& t, const std::vector<ValueId>& in) {
                  return probe_loss(t, depthwise_conv2d(t, in[0], in[1], in[2], stride, pad),
                                    probe);
                },
                {x, w, b}};
  });
  run("depthwise + pointwise", [](Rng& rng, int) -> Made {
    const std::size_t c = 1 + rng.uniform_index(3);
    auto x = margin_tensor<S>(rng, {c, 5, 5}, 0.08, 0.48);
    auto w = margin_tensor<S>(rng, {c, 3, 3}, 0.08, 0.48);
    auto pw = margin_tensor<S>(rng, {2, c, 1, 1}, 0.08, 0.48);
    auto probe = margin_tensor<S>(rng, {2, 5, 5}, 0.08, 0.48);
    return Made{[probe](Tape<S>& t, const std::vector<ValueId>& in) {
                  auto d = depthwise_conv2d(t, in[0], in[1], 1, 1);
                  return probe_loss(t, conv2d(t, d, in[2], 1, 0), probe);
                },
                {x, w, pw}};
  });
  run("concat_channels", [](Rng& rng, int) -> Made {
    auto a = margin_tensor<S>(rng, {2, 4, 4});
    auto b = margin_tensor<S>(rng, {1, 4, 4});
    return Made{[](Tape<S>& t, const std::vector<ValueId>& in) {
                  return sum_squares(t, concat_channels(t, in[0], in[1]));
                },
                {a, b}};
  });
  run("slice_channels", [](Rng& rng, int) -> Made {
    auto a = margin_tensor<S>(rng, {2, 4, 4});
    return Made{[](Tape<S>& t, const std::vector<ValueId>& in) {
                  return sum_squares(t, slice_channels(t, in[0], 1, 2));
                },
                {a}};
  });
  run("polyphase_component", [](Rng& rng, int i) -> Made {
    auto a = margin_tensor<S>(rng, {2, 4, 4});
    return Made{[i](Tape<S>& t, const std::vector<ValueId>& in) {
                  return sum_squares(t, polyphase_component(t, in[0], i % 2, (i / 2) % 2));
                },
                {a}};
  });
  run("polyphase_merge", [](Rng& rng, int) -> Made {
    auto q0 = margin_tensor<S>(rng, {2, 2, 2});
    auto q1 = margin_tensor<S>(rng, {2, 2, 2});
    auto q2 = margin_tensor<S>(rng, {2, 2, 2});
    auto q3 = margin_tensor<S>(rng, {2, 2, 2});
    return Made{[](Tape<S>& t, const std::vector<ValueId>& in) {
                  return sum_squares(t, polyphase_merge(t, in[0], in[1], in[2], in[3]));
                },
                {q0, q1, q2, q3}};
  });
  run("upsample_nearest2x", [](Rng& rng, int) -> Made {
    auto a = margin_tensor<S>(rng, {2, 4, 4});
    return Made{[](Tape<S>& t, const std::vector<ValueId>& in) {
                  return sum_squares(t, upsample_nearest2x(t, in[0]));
                },
                {a}};
  });
  run("replicate_pad2d", [](Rng& rng, int) -> Made {
    auto a = margin_tensor<S>(rng, {2, 4, 4});
    return Made{[](Tape<S>& t, const std::vector<ValueId>& in) {
                  return sum_squares(t, replicate_pad2d(t, in[0], 2));
                },
                {a}};
  });
  run("two-layer conv net", [](Rng& rng, int) -> Made {
    auto x = margin_tensor<S>(rng, {1, 6, 6});
    auto w1 = margin_tensor<S>(rng, {2, 1, 3, 3});
    auto b1 = margin_tensor<S>(rng, {2});
    auto w2 = margin_tensor<S>(rng, {1, 2, 3, 3});
    auto b2 = margin_tensor<S>(rng, {1});
    auto target = rng.gaussian_tensor<S>({1, 6, 6});
    auto probe = margin_tensor<S>(rng, {1, 6, 6});
    return Made{[target, probe](Tape<S>& t, const std::vector<ValueId>& in) {
                  auto h = relu(t, conv2d(t, in[0], in[1], in[2], 1, 1));
                  auto y = conv2d(t, h, in[3], in[4], 1, 1);
                  auto d = sub(t, y, t.constant(target));
                  // quadratic loss for double; float probes the linear form
                  // because its FD noise scales with the loss magnitude
                  if constexpr (std::is_same_v<S, double>) return sum_squares(t, d);
                  return probe_loss(t, d, probe);
                },
                {x, w1, b1, w2, b2}};
  });
}

// The quantizer is flat almost everywhere: analytic and FD gradients must
// both vanish exactly when probed at cell centers.
template <typename S>
void quantizer_check(std::vector<CheckResult>& out, std::uint64_t seed) {
  const char* dt = std::is_same_v<S, float> ? "float32" : "float64";
  double worst = 0.0;
  for (int i = 0; i < 10; ++i) {
    Rng rng = Rng::stream(seed, 1600 + static_cast<std::uint64_t>(i));
    Tensor<S> x({3, 4, 4});
    for (std::size_t j = 0; j < x.numel(); ++j) {
      const double cell = static_cast<double>(rng.uniform_index(5)) - 2.0;
      x.flat(j) = static_cast<S>(0.5 * (cell + 0.4 + 0.2 * rng.uniform()));
    }
    Program<S> p = [](Tape<S>& t, const std::vector<ValueId>& in) {
      return reduce_sum(t, quantize_deadzone(t, in[0], S(0.5)));
    };
    Evaluation<S> ev = evaluate(p, {x});
    auto g = gradient(ev.tape, ev.output);
    Tensor<S> fd = finite_difference_gradient(p, {x}, 0, CheckTols<S>::step);
    worst = std::max({worst, max_abs(g.at(ev.inputs[0])), max_abs(fd)});
  }
  out.push_back(
      {std::string("primitive quantize_deadzone zero-gradient (") + dt + ")", worst, 0.0,
       worst == 0.0});
}

// The denoiser training loss as a function of every parameter tensor: the
// inputs are the parameters in declaration order, data and timestep baked in.
template <typename S>
std::pair<Program<S>, std::vector<Tensor<S>>> denoiser_theta_program(const DenoiserModel<S>& m,
                                                                     Tensor<S> x0, Tensor<S> eps,
                                                                     int t, NoiseSchedule s) {
  std::vector<Tensor<S>> inputs;
  inputs.reserve(m.params.size());
  for (std::size_t i = 0; i < m.params.size(); ++i) inputs.push_back(m.params.item(i).value);
  const DenoiserConfig cfg = m.cfg;
  Program<S> prog = [cfg, x0 = std::move(x0), eps = std::move(eps), t,
                     s = std::move(s)](Tape<S>& tp, const std::vector<ValueId>& in) {
    BoundParams bound{in};
    ParamCursor cur(bound);
    ValueId loss =
        ddpm_loss_graph(tp, tp.constant(x0), tp.constant(eps), t, s,
                        [&](Tape<S>& q, ValueId xt) { return eps_graph(q, cfg, cur, xt, t); });
    cur.finish();
    return loss;
  };
  return {std::move(prog), std::move(inputs)};
}

// The winn coarse-matching loss as a function of every parameter tensor.
template <typename S>
std::pair<Program<S>, std::vector<Tensor<S>>> winn_theta_program(const WinnModel<S>& m,
                                                                 Tensor<S> x, Tensor<S> y) {
  std::vector<Tensor<S>> inputs;
  inputs.reserve(m.params.size());
  for (std::size_t i = 0; i < m.params.size(); ++i) inputs.push_back(m.params.item(i).value);
  const WinnConfig cfg = m.cfg;
  Program<S> prog = [cfg, x = std::move(x),
                     y = std::move(y)](Tape<S>& tp, const std::vector<ValueId>& in) {
    BoundParams bound{in};
    auto ids = winn_forward_graph(tp, cfg, bound, tp.constant(x));
    return sum_squares(tp, sub(tp, ids.coarse, tp.constant(y)));
  };
  return {std::move(prog), std::move(inputs)};
}

inline void denoiser_theta_checks(std::vector<CheckResult>& out, std::uint64_t seed) {
  DenoiserConfig cfg;
  cfg.height = cfg.width = 4;
  cfg.base_channels = 2;
  cfg.time_embed_dim = 4;
  auto s = NoiseSchedule::linear(6, 1e-2, 0.15);
  const int t = 3;
  struct Inst {
    DenoiserModel<double> md;
    Tensor<double> x0, eps;
  };
  const auto build = [&](int attempt) {
    Rng rng = Rng::stream(seed, 2000 + static_cast<std::uint64_t>(attempt));
    auto md = create_denoiser<double>(cfg, rng);
    // give the zero-init output conv signal so every gradient path is generic
    auto& ow = md.params.at("out.w");
    ow = rng.gaussian_tensor<double>(ow.shape());
    ow.array() *= 0.3;
    auto x0 = rng.uniform_tensor<double>({1, 4, 4}, -1.0, 1.0);
    auto eps = rng.gaussian_tensor<double>({1, 4, 4});
    return Inst{std::move(md), std::move(x0), std::move(eps)};
  };
  const int won = best_kink_attempt(
      [&](int attempt) {
        Inst ins = build(attempt);
        auto [pd, ind] = denoiser_theta_program(ins.md, ins.x0, ins.eps, t, s);
        return kink_margin(evaluate(pd, ind, false).tape);
      },
      1e-6);
  Inst ins = build(won);

  auto [pd, ind] = denoiser_theta_program(ins.md, ins.x0, ins.eps, t, s);
  const double efd = program_fd_error(pd, ind, 1e-6);
  out.push_back({"denoiser loss wrt theta, analytic vs fd (float64)", efd, 1e-5, efd < 1e-5});

  Rng r0(0);
  auto mf = create_denoiser<float>(cfg, r0);
  cast_params(ins.md.params, mf.params);
  auto [pf, inf] =
      denoiser_theta_program(mf, cast_tensor<float>(ins.x0), cast_tensor<float>(ins.eps), t, s);
  const double epr = precision_error(pf, inf, pd, ind);
  out.push_back(
      {"denoiser loss wrt theta, float32 vs float64 analytic", epr, 1e-3, epr < 1e-3});
}

inline void winn_theta_checks(std::vector<CheckResult>& out, std::uint64_t seed) {
  WinnConfig cfg;
  cfg.levels = 1;
  cfg.pairs = 2;
  cfg.res_blocks = 1;
  cfg.width = 4;
  struct Inst {
    WinnModel<double> md;
    Tensor<double> x, y;
  };
  const auto build = [&](int attempt) {
    Rng rng = Rng::stream(seed, 2100 + static_cast<std::uint64_t>(attempt));
    auto md = create_winn<double>(cfg, rng);
    randomize_all(md.params, rng, 0.1);
    auto x = rng.uniform_tensor<double>({1, 8, 8}, 0.0, 1.0);
    auto y = rng.uniform_tensor<double>({1, 4, 4}, 0.0, 1.0);
    return Inst{std::move(md), std::move(x), std::move(y)};
  };
  const int won = best_kink_attempt(
      [&](int attempt) {
        Inst ins = build(attempt);
        auto [pd, ind] = winn_theta_program(ins.md, ins.x, ins.y);
        return kink_margin(evaluate(pd, ind, false).tape);
      },
      1e-6);
  Inst ins = build(won);

  auto [pd, ind] = winn_theta_program(ins.md, ins.x, ins.y);
  const double efd = program_fd_error(pd, ind, 1e-6);
  out.push_back({"winn coarse loss wrt Theta, analytic vs fd (float64)", efd, 1e-5, efd < 1e-5});

  Rng r0(0);
  auto mf = create_winn<float>(cfg, r0);
  cast_params(ins.md.params, mf.params);
  auto [pf, inf] = winn_theta_program(mf, cast_tensor<float>(ins.x), cast_tensor<float>(ins.y));
  const double epr = precision_error(pf, inf, pd, ind);
  out.push_back(
      {"winn coarse loss wrt Theta, float32 vs float64 analytic", epr, 1e-3, epr < 1e-3});
}

// |inverse(y, details(x)) - x|^2 as a function of x, the combination the
// guided sampler differentiates through the winn.
template <typename S>
std::pair<Program<S>, std::vector<Tensor<S>>> winn_substitution_program(WinnModel<S> m,
                                                                        Tensor<S> y,
                                                                        Tensor<S> x) {
  Program<S> p = [m = std::move(m), y = std::move(y)](Tape<S>& tp,
                                                      const std::vector<ValueId>& in) {
    BoundParams b = bind_params(tp, m.params, false);
    auto ids = winn_forward_graph(tp, m.cfg, b, in[0]);
    ValueId rec = winn_inverse_graph(tp, m.cfg, b, tp.constant(y), ids.details);
    return sum_squares(tp, sub(tp, rec, in[0]));
  };
  return {std::move(p), {std::move(x)}};
}

inline void winn_input_checks(std::vector<CheckResult>& out, std::uint64_t seed) {
  WinnConfig cfg;
  cfg.levels = 1;
  cfg.width = 6;
  struct Inst {
    WinnModel<double> m;
    Tensor<double> y, x;
  };
  const auto build = [&](int attempt) {
    Rng rng = Rng::stream(seed, 2200 + static_cast<std::uint64_t>(attempt));
    auto m = create_winn<double>(cfg, rng);
    randomize_all(m.params, rng, 0.1);
    auto y = rng.uniform_tensor<double>({1, 4, 4}, 0.0, 1.0);
    auto x = rng.uniform_tensor<double>({1, 8, 8}, 0.0, 1.0);
    return Inst{std::move(m), std::move(y), std::move(x)};
  };
  const int won = best_kink_attempt(
      [&](int attempt) {
        Inst ins = build(attempt);
        auto [pd, ind] = winn_substitution_program(std::move(ins.m), std::move(ins.y),
                                                   std::move(ins.x));
        return kink_margin(evaluate(pd, ind, false).tape);
      },
      1e-6);
  Inst ins = build(won);

  auto [pd, ind] = winn_substitution_program(ins.m, ins.y, ins.x);
  const double efd = program_fd_error(pd, ind, 1e-6);
  out.push_back(
      {"winn substitution loss wrt x, analytic vs fd (float64)", efd, 1e-5, efd < 1e-5});

  Rng r0(0);
  auto mf = create_winn<float>(cfg, r0);
  cast_params(ins.m.params, mf.params);
  auto [pf, inf] = winn_substitution_program(std::move(mf), cast_tensor<float>(ins.y),
                                             cast_tensor<float>(ins.x));
  const double epr = precision_error(pf, inf, pd, ind);
  out.push_back(
      {"winn substitution loss wrt x, float32 vs float64 analytic", epr, 1e-3, epr < 1e-3});
}

// eps_hat = a*x + b: a linear two-parameter predictor keeps the float FD
// noise floor low while still exercising the full guidance graph.
template <typename S>
auto affine_eps(S a, S b) {
  return [a, b](Tape<S>& tp, ValueId xt, int) {
    ValueId av = tp.constant(Tensor<S>::scalar(a));
    ValueId bv = tp.constant(Tensor<S>::scalar(b));
    ValueId ones = tp.constant(Tensor<S>::full(tp.value(xt).shape(), S(1)));
    return add(tp, mul(tp, xt, av), mul(tp, ones, bv));
  };
}

inline void guidance_checks(std::vector<CheckResult>& out, std::uint64_t seed) {
  auto s = NoiseSchedule::linear(8, 1e-4, 0.25);

  // toy predictor, direct float32 FD through the production guidance graph
  {
    WinnConfig wc;
    wc.levels = 1;
    wc.width = 6;
    auto eps = affine_eps<float>(0.4f, -0.1f);
    const int t = 5;
    struct Inst {
      WinnModel<float> winn;
      Tensor<float> y, x_t;
    };
    const auto build = [&](int attempt) {
      Rng rng = Rng::stream(seed, 2300 + static_cast<std::uint64_t>(attempt));
      auto winn = create_winn<float>(wc, rng);
      randomize_all(winn.params, rng, 0.1);
      auto y = rng.uniform_tensor<float>({1, 2, 2}, 0.0, 1.0);
      auto x_t = rng.uniform_tensor<float>({1, 4, 4}, -0.8, 0.8);
      return Inst{std::move(winn), std::move(y), std::move(x_t)};
    };
    const int won = best_kink_attempt(
        [&](int attempt) {
          Inst ins = build(attempt);
          Tape<float> tape;
          guidance_graph(tape, ins.x_t, t, ins.y, eps, ins.winn, s);
          return kink_margin(tape);
        },
        1e-3);
    Inst ins = build(won);

    Tape<float> tape;
    auto ids = guidance_graph(tape, ins.x_t, t, ins.y, eps, ins.winn, s);
    auto g = gradient(tape, ids.loss);
    Program<float> p = [&](Tape<float>& tp, const std::vector<ValueId>& in) {
      Tensor<float> xv = tp.value(in[0]);
      return guidance_graph(tp, xv, t, ins.y, eps, ins.winn, s).loss;
    };
    auto fd = finite_difference_gradient(p, {ins.x_t}, 0, 1e-3);
    const double e = max_rel_error(g.at(ids.xt), fd);
    out.push_back(
        {"guidance loss wrt x_t, analytic vs fd (toy eps, float32)", e, 1e-3, e < 1e-3});
  }

  // conv denoiser inside the guidance graph: double oracle + precision leg
  {
    DenoiserConfig dc;
    dc.height = dc.width = 4;
    dc.base_channels = 2;
    dc.time_embed_dim = 4;
    WinnConfig wc;
    wc.levels = 1;
    wc.width = 6;
    const int t = 5;
    struct Inst {
      DenoiserModel<double> den;
      WinnModel<double> winn;
      Tensor<double> y, x_t;
    };
    const auto build = [&](int attempt) {
      Rng rng = Rng::stream(seed, 2400 + static_cast<std::uint64_t>(attempt));
      auto den = create_denoiser<double>(dc, rng);
      randomize_all(den.params, rng, 0.05);
      auto winn = create_winn<double>(wc, rng);
      randomize_all(winn.params, rng, 0.1);
      auto y = rng.uniform_tensor<double>({1, 2, 2}, 0.0, 1.0);
      auto x_t = rng.uniform_tensor<double>({1, 4, 4}, -0.8, 0.8);
      return Inst{std::move(den), std::move(winn), std::move(y), std::move(x_t)};
    };
    const int won = best_kink_attempt(
        [&](int attempt) {
          Inst ins = build(attempt);
          Tape<double> tape;
          guidance_graph(tape, ins.x_t, t, ins.y, model_eps_graph(ins.den), ins.winn, s);
          return kink_margin(tape);
        },
        1e-6);
    Inst ins = build(won);

    Tape<double> tape;
    auto ids = guidance_graph(tape, ins.x_t, t, ins.y, model_eps_graph(ins.den), ins.winn, s);
    auto gd = gradient(tape, ids.loss);
    Program<double> p = [&](Tape<double>& tp, const std::vector<ValueId>& in) {
      Tensor<double> xv = tp.value(in[0]);
      return guidance_graph(tp, xv, t, ins.y, model_eps_graph(ins.den), ins.winn, s).loss;
    };
    auto fd = finite_difference_gradient(p, {ins.x_t}, 0, 1e-6);
    const double efd = max_rel_error(gd.at(ids.xt), fd);
    out.push_back(
        {"guidance loss wrt x_t, analytic vs fd (conv eps, float64)", efd, 1e-5, efd < 1e-5});

    Rng r0(0);
    auto denf = create_denoiser<float>(dc, r0);
    cast_params(ins.den.params, denf.params);
    auto winnf = create_winn<float>(wc, r0);
    cast_params(ins.winn.params, winnf.params);
    Tape<float> tf;
    auto idsf = guidance_graph(tf, cast_tensor<float>(ins.x_t), t, cast_tensor<float>(ins.y),
                               model_eps_graph(denf), winnf, s);
    auto gf = gradient(tf, idsf.loss);
    const double epr = max_rel_error(cast_tensor<double>(gf.at(idsf.xt)), gd.at(ids.xt));
    out.push_back(
        {"guidance loss wrt x_t, float32 vs float64 analytic", epr, 1e-2, epr < 1e-2});
  }

  // measurement-domain baseline loss, direct float32 FD (kink-free graph)
  {
    auto eps = affine_eps<float>(0.3f, 0.05f);
    DegradationOp op;  // box 2x
    Rng rng = Rng::stream(seed, 2500);
    auto y = rng.uniform_tensor<float>({1, 2, 2}, 0.0, 1.0);
    const int t = 4;
    auto x_t = rng.uniform_tensor<float>({1, 4, 4}, -0.8, 0.8);

    Tape<float> tape;
    auto ids = baseline_graph(tape, x_t, t, y, eps, op, s);
    auto g = gradient(tape, ids.loss);
    Program<float> p = [&](Tape<float>& tp, const std::vector<ValueId>& in) {
      Tensor<float> xv = tp.value(in[0]);
      return baseline_graph(tp, xv, t, y, eps, op, s).loss;
    };
    auto fd = finite_difference_gradient(p, {x_t}, 0, 1e-3);
    const double e = max_rel_error(g.at(ids.xt), fd);
    out.push_back({"baseline loss wrt x_t, analytic vs fd (float32)", e, 1e-3, e < 1e-3});
  }
}

}  // namespace detail

inline std::vector<CheckResult> gradient_check_suite(std::uint64_t seed = 0) {
  std::vector<CheckResult> out;
  detail::primitive_checks<float>(out, seed);
  detail::primitive_checks<double>(out, seed);
  detail::quantizer_check<float>(out, seed);
  detail::quantizer_check<double>(out, seed);
  detail::denoiser_theta_checks(out, seed);
  detail::winn_theta_checks(out, seed);
  detail::winn_input_checks(out, seed);
  detail::guidance_checks(out, seed);
  return out;
}

inline bool all_checks_pass(const std::vector<CheckResult>& rs) {
  for (const auto& r : rs)
    if (!r.pass) return false;
  return true;
}

}  // namespace indigo

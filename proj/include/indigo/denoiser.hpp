#pragma once

#include "indigo/diffusion.hpp"
#include "indigo/params.hpp"

// Noise-prediction network: a small two-resolution encoder/decoder with one
// residual block per stage, a skip connection across the downsample, and a
// sinusoidal time embedding injected per block as a learned channel bias.
// The output conv starts at zero so the untrained model predicts eps = 0.

namespace indigo {

struct DenoiserConfig {
  std::size_t channels = 1;
  std::size_t height = 16, width = 16;
  std::size_t base_channels = 32;
  std::size_t time_embed_dim = 32;

  void validate() const {
    if (channels < 1) throw ConfigError("denoiser: channels must be >= 1");
    if (height < 2 || width < 2 || height % 2 || width % 2)
      throw ConfigError("denoiser: height and width must be even and >= 2");
    if (base_channels < 1) throw ConfigError("denoiser: base_channels must be >= 1");
    if (time_embed_dim < 2 || time_embed_dim % 2)
      throw ConfigError("denoiser: time_embed_dim must be even and >= 2");
  }
};

template <typename S>
struct DenoiserModel {
  DenoiserConfig cfg;
  ParamSet<S> params;
};

template <typename S>
Tensor<S> time_embedding(int t, std::size_t dim) {
  const std::size_t half = dim / 2;
  Tensor<S> e({dim});
  for (std::size_t i = 0; i < half; ++i) {
    const double f = std::exp(-std::log(10000.0) * static_cast<double>(i) /
                              static_cast<double>(half > 1 ? half - 1 : 1));
    e.flat(i) = static_cast<S>(std::sin(t * f));
    e.flat(half + i) = static_cast<S>(std::cos(t * f));
  }
  return e;
}

namespace detail {

template <typename S>
void add_resblock_params(ParamSet<S>& p, const std::string& prefix, std::size_t ch, std::size_t emb,
                         Rng& rng) {
  p.add(prefix + ".c1.w", he_init<S>(rng, {ch, ch, 3, 3}, ch * 9));
  p.add(prefix + ".c1.b", Tensor<S>::zeros({ch}));
  p.add(prefix + ".t.w", he_init<S>(rng, {ch, emb}, emb));
  p.add(prefix + ".t.b", Tensor<S>::zeros({ch}));
  p.add(prefix + ".c2.w", he_init<S>(rng, {ch, ch, 3, 3}, ch * 9));
  p.add(prefix + ".c2.b", Tensor<S>::zeros({ch}));
}

template <typename S>
ValueId resblock_graph(Tape<S>& tp, ParamCursor& cur, ValueId x, ValueId temb) {
  // cursor reads are sequenced individually: argument evaluation order is
  // unspecified, so cur.next() must never appear twice in one call
  ValueId c1w = cur.next();
  ValueId c1b = cur.next();
  ValueId tw = cur.next();
  ValueId tb = cur.next();
  ValueId c2w = cur.next();
  ValueId c2b = cur.next();
  ValueId h = conv2d(tp, x, c1w, c1b, 1, 1);
  h = bias_add_channels(tp, h, linear(tp, tw, temb, tb));
  h = relu(tp, h);
  h = conv2d(tp, h, c2w, c2b, 1, 1);
  return add(tp, x, h);
}

}  // namespace detail

template <typename S>
DenoiserModel<S> create_denoiser(const DenoiserConfig& cfg, Rng& rng) {
  cfg.validate();
  DenoiserModel<S> m;
  m.cfg = cfg;
  ParamSet<S>& p = m.params;
  const std::size_t c = cfg.channels, f = cfg.base_channels, e = cfg.time_embed_dim;
  p.add("in.w", he_init<S>(rng, {f, c, 3, 3}, c * 9));
  p.add("in.b", Tensor<S>::zeros({f}));
  detail::add_resblock_params(p, "rb1", f, e, rng);
  p.add("down.w", he_init<S>(rng, {2 * f, f, 3, 3}, f * 9));
  p.add("down.b", Tensor<S>::zeros({2 * f}));
  detail::add_resblock_params(p, "rb2", 2 * f, e, rng);
  p.add("up.w", he_init<S>(rng, {f, 2 * f, 3, 3}, 2 * f * 9));
  p.add("up.b", Tensor<S>::zeros({f}));
  p.add("fuse.w", he_init<S>(rng, {f, 2 * f, 3, 3}, 2 * f * 9));
  p.add("fuse.b", Tensor<S>::zeros({f}));
  detail::add_resblock_params(p, "rb3", f, e, rng);
  p.add("out.w", Tensor<S>::zeros({c, f, 3, 3}));
  p.add("out.b", Tensor<S>::zeros({c}));
  return m;
}

// eps_theta(x_t, t) as a graph; parameters are consumed from `cur` in
// creation order.
template <typename S>
ValueId eps_graph(Tape<S>& tp, const DenoiserConfig& cfg, ParamCursor& cur, ValueId x, int t) {
  const Tensor<S>& xv = tp.value(x);
  if (xv.rank() != 3 || xv.extent(0) != cfg.channels || xv.extent(1) != cfg.height ||
      xv.extent(2) != cfg.width)
    throw ShapeError("eps_graph: input " + shape_str(xv.shape()) + " does not match model (" +
                     std::to_string(cfg.channels) + "," + std::to_string(cfg.height) + "," +
                     std::to_string(cfg.width) + ")");
  ValueId temb = tp.constant(time_embedding<S>(t, cfg.time_embed_dim));
  auto wb_conv = [&](ValueId in, int stride) {
    ValueId w = cur.next();
    ValueId b = cur.next();
    return conv2d(tp, in, w, b, stride, 1);
  };
  ValueId h0 = relu(tp, wb_conv(x, 1));
  ValueId r1 = detail::resblock_graph(tp, cur, h0, temb);
  ValueId d0 = relu(tp, wb_conv(r1, 2));
  ValueId r2 = detail::resblock_graph(tp, cur, d0, temb);
  ValueId u0 = upsample_nearest2x(tp, r2);
  ValueId u1 = relu(tp, wb_conv(u0, 1));
  ValueId cat = concat_channels(tp, u1, r1);
  ValueId fu = relu(tp, wb_conv(cat, 1));
  ValueId r3 = detail::resblock_graph(tp, cur, fu, temb);
  return wb_conv(r3, 1);
}

template <typename S>
Tensor<S> eps_apply(const DenoiserModel<S>& m, const Tensor<S>& x_t, int t) {
  Tape<S> tp;
  BoundParams bound = bind_params(tp, m.params, false);
  ParamCursor cur(bound);
  ValueId out = eps_graph(tp, m.cfg, cur, tp.constant(x_t), t);
  cur.finish();
  return tp.value(out);
}

template <typename S>
struct DdpmLoss {
  Tape<S> tape;
  ValueId loss{};
  BoundParams bound;
  S value() const { return tape.value(loss).value(); }
};

// Training loss for one (x0, t, eps) triple; x0 is in the signed data domain.
template <typename S>
DdpmLoss<S> ddpm_loss(const Tensor<S>& x0, int t, const Tensor<S>& eps, const DenoiserModel<S>& m,
                      const NoiseSchedule& s) {
  DdpmLoss<S> out;
  out.bound = bind_params(out.tape, m.params, true);
  ParamCursor cur(out.bound);
  ValueId x0_id = out.tape.constant(x0);
  ValueId eps_id = out.tape.constant(eps);
  out.loss = ddpm_loss_graph(out.tape, x0_id, eps_id, t, s, [&](Tape<S>& tp, ValueId xt) {
    return eps_graph(tp, m.cfg, cur, xt, t);
  });
  cur.finish();
  return out;
}

// One-sample SGD over shuffled epochs; returns the per-epoch mean loss.
// Images arrive in [0,1] and are mapped to the signed domain here. RNG
// consumption per sample is fixed (shuffle, then t, then eps), so a given
// seed reproduces training exactly.
template <typename S>
std::vector<double> train_denoiser(const std::vector<Tensor<S>>& images, DenoiserModel<S>& m,
                                   const NoiseSchedule& s, const TrainConfig& cfg, Rng& rng) {
  if (images.empty()) throw ConfigError("train_denoiser: empty dataset");
  Optimizer<S> opt(cfg.opt);
  std::vector<std::size_t> order(images.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::vector<double> trace;
  trace.reserve(static_cast<std::size_t>(cfg.epochs));
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    double sum = 0.0;
    for (std::size_t k = 0; k < order.size(); ++k) {
      const Tensor<S> x0 = affine(images[order[k]], S(2), S(-1));
      const int t = 1 + static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(s.steps())));
      const Tensor<S> eps = rng.template gaussian_tensor<S>(x0.shape());
      DdpmLoss<S> lg = ddpm_loss(x0, t, eps, m, s);
      const double lv = static_cast<double>(lg.value());
      if (!std::isfinite(lv))
        throw NumericError("train_denoiser: non-finite loss at epoch " + std::to_string(epoch) +
                           " sample " + std::to_string(k));
      GradientMap<S> g = gradient(lg.tape, lg.loss);
      opt.step(m.params, collect_grads(g, lg.bound));
      sum += lv;
    }
    trace.push_back(sum / static_cast<double>(order.size()));
  }
  return trace;
}

template <typename S>
Tensor<S> unconditional_sample(const DenoiserModel<S>& m, const NoiseSchedule& s, Rng& rng) {
  const Shape shape{m.cfg.channels, m.cfg.height, m.cfg.width};
  return ancestral_sample<S>(
      [&](const Tensor<S>& x, int t) { return eps_apply(m, x, t); }, shape, s, rng);
}

}  // namespace indigo

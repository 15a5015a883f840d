#pragma once

#include "indigo/params.hpp"

// Invertible lifting transform on the factor-2 polyphase split. Per level the
// even/even phase is the coarse band and the other three phases, concatenated
// as (EO, OE, OO), are the detail band. M predict/update pairs then alternate
//   d <- d - P_m(c),  c <- c + U_m(d)
// which is invertible for any parameters by reversing the updates. The P/U
// nets are small conv stacks with depthwise-separable residual blocks and a
// zero-initialized output conv, so an untrained model is exactly the lazy
// wavelet transform.

namespace indigo {

struct WinnConfig {
  std::size_t channels = 1;
  std::size_t levels = 1;      // coarse output is downscaled by 2^levels
  std::size_t pairs = 2;       // predict/update pairs per level
  std::size_t res_blocks = 1;  // separable residual blocks per P/U net
  std::size_t width = 16;      // hidden channels
  std::size_t kernel = 3;

  void validate() const {
    if (channels < 1) throw ConfigError("winn: channels must be >= 1");
    if (levels < 1) throw ConfigError("winn: levels must be >= 1");
    if (pairs < 1) throw ConfigError("winn: pairs must be >= 1");
    if (width < 1) throw ConfigError("winn: width must be >= 1");
    if (kernel < 1 || kernel % 2 == 0) throw ConfigError("winn: kernel must be odd");
  }

  // parameter tensors per P/U net: in conv + J separable blocks + out conv
  std::size_t items_per_net() const { return 4 + 6 * res_blocks; }
};

template <typename S>
struct WinnModel {
  WinnConfig cfg;
  ParamSet<S> params;
};

template <typename S>
struct WinnPyramid {
  Tensor<S> coarse;
  std::vector<Tensor<S>> details;  // details[l]: (3C, H/2^(l+1), W/2^(l+1))
};

namespace detail {

template <typename S>
void add_punet_params(ParamSet<S>& p, const std::string& prefix, const WinnConfig& cfg,
                      std::size_t in_ch, std::size_t out_ch, Rng& rng) {
  const std::size_t w = cfg.width, k = cfg.kernel;
  p.add(prefix + ".in.w", he_init<S>(rng, {w, in_ch, k, k}, in_ch * k * k));
  p.add(prefix + ".in.b", Tensor<S>::zeros({w}));
  for (std::size_t j = 0; j < cfg.res_blocks; ++j) {
    const std::string b = prefix + ".b" + std::to_string(j);
    p.add(b + ".dw1.w", he_init<S>(rng, {w, k, k}, k * k));
    p.add(b + ".pw1.w", he_init<S>(rng, {w, w, 1, 1}, w));
    p.add(b + ".pw1.b", Tensor<S>::zeros({w}));
    p.add(b + ".dw2.w", he_init<S>(rng, {w, k, k}, k * k));
    p.add(b + ".pw2.w", he_init<S>(rng, {w, w, 1, 1}, w));
    p.add(b + ".pw2.b", Tensor<S>::zeros({w}));
  }
  p.add(prefix + ".out.w", Tensor<S>::zeros({out_ch, w, k, k}));
  p.add(prefix + ".out.b", Tensor<S>::zeros({out_ch}));
}

template <typename S>
ValueId punet_graph(Tape<S>& tp, const WinnConfig& cfg, ParamCursor cur, ValueId x) {
  const int pad = static_cast<int>(cfg.kernel / 2);
  // cursor reads are sequenced one per statement (argument order is unspecified)
  auto wb_conv = [&](ValueId in, int p) {
    ValueId w = cur.next();
    ValueId b = cur.next();
    return conv2d(tp, in, w, b, 1, p);
  };
  ValueId h = relu(tp, wb_conv(x, pad));
  for (std::size_t j = 0; j < cfg.res_blocks; ++j) {
    ValueId dw1 = cur.next();
    ValueId d1 = depthwise_conv2d(tp, h, dw1, 1, pad);
    ValueId p1 = relu(tp, wb_conv(d1, 0));
    ValueId dw2 = cur.next();
    ValueId d2 = depthwise_conv2d(tp, p1, dw2, 1, pad);
    ValueId p2 = wb_conv(d2, 0);
    h = add(tp, h, p2);
  }
  ValueId out = wb_conv(h, pad);
  cur.finish();
  return out;
}

// bound-id range of the P (update=0) or U (update=1) net of pair m at level l
inline std::pair<std::size_t, std::size_t> punet_range(const WinnConfig& cfg, std::size_t l,
                                                       std::size_t m, int update) {
  const std::size_t per = cfg.items_per_net();
  const std::size_t begin = ((l * cfg.pairs + m) * 2 + static_cast<std::size_t>(update)) * per;
  return {begin, begin + per};
}

}  // namespace detail

template <typename S>
WinnModel<S> create_winn(const WinnConfig& cfg, Rng& rng) {
  cfg.validate();
  WinnModel<S> m;
  m.cfg = cfg;
  const std::size_t c = cfg.channels;
  for (std::size_t l = 0; l < cfg.levels; ++l)
    for (std::size_t p = 0; p < cfg.pairs; ++p) {
      const std::string prefix = "l" + std::to_string(l) + ".m" + std::to_string(p);
      detail::add_punet_params(m.params, prefix + ".p", cfg, c, 3 * c, rng);      // coarse -> detail
      detail::add_punet_params(m.params, prefix + ".u", cfg, 3 * c, c, rng);      // detail -> coarse
    }
  return m;
}

// ---- lazy polyphase split/merge on the tape --------------------------------------

template <typename S>
std::pair<ValueId, ValueId> lazy_split_graph(Tape<S>& tp, ValueId x) {
  ValueId ee = polyphase_component(tp, x, 0, 0);
  ValueId eo = polyphase_component(tp, x, 0, 1);
  ValueId oe = polyphase_component(tp, x, 1, 0);
  ValueId oo = polyphase_component(tp, x, 1, 1);
  return {ee, concat_channels(tp, concat_channels(tp, eo, oe), oo)};
}

template <typename S>
ValueId lazy_merge_graph(Tape<S>& tp, ValueId coarse, ValueId det) {
  const std::size_t c = tp.value(coarse).extent(0);
  if (tp.value(det).extent(0) != 3 * c)
    throw ShapeError("lazy_merge: detail " + shape_str(tp.value(det).shape()) + " for coarse " +
                     shape_str(tp.value(coarse).shape()));
  ValueId eo = slice_channels(tp, det, 0, c);
  ValueId oe = slice_channels(tp, det, c, 2 * c);
  ValueId oo = slice_channels(tp, det, 2 * c, 3 * c);
  return polyphase_merge(tp, coarse, eo, oe, oo);
}

// ---- forward / inverse transforms --------------------------------------------------

template <typename S>
struct WinnForwardIds {
  ValueId coarse{};
  std::vector<ValueId> details;
};

template <typename S>
WinnForwardIds<S> winn_forward_graph(Tape<S>& tp, const WinnConfig& cfg, const BoundParams& bound,
                                     ValueId x) {
  const Tensor<S>& xv = tp.value(x);
  if (xv.rank() != 3 || xv.extent(0) != cfg.channels)
    throw ShapeError("winn_forward: input " + shape_str(xv.shape()) + " for " +
                     std::to_string(cfg.channels) + " channels");
  const std::size_t div = std::size_t(1) << cfg.levels;
  if (xv.extent(1) % div || xv.extent(2) % div)
    throw ShapeError("winn_forward: extents " + shape_str(xv.shape()) + " not divisible by " +
                     std::to_string(div));
  WinnForwardIds<S> out;
  ValueId c = x;
  for (std::size_t l = 0; l < cfg.levels; ++l) {
    auto [cc, dd] = lazy_split_graph(tp, c);
    for (std::size_t m = 0; m < cfg.pairs; ++m) {
      auto [pb, pe] = detail::punet_range(cfg, l, m, 0);
      dd = sub(tp, dd, detail::punet_graph(tp, cfg, ParamCursor(bound, pb, pe), cc));
      auto [ub, ue] = detail::punet_range(cfg, l, m, 1);
      cc = add(tp, cc, detail::punet_graph(tp, cfg, ParamCursor(bound, ub, ue), dd));
    }
    out.details.push_back(dd);
    c = cc;
  }
  out.coarse = c;
  return out;
}

template <typename S>
ValueId winn_inverse_graph(Tape<S>& tp, const WinnConfig& cfg, const BoundParams& bound,
                           ValueId coarse, const std::vector<ValueId>& details) {
  if (details.size() != cfg.levels)
    throw ShapeError("winn_inverse: " + std::to_string(details.size()) + " detail bands for " +
                     std::to_string(cfg.levels) + " levels");
  ValueId c = coarse;
  for (std::size_t l = cfg.levels; l-- > 0;) {
    ValueId d = details[l];
    for (std::size_t m = cfg.pairs; m-- > 0;) {
      auto [ub, ue] = detail::punet_range(cfg, l, m, 1);
      c = sub(tp, c, detail::punet_graph(tp, cfg, ParamCursor(bound, ub, ue), d));
      auto [pb, pe] = detail::punet_range(cfg, l, m, 0);
      d = add(tp, d, detail::punet_graph(tp, cfg, ParamCursor(bound, pb, pe), c));
    }
    c = lazy_merge_graph(tp, c, d);
  }
  return c;
}

template <typename S>
WinnPyramid<S> winn_forward(const WinnModel<S>& m, const Tensor<S>& x) {
  Tape<S> tp;
  BoundParams bound = bind_params(tp, m.params, false);
  auto ids = winn_forward_graph(tp, m.cfg, bound, tp.constant(x));
  WinnPyramid<S> out;
  out.coarse = tp.value(ids.coarse);
  for (ValueId d : ids.details) out.details.push_back(tp.value(d));
  return out;
}

template <typename S>
Tensor<S> winn_inverse(const WinnModel<S>& m, const Tensor<S>& coarse,
                       const std::vector<Tensor<S>>& details) {
  Tape<S> tp;
  BoundParams bound = bind_params(tp, m.params, false);
  std::vector<ValueId> dids;
  dids.reserve(details.size());
  for (const Tensor<S>& d : details) dids.push_back(tp.constant(d));
  return tp.value(winn_inverse_graph(tp, m.cfg, bound, tp.constant(coarse), dids));
}

// ---- training -----------------------------------------------------------------------

// Mean over pairs of |coarse(x) - y|^2 per epoch; only the final-level coarse
// band is supervised, the detail bands are free.
template <typename S>
std::vector<double> train_winn(const std::vector<std::pair<Tensor<S>, Tensor<S>>>& data,
                               WinnModel<S>& m, const TrainConfig& cfg, Rng& rng) {
  if (data.empty()) throw ConfigError("train_winn: empty dataset");
  Optimizer<S> opt(cfg.opt);
  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::vector<double> trace;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    double sum = 0.0;
    for (std::size_t k = 0; k < order.size(); ++k) {
      const auto& [x, y] = data[order[k]];
      Tape<S> tp;
      BoundParams bound = bind_params(tp, m.params, true);
      auto ids = winn_forward_graph(tp, m.cfg, bound, tp.constant(x));
      ValueId loss = sum_squares(tp, sub(tp, ids.coarse, tp.constant(y)));
      const double lv = static_cast<double>(tp.value(loss).value());
      if (!std::isfinite(lv))
        throw NumericError("train_winn: non-finite loss at epoch " + std::to_string(epoch) +
                           " sample " + std::to_string(k));
      GradientMap<S> g = gradient(tp, loss);
      opt.step(m.params, collect_grads(g, bound));
      sum += lv;
    }
    trace.push_back(sum / static_cast<double>(order.size()));
  }
  return trace;
}

}  // namespace indigo

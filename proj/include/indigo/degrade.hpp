#pragma once

// Degradation operators y = H(x) + n, the synthetic shape dataset, and PSNR.
// Every H is expressed as tape ops so the same code path serves the dataset
// generator (plain evaluation) and the measurement-domain baseline (which
// differentiates through H).

#include <cmath>
#include <numbers>
#include <utility>
#include <vector>

#include "indigo/autodiff.hpp"
#include "indigo/params.hpp"
#include "indigo/rng.hpp"
#include "indigo/tensor.hpp"

namespace indigo {

enum class DegradationKind { kParity, kBox, kGaussianBlur, kBlockQuantize };

inline const char* degradation_name(DegradationKind k) {
  switch (k) {
    case DegradationKind::kParity: return "parity";
    case DegradationKind::kBox: return "box";
    case DegradationKind::kGaussianBlur: return "gaussian_blur";
    case DegradationKind::kBlockQuantize: return "block_quantize";
  }
  throw Error("degradation_name: bad kind");
}

inline DegradationKind degradation_kind(const std::string& name) {
  for (DegradationKind k : {DegradationKind::kParity, DegradationKind::kBox,
                            DegradationKind::kGaussianBlur, DegradationKind::kBlockQuantize})
    if (name == degradation_name(k)) return k;
  throw ConfigError("unknown degradation \"" + name + "\"");
}

struct DegradationOp {
  DegradationKind kind = DegradationKind::kBox;
  std::size_t factor = 2;   // downsampling k
  std::size_t radius = 1;   // gaussian blur half-width; sigma = radius / 2
  std::size_t block = 4;    // cosine-transform block edge
  double qstep = 0.5;       // deadzone quantizer step
  double noise_sigma = 0.0; // sigma_0 of the additive measurement noise

  void validate() const {
    if (factor != 2 && factor != 4 && factor != 8)
      throw ConfigError("degradation factor must be 2, 4, or 8, got " + std::to_string(factor));
    if (noise_sigma < 0) throw ConfigError("noise_sigma must be >= 0");
    if (kind == DegradationKind::kGaussianBlur && radius == 0)
      throw ConfigError("gaussian_blur needs radius >= 1");
    if (kind == DegradationKind::kBlockQuantize) {
      if (block != 2 && block != 4 && block != 8)
        throw ConfigError("block edge must be 2, 4, or 8, got " + std::to_string(block));
      if (qstep < 0) throw ConfigError("qstep must be >= 0");
    }
  }
};

namespace detail {

// Orthonormal cosine-II basis: D[u][i] = s_u cos(pi (2i+1) u / 2b).
inline std::vector<double> cosine_basis(std::size_t b) {
  std::vector<double> d(b * b);
  for (std::size_t u = 0; u < b; ++u) {
    const double s = std::sqrt((u == 0 ? 1.0 : 2.0) / static_cast<double>(b));
    for (std::size_t i = 0; i < b; ++i)
      d[u * b + i] = s * std::cos(std::numbers::pi * (2.0 * i + 1.0) * u / (2.0 * b));
  }
  return d;
}

// Concatenation order of the recursive polyphase split: block offset (i,j)
// of the p-th channel after space_to_depth with edge b.
inline std::vector<std::pair<std::size_t, std::size_t>> block_offsets(std::size_t b) {
  if (b == 1) return {{0, 0}};
  auto inner = block_offsets(b / 2);
  std::vector<std::pair<std::size_t, std::size_t>> out;
  out.reserve(b * b);
  for (auto [pr, pc] : {std::pair<std::size_t, std::size_t>{0, 0}, {0, 1}, {1, 0}, {1, 1}})
    for (auto [i, j] : inner) out.emplace_back(2 * i + pr, 2 * j + pc);
  return out;
}

template <typename S>
ValueId space_to_depth(Tape<S>& tp, ValueId x, std::size_t b) {
  if (b == 1) return x;
  ValueId ee = space_to_depth(tp, polyphase_component(tp, x, 0, 0), b / 2);
  ValueId eo = space_to_depth(tp, polyphase_component(tp, x, 0, 1), b / 2);
  ValueId oe = space_to_depth(tp, polyphase_component(tp, x, 1, 0), b / 2);
  ValueId oo = space_to_depth(tp, polyphase_component(tp, x, 1, 1), b / 2);
  return concat_channels(tp, concat_channels(tp, concat_channels(tp, ee, eo), oe), oo);
}

template <typename S>
ValueId depth_to_space(Tape<S>& tp, ValueId x, std::size_t b) {
  if (b == 1) return x;
  const std::size_t q = tp.value(x).extent(0) / 4;
  ValueId ee = depth_to_space(tp, slice_channels(tp, x, 0, q), b / 2);
  ValueId eo = depth_to_space(tp, slice_channels(tp, x, q, 2 * q), b / 2);
  ValueId oe = depth_to_space(tp, slice_channels(tp, x, 2 * q, 3 * q), b / 2);
  ValueId oo = depth_to_space(tp, slice_channels(tp, x, 3 * q, 4 * q), b / 2);
  return polyphase_merge(tp, ee, eo, oe, oo);
}

// Per-block orthonormal cosine transform and its inverse as 1x1 convs over
// the space_to_depth channel layout.
template <typename S>
Tensor<S> cosine_weight(std::size_t b, bool inverse) {
  const auto d = cosine_basis(b);
  const auto off = block_offsets(b);
  const std::size_t n = b * b;
  Tensor<S> w = Tensor<S>::zeros({n, n, 1, 1});
  for (std::size_t u = 0; u < b; ++u)
    for (std::size_t v = 0; v < b; ++v)
      for (std::size_t p = 0; p < n; ++p) {
        const auto [i, j] = off[p];
        const double e = d[u * b + i] * d[v * b + j];
        if (inverse)
          w.flat((p * n + u * b + v)) = static_cast<S>(e);
        else
          w.flat(((u * b + v) * n + p)) = static_cast<S>(e);
      }
  return w;
}

template <typename S>
ValueId box_downsample_graph(Tape<S>& tp, ValueId x, std::size_t k) {
  const std::size_t c = tp.value(x).extent(0);
  Tensor<S> w = Tensor<S>::full({c, k, k}, static_cast<S>(1.0 / static_cast<double>(k * k)));
  return depthwise_conv2d(tp, x, tp.constant(w), static_cast<int>(k), 0);
}

template <typename S>
ValueId block_quantize_graph(Tape<S>& tp, const DegradationOp& op, ValueId x) {
  const std::size_t c = tp.value(x).extent(0);
  const ValueId fwd = tp.constant(cosine_weight<S>(op.block, false));
  const ValueId inv = tp.constant(cosine_weight<S>(op.block, true));
  ValueId out{};
  for (std::size_t ch = 0; ch < c; ++ch) {
    ValueId xc = c == 1 ? x : slice_channels(tp, x, ch, ch + 1);
    ValueId coef = conv2d(tp, space_to_depth(tp, xc, op.block), fwd, 1, 0);
    ValueId q = quantize_deadzone(tp, coef, static_cast<S>(op.qstep));
    ValueId rec = depth_to_space(tp, conv2d(tp, q, inv, 1, 0), op.block);
    out = ch == 0 ? rec : concat_channels(tp, out, rec);
  }
  return box_downsample_graph(tp, out, op.factor);
}

}  // namespace detail

// H(x) on the tape; the caller owns noise addition.
template <typename S>
ValueId degradation_graph(Tape<S>& tp, const DegradationOp& op, ValueId x) {
  op.validate();
  const Tensor<S>& xv = tp.value(x);
  if (xv.rank() != 3)
    throw ShapeError("degradation: input must be (C,H,W), got " + shape_str(xv.shape()));
  if (xv.extent(1) % op.factor || xv.extent(2) % op.factor)
    throw ShapeError("degradation: extents " + shape_str(xv.shape()) + " not divisible by " +
                     std::to_string(op.factor));
  switch (op.kind) {
    case DegradationKind::kParity: {
      ValueId y = x;
      for (std::size_t k = op.factor; k > 1; k /= 2) y = polyphase_component(tp, y, 0, 0);
      return y;
    }
    case DegradationKind::kBox:
      return detail::box_downsample_graph(tp, x, op.factor);
    case DegradationKind::kGaussianBlur: {
      const std::size_t c = xv.extent(0);
      const std::size_t e = 2 * op.radius + 1;
      const double sigma = static_cast<double>(op.radius) / 2.0;
      Tensor<S> w = Tensor<S>::zeros({c, e, e});
      double sum = 0.0;
      std::vector<double> g(e * e);
      for (std::size_t i = 0; i < e; ++i)
        for (std::size_t j = 0; j < e; ++j) {
          const double di = static_cast<double>(i) - static_cast<double>(op.radius);
          const double dj = static_cast<double>(j) - static_cast<double>(op.radius);
          g[i * e + j] = std::exp(-(di * di + dj * dj) / (2.0 * sigma * sigma));
          sum += g[i * e + j];
        }
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t i = 0; i < e * e; ++i)
          w.flat(ch * e * e + i) = static_cast<S>(g[i] / sum);
      ValueId padded = replicate_pad2d(tp, x, static_cast<int>(op.radius));
      return depthwise_conv2d(tp, padded, tp.constant(w), static_cast<int>(op.factor), 0);
    }
    case DegradationKind::kBlockQuantize: {
      if (xv.extent(1) % op.block || xv.extent(2) % op.block)
        throw ShapeError("degradation: extents " + shape_str(xv.shape()) +
                         " not divisible by block " + std::to_string(op.block));
      return detail::block_quantize_graph(tp, op, x);
    }
  }
  throw Error("degradation_graph: bad kind");
}

// y = H(x) + n with n ~ N(0, sigma_0^2 I). Values are not clipped.
template <typename S>
Tensor<S> apply_degradation(const DegradationOp& op, const Tensor<S>& x, Rng& rng) {
  Tape<S> tp;
  Tensor<S> y = tp.value(degradation_graph(tp, op, tp.constant(x)));
  if (op.noise_sigma > 0) {
    Tensor<S> n = rng.gaussian_tensor<S>(y.shape());
    y = add(y, scale(n, static_cast<S>(op.noise_sigma)));
  }
  return y;
}

// Nearest-neighbour upsampling by k, the no-model reference an inverse solver
// has to beat.
template <typename S>
Tensor<S> nearest_upsample(const Tensor<S>& y, std::size_t k) {
  Tensor<S> out = y;
  for (std::size_t f = k; f > 1; f /= 2) out = upsample_nearest2x(out);
  return out;
}

// ---- synthetic dataset --------------------------------------------------------------

struct DatasetSpec {
  std::size_t count = 512;
  std::size_t channels = 1;
  std::size_t height = 16;
  std::size_t width = 16;
  std::uint64_t seed = 1;

  void validate() const {
    if (!count || !channels || !height || !width) throw ConfigError("dataset extents must be positive");
  }
};

namespace detail {

// Soft 1-pixel edge: coverage 1 inside, 0 outside, linear in between.
inline double coverage(double signed_dist) {
  return std::min(1.0, std::max(0.0, 0.5 - signed_dist));
}

}  // namespace detail

// Piecewise-smooth image of 2-5 anti-aliased shapes over a gradient
// background; a pure function of (spec.seed, index).
template <typename S = float>
Tensor<S> generate_image(const DatasetSpec& spec, std::size_t index) {
  spec.validate();
  if (index >= spec.count)
    throw ConfigError("image index " + std::to_string(index) + " out of range " +
                      std::to_string(spec.count));
  Rng rng = Rng::stream(spec.seed, index);
  const std::size_t c = spec.channels, h = spec.height, w = spec.width;
  const double hd = static_cast<double>(h), wd = static_cast<double>(w);

  // background: linear gradient between two intensities along a random direction
  std::vector<double> img(c * h * w);
  {
    const double a0 = rng.uniform(), a1 = rng.uniform();
    const double ang = 2.0 * std::numbers::pi * rng.uniform();
    const double gx = std::cos(ang), gy = std::sin(ang);
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j) {
          const double t = 0.5 + 0.5 * (gy * (i / hd - 0.5) + gx * (j / wd - 0.5)) * 2.0;
          img[(ch * h + i) * w + j] = a0 + (a1 - a0) * std::min(1.0, std::max(0.0, t));
        }
  }

  const std::size_t nshapes = 2 + rng.uniform_index(4);  // 2..5
  for (std::size_t s = 0; s < nshapes; ++s) {
    const std::uint64_t kind = rng.uniform_index(3);
    const double cx = rng.uniform() * wd, cy = rng.uniform() * hd;
    const double rx = (0.1 + 0.3 * rng.uniform()) * wd, ry = (0.1 + 0.3 * rng.uniform()) * hd;
    std::vector<double> val(c);
    for (std::size_t ch = 0; ch < c; ++ch) val[ch] = rng.uniform();
    const double ang = 2.0 * std::numbers::pi * rng.uniform();
    const double gx = std::cos(ang), gy = std::sin(ang);
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j) {
        const double py = i + 0.5 - cy, px = j + 0.5 - cx;
        double cov;
        if (kind == 0) {  // rectangle
          cov = detail::coverage(std::max(std::abs(px) - rx, std::abs(py) - ry));
        } else {  // ellipse; a gradient shape is an ellipse with graded intensity
          const double r = std::sqrt((px / rx) * (px / rx) + (py / ry) * (py / ry));
          cov = detail::coverage((r - 1.0) * std::min(rx, ry));
        }
        if (cov <= 0.0) continue;
        double shade = 1.0;
        if (kind == 2) shade = 0.5 + 0.5 * (gx * px / rx + gy * py / ry) / 2.0;
        for (std::size_t ch = 0; ch < c; ++ch) {
          const double v = std::min(1.0, std::max(0.0, val[ch] * shade));
          double& px0 = img[(ch * h + i) * w + j];
          px0 = px0 * (1.0 - cov) + v * cov;
        }
      }
  }

  Tensor<S> out({c, h, w});
  for (std::size_t i = 0; i < out.numel(); ++i)
    out.flat(i) = static_cast<S>(std::min(1.0, std::max(0.0, img[i])));
  return out;
}

// Training pairs (x_i, y_i); degradation noise drawn independently per pair.
template <typename S = float>
std::vector<std::pair<Tensor<S>, Tensor<S>>> make_pairs(const DatasetSpec& spec,
                                                        const DegradationOp& op, Rng& rng) {
  spec.validate();
  op.validate();
  std::vector<std::pair<Tensor<S>, Tensor<S>>> out;
  out.reserve(spec.count);
  for (std::size_t i = 0; i < spec.count; ++i) {
    Tensor<S> x = generate_image<S>(spec, i);
    Tensor<S> y = apply_degradation(op, x, rng);
    out.emplace_back(std::move(x), std::move(y));
  }
  return out;
}

// 10 log10(peak^2 / MSE), capped at 99 dB.
template <typename S>
double psnr(const Tensor<S>& a, const Tensor<S>& b, double peak = 1.0) {
  require_same_shape(a, b, "psnr");
  if (peak <= 0) throw ConfigError("psnr: peak must be > 0");
  double mse = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const double d = static_cast<double>(a.flat(i)) - static_cast<double>(b.flat(i));
    mse += d * d;
  }
  mse /= static_cast<double>(a.numel());
  if (mse == 0.0) return 99.0;
  return std::min(99.0, 10.0 * std::log10(peak * peak / mse));
}

}  // namespace indigo

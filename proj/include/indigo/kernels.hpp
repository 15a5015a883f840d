#pragma once

#include <Eigen/Dense>
#include <optional>

#include "indigo/tensor.hpp"

// Plain tensor kernels: every differentiable op's forward and adjoint as free
// functions over Tensor<S>. The tape calls these, so a graph forward and the
// direct call produce bitwise-identical values.

namespace indigo {

template <typename S>
using MatX = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <typename S>
using RowMatX = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using VecX = Eigen::Matrix<S, Eigen::Dynamic, 1>;

// ---- elementwise -----------------------------------------------------------

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  require_same_shape(a, b, "add");
  Tensor<S> y(a.shape());
  y.array() = a.array() + b.array();
  return y;
}

template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  require_same_shape(a, b, "sub");
  Tensor<S> y(a.shape());
  y.array() = a.array() - b.array();
  return y;
}

// Elementwise product; one operand may be a single-element tensor, which
// broadcasts (the only broadcast in the engine).
template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.numel() == 1 && b.numel() != 1) {
    Tensor<S> y(b.shape());
    y.array() = b.array() * a.flat(0);
    return y;
  }
  if (b.numel() == 1 && a.numel() != 1) {
    Tensor<S> y(a.shape());
    y.array() = a.array() * b.flat(0);
    return y;
  }
  require_same_shape(a, b, "mul");
  Tensor<S> y(a.shape());
  y.array() = a.array() * b.array();
  return y;
}

template <typename S>
Tensor<S> affine(const Tensor<S>& x, S a, S b) {
  Tensor<S> y(x.shape());
  y.array() = x.array() * a + b;
  return y;
}

template <typename S>
Tensor<S> scale(const Tensor<S>& x, S a) {
  return affine(x, a, S(0));
}

template <typename S>
Tensor<S> leaky_relu(const Tensor<S>& x, S slope) {
  Tensor<S> y(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const S v = x.flat(i);
    y.flat(i) = v > S(0) ? v : slope * v;
  }
  return y;
}

// dx for leaky_relu; the kink at 0 takes the negative side's slope.
template <typename S>
Tensor<S> leaky_relu_adjoint(const Tensor<S>& g, const Tensor<S>& x, S slope) {
  Tensor<S> d(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) d.flat(i) = x.flat(i) > S(0) ? g.flat(i) : slope * g.flat(i);
  return d;
}

// Deadzone quantizer q(v) = sign(v) * step * floor(|v|/step); step <= 0 is the
// identity. Piecewise constant, so its adjoint is zero everywhere.
template <typename S>
Tensor<S> quantize_deadzone(const Tensor<S>& x, S step) {
  Tensor<S> y(x.shape());
  if (step <= S(0)) {
    y.array() = x.array();
    return y;
  }
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const S v = x.flat(i);
    const S m = std::floor(std::abs(v) / step) * step;
    y.flat(i) = v < S(0) ? -m : m;
  }
  return y;
}

// ---- reductions -------------------------------------------------------------
// Accumulated in double so FD checks aren't drowned by summation rounding.

template <typename S>
Tensor<S> reduce_sum(const Tensor<S>& x) {
  double acc = 0.0;
  for (std::size_t i = 0; i < x.numel(); ++i) acc += static_cast<double>(x.flat(i));
  return Tensor<S>::scalar(static_cast<S>(acc));
}

template <typename S>
Tensor<S> sum_squares(const Tensor<S>& x) {
  double acc = 0.0;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double v = static_cast<double>(x.flat(i));
    acc += v * v;
  }
  return Tensor<S>::scalar(static_cast<S>(acc));
}

// ---- dense linear map -------------------------------------------------------

template <typename S>
Tensor<S> linear_apply(const Tensor<S>& w, const Tensor<S>& x, const Tensor<S>* b) {
  if (w.rank() != 2 || x.rank() != 1)
    throw ShapeError("linear: want W rank 2 and x rank 1, got " + shape_str(w.shape()) + " and " +
                     shape_str(x.shape()));
  if (w.extent(1) != x.extent(0))
    throw ShapeError("linear: W " + shape_str(w.shape()) + " against x " + shape_str(x.shape()));
  if (b && (b->rank() != 1 || b->extent(0) != w.extent(0)))
    throw ShapeError("linear: bias " + shape_str(b->shape()) + " against W " + shape_str(w.shape()));
  const std::size_t m = w.extent(0), n = w.extent(1);
  Tensor<S> y({m});
  Eigen::Map<const RowMatX<S>> wm(w.data(), m, n);
  Eigen::Map<const VecX<S>> xv(x.data(), n);
  Eigen::Map<VecX<S>> yv(y.data(), m);
  yv.noalias() = wm * xv;
  if (b) yv += Eigen::Map<const VecX<S>>(b->data(), m);
  return y;
}

template <typename S>
Tensor<S> linear_grad_weight(const Tensor<S>& g, const Tensor<S>& x) {
  const std::size_t m = g.extent(0), n = x.extent(0);
  Tensor<S> dw({m, n});
  Eigen::Map<RowMatX<S>> dwm(dw.data(), m, n);
  dwm.noalias() = Eigen::Map<const VecX<S>>(g.data(), m) * Eigen::Map<const VecX<S>>(x.data(), n).transpose();
  return dw;
}

template <typename S>
Tensor<S> linear_grad_input(const Tensor<S>& g, const Tensor<S>& w) {
  const std::size_t m = w.extent(0), n = w.extent(1);
  Tensor<S> dx({n});
  Eigen::Map<const RowMatX<S>> wm(w.data(), m, n);
  Eigen::Map<VecX<S>> dxv(dx.data(), n);
  dxv.noalias() = wm.transpose() * Eigen::Map<const VecX<S>>(g.data(), m);
  return dx;
}

// ---- conv2d (CHW, zero padding) ----------------------------------------------

inline std::size_t conv_out_extent(std::size_t in, std::size_t k, int stride, int pad,
                                   const char* op) {
  const std::size_t padded = in + 2 * static_cast<std::size_t>(pad);
  if (padded < k)
    throw ShapeError(std::string(op) + ": kernel " + std::to_string(k) +
                     " larger than padded extent " + std::to_string(padded));
  return (padded - k) / static_cast<std::size_t>(stride) + 1;
}

namespace detail {

template <typename S>
void check_conv_args(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>* b, int stride,
                     int pad, bool depthwise, const char* op) {
  if (stride < 1) throw ShapeError(std::string(op) + ": stride must be >= 1");
  if (pad < 0) throw ShapeError(std::string(op) + ": pad must be >= 0");
  if (x.rank() != 3)
    throw ShapeError(std::string(op) + ": input must be rank 3 (C,H,W), got " + shape_str(x.shape()));
  if (depthwise) {
    if (w.rank() != 3)
      throw ShapeError(std::string(op) + ": weight must be rank 3 (C,kh,kw), got " +
                       shape_str(w.shape()));
    if (w.extent(0) != x.extent(0))
      throw ShapeError(std::string(op) + ": weight channels " + shape_str(w.shape()) +
                       " against input " + shape_str(x.shape()));
  } else {
    if (w.rank() != 4)
      throw ShapeError(std::string(op) + ": weight must be rank 4 (Cout,Cin,kh,kw), got " +
                       shape_str(w.shape()));
    if (w.extent(1) != x.extent(0))
      throw ShapeError(std::string(op) + ": weight expects " + std::to_string(w.extent(1)) +
                       " input channels, input is " + shape_str(x.shape()));
  }
  const std::size_t cout = depthwise ? x.extent(0) : w.extent(0);
  if (b && (b->rank() != 1 || b->extent(0) != cout))
    throw ShapeError(std::string(op) + ": bias " + shape_str(b->shape()) + " for " +
                     std::to_string(cout) + " output channels");
}

// Gathers padded conv patches into a (Cin*kh*kw) x (Hout*Wout) column matrix.
template <typename S>
MatX<S> im2col(const Tensor<S>& x, std::size_t kh, std::size_t kw, int stride, int pad,
               std::size_t hout, std::size_t wout) {
  const std::size_t cin = x.extent(0), h = x.extent(1), w = x.extent(2);
  MatX<S> cols(cin * kh * kw, hout * wout);
  cols.setZero();
  for (std::size_t oh = 0; oh < hout; ++oh) {
    for (std::size_t ow = 0; ow < wout; ++ow) {
      const Eigen::Index col = static_cast<Eigen::Index>(oh * wout + ow);
      for (std::size_t c = 0; c < cin; ++c) {
        for (std::size_t ki = 0; ki < kh; ++ki) {
          const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh) * stride +
                                    static_cast<std::ptrdiff_t>(ki) - pad;
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(h)) continue;
          for (std::size_t kj = 0; kj < kw; ++kj) {
            const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow) * stride +
                                      static_cast<std::ptrdiff_t>(kj) - pad;
            if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(w)) continue;
            cols(static_cast<Eigen::Index>((c * kh + ki) * kw + kj), col) =
                x(c, static_cast<std::size_t>(ih), static_cast<std::size_t>(iw));
          }
        }
      }
    }
  }
  return cols;
}

// Scatter-add of column gradients back onto the input; exact transpose of im2col.
template <typename S>
void col2im_add(const MatX<S>& cols, Tensor<S>& dx, std::size_t kh, std::size_t kw, int stride,
                int pad, std::size_t hout, std::size_t wout) {
  const std::size_t cin = dx.extent(0), h = dx.extent(1), w = dx.extent(2);
  for (std::size_t oh = 0; oh < hout; ++oh) {
    for (std::size_t ow = 0; ow < wout; ++ow) {
      const Eigen::Index col = static_cast<Eigen::Index>(oh * wout + ow);
      for (std::size_t c = 0; c < cin; ++c) {
        for (std::size_t ki = 0; ki < kh; ++ki) {
          const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh) * stride +
                                    static_cast<std::ptrdiff_t>(ki) - pad;
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(h)) continue;
          for (std::size_t kj = 0; kj < kw; ++kj) {
            const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow) * stride +
                                      static_cast<std::ptrdiff_t>(kj) - pad;
            if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(w)) continue;
            dx(c, static_cast<std::size_t>(ih), static_cast<std::size_t>(iw)) +=
                cols(static_cast<Eigen::Index>((c * kh + ki) * kw + kj), col);
          }
        }
      }
    }
  }
}

}  // namespace detail

template <typename S>
Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>* b, int stride, int pad) {
  detail::check_conv_args(x, w, b, stride, pad, false, "conv2d");
  const std::size_t cout = w.extent(0), kh = w.extent(2), kw = w.extent(3);
  const std::size_t hout = conv_out_extent(x.extent(1), kh, stride, pad, "conv2d");
  const std::size_t wout = conv_out_extent(x.extent(2), kw, stride, pad, "conv2d");
  const MatX<S> cols = detail::im2col(x, kh, kw, stride, pad, hout, wout);
  Tensor<S> y({cout, hout, wout});
  Eigen::Map<const RowMatX<S>> wm(w.data(), cout, w.extent(1) * kh * kw);
  Eigen::Map<RowMatX<S>> ym(y.data(), cout, hout * wout);
  ym.noalias() = wm * cols;
  if (b)
    for (std::size_t c = 0; c < cout; ++c) ym.row(static_cast<Eigen::Index>(c)).array() += b->flat(c);
  return y;
}

template <typename S>
Tensor<S> conv2d_grad_input(const Tensor<S>& g, const Tensor<S>& w, const Shape& x_shape,
                            int stride, int pad) {
  const std::size_t cout = w.extent(0), kh = w.extent(2), kw = w.extent(3);
  const std::size_t hout = g.extent(1), wout = g.extent(2);
  Eigen::Map<const RowMatX<S>> wm(w.data(), cout, w.extent(1) * kh * kw);
  Eigen::Map<const RowMatX<S>> gm(g.data(), cout, hout * wout);
  MatX<S> dcols = wm.transpose() * gm;
  Tensor<S> dx(x_shape);
  detail::col2im_add(dcols, dx, kh, kw, stride, pad, hout, wout);
  return dx;
}

template <typename S>
Tensor<S> conv2d_grad_weight(const Tensor<S>& g, const Tensor<S>& x, const Shape& w_shape,
                             int stride, int pad) {
  const std::size_t cout = w_shape[0], kh = w_shape[2], kw = w_shape[3];
  const std::size_t hout = g.extent(1), wout = g.extent(2);
  const MatX<S> cols = detail::im2col(x, kh, kw, stride, pad, hout, wout);
  Tensor<S> dw(w_shape);
  Eigen::Map<const RowMatX<S>> gm(g.data(), cout, hout * wout);
  Eigen::Map<RowMatX<S>> dwm(dw.data(), cout, w_shape[1] * kh * kw);
  dwm.noalias() = gm * cols.transpose();
  return dw;
}

template <typename S>
Tensor<S> conv2d_grad_bias(const Tensor<S>& g) {
  const std::size_t cout = g.extent(0);
  Tensor<S> db({cout});
  Eigen::Map<const RowMatX<S>> gm(g.data(), cout, g.extent(1) * g.extent(2));
  for (std::size_t c = 0; c < cout; ++c) db.flat(c) = gm.row(static_cast<Eigen::Index>(c)).sum();
  return db;
}

template <typename S>
Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& w, int stride, int pad) {
  return conv2d(x, w, static_cast<const Tensor<S>*>(nullptr), stride, pad);
}

// ---- depthwise conv2d ---------------------------------------------------------

template <typename S>
Tensor<S> depthwise_conv2d(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>* b, int stride,
                           int pad) {
  detail::check_conv_args(x, w, b, stride, pad, true, "depthwise_conv2d");
  const std::size_t c = x.extent(0), h = x.extent(1), wd = x.extent(2);
  const std::size_t kh = w.extent(1), kw = w.extent(2);
  const std::size_t hout = conv_out_extent(h, kh, stride, pad, "depthwise_conv2d");
  const std::size_t wout = conv_out_extent(wd, kw, stride, pad, "depthwise_conv2d");
  Tensor<S> y({c, hout, wout});
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t oh = 0; oh < hout; ++oh) {
      for (std::size_t ow = 0; ow < wout; ++ow) {
        S acc = b ? b->flat(ch) : S(0);
        for (std::size_t ki = 0; ki < kh; ++ki) {
          const std::ptrdiff_t ih =
              static_cast<std::ptrdiff_t>(oh) * stride + static_cast<std::ptrdiff_t>(ki) - pad;
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(h)) continue;
          for (std::size_t kj = 0; kj < kw; ++kj) {
            const std::ptrdiff_t iw =
                static_cast<std::ptrdiff_t>(ow) * stride + static_cast<std::ptrdiff_t>(kj) - pad;
            if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(wd)) continue;
            acc += w(ch, ki, kj) * x(ch, static_cast<std::size_t>(ih), static_cast<std::size_t>(iw));
          }
        }
        y(ch, oh, ow) = acc;
      }
    }
  }
  return y;
}

template <typename S>
Tensor<S> depthwise_conv2d_grad_input(const Tensor<S>& g, const Tensor<S>& w, const Shape& x_shape,
                                      int stride, int pad) {
  Tensor<S> dx(x_shape);
  const std::size_t c = x_shape[0], h = x_shape[1], wd = x_shape[2];
  const std::size_t kh = w.extent(1), kw = w.extent(2);
  const std::size_t hout = g.extent(1), wout = g.extent(2);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t oh = 0; oh < hout; ++oh)
      for (std::size_t ow = 0; ow < wout; ++ow) {
        const S gv = g(ch, oh, ow);
        for (std::size_t ki = 0; ki < kh; ++ki) {
          const std::ptrdiff_t ih =
              static_cast<std::ptrdiff_t>(oh) * stride + static_cast<std::ptrdiff_t>(ki) - pad;
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(h)) continue;
          for (std::size_t kj = 0; kj < kw; ++kj) {
            const std::ptrdiff_t iw =
                static_cast<std::ptrdiff_t>(ow) * stride + static_cast<std::ptrdiff_t>(kj) - pad;
            if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(wd)) continue;
            dx(ch, static_cast<std::size_t>(ih), static_cast<std::size_t>(iw)) += w(ch, ki, kj) * gv;
          }
        }
      }
  return dx;
}

template <typename S>
Tensor<S> depthwise_conv2d_grad_weight(const Tensor<S>& g, const Tensor<S>& x, const Shape& w_shape,
                                       int stride, int pad) {
  Tensor<S> dw(w_shape);
  const std::size_t c = x.extent(0), h = x.extent(1), wd = x.extent(2);
  const std::size_t kh = w_shape[1], kw = w_shape[2];
  const std::size_t hout = g.extent(1), wout = g.extent(2);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t oh = 0; oh < hout; ++oh)
      for (std::size_t ow = 0; ow < wout; ++ow) {
        const S gv = g(ch, oh, ow);
        for (std::size_t ki = 0; ki < kh; ++ki) {
          const std::ptrdiff_t ih =
              static_cast<std::ptrdiff_t>(oh) * stride + static_cast<std::ptrdiff_t>(ki) - pad;
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(h)) continue;
          for (std::size_t kj = 0; kj < kw; ++kj) {
            const std::ptrdiff_t iw =
                static_cast<std::ptrdiff_t>(ow) * stride + static_cast<std::ptrdiff_t>(kj) - pad;
            if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(wd)) continue;
            dw(ch, ki, kj) += x(ch, static_cast<std::size_t>(ih), static_cast<std::size_t>(iw)) * gv;
          }
        }
      }
  return dw;
}

template <typename S>
Tensor<S> depthwise_conv2d(const Tensor<S>& x, const Tensor<S>& w, int stride, int pad) {
  return depthwise_conv2d(x, w, static_cast<const Tensor<S>*>(nullptr), stride, pad);
}

// ---- channel concat / slice ----------------------------------------------------

template <typename S>
Tensor<S> concat_channels(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.rank() != 3 || b.rank() != 3 || a.extent(1) != b.extent(1) || a.extent(2) != b.extent(2))
    throw ShapeError("concat_channels: " + shape_str(a.shape()) + " with " + shape_str(b.shape()));
  Tensor<S> y({a.extent(0) + b.extent(0), a.extent(1), a.extent(2)});
  std::copy(a.data(), a.data() + a.numel(), y.data());
  std::copy(b.data(), b.data() + b.numel(), y.data() + a.numel());
  return y;
}

// Channels [c0, c1) of x.
template <typename S>
Tensor<S> slice_channels(const Tensor<S>& x, std::size_t c0, std::size_t c1) {
  if (x.rank() != 3 || c0 >= c1 || c1 > x.extent(0))
    throw ShapeError("slice_channels: [" + std::to_string(c0) + "," + std::to_string(c1) +
                     ") of " + shape_str(x.shape()));
  Tensor<S> y({c1 - c0, x.extent(1), x.extent(2)});
  const std::size_t plane = x.extent(1) * x.extent(2);
  std::copy(x.data() + c0 * plane, x.data() + c1 * plane, y.data());
  return y;
}

// Adjoint of slice_channels: place g back at channel offset c0 in a zero tensor.
template <typename S>
Tensor<S> embed_channels(const Tensor<S>& g, std::size_t c_total, std::size_t c0) {
  Tensor<S> y({c_total, g.extent(1), g.extent(2)});
  const std::size_t plane = g.extent(1) * g.extent(2);
  std::copy(g.data(), g.data() + g.numel(), y.data() + c0 * plane);
  return y;
}

// ---- polyphase (factor-2) -------------------------------------------------------

template <typename S>
Tensor<S> polyphase_component(const Tensor<S>& x, int pr, int pc) {
  if (x.rank() != 3 || x.extent(1) % 2 || x.extent(2) % 2)
    throw ShapeError("polyphase_component: need rank 3 with even H,W, got " + shape_str(x.shape()));
  const std::size_t c = x.extent(0), h2 = x.extent(1) / 2, w2 = x.extent(2) / 2;
  Tensor<S> y({c, h2, w2});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < h2; ++i)
      for (std::size_t j = 0; j < w2; ++j)
        y(ch, i, j) = x(ch, 2 * i + static_cast<std::size_t>(pr), 2 * j + static_cast<std::size_t>(pc));
  return y;
}

// Adjoint of polyphase_component: scatter g into the (pr,pc) phase of a zero tensor.
template <typename S>
Tensor<S> polyphase_scatter(const Tensor<S>& g, int pr, int pc) {
  const std::size_t c = g.extent(0), h2 = g.extent(1), w2 = g.extent(2);
  Tensor<S> y({c, 2 * h2, 2 * w2});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < h2; ++i)
      for (std::size_t j = 0; j < w2; ++j)
        y(ch, 2 * i + static_cast<std::size_t>(pr), 2 * j + static_cast<std::size_t>(pc)) = g(ch, i, j);
  return y;
}

// Inverse of the 4-way polyphase split; components ordered (0,0),(0,1),(1,0),(1,1).
template <typename S>
Tensor<S> polyphase_merge(const Tensor<S>& ee, const Tensor<S>& eo, const Tensor<S>& oe,
                          const Tensor<S>& oo) {
  require_same_shape(ee, eo, "polyphase_merge");
  require_same_shape(ee, oe, "polyphase_merge");
  require_same_shape(ee, oo, "polyphase_merge");
  if (ee.rank() != 3) throw ShapeError("polyphase_merge: need rank 3, got " + shape_str(ee.shape()));
  const std::size_t c = ee.extent(0), h2 = ee.extent(1), w2 = ee.extent(2);
  Tensor<S> y({c, 2 * h2, 2 * w2});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < h2; ++i)
      for (std::size_t j = 0; j < w2; ++j) {
        y(ch, 2 * i, 2 * j) = ee(ch, i, j);
        y(ch, 2 * i, 2 * j + 1) = eo(ch, i, j);
        y(ch, 2 * i + 1, 2 * j) = oe(ch, i, j);
        y(ch, 2 * i + 1, 2 * j + 1) = oo(ch, i, j);
      }
  return y;
}

// ---- resampling / padding --------------------------------------------------------

template <typename S>
Tensor<S> upsample_nearest2x(const Tensor<S>& x) {
  if (x.rank() != 3) throw ShapeError("upsample_nearest2x: need rank 3, got " + shape_str(x.shape()));
  const std::size_t c = x.extent(0), h = x.extent(1), w = x.extent(2);
  Tensor<S> y({c, 2 * h, 2 * w});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < 2 * h; ++i)
      for (std::size_t j = 0; j < 2 * w; ++j) y(ch, i, j) = x(ch, i / 2, j / 2);
  return y;
}

template <typename S>
Tensor<S> upsample_nearest2x_adjoint(const Tensor<S>& g) {
  const std::size_t c = g.extent(0), h2 = g.extent(1) / 2, w2 = g.extent(2) / 2;
  Tensor<S> d({c, h2, w2});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < g.extent(1); ++i)
      for (std::size_t j = 0; j < g.extent(2); ++j) d(ch, i / 2, j / 2) += g(ch, i, j);
  return d;
}

template <typename S>
Tensor<S> replicate_pad2d(const Tensor<S>& x, int pad) {
  if (x.rank() != 3) throw ShapeError("replicate_pad2d: need rank 3, got " + shape_str(x.shape()));
  if (pad < 0) throw ShapeError("replicate_pad2d: pad must be >= 0");
  const std::size_t c = x.extent(0), h = x.extent(1), w = x.extent(2);
  const std::size_t p = static_cast<std::size_t>(pad);
  Tensor<S> y({c, h + 2 * p, w + 2 * p});
  auto clampi = [](std::ptrdiff_t v, std::size_t n) {
    return static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(v, 0, static_cast<std::ptrdiff_t>(n) - 1));
  };
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < h + 2 * p; ++i)
      for (std::size_t j = 0; j < w + 2 * p; ++j)
        y(ch, i, j) = x(ch, clampi(static_cast<std::ptrdiff_t>(i) - pad, h),
                        clampi(static_cast<std::ptrdiff_t>(j) - pad, w));
  return y;
}

template <typename S>
Tensor<S> replicate_pad2d_adjoint(const Tensor<S>& g, const Shape& x_shape, int pad) {
  Tensor<S> dx(x_shape);
  const std::size_t h = x_shape[1], w = x_shape[2];
  auto clampi = [](std::ptrdiff_t v, std::size_t n) {
    return static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(v, 0, static_cast<std::ptrdiff_t>(n) - 1));
  };
  for (std::size_t ch = 0; ch < x_shape[0]; ++ch)
    for (std::size_t i = 0; i < g.extent(1); ++i)
      for (std::size_t j = 0; j < g.extent(2); ++j)
        dx(ch, clampi(static_cast<std::ptrdiff_t>(i) - pad, h),
           clampi(static_cast<std::ptrdiff_t>(j) - pad, w)) += g(ch, i, j);
  return dx;
}

// ---- channel bias -----------------------------------------------------------------

template <typename S>
Tensor<S> bias_add_channels(const Tensor<S>& x, const Tensor<S>& b) {
  if (x.rank() != 3 || b.rank() != 1 || b.extent(0) != x.extent(0))
    throw ShapeError("bias_add_channels: " + shape_str(x.shape()) + " with " + shape_str(b.shape()));
  Tensor<S> y(x.shape());
  const std::size_t plane = x.extent(1) * x.extent(2);
  for (std::size_t c = 0; c < x.extent(0); ++c) {
    const S bv = b.flat(c);
    for (std::size_t i = 0; i < plane; ++i) y.flat(c * plane + i) = x.flat(c * plane + i) + bv;
  }
  return y;
}

template <typename S>
Tensor<S> channel_sums(const Tensor<S>& g) {
  Tensor<S> s({g.extent(0)});
  const std::size_t plane = g.extent(1) * g.extent(2);
  for (std::size_t c = 0; c < g.extent(0); ++c) {
    double acc = 0.0;
    for (std::size_t i = 0; i < plane; ++i) acc += static_cast<double>(g.flat(c * plane + i));
    s.flat(c) = static_cast<S>(acc);
  }
  return s;
}

}  // namespace indigo

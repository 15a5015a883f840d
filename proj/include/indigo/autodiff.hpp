#pragma once

#include <array>
#include <functional>
#include <unordered_map>

#include "indigo/kernels.hpp"

// Reverse-mode autodiff on an append-only tape. Ops execute eagerly and record
// one node each; gradient() walks the tape backwards once, accumulating
// adjoints additively at fan-out. Node values are never mutated after
// creation, so a tape can be replayed or differentiated any number of times.

namespace indigo {

struct ValueId {
  std::uint32_t index = 0;
  bool operator==(const ValueId&) const = default;
};

enum class OpKind : std::uint8_t {
  kLeaf,
  kAdd,
  kSub,
  kMul,
  kAffine,
  kLeakyRelu,
  kConv2d,
  kDepthwiseConv2d,
  kConcatChannels,
  kSliceChannels,
  kPolyphaseComponent,
  kPolyphaseMerge,
  kReduceSum,
  kSumSquares,
  kLinear,
  kBiasAddChannels,
  kUpsampleNearest2x,
  kReplicatePad2d,
  kQuantizeDeadzone,
};

inline const char* op_name(OpKind k) {
  switch (k) {
    case OpKind::kLeaf: return "leaf";
    case OpKind::kAdd: return "add";
    case OpKind::kSub: return "sub";
    case OpKind::kMul: return "mul";
    case OpKind::kAffine: return "affine";
    case OpKind::kLeakyRelu: return "leaky_relu";
    case OpKind::kConv2d: return "conv2d";
    case OpKind::kDepthwiseConv2d: return "depthwise_conv2d";
    case OpKind::kConcatChannels: return "concat_channels";
    case OpKind::kSliceChannels: return "slice_channels";
    case OpKind::kPolyphaseComponent: return "polyphase_component";
    case OpKind::kPolyphaseMerge: return "polyphase_merge";
    case OpKind::kReduceSum: return "reduce_sum";
    case OpKind::kSumSquares: return "sum_squares";
    case OpKind::kLinear: return "linear";
    case OpKind::kBiasAddChannels: return "bias_add_channels";
    case OpKind::kUpsampleNearest2x: return "upsample_nearest2x";
    case OpKind::kReplicatePad2d: return "replicate_pad2d";
    case OpKind::kQuantizeDeadzone: return "quantize_deadzone";
  }
  return "?";
}

template <typename S>
struct TapeNode {
  OpKind kind = OpKind::kLeaf;
  bool requires_grad = false;
  std::uint8_t num_inputs = 0;
  std::array<ValueId, 4> in{};
  Tensor<S> value;
  int i0 = 0, i1 = 0;  // op attributes: stride/pad, slice range, phase, ...
  S s0 = S(0), s1 = S(0);
};

template <typename S>
class Tape {
 public:
  ValueId leaf(Tensor<S> v, bool requires_grad = true) {
    TapeNode<S> n;
    n.kind = OpKind::kLeaf;
    n.requires_grad = requires_grad;
    n.value = std::move(v);
    return push(std::move(n));
  }

  ValueId constant(Tensor<S> v) { return leaf(std::move(v), false); }

  std::size_t size() const { return nodes_.size(); }

  const TapeNode<S>& node(ValueId id) const {
    if (id.index >= nodes_.size())
      throw Error("Tape: id " + std::to_string(id.index) + " out of range (size " +
                  std::to_string(nodes_.size()) + ")");
    return nodes_[id.index];
  }

  const TapeNode<S>& node_at(std::size_t i) const { return nodes_[i]; }

  const Tensor<S>& value(ValueId id) const { return node(id).value; }
  bool requires_grad(ValueId id) const { return node(id).requires_grad; }

  ValueId push(TapeNode<S> n) {
    for (std::uint8_t i = 0; i < n.num_inputs; ++i)
      if (n.in[i].index >= nodes_.size())
        throw Error(std::string("Tape: ") + op_name(n.kind) + " references future id");
    nodes_.push_back(std::move(n));
    return {static_cast<std::uint32_t>(nodes_.size() - 1)};
  }

 private:
  std::vector<TapeNode<S>> nodes_;
};

namespace detail {

template <typename S>
ValueId push_op(Tape<S>& t, OpKind kind, std::initializer_list<ValueId> ins, Tensor<S> value,
                int i0 = 0, int i1 = 0, S s0 = S(0), S s1 = S(0)) {
  TapeNode<S> n;
  n.kind = kind;
  n.num_inputs = static_cast<std::uint8_t>(ins.size());
  std::size_t k = 0;
  for (ValueId id : ins) {
    n.in[k++] = id;
    n.requires_grad = n.requires_grad || t.requires_grad(id);
  }
  n.value = std::move(value);
  n.i0 = i0;
  n.i1 = i1;
  n.s0 = s0;
  n.s1 = s1;
  return t.push(std::move(n));
}

}  // namespace detail

// ---- graph builders; the value is computed eagerly via the plain kernels ----

template <typename S>
ValueId add(Tape<S>& t, ValueId a, ValueId b) {
  return detail::push_op(t, OpKind::kAdd, {a, b}, add(t.value(a), t.value(b)));
}

template <typename S>
ValueId sub(Tape<S>& t, ValueId a, ValueId b) {
  return detail::push_op(t, OpKind::kSub, {a, b}, sub(t.value(a), t.value(b)));
}

template <typename S>
ValueId mul(Tape<S>& t, ValueId a, ValueId b) {
  return detail::push_op(t, OpKind::kMul, {a, b}, mul(t.value(a), t.value(b)));
}

template <typename S>
ValueId affine(Tape<S>& t, ValueId x, S a, S b) {
  return detail::push_op(t, OpKind::kAffine, {x}, affine(t.value(x), a, b), 0, 0, a, b);
}

template <typename S>
ValueId scale(Tape<S>& t, ValueId x, S a) {
  return affine(t, x, a, S(0));
}

template <typename S>
ValueId leaky_relu(Tape<S>& t, ValueId x, S slope) {
  return detail::push_op(t, OpKind::kLeakyRelu, {x}, leaky_relu(t.value(x), slope), 0, 0, slope);
}

template <typename S>
ValueId relu(Tape<S>& t, ValueId x) {
  return leaky_relu(t, x, S(0));
}

template <typename S>
ValueId conv2d(Tape<S>& t, ValueId x, ValueId w, int stride, int pad) {
  return detail::push_op(t, OpKind::kConv2d, {x, w},
                         conv2d(t.value(x), t.value(w), static_cast<const Tensor<S>*>(nullptr), stride, pad),
                         stride, pad);
}

template <typename S>
ValueId conv2d(Tape<S>& t, ValueId x, ValueId w, ValueId b, int stride, int pad) {
  const Tensor<S>& bv = t.value(b);
  return detail::push_op(t, OpKind::kConv2d, {x, w, b}, conv2d(t.value(x), t.value(w), &bv, stride, pad),
                         stride, pad);
}

template <typename S>
ValueId depthwise_conv2d(Tape<S>& t, ValueId x, ValueId w, int stride, int pad) {
  return detail::push_op(
      t, OpKind::kDepthwiseConv2d, {x, w},
      depthwise_conv2d(t.value(x), t.value(w), static_cast<const Tensor<S>*>(nullptr), stride, pad),
      stride, pad);
}

template <typename S>
ValueId depthwise_conv2d(Tape<S>& t, ValueId x, ValueId w, ValueId b, int stride, int pad) {
  const Tensor<S>& bv = t.value(b);
  return detail::push_op(t, OpKind::kDepthwiseConv2d, {x, w, b},
                         depthwise_conv2d(t.value(x), t.value(w), &bv, stride, pad), stride, pad);
}

template <typename S>
ValueId concat_channels(Tape<S>& t, ValueId a, ValueId b) {
  return detail::push_op(t, OpKind::kConcatChannels, {a, b},
                         concat_channels(t.value(a), t.value(b)),
                         static_cast<int>(t.value(a).extent(0)));
}

template <typename S>
ValueId slice_channels(Tape<S>& t, ValueId x, std::size_t c0, std::size_t c1) {
  return detail::push_op(t, OpKind::kSliceChannels, {x}, slice_channels(t.value(x), c0, c1),
                         static_cast<int>(c0), static_cast<int>(c1));
}

template <typename S>
ValueId polyphase_component(Tape<S>& t, ValueId x, int pr, int pc) {
  return detail::push_op(t, OpKind::kPolyphaseComponent, {x}, polyphase_component(t.value(x), pr, pc),
                         pr, pc);
}

template <typename S>
ValueId polyphase_merge(Tape<S>& t, ValueId ee, ValueId eo, ValueId oe, ValueId oo) {
  return detail::push_op(t, OpKind::kPolyphaseMerge, {ee, eo, oe, oo},
                         polyphase_merge(t.value(ee), t.value(eo), t.value(oe), t.value(oo)));
}

template <typename S>
ValueId reduce_sum(Tape<S>& t, ValueId x) {
  return detail::push_op(t, OpKind::kReduceSum, {x}, reduce_sum(t.value(x)));
}

template <typename S>
ValueId sum_squares(Tape<S>& t, ValueId x) {
  return detail::push_op(t, OpKind::kSumSquares, {x}, sum_squares(t.value(x)));
}

template <typename S>
ValueId linear(Tape<S>& t, ValueId w, ValueId x) {
  return detail::push_op(t, OpKind::kLinear, {w, x},
                         linear_apply(t.value(w), t.value(x), static_cast<const Tensor<S>*>(nullptr)));
}

template <typename S>
ValueId linear(Tape<S>& t, ValueId w, ValueId x, ValueId b) {
  const Tensor<S>& bv = t.value(b);
  return detail::push_op(t, OpKind::kLinear, {w, x, b}, linear_apply(t.value(w), t.value(x), &bv));
}

template <typename S>
ValueId bias_add_channels(Tape<S>& t, ValueId x, ValueId b) {
  return detail::push_op(t, OpKind::kBiasAddChannels, {x, b},
                         bias_add_channels(t.value(x), t.value(b)));
}

template <typename S>
ValueId upsample_nearest2x(Tape<S>& t, ValueId x) {
  return detail::push_op(t, OpKind::kUpsampleNearest2x, {x}, upsample_nearest2x(t.value(x)));
}

template <typename S>
ValueId replicate_pad2d(Tape<S>& t, ValueId x, int pad) {
  return detail::push_op(t, OpKind::kReplicatePad2d, {x}, replicate_pad2d(t.value(x), pad), pad);
}

template <typename S>
ValueId quantize_deadzone(Tape<S>& t, ValueId x, S step) {
  return detail::push_op(t, OpKind::kQuantizeDeadzone, {x}, quantize_deadzone(t.value(x), step), 0, 0,
                         step);
}

// ---- backward pass -----------------------------------------------------------

template <typename S>
class GradientMap {
 public:
  bool contains(ValueId id) const { return grads_.count(id.index) != 0; }

  const Tensor<S>& at(ValueId id) const {
    auto it = grads_.find(id.index);
    if (it == grads_.end())
      throw Error("GradientMap: id " + std::to_string(id.index) + " is not a differentiable leaf");
    return it->second;
  }

  void insert(std::uint32_t index, Tensor<S> g) { grads_.emplace(index, std::move(g)); }
  std::size_t size() const { return grads_.size(); }

 private:
  std::unordered_map<std::uint32_t, Tensor<S>> grads_;
};

// Adjoints of every differentiable leaf reachable from `loss`; unreachable
// differentiable leaves map to zeros. Loss must hold exactly one element.
template <typename S>
GradientMap<S> gradient(const Tape<S>& tape, ValueId loss) {
  const TapeNode<S>& lnode = tape.node(loss);
  if (lnode.value.numel() != 1)
    throw Error("gradient: loss must be a single element, got shape " + shape_str(lnode.value.shape()));

  std::vector<Tensor<S>> grad(loss.index + 1);
  std::vector<char> has(loss.index + 1, 0);
  grad[loss.index] = Tensor<S>::full(lnode.value.shape(), S(1));
  has[loss.index] = 1;

  auto accum = [&](ValueId src, Tensor<S>&& contrib) {
    if (!tape.node(src).requires_grad) return;
    if (!has[src.index]) {
      grad[src.index] = std::move(contrib);
      has[src.index] = 1;
    } else {
      grad[src.index].array() += contrib.array();
    }
  };

  for (std::size_t i = loss.index + 1; i-- > 0;) {
    const TapeNode<S>& n = tape.node_at(i);
    if (!has[i] || !n.requires_grad || n.kind == OpKind::kLeaf) continue;
    Tensor<S> g = std::move(grad[i]);
    has[i] = 2;  // consumed
    const auto val = [&](std::uint8_t k) -> const Tensor<S>& { return tape.node(n.in[k]).value; };

    switch (n.kind) {
      case OpKind::kAdd:
        accum(n.in[0], Tensor<S>(g));
        accum(n.in[1], Tensor<S>(g));
        break;
      case OpKind::kSub:
        accum(n.in[0], Tensor<S>(g));
        accum(n.in[1], scale(g, S(-1)));
        break;
      case OpKind::kMul: {
        const Tensor<S>& a = val(0);
        const Tensor<S>& b = val(1);
        auto side = [&](const Tensor<S>& self, const Tensor<S>& other) {
          if (self.numel() == 1 && g.numel() != 1) {
            double acc = 0.0;
            for (std::size_t k = 0; k < g.numel(); ++k)
              acc += static_cast<double>(g.flat(k)) * static_cast<double>(other.flat(k));
            return Tensor<S>::full(self.shape(), static_cast<S>(acc));
          }
          return mul(g, other);
        };
        accum(n.in[0], side(a, b));
        accum(n.in[1], side(b, a));
        break;
      }
      case OpKind::kAffine:
        accum(n.in[0], scale(g, n.s0));
        break;
      case OpKind::kLeakyRelu:
        accum(n.in[0], leaky_relu_adjoint(g, val(0), n.s0));
        break;
      case OpKind::kConv2d: {
        accum(n.in[0], conv2d_grad_input(g, val(1), val(0).shape(), n.i0, n.i1));
        accum(n.in[1], conv2d_grad_weight(g, val(0), val(1).shape(), n.i0, n.i1));
        if (n.num_inputs == 3) accum(n.in[2], conv2d_grad_bias(g));
        break;
      }
      case OpKind::kDepthwiseConv2d: {
        accum(n.in[0], depthwise_conv2d_grad_input(g, val(1), val(0).shape(), n.i0, n.i1));
        accum(n.in[1], depthwise_conv2d_grad_weight(g, val(0), val(1).shape(), n.i0, n.i1));
        if (n.num_inputs == 3) accum(n.in[2], conv2d_grad_bias(g));
        break;
      }
      case OpKind::kConcatChannels: {
        const std::size_t ca = static_cast<std::size_t>(n.i0);
        accum(n.in[0], slice_channels(g, 0, ca));
        accum(n.in[1], slice_channels(g, ca, g.extent(0)));
        break;
      }
      case OpKind::kSliceChannels:
        accum(n.in[0], embed_channels(g, val(0).extent(0), static_cast<std::size_t>(n.i0)));
        break;
      case OpKind::kPolyphaseComponent:
        accum(n.in[0], polyphase_scatter(g, n.i0, n.i1));
        break;
      case OpKind::kPolyphaseMerge: {
        accum(n.in[0], polyphase_component(g, 0, 0));
        accum(n.in[1], polyphase_component(g, 0, 1));
        accum(n.in[2], polyphase_component(g, 1, 0));
        accum(n.in[3], polyphase_component(g, 1, 1));
        break;
      }
      case OpKind::kReduceSum:
        accum(n.in[0], Tensor<S>::full(val(0).shape(), g.value()));
        break;
      case OpKind::kSumSquares:
        accum(n.in[0], scale(val(0), S(2) * g.value()));
        break;
      case OpKind::kLinear: {
        accum(n.in[0], linear_grad_weight(g, val(1)));
        accum(n.in[1], linear_grad_input(g, val(0)));
        if (n.num_inputs == 3) accum(n.in[2], Tensor<S>(g));
        break;
      }
      case OpKind::kBiasAddChannels:
        accum(n.in[0], Tensor<S>(g));
        accum(n.in[1], channel_sums(g));
        break;
      case OpKind::kUpsampleNearest2x:
        accum(n.in[0], upsample_nearest2x_adjoint(g));
        break;
      case OpKind::kReplicatePad2d:
        accum(n.in[0], replicate_pad2d_adjoint(g, val(0).shape(), n.i0));
        break;
      case OpKind::kQuantizeDeadzone:
        break;  // piecewise constant
      case OpKind::kLeaf:
        break;
    }
  }

  GradientMap<S> out;
  for (std::size_t i = 0; i < tape.size(); ++i) {
    const TapeNode<S>& n = tape.node_at(i);
    if (n.kind != OpKind::kLeaf || !n.requires_grad) continue;
    if (i <= loss.index && has[i] == 1)
      out.insert(static_cast<std::uint32_t>(i), std::move(grad[i]));
    else
      out.insert(static_cast<std::uint32_t>(i), Tensor<S>::zeros(n.value.shape()));
  }
  return out;
}

// ---- program evaluation and finite differences ---------------------------------

template <typename S>
using Program = std::function<ValueId(Tape<S>&, const std::vector<ValueId>&)>;

template <typename S>
struct Evaluation {
  Tape<S> tape;
  std::vector<ValueId> inputs;
  ValueId output;
  const Tensor<S>& value() const { return tape.value(output); }
};

template <typename S>
Evaluation<S> evaluate(const Program<S>& prog, const std::vector<Tensor<S>>& inputs,
                       bool inputs_require_grad = true) {
  Evaluation<S> ev;
  ev.inputs.reserve(inputs.size());
  for (const Tensor<S>& x : inputs) ev.inputs.push_back(ev.tape.leaf(x, inputs_require_grad));
  ev.output = prog(ev.tape, ev.inputs);
  return ev;
}

// Central-difference gradient of a scalar-valued program w.r.t. input `arg`.
template <typename S>
Tensor<S> finite_difference_gradient(const Program<S>& prog, std::vector<Tensor<S>> inputs,
                                     std::size_t arg, double step) {
  if (arg >= inputs.size())
    throw Error("finite_difference_gradient: arg " + std::to_string(arg) + " of " +
                std::to_string(inputs.size()) + " inputs");
  Tensor<S> fd(inputs[arg].shape());
  for (std::size_t i = 0; i < fd.numel(); ++i) {
    const S orig = inputs[arg].flat(i);
    inputs[arg].flat(i) = orig + static_cast<S>(step);
    const double fp = static_cast<double>(evaluate(prog, inputs, false).value().value());
    inputs[arg].flat(i) = orig - static_cast<S>(step);
    const double fm = static_cast<double>(evaluate(prog, inputs, false).value().value());
    inputs[arg].flat(i) = orig;
    fd.flat(i) = static_cast<S>((fp - fm) / (2.0 * step));
  }
  return fd;
}

// max |a-b| / max(max|a|, max|b|, floor)
template <typename S>
double max_rel_error(const Tensor<S>& a, const Tensor<S>& b, double floor = 1e-6) {
  const double denom = std::max({max_abs(a), max_abs(b), floor});
  return max_abs_diff(a, b) / denom;
}

}  // namespace indigo

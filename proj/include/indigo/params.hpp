#pragma once

#include <string>

#include "indigo/autodiff.hpp"
#include "indigo/rng.hpp"

namespace indigo {

// Named, ordered parameter collection. Order is the binding contract: graph
// builders consume parameters through a cursor in exactly the order they were
// created, and checkpoints save/restore by name.
template <typename S>
class ParamSet {
 public:
  struct Item {
    std::string name;
    Tensor<S> value;
  };

  Tensor<S>& add(std::string name, Tensor<S> v) {
    for (const Item& it : items_)
      if (it.name == name) throw Error("ParamSet: duplicate parameter '" + name + "'");
    items_.push_back({std::move(name), std::move(v)});
    return items_.back().value;
  }

  Tensor<S>& at(const std::string& name) {
    for (Item& it : items_)
      if (it.name == name) return it.value;
    throw Error("ParamSet: no parameter '" + name + "'");
  }

  std::size_t size() const { return items_.size(); }
  Item& item(std::size_t i) { return items_.at(i); }
  const Item& item(std::size_t i) const { return items_.at(i); }

  std::size_t total_scalars() const {
    std::size_t n = 0;
    for (const Item& it : items_) n += it.value.numel();
    return n;
  }

  bool all_finite() const {
    for (const Item& it : items_)
      if (!it.value.all_finite()) return false;
    return true;
  }

 private:
  std::vector<Item> items_;
};

struct BoundParams {
  std::vector<ValueId> ids;
};

template <typename S>
BoundParams bind_params(Tape<S>& tp, const ParamSet<S>& p, bool requires_grad) {
  BoundParams b;
  b.ids.reserve(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) b.ids.push_back(tp.leaf(p.item(i).value, requires_grad));
  return b;
}

// Hands out bound parameter ids in creation order; finish() guards against a
// builder/creator mismatch. A sub-range cursor lets composite models address
// one sub-network's slice of the flat parameter list.
class ParamCursor {
 public:
  explicit ParamCursor(const BoundParams& b) : ids_(&b.ids), pos_(0), end_(b.ids.size()) {}
  ParamCursor(const BoundParams& b, std::size_t begin, std::size_t end)
      : ids_(&b.ids), pos_(begin), end_(end) {
    if (begin > end || end > b.ids.size()) throw Error("ParamCursor: bad sub-range");
  }
  ValueId next() {
    if (pos_ >= end_) throw Error("ParamCursor: ran past the parameter list");
    return (*ids_)[pos_++];
  }
  void finish() const {
    if (pos_ != end_)
      throw Error("ParamCursor: " + std::to_string(end_ - pos_) + " parameters unused");
  }

 private:
  const std::vector<ValueId>* ids_;
  std::size_t pos_, end_;
};

template <typename S>
std::vector<Tensor<S>> collect_grads(const GradientMap<S>& g, const BoundParams& b) {
  std::vector<Tensor<S>> out;
  out.reserve(b.ids.size());
  for (ValueId id : b.ids) out.push_back(g.at(id));
  return out;
}

// Kaiming-style init for a conv/linear weight: N(0, 2/fan_in).
template <typename S>
Tensor<S> he_init(Rng& rng, const Shape& shape, std::size_t fan_in) {
  Tensor<S> t = rng.gaussian_tensor<S>(shape);
  const S sd = static_cast<S>(std::sqrt(2.0 / static_cast<double>(fan_in)));
  t.array() *= sd;
  return t;
}

struct OptimizerConfig {
  enum class Kind { kSgd, kAdam };
  Kind kind = Kind::kSgd;
  double lr = 1e-3;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;  // adam only
};

struct TrainConfig {
  int epochs = 30;
  OptimizerConfig opt;
};

template <typename S>
class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig cfg) : cfg_(cfg) {}

  void step(ParamSet<S>& params, const std::vector<Tensor<S>>& grads) {
    if (grads.size() != params.size())
      throw Error("Optimizer: " + std::to_string(grads.size()) + " gradients for " +
                  std::to_string(params.size()) + " parameters");
    if (cfg_.kind == OptimizerConfig::Kind::kSgd) {
      const S lr = static_cast<S>(cfg_.lr);
      for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor<S>& p = params.item(i).value;
        require_same_shape(p, grads[i], "Optimizer::step");
        p.array() -= lr * grads[i].array();
      }
      return;
    }
    if (m_.empty()) {
      for (std::size_t i = 0; i < params.size(); ++i) {
        m_.push_back(Tensor<S>::zeros(params.item(i).value.shape()));
        v_.push_back(Tensor<S>::zeros(params.item(i).value.shape()));
      }
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
    const double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
    const S lr = static_cast<S>(cfg_.lr);
    for (std::size_t i = 0; i < params.size(); ++i) {
      Tensor<S>& p = params.item(i).value;
      require_same_shape(p, grads[i], "Optimizer::step");
      auto m = m_[i].array();
      auto v = v_[i].array();
      m = static_cast<S>(cfg_.beta1) * m + static_cast<S>(1.0 - cfg_.beta1) * grads[i].array();
      v = static_cast<S>(cfg_.beta2) * v +
          static_cast<S>(1.0 - cfg_.beta2) * grads[i].array() * grads[i].array();
      p.array() -= lr * (m / static_cast<S>(bc1)) /
                   ((v / static_cast<S>(bc2)).sqrt() + static_cast<S>(cfg_.eps));
    }
  }

 private:
  OptimizerConfig cfg_;
  int t_ = 0;
  std::vector<Tensor<S>> m_, v_;
};

}  // namespace indigo

#pragma once

// Reverse-mode tape. Every op appends a node holding its forward value and a
// closure that, given the node's output gradient, accumulates into its inputs.
// Parameters are borrowed (not copied); their gradients are added to
// Parameter::grad when backward() finishes.

#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <random>
#include <string>
#include <unordered_set>
#include <vector>

#include "seisinv/core/error.hpp"
#include "seisinv/core/random.hpp"
#include "seisinv/core/tensor.hpp"

namespace seisinv::ad {

template <class T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;  // same shape as value once touched
  bool trainable = true;

  void zero_grad() {
    if (grad.dims() != value.dims()) grad = Tensor<T>(value.dims());
    else grad.fill(T{0});
  }
};

/// Named parameters of one network. Addresses stay stable (deque storage).
template <class T>
class ParamStore {
 public:
  Parameter<T>& add(const std::string& name, Shape dims, bool trainable = true) {
    if (!names_.insert(name).second) throw DataError("duplicate parameter name '" + name + "'");
    params_.push_back(Parameter<T>{name, Tensor<T>(dims), Tensor<T>(dims), trainable});
    return params_.back();
  }

  Parameter<T>* find(const std::string& name) {
    for (auto& p : params_)
      if (p.name == name) return &p;
    return nullptr;
  }

  std::deque<Parameter<T>>& all() { return params_; }
  const std::deque<Parameter<T>>& all() const { return params_; }

  std::vector<Parameter<T>*> trainable() {
    std::vector<Parameter<T>*> out;
    for (auto& p : params_)
      if (p.trainable) out.push_back(&p);
    return out;
  }

  std::size_t trainable_count() const {
    std::size_t n = 0;
    for (const auto& p : params_)
      if (p.trainable) n += p.value.size();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

 private:
  std::deque<Parameter<T>> params_;
  std::unordered_set<std::string> names_;
};

template <class T>
class Tape;

/// Handle to a tape node.
template <class T>
struct Var {
  Tape<T>* tape = nullptr;
  std::size_t id = 0;

  const Tensor<T>& value() const { return tape->value(*this); }
  const Shape& dims() const { return value().dims(); }
  std::size_t size() const { return value().size(); }
};

template <class T>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf without gradient (data, masks, fixed kernels).
  Var<T> constant(Tensor<T> v) { return push(std::move(v), false, nullptr); }

  /// Leaf whose gradient can be read back with grad().
  Var<T> variable(Tensor<T> v) { return push(std::move(v), true, nullptr); }

  /// Borrowed parameter leaf; frozen parameters act as constants.
  Var<T> param(Parameter<T>& p) {
    Node n;
    n.ref = &p.value;
    n.param = &p;
    n.needs_grad = p.trainable;
    nodes_.push_back(std::move(n));
    return Var<T>{this, nodes_.size() - 1};
  }

  /// Appends an op result. `backward` runs once with grad(result) populated.
  Var<T> push(Tensor<T> value, bool needs_grad, std::function<void()> backward) {
    Node n;
    n.owned = std::move(value);
    n.needs_grad = needs_grad;
    if (needs_grad) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var<T>{this, nodes_.size() - 1};
  }

  const Tensor<T>& value(Var<T> v) const { return node(v).value(); }
  bool needs_grad(Var<T> v) const { return node(v).needs_grad; }
  bool any_needs_grad(std::initializer_list<Var<T>> vs) const {
    for (auto v : vs)
      if (needs_grad(v)) return true;
    return false;
  }

  /// Gradient buffer of a node, zero-initialized on first use.
  Tensor<T>& grad(Var<T> v) {
    auto& n = node(v);
    if (n.grad.dims() != n.value().dims()) n.grad = Tensor<T>(n.value().dims());
    return n.grad;
  }

  bool has_grad(Var<T> v) const { return node(v).grad.size() == node(v).value().size() && node(v).value().size() > 0; }

  /// Seeds d(out)/d(out) = 1 for a scalar `out` and sweeps the tape backwards.
  void backward(Var<T> out) {
    if (value(out).size() != 1) throw ShapeError("backward() needs a scalar output, got " + shape_str(value(out).dims()));
    grad(out)[0] = T{1};
    for (std::size_t i = out.id + 1; i-- > 0;) {
      auto& n = nodes_[i];
      if (!n.needs_grad || n.grad.size() == 0) continue;
      if (n.backward) n.backward();
      if (n.param) {
        auto& g = n.param->grad;
        if (g.dims() != n.grad.dims()) g = Tensor<T>(n.grad.dims());
        for (std::size_t k = 0; k < g.size(); ++k) g[k] += n.grad[k];
      }
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> owned;
    const Tensor<T>* ref = nullptr;
    Tensor<T> grad;
    bool needs_grad = false;
    Parameter<T>* param = nullptr;
    std::function<void()> backward;

    const Tensor<T>& value() const { return ref ? *ref : owned; }
  };

  Node& node(Var<T> v) {
    if (v.tape != this || v.id >= nodes_.size()) throw Error("variable does not belong to this tape");
    return nodes_[v.id];
  }
  const Node& node(Var<T> v) const {
    if (v.tape != this || v.id >= nodes_.size()) throw Error("variable does not belong to this tape");
    return nodes_[v.id];
  }

  std::deque<Node> nodes_;
};

// --- initialization ----------------------------------------------------------

/// He-uniform weights for leaky-ReLU(0.2) fan-in, small uniform bias.
template <class T>
void init_uniform(Parameter<T>& p, double bound, Rng& rng) {
  std::uniform_real_distribution<double> ud(-bound, bound);
  for (auto& v : p.value.storage()) v = static_cast<T>(ud(rng));
}

template <class T>
void init_he(Parameter<T>& w, std::size_t fan_in, Rng& rng, double slope = 0.2) {
  init_uniform(w, std::sqrt(6.0 / ((1.0 + slope * slope) * static_cast<double>(fan_in))), rng);
}

}  // namespace seisinv::ad

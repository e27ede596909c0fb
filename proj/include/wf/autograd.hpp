#pragma once

#include <deque>
#include <functional>
#include <optional>
#include <unordered_map>
#include <vector>

#include "wf/ops.hpp"

namespace wf {

class Tape;

/// Handle to a value recorded on a Tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t dim(std::size_t axis) const { return value().dim(axis); }
};

/// Gradients produced by Tape::backward. Leaves that the loss does not reach
/// report zeros.
class Gradients {
 public:
  const Tensor& operator[](Var v) const;
  /// Gradient of a parameter bound through Tape::param.
  const Tensor& param(const Tensor& p) const;
  bool has_param(const Tensor& p) const { return param_ids_.count(&p) != 0; }

 private:
  friend class Tape;
  std::vector<std::optional<Tensor>> grads_;
  std::unordered_map<const Tensor*, std::size_t> param_ids_;
};

/// Reverse-mode tape. Single writer: one thread records and runs backward.
/// A tape built with `record = false` keeps forward values only.
class Tape {
 public:
  class Sink {
   public:
    bool wants(Var v) const;
    void add(Var v, Tensor g);

   private:
    friend class Tape;
    explicit Sink(Tape& tape) : tape_(tape) {}
    Tape& tape_;
  };
  using Backward =
      std::function<void(const Tensor& grad_out, const Tensor& out_value, Sink& sink)>;

  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad = true);
  Var constant(Tensor value) { return leaf(std::move(value), false); }
  /// Binds a parameter tensor as a leaf, once per address.
  Var param(const Tensor& p);

  Var record(Tensor value, std::initializer_list<Var> inputs, Backward backward);

  const Tensor& value(Var v) const { return nodes_[v.id].value; }
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }
  bool recording() const { return record_; }
  std::size_t size() const { return nodes_.size(); }

  /// Runs reverse accumulation from a scalar loss. When `visit_order` is given,
  /// the ids of ops whose backward ran are appended in execution order.
  Gradients backward(Var loss, std::vector<std::size_t>* visit_order = nullptr);

 private:
  struct Node {
    Tensor value;
    bool requires_grad = false;
    bool is_leaf = false;
    Backward backward;
  };
  std::deque<Node> nodes_;
  std::vector<std::optional<Tensor>>* grads_ = nullptr;
  std::unordered_map<const Tensor*, std::size_t> params_;
  bool record_;
};

/// Central differences (f(x + h e) - f(x - h e)) / 2h per coordinate.
Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x,
                        double h = 1e-4);

// Differentiable ops.
namespace ag {

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
/// a: [m, n] + b: [n] broadcast over rows.
Var add_row_bias(Var a, Var b);
/// a: [m, n] + b: [m] broadcast over columns.
Var add_col_bias(Var a, Var b);
/// a: [m, n] with row i multiplied by v[i].
Var mul_rows(Var a, Var v);
Var matmul(Var a, Var b);
Var transpose(Var a);
Var reshape(Var a, Shape shape);
Var sum(Var a);
Var mean(Var a);
Var softmax(Var x, std::size_t axis);
Var activation(Activation kind, Var x);
Var layer_norm(Var x, Var gamma, Var beta);
Var global_avg_pool(Var x);
Var adaptive_avg_pool(Var x, std::size_t out_h, std::size_t out_w);
Var depthwise_conv2d(Var x, Var kernel);
Var conv2d(Var x, Var w, Var bias);
/// Divides each row of a: [m, n] by (its L2 norm + eps).
Var normalize_rows(Var a, double eps);
Var tokens_to_map(Var x, Grid grid);
Var map_to_tokens(Var x);
Var patchify(Var image, std::size_t patch);
/// Softmax cross-entropy of a logit vector against a class index.
Var cross_entropy(Var logits, std::size_t label);
/// Dense layer on token rows: x: [N, in], w: [out, in], bias: [out].
Var linear(Var x, Var w, Var bias);

}  // namespace ag

inline Var operator+(Var a, Var b) { return ag::add(a, b); }
inline Var operator-(Var a, Var b) { return ag::sub(a, b); }
inline Var operator*(Var a, Var b) { return ag::mul(a, b); }

}  // namespace wf

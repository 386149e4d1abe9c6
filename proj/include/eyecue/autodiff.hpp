#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "eyecue/tensor.hpp"

namespace eyecue {

/// Handle to a node on a Tape.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

/// One attention neighbourhood: each query row attends over key_rows only.
struct AttentionGroup {
  std::vector<int> query_rows;
  std::vector<int> key_rows;
};

/// Grouped attention pattern. A query row listed in several groups receives
/// the mean of its per-group outputs; rows in no group receive zero.
struct AttentionLayout {
  std::vector<AttentionGroup> groups;
};

/// Reverse-mode differentiation over row-major matrices. Every op records
/// its inputs by id; backward() replays the tape in reverse. Parameters are
/// referenced, not copied, and their gradients are added into caller-owned
/// sinks.
template <typename T>
class Tape {
 public:
  explicit Tape(bool record_gradients = true) : record_(record_gradients) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix<T> value);
  /// `value` must outlive the tape. A null sink means "no gradient wanted".
  Var parameter(const Matrix<T>& value, Matrix<T>* grad_sink);

  const Matrix<T>& value(Var v) const;
  /// Gradient of the last backward() output w.r.t. v (zero if unreached).
  Matrix<T> gradient(Var v) const;
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }

  /// Seeds d(out)/d(out) = 1 for a 1x1 output and propagates.
  void backward(Var out);

  std::size_t node_count() const { return nodes_.size(); }

  Var matmul(Var a, Var b);
  Var add(Var a, Var b);
  /// a + row, broadcasting a 1 x cols row over every row of a.
  Var add_row(Var a, Var row);
  Var linear(Var x, Var weight, Var bias) { return add_row(matmul(x, weight), bias); }
  Var scale(Var a, T factor);
  Var gelu(Var a);
  Var layer_norm(Var x, Var gain, Var bias, T eps = T(1e-5));
  Var concat_rows(std::span<const Var> parts);
  Var concat_cols(std::span<const Var> parts);
  Var gather_rows(Var x, std::vector<int> rows);
  Var mean_rows(Var x);
  Var dropout(Var x, T rate, std::uint64_t seed);
  /// Scaled dot-product attention on already-projected q, k, v with `heads`
  /// column blocks. A null layout means every query attends over every key.
  Var attention(Var q, Var k, Var v, int heads, std::shared_ptr<const AttentionLayout> layout = nullptr);
  /// weight * (-log softmax(logits)[label]) for a 1 x C row of logits.
  Var softmax_cross_entropy(Var logits, int label, T weight = T(1));
  /// sum(x .* weights), a 1x1 result. Handy for probing gradients.
  Var weighted_sum(Var x, const Matrix<T>& weights);

 private:
  struct Node {
    Matrix<T> own;
    const Matrix<T>* external = nullptr;
    Matrix<T> grad;
    bool has_grad = false;
    bool requires_grad = false;
    std::function<void(Tape&, int)> backward;

    const Matrix<T>& value() const { return external != nullptr ? *external : own; }
  };

  int push(Matrix<T> value, bool requires_grad);
  bool any_requires_grad(std::initializer_list<Var> inputs) const;
  Matrix<T>& grad_slot(int id);
  template <typename Expr>
  void accumulate(int id, const Expr& g) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return;
    if (!n.has_grad) {
      n.grad = g;
      n.has_grad = true;
    } else {
      n.grad += g;
    }
  }

  bool record_;
  std::vector<Node> nodes_;
};

/// Binds named parameters from a store onto a tape, once per name.
template <typename T>
class ParamBinder {
 public:
  ParamBinder(Tape<T>& tape, const ParamStore<T>& params, ParamStore<T>* grads = nullptr)
      : tape_(tape), params_(params), grads_(grads) {}

  Var operator()(const std::string& name);
  Tape<T>& tape() { return tape_; }
  const ParamStore<T>& params() const { return params_; }

 private:
  Tape<T>& tape_;
  const ParamStore<T>& params_;
  ParamStore<T>* grads_;
  std::unordered_map<std::string, Var> bound_;
};

/// Row-wise numerically stable softmax; throws NumericError on non-finite input.
template <typename T>
Matrix<T> softmax_rows(const Matrix<T>& scores);

template <typename T>
T gelu_value(T x);

}  // namespace eyecue

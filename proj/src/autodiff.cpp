#include "eyecue/autodiff.hpp"

#include <cmath>
#include <numbers>

#include "eyecue/rng.hpp"

namespace eyecue {

namespace {

template <typename T>
Matrix<T> gather(const Matrix<T>& m, const std::vector<int>& rows) {
  Matrix<T> out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(rows[i]);
  return out;
}

template <typename T>
void softmax_rows_in_place(Matrix<T>& s) {
  for (Eigen::Index r = 0; r < s.rows(); ++r) {
    auto row = s.row(r);
    const T mx = row.maxCoeff();
    row = (row.array() - mx).exp();
    row /= row.sum();
  }
}

std::string shape_of(Eigen::Index r, Eigen::Index c) {
  return std::to_string(r) + "x" + std::to_string(c);
}

}  // namespace

template <typename T>
Matrix<T> softmax_rows(const Matrix<T>& scores) {
  if (!scores.allFinite()) throw NumericError("softmax_rows: non-finite score");
  Matrix<T> out = scores;
  softmax_rows_in_place(out);
  return out;
}

template <typename T>
T gelu_value(T x) {
  return T(0.5) * x * (T(1) + std::erf(x / std::numbers::sqrt2_v<T>));
}

template <typename T>
int Tape<T>::push(Matrix<T> value, bool requires_grad) {
  Node n;
  n.own = std::move(value);
  n.requires_grad = record_ && requires_grad;
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

template <typename T>
bool Tape<T>::any_requires_grad(std::initializer_list<Var> inputs) const {
  if (!record_) return false;
  for (Var v : inputs) {
    if (nodes_[v.id].requires_grad) return true;
  }
  return false;
}

template <typename T>
Var Tape<T>::constant(Matrix<T> value) {
  return Var{push(std::move(value), false)};
}

template <typename T>
Var Tape<T>::parameter(const Matrix<T>& value, Matrix<T>* grad_sink) {
  Node n;
  n.external = &value;
  n.requires_grad = record_ && grad_sink != nullptr;
  if (n.requires_grad) {
    n.backward = [grad_sink](Tape& t, int self) { *grad_sink += t.nodes_[self].grad; };
  }
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

template <typename T>
const Matrix<T>& Tape<T>::value(Var v) const {
  return nodes_.at(v.id).value();
}

template <typename T>
Matrix<T> Tape<T>::gradient(Var v) const {
  const Node& n = nodes_.at(v.id);
  if (n.has_grad) return n.grad;
  return Matrix<T>::Zero(n.value().rows(), n.value().cols());
}

template <typename T>
void Tape<T>::backward(Var out) {
  const Node& o = nodes_.at(out.id);
  if (o.value().size() != 1) throw ValidationError("backward: output must be 1x1");
  for (auto& n : nodes_) {
    n.has_grad = false;
    n.grad.resize(0, 0);
  }
  accumulate(out.id, Matrix<T>::Ones(1, 1));
  for (int i = out.id; i >= 0; --i) {
    Node& n = nodes_[i];
    if (n.has_grad && n.backward) n.backward(*this, i);
  }
}

template <typename T>
Var Tape<T>::matmul(Var a, Var b) {
  const Matrix<T>& av = value(a);
  const Matrix<T>& bv = value(b);
  if (av.cols() != bv.rows()) {
    throw ValidationError("matmul: " + shape_of(av.rows(), av.cols()) + " * " + shape_of(bv.rows(), bv.cols()));
  }
  Matrix<T> c(av.rows(), bv.cols());
  c.noalias() = av * bv;
  const int id = push(std::move(c), any_requires_grad({a, b}));
  if (nodes_[id].requires_grad) {
    nodes_[id].backward = [a, b](Tape& t, int self) {
      const Matrix<T>& g = t.nodes_[self].grad;
      if (t.nodes_[a.id].requires_grad) t.accumulate(a.id, g * t.value(b).transpose());
      if (t.nodes_[b.id].requires_grad) t.accumulate(b.id, t.value(a).transpose() * g);
    };
  }
  return Var{id};
}

template <typename T>
Var Tape<T>::add(Var a, Var b) {
  const Matrix<T>& av = value(a);
  const Matrix<T>& bv = value(b);
  if (av.rows() != bv.rows() || av.cols() != bv.cols()) {
    throw ValidationError("add: " + shape_of(av.rows(), av.cols()) + " + " + shape_of(bv.rows(), bv.cols()));
  }
  const int id = push(av + bv, any_requires_grad({a, b}));
  if (nodes_[id].requires_grad) {
    nodes_[id].backward = [a, b](Tape& t, int self) {
      const Matrix<T>& g = t.nodes_[self].grad;
      t.accumulate(a.id, g);
      t.accumulate(b.id, g);
    };
  }
  return Var{id};
}

template <typename T>
Var Tape<T>::add_row(Var a, Var row) {
  const Matrix<T>& av = value(a);
  const Matrix<T>& rv = value(row);
  if (rv.rows() != 1 || rv.cols() != av.cols()) {
    throw ValidationError("add_row: " + shape_of(av.rows(), av.cols()) + " + row " +
                          shape_of(rv.rows(), rv.cols()));
  }
  Matrix<T> c = av;
  c.rowwise() += rv.row(0);
  const int id = push(std::move(c), any_requires_grad({a, row}));
  if (nodes_[id].requires_grad) {
    nodes_[id].backward = [a, row](Tape& t, int self) {
      const Matrix<T>& g = t.nodes_[self].grad;
      t.accumulate(a.id, g);
      if (t.nodes_[row.id].requires_grad) t.accumulate(row.id, g.colwise().sum());
    };
  }
  return Var{id};
}

template <typename T>
Var Tape<T>::scale(Var a, T factor) {
  const int id = push(value(a) * factor, any_requires_grad({a}));
  if (nodes_[id].requires_grad) {
    nodes_[id].backward = [a, factor](Tape& t, int self) { t.accumulate(a.id, t.nodes_[self].grad * factor); };
  }
  return Var{id};
}

template <typename T>
Var Tape<T>::gelu(Var a) {
  const Matrix<T>& av = value(a);
  Matrix<T> c = av.unaryExpr([](T x) { return gelu_value(x); });
  const int id = push(std::move(c), any_requires_grad({a}));
  if (nodes_[id].requires_grad) {
    nodes_[id].backward = [a](Tape& t, int self) {
      const T inv_sqrt_2pi = T(1) / std::sqrt(T(2) * std::numbers::pi_v<T>);
      Matrix<T> d = t.value(a).unaryExpr([inv_sqrt_2pi](T x) {
        return T(0.5) * (T(1) + std::erf(x / std::numbers::sqrt2_v<T>)) +
               x * inv_sqrt_2pi * std::exp(T(-0.5) * x * x);
      });
      t.accumulate(a.id, t.nodes_[self].grad.cwiseProduct(d));
    };
  }
  return Var{id};
}

template <typename T>
Var Tape<T>::layer_norm(Var x, Var gain, Var bias, T eps) {
  const Matrix<T>& xv = value(x);
  const Matrix<T>& gv = value(gain);
  const Matrix<T>& bv = value(bias);
  const Eigen::Index n = xv.cols();
  if (gv.rows() != 1 || gv.cols() != n || bv.rows() != 1 || bv.cols() != n) {
    throw ValidationError("layer_norm: gain/bias must be 1x" + std::to_string(n));
  }
  Matrix<T> xhat(xv.rows(), n);
  Eigen::Matrix<T, Eigen::Dynamic, 1> rstd(xv.rows());
  for (Eigen::Index r = 0; r < xv.rows(); ++r) {
    const T mean = xv.row(r).mean();
    const T var = (xv.row(r).array() - mean).square().mean();
    rstd(r) = T(1) / std::sqrt(var + eps);
    xhat.row(r) = (xv.row(r).array() - mean) * rstd(r);
  }
  Matrix<T> y = xhat.array().rowwise() * gv.row(0).array();
  y.rowwise() += bv.row(0);
  const int id = push(std::move(y), any_requires_grad({x, gain, bias}));
  if (nodes_[id].requires_grad) {
    nodes_[id].backward = [x, gain, bias, xhat = std::move(xhat), rstd = std::move(rstd)](Tape& t, int self) {
      const Matrix<T>& g = t.nodes_[self].grad;
      if (t.nodes_[gain.id].requires_grad) t.accumulate(gain.id, g.cwiseProduct(xhat).colwise().sum());
      if (t.nodes_[bias.id].requires_grad) t.accumulate(bias.id, g.colwise().sum());
      if (t.nodes_[x.id].requires_grad) {
        const Matrix<T> dxhat = g.array().rowwise() * t.value(gain).row(0).array();
        Matrix<T> dx(g.rows(), g.cols());
        for (Eigen::Index r = 0; r < g.rows(); ++r) {
          const T m1 = dxhat.row(r).mean();
          const T m2 = dxhat.row(r).cwiseProduct(xhat.row(r)).mean();
          dx.row(r) = rstd(r) * (dxhat.row(r).array() - m1 - xhat.row(r).array() * m2);
        }
        t.accumulate(x.id, dx);
      }
    };
  }
  return Var{id};
}

template <typename T>
Var Tape<T>::concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ValidationError("concat_rows: no inputs");
  Eigen::Index rows = 0;
  const Eigen::Index cols = value(parts[0]).cols();
  bool grad = false;
  for (Var p : parts) {
    if (value(p).cols() != cols) throw ValidationError("concat_rows: column mismatch");
    rows += value(p).rows();
    grad = grad || any_requires_grad({p});
  }
  Matrix<T> c(rows, cols);
  Eigen::Index at = 0;
  for (Var p : parts) {
    c.middleRows(at, value(p).rows()) = value(p);
    at += value(p).rows();
  }
  const int id = push(std::move(c), grad);
  if (nodes_[id].requires_grad) {
    nodes_[id].backward = [ps = std::vector<Var>(parts.begin(), parts.end())](Tape& t, int self) {
      const Matrix<T>& g = t.nodes_[self].grad;
      Eigen::Index off = 0;
      for (Var p : ps) {
        const Eigen::Index r = t.value(p).rows();
        if (t.nodes_[p.id].requires_grad) t.accumulate(p.id, g.middleRows(off, r));
        off += r;
      }
    };
  }
  return Var{id};
}

template <typename T>
Var Tape<T>::concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ValidationError("concat_cols: no inputs");
  Eigen::Index cols = 0;
  const Eigen::Index rows = value(parts[0]).rows();
  bool grad = false;
  for (Var p : parts) {
    if (value(p).rows() != rows) throw ValidationError("concat_cols: row mismatch");
    cols += value(p).cols();
    grad = grad || any_requires_grad({p});
  }
  Matrix<T> c(rows, cols);
  Eigen::Index at = 0;
  for (Var p : parts) {
    c.middleCols(at, value(p).cols()) = value(p);
    at += value(p).cols();
  }
  const int id = push(std::move(c), grad);
  if (nodes_[id].requires_grad) {
    nodes_[id].backward = [ps = std::vector<Var>(parts.begin(), parts.end())](Tape& t, int self) {
      const Matrix<T>& g = t.nodes_[self].grad;
      Eigen::Index off = 0;
      for (Var p : ps) {
        const Eigen::Index c = t.value(p).cols();
        if (t.nodes_[p.id].requires_grad) t.accumulate(p.id, g.middleCols(off, c));
        off += c;
      }
    };
  }
  return Var{id};
}

template <typename T>
Var Tape<T>::gather_rows(Var x, std::vector<int> rows) {
  const Matrix<T>& xv = value(x);
  for (int r : rows) {
    if (r < 0 || r >= xv.rows()) throw ValidationError("gather_rows: row " + std::to_string(r) + " out of range");
  }
  const int id = push(gather(xv, rows), any_requires_grad({x}));
  if (nodes_[id].requires_grad) {
    nodes_[id].backward = [x, rows = std::move(rows)](Tape& t, int self) {
      const Matrix<T>& g = t.nodes_[self].grad;
      Matrix<T> dx = Matrix<T>::Zero(t.value(x).rows(), t.value(x).cols());
      for (std::size_t i = 0; i < rows.size(); ++i) dx.row(rows[i]) += g.row(static_cast<Eigen::Index>(i));
      t.accumulate(x.id, dx);
    };
  }
  return Var{id};
}

template <typename T>
Var Tape<T>::mean_rows(Var x) {
  const Matrix<T>& xv = value(x);
  if (xv.rows() == 0) throw ValidationError("mean_rows: empty input");
  const int id = push(xv.colwise().mean(), any_requires_grad({x}));
  if (nodes_[id].requires_grad) {
    nodes_[id].backward = [x](Tape& t, int self) {
      const Eigen::Index n = t.value(x).rows();
      Matrix<T> dx = t.nodes_[self].grad.replicate(n, 1) / static_cast<T>(n);
      t.accumulate(x.id, dx);
    };
  }
  return Var{id};
}

template <typename T>
Var Tape<T>::dropout(Var x, T rate, std::uint64_t seed) {
  if (!(rate > T(0))) return x;
  if (rate >= T(1)) throw ValidationError("dropout rate must be below 1");
  const Matrix<T>& xv = value(x);
  Rng rng(seed);
  Matrix<T> mask(xv.rows(), xv.cols());
  const T keep = T(1) / (T(1) - rate);
  for (Eigen::Index i = 0; i < mask.size(); ++i) {
    mask.data()[i] = uniform01(rng) < static_cast<double>(rate) ? T(0) : keep;
  }
  const int id = push(xv.cwiseProduct(mask), any_requires_grad({x}));
  if (nodes_[id].requires_grad) {
    nodes_[id].backward = [x, mask = std::move(mask)](Tape& t, int self) {
      t.accumulate(x.id, t.nodes_[self].grad.cwiseProduct(mask));
    };
  }
  return Var{id};
}

template <typename T>
Var Tape<T>::attention(Var q, Var k, Var v, int heads, std::shared_ptr<const AttentionLayout> layout) {
  const Matrix<T>& qv = value(q);
  const Matrix<T>& kv = value(k);
  const Matrix<T>& vv = value(v);
  const Eigen::Index d = qv.cols();
  if (heads <= 0 || d % heads != 0) {
    throw ValidationError("attention: " + std::to_string(heads) + " heads do not divide dimension " +
                          std::to_string(d));
  }
  if (kv.cols() != d || vv.cols() != d || kv.rows() != vv.rows()) {
    throw ValidationError("attention: query " + shape_of(qv.rows(), d) + ", key " + shape_of(kv.rows(), kv.cols()) +
                          ", value " + shape_of(vv.rows(), vv.cols()));
  }
  if (kv.rows() == 0) throw ValidationError("attention: empty key/value set");

  const Eigen::Index dh = d / heads;
  const T sc = T(1) / std::sqrt(static_cast<T>(dh));

  // Dense attention is a single group over all rows.
  std::vector<AttentionGroup> dense;
  const std::vector<AttentionGroup>* groups = nullptr;
  if (layout) {
    groups = &layout->groups;
  } else {
    AttentionGroup all;
    for (int i = 0; i < qv.rows(); ++i) all.query_rows.push_back(i);
    for (int i = 0; i < kv.rows(); ++i) all.key_rows.push_back(i);
    dense.push_back(std::move(all));
    groups = &dense;
  }

  std::vector<T> weight(static_cast<std::size_t>(qv.rows()), T(0));
  for (const auto& g : *groups) {
    if (g.key_rows.empty()) throw ValidationError("attention: group with no keys");
    for (int r : g.query_rows) weight[r] += T(1);
  }
  for (auto& w : weight) w = w > T(0) ? T(1) / w : T(0);

  Matrix<T> out = Matrix<T>::Zero(qv.rows(), d);
  std::vector<Matrix<T>> probs;
  probs.reserve(groups->size() * heads);
  for (const auto& g : *groups) {
    const Matrix<T> qg = gather(qv, g.query_rows);
    const Matrix<T> kg = gather(kv, g.key_rows);
    const Matrix<T> vg = gather(vv, g.key_rows);
    for (int h = 0; h < heads; ++h) {
      Matrix<T> s(qg.rows(), kg.rows());
      s.noalias() = qg.middleCols(h * dh, dh) * kg.middleCols(h * dh, dh).transpose();
      s *= sc;
      softmax_rows_in_place(s);
      Matrix<T> o(qg.rows(), dh);
      o.noalias() = s * vg.middleCols(h * dh, dh);
      for (std::size_t i = 0; i < g.query_rows.size(); ++i) {
        const int r = g.query_rows[i];
        out.row(r).segment(h * dh, dh) += weight[r] * o.row(static_cast<Eigen::Index>(i));
      }
      probs.push_back(std::move(s));
    }
  }

  const int id = push(std::move(out), any_requires_grad({q, k, v}));
  if (nodes_[id].requires_grad) {
    nodes_[id].backward = [q, k, v, heads, dh, sc, layout, dense = std::move(dense), weight = std::move(weight),
                           probs = std::move(probs)](Tape& t, int self) {
      const std::vector<AttentionGroup>& gs = layout ? layout->groups : dense;
      const Matrix<T>& dout = t.nodes_[self].grad;
      const Matrix<T>& qv = t.value(q);
      const Matrix<T>& kv = t.value(k);
      const Matrix<T>& vv = t.value(v);
      Matrix<T> dq = Matrix<T>::Zero(qv.rows(), qv.cols());
      Matrix<T> dk = Matrix<T>::Zero(kv.rows(), kv.cols());
      Matrix<T> dv = Matrix<T>::Zero(vv.rows(), vv.cols());
      std::size_t pi = 0;
      for (const auto& g : gs) {
        const Matrix<T> qg = gather(qv, g.query_rows);
        const Matrix<T> kg = gather(kv, g.key_rows);
        const Matrix<T> vg = gather(vv, g.key_rows);
        Matrix<T> dog(static_cast<Eigen::Index>(g.query_rows.size()), qv.cols());
        for (std::size_t i = 0; i < g.query_rows.size(); ++i) {
          dog.row(static_cast<Eigen::Index>(i)) = dout.row(g.query_rows[i]) * weight[g.query_rows[i]];
        }
        Matrix<T> dqg = Matrix<T>::Zero(qg.rows(), qg.cols());
        Matrix<T> dkg = Matrix<T>::Zero(kg.rows(), kg.cols());
        Matrix<T> dvg = Matrix<T>::Zero(vg.rows(), vg.cols());
        for (int h = 0; h < heads; ++h) {
          const Matrix<T>& p = probs[pi++];
          const auto doh = dog.middleCols(h * dh, dh);
          dvg.middleCols(h * dh, dh).noalias() += p.transpose() * doh;
          Matrix<T> dp(p.rows(), p.cols());
          dp.noalias() = doh * vg.middleCols(h * dh, dh).transpose();
          const Eigen::Matrix<T, Eigen::Dynamic, 1> inner = dp.cwiseProduct(p).rowwise().sum();
          Matrix<T> ds = p.cwiseProduct((dp.colwise() - inner));
          ds *= sc;
          dqg.middleCols(h * dh, dh).noalias() += ds * kg.middleCols(h * dh, dh);
          dkg.middleCols(h * dh, dh).noalias() += ds.transpose() * qg.middleCols(h * dh, dh);
        }
        for (std::size_t i = 0; i < g.query_rows.size(); ++i) dq.row(g.query_rows[i]) += dqg.row(i);
        for (std::size_t i = 0; i < g.key_rows.size(); ++i) {
          dk.row(g.key_rows[i]) += dkg.row(i);
          dv.row(g.key_rows[i]) += dvg.row(i);
        }
      }
      t.accumulate(q.id, dq);
      t.accumulate(k.id, dk);
      t.accumulate(v.id, dv);
    };
  }
  return Var{id};
}

template <typename T>
Var Tape<T>::softmax_cross_entropy(Var logits, int label, T weight) {
  const Matrix<T>& z = value(logits);
  if (!z.allFinite()) throw NumericError("softmax_cross_entropy: non-finite logits");
  if (z.rows() != 1 || label < 0 || label >= z.cols()) {
    throw ValidationError("softmax_cross_entropy: expects 1xC logits and a label in range");
  }
  const Matrix<T> p = softmax_rows(z);
  Matrix<T> loss(1, 1);
  // log-sum-exp form keeps precision when p(label) is tiny
  const T mx = z.maxCoeff();
  loss(0, 0) = weight * (mx + std::log((z.array() - mx).exp().sum()) - z(0, label));
  const int id = push(std::move(loss), any_requires_grad({logits}));
  if (nodes_[id].requires_grad) {
    nodes_[id].backward = [logits, label, weight, p](Tape& t, int self) {
      Matrix<T> d = p;
      d(0, label) -= T(1);
      t.accumulate(logits.id, d * (weight * t.nodes_[self].grad(0, 0)));
    };
  }
  return Var{id};
}

template <typename T>
Var Tape<T>::weighted_sum(Var x, const Matrix<T>& weights) {
  const Matrix<T>& xv = value(x);
  if (weights.rows() != xv.rows() || weights.cols() != xv.cols()) {
    throw ValidationError("weighted_sum: shape mismatch");
  }
  Matrix<T> s(1, 1);
  s(0, 0) = xv.cwiseProduct(weights).sum();
  const int id = push(std::move(s), any_requires_grad({x}));
  if (nodes_[id].requires_grad) {
    nodes_[id].backward = [x, weights](Tape& t, int self) {
      t.accumulate(x.id, weights * t.nodes_[self].grad(0, 0));
    };
  }
  return Var{id};
}

template <typename T>
Var ParamBinder<T>::operator()(const std::string& name) {
  auto it = bound_.find(name);
  if (it != bound_.end()) return it->second;
  const std::size_t i = params_.index_of(name);
  Matrix<T>* sink = grads_ != nullptr ? &grads_->at(i).value : nullptr;
  const Var v = tape_.parameter(params_.at(i).value, sink);
  bound_.emplace(name, v);
  return v;
}

template class Tape<float>;
template class Tape<double>;
template class ParamBinder<float>;
template class ParamBinder<double>;
template Matrix<float> softmax_rows(const Matrix<float>&);
template Matrix<double> softmax_rows(const Matrix<double>&);
template float gelu_value(float);
template double gelu_value(double);

}  // namespace eyecue

#include "eyecue/attention.hpp"

#include <cmath>

namespace eyecue {

namespace {

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

template <typename T>
void declare_norm(ParamStore<T>& store, const std::string& name, int dim) {
  store.add(name + ".gain", 1, dim);
  store.add(name + ".bias", 1, dim);
}

template <typename T>
void declare_linear(ParamStore<T>& store, const std::string& name, int in, int out) {
  store.add(name + ".weight", in, out);
  store.add(name + ".bias", 1, out);
}

template <typename T>
void declare_attention(ParamStore<T>& store, const std::string& name, int dim) {
  declare_linear(store, name + ".query", dim, dim);
  declare_linear(store, name + ".key", dim, dim);
  declare_linear(store, name + ".value", dim, dim);
  declare_linear(store, name + ".out", dim, dim);
}

template <typename T>
Var norm(ParamBinder<T>& bind, const std::string& name, Var x) {
  return bind.tape().layer_norm(x, bind(name + ".gain"), bind(name + ".bias"));
}

template <typename T>
Var residual(ParamBinder<T>& bind, Var x, Var branch, const Regularizer& reg) {
  if (reg.active()) branch = bind.tape().dropout(branch, static_cast<T>(reg.dropout), (*reg.rng)());
  return bind.tape().add(x, branch);
}

}  // namespace

template <typename T>
void TokenSet<T>::validate() const {
  if (roles.size() != static_cast<std::size_t>(tokens.rows())) {
    throw ValidationError("token set: " + std::to_string(roles.size()) + " role tags for " +
                          std::to_string(tokens.rows()) + " tokens");
  }
  if (!tokens.allFinite()) throw NumericError("token set contains non-finite entries");
}

bool is_residual_final(const std::string& name) {
  return ends_with(name, "attn.out.weight") || ends_with(name, "ffn.fc2.weight") ||
         ends_with(name, "head.fc2.weight");
}

template <typename T>
void declare_block(ParamStore<T>& store, const std::string& prefix, int dim, BlockKind kind) {
  switch (kind) {
    case BlockKind::kSelfAttention:
      declare_norm(store, prefix + "norm_q", dim);
      declare_attention(store, prefix + "attn", dim);
      break;
    case BlockKind::kCrossAttention:
      declare_norm(store, prefix + "norm_q", dim);
      declare_norm(store, prefix + "norm_kv", dim);
      declare_attention(store, prefix + "attn", dim);
      break;
    case BlockKind::kDividedSpaceTime:
      declare_norm(store, prefix + "norm_time", dim);
      declare_attention(store, prefix + "time_attn", dim);
      declare_norm(store, prefix + "norm_space", dim);
      declare_attention(store, prefix + "space_attn", dim);
      break;
  }
  declare_norm(store, prefix + "norm_ffn", dim);
  declare_linear(store, prefix + "ffn.fc1", dim, 4 * dim);
  declare_linear(store, prefix + "ffn.fc2", 4 * dim, dim);
}

template <typename T>
void init_params(ParamStore<T>& store, std::uint64_t seed, InitScheme scheme) {
  Rng rng(seed);
  auto fill_normal = [&rng](Matrix<T>& m, double std, double mean = 0.0) {
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(mean + std * standard_normal(rng));
  };
  for (auto& e : store) {
    const std::string& n = e.name;
    Matrix<T>& m = e.value;
    if (scheme == InitScheme::kStandard) {
      if (ends_with(n, ".gain")) {
        m.setOnes();
      } else if (ends_with(n, ".bias") || ends_with(n, "cls") || is_residual_final(n)) {
        m.setZero();
      } else {
        fill_normal(m, 0.02);
      }
    } else {
      if (ends_with(n, ".gain")) {
        fill_normal(m, 0.2, 1.0);
      } else if (ends_with(n, ".bias")) {
        fill_normal(m, 0.1);
      } else if (ends_with(n, ".weight")) {
        fill_normal(m, 1.0 / std::sqrt(static_cast<double>(m.rows())));
      } else {
        fill_normal(m, 0.5);
      }
    }
  }
}

template <typename T>
AttentionParams<T> AttentionParams<T>::create(int dim, int heads, BlockKind kind) {
  AttentionParams p;
  p.heads = heads;
  p.kind = kind;
  declare_block(p.values, "", dim, kind);
  p.validate();
  return p;
}

template <typename T>
int AttentionParams<T>::dim() const {
  return static_cast<int>(values.get("norm_ffn.gain").cols());
}

template <typename T>
void AttentionParams<T>::validate() const {
  const int d = dim();
  if (heads <= 0 || d % heads != 0) {
    throw ValidationError("attention params: " + std::to_string(heads) + " heads do not divide dimension " +
                          std::to_string(d));
  }
  if (!values.all_finite()) throw NumericError("attention params contain non-finite values");
}

namespace blocks {

template <typename T>
Var attend(ParamBinder<T>& bind, const std::string& prefix, Var queries, Var keys_values, int heads,
           std::shared_ptr<const AttentionLayout> layout) {
  Tape<T>& t = bind.tape();
  const Var q = t.linear(queries, bind(prefix + ".query.weight"), bind(prefix + ".query.bias"));
  const Var k = t.linear(keys_values, bind(prefix + ".key.weight"), bind(prefix + ".key.bias"));
  const Var v = t.linear(keys_values, bind(prefix + ".value.weight"), bind(prefix + ".value.bias"));
  const Var a = t.attention(q, k, v, heads, std::move(layout));
  return t.linear(a, bind(prefix + ".out.weight"), bind(prefix + ".out.bias"));
}

template <typename T>
Var feed_forward(ParamBinder<T>& bind, const std::string& prefix, Var x) {
  Tape<T>& t = bind.tape();
  const Var h = t.gelu(t.linear(x, bind(prefix + ".fc1.weight"), bind(prefix + ".fc1.bias")));
  return t.linear(h, bind(prefix + ".fc2.weight"), bind(prefix + ".fc2.bias"));
}

template <typename T>
Var cross_attention(ParamBinder<T>& bind, const std::string& prefix, Var queries, Var keys_values, int heads,
                    const Regularizer& reg) {
  const Var qn = norm(bind, prefix + "norm_q", queries);
  const Var kvn = norm(bind, prefix + "norm_kv", keys_values);
  Var x = residual(bind, queries, attend(bind, prefix + "attn", qn, kvn, heads), reg);
  return residual(bind, x, feed_forward(bind, prefix + "ffn", norm(bind, prefix + "norm_ffn", x)), reg);
}

template <typename T>
Var encoder(ParamBinder<T>& bind, const std::string& prefix, Var tokens, int heads, const Regularizer& reg,
            std::shared_ptr<const AttentionLayout> layout) {
  const Var n = norm(bind, prefix + "norm_q", tokens);
  Var x = residual(bind, tokens, attend(bind, prefix + "attn", n, n, heads, std::move(layout)), reg);
  return residual(bind, x, feed_forward(bind, prefix + "ffn", norm(bind, prefix + "norm_ffn", x)), reg);
}

template <typename T>
Var divided_space_time(ParamBinder<T>& bind, const std::string& prefix, Var tokens, int heads,
                       std::shared_ptr<const AttentionLayout> time_layout,
                       std::shared_ptr<const AttentionLayout> space_layout, const Regularizer& reg) {
  const Var tn = norm(bind, prefix + "norm_time", tokens);
  Var x = residual(bind, tokens, attend(bind, prefix + "time_attn", tn, tn, heads, std::move(time_layout)), reg);
  const Var sn = norm(bind, prefix + "norm_space", x);
  x = residual(bind, x, attend(bind, prefix + "space_attn", sn, sn, heads, std::move(space_layout)), reg);
  return residual(bind, x, feed_forward(bind, prefix + "ffn", norm(bind, prefix + "norm_ffn", x)), reg);
}

}  // namespace blocks

namespace {

template <typename T>
void check_pair(const TokenSet<T>& q, const TokenSet<T>& kv, const AttentionParams<T>& p) {
  q.validate();
  kv.validate();
  p.validate();
  if (kv.size() == 0) throw ValidationError("attention: empty key/value set");
  if (q.dim() != p.dim() || kv.dim() != p.dim()) {
    throw ValidationError("attention: token dimension " + std::to_string(q.dim()) + "/" + std::to_string(kv.dim()) +
                          " does not match parameters " + std::to_string(p.dim()));
  }
}

}  // namespace

template <typename T>
TokenSet<T> multi_head_attention(const TokenSet<T>& queries, const TokenSet<T>& keys_values,
                                 const AttentionParams<T>& params) {
  check_pair(queries, keys_values, params);
  Tape<T> tape(false);
  ParamBinder<T> bind(tape, params.values);
  const Var out = blocks::attend(bind, "attn", tape.constant(queries.tokens), tape.constant(keys_values.tokens),
                                 params.heads);
  return TokenSet<T>{tape.value(out), queries.roles};
}

template <typename T>
TokenSet<T> cross_attention_block(const TokenSet<T>& queries, const TokenSet<T>& keys_values,
                                  const AttentionParams<T>& params) {
  check_pair(queries, keys_values, params);
  if (params.kind != BlockKind::kCrossAttention) throw ValidationError("cross_attention_block: wrong block kind");
  Tape<T> tape(false);
  ParamBinder<T> bind(tape, params.values);
  const Var out = blocks::cross_attention(bind, "", tape.constant(queries.tokens), tape.constant(keys_values.tokens),
                                          params.heads);
  return TokenSet<T>{tape.value(out), queries.roles};
}

template <typename T>
TokenSet<T> encoder_block(const TokenSet<T>& tokens, const AttentionParams<T>& params) {
  check_pair(tokens, tokens, params);
  if (params.kind != BlockKind::kSelfAttention) throw ValidationError("encoder_block: wrong block kind");
  Tape<T> tape(false);
  ParamBinder<T> bind(tape, params.values);
  const Var out = blocks::encoder(bind, "", tape.constant(tokens.tokens), params.heads);
  return TokenSet<T>{tape.value(out), tokens.roles};
}

template <typename T>
Matrix<T> mean_pool(const TokenSet<T>& tokens) {
  if (tokens.size() == 0) throw ValidationError("mean_pool: empty token set");
  return tokens.tokens.colwise().mean();
}

template <typename T>
std::vector<Matrix<T>> attention_weights(const TokenSet<T>& queries, const TokenSet<T>& keys_values,
                                         const AttentionParams<T>& params) {
  check_pair(queries, keys_values, params);
  const auto& v = params.values;
  Matrix<T> q = queries.tokens * v.get("attn.query.weight");
  q.rowwise() += v.get("attn.query.bias").row(0);
  Matrix<T> k = keys_values.tokens * v.get("attn.key.weight");
  k.rowwise() += v.get("attn.key.bias").row(0);
  const int dh = params.dim() / params.heads;
  std::vector<Matrix<T>> out;
  for (int h = 0; h < params.heads; ++h) {
    Matrix<T> s = q.middleCols(h * dh, dh) * k.middleCols(h * dh, dh).transpose();
    s /= std::sqrt(static_cast<T>(dh));
    out.push_back(softmax_rows(s));
  }
  return out;
}

#define EYECUE_INSTANTIATE(T)                                                                                  \
  template struct TokenSet<T>;                                                                                 \
  template void declare_block(ParamStore<T>&, const std::string&, int, BlockKind);                             \
  template void init_params(ParamStore<T>&, std::uint64_t, InitScheme);                                        \
  template struct AttentionParams<T>;                                                                          \
  template Var blocks::attend(ParamBinder<T>&, const std::string&, Var, Var, int,                              \
                              std::shared_ptr<const AttentionLayout>);                                         \
  template Var blocks::feed_forward(ParamBinder<T>&, const std::string&, Var);                                 \
  template Var blocks::cross_attention(ParamBinder<T>&, const std::string&, Var, Var, int, const Regularizer&); \
  template Var blocks::encoder(ParamBinder<T>&, const std::string&, Var, int, const Regularizer&,              \
                               std::shared_ptr<const AttentionLayout>);                                        \
  template Var blocks::divided_space_time(ParamBinder<T>&, const std::string&, Var, int,                       \
                                          std::shared_ptr<const AttentionLayout>,                              \
                                          std::shared_ptr<const AttentionLayout>, const Regularizer&);         \
  template TokenSet<T> multi_head_attention(const TokenSet<T>&, const TokenSet<T>&, const AttentionParams<T>&); \
  template TokenSet<T> cross_attention_block(const TokenSet<T>&, const TokenSet<T>&, const AttentionParams<T>&); \
  template TokenSet<T> encoder_block(const TokenSet<T>&, const AttentionParams<T>&);                           \
  template Matrix<T> mean_pool(const TokenSet<T>&);                                                            \
  template std::vector<Matrix<T>> attention_weights(const TokenSet<T>&, const TokenSet<T>&,                    \
                                                    const AttentionParams<T>&);

EYECUE_INSTANTIATE(float)
EYECUE_INSTANTIATE(double)

#undef EYECUE_INSTANTIATE

}  // namespace eyecue

#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "eyecue/autodiff.hpp"
#include "eyecue/rng.hpp"
#include "eyecue/tensor.hpp"

namespace eyecue {

enum class TokenRole { kClass, kPatch, kGaze, kSelected };

/// Ordered embedding vectors (one per row) with a role tag per token.
template <typename T>
struct TokenSet {
  Matrix<T> tokens;
  std::vector<TokenRole> roles;

  static TokenSet uniform(Matrix<T> tokens, TokenRole role) {
    TokenSet s;
    s.roles.assign(static_cast<std::size_t>(tokens.rows()), role);
    s.tokens = std::move(tokens);
    return s;
  }

  int size() const { return static_cast<int>(tokens.rows()); }
  int dim() const { return static_cast<int>(tokens.cols()); }

  /// Throws ValidationError / NumericError if the invariants do not hold.
  void validate() const;
};

enum class BlockKind { kSelfAttention, kCrossAttention, kDividedSpaceTime };

/// Adds the parameters of one block under `prefix` (which should end in '.').
///
/// Self/cross blocks: norm_q, [norm_kv], attn.{query,key,value,out}, norm_ffn,
/// ffn.{fc1,fc2}. Divided space-time blocks: norm_time, time_attn,
/// norm_space, space_attn, norm_ffn, ffn. Feed-forward width is 4x.
template <typename T>
void declare_block(ParamStore<T>& store, const std::string& prefix, int dim, BlockKind kind);

enum class InitScheme {
  /// Gaussian(0, 0.02) projections, zero residual-final layers, zero class
  /// tokens, unit norm gains. Every residual block starts as the identity.
  kStandard,
  /// Every parameter random and O(1)-scaled. Used by gradient checks, where
  /// zero-initialised layers would hide most of the gradient.
  kDense,
};

/// Fills every entry of `store` according to its name and the scheme.
template <typename T>
void init_params(ParamStore<T>& store, std::uint64_t seed, InitScheme scheme);

bool is_residual_final(const std::string& name);

/// Weights of a single standalone block.
template <typename T>
struct AttentionParams {
  int heads = 1;
  BlockKind kind = BlockKind::kCrossAttention;
  ParamStore<T> values;

  static AttentionParams create(int dim, int heads, BlockKind kind);
  int dim() const;
  void validate() const;
};

/// Dropout on residual branches. rate 0 disables it; the stream advances in
/// call order so a fixed forward order gives a fixed mask sequence.
struct Regularizer {
  double dropout = 0.0;
  Rng* rng = nullptr;

  bool active() const { return dropout > 0.0 && rng != nullptr; }
};

namespace blocks {

/// Query/key/value projections, scaled dot-product attention, output projection.
template <typename T>
Var attend(ParamBinder<T>& bind, const std::string& prefix, Var queries, Var keys_values, int heads,
           std::shared_ptr<const AttentionLayout> layout = nullptr);

template <typename T>
Var feed_forward(ParamBinder<T>& bind, const std::string& prefix, Var x);

/// q + attend(norm_q(q), norm_kv(kv)), then x + ffn(norm_ffn(x)).
template <typename T>
Var cross_attention(ParamBinder<T>& bind, const std::string& prefix, Var queries, Var keys_values, int heads,
                    const Regularizer& reg = {});

/// Pre-norm self-attention block.
template <typename T>
Var encoder(ParamBinder<T>& bind, const std::string& prefix, Var tokens, int heads, const Regularizer& reg = {},
            std::shared_ptr<const AttentionLayout> layout = nullptr);

/// Temporal attention, then spatial attention, then feed-forward; each a
/// pre-norm residual branch.
template <typename T>
Var divided_space_time(ParamBinder<T>& bind, const std::string& prefix, Var tokens, int heads,
                       std::shared_ptr<const AttentionLayout> time_layout,
                       std::shared_ptr<const AttentionLayout> space_layout, const Regularizer& reg = {});

}  // namespace blocks

template <typename T>
TokenSet<T> multi_head_attention(const TokenSet<T>& queries, const TokenSet<T>& keys_values,
                                 const AttentionParams<T>& params);

template <typename T>
TokenSet<T> cross_attention_block(const TokenSet<T>& queries, const TokenSet<T>& keys_values,
                                  const AttentionParams<T>& params);

template <typename T>
TokenSet<T> encoder_block(const TokenSet<T>& tokens, const AttentionParams<T>& params);

/// Arithmetic mean over tokens, as a 1 x d row.
template <typename T>
Matrix<T> mean_pool(const TokenSet<T>& tokens);

/// Attention probabilities of the first (or only) block's attention, one
/// matrix per head. Used for inspecting the convexity property.
template <typename T>
std::vector<Matrix<T>> attention_weights(const TokenSet<T>& queries, const TokenSet<T>& keys_values,
                                         const AttentionParams<T>& params);

}  // namespace eyecue

#pragma once

#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "prism/numerics/layers.hpp"

namespace prism::backbone {

using num::RowMask;
using num::Var;

enum class EncoderKind { attention, mean_pool };

EncoderKind parse_encoder_kind(const std::string& name);
std::string to_string(EncoderKind kind);

struct BackboneConfig {
  std::size_t num_items = 0;  // catalog size; the id table has num_items + 1 rows
  std::size_t max_len = 50;
  std::size_t dim = 64;
  std::size_t blocks = 2;
  std::size_t heads = 2;
  double dropout = 0.2;
  EncoderKind encoder = EncoderKind::attention;

  void validate() const;
};

/// Item-id table [num_items+1 x D] with row 0 pinned at zero, and positional table [max_len x D].
template <class Real>
class EmbeddingTables : public num::ParamModule<Real> {
 public:
  EmbeddingTables(std::size_t num_items, std::size_t max_len, std::size_t dim, std::mt19937_64& rng);

  const Var<Real>& items() const { return items_; }
  const Var<Real>& positions() const { return positions_; }
  std::size_t dim() const { return items_.cols(); }
  std::size_t max_len() const { return positions_.rows(); }

  /// e^id rows for the given ids; padding rows are zero and receive no gradient.
  Var<Real> lookup(std::span<const std::int64_t> ids) const;

  /// id embedding + fused vector + positional embedding per position of a [B x L] id
  /// matrix laid out row-major; padding positions are zero. `fused` may be null.
  Var<Real> embed_positions(std::span<const std::int64_t> ids, std::size_t batch, std::size_t len,
                            const Var<Real>* fused) const;

  void collect_parameters(const std::string& prefix, num::ParameterList<Real>& out) const override;

 private:
  Var<Real> items_;
  Var<Real> positions_;
};

/// Maps embedded sequences [B*L x D] to hidden states [B*L x D]. Output at position t
/// depends only on valid inputs at positions <= t; padding rows come out zero.
template <class Real>
class SequenceEncoder : public num::ParamModule<Real> {
 public:
  /// `dropout_rng` null means inference (no dropout).
  virtual Var<Real> encode(const Var<Real>& x, std::size_t batch, std::size_t len, const RowMask& valid,
                           std::mt19937_64* dropout_rng) const = 0;
};

/// Pre-LN causal self-attention stack with position-wise feed-forward blocks.
template <class Real>
class AttentionEncoder : public SequenceEncoder<Real> {
 public:
  AttentionEncoder(std::size_t dim, std::size_t blocks, std::size_t heads, double dropout, std::mt19937_64& rng);

  Var<Real> encode(const Var<Real>& x, std::size_t batch, std::size_t len, const RowMask& valid,
                   std::mt19937_64* dropout_rng) const override;
  void collect_parameters(const std::string& prefix, num::ParameterList<Real>& out) const override;

 private:
  struct Block {
    num::LayerNorm<Real> attn_norm;
    num::Linear<Real> query, key, value, out;
    num::LayerNorm<Real> ffn_norm;
    num::Mlp<Real> ffn;
  };
  std::vector<Block> blocks_;
  num::LayerNorm<Real> final_norm_;
  std::size_t heads_;
  Real dropout_;
};

/// Causal running mean of the embedded positions followed by layer normalization.
template <class Real>
class MeanPoolEncoder : public SequenceEncoder<Real> {
 public:
  MeanPoolEncoder(std::size_t dim, double dropout);

  Var<Real> encode(const Var<Real>& x, std::size_t batch, std::size_t len, const RowMask& valid,
                   std::mt19937_64* dropout_rng) const override;
  void collect_parameters(const std::string& prefix, num::ParameterList<Real>& out) const override;

 private:
  num::LayerNorm<Real> norm_;
  Real dropout_;
};

template <class Real>
std::unique_ptr<SequenceEncoder<Real>> make_encoder(const BackboneConfig& config, std::mt19937_64& rng);

/// <h, e^id_item> for one hidden vector.
template <class Real>
Real score(std::span<const Real> hidden, const num::Tensor<Real>& item_table, std::int64_t item);

/// Per-row logits <h_r, e^id_{ids[r]}>: [n x D] -> [n].
template <class Real>
Var<Real> score_rows(const Var<Real>& hidden, const EmbeddingTables<Real>& tables, std::span<const std::int64_t> ids);

/// Logits of every row against a candidate set: [n x D] -> [n x |ids|].
template <class Real>
Var<Real> score_candidates(const Var<Real>& hidden, const EmbeddingTables<Real>& tables,
                           std::span<const std::int64_t> ids);

/// mean over mask of -log sigmoid(pos) - log(1 - sigmoid(neg)).
template <class Real>
Var<Real> bce_loss(const Var<Real>& pos_logits, const Var<Real>& neg_logits, const RowMask& mask);

/// mean over mask of -log sigmoid(pos - neg).
template <class Real>
Var<Real> bpr_loss(const Var<Real>& pos_logits, const Var<Real>& neg_logits, const RowMask& mask);

enum class RecLoss { bce, bpr };
RecLoss parse_rec_loss(const std::string& name);
std::string to_string(RecLoss loss);

template <class Real>
Var<Real> recommendation_loss(RecLoss kind, const Var<Real>& pos_logits, const Var<Real>& neg_logits,
                              const RowMask& mask) {
  return kind == RecLoss::bce ? bce_loss(pos_logits, neg_logits, mask) : bpr_loss(pos_logits, neg_logits, mask);
}

}  // namespace prism::backbone

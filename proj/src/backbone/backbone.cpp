#include "prism/backbone/backbone.hpp"

#include <cmath>

#include "prism/errors.hpp"

namespace prism::backbone {

using num::Tensor;

EncoderKind parse_encoder_kind(const std::string& name) {
  if (name == "attention") return EncoderKind::attention;
  if (name == "mean_pool") return EncoderKind::mean_pool;
  throw ConfigError("unknown encoder '" + name + "' (expected attention or mean_pool)");
}

std::string to_string(EncoderKind kind) { return kind == EncoderKind::attention ? "attention" : "mean_pool"; }

RecLoss parse_rec_loss(const std::string& name) {
  if (name == "bce") return RecLoss::bce;
  if (name == "bpr") return RecLoss::bpr;
  throw ConfigError("unknown recommendation loss '" + name + "' (expected bce or bpr)");
}

std::string to_string(RecLoss loss) { return loss == RecLoss::bce ? "bce" : "bpr"; }

void BackboneConfig::validate() const {
  if (num_items < 1) throw ConfigError("backbone needs at least one item");
  if (max_len < 2) throw ConfigError("max_len must be at least 2");
  if (dim < 1) throw ConfigError("dim must be positive");
  if (encoder == EncoderKind::attention) {
    if (blocks < 1) throw ConfigError("blocks must be at least 1");
    if (heads < 1 || dim % heads != 0) {
      throw ConfigError("heads (" + std::to_string(heads) + ") must divide dim (" + std::to_string(dim) + ")");
    }
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
}

template <class Real>
EmbeddingTables<Real>::EmbeddingTables(std::size_t num_items, std::size_t max_len, std::size_t dim,
                                       std::mt19937_64& rng) {
  const Real stddev = static_cast<Real>(1.0 / std::sqrt(static_cast<double>(dim)));
  items_ = Var<Real>::parameter(num::normal_table<Real>(num_items + 1, dim, stddev, rng, 0));
  positions_ = Var<Real>::parameter(num::normal_table<Real>(max_len, dim, stddev, rng));
}

template <class Real>
Var<Real> EmbeddingTables<Real>::lookup(std::span<const std::int64_t> ids) const {
  return num::gather_rows(items_, ids, 0);
}

template <class Real>
Var<Real> EmbeddingTables<Real>::embed_positions(std::span<const std::int64_t> ids, std::size_t batch,
                                                 std::size_t len, const Var<Real>* fused) const {
  if (len > max_len()) {
    throw ConfigError("sequence length " + std::to_string(len) + " exceeds max_len " + std::to_string(max_len()));
  }
  if (ids.size() != batch * len) throw ConfigError("id matrix does not match batch x len");
  std::vector<std::int64_t> pos(ids.size());
  RowMask valid(ids.size());
  for (std::size_t r = 0; r < ids.size(); ++r) {
    pos[r] = static_cast<std::int64_t>(r % len);
    valid[r] = ids[r] != 0 ? 1 : 0;
  }
  std::vector<Var<Real>> terms{lookup(ids), num::gather_rows(positions_, std::span<const std::int64_t>(pos))};
  if (fused != nullptr) terms.push_back(*fused);
  return num::mask_rows(num::add_n(terms), valid);
}

template <class Real>
void EmbeddingTables<Real>::collect_parameters(const std::string& prefix, num::ParameterList<Real>& out) const {
  out.push_back({prefix + "item_embedding", items_});
  out.push_back({prefix + "position_embedding", positions_});
}

template <class Real>
AttentionEncoder<Real>::AttentionEncoder(std::size_t dim, std::size_t blocks, std::size_t heads, double dropout,
                                         std::mt19937_64& rng)
    : final_norm_(dim), heads_(heads), dropout_(static_cast<Real>(dropout)) {
  if (heads < 1 || dim % heads != 0) throw ConfigError("heads must divide dim");
  blocks_.reserve(blocks);
  for (std::size_t b = 0; b < blocks; ++b) {
    blocks_.push_back(Block{num::LayerNorm<Real>(dim), num::Linear<Real>(dim, dim, rng),
                            num::Linear<Real>(dim, dim, rng), num::Linear<Real>(dim, dim, rng),
                            num::Linear<Real>(dim, dim, rng), num::LayerNorm<Real>(dim),
                            num::Mlp<Real>(dim, dim, dim, rng)});
  }
}

template <class Real>
Var<Real> AttentionEncoder<Real>::encode(const Var<Real>& x, std::size_t batch, std::size_t len,
                                         const RowMask& valid, std::mt19937_64* dropout_rng) const {
  auto drop = [&](const Var<Real>& v) { return dropout_rng ? num::dropout(v, dropout_, *dropout_rng) : v; };
  Var<Real> h = drop(x);
  for (const Block& blk : blocks_) {
    const Var<Real> a = blk.attn_norm.forward(h);
    Var<Real> att = num::causal_attention(blk.query.forward(a), blk.key.forward(a), blk.value.forward(a), batch,
                                          len, heads_, valid);
    h = num::add(h, drop(blk.out.forward(att)));
    h = num::add(h, drop(blk.ffn.forward(blk.ffn_norm.forward(h))));
  }
  return num::mask_rows(final_norm_.forward(h), valid);
}

template <class Real>
void AttentionEncoder<Real>::collect_parameters(const std::string& prefix, num::ParameterList<Real>& out) const {
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    const std::string p = prefix + "block" + std::to_string(b) + ".";
    const Block& blk = blocks_[b];
    blk.attn_norm.collect_parameters(p + "attn_norm.", out);
    blk.query.collect_parameters(p + "query.", out);
    blk.key.collect_parameters(p + "key.", out);
    blk.value.collect_parameters(p + "value.", out);
    blk.out.collect_parameters(p + "attn_out.", out);
    blk.ffn_norm.collect_parameters(p + "ffn_norm.", out);
    blk.ffn.collect_parameters(p + "ffn.", out);
  }
  final_norm_.collect_parameters(prefix + "final_norm.", out);
}

template <class Real>
MeanPoolEncoder<Real>::MeanPoolEncoder(std::size_t dim, double dropout)
    : norm_(dim), dropout_(static_cast<Real>(dropout)) {}

template <class Real>
Var<Real> MeanPoolEncoder<Real>::encode(const Var<Real>& x, std::size_t batch, std::size_t len, const RowMask& valid,
                                        std::mt19937_64* dropout_rng) const {
  Var<Real> h = num::causal_mean(x, batch, len, valid);
  if (dropout_rng) h = num::dropout(h, dropout_, *dropout_rng);
  return num::mask_rows(norm_.forward(h), valid);
}

template <class Real>
void MeanPoolEncoder<Real>::collect_parameters(const std::string& prefix, num::ParameterList<Real>& out) const {
  norm_.collect_parameters(prefix + "norm.", out);
}

template <class Real>
std::unique_ptr<SequenceEncoder<Real>> make_encoder(const BackboneConfig& config, std::mt19937_64& rng) {
  config.validate();
  if (config.encoder == EncoderKind::mean_pool) return std::make_unique<MeanPoolEncoder<Real>>(config.dim, config.dropout);
  return std::make_unique<AttentionEncoder<Real>>(config.dim, config.blocks, config.heads, config.dropout, rng);
}

template <class Real>
Real score(std::span<const Real> hidden, const Tensor<Real>& item_table, std::int64_t item) {
  if (item < 0 || static_cast<std::size_t>(item) >= item_table.rows()) {
    throw ConfigError("item id " + std::to_string(item) + " out of range");
  }
  const auto row = item_table.row(static_cast<std::size_t>(item));
  if (row.size() != hidden.size()) throw ConfigError("hidden size does not match embedding dim");
  Real acc{0};
  for (std::size_t d = 0; d < row.size(); ++d) acc += hidden[d] * row[d];
  return acc;
}

template <class Real>
Var<Real> score_rows(const Var<Real>& hidden, const EmbeddingTables<Real>& tables, std::span<const std::int64_t> ids) {
  return num::row_dot(hidden, tables.lookup(ids));
}

template <class Real>
Var<Real> score_candidates(const Var<Real>& hidden, const EmbeddingTables<Real>& tables,
                           std::span<const std::int64_t> ids) {
  return num::matmul_nt(hidden, tables.lookup(ids));
}

template <class Real>
Var<Real> bce_loss(const Var<Real>& pos_logits, const Var<Real>& neg_logits, const RowMask& mask) {
  if (pos_logits.shape() != neg_logits.shape()) throw ConfigError("bce_loss: logit shapes differ");
  // -log sigmoid(p) = softplus(-p); -log(1 - sigmoid(n)) = softplus(n)
  const Var<Real> per = num::add(num::softplus(num::affine(pos_logits, Real{-1}, Real{0})), num::softplus(neg_logits));
  return num::masked_mean(per, mask);
}

template <class Real>
Var<Real> bpr_loss(const Var<Real>& pos_logits, const Var<Real>& neg_logits, const RowMask& mask) {
  if (pos_logits.shape() != neg_logits.shape()) throw ConfigError("bpr_loss: logit shapes differ");
  return num::masked_mean(num::softplus(num::sub(neg_logits, pos_logits)), mask);
}

#define PRISM_INSTANTIATE_BACKBONE(Real)                                                                        \
  template class EmbeddingTables<Real>;                                                                         \
  template class AttentionEncoder<Real>;                                                                        \
  template class MeanPoolEncoder<Real>;                                                                         \
  template std::unique_ptr<SequenceEncoder<Real>> make_encoder<Real>(const BackboneConfig&, std::mt19937_64&); \
  template Real score<Real>(std::span<const Real>, const Tensor<Real>&, std::int64_t);                          \
  template Var<Real> score_rows<Real>(const Var<Real>&, const EmbeddingTables<Real>&,                           \
                                      std::span<const std::int64_t>);                                           \
  template Var<Real> score_candidates<Real>(const Var<Real>&, const EmbeddingTables<Real>&,                     \
                                            std::span<const std::int64_t>);                                     \
  template Var<Real> bce_loss<Real>(const Var<Real>&, const Var<Real>&, const RowMask&);                        \
  template Var<Real> bpr_loss<Real>(const Var<Real>&, const Var<Real>&, const RowMask&);

PRISM_INSTANTIATE_BACKBONE(float)
PRISM_INSTANTIATE_BACKBONE(double)

}  // namespace prism::backbone

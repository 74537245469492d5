#include "prism/prism/model.hpp"

#include <algorithm>

#include "prism/errors.hpp"
#include "prism/numerics/rng.hpp"

namespace prism::core {

namespace {

constexpr std::uint64_t kEmbeddingInit = 0;
constexpr std::uint64_t kEncoderInit = 1;
constexpr std::uint64_t kReweightInit = 2;
constexpr std::uint64_t kExpertInit = 1000;
constexpr std::uint64_t kExpertEncoderInit = 2000;

template <class Real>
backbone::EmbeddingTables<Real> make_tables(const backbone::BackboneConfig& cfg, std::uint64_t seed) {
  auto rng = num::make_rng(seed, num::SeedStream::init, kEmbeddingInit);
  return backbone::EmbeddingTables<Real>(cfg.num_items, cfg.max_len, cfg.dim, rng);
}

}  // namespace

std::vector<Expert> ModelConfig::active_experts() const {
  std::vector<Expert> out;
  for (Expert e : kAllExperts) {
    if (!drop[static_cast<std::size_t>(e)]) {
      for (std::size_t r = 0; r < experts_per_type; ++r) out.push_back(e);
    }
  }
  return out;
}

void ModelConfig::validate() const {
  backbone.validate();
  lambdas.validate();
  if (!(margin > 0.0)) throw ConfigError("triplet margin must be positive");
  if (!prism_enabled) return;
  if (image_dim == 0 || text_dim == 0) throw ConfigError("prism needs image and text embeddings");
  if (expert_hidden == 0 || reweight_hidden == 0) throw ConfigError("hidden widths must be positive");
  if (experts_per_type < 1) throw ConfigError("experts_per_type must be at least 1");
  const auto dropped = std::count(drop.begin(), drop.end(), true);
  if (dropped > 3) throw ConfigError("at most three of the four experts may be dropped");
  if (!(expert_output_scale > 0.0)) throw ConfigError("expert_output_scale must be positive");
  if (per_expert_encoder && expert_head != ExpertHead::encoder) {
    throw ConfigError("per_expert_encoder needs the encoder expert head");
  }
}

ExpertHead parse_expert_head(const std::string& name) {
  if (name == "pooled") return ExpertHead::pooled;
  if (name == "encoder") return ExpertHead::encoder;
  throw ConfigError("unknown expert head '" + name + "' (expected pooled or encoder)");
}

std::string to_string(ExpertHead h) { return h == ExpertHead::pooled ? "pooled" : "encoder"; }

ItemIndex index_items(std::span<const std::int64_t> ids) {
  ItemIndex out;
  out.items.push_back(0);
  for (auto v : ids)
    if (v != 0) out.items.push_back(v);
  std::sort(out.items.begin() + 1, out.items.end());
  out.items.erase(std::unique(out.items.begin() + 1, out.items.end()), out.items.end());
  out.rows.reserve(ids.size());
  for (auto v : ids) {
    out.rows.push_back(v == 0 ? 0 : std::lower_bound(out.items.begin() + 1, out.items.end(), v) - out.items.begin());
  }
  out.valid.assign(out.items.size(), 1);
  out.valid[0] = 0;
  return out;
}

std::vector<std::int64_t> candidate_ids(const data::Batch& batch) {
  std::vector<std::int64_t> ids;
  ids.reserve(batch.positives.size() + batch.negatives.size());
  for (auto v : batch.positives)
    if (v != 0) ids.push_back(v);
  for (auto v : batch.negatives)
    if (v != 0) ids.push_back(v);
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  return ids;
}

template <class Real>
PrismModel<Real>::PrismModel(const ModelConfig& config, const data::ModalityContent& content, std::uint64_t seed)
    : config_(config),
      tables_(make_tables<Real>(config.backbone, seed)) {
  config_.validate();
  auto enc_rng = num::make_rng(seed, num::SeedStream::init, kEncoderInit);
  encoder_ = backbone::make_encoder<Real>(config_.backbone, enc_rng);
  if (!config_.prism_enabled) return;

  const std::size_t rows = config_.backbone.num_items + 1;
  if (content.empty() || content.image.rows() != rows || content.text.rows() != rows) {
    throw ConfigError("modality content must have one row per item plus padding");
  }
  if (content.image_dim() != config_.image_dim || content.text_dim() != config_.text_dim) {
    throw ConfigError("modality dimensions (" + std::to_string(content.image_dim()) + ", " +
                      std::to_string(content.text_dim()) + ") do not match config (" +
                      std::to_string(config_.image_dim) + ", " + std::to_string(config_.text_dim) + ")");
  }
  image_ = Var<Real>::constant(content.image.template cast<Real>());
  text_ = Var<Real>::constant(content.text.template cast<Real>());

  const auto types = config_.active_experts();
  std::vector<std::uint64_t> seeds;
  std::vector<std::size_t> replica(kNumExpertTypes, 0);
  for (Expert e : types) {
    const std::uint64_t index =
        config_.shared_expert_init ? kExpertInit : kExpertInit + 16 * static_cast<std::uint64_t>(e) + replica[static_cast<std::size_t>(e)]++;
    seeds.push_back(num::derive_seed(seed, num::SeedStream::init, index));
  }
  experts_ = std::make_unique<ExpertBank<Real>>(config_.image_dim, config_.text_dim, config_.expert_hidden,
                                                config_.backbone.dim, types, seeds,
                                                static_cast<Real>(config_.expert_output_scale));
  if (!config_.drop_afl) {
    auto rw_rng = num::make_rng(seed, num::SeedStream::init, kReweightInit);
    reweight_ = std::make_unique<ReweightNet<Real>>(types.size(), config_.backbone.dim, config_.reweight_hidden, rw_rng);
  }
  if (config_.per_expert_encoder) {
    for (std::size_t s = 0; s < types.size(); ++s) {
      auto rng = num::make_rng(seed, num::SeedStream::init, kExpertEncoderInit + s);
      expert_encoders_.push_back(backbone::make_encoder<Real>(config_.backbone, rng));
    }
  }
}

template <class Real>
Var<Real> PrismModel<Real>::content_rows(const Var<Real>& table, std::span<const std::int64_t> ids) const {
  return num::gather_rows(table, ids, 0);
}

template <class Real>
const backbone::SequenceEncoder<Real>& PrismModel<Real>::encoder_for(std::size_t slot) const {
  return expert_encoders_.empty() ? *encoder_ : *expert_encoders_.at(slot);
}

template <class Real>
Var<Real> PrismModel<Real>::encode(std::span<const std::int64_t> ids, std::size_t batch, std::size_t len,
                                   const RowMask& valid, const Var<Real>* fused,
                                   const backbone::SequenceEncoder<Real>& enc, std::mt19937_64* dropout_rng) const {
  const Var<Real> x = tables_.embed_positions(ids, batch, len, fused);
  return enc.encode(x, batch, len, valid, dropout_rng);
}

template <class Real>
Tensor<Real> PrismModel<Real>::image_rows(std::span<const std::int64_t> items) const {
  num::NoGradGuard no_grad;
  return content_rows(image_, items).value();
}

template <class Real>
Tensor<Real> PrismModel<Real>::text_rows(std::span<const std::int64_t> items) const {
  num::NoGradGuard no_grad;
  return content_rows(text_, items).value();
}

template <class Real>
typename PrismModel<Real>::ExpertPasses PrismModel<Real>::expert_predictions(
    std::size_t slot, const data::Batch& batch, const ItemIndex& index, std::span<const std::int64_t> candidates,
    const Tensor<Real>& image_surrogate, const Tensor<Real>& text_surrogate, std::mt19937_64* dropout_rng) const {
  if (!experts_) throw ConfigError("expert predictions need prism enabled");
  const std::span<const std::int64_t> items(index.items);
  const std::span<const std::int64_t> rows(index.rows);
  const Var<Real> img = content_rows(image_, items);
  const Var<Real> txt = content_rows(text_, items);
  const Var<Real> cand = tables_.lookup(candidates);
  ExpertPasses out;
  std::vector<std::int64_t> valid_positions;
  if (config_.expert_head == ExpertHead::pooled) {
    // Positions holding the same item share a prediction row, so rows are weighted by count.
    out.row_weights = Tensor<Real>({items.size()}, Real{0});
    std::size_t n_valid = 0;
    for (std::size_t p = 0; p < batch.items.size(); ++p) {
      if (!batch.valid[p]) continue;
      out.row_weights[static_cast<std::size_t>(rows[p])] += Real{1};
      ++n_valid;
    }
    if (n_valid > 0) {
      for (auto& w : out.row_weights.values()) w /= static_cast<Real>(n_valid);
    }
  } else {
    for (std::size_t p = 0; p < batch.items.size(); ++p) {
      if (batch.valid[p]) valid_positions.push_back(static_cast<std::int64_t>(p));
    }
  }
  auto predict = [&](const Var<Real>& per_item) {
    if (config_.expert_head == ExpertHead::pooled) return num::matmul_nt(per_item, cand);
    const Var<Real> e = num::gather_rows(per_item, rows);
    const Var<Real> h = encode(std::span<const std::int64_t>(batch.items), batch.batch_size, batch.len, batch.valid,
                               &e, encoder_for(slot), dropout_rng);
    return num::matmul_nt(num::gather_rows(h, std::span<const std::int64_t>(valid_positions)), cand);
  };
  out.embedding = experts_->forward(slot, img, txt);
  out.y = predict(out.embedding);
  out.y_img = predict(experts_->forward(slot, img, Var<Real>::constant(text_surrogate)));
  out.y_txt = predict(experts_->forward(slot, Var<Real>::constant(image_surrogate), txt));
  return out;
}

template <class Real>
FusionResult<Real> PrismModel<Real>::fuse_items(const std::vector<Var<Real>>& embeddings,
                                                std::span<const std::int64_t> items) const {
  return reweight_ ? adaptive_fusion(embeddings, tables_.lookup(items), *reweight_) : uniform_fusion(embeddings);
}

template <class Real>
StepLosses<Real> PrismModel<Real>::training_losses(const data::Batch& batch, std::mt19937_64* dropout_rng,
                                                   std::mt19937_64& mask_rng) const {
  const std::span<const std::int64_t> ids(batch.items);
  StepLosses<Real> out;
  Var<Real> fused;
  if (experts_) {
    const ItemIndex index = index_items(ids);
    const auto candidates = candidate_ids(batch);
    const Tensor<Real> image_surrogate = mask_modality(image_rows(index.items), config_.mask, mask_rng, &index.valid);
    const Tensor<Real> text_surrogate = mask_modality(text_rows(index.items), config_.mask, mask_rng, &index.valid);

    std::vector<Var<Real>> losses, embeddings;
    std::array<std::size_t, kNumExpertTypes> counts{};
    for (std::size_t s = 0; s < experts_->size(); ++s) {
      const auto passes =
          expert_predictions(s, batch, index, candidates, image_surrogate, text_surrogate, dropout_rng);
      const Expert type = experts_->type(s);
      losses.push_back(expert_loss(type, passes.y, passes.y_img, passes.y_txt, static_cast<Real>(config_.margin),
                                   passes.row_weights.size() > 0 ? &passes.row_weights : nullptr));
      embeddings.push_back(passes.embedding);
      out.components[static_cast<std::size_t>(type)] += static_cast<double>(losses.back().item());
      ++counts[static_cast<std::size_t>(type)];
    }
    for (std::size_t j = 0; j < kNumExpertTypes; ++j) {
      if (counts[j] > 0) out.components[j] /= static_cast<double>(counts[j]);
    }
    out.exp = interaction_loss(losses, experts_->types(), config_.lambdas);
    fused = num::gather_rows(fuse_items(embeddings, index.items).fused, std::span<const std::int64_t>(index.rows));
  } else {
    out.exp = Var<Real>::constant(Tensor<Real>::scalar(Real{0}));
  }

  const Var<Real> h = encode(ids, batch.batch_size, batch.len, batch.valid, experts_ ? &fused : nullptr, *encoder_,
                             dropout_rng);
  const Var<Real> pos = backbone::score_rows(h, tables_, std::span<const std::int64_t>(batch.positives));
  const Var<Real> neg = backbone::score_rows(h, tables_, std::span<const std::int64_t>(batch.negatives));
  out.rec = backbone::recommendation_loss(config_.rec_loss, pos, neg, batch.valid);
  out.total = num::add(out.rec, out.exp);
  return out;
}

template <class Real>
FusionResult<Real> PrismModel<Real>::fuse(std::span<const std::int64_t> ids) const {
  if (!experts_) return {};
  const ItemIndex index = index_items(ids);
  const std::span<const std::int64_t> items(index.items);
  const Var<Real> img = content_rows(image_, items);
  const Var<Real> txt = content_rows(text_, items);
  std::vector<Var<Real>> embeddings;
  for (std::size_t s = 0; s < experts_->size(); ++s) embeddings.push_back(experts_->forward(s, img, txt));
  const FusionResult<Real> per_item = fuse_items(embeddings, items);
  const std::span<const std::int64_t> rows(index.rows);
  return {num::gather_rows(per_item.weights, rows), num::gather_rows(per_item.fused, rows)};
}

template <class Real>
Tensor<Real> PrismModel<Real>::final_hidden(const data::Batch& batch) const {
  num::NoGradGuard no_grad;
  const std::span<const std::int64_t> ids(batch.items);
  const FusionResult<Real> fusion = fuse(ids);
  const Var<Real> h = encode(ids, batch.batch_size, batch.len, batch.valid,
                             fusion.fused.defined() ? &fusion.fused : nullptr, *encoder_, nullptr);
  const std::size_t dim = h.cols();
  Tensor<Real> out({batch.batch_size, dim});
  for (std::size_t b = 0; b < batch.batch_size; ++b) {
    const auto row = h.value().row(b * batch.len + batch.len - 1);
    std::copy(row.begin(), row.end(), out.row(b).begin());
  }
  return out;
}

template <class Real>
Tensor<Real> PrismModel<Real>::score_all(const data::Batch& batch) const {
  num::NoGradGuard no_grad;
  const Var<Real> h = Var<Real>::constant(final_hidden(batch));
  return num::matmul_nt(h, tables_.items()).value();
}

template <class Real>
Tensor<double> PrismModel<Real>::type_weights(const data::Batch& batch) const {
  num::NoGradGuard no_grad;
  Tensor<double> out({batch.rows(), kNumExpertTypes}, 0.0);
  if (!experts_) return out;
  const FusionResult<Real> fusion = fuse(std::span<const std::int64_t>(batch.items));
  const auto& w = fusion.weights.value();
  for (std::size_t r = 0; r < batch.rows(); ++r) {
    for (std::size_t s = 0; s < experts_->size(); ++s) {
      out.at(r, static_cast<std::size_t>(experts_->type(s))) += static_cast<double>(w.at(r, s));
    }
  }
  return out;
}

template <class Real>
num::ParameterList<Real> PrismModel<Real>::expert_parameters() const {
  num::ParameterList<Real> out;
  if (experts_) experts_->collect_parameters("experts.", out);
  return out;
}

template <class Real>
void PrismModel<Real>::collect_parameters(const std::string& prefix, num::ParameterList<Real>& out) const {
  tables_.collect_parameters(prefix + "embedding.", out);
  encoder_->collect_parameters(prefix + "encoder.", out);
  if (experts_) experts_->collect_parameters(prefix + "experts.", out);
  if (reweight_) reweight_->collect_parameters(prefix + "reweight.", out);
  for (std::size_t s = 0; s < expert_encoders_.size(); ++s) {
    expert_encoders_[s]->collect_parameters(prefix + "expert_encoder" + std::to_string(s) + ".", out);
  }
}

template class PrismModel<float>;
template class PrismModel<double>;

}  // namespace prism::core

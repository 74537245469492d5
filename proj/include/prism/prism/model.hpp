#pragma once

#include <array>
#include <memory>
#include <random>
#include <vector>

#include "prism/backbone/backbone.hpp"
#include "prism/data/split.hpp"
#include "prism/prism/experts.hpp"

namespace prism::core {

/// How an expert's three predictions are read out at every valid position: `pooled`
/// scores the expert output of the item at that position against the candidates;
/// `encoder` runs each pass through the sequence encoder first.
enum class ExpertHead { pooled, encoder };
ExpertHead parse_expert_head(const std::string& name);
std::string to_string(ExpertHead h);

struct ModelConfig {
  backbone::BackboneConfig backbone;
  backbone::RecLoss rec_loss = backbone::RecLoss::bce;
  std::size_t image_dim = 0;
  std::size_t text_dim = 0;

  bool prism_enabled = true;
  std::size_t expert_hidden = 64;
  std::size_t reweight_hidden = 64;
  std::size_t experts_per_type = 1;
  ExpertHead expert_head = ExpertHead::pooled;
  bool per_expert_encoder = false;  // encoder head only
  bool shared_expert_init = true;
  double expert_output_scale = 1.0;

  LambdaWeights lambdas;
  double margin = 1.0;
  MaskStrategy mask = MaskStrategy::random;
  std::array<bool, kNumExpertTypes> drop{};
  bool drop_afl = false;

  std::vector<Expert> active_experts() const;
  void validate() const;
};

/// Distinct items of a batch: `items[0]` is always the padding id, `rows[p]` is the
/// index into `items` of position p, and `valid` flags every row but the first.
struct ItemIndex {
  std::vector<std::int64_t> items;
  std::vector<std::int64_t> rows;
  RowMask valid;
};
ItemIndex index_items(std::span<const std::int64_t> ids);

template <class Real>
struct StepLosses {
  Var<Real> rec;
  Var<Real> exp;
  Var<Real> total;
  /// Unweighted loss per expert type, averaged over that type's slots; 0 for dropped types.
  std::array<double, kNumExpertTypes> components{};
};

/// Sequential recommender with the interaction expert layer and adaptive fusion plugged
/// in front of the sequence encoder. With prism disabled it is the plain ID backbone.
template <class Real>
class PrismModel : public num::ParamModule<Real> {
 public:
  PrismModel(const ModelConfig& config, const data::ModalityContent& content, std::uint64_t seed);

  const ModelConfig& config() const noexcept { return config_; }
  const backbone::EmbeddingTables<Real>& tables() const { return tables_; }
  const ExpertBank<Real>* experts() const { return experts_.get(); }
  const ReweightNet<Real>* reweight() const { return reweight_.get(); }

  /// L_rec, L_exp and L = L_rec + L_exp for one training batch. `dropout_rng` null
  /// disables dropout; `mask_rng` drives the random masking strategy.
  StepLosses<Real> training_losses(const data::Batch& batch, std::mt19937_64* dropout_rng,
                                   std::mt19937_64& mask_rng) const;

  struct ExpertPasses {
    // Logits over the candidates. The encoder head has one row per valid position. The pooled
    // head has one row per entry of index.items, weighted by its share of the valid positions.
    Var<Real> y, y_img, y_txt;
    Tensor<Real> row_weights;  // empty for the encoder head
    Var<Real> embedding;       // expert output on the full input per distinct item, [|items| x D]
  };

  /// The three passes of one expert slot over the distinct items of `batch`: full input,
  /// text replaced by `text_surrogate` (y^img) and image replaced by `image_surrogate`
  /// (y^txt). Surrogates have one row per entry of `index.items`.
  ExpertPasses expert_predictions(std::size_t slot, const data::Batch& batch, const ItemIndex& index,
                                  std::span<const std::int64_t> candidates, const Tensor<Real>& image_surrogate,
                                  const Tensor<Real>& text_surrogate, std::mt19937_64* dropout_rng) const;

  /// Image and text content rows of `items`.
  Tensor<Real> image_rows(std::span<const std::int64_t> items) const;
  Tensor<Real> text_rows(std::span<const std::int64_t> items) const;

  /// e^m and the fusion weights [n x J] per position of `ids` (empty when prism is off).
  FusionResult<Real> fuse(std::span<const std::int64_t> ids) const;

  /// Hidden state at the last column of each row of a right-aligned batch, [B x D].
  Tensor<Real> final_hidden(const data::Batch& batch) const;

  /// Scores of every catalog item (column 0 is padding) for each row, [B x (N+1)].
  Tensor<Real> score_all(const data::Batch& batch) const;

  /// Fusion weights per position folded to the four expert types, [B*L x 4]. Zero when
  /// prism is disabled.
  Tensor<double> type_weights(const data::Batch& batch) const;

  /// Parameters of the expert bank only (for staged updates).
  num::ParameterList<Real> expert_parameters() const;

  void collect_parameters(const std::string& prefix, num::ParameterList<Real>& out) const override;

 private:
  Var<Real> content_rows(const Var<Real>& table, std::span<const std::int64_t> ids) const;
  FusionResult<Real> fuse_items(const std::vector<Var<Real>>& embeddings, std::span<const std::int64_t> items) const;
  const backbone::SequenceEncoder<Real>& encoder_for(std::size_t slot) const;
  Var<Real> encode(std::span<const std::int64_t> ids, std::size_t batch, std::size_t len, const RowMask& valid,
                   const Var<Real>* fused, const backbone::SequenceEncoder<Real>& enc,
                   std::mt19937_64* dropout_rng) const;

  ModelConfig config_;
  Var<Real> image_;
  Var<Real> text_;
  backbone::EmbeddingTables<Real> tables_;
  std::unique_ptr<backbone::SequenceEncoder<Real>> encoder_;
  std::unique_ptr<ExpertBank<Real>> experts_;
  std::unique_ptr<ReweightNet<Real>> reweight_;
  std::vector<std::unique_ptr<backbone::SequenceEncoder<Real>>> expert_encoders_;
};

/// Unique non-padding ids among a batch's positives and negatives, ascending.
std::vector<std::int64_t> candidate_ids(const data::Batch& batch);

}  // namespace prism::core

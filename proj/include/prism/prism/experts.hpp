#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "prism/numerics/layers.hpp"

namespace prism::core {

using num::RowMask;
using num::Tensor;
using num::Var;

enum class Expert : std::size_t { uni_i = 0, uni_t = 1, syn = 2, rdn = 3 };
inline constexpr std::size_t kNumExpertTypes = 4;
inline constexpr std::array<Expert, kNumExpertTypes> kAllExperts{Expert::uni_i, Expert::uni_t, Expert::syn,
                                                                 Expert::rdn};

const char* expert_name(Expert e);
Expert parse_expert(const std::string& name);

enum class MaskStrategy { random, mean, zero };
MaskStrategy parse_mask_strategy(const std::string& name);
std::string to_string(MaskStrategy s);

struct LambdaWeights {
  std::array<double, kNumExpertTypes> values{0.2, 0.05, 0.2, 0.5};

  double operator[](Expert e) const { return values[static_cast<std::size_t>(e)]; }
  double& operator[](Expert e) { return values[static_cast<std::size_t>(e)]; }
  void validate() const;
};

/// Surrogate for a masked modality, one row per row of `e`. Rows with valid[r] == 0 are
/// ignored when computing statistics and come out zero. `random` copies each row from a
/// uniformly drawn valid row of `e`; `rng` is used only there.
template <class Real>
Tensor<Real> mask_modality(const Tensor<Real>& e, MaskStrategy strategy, std::mt19937_64& rng,
                           const RowMask* valid = nullptr);

/// Bank of interaction experts. Each slot is a two-layer MLP on [e_img, e_txt] with an
/// assigned interaction type; several slots may share a type.
template <class Real>
class ExpertBank : public num::ParamModule<Real> {
 public:
  /// Slots whose init seeds coincide start with identical parameters.
  ExpertBank(std::size_t image_dim, std::size_t text_dim, std::size_t hidden, std::size_t out_dim,
             std::vector<Expert> slot_types, const std::vector<std::uint64_t>& init_seeds,
             Real output_scale = Real{1});

  std::size_t size() const noexcept { return slots_.size(); }
  Expert type(std::size_t slot) const { return types_.at(slot); }
  const std::vector<Expert>& types() const noexcept { return types_; }
  std::size_t out_dim() const { return out_dim_; }

  /// e^j = MLP_j([img, txt]) row-wise. Every call counts as one expert pass.
  Var<Real> forward(std::size_t slot, const Var<Real>& image, const Var<Real>& text) const;

  std::uint64_t forward_count() const noexcept { return forward_count_; }
  void reset_forward_count() const noexcept { forward_count_ = 0; }

  void collect_parameters(const std::string& prefix, num::ParameterList<Real>& out) const override;

 private:
  std::vector<Expert> types_;
  std::vector<std::unique_ptr<num::Mlp<Real>>> slots_;
  std::size_t out_dim_;
  mutable std::uint64_t forward_count_ = 0;
};

// The interaction losses average over rows, or take the weighted sum when `row_weights`
// (one weight per row, summing to 1) is given.

/// max(0, m + d(a, p) - d(a, n)) with d = 1 - cos.
template <class Real>
Var<Real> uniqueness_loss(const Var<Real>& anchor, const Var<Real>& positive, const Var<Real>& negative, Real margin,
                          const Tensor<Real>* row_weights = nullptr);

/// Row average of (cos(y, y_img) + cos(y, y_txt)) / 2.
template <class Real>
Var<Real> synergy_loss(const Var<Real>& y, const Var<Real>& y_img, const Var<Real>& y_txt,
                       const Tensor<Real>* row_weights = nullptr);

/// 1 - synergy_loss.
template <class Real>
Var<Real> redundancy_loss(const Var<Real>& y, const Var<Real>& y_img, const Var<Real>& y_txt,
                          const Tensor<Real>* row_weights = nullptr);

/// The loss assigned to an expert type, given its three predictions.
template <class Real>
Var<Real> expert_loss(Expert type, const Var<Real>& y, const Var<Real>& y_img, const Var<Real>& y_txt, Real margin,
                      const Tensor<Real>* row_weights = nullptr);

/// sum_j lambda_j L_j over the given terms; a constant zero when there are none.
template <class Real>
Var<Real> interaction_loss(const std::vector<Var<Real>>& losses, const std::vector<Expert>& types,
                           const LambdaWeights& lambdas);

/// MLP on [e^1, ..., e^J, e^id] (row-wise) producing J logits.
template <class Real>
class ReweightNet : public num::ParamModule<Real> {
 public:
  ReweightNet(std::size_t num_experts, std::size_t dim, std::size_t hidden, std::mt19937_64& rng,
              Real output_scale = Real(0.1));

  std::size_t num_experts() const noexcept { return num_experts_; }
  Var<Real> logits(const std::vector<Var<Real>>& expert_embeddings, const Var<Real>& id_embedding) const;

  num::Mlp<Real>& mlp() { return mlp_; }
  void collect_parameters(const std::string& prefix, num::ParameterList<Real>& out) const override;

 private:
  std::size_t num_experts_;
  num::Mlp<Real> mlp_;
};

template <class Real>
struct FusionResult {
  Var<Real> weights;  // [n x J], rows on the simplex
  Var<Real> fused;    // [n x D]
};

/// w = softmax(W(e^1..e^J, e^id)), e^m = sum_j w_j e^j.
template <class Real>
FusionResult<Real> adaptive_fusion(const std::vector<Var<Real>>& expert_embeddings, const Var<Real>& id_embedding,
                                   const ReweightNet<Real>& net);

/// Fusion with fixed uniform weights 1/J (the no-AFL variant).
template <class Real>
FusionResult<Real> uniform_fusion(const std::vector<Var<Real>>& expert_embeddings);

/// Per-position fusion weights, one column per expert type (replicas summed, dropped types 0).
struct FusionTraceRow {
  std::uint64_t user_id = 0;
  std::size_t position = 0;
  std::uint64_t item_id = 0;
  std::array<double, kNumExpertTypes> weights{};
};

using FusionTrace = std::vector<FusionTraceRow>;

inline constexpr const char* kFusionTraceHeader = "user_id,position,item_id,w_uni_i,w_uni_t,w_syn,w_rdn";

void write_fusion_trace(std::ostream& out, const FusionTrace& trace);
void write_fusion_trace(const std::filesystem::path& path, const FusionTrace& trace);
FusionTrace read_fusion_trace(const std::filesystem::path& path);

/// Column means of the trace weights.
std::array<double, kNumExpertTypes> mean_weights(const FusionTrace& trace);

}  // namespace prism::core

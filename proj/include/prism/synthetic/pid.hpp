#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "prism/data/dataset.hpp"
#include "prism/prism/model.hpp"
#include "prism/training/trainer.hpp"

namespace prism::synthetic {

enum class PidVariant { unique_img, unique_txt, redundant, synergy_xor };
inline constexpr std::array<PidVariant, 4> kAllVariants{PidVariant::unique_img, PidVariant::unique_txt,
                                                        PidVariant::redundant, PidVariant::synergy_xor};

PidVariant parse_variant(const std::string& name);
std::string to_string(PidVariant v);

struct PidScenario {
  PidVariant variant = PidVariant::synergy_xor;
  std::size_t num_users = 5000;
  std::size_t num_items = 200;
  std::size_t seq_len = 20;
  double epsilon = 0.05;  // probability that a transition flips the class
  std::size_t codeword_dim = 16;
  double noise = 0.1;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Latent bits of one item; `cls` is the class the walk follows.
struct ItemLatent {
  int b_img = 0;
  int b_txt = 0;
  int cls = 0;
};

/// Class of an item under a variant: b_img, b_txt, the shared bit, or b_img xor b_txt.
int item_class(PidVariant v, int b_img, int b_txt);

struct PidDataset {
  PidScenario scenario;
  data::InteractionDataset dataset;  // raw ids 1..U and 1..N, modalities attached
  std::vector<ItemLatent> latents;   // indexed by item id, [0] unused
};

/// Items carry a bit per modality encoded as a fixed Gaussian codeword plus noise. Each
/// user walk draws the next item uniformly from the current item's class, flipped with
/// probability epsilon.
PidDataset generate_pid_dataset(const PidScenario& s);

/// interactions.tsv, image.prem, text.prem and ground_truth.json under `dir`.
void write_pid_dataset(const std::filesystem::path& dir, const PidDataset& d);

struct MIEstimate {
  double x1 = 0.0;     // I(T; X1) in bits
  double x2 = 0.0;     // I(T; X2)
  double joint = 0.0;  // I(T; X1, X2)
  std::size_t samples = 0;
};

struct Triple {
  int t = 0;
  int x1 = 0;
  int x2 = 0;
};

/// Plug-in mutual information from empirical joint counts.
MIEstimate discrete_mi(const std::vector<Triple>& samples);

/// (class of next item, b_img of current item, b_txt of current item) for every transition.
std::vector<Triple> transition_samples(const PidDataset& d);

enum class InteractionType { synergy, unique_x1, unique_x2, redundant, mixed, none };
std::string to_string(InteractionType t);

/// Dominant interaction from an MI signature; "none" when no input carries information.
InteractionType classify_interaction(const MIEstimate& mi, double tol);

/// The label a scenario should produce.
InteractionType expected_type(PidVariant v);

struct SpecializationEntry {
  PidVariant variant = PidVariant::synergy_xor;
  std::array<double, core::kNumExpertTypes> mean_weights{};  // over the test-split fusion trace
  std::array<double, core::kNumExpertTypes> expert_losses{};  // unweighted, mean over training batches
  core::Expert argmax = core::Expert::uni_i;
};

/// Mean fusion weights and interaction losses of a trained model on its scenario.
SpecializationEntry expert_specialization(PidVariant variant, const core::PrismModel<float>& model,
                                          const training::ExperimentData& data, const training::TrainConfig& cfg,
                                          std::uint64_t seed);

core::Expert argmax_expert(const std::array<double, core::kNumExpertTypes>& weights);

/// In-memory experiment input for a generated scenario.
training::ExperimentData experiment_data(const PidDataset& d);

}  // namespace prism::synthetic

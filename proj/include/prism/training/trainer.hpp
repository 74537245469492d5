#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <random>
#include <vector>

#include "prism/data/dataset.hpp"
#include "prism/training/config.hpp"

namespace prism::training {

/// Batch means of every loss term for one epoch.
struct LossReport {
  std::size_t epoch = 0;
  double rec = 0.0;
  std::array<double, core::kNumExpertTypes> components{};  // uni-i, uni-t, syn, rdn
  double exp = 0.0;
  double total = 0.0;
  std::size_t steps = 0;
  double seconds = 0.0;
  std::uint64_t peak_memory_bytes = 0;
};

/// L = L_rec + L_exp.
double total_loss(double rec, double exp);

struct StepRngs {
  std::mt19937_64 dropout;
  std::mt19937_64 masking;

  static StepRngs for_seed(std::uint64_t seed);
};

/// One pass over `batches`: losses, backward, Adam step. Joint mode back-propagates L
/// into every parameter. Staged mode keeps L_exp out of everything but the experts, and trains every
/// parameter on L_rec. Throws NumericError naming the first non-finite term.
LossReport train_epoch(core::PrismModel<float>& model, const std::vector<data::Batch>& batches,
                       num::Adam<float>& optimizer, bool staged_updates, StepRngs& rngs, std::size_t epoch = 0);

/// Dataset after filtering, with content aligned and the leave-one-out split.
struct ExperimentData {
  data::InteractionDataset dataset;
  data::SplitView split;
};

/// Leave-one-out split of an in-memory dataset, used as is.
ExperimentData in_memory_data(data::InteractionDataset dataset);

/// Loads the files named in `cfg.data` and fills in the data-dependent model fields.
ExperimentData load_experiment_data(TrainConfig& cfg);

/// Fills `cfg.model` sizes from an in-memory dataset.
void bind_dataset(TrainConfig& cfg, const data::InteractionDataset& ds);

/// Batches for one epoch; the shuffle depends on (seed, epoch) only.
std::vector<data::Batch> epoch_batches(const data::SplitView& split, const TrainConfig& cfg, std::uint64_t seed,
                                       std::size_t epoch);

/// Per-position fusion weights over every evaluable user's test context (raw ids).
core::FusionTrace build_fusion_trace(const core::PrismModel<float>& model, const data::InteractionDataset& ds,
                                     const data::SplitView& split, std::size_t batch_size = 256);

eval::Scorer model_scorer(const core::PrismModel<float>& model);

struct SeedResult {
  std::uint64_t seed = 0;
  std::size_t best_epoch = 0;
  std::size_t epochs_run = 0;
  eval::MetricsTable valid;  // at the best epoch
  eval::MetricsTable test;
  std::vector<LossReport> losses;
  std::array<double, core::kNumExpertTypes> mean_fusion_weights{};
  std::filesystem::path checkpoint;
  std::filesystem::path fusion_trace;
};

struct ExperimentReport {
  TrainConfig config;
  std::size_t num_users = 0;
  std::size_t num_items = 0;
  std::size_t num_interactions = 0;
  std::vector<SeedResult> seeds;
  std::vector<eval::MetricRow> test_summary;

  /// Deterministic report: no wall-clock or memory values.
  nlohmann::json to_json() const;
  /// Per-epoch seconds and peak memory, kept apart so the report stays reproducible.
  nlohmann::json timing_json() const;
};

struct RunOutputs {
  std::filesystem::path dir;  // empty: keep everything in memory
};

/// Trains one model per seed with early stopping on validation N@selection_k, restores
/// the best epoch, evaluates the test split, and writes checkpoints and fusion traces.
ExperimentReport run_experiment(const TrainConfig& cfg, const ExperimentData& data, const RunOutputs& outputs = {});

/// One-at-a-time lambda grid: the base config plus, for each expert, every grid value
/// with the other lambdas held at their base values.
inline constexpr std::array<double, 6> kLambdaGrid{0.01, 0.05, 0.1, 0.2, 0.5, 1.0};
std::vector<TrainConfig> lambda_grid(const TrainConfig& base);

}  // namespace prism::training

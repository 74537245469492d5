#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "prism/eval/metrics.hpp"
#include "prism/numerics/adam.hpp"
#include "prism/prism/model.hpp"

namespace prism::training {

using core::Expert;

struct DataConfig {
  std::filesystem::path interactions;
  std::filesystem::path image_embeddings;  // both or neither
  std::filesystem::path text_embeddings;
  std::size_t min_interactions = 5;  // k-core threshold; 0 disables filtering
};

struct OptimConfig {
  std::size_t batch_size = 256;
  std::size_t epochs = 200;
  std::size_t patience = 10;  // epochs without a validation gain; 0 disables early stopping
  num::AdamOptions adam;
  bool staged_updates = false;
  std::vector<std::uint64_t> seeds{0};
};

/// Everything a run needs, with all defaults materialized. `model.backbone.num_items`,
/// `model.image_dim` and `model.text_dim` are filled in from the data at load time.
struct TrainConfig {
  DataConfig data;
  core::ModelConfig model;
  OptimConfig train;
  eval::EvalOptions eval;
  std::size_t selection_k = 10;  // model selection on validation N@selection_k

  void validate() const;
};

/// Parses the config object. Unknown keys, wrong types and out-of-range values throw
/// ConfigError naming the field, e.g. "model.dim: expected a positive integer".
TrainConfig parse_train_config(const nlohmann::json& j);
nlohmann::json to_json(const TrainConfig& cfg);

/// Reads a JSON file; relative data paths resolve against the file's directory.
TrainConfig load_train_config(const std::filesystem::path& path);

}  // namespace prism::training

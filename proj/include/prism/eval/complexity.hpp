#pragma once

#include <cstdint>
#include <vector>

#include "json.hpp"
#include "prism/training/trainer.hpp"

namespace prism::eval {

struct ComplexityOptions {
  std::size_t warmup_epochs = 1;
  std::size_t timed_epochs = 3;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Wall-clock timing of one configuration.
struct EpochTiming {
  std::vector<double> seconds;  // timed epochs only
  double median_seconds = 0.0;
  std::uint64_t peak_memory_bytes = 0;
  std::size_t steps_per_epoch = 0;
  std::uint64_t expert_passes_per_step = 0;  // 0 with PRISM off
};

struct ComplexityReport {
  EpochTiming prism_off;
  EpochTiming prism_on;
  double ratio = 0.0;  // median on / median off

  nlohmann::json to_json() const;
};

/// Trains `cfg` for warm-up plus timed epochs and records per-epoch seconds, peak RSS and
/// the expert-pass count per step. The dataset must already be bound to `cfg`.
EpochTiming time_epochs(const training::TrainConfig& cfg, const training::ExperimentData& data,
                        const ComplexityOptions& options);

/// `cfg` timed with PRISM disabled and enabled, everything else equal.
ComplexityReport measure_complexity(const training::TrainConfig& cfg, const training::ExperimentData& data,
                                    const ComplexityOptions& options = {});

double median(std::vector<double> values);

}  // namespace prism::eval

#include "prism/eval/complexity.hpp"

#include <algorithm>
#include <chrono>

#include "prism/errors.hpp"
#include "prism/sysinfo.hpp"

namespace prism::eval {

void ComplexityOptions::validate() const {
  if (timed_epochs < 1) throw ConfigError("complexity: timed_epochs must be at least 1");
}

double median(std::vector<double> values) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

EpochTiming time_epochs(const training::TrainConfig& cfg, const training::ExperimentData& data,
                        const ComplexityOptions& options) {
  options.validate();
  cfg.validate();
  reset_peak_rss();
  core::PrismModel<float> model(cfg.model, data.dataset.content, options.seed);
  num::Adam<float> optimizer(model.parameters(), cfg.train.adam);
  auto rngs = training::StepRngs::for_seed(options.seed);

  EpochTiming out;
  std::uint64_t passes = 0;
  std::size_t steps = 0;
  const std::size_t total = options.warmup_epochs + options.timed_epochs;
  for (std::size_t epoch = 1; epoch <= total; ++epoch) {
    const auto batches = training::epoch_batches(data.split, cfg, options.seed, epoch);
    if (model.experts()) model.experts()->reset_forward_count();
    const auto start = std::chrono::steady_clock::now();
    training::train_epoch(model, batches, optimizer, cfg.train.staged_updates, rngs, epoch);
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (model.experts()) passes += model.experts()->forward_count();
    steps += batches.size();
    out.steps_per_epoch = batches.size();
    if (epoch > options.warmup_epochs) out.seconds.push_back(seconds);
  }
  out.median_seconds = median(out.seconds);
  out.peak_memory_bytes = peak_rss_bytes();
  out.expert_passes_per_step = steps > 0 ? passes / steps : 0;
  return out;
}

ComplexityReport measure_complexity(const training::TrainConfig& cfg, const training::ExperimentData& data,
                                    const ComplexityOptions& options) {
  training::TrainConfig off = cfg, on = cfg;
  off.model.prism_enabled = false;
  on.model.prism_enabled = true;
  ComplexityReport report;
  report.prism_off = time_epochs(off, data, options);
  report.prism_on = time_epochs(on, data, options);
  report.ratio = report.prism_off.median_seconds > 0.0
                     ? report.prism_on.median_seconds / report.prism_off.median_seconds
                     : 0.0;
  return report;
}

namespace {

nlohmann::json timing_json(const EpochTiming& t) {
  return {{"seconds_per_epoch", t.median_seconds},
          {"epoch_seconds", t.seconds},
          {"peak_memory_bytes", t.peak_memory_bytes},
          {"steps_per_epoch", t.steps_per_epoch},
          {"expert_passes_per_step", t.expert_passes_per_step}};
}

}  // namespace

nlohmann::json ComplexityReport::to_json() const {
  return {{"prism_off", timing_json(prism_off)}, {"prism_on", timing_json(prism_on)}, {"ratio", ratio}};
}

}  // namespace prism::eval

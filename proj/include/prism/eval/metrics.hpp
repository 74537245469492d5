#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <span>
#include <vector>

#include "prism/data/split.hpp"
#include "prism/numerics/tensor.hpp"

namespace prism::eval {

using data::ItemId;

struct RankResult {
  std::size_t user = 0;
  ItemId truth = 0;
  std::size_t rank = 0;  // 1-based
};

/// 1 + #items scoring strictly higher + #items tied with a smaller id. `scores` is indexed
/// by item id; index 0 (padding) never competes. Items flagged in `skip` are left out.
std::size_t rank_items(std::span<const float> scores, ItemId truth, const std::vector<bool>* skip = nullptr);
std::size_t rank_items(const std::map<ItemId, double>& scores, ItemId truth);

double recall_at_k(std::size_t rank, std::size_t k);
double ndcg_at_k(std::size_t rank, std::size_t k);

struct EvalOptions {
  std::vector<std::size_t> ks{10, 20};
  bool exclude_seen = false;
  std::size_t batch_size = 256;

  void validate() const;
};

enum class Target { valid, test };

struct MetricsTable {
  std::vector<std::size_t> ks;
  std::vector<double> recall;  // mean over evaluated users, one per k
  std::vector<double> ndcg;
  std::vector<RankResult> ranks;

  std::size_t users() const noexcept { return ranks.size(); }
  double recall_at(std::size_t k) const;
  double ndcg_at(std::size_t k) const;
};

/// Scores every catalog item for each row of a context batch: [B x (N+1)], column 0 ignored.
using Scorer = std::function<num::Tensor<float>(const data::Batch&)>;

/// Leave-one-out ranking over the full catalog for every evaluable user, in user order.
MetricsTable evaluate(const Scorer& scorer, const data::SplitView& split, Target target, std::size_t max_len,
                      const EvalOptions& options);

struct MetricRow {
  std::string metric;  // "recall" or "ndcg"
  std::size_t k = 0;
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation across seeds, 0 for a single seed
  std::size_t n_seeds = 0;
};

std::vector<MetricRow> summarize(const std::vector<MetricsTable>& per_seed);
void write_metrics_csv(std::ostream& out, const std::vector<MetricRow>& rows);

}  // namespace prism::eval

#include "prism/eval/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>

#include "prism/errors.hpp"

namespace prism::eval {

std::size_t rank_items(std::span<const float> scores, ItemId truth, const std::vector<bool>* skip) {
  if (truth < 1 || static_cast<std::size_t>(truth) >= scores.size()) {
    throw EvaluationError("ground-truth item " + std::to_string(truth) + " is not among the scored items");
  }
  const float target = scores[static_cast<std::size_t>(truth)];
  if (std::isnan(target)) throw EvaluationError("ground-truth item " + std::to_string(truth) + " has a NaN score");
  std::size_t rank = 1;
  for (std::size_t i = 1; i < scores.size(); ++i) {
    if (static_cast<ItemId>(i) == truth || (skip && (*skip)[i])) continue;
    if (scores[i] > target || (scores[i] == target && static_cast<ItemId>(i) < truth)) ++rank;
  }
  return rank;
}

std::size_t rank_items(const std::map<ItemId, double>& scores, ItemId truth) {
  const auto it = scores.find(truth);
  if (it == scores.end()) throw EvaluationError("ground-truth item " + std::to_string(truth) + " has no score");
  std::size_t rank = 1;
  for (const auto& [id, s] : scores) {
    if (id == truth) continue;
    if (s > it->second || (s == it->second && id < truth)) ++rank;
  }
  return rank;
}

double recall_at_k(std::size_t rank, std::size_t k) {
  if (k < 1) throw ConfigError("K must be at least 1");
  return rank >= 1 && rank <= k ? 1.0 : 0.0;
}

double ndcg_at_k(std::size_t rank, std::size_t k) {
  if (k < 1) throw ConfigError("K must be at least 1");
  return rank >= 1 && rank <= k ? 1.0 / std::log2(static_cast<double>(rank) + 1.0) : 0.0;
}

void EvalOptions::validate() const {
  if (ks.empty()) throw ConfigError("eval.ks must not be empty");
  for (auto k : ks)
    if (k < 1) throw ConfigError("eval.ks entries must be at least 1");
  if (batch_size < 1) throw ConfigError("eval batch size must be at least 1");
}

namespace {

std::size_t k_index(const std::vector<std::size_t>& ks, std::size_t k) {
  const auto it = std::find(ks.begin(), ks.end(), k);
  if (it == ks.end()) throw EvaluationError("K=" + std::to_string(k) + " was not evaluated");
  return static_cast<std::size_t>(it - ks.begin());
}

}  // namespace

double MetricsTable::recall_at(std::size_t k) const { return recall[k_index(ks, k)]; }
double MetricsTable::ndcg_at(std::size_t k) const { return ndcg[k_index(ks, k)]; }

MetricsTable evaluate(const Scorer& scorer, const data::SplitView& split, Target target, std::size_t max_len,
                      const EvalOptions& options) {
  options.validate();
  MetricsTable table;
  table.ks = options.ks;
  table.recall.assign(options.ks.size(), 0.0);
  table.ndcg.assign(options.ks.size(), 0.0);

  const auto users = split.evaluable_users();
  std::vector<bool> seen;
  for (std::size_t start = 0; start < users.size(); start += options.batch_size) {
    const std::size_t end = std::min(users.size(), start + options.batch_size);
    std::vector<std::vector<ItemId>> contexts;
    for (std::size_t i = start; i < end; ++i) {
      contexts.push_back(target == Target::test ? split.test_context(users[i]) : split.valid_context(users[i]));
    }
    const auto batch = data::make_context_batch(contexts, max_len);
    const auto scores = scorer(batch);
    if (scores.rows() != contexts.size() || scores.cols() != split.num_items + 1) {
      throw EvaluationError("scorer returned a " + std::to_string(scores.rows()) + "x" +
                            std::to_string(scores.cols()) + " score matrix");
    }
    for (std::size_t i = start; i < end; ++i) {
      const auto& us = split.users[users[i]];
      const ItemId truth = target == Target::test ? us.test_target : us.valid_target;
      const std::vector<bool>* skip = nullptr;
      if (options.exclude_seen) {
        seen.assign(split.num_items + 1, false);
        for (ItemId v : contexts[i - start]) seen[static_cast<std::size_t>(v)] = true;
        seen[static_cast<std::size_t>(truth)] = false;
        skip = &seen;
      }
      const std::size_t rank = rank_items(scores.row(i - start), truth, skip);
      table.ranks.push_back({users[i], truth, rank});
    }
  }
  // Ordered reduction over users.
  for (const auto& r : table.ranks) {
    for (std::size_t j = 0; j < table.ks.size(); ++j) {
      table.recall[j] += recall_at_k(r.rank, table.ks[j]);
      table.ndcg[j] += ndcg_at_k(r.rank, table.ks[j]);
    }
  }
  if (!table.ranks.empty()) {
    for (std::size_t j = 0; j < table.ks.size(); ++j) {
      table.recall[j] /= static_cast<double>(table.ranks.size());
      table.ndcg[j] /= static_cast<double>(table.ranks.size());
    }
  }
  return table;
}

std::vector<MetricRow> summarize(const std::vector<MetricsTable>& per_seed) {
  std::vector<MetricRow> rows;
  if (per_seed.empty()) return rows;
  const auto& ks = per_seed.front().ks;
  for (const char* metric : {"recall", "ndcg"}) {
    for (std::size_t j = 0; j < ks.size(); ++j) {
      std::vector<double> values;
      for (const auto& t : per_seed) {
        if (t.ks != ks) throw EvaluationError("seeds were evaluated at different K values");
        values.push_back(std::string(metric) == "recall" ? t.recall[j] : t.ndcg[j]);
      }
      MetricRow row{metric, ks[j], 0.0, 0.0, values.size()};
      for (double v : values) row.mean += v / static_cast<double>(values.size());
      if (values.size() > 1) {
        double ss = 0;
        for (double v : values) ss += (v - row.mean) * (v - row.mean);
        row.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
      }
      rows.push_back(row);
    }
  }
  return rows;
}

void write_metrics_csv(std::ostream& out, const std::vector<MetricRow>& rows) {
  out << "metric,K,mean,std,n_seeds\n";
  char buf[128];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%s,%zu,%.6f,%.6f,%zu\n", r.metric.c_str(), r.k, r.mean, r.std, r.n_seeds);
    out << buf;
  }
}

}  // namespace prism::eval

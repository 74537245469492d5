#include <cmath>
#include <random>
#include <sstream>

#include "doctest.h"
#include "prism/errors.hpp"
#include "prism/eval/complexity.hpp"
#include "prism/eval/metrics.hpp"
#include "prism/numerics/rng.hpp"
#include "prism/synthetic/toy.hpp"

using namespace prism;
using eval::ndcg_at_k;
using eval::rank_items;
using eval::recall_at_k;

namespace {

// User u walks u, u+1, ..., wrapping inside 1..n, so every target follows its last context item.
data::InteractionDataset ring_dataset(std::size_t users, std::size_t n, std::size_t len) {
  std::vector<std::pair<data::RawId, std::vector<data::RawId>>> raw;
  for (std::size_t u = 0; u < users; ++u) {
    std::vector<data::RawId> seq;
    for (std::size_t t = 0; t < len; ++t) seq.push_back(1 + (u + t) % n);
    raw.emplace_back(u + 1, seq);
  }
  return data::make_dataset(raw);
}

data::ItemId last_item(const data::Batch& b, std::size_t row) { return b.items[row * b.len + b.len - 1]; }

}  // namespace

TEST_CASE("rank_items examples") {
  const std::vector<float> unique_max{0, 0.1F, 5, 0.3F};
  CHECK(rank_items(unique_max, 2) == 1);
  const std::vector<float> flat{9, 1, 1, 1, 1};
  CHECK(rank_items(flat, 1) == 1);
  CHECK(rank_items(flat, 4) == 4);
  // a:3, b:2, truth:2, d:1 with b < truth in id order.
  const std::map<data::ItemId, double> scores{{1, 3.0}, {2, 2.0}, {3, 2.0}, {4, 1.0}};
  CHECK(rank_items(scores, 3) == 3);
  CHECK(rank_items(std::vector<float>{0, 3, 2, 2, 1}, 3) == 3);
  CHECK_THROWS_AS(rank_items(scores, 9), EvaluationError);
  CHECK_THROWS_AS(rank_items(unique_max, 7), EvaluationError);
  CHECK_THROWS_AS(rank_items(unique_max, 0), EvaluationError);
}

TEST_CASE("rank_items: padding never competes and skipped items drop out") {
  const std::vector<float> s{100, 1, 3, 2};
  CHECK(rank_items(s, 3) == 2);
  const std::vector<bool> skip{false, false, true, false};
  CHECK(rank_items(s, 3, &skip) == 1);
}

TEST_CASE("recall and ndcg examples") {
  CHECK(recall_at_k(1, 10) == 1.0);
  CHECK(ndcg_at_k(1, 10) == 1.0);
  CHECK(recall_at_k(11, 10) == 0.0);
  CHECK(ndcg_at_k(11, 10) == 0.0);
  CHECK(recall_at_k(10, 10) == 1.0);
  CHECK(recall_at_k(4, 10) == 1.0);
  CHECK(ndcg_at_k(4, 10) == doctest::Approx(0.4307).epsilon(1e-4));
  CHECK(ndcg_at_k(4, 10) == doctest::Approx(std::log(2.0) / std::log(5.0)).epsilon(1e-15));
  CHECK_THROWS_AS(recall_at_k(1, 0), ConfigError);
  CHECK_THROWS_AS(ndcg_at_k(1, 0), ConfigError);
}

TEST_CASE("ndcg never exceeds recall") {
  for (std::size_t rank = 1; rank <= 200; ++rank)
    for (std::size_t k = 1; k <= 40; ++k) CHECK(ndcg_at_k(rank, k) <= recall_at_k(rank, k));
}

TEST_CASE("evaluate: an oracle scorer gets every metric at 1") {
  const auto ds = ring_dataset(30, 12, 6);
  const auto split = data::leave_one_out_split(ds);
  // Item ids are dense and equal to the raw ids here.
  auto oracle = [&](const data::Batch& b) {
    num::Tensor<float> s({b.batch_size, split.num_items + 1}, 0.0F);
    for (std::size_t r = 0; r < b.batch_size; ++r) s.at(r, static_cast<std::size_t>(last_item(b, r) % 12 + 1)) = 1.0F;
    return s;
  };
  eval::EvalOptions opts;
  opts.batch_size = 7;
  for (auto target : {eval::Target::valid, eval::Target::test}) {
    const auto t = eval::evaluate(oracle, split, target, 8, opts);
    CHECK(t.users() == 30);
    for (std::size_t k : {10, 20}) {
      CHECK(t.recall_at(k) == 1.0);
      CHECK(t.ndcg_at(k) == 1.0);
    }
  }
}

TEST_CASE("evaluate: uniform random scores give recall near K / |I|") {
  const std::size_t n = 500;
  double hits = 0, users = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto ds = ring_dataset(2000, n, 4);
    const auto split = data::leave_one_out_split(ds);
    auto rng = num::make_rng(seed, num::SeedStream::synthetic);
    auto random_scorer = [&](const data::Batch& b) {
      num::Tensor<float> s({b.batch_size, n + 1});
      for (auto& v : s.values()) v = static_cast<float>(num::uniform01(rng));
      return s;
    };
    const auto t = eval::evaluate(random_scorer, split, eval::Target::test, 4, {});
    hits += t.recall_at(10) * static_cast<double>(t.users());
    users += static_cast<double>(t.users());
  }
  const double p = 10.0 / n;
  const double se = std::sqrt(p * (1 - p) / users);
  CHECK(std::abs(hits / users - p) < 3 * se);
}

TEST_CASE("evaluate: rank based, order independent, exclude_seen") {
  const auto ds = ring_dataset(40, 15, 6);
  const auto split = data::leave_one_out_split(ds);
  auto scorer = [&](const data::Batch& b) {
    num::Tensor<float> s({b.batch_size, split.num_items + 1});
    for (std::size_t r = 0; r < b.batch_size; ++r)
      for (std::size_t i = 0; i <= split.num_items; ++i)
        s.at(r, i) = static_cast<float>((i * 7 + static_cast<std::size_t>(last_item(b, r)) * 3) % 11);
    return s;
  };
  auto transformed = [&](const data::Batch& b) {
    auto s = scorer(b);
    for (auto& v : s.values()) v = 3.0F * v + 7.0F;
    return s;
  };
  eval::EvalOptions one, many;
  one.batch_size = 1;
  many.batch_size = 256;
  const auto a = eval::evaluate(scorer, split, eval::Target::test, 5, one);
  const auto b = eval::evaluate(transformed, split, eval::Target::test, 5, many);
  REQUIRE(a.users() == b.users());
  for (std::size_t i = 0; i < a.users(); ++i) CHECK(a.ranks[i].rank == b.ranks[i].rank);
  CHECK(a.recall == b.recall);
  CHECK(a.ndcg == b.ndcg);
  for (std::size_t j = 0; j < a.ks.size(); ++j) CHECK(a.ndcg[j] <= a.recall[j]);

  // Context items scored highest: excluding them lifts the truth.
  auto seen_first = [&](const data::Batch& bt) {
    num::Tensor<float> s({bt.batch_size, split.num_items + 1}, 0.0F);
    for (std::size_t r = 0; r < bt.batch_size; ++r) {
      for (std::size_t c = 0; c < bt.len; ++c) {
        const auto v = bt.items[r * bt.len + c];
        if (v != 0) s.at(r, static_cast<std::size_t>(v)) = 10.0F;
      }
    }
    return s;
  };
  eval::EvalOptions ex;
  ex.exclude_seen = true;
  const auto plain = eval::evaluate(seen_first, split, eval::Target::test, 5, {});
  const auto excl = eval::evaluate(seen_first, split, eval::Target::test, 5, ex);
  for (std::size_t i = 0; i < plain.users(); ++i) CHECK(excl.ranks[i].rank < plain.ranks[i].rank);
}

TEST_CASE("evaluate: the truth is never excluded even if seen") {
  // User 1 repeats item 2, so the test target also sits in its context.
  const auto ds = data::make_dataset({{1, {1, 2, 3, 2, 2}}, {2, {3, 1, 2, 3, 1}}});
  const auto split = data::leave_one_out_split(ds);
  auto scorer = [&](const data::Batch& b) {
    num::Tensor<float> s({b.batch_size, split.num_items + 1}, 0.0F);
    for (std::size_t r = 0; r < b.batch_size; ++r) s.at(r, 2) = 5.0F;
    return s;
  };
  eval::EvalOptions ex;
  ex.exclude_seen = true;
  const auto t = eval::evaluate(scorer, split, eval::Target::test, 5, ex);
  CHECK(t.ranks[0].rank == 1);
}

TEST_CASE("evaluate: malformed scorer output is an evaluation error") {
  const auto ds = ring_dataset(5, 6, 5);
  const auto split = data::leave_one_out_split(ds);
  auto narrow = [&](const data::Batch& b) { return num::Tensor<float>({b.batch_size, 3}, 0.0F); };
  CHECK_THROWS_AS(eval::evaluate(narrow, split, eval::Target::test, 5, {}), EvaluationError);
  eval::EvalOptions bad;
  bad.ks = {10, 0};
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("summarize and the metrics CSV") {
  eval::MetricsTable a, b, c;
  for (auto* t : {&a, &b, &c}) t->ks = {10, 20};
  a.recall = {0.1, 0.2};
  b.recall = {0.2, 0.3};
  c.recall = {0.3, 0.7};
  a.ndcg = {0.05, 0.1};
  b.ndcg = {0.05, 0.1};
  c.ndcg = {0.05, 0.1};

  const auto single = eval::summarize({a});
  REQUIRE(single.size() == 4);
  CHECK(single[0].metric == "recall");
  CHECK(single[0].k == 10);
  CHECK(single[0].mean == a.recall[0]);
  CHECK(single[0].std == 0.0);
  CHECK(single[0].n_seeds == 1);

  const auto rows = eval::summarize({a, b, c});
  CHECK(rows[0].mean == doctest::Approx(0.2));
  CHECK(rows[0].std == doctest::Approx(0.1));  // sample std of 0.1, 0.2, 0.3
  CHECK(rows[1].k == 20);
  CHECK(rows[1].mean == doctest::Approx(0.4));
  CHECK(rows[1].std == doctest::Approx(std::sqrt(((0.2 * 0.2) + (0.1 * 0.1) + (0.3 * 0.3)) / 2)));
  CHECK(rows[2].metric == "ndcg");
  CHECK(rows[2].std == doctest::Approx(0.0));

  std::ostringstream out;
  eval::write_metrics_csv(out, rows);
  CHECK(out.str() ==
        "metric,K,mean,std,n_seeds\n"
        "recall,10,0.200000,0.100000,3\n"
        "recall,20,0.400000,0.264575,3\n"
        "ndcg,10,0.050000,0.000000,3\n"
        "ndcg,20,0.100000,0.000000,3\n");

  eval::MetricsTable other;
  other.ks = {5};
  other.recall = {0.1};
  other.ndcg = {0.1};
  CHECK_THROWS_AS(eval::summarize({a, other}), EvaluationError);
}

TEST_CASE("median") {
  CHECK(eval::median({}) == 0.0);
  CHECK(eval::median({3.0, 1.0, 2.0}) == 2.0);
  CHECK(eval::median({4.0, 1.0, 3.0, 2.0}) == 2.5);
}

namespace {

training::TrainConfig toy_train_config(const data::InteractionDataset& ds) {
  training::TrainConfig cfg;
  cfg.model.backbone.dim = 8;
  cfg.model.backbone.max_len = 10;
  cfg.model.backbone.blocks = 1;
  cfg.model.backbone.heads = 2;
  cfg.model.expert_hidden = 8;
  cfg.model.reweight_hidden = 8;
  cfg.train.batch_size = 32;
  training::bind_dataset(cfg, ds);
  return cfg;
}

}  // namespace

TEST_CASE("complexity: expert passes per step follow N_exp (1 + M)") {
  const auto data = training::in_memory_data(synthetic::memorization_dataset({}));
  auto cfg = toy_train_config(data.dataset);
  eval::ComplexityOptions opts;
  opts.timed_epochs = 2;
  const auto report = eval::measure_complexity(cfg, data, opts);
  CHECK(report.prism_on.expert_passes_per_step == 12);
  CHECK(report.prism_off.expert_passes_per_step == 0);
  CHECK(report.prism_on.seconds.size() == 2);
  CHECK(report.prism_on.steps_per_epoch == 4);
  CHECK(report.ratio > 0.0);
  const auto j = report.to_json();
  CHECK(j.at("prism_on").at("expert_passes_per_step") == 12);
  CHECK(j.at("ratio").get<double>() == report.ratio);

  cfg.model.experts_per_type = 2;
  CHECK(eval::time_epochs(cfg, data, opts).expert_passes_per_step == 24);

  opts.timed_epochs = 0;
  CHECK_THROWS_AS(opts.validate(), ConfigError);
}

TEST_CASE("complexity: PRISM off against itself is a ratio near 1") {
  synthetic::MemorizationSpec spec;
  spec.num_users = 1500;
  spec.num_items = 200;
  spec.seq_len = 11;
  const auto data = training::in_memory_data(synthetic::memorization_dataset(spec));
  auto cfg = toy_train_config(data.dataset);
  cfg.model.prism_enabled = false;
  eval::ComplexityOptions opts;
  opts.timed_epochs = 5;
  const double a = eval::time_epochs(cfg, data, opts).median_seconds;
  const double b = eval::time_epochs(cfg, data, opts).median_seconds;
  CHECK(b / a == doctest::Approx(1.0).epsilon(0.10));
}

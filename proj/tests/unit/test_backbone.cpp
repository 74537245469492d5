#include <cmath>

#include "doctest.h"
#include "prism/backbone/backbone.hpp"
#include "prism/errors.hpp"
#include "prism/numerics/adam.hpp"
#include "prism/numerics/gradcheck.hpp"
#include "prism/numerics/rng.hpp"

using namespace prism;
using namespace prism::backbone;
using num::Tensor;

namespace {

// -log(sigmoid(x)) evaluated directly in long double as an independent reference.
double neg_log_sigmoid(double x) {
  const long double s = 1.0L / (1.0L + std::exp(-static_cast<long double>(x)));
  return static_cast<double>(-std::log(s));
}

Var<double> constant_vec(std::vector<double> v) {
  const std::size_t n = v.size();
  return Var<double>::constant(Tensor<double>({n}, std::move(v)));
}

Tensor<double> random_tensor(std::size_t r, std::size_t c, std::uint64_t seed) {
  auto rng = num::make_rng(seed, num::SeedStream::synthetic);
  return num::normal_table<double>(r, c, 1.0, rng);
}

struct Pipeline {
  std::mt19937_64 rng;
  EmbeddingTables<double> tables;
  std::unique_ptr<SequenceEncoder<double>> encoder;

  Pipeline(EncoderKind kind, std::uint64_t seed, std::size_t num_items = 9, std::size_t max_len = 5,
           std::size_t dim = 4)
      : rng(num::make_rng(seed, num::SeedStream::init)), tables(num_items, max_len, dim, rng) {
    BackboneConfig cfg;
    cfg.num_items = num_items;
    cfg.max_len = max_len;
    cfg.dim = dim;
    cfg.blocks = 2;
    cfg.heads = 2;
    cfg.dropout = 0.0;
    cfg.encoder = kind;
    encoder = make_encoder<double>(cfg, rng);
  }

  num::ParameterList<double> parameters() const {
    num::ParameterList<double> out;
    tables.collect_parameters("emb.", out);
    encoder->collect_parameters("enc.", out);
    return out;
  }
};

}  // namespace

TEST_CASE("embed_positions") {
  auto rng = num::make_rng(1, num::SeedStream::init);
  EmbeddingTables<double> tables(5, 3, 2, rng);

  SUBCASE("all-padding row is zero") {
    const std::vector<std::int64_t> ids{0, 0, 0, 1, 2, 3};
    const auto fused = Var<double>::constant(random_tensor(6, 2, 3));
    const auto out = tables.embed_positions(ids, 2, 3, &fused);
    for (std::size_t r = 0; r < 3; ++r)
      for (std::size_t c = 0; c < 2; ++c) CHECK(out.value().at(r, c) == 0.0);
  }
  SUBCASE("zero fused vectors give id + position") {
    const std::vector<std::int64_t> ids{4, 0, 2};
    const auto fused = Var<double>::constant(Tensor<double>({3, 2}, 0.0));
    const auto out = tables.embed_positions(ids, 1, 3, &fused);
    const auto& items = tables.items().value();
    const auto& pos = tables.positions().value();
    for (std::size_t c = 0; c < 2; ++c) {
      CHECK(out.value().at(0, c) == items.at(4, c) + pos.at(0, c));
      CHECK(out.value().at(1, c) == 0.0);
      CHECK(out.value().at(2, c) == items.at(2, c) + pos.at(2, c));
    }
  }
  SUBCASE("hand-summed single position") {
    EmbeddingTables<double> small(2, 1, 2, rng);
    num::ParameterList<double> params;
    small.collect_parameters("", params);
    params[0].var.mutable_value() = Tensor<double>::matrix(3, 2, {0, 0, 0.5, -1, 2, 3});
    params[1].var.mutable_value() = Tensor<double>::matrix(1, 2, {0.25, 0.125});
    const std::vector<std::int64_t> ids{2};
    const auto fused = Var<double>::constant(Tensor<double>::matrix(1, 2, {1.5, -4}));
    const auto out = small.embed_positions(ids, 1, 1, &fused);
    CHECK(out.value().at(0, 0) == 2 + 0.25 + 1.5);
    CHECK(out.value().at(0, 1) == 3 + 0.125 - 4);
  }
  SUBCASE("length beyond max_len") {
    const std::vector<std::int64_t> ids{1, 2, 3, 4};
    CHECK_THROWS_AS(tables.embed_positions(ids, 1, 4, nullptr), ConfigError);
  }
  SUBCASE("padding row initialised at zero") {
    for (std::size_t c = 0; c < 2; ++c) CHECK(tables.items().value().at(0, c) == 0.0);
  }
}

TEST_CASE("encode causality is bit-exact") {
  for (auto kind : {EncoderKind::attention, EncoderKind::mean_pool}) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      Pipeline p(kind, seed, 9, 6, 4);
      const std::size_t len = 6;
      const num::RowMask valid{0, 1, 1, 1, 1, 1};
      auto x = random_tensor(len, 4, 100 + seed);
      for (std::size_t c = 0; c < 4; ++c) x.at(0, c) = 0.0;
      const auto base = p.encoder->encode(Var<double>::constant(x), 1, len, valid, nullptr);
      for (std::size_t t = 1; t + 1 < len; ++t) {
        auto y = x;
        for (std::size_t s = t + 1; s < len; ++s)
          for (std::size_t c = 0; c < 4; ++c) y.at(s, c) += 0.75 * static_cast<double>(c + s);
        const auto out = p.encoder->encode(Var<double>::constant(y), 1, len, valid, nullptr);
        for (std::size_t s = 0; s <= t; ++s)
          for (std::size_t c = 0; c < 4; ++c) CHECK(out.value().at(s, c) == base.value().at(s, c));
        bool later_changed = false;
        for (std::size_t c = 0; c < 4; ++c) later_changed |= out.value().at(t + 1, c) != base.value().at(t + 1, c);
        CHECK(later_changed);
      }
      for (std::size_t c = 0; c < 4; ++c) CHECK(base.value().at(0, c) == 0.0);
    }
  }
}

TEST_CASE("encode with a single position has no cross-position flow") {
  Pipeline p(EncoderKind::attention, 4, 9, 5, 4);
  const auto x = random_tensor(2, 4, 8);
  // Two sequences of length 1; each output must match encoding that row alone.
  const auto both = p.encoder->encode(Var<double>::constant(x), 2, 1, {1, 1}, nullptr);
  for (std::size_t r = 0; r < 2; ++r) {
    Tensor<double> one({1, 4});
    for (std::size_t c = 0; c < 4; ++c) one.at(0, c) = x.at(r, c);
    const auto alone = p.encoder->encode(Var<double>::constant(one), 1, 1, {1}, nullptr);
    for (std::size_t c = 0; c < 4; ++c) CHECK(both.value().at(r, c) == alone.value().at(0, c));
  }
}

TEST_CASE("score") {
  const auto table = Tensor<double>::matrix(3, 2, {0, 0, 3, 4, 0.6, 0.8});
  CHECK(score<double>(std::vector<double>{1, 2}, table, 1) == 11.0);
  CHECK(score<double>(std::vector<double>{0.6, 0.8}, table, 2) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(score<double>(std::vector<double>{-0.8, 0.6}, table, 2) == doctest::Approx(0.0));
  CHECK(score<double>(std::vector<double>{1, 2}, table, 0) == 0.0);
  for (double a : {-2.0, 0.5, 3.0}) {
    CHECK(score<double>(std::vector<double>{a * 1, a * 2}, table, 1) == doctest::Approx(a * 11.0));
  }
  CHECK_THROWS_AS(score<double>(std::vector<double>{1, 2}, table, 3), ConfigError);

  auto rng = num::make_rng(2, num::SeedStream::init);
  EmbeddingTables<double> tables(4, 2, 3, rng);
  const auto hidden = Var<double>::constant(random_tensor(2, 3, 5));
  const std::vector<std::int64_t> ids{3, 1};
  const auto rows = score_rows(hidden, tables, ids);
  const auto cands = score_candidates(hidden, tables, ids);
  for (std::size_t r = 0; r < 2; ++r) {
    CHECK(rows.value()[r] == doctest::Approx(score<double>(hidden.value().row(r), tables.items().value(), ids[r])));
    for (std::size_t c = 0; c < 2; ++c) {
      CHECK(cands.value().at(r, c) ==
            doctest::Approx(score<double>(hidden.value().row(r), tables.items().value(), ids[c])));
    }
  }
}

TEST_CASE("bce_loss") {
  CHECK(bce_loss(constant_vec({0}), constant_vec({0}), {1}).item() == doctest::Approx(2 * std::log(2.0)).epsilon(1e-12));
  CHECK(bce_loss(constant_vec({0}), constant_vec({0}), {1}).item() == doctest::Approx(1.3863).epsilon(1e-4));
  CHECK(bce_loss(constant_vec({40}), constant_vec({-40}), {1}).item() < 1e-15);
  CHECK(std::isfinite(bce_loss(constant_vec({-1000}), constant_vec({1000}), {1}).item()));
  CHECK(bce_loss(constant_vec({-1000}), constant_vec({1000}), {1}).item() == doctest::Approx(2000.0));

  const std::vector<double> pos{0.3, -1.2, 2.5}, neg{-0.7, 0.4, 1.1};
  double expected = 0.0;
  for (std::size_t i : {0, 2}) expected += neg_log_sigmoid(pos[i]) + neg_log_sigmoid(-neg[i]);
  CHECK(bce_loss(constant_vec(pos), constant_vec(neg), {1, 0, 1}).item() == doctest::Approx(expected / 2).epsilon(1e-12));

  SUBCASE("fully masked gives zero and zero gradient") {
    auto p = Var<double>::parameter(Tensor<double>({3}, std::vector<double>{1, 2, 3}));
    auto n = Var<double>::parameter(Tensor<double>({3}, std::vector<double>{1, 2, 3}));
    const auto loss = bce_loss(p, n, {0, 0, 0});
    CHECK(loss.item() == 0.0);
    num::backward(loss);
    for (double g : p.grad().values()) CHECK(g == 0.0);
    for (double g : n.grad().values()) CHECK(g == 0.0);
  }
}

TEST_CASE("bpr_loss") {
  CHECK(bpr_loss(constant_vec({0.7}), constant_vec({0.7}), {1}).item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(bpr_loss(constant_vec({1}), constant_vec({0}), {1}).item() == doctest::Approx(neg_log_sigmoid(1)).epsilon(1e-12));
  CHECK(bpr_loss(constant_vec({1}), constant_vec({0}), {1}).item() == doctest::Approx(0.3133).epsilon(1e-4));
  CHECK(bpr_loss(constant_vec({0}), constant_vec({1}), {1}).item() == doctest::Approx(1.3133).epsilon(1e-4));
  CHECK(bpr_loss(constant_vec({50}), constant_vec({-50}), {1}).item() < 1e-15);
}

TEST_CASE("losses are non-negative and decrease with the margin") {
  for (auto kind : {RecLoss::bce, RecLoss::bpr}) {
    double prev = INFINITY;
    for (int k = -40; k <= 40; ++k) {
      const double d = 0.25 * k;
      const double loss = recommendation_loss(kind, constant_vec({d / 2}), constant_vec({-d / 2}), {1}).item();
      CHECK(loss >= 0.0);
      CHECK(loss < prev);
      prev = loss;
    }
  }
  CHECK(parse_rec_loss("bpr") == RecLoss::bpr);
  CHECK_THROWS_AS(parse_rec_loss("hinge"), ConfigError);
}

TEST_CASE("padding neutrality and gradient check through the full backbone") {
  for (auto kind : {EncoderKind::attention, EncoderKind::mean_pool}) {
    for (auto loss_kind : {RecLoss::bce, RecLoss::bpr}) {
      Pipeline p(kind, 11, 9, 4, 4);
      const std::size_t batch = 2, len = 4;
      const std::vector<std::int64_t> ids{0, 0, 3, 5, 1, 2, 3, 4};
      const num::RowMask valid{0, 0, 1, 1, 1, 1, 1, 1};
      const std::vector<std::int64_t> pos_ids{0, 0, 5, 6, 2, 3, 4, 9};
      const std::vector<std::int64_t> neg_ids{0, 0, 8, 1, 7, 7, 1, 2};

      auto run = [&](const Tensor<double>& fused_values, std::vector<std::int64_t> pos, std::vector<std::int64_t> neg) {
        const auto fused = Var<double>::constant(fused_values);
        const auto x = p.tables.embed_positions(ids, batch, len, &fused);
        const auto h = p.encoder->encode(x, batch, len, valid, nullptr);
        return recommendation_loss(loss_kind, score_rows(h, p.tables, pos), score_rows(h, p.tables, neg), valid);
      };

      const auto fused_a = random_tensor(batch * len, 4, 21);
      auto fused_b = fused_a;
      for (std::size_t c = 0; c < 4; ++c) {
        fused_b.at(0, c) = 7.0;
        fused_b.at(1, c) = -3.0 * static_cast<double>(c);
      }
      auto pos_b = pos_ids, neg_b = neg_ids;
      pos_b[0] = 4;
      neg_b[1] = 9;

      for (auto& prm : p.parameters()) prm.var.grad().fill(0.0);
      const auto la = run(fused_a, pos_ids, neg_ids);
      num::backward(la);
      std::vector<Tensor<double>> grads_a;
      for (auto& prm : p.parameters()) {
        grads_a.push_back(prm.var.grad());
        prm.var.grad().fill(0.0);
      }
      const auto lb = run(fused_b, pos_b, neg_b);
      num::backward(lb);
      CHECK(la.item() == lb.item());
      const auto params = p.parameters();
      for (std::size_t i = 0; i < params.size(); ++i) CHECK(params[i].var.grad() == grads_a[i]);

      const auto result = num::grad_check(params, [&] { return run(fused_a, pos_ids, neg_ids); }, 1e-6);
      CHECK(result.max_relative_error < 1e-5);
    }
  }
}

TEST_CASE("padding row stays zero through optimisation") {
  auto rng = num::make_rng(5, num::SeedStream::init);
  EmbeddingTables<float> tables(6, 4, 8, rng);
  BackboneConfig cfg;
  cfg.num_items = 6;
  cfg.max_len = 4;
  cfg.dim = 8;
  cfg.dropout = 0.2;
  auto encoder = make_encoder<float>(cfg, rng);
  num::ParameterList<float> params;
  tables.collect_parameters("", params);
  encoder->collect_parameters("enc.", params);
  num::AdamOptions opts;
  opts.learning_rate = 0.05;
  num::Adam<float> adam(params, opts);
  auto drop_rng = num::make_rng(5, num::SeedStream::dropout);
  const std::vector<std::int64_t> ids{0, 1, 2, 3, 0, 0, 4, 5};
  const num::RowMask valid{0, 1, 1, 1, 0, 0, 1, 1};
  const std::vector<std::int64_t> pos{0, 2, 3, 4, 0, 0, 5, 6};
  const std::vector<std::int64_t> neg{0, 6, 1, 1, 0, 0, 2, 3};
  for (int step = 0; step < 20; ++step) {
    adam.zero_grad();
    const auto h = encoder->encode(tables.embed_positions(ids, 2, 4, nullptr), 2, 4, valid, &drop_rng);
    const auto loss = bce_loss(score_rows(h, tables, pos), score_rows(h, tables, neg), valid);
    num::backward(loss);
    adam.step();
  }
  for (std::size_t c = 0; c < 8; ++c) CHECK(tables.items().value().at(0, c) == 0.0F);
}

TEST_CASE("backbone config validation") {
  BackboneConfig cfg;
  cfg.num_items = 10;
  CHECK_NOTHROW(cfg.validate());
  cfg.heads = 3;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.heads = 2;
  cfg.dropout = 1.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  CHECK(parse_encoder_kind("mean_pool") == EncoderKind::mean_pool);
  CHECK_THROWS_AS(parse_encoder_kind("gru"), ConfigError);
}

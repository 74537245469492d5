#include "prism/prism/gradcheck_suite.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include "prism/errors.hpp"
#include "prism/numerics/gradcheck.hpp"
#include "prism/numerics/rng.hpp"
#include "prism/prism/model.hpp"

namespace prism::core {

namespace {

using D = double;
using Check = std::function<double(std::uint64_t)>;

constexpr double kKinkGap = 1e-3;

struct Bag : num::ParamModule<D> {
  num::ParameterList<D> list;
  void collect_parameters(const std::string& prefix, num::ParameterList<D>& out) const override {
    for (const auto& p : list) out.push_back({prefix + p.name, p.var});
  }
  Var<D> add(const std::string& name, Tensor<D> t) {
    list.push_back({name, Var<D>::parameter(std::move(t))});
    return list.back().var;
  }
  void absorb(const num::ParamModule<D>& m, const std::string& prefix) { m.collect_parameters(prefix, list); }
};

Tensor<D> normal(std::size_t r, std::size_t c, std::mt19937_64& rng) { return num::normal_table<D>(r, c, 1.0, rng); }

// Random linear read-out so every output entry gets a distinct upstream gradient. The
// 1/sqrt(n) scale keeps the loss O(1), which bounds the finite-difference round-off.
Var<D> project(const Var<D>& out, std::mt19937_64& rng) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(out.size()));
  return num::sum(num::mul(out, Var<D>::constant(num::normal_table<D>(out.rows(), out.cols(), scale, rng))));
}

double run(const Bag& bag, const std::function<Var<D>()>& loss, double eps) {
  return num::grad_check(bag.parameters(), loss, eps).max_relative_error;
}

// Sequence batch of 2 x 4 with one left-padded row.
constexpr std::size_t kB = 2;
constexpr std::size_t kL = 4;
const RowMask kValid{0, 1, 1, 1, 1, 1, 1, 1};
const std::vector<std::int64_t> kIds{0, 3, 1, 6, 2, 5, 4, 6};

double check_linear(std::uint64_t seed, double eps) {
  auto rng = num::make_rng(seed, num::SeedStream::init, 1);
  num::Linear<D> layer(3, 4, rng);
  Bag bag;
  bag.absorb(layer, "");
  auto x = bag.add("x", normal(5, 3, rng));
  const auto proj_seed = rng();
  return run(bag, [&] {
    std::mt19937_64 r(proj_seed);
    return project(layer.forward(x), r);
  }, eps);
}

double check_mlp(std::uint64_t seed, double eps) {
  auto rng = num::make_rng(seed, num::SeedStream::init, 2);
  num::Mlp<D> mlp(3, 6, 2, rng);
  Bag bag;
  bag.absorb(mlp, "");
  auto x = bag.add("x", normal(5, 3, rng));
  const auto proj_seed = rng();
  return run(bag, [&] {
    std::mt19937_64 r(proj_seed);
    return project(mlp.forward(x), r);
  }, eps);
}

double check_layer_norm(std::uint64_t seed, double eps) {
  auto rng = num::make_rng(seed, num::SeedStream::init, 3);
  num::LayerNorm<D> norm(4);
  Bag bag;
  bag.absorb(norm, "");
  for (auto& p : bag.list) p.var.mutable_value() = normal(p.var.rows(), p.var.cols(), rng);
  auto x = bag.add("x", normal(5, 4, rng));
  const auto proj_seed = rng();
  return run(bag, [&] {
    std::mt19937_64 r(proj_seed);
    return project(norm.forward(x), r);
  }, eps);
}

double check_embeddings(std::uint64_t seed, double eps) {
  auto rng = num::make_rng(seed, num::SeedStream::init, 4);
  backbone::EmbeddingTables<D> tables(6, kL, 4, rng);
  Bag bag;
  bag.absorb(tables, "");
  auto fused = bag.add("fused", normal(kB * kL, 4, rng));
  const auto proj_seed = rng();
  return run(bag, [&] {
    std::mt19937_64 r(proj_seed);
    return project(tables.embed_positions(kIds, kB, kL, &fused), r);
  }, eps);
}

double check_encoder(std::uint64_t seed, double eps, backbone::EncoderKind kind) {
  auto rng = num::make_rng(seed, num::SeedStream::init, kind == backbone::EncoderKind::attention ? 5 : 6);
  backbone::BackboneConfig cfg;
  cfg.num_items = 6;
  cfg.max_len = kL;
  cfg.dim = 4;
  cfg.blocks = 1 + seed % 2;
  cfg.heads = 2;
  cfg.dropout = 0.0;
  cfg.encoder = kind;
  auto enc = backbone::make_encoder<D>(cfg, rng);
  Bag bag;
  bag.absorb(*enc, "");
  auto x = bag.add("x", num::mask_rows(Var<D>::constant(normal(kB * kL, 4, rng)), kValid).value());
  const auto proj_seed = rng();
  return run(bag, [&] {
    std::mt19937_64 r(proj_seed);
    return project(enc->encode(x, kB, kL, kValid, nullptr), r);
  }, eps);
}

double check_rec_loss(std::uint64_t seed, double eps, backbone::RecLoss kind) {
  auto rng = num::make_rng(seed, num::SeedStream::init, kind == backbone::RecLoss::bce ? 7 : 8);
  backbone::EmbeddingTables<D> tables(6, kL, 4, rng);
  Bag bag;
  bag.absorb(tables, "");
  auto hidden = bag.add("hidden", normal(kB * kL, 4, rng));
  const std::vector<std::int64_t> pos{0, 1, 6, 4, 5, 3, 6, 1};
  const std::vector<std::int64_t> neg{0, 2, 5, 3, 1, 1, 2, 4};
  return run(bag, [&] {
    return backbone::recommendation_loss(kind, backbone::score_rows(hidden, tables, pos),
                                         backbone::score_rows(hidden, tables, neg), kValid);
  }, eps);
}

double check_expert_bank(std::uint64_t seed, double eps) {
  auto rng = num::make_rng(seed, num::SeedStream::init, 9);
  const std::vector<Expert> types{kAllExperts.begin(), kAllExperts.end()};
  ExpertBank<D> bank(3, 2, 5, 4, types, {seed, seed + 1, seed + 2, seed + 3});
  Bag bag;
  bag.absorb(bank, "");
  auto image = bag.add("image", normal(5, 3, rng));
  auto text = bag.add("text", normal(5, 2, rng));
  const auto proj_seed = rng();
  return run(bag, [&] {
    std::mt19937_64 r(proj_seed);
    std::vector<Var<D>> terms;
    for (std::size_t s = 0; s < bank.size(); ++s) terms.push_back(project(bank.forward(s, image, text), r));
    return num::add_n(terms);
  }, eps);
}

double distance(const Tensor<D>& a, const Tensor<D>& b, std::size_t r) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t c = 0; c < a.cols(); ++c) {
    ab += a.at(r, c) * b.at(r, c);
    aa += a.at(r, c) * a.at(r, c);
    bb += b.at(r, c) * b.at(r, c);
  }
  return 1.0 - ab / std::sqrt(aa * bb);
}

// Smallest margin >= base whose hinge argument stays kKinkGap away from zero in every
// row, for anchors a, positives p, negatives n.
double margin_off_kink(const std::vector<const Tensor<D>*>& triplet_rows, double base) {
  const auto& a = *triplet_rows[0];
  const auto& p = *triplet_rows[1];
  const auto& n = *triplet_rows[2];
  double margin = base;
  for (int attempt = 0; attempt < 1000; ++attempt) {
    bool clear = true;
    for (std::size_t r = 0; r < a.rows(); ++r) {
      if (std::abs(margin + distance(a, p, r) - distance(a, n, r)) < kKinkGap) clear = false;
    }
    if (clear) return margin;
    margin += 2 * kKinkGap;
  }
  throw NumericError("no margin clear of the hinge kink");
}

double check_interaction_losses(std::uint64_t seed, double eps) {
  auto rng = num::make_rng(seed, num::SeedStream::init, 10);
  Bag bag;
  const std::size_t n = 6;
  auto y = bag.add("y", normal(n, 5, rng));
  auto y_img = bag.add("y_img", normal(n, 5, rng));
  auto y_txt = bag.add("y_txt", normal(n, 5, rng));
  Tensor<D> weights({n}, std::vector<D>(n, 0.0));
  double total = 0;
  for (std::size_t r = 0; r < n; ++r) total += weights[r] = 0.5 + num::uniform01(rng);
  for (std::size_t r = 0; r < n; ++r) weights[r] /= total;
  const Tensor<D>* w = seed % 2 == 0 ? nullptr : &weights;
  // uni-i anchors y_img on y against y_txt; uni-t swaps the modalities.
  const D m_img = margin_off_kink({&y_img.value(), &y.value(), &y_txt.value()}, 0.5);
  const D m_txt = margin_off_kink({&y_txt.value(), &y.value(), &y_img.value()}, 0.5);
  const auto proj_seed = rng();
  return run(bag, [&] {
    std::mt19937_64 r(proj_seed);
    std::vector<Var<D>> terms;
    terms.push_back(uniqueness_loss(y_img, y, y_txt, m_img, w));
    terms.push_back(uniqueness_loss(y_txt, y, y_img, m_txt, w));
    terms.push_back(num::affine(synergy_loss(y, y_img, y_txt, w), 0.7, 0.0));
    terms.push_back(num::affine(redundancy_loss(y, y_img, y_txt, w), 1.3, 0.0));
    return num::add_n(terms);
  }, eps);
}

double check_fusion(std::uint64_t seed, double eps) {
  auto rng = num::make_rng(seed, num::SeedStream::init, 11);
  ReweightNet<D> net(4, 3, 6, rng, 1.0);
  Bag bag;
  bag.absorb(net, "");
  std::vector<Var<D>> experts;
  for (std::size_t j = 0; j < 4; ++j) experts.push_back(bag.add("e" + std::to_string(j), normal(5, 3, rng)));
  auto id = bag.add("id", normal(5, 3, rng));
  const auto proj_seed = rng();
  return run(bag, [&] {
    std::mt19937_64 r(proj_seed);
    const auto f = adaptive_fusion(experts, id, net);
    return num::add(project(f.fused, r), project(f.weights, r));
  }, eps);
}

double check_composite(std::uint64_t seed, double eps) {
  constexpr std::size_t items = 8;
  auto rng = num::make_rng(seed, num::SeedStream::synthetic, 12);
  data::ModalityContent content;
  content.image = num::normal_table<float>(items + 1, 3, 1.0F, rng, 0);
  content.text = num::normal_table<float>(items + 1, 2, 1.0F, rng, 0);

  ModelConfig cfg;
  cfg.backbone.num_items = items;
  cfg.backbone.max_len = kL;
  cfg.backbone.dim = 4;
  cfg.backbone.blocks = 1;
  cfg.backbone.heads = 2;
  cfg.backbone.dropout = 0.0;
  cfg.backbone.encoder = seed % 5 == 4 ? backbone::EncoderKind::mean_pool : backbone::EncoderKind::attention;
  cfg.rec_loss = seed % 2 == 0 ? backbone::RecLoss::bce : backbone::RecLoss::bpr;
  cfg.image_dim = 3;
  cfg.text_dim = 2;
  cfg.expert_hidden = 5;
  cfg.reweight_hidden = 6;
  cfg.mask = std::array{MaskStrategy::random, MaskStrategy::mean, MaskStrategy::zero}[seed % 3];
  cfg.expert_head = seed % 4 < 2 ? ExpertHead::pooled : ExpertHead::encoder;
  cfg.shared_expert_init = seed % 2 == 0;
  // d = 1 - cos lies in [0, 2], so a margin above 2 keeps every hinge active.
  cfg.margin = 2.5;
  cfg.lambdas = LambdaWeights{{0.2, 0.05, 0.2, 0.5}};
  PrismModel<D> model(cfg, content, seed);

  data::Batch batch;
  batch.batch_size = kB;
  batch.len = kL;
  batch.users = {0, 1};
  batch.items = {0, 3, 1, 7, 2, 5, 8, 6};
  batch.positions = {0, 1, 2, 3, 0, 1, 2, 3};
  batch.valid = kValid;
  batch.positives = {0, 1, 7, 4, 5, 8, 6, 1};
  batch.negatives = {0, 2, 5, 3, 7, 1, 2, 4};

  Bag bag;
  bag.absorb(model, "");
  const auto base = num::make_rng(seed, num::SeedStream::masking);
  return run(bag, [&] {
    auto mask_rng = base;
    return model.training_losses(batch, nullptr, mask_rng).total;
  }, eps);
}

}  // namespace

std::vector<LayerGradCheck> gradient_check_suite(std::size_t seeds, double eps) {
  if (seeds == 0) throw ConfigError("gradient check needs at least one seed");
  if (!(eps > 0.0)) throw ConfigError("gradient check step must be positive");
  const std::vector<std::pair<std::string, Check>> cases{
      {"linear", [eps](std::uint64_t s) { return check_linear(s, eps); }},
      {"mlp", [eps](std::uint64_t s) { return check_mlp(s, eps); }},
      {"layer_norm", [eps](std::uint64_t s) { return check_layer_norm(s, eps); }},
      {"embedding_tables", [eps](std::uint64_t s) { return check_embeddings(s, eps); }},
      {"attention_encoder",
       [eps](std::uint64_t s) { return check_encoder(s, eps, backbone::EncoderKind::attention); }},
      {"mean_pool_encoder",
       [eps](std::uint64_t s) { return check_encoder(s, eps, backbone::EncoderKind::mean_pool); }},
      {"bce_loss", [eps](std::uint64_t s) { return check_rec_loss(s, eps, backbone::RecLoss::bce); }},
      {"bpr_loss", [eps](std::uint64_t s) { return check_rec_loss(s, eps, backbone::RecLoss::bpr); }},
      {"expert_bank", [eps](std::uint64_t s) { return check_expert_bank(s, eps); }},
      {"interaction_losses", [eps](std::uint64_t s) { return check_interaction_losses(s, eps); }},
      {"adaptive_fusion", [eps](std::uint64_t s) { return check_fusion(s, eps); }},
      {"composite_loss", [eps](std::uint64_t s) { return check_composite(s, eps); }},
  };
  std::vector<LayerGradCheck> out;
  for (const auto& [name, check] : cases) {
    LayerGradCheck row{name, seeds, 0.0, 0};
    for (std::uint64_t s = 0; s < seeds; ++s) {
      const double err = check(s);
      if (!(err <= row.max_relative_error)) {
        row.max_relative_error = err;
        row.worst_seed = s;
      }
    }
    out.push_back(row);
  }
  return out;
}

}  // namespace prism::core

// Acceptance run: one PASS/FAIL line per criterion. Usage: acceptance PRISM_BINARY [criterion...]
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "prism/eval/complexity.hpp"
#include "prism/numerics/rng.hpp"
#include "prism/prism/gradcheck_suite.hpp"
#include "prism/synthetic/pid.hpp"
#include "prism/synthetic/toy.hpp"
#include "prism/training/trainer.hpp"

namespace fs = std::filesystem;
using namespace prism;
using core::Expert;
using num::Tensor;
using num::Var;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

Var<double> row(std::mt19937_64& rng, std::size_t dim, double scale = 1.0) {
  return Var<double>::constant(num::normal_table<double>(1, dim, scale, rng));
}

Var<double> scaled(const Var<double>& v, double s) { return num::affine(v, s, 0.0); }

constexpr std::size_t kSeeds = 5;

// --- 1 -------------------------------------------------------------------------------

Outcome loss_identities() {
  auto rng = num::make_rng(1, num::SeedStream::synthetic);
  double worst_identity = 0, worst_drift = 0, min_triplet = 1e300;
  for (std::size_t i = 0; i < 10000; ++i) {
    const std::size_t dim = 2 + num::uniform_index(rng, 31);
    const auto y = row(rng, dim), yi = row(rng, dim), yt = row(rng, dim);
    const double margin = 0.05 + 2.0 * num::uniform01(rng);
    const double syn = core::synergy_loss(y, yi, yt).item();
    const double rdn = core::redundancy_loss(y, yi, yt).item();
    worst_identity = std::max(worst_identity, std::abs(syn + rdn - 1.0));
    const double ui = core::uniqueness_loss(yi, y, yt, margin).item();
    const double ut = core::uniqueness_loss(yt, y, yi, margin).item();
    min_triplet = std::min({min_triplet, ui, ut});

    const double a = std::exp(4.0 * num::uniform01(rng) - 2.0);
    const double b = std::exp(4.0 * num::uniform01(rng) - 2.0);
    const double c = std::exp(4.0 * num::uniform01(rng) - 2.0);
    const auto ys = scaled(y, a), yis = scaled(yi, b), yts = scaled(yt, c);
    worst_drift = std::max({worst_drift, std::abs(core::synergy_loss(ys, yis, yts).item() - syn),
                            std::abs(core::redundancy_loss(ys, yis, yts).item() - rdn),
                            std::abs(core::uniqueness_loss(yis, ys, yts, margin).item() - ui),
                            std::abs(core::uniqueness_loss(yts, ys, yis, margin).item() - ut)});
  }
  return {worst_identity < 1e-6 && min_triplet >= 0.0 && worst_drift < 1e-6,
          fmt("max|syn+rdn-1|=%.2e min triplet=%.3f max rescale drift=%.2e", worst_identity, min_triplet,
              worst_drift)};
}

// --- 2 -------------------------------------------------------------------------------

Outcome fusion_simplex() {
  double worst_sum = 0, min_weight = 1, worst_excess = -1e300;
  std::size_t checked = 0;
  for (std::uint64_t batch = 0; batch < 100; ++batch) {
    auto rng = num::make_rng(batch, num::SeedStream::synthetic, 2);
    const std::size_t experts = 1 + num::uniform_index(rng, 8);
    const std::size_t dim = 2 + num::uniform_index(rng, 15);
    core::ReweightNet<double> net(experts, dim, 16, rng, 0.1 + 3.0 * num::uniform01(rng));
    std::vector<Var<double>> parts;
    for (std::size_t j = 0; j < experts; ++j) {
      parts.push_back(Var<double>::constant(num::normal_table<double>(100, dim, std::exp(2 * num::uniform01(rng)), rng)));
    }
    const auto id = Var<double>::constant(num::normal_table<double>(100, dim, 1.0, rng));
    const auto fused = core::adaptive_fusion(parts, id, net);
    for (std::size_t r = 0; r < 100; ++r, ++checked) {
      double s = 0, max_norm = 0, fused_norm = 0;
      for (std::size_t j = 0; j < experts; ++j) {
        const double w = fused.weights.value().at(r, j);
        min_weight = std::min(min_weight, w);
        s += w;
        double n = 0;
        for (std::size_t c = 0; c < dim; ++c) n += parts[j].value().at(r, c) * parts[j].value().at(r, c);
        max_norm = std::max(max_norm, std::sqrt(n));
      }
      for (std::size_t c = 0; c < dim; ++c) fused_norm += fused.fused.value().at(r, c) * fused.fused.value().at(r, c);
      worst_sum = std::max(worst_sum, std::abs(s - 1.0));
      worst_excess = std::max(worst_excess, std::sqrt(fused_norm) - max_norm);
    }
  }
  return {checked == 10000 && min_weight > 0 && worst_sum < 1e-6 && worst_excess <= 1e-6,
          fmt("%zu inputs, min w=%.2e max|sum w-1|=%.2e max(|e_m|-max|e_j|)=%.2e", checked, min_weight, worst_sum,
              worst_excess)};
}

// --- 3 -------------------------------------------------------------------------------

Outcome gradient_correctness() {
  double worst = 0;
  std::string worst_layer;
  std::size_t layers = 0;
  for (const auto& r : core::gradient_check_suite(20, 1e-6)) {
    ++layers;
    if (r.max_relative_error >= worst) {
      worst = r.max_relative_error;
      worst_layer = r.layer;
    }
  }
  return {worst < 1e-5, fmt("%zu layer types x 20 seeds, max rel err %.2e (%s)", layers, worst, worst_layer.c_str())};
}

// Shared experiment protocol for the synthetic scenarios.
training::TrainConfig scenario_config(const training::ExperimentData& data, std::uint64_t seed) {
  training::TrainConfig cfg;
  cfg.model.backbone.dim = 32;
  cfg.model.backbone.blocks = 1;
  cfg.model.backbone.heads = 1;
  cfg.model.backbone.max_len = 20;
  cfg.model.expert_hidden = 32;
  cfg.model.reweight_hidden = 32;
  cfg.model.lambdas = core::LambdaWeights{{1.0, 1.0, 1.0, 1.0}};
  cfg.train.epochs = 3;
  cfg.train.patience = 0;
  cfg.train.batch_size = 128;
  cfg.train.seeds = {seed};
  training::bind_dataset(cfg, data.dataset);
  return cfg;
}

training::ExperimentData scenario_data(synthetic::PidVariant v, std::uint64_t seed, std::size_t users = 5000) {
  synthetic::PidScenario s;
  s.variant = v;
  s.num_users = users;
  s.seed = seed;
  return synthetic::experiment_data(synthetic::generate_pid_dataset(s));
}

enum class Variant { full, no_syn, no_afl, mask_mean, mask_zero };

training::SeedResult run_variant(synthetic::PidVariant scenario, Variant v, std::uint64_t seed) {
  static std::map<std::tuple<int, int, std::uint64_t>, training::SeedResult> cache;
  const auto key = std::make_tuple(static_cast<int>(scenario), static_cast<int>(v), seed);
  if (auto it = cache.find(key); it != cache.end()) return it->second;
  const auto data = scenario_data(scenario, seed);
  auto cfg = scenario_config(data, seed);
  if (v == Variant::no_syn) cfg.model.drop[static_cast<std::size_t>(Expert::syn)] = true;
  if (v == Variant::no_afl) cfg.model.drop_afl = true;
  if (v == Variant::mask_mean) cfg.model.mask = core::MaskStrategy::mean;
  if (v == Variant::mask_zero) cfg.model.mask = core::MaskStrategy::zero;
  auto result = training::run_experiment(cfg, data).seeds.at(0);
  cache.emplace(key, result);
  return result;
}

// --- 4 -------------------------------------------------------------------------------

Outcome bookkeeping() {
  const auto data = scenario_data(synthetic::PidVariant::synergy_xor, 0, 1000);
  auto cfg = scenario_config(data, 0);
  cfg.model.lambdas = {};
  cfg.train.epochs = 20;
  double worst = 0;
  std::size_t reports = 0;
  for (bool staged : {false, true}) {
    cfg.train.staged_updates = staged;
    const auto report = training::run_experiment(cfg, data);
    for (const auto& l : report.seeds.at(0).losses) {
      ++reports;
      worst = std::max(worst, std::abs(l.total - (l.rec + l.exp)) / std::max(l.total, 1.0));
    }
  }
  return {worst < 1e-5, fmt("%zu epoch reports (joint and staged), max |L-(Lrec+Lexp)|/max(L,1)=%.2e", reports, worst)};
}

// --- 5 -------------------------------------------------------------------------------

Outcome mi_oracle() {
  auto sample = [](std::uint64_t seed, auto target, bool tied) {
    auto rng = num::make_rng(seed, num::SeedStream::synthetic, 5);
    std::vector<synthetic::Triple> out(100000);
    for (auto& s : out) {
      s.x1 = static_cast<int>(num::uniform_index(rng, 2));
      s.x2 = tied ? s.x1 : static_cast<int>(num::uniform_index(rng, 2));
      s.t = target(s.x1, s.x2);
    }
    return synthetic::discrete_mi(out);
  };
  struct Case {
    const char* name;
    synthetic::MIEstimate mi;
    std::array<double, 3> expected;
  };
  const std::vector<Case> cases{
      {"copy", sample(1, [](int a, int) { return a; }, false), {1, 0, 1}},
      {"xor", sample(2, [](int a, int b) { return a ^ b; }, false), {0, 0, 1}},
      {"redundant", sample(3, [](int a, int) { return a; }, true), {1, 1, 1}},
  };
  bool ok = true;
  double worst = 0;
  for (const auto& c : cases) {
    for (double err : {c.mi.x1 - c.expected[0], c.mi.x2 - c.expected[1], c.mi.joint - c.expected[2]}) {
      worst = std::max(worst, std::abs(err));
    }
  }
  ok = worst < 0.02;
  std::string labels;
  for (auto v : synthetic::kAllVariants) {
    synthetic::PidScenario s;
    s.variant = v;
    const auto got = synthetic::classify_interaction(
        synthetic::discrete_mi(synthetic::transition_samples(synthetic::generate_pid_dataset(s))), 0.05);
    const bool match = got == synthetic::expected_type(v);
    ok = ok && match;
    labels += " " + synthetic::to_string(v) + "->" + synthetic::to_string(got) + (match ? "" : "(!)");
  }
  return {ok, fmt("max analytic error %.4f bits;", worst) + labels};
}

// --- 6 -------------------------------------------------------------------------------

Outcome specialization() {
  const std::vector<std::pair<synthetic::PidVariant, Expert>> targets{
      {synthetic::PidVariant::synergy_xor, Expert::syn},
      {synthetic::PidVariant::unique_img, Expert::uni_i},
      {synthetic::PidVariant::unique_txt, Expert::uni_t},
  };
  bool ok = true;
  std::string detail;
  for (const auto& [scenario, expert] : targets) {
    std::size_t hits = 0;
    for (std::uint64_t seed = 0; seed < kSeeds; ++seed) {
      const auto w = run_variant(scenario, Variant::full, seed).mean_fusion_weights;
      hits += synthetic::argmax_expert(w) == expert ? 1 : 0;
    }
    ok = ok && hits >= 4;
    detail += fmt("%s argmax %s %zu/%zu; ", synthetic::to_string(scenario).c_str(), core::expert_name(expert), hits,
                  kSeeds);
  }
  return {ok, detail};
}

// --- 7 -------------------------------------------------------------------------------

Outcome ablation() {
  std::size_t syn_below = 0, afl_below = 0;
  std::string ndcg;
  for (std::uint64_t seed = 0; seed < kSeeds; ++seed) {
    const double full = run_variant(synthetic::PidVariant::synergy_xor, Variant::full, seed).test.ndcg_at(10);
    const double no_syn = run_variant(synthetic::PidVariant::synergy_xor, Variant::no_syn, seed).test.ndcg_at(10);
    const double no_afl = run_variant(synthetic::PidVariant::synergy_xor, Variant::no_afl, seed).test.ndcg_at(10);
    syn_below += no_syn < full ? 1 : 0;
    afl_below += no_afl < full ? 1 : 0;
    ndcg += fmt(" [%.4f %.4f %.4f]", full, no_syn, no_afl);
  }
  return {syn_below >= 4 && afl_below >= 4,
          fmt("w/o E_syn below full %zu/5, w/o AFL below full %zu/5; N@10 [full no_syn no_afl]:", syn_below,
              afl_below) +
              ndcg};
}

// --- 8 -------------------------------------------------------------------------------

bool finite_losses(const training::SeedResult& r) {
  for (const auto& l : r.losses) {
    if (!std::isfinite(l.total) || !std::isfinite(l.rec) || !std::isfinite(l.exp)) return false;
  }
  return !r.losses.empty();
}

Outcome masking() {
  std::size_t random_wins = 0;
  bool finite = true;
  std::string ndcg;
  for (std::uint64_t seed = 0; seed < kSeeds; ++seed) {
    const auto random = run_variant(synthetic::PidVariant::synergy_xor, Variant::full, seed);
    const auto mean = run_variant(synthetic::PidVariant::synergy_xor, Variant::mask_mean, seed);
    const auto zero = run_variant(synthetic::PidVariant::synergy_xor, Variant::mask_zero, seed);
    finite = finite && finite_losses(random) && finite_losses(mean) && finite_losses(zero);
    random_wins += random.test.ndcg_at(10) >= zero.test.ndcg_at(10) ? 1 : 0;
    ndcg += fmt(" [%.4f %.4f %.4f]", random.test.ndcg_at(10), mean.test.ndcg_at(10), zero.test.ndcg_at(10));
  }
  return {finite && random_wins >= 3,
          fmt("finite losses %s, random >= zero %zu/5; N@10 [random mean zero]:", finite ? "yes" : "no", random_wins) +
              ndcg};
}

// --- 9 -------------------------------------------------------------------------------

Outcome complexity() {
  const auto data = scenario_data(synthetic::PidVariant::synergy_xor, 0);
  const auto cfg = scenario_config(data, 0);
  const auto report = eval::measure_complexity(cfg, data, {1, 3, 0});
  const std::uint64_t passes = report.prism_on.expert_passes_per_step;
  return {passes == 12 && report.prism_off.expert_passes_per_step == 0 && report.ratio < 3.0,
          fmt("expert passes/step %llu (expected 4*(1+2)=12), epoch median off %.3fs on %.3fs, ratio %.2fx",
              static_cast<unsigned long long>(passes), report.prism_off.median_seconds,
              report.prism_on.median_seconds, report.ratio)};
}

// --- 10 ------------------------------------------------------------------------------

Outcome overfit() {
  std::size_t reached = 0;
  std::string recalls;
  for (std::uint64_t seed = 0; seed < kSeeds; ++seed) {
    synthetic::MemorizationSpec spec;
    spec.seed = seed;
    const auto data = training::in_memory_data(synthetic::memorization_dataset(spec));
    training::TrainConfig cfg;
    cfg.model.backbone.encoder = backbone::EncoderKind::attention;
    cfg.model.backbone.dim = 32;
    cfg.model.backbone.blocks = 2;
    cfg.model.backbone.heads = 2;
    cfg.model.backbone.max_len = spec.seq_len;
    cfg.model.backbone.dropout = 0.0;
    cfg.model.expert_hidden = 32;
    cfg.model.reweight_hidden = 32;
    cfg.train.epochs = 200;
    cfg.train.patience = 0;
    cfg.train.batch_size = 32;
    cfg.train.seeds = {seed};
    training::bind_dataset(cfg, data.dataset);
    const auto r = training::run_experiment(cfg, data).seeds.at(0);
    const double recall = r.test.recall_at(10);
    reached += recall >= 0.9 ? 1 : 0;
    recalls += fmt(" %.3f@ep%zu", recall, r.best_epoch);
  }
  return {reached == kSeeds, fmt("R@10 >= 0.9 in %zu/5 seeds:", reached) + recalls};
}

// --- 11 ------------------------------------------------------------------------------

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Outcome determinism(const std::string& prism) {
  const fs::path base = fs::temp_directory_path() / "prism_acceptance_determinism";
  fs::remove_all(base);
  fs::create_directories(base);
  auto sh = [&](const std::string& args) {
    const std::string cmd = "\"" + prism + "\" " + args + " > \"" + (base / "log.txt").string() + "\" 2>&1";
    return std::system(cmd.c_str());
  };
  if (sh("synth --scenario synergy_xor --users 1000 --seed 11 --out \"" + (base / "data").string() + "\"") != 0) {
    return {false, "synth failed: " + slurp(base / "log.txt")};
  }
  std::ofstream(base / "config.json") << R"({
  "data": {"interactions": "data/interactions.tsv", "image_embeddings": "data/image.prem",
           "text_embeddings": "data/text.prem"},
  "model": {"dim": 16, "blocks": 1, "heads": 2, "max_len": 20},
  "train": {"epochs": 3, "batch_size": 128, "seeds": [3, 4]}
})";
  for (const char* run : {"run_a", "run_b"}) {
    if (sh("train --config \"" + (base / "config.json").string() + "\" --out \"" + (base / run).string() + "\"") != 0) {
      return {false, std::string("train failed: ") + slurp(base / "log.txt")};
    }
  }
  const std::string a = slurp(base / "run_a" / "report.json");
  const std::string b = slurp(base / "run_b" / "report.json");
  const bool same = !a.empty() && a == b;
  fs::remove_all(base);
  return {same, fmt("report.json %zu bytes, byte-identical across two cmd_train runs: %s", a.size(),
                    same ? "yes" : "no")};
}

struct Criterion {
  int id;
  const char* name;
  double budget_seconds;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    std::fprintf(stderr, "usage: %s PRISM_BINARY [criterion...]\n", argv[0]);
    return 2;
  }
  const std::string prism = argv[1];
  std::set<int> only;
  for (int i = 2; i < argc; ++i) only.insert(std::atoi(argv[i]));

  const std::vector<Criterion> criteria{
      {1, "loss identities", 5, loss_identities},
      {2, "fusion simplex", 5, fusion_simplex},
      {3, "gradient correctness", 60, gradient_correctness},
      {4, "loss bookkeeping", 600, bookkeeping},
      {5, "MI oracle", 30, mi_oracle},
      {6, "expert specialization", 45 * 60, specialization},
      {7, "ablation direction", 30 * 60, ablation},
      {8, "masking strategies", 45 * 60, masking},
      {9, "complexity accounting", 10 * 60, complexity},
      {10, "overfit sanity", 10 * 60, overfit},
      {11, "determinism", 600, [&] { return determinism(prism); }},
  };
  int failures = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && !only.count(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome out;
    try {
      out = c.run();
    } catch (const std::exception& e) {
      out = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (secs > c.budget_seconds) {
      out.pass = false;
      out.detail += fmt(" (over the %.0fs budget)", c.budget_seconds);
    }
    std::printf("%s [%d] %s: %s (%.1fs)\n", out.pass ? "PASS" : "FAIL", c.id, c.name, out.detail.c_str(), secs);
    std::fflush(stdout);
    failures += out.pass ? 0 : 1;
  }
  return failures == 0 ? 0 : 1;
}

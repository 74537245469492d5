#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "doctest.h"
#include "prism/errors.hpp"
#include "prism/numerics/rng.hpp"
#include "prism/synthetic/pid.hpp"
#include "prism/synthetic/toy.hpp"

using namespace prism;
using namespace prism::synthetic;

namespace {

double binary_entropy(double p) { return p <= 0 || p >= 1 ? 0.0 : -p * std::log2(p) - (1 - p) * std::log2(1 - p); }

std::vector<Triple> sample(std::size_t n, std::uint64_t seed, int (*t_of)(int, int), bool tied = false) {
  auto rng = num::make_rng(seed, num::SeedStream::synthetic);
  std::vector<Triple> out(n);
  for (auto& s : out) {
    s.x1 = static_cast<int>(num::uniform_index(rng, 2));
    s.x2 = tied ? s.x1 : static_cast<int>(num::uniform_index(rng, 2));
    s.t = t_of(s.x1, s.x2);
  }
  return out;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

PidScenario scenario(PidVariant v, std::size_t users, std::uint64_t seed = 0) {
  PidScenario s;
  s.variant = v;
  s.num_users = users;
  s.seed = seed;
  return s;
}

}  // namespace

TEST_CASE("discrete_mi on exact enumerations") {
  const std::vector<Triple> copy{{0, 0, 0}, {0, 0, 1}, {1, 1, 0}, {1, 1, 1}};
  auto mi = discrete_mi(copy);
  CHECK(mi.x1 == doctest::Approx(1.0));
  CHECK(mi.x2 == doctest::Approx(0.0));
  CHECK(mi.joint == doctest::Approx(1.0));
  CHECK(mi.samples == 4);

  const std::vector<Triple> xr{{0, 0, 0}, {1, 0, 1}, {1, 1, 0}, {0, 1, 1}};
  mi = discrete_mi(xr);
  CHECK(mi.x1 == doctest::Approx(0.0));
  CHECK(mi.x2 == doctest::Approx(0.0));
  CHECK(mi.joint == doctest::Approx(1.0));

  const std::vector<Triple> constant{{1, 0, 1}, {1, 1, 0}};
  mi = discrete_mi(constant);
  CHECK(mi.joint == 0.0);
  CHECK(classify_interaction(mi, 0.05) == InteractionType::none);

  // Four equiprobable target values: 2 bits.
  const std::vector<Triple> two_bits{{0, 0, 0}, {1, 0, 1}, {2, 1, 0}, {3, 1, 1}};
  mi = discrete_mi(two_bits);
  CHECK(mi.joint == doctest::Approx(2.0));
  CHECK(mi.x1 == doctest::Approx(1.0));

  CHECK_THROWS_AS(discrete_mi({}), ConfigError);
}

TEST_CASE("discrete_mi recovers the analytic distributions from 100k samples") {
  const std::size_t n = 100000;
  const auto copy = discrete_mi(sample(n, 1, [](int a, int) { return a; }));
  CHECK(std::abs(copy.x1 - 1) < 0.02);
  CHECK(std::abs(copy.x2 - 0) < 0.02);
  CHECK(std::abs(copy.joint - 1) < 0.02);

  const auto xr = discrete_mi(sample(n, 2, [](int a, int b) { return a ^ b; }));
  CHECK(std::abs(xr.x1) < 0.02);
  CHECK(std::abs(xr.x2) < 0.02);
  CHECK(std::abs(xr.joint - 1) < 0.02);

  const auto red = discrete_mi(sample(n, 3, [](int a, int) { return a; }, true));
  CHECK(std::abs(red.x1 - 1) < 0.02);
  CHECK(std::abs(red.x2 - 1) < 0.02);
  CHECK(std::abs(red.joint - 1) < 0.02);
}

TEST_CASE("discrete_mi properties on random alphabets") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto rng = num::make_rng(seed, num::SeedStream::synthetic);
    const int k = 2 + static_cast<int>(num::uniform_index(rng, 3));
    std::vector<Triple> s(500);
    for (auto& t : s) {
      t.x1 = static_cast<int>(num::uniform_index(rng, k));
      t.x2 = static_cast<int>(num::uniform_index(rng, k));
      t.t = num::uniform01(rng) < 0.7 ? (t.x1 + t.x2) % k : static_cast<int>(num::uniform_index(rng, k));
    }
    const auto mi = discrete_mi(s);
    CHECK(mi.x1 >= 0.0);
    CHECK(mi.x2 >= 0.0);
    CHECK(mi.x1 <= mi.joint + 1e-9);
    CHECK(mi.x2 <= mi.joint + 1e-9);
    CHECK(mi.joint <= std::log2(static_cast<double>(k)) + 1e-9);
  }
}

TEST_CASE("classify_interaction signatures") {
  CHECK(classify_interaction({0, 0, 1, 1}, 0.05) == InteractionType::synergy);
  CHECK(classify_interaction({1, 0, 1, 1}, 0.05) == InteractionType::unique_x1);
  CHECK(classify_interaction({0, 1, 1, 1}, 0.05) == InteractionType::unique_x2);
  CHECK(classify_interaction({1, 1, 1, 1}, 0.05) == InteractionType::redundant);
  CHECK(classify_interaction({0.6, 0.6, 0.8, 1}, 0.05) == InteractionType::mixed);
  CHECK(classify_interaction({0, 0, 0.01, 1}, 0.05) == InteractionType::none);
  CHECK_THROWS_AS(classify_interaction({0, 0, 1, 1}, 0.0), ConfigError);
}

TEST_CASE("scenario validation and names") {
  for (auto v : kAllVariants) CHECK(parse_variant(to_string(v)) == v);
  CHECK_THROWS_AS(parse_variant("xor"), ConfigError);
  PidScenario s;
  s.epsilon = 0.5;
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s.epsilon = -0.1;
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s.epsilon = 0.49;
  CHECK_NOTHROW(s.validate());
  CHECK(item_class(PidVariant::synergy_xor, 1, 1) == 0);
  CHECK(item_class(PidVariant::synergy_xor, 0, 1) == 1);
  CHECK(item_class(PidVariant::unique_img, 1, 0) == 1);
  CHECK(item_class(PidVariant::unique_txt, 1, 0) == 0);
}

TEST_CASE("generator structure") {
  const auto red = generate_pid_dataset(scenario(PidVariant::redundant, 500));
  CHECK(red.dataset.num_items() == 200);
  CHECK(red.dataset.num_users() == 500);
  for (std::size_t i = 1; i < red.latents.size(); ++i) CHECK(red.latents[i].b_img == red.latents[i].b_txt);
  for (const auto& seq : red.dataset.sequences) CHECK(seq.size() == 20);

  // Items sharing a bit share the modality codeword up to the noise level.
  const auto xr = generate_pid_dataset(scenario(PidVariant::synergy_xor, 500));
  std::map<int, std::size_t> first;
  for (std::size_t i = 1; i <= 200; ++i) {
    const int b = xr.latents[i].b_img;
    if (!first.count(b)) {
      first[b] = i;
      continue;
    }
    double sq = 0;
    for (std::size_t c = 0; c < 16; ++c) {
      const double d = xr.dataset.content.image.at(i, c) - xr.dataset.content.image.at(first[b], c);
      sq += d * d;
    }
    CHECK(std::sqrt(sq / 16) < 0.5);
  }

  auto noiseless = scenario(PidVariant::synergy_xor, 500);
  noiseless.epsilon = 0.0;
  const auto clean = generate_pid_dataset(noiseless);
  std::size_t correct = 0;
  const auto samples = transition_samples(clean);
  for (const auto& s : samples) correct += s.t == (s.x1 ^ s.x2) ? 1 : 0;
  CHECK(correct == samples.size());

  auto tiny = scenario(PidVariant::synergy_xor, 1);
  tiny.seq_len = 3;
  CHECK_THROWS_AS(generate_pid_dataset(tiny), DataError);
}

TEST_CASE("generator is deterministic per seed") {
  const std::filesystem::path base = std::filesystem::temp_directory_path() / "prism_synth_test";
  std::filesystem::remove_all(base);
  const auto s = scenario(PidVariant::unique_txt, 300, 9);
  write_pid_dataset(base / "a", generate_pid_dataset(s));
  write_pid_dataset(base / "b", generate_pid_dataset(s));
  for (const char* f : {"interactions.tsv", "image.prem", "text.prem", "ground_truth.json"}) {
    CAPTURE(f);
    CHECK(std::filesystem::file_size(base / "a" / f) > 0);
    CHECK(slurp(base / "a" / f) == slurp(base / "b" / f));
  }
  const auto truth = nlohmann::json::parse(slurp(base / "a" / "ground_truth.json"));
  CHECK(truth.at("scenario") == "unique_txt");
  CHECK(truth.at("items").size() == 200);
  CHECK(truth.at("expected_type") == "unique_x2");

  auto other = s;
  other.seed = 10;
  write_pid_dataset(base / "c", generate_pid_dataset(other));
  CHECK(slurp(base / "a" / "interactions.tsv") != slurp(base / "c" / "interactions.tsv"));
  std::filesystem::remove_all(base);
}

TEST_CASE("generated scenarios carry the requested MI signature") {
  const double informative = 1.0 - binary_entropy(0.05);
  for (auto v : kAllVariants) {
    CAPTURE(to_string(v));
    const auto d = generate_pid_dataset(scenario(v, 6000, 4));
    const auto samples = transition_samples(d);
    REQUIRE(samples.size() >= 100000);
    const auto mi = discrete_mi(samples);
    CHECK(mi.joint == doctest::Approx(informative).epsilon(0.03));
    CHECK(classify_interaction(mi, 0.05) == expected_type(v));
  }
}

TEST_CASE("untrained model: near-uniform fusion weights") {
  const auto pd = generate_pid_dataset(scenario(PidVariant::synergy_xor, 300));
  const auto data = experiment_data(pd);
  training::TrainConfig cfg;
  cfg.model.backbone.dim = 16;
  cfg.model.backbone.max_len = 20;
  cfg.model.backbone.heads = 2;
  cfg.train.batch_size = 64;
  training::bind_dataset(cfg, data.dataset);
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    core::PrismModel<float> model(cfg.model, data.dataset.content, seed);
    const auto entry = expert_specialization(PidVariant::synergy_xor, model, data, cfg, seed);
    for (double w : entry.mean_weights) CHECK(std::abs(w - 0.25) <= 0.05);
    for (double l : entry.expert_losses) CHECK(std::isfinite(l));
  }
  CHECK(argmax_expert({0.1, 0.2, 0.6, 0.1}) == core::Expert::syn);
  CHECK(argmax_expert({0.4, 0.2, 0.2, 0.2}) == core::Expert::uni_i);
}

TEST_CASE("memorization dataset follows one cycle") {
  const auto ds = memorization_dataset({});
  CHECK(ds.num_users() == 100);
  CHECK(ds.num_items() == 50);
  std::map<data::ItemId, data::ItemId> next;
  for (const auto& seq : ds.sequences) {
    CHECK(seq.size() == 12);
    for (std::size_t t = 0; t + 1 < seq.size(); ++t) {
      const auto [it, inserted] = next.emplace(seq[t], seq[t + 1]);
      CHECK(it->second == seq[t + 1]);
    }
  }
  CHECK(ds.content.image.rows() == 51);
  CHECK(ds.content.text.cols() == 8);
  MemorizationSpec bad;
  bad.seq_len = 2;
  CHECK_THROWS_AS(memorization_dataset(bad), ConfigError);
}

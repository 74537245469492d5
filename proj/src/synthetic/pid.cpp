#include "prism/synthetic/pid.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

#include "json.hpp"
#include "prism/errors.hpp"
#include "prism/numerics/rng.hpp"

namespace prism::synthetic {

PidVariant parse_variant(const std::string& name) {
  for (PidVariant v : kAllVariants)
    if (to_string(v) == name) return v;
  throw ConfigError("unknown scenario '" + name + "' (expected unique_img, unique_txt, redundant or synergy_xor)");
}

std::string to_string(PidVariant v) {
  switch (v) {
    case PidVariant::unique_img: return "unique_img";
    case PidVariant::unique_txt: return "unique_txt";
    case PidVariant::redundant: return "redundant";
    case PidVariant::synergy_xor: return "synergy_xor";
  }
  return "?";
}

void PidScenario::validate() const {
  if (!(epsilon >= 0.0 && epsilon < 0.5)) throw ConfigError("scenario epsilon must lie in [0, 0.5)");
  if (num_users < 1) throw ConfigError("scenario needs at least one user");
  if (num_items < 4) throw ConfigError("scenario needs at least four items");
  if (seq_len < 2) throw ConfigError("scenario sequences need at least two items");
  if (codeword_dim < 1) throw ConfigError("codeword dimension must be positive");
  if (!(noise >= 0.0)) throw ConfigError("noise must be non-negative");
}

int item_class(PidVariant v, int b_img, int b_txt) {
  switch (v) {
    case PidVariant::unique_img: return b_img;
    case PidVariant::unique_txt: return b_txt;
    case PidVariant::redundant: return b_img;
    case PidVariant::synergy_xor: return b_img ^ b_txt;
  }
  return 0;
}

PidDataset generate_pid_dataset(const PidScenario& s) {
  s.validate();
  PidDataset out;
  out.scenario = s;

  // Balanced bit patterns, shuffled over item ids.
  auto item_rng = num::make_rng(s.seed, num::SeedStream::synthetic, 0);
  std::vector<std::size_t> pattern(s.num_items);
  for (std::size_t i = 0; i < s.num_items; ++i) pattern[i] = s.variant == PidVariant::redundant ? 3 * (i % 2) : i % 4;
  for (std::size_t i = s.num_items; i > 1; --i) std::swap(pattern[i - 1], pattern[num::uniform_index(item_rng, i)]);
  out.latents.resize(s.num_items + 1);
  std::array<std::vector<std::size_t>, 2> by_class;
  for (std::size_t i = 1; i <= s.num_items; ++i) {
    auto& l = out.latents[i];
    l.b_img = static_cast<int>(pattern[i - 1] & 1);
    l.b_txt = static_cast<int>(pattern[i - 1] >> 1);
    l.cls = item_class(s.variant, l.b_img, l.b_txt);
    by_class[static_cast<std::size_t>(l.cls)].push_back(i);
  }

  auto code_rng = num::make_rng(s.seed, num::SeedStream::synthetic, 1);
  std::array<std::array<std::vector<float>, 2>, 2> codewords;  // [modality][bit]
  for (auto& modality : codewords)
    for (auto& word : modality) {
      word.resize(s.codeword_dim);
      for (auto& v : word) v = static_cast<float>(num::standard_normal(code_rng));
    }
  data::EmbeddingTable image, text;
  image.dim = text.dim = s.codeword_dim;
  auto noise_rng = num::make_rng(s.seed, num::SeedStream::synthetic, 2);
  std::vector<float> buf(s.codeword_dim);
  for (std::size_t i = 1; i <= s.num_items; ++i) {
    const auto& l = out.latents[i];
    for (int m = 0; m < 2; ++m) {
      const auto& word = codewords[static_cast<std::size_t>(m)][static_cast<std::size_t>(m == 0 ? l.b_img : l.b_txt)];
      for (std::size_t c = 0; c < s.codeword_dim; ++c) {
        buf[c] = word[c] + static_cast<float>(s.noise * num::standard_normal(noise_rng));
      }
      (m == 0 ? image : text).add(i, buf);
    }
  }

  auto walk_rng = num::make_rng(s.seed, num::SeedStream::synthetic, 3);
  std::vector<std::pair<data::RawId, std::vector<data::RawId>>> raw(s.num_users);
  for (std::size_t u = 0; u < s.num_users; ++u) {
    raw[u].first = u + 1;
    auto& seq = raw[u].second;
    std::size_t current = 1 + num::uniform_index(walk_rng, s.num_items);
    seq.push_back(current);
    while (seq.size() < s.seq_len) {
      int cls = out.latents[current].cls;
      if (num::uniform01(walk_rng) < s.epsilon) cls ^= 1;
      const auto& pool = by_class[static_cast<std::size_t>(cls)];
      current = pool[num::uniform_index(walk_rng, pool.size())];
      seq.push_back(current);
    }
  }
  out.dataset = data::make_dataset(raw);
  data::attach_modalities(out.dataset, image, text);
  if (out.dataset.num_items() != s.num_items) {
    // Every item id must appear somewhere so dense ids coincide with generated ids.
    throw DataError("scenario too small: only " + std::to_string(out.dataset.num_items()) + " of " +
                    std::to_string(s.num_items) + " items were visited");
  }
  return out;
}

void write_pid_dataset(const std::filesystem::path& dir, const PidDataset& d) {
  std::filesystem::create_directories(dir);
  data::write_interactions(dir / "interactions.tsv", d.dataset);
  data::EmbeddingTable image, text;
  image.dim = d.dataset.content.image_dim();
  text.dim = d.dataset.content.text_dim();
  for (std::size_t i = 1; i <= d.dataset.num_items(); ++i) {
    image.add(d.dataset.item_keys[i], d.dataset.content.image.row(i));
    text.add(d.dataset.item_keys[i], d.dataset.content.text.row(i));
  }
  data::write_modality_embeddings(dir / "image.prem", image);
  data::write_modality_embeddings(dir / "text.prem", text);

  const auto& s = d.scenario;
  nlohmann::json items = nlohmann::json::array();
  for (std::size_t i = 1; i < d.latents.size(); ++i) {
    items.push_back({{"item_id", d.dataset.item_keys[i]},
                     {"b_img", d.latents[i].b_img},
                     {"b_txt", d.latents[i].b_txt},
                     {"class", d.latents[i].cls}});
  }
  nlohmann::json truth = {{"scenario", to_string(s.variant)},
                          {"num_users", s.num_users},
                          {"num_items", s.num_items},
                          {"seq_len", s.seq_len},
                          {"epsilon", s.epsilon},
                          {"codeword_dim", s.codeword_dim},
                          {"noise", s.noise},
                          {"seed", s.seed},
                          {"expected_type", to_string(expected_type(s.variant))},
                          {"items", items}};
  std::ofstream out(dir / "ground_truth.json", std::ios::binary);
  if (!out) throw DataError("cannot write " + (dir / "ground_truth.json").string());
  out << truth.dump(2) << "\n";
}

namespace {

/// Plug-in entropy in bits of the projection of each sample onto `fields` (t, x1, x2).
double entropy_bits(const std::vector<Triple>& samples, std::array<bool, 3> fields) {
  std::map<std::array<int, 3>, std::size_t> counts;
  for (const auto& s : samples) {
    ++counts[{fields[0] ? s.t : 0, fields[1] ? s.x1 : 0, fields[2] ? s.x2 : 0}];
  }
  const double n = static_cast<double>(samples.size());
  double h = 0;
  for (const auto& [k, c] : counts) {
    const double p = static_cast<double>(c) / n;
    h -= p * std::log2(p);
  }
  return h;
}

}  // namespace

MIEstimate discrete_mi(const std::vector<Triple>& samples) {
  if (samples.empty()) throw ConfigError("discrete_mi needs at least one sample");
  // I(T; X) = H(T) + H(X) - H(T, X)
  const double ht = entropy_bits(samples, {true, false, false});
  MIEstimate mi;
  mi.samples = samples.size();
  mi.x1 = std::max(0.0, ht + entropy_bits(samples, {false, true, false}) - entropy_bits(samples, {true, true, false}));
  mi.x2 = std::max(0.0, ht + entropy_bits(samples, {false, false, true}) - entropy_bits(samples, {true, false, true}));
  mi.joint = std::max(0.0, ht + entropy_bits(samples, {false, true, true}) - entropy_bits(samples, {true, true, true}));
  return mi;
}

std::vector<Triple> transition_samples(const PidDataset& d) {
  std::vector<Triple> out;
  for (const auto& seq : d.dataset.sequences) {
    for (std::size_t i = 0; i + 1 < seq.size(); ++i) {
      const auto& cur = d.latents[static_cast<std::size_t>(seq[i])];
      const auto& next = d.latents[static_cast<std::size_t>(seq[i + 1])];
      out.push_back({next.cls, cur.b_img, cur.b_txt});
    }
  }
  return out;
}

std::string to_string(InteractionType t) {
  switch (t) {
    case InteractionType::synergy: return "synergy";
    case InteractionType::unique_x1: return "unique_x1";
    case InteractionType::unique_x2: return "unique_x2";
    case InteractionType::redundant: return "redundant";
    case InteractionType::mixed: return "mixed";
    case InteractionType::none: return "none";
  }
  return "?";
}

InteractionType classify_interaction(const MIEstimate& mi, double tol) {
  if (!(tol > 0.0)) throw ConfigError("classification tolerance must be positive");
  if (mi.joint <= tol) return InteractionType::none;
  if (mi.joint - mi.x1 - mi.x2 > tol) return InteractionType::synergy;
  if (mi.x1 > mi.x2 + tol && std::abs(mi.joint - mi.x1) <= tol) return InteractionType::unique_x1;
  if (mi.x2 > mi.x1 + tol && std::abs(mi.joint - mi.x2) <= tol) return InteractionType::unique_x2;
  if (std::abs(mi.x1 - mi.x2) <= tol && std::abs(mi.x1 - mi.joint) <= tol && std::abs(mi.x2 - mi.joint) <= tol) {
    return InteractionType::redundant;
  }
  return InteractionType::mixed;
}

InteractionType expected_type(PidVariant v) {
  switch (v) {
    case PidVariant::unique_img: return InteractionType::unique_x1;
    case PidVariant::unique_txt: return InteractionType::unique_x2;
    case PidVariant::redundant: return InteractionType::redundant;
    case PidVariant::synergy_xor: return InteractionType::synergy;
  }
  return InteractionType::mixed;
}

core::Expert argmax_expert(const std::array<double, core::kNumExpertTypes>& weights) {
  return static_cast<core::Expert>(std::max_element(weights.begin(), weights.end()) - weights.begin());
}

training::ExperimentData experiment_data(const PidDataset& d) { return training::in_memory_data(d.dataset); }

SpecializationEntry expert_specialization(PidVariant variant, const core::PrismModel<float>& model,
                                          const training::ExperimentData& data, const training::TrainConfig& cfg,
                                          std::uint64_t seed) {
  SpecializationEntry entry;
  entry.variant = variant;
  const auto trace = training::build_fusion_trace(model, data.dataset, data.split, cfg.eval.batch_size);
  if (!trace.empty()) entry.mean_weights = core::mean_weights(trace);
  entry.argmax = argmax_expert(entry.mean_weights);

  num::NoGradGuard no_grad;
  const auto batches = training::epoch_batches(data.split, cfg, seed, 0);
  auto mask_rng = num::make_rng(seed, num::SeedStream::masking, 1);
  for (const auto& b : batches) {
    const auto losses = model.training_losses(b, nullptr, mask_rng);
    for (std::size_t j = 0; j < core::kNumExpertTypes; ++j) {
      entry.expert_losses[j] += losses.components[j] / static_cast<double>(batches.size());
    }
  }
  return entry;
}

}  // namespace prism::synthetic

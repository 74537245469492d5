#include "prism/synthetic/toy.hpp"

#include <numeric>

#include "prism/errors.hpp"
#include "prism/numerics/rng.hpp"

namespace prism::synthetic {

void MemorizationSpec::validate() const {
  if (num_items < 2) throw ConfigError("memorization: num_items must be at least 2");
  if (num_users < 1) throw ConfigError("memorization: num_users must be at least 1");
  if (seq_len < 3) throw ConfigError("memorization: seq_len must be at least 3");
  if (content_dim < 1) throw ConfigError("memorization: content_dim must be at least 1");
}

data::InteractionDataset memorization_dataset(const MemorizationSpec& s) {
  s.validate();
  auto rng = num::make_rng(s.seed, num::SeedStream::synthetic, 10);
  std::vector<data::RawId> cycle(s.num_items);
  std::iota(cycle.begin(), cycle.end(), data::RawId{1});
  for (std::size_t i = cycle.size() - 1; i > 0; --i) std::swap(cycle[i], cycle[num::uniform_index(rng, i + 1)]);

  std::vector<std::pair<data::RawId, std::vector<data::RawId>>> raw(s.num_users);
  for (std::size_t u = 0; u < s.num_users; ++u) {
    raw[u].first = u + 1;
    const std::size_t start = num::uniform_index(rng, s.num_items);
    for (std::size_t t = 0; t < s.seq_len; ++t) raw[u].second.push_back(cycle[(start + t) % s.num_items]);
  }
  auto ds = data::make_dataset(raw);

  data::EmbeddingTable image, text;
  image.dim = text.dim = s.content_dim;
  std::vector<float> buf(s.content_dim);
  for (std::size_t i = 1; i <= s.num_items; ++i) {
    for (auto* table : {&image, &text}) {
      for (auto& v : buf) v = static_cast<float>(num::standard_normal(rng));
      table->add(i, buf);
    }
  }
  data::attach_modalities(ds, image, text);
  return ds;
}

}  // namespace prism::synthetic

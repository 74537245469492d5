#pragma once

#include <cstdint>

#include "prism/data/dataset.hpp"

namespace prism::synthetic {

struct MemorizationSpec {
  std::size_t num_users = 100;
  std::size_t num_items = 50;
  std::size_t seq_len = 12;
  std::size_t content_dim = 8;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Every user follows one fixed random cycle through the catalog from a random start, so
/// the next item is a function of the current one. Image and text vectors are independent
/// Gaussians per item.
data::InteractionDataset memorization_dataset(const MemorizationSpec& s);

}  // namespace prism::synthetic

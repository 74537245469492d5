#pragma once

#include <filesystem>
#include <vector>

#include "prism/data/dataset.hpp"
#include "prism/numerics/ops.hpp"

namespace prism::data {

struct UserSplit {
  std::vector<ItemId> train;
  ItemId valid_target = kPaddingId;
  ItemId test_target = kPaddingId;
  bool evaluable = false;  // false for users with fewer than 3 interactions
};

/// Leave-one-out view over an InteractionDataset, indexed by dense user.
struct SplitView {
  std::vector<UserSplit> users;
  std::size_t num_items = 0;

  std::size_t num_users() const noexcept { return users.size(); }
  std::vector<std::size_t> evaluable_users() const;
  std::vector<std::size_t> excluded_users() const;
  /// Context for predicting the validation target (the training prefix).
  const std::vector<ItemId>& valid_context(std::size_t user) const { return users[user].train; }
  /// Context for predicting the test target (training prefix plus validation item).
  std::vector<ItemId> test_context(std::size_t user) const;
};

SplitView leave_one_out_split(const InteractionDataset& ds);

/// Audit export with raw ids: {"users": [{"user": u, "train": [...], "valid": v, "test": t}, ...]}.
void write_split_manifest(const std::filesystem::path& path, const InteractionDataset& ds, const SplitView& split);

/// One training mini-batch. Rows are right-aligned: the most recent input sits in the
/// last column, earlier slots are padding (id 0). All per-position arrays are [B*L].
struct Batch {
  std::size_t batch_size = 0;
  std::size_t len = 0;
  std::vector<std::size_t> users;
  std::vector<ItemId> items;
  std::vector<std::int64_t> positions;
  num::RowMask valid;
  std::vector<ItemId> positives;
  std::vector<ItemId> negatives;

  std::size_t rows() const noexcept { return batch_size * len; }
  std::size_t valid_count() const;
  bool operator==(const Batch&) const = default;
};

/// Next-item training batches over every user with at least two training items. Each
/// sequence is truncated to its most recent `max_len` items; inputs are all but the last,
/// targets are the items one step ahead. User order is a seeded permutation and negatives
/// are drawn uniformly from the catalog, avoiding the co-positioned positive.
std::vector<Batch> make_batches(const SplitView& split, std::size_t max_len, std::size_t batch_size,
                                std::uint64_t seed);

/// Right-aligned context rows for scoring (no targets). Contexts longer than `max_len`
/// keep their most recent items.
Batch make_context_batch(const std::vector<std::vector<ItemId>>& contexts, std::size_t max_len);

}  // namespace prism::data

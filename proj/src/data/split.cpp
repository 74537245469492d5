#include "prism/data/split.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "prism/errors.hpp"
#include "prism/numerics/rng.hpp"

namespace prism::data {

std::vector<std::size_t> SplitView::evaluable_users() const {
  std::vector<std::size_t> out;
  for (std::size_t u = 0; u < users.size(); ++u) {
    if (users[u].evaluable) out.push_back(u);
  }
  return out;
}

std::vector<std::size_t> SplitView::excluded_users() const {
  std::vector<std::size_t> out;
  for (std::size_t u = 0; u < users.size(); ++u) {
    if (!users[u].evaluable) out.push_back(u);
  }
  return out;
}

std::vector<ItemId> SplitView::test_context(std::size_t user) const {
  std::vector<ItemId> ctx = users[user].train;
  ctx.push_back(users[user].valid_target);
  return ctx;
}

SplitView leave_one_out_split(const InteractionDataset& ds) {
  SplitView split;
  split.num_items = ds.num_items();
  split.users.reserve(ds.num_users());
  for (const auto& seq : ds.sequences) {
    UserSplit us;
    const std::size_t n = seq.size();
    if (n >= 3) {
      us.train.assign(seq.begin(), seq.end() - 2);
      us.valid_target = seq[n - 2];
      us.test_target = seq[n - 1];
      us.evaluable = true;
    } else {
      // Too short to hold out two items; it still contributes training signal.
      us.train = seq;
    }
    split.users.push_back(std::move(us));
  }
  return split;
}

void write_split_manifest(const std::filesystem::path& path, const InteractionDataset& ds, const SplitView& split) {
  nlohmann::json users = nlohmann::json::array();
  auto raw = [&](ItemId i) { return ds.item_keys[static_cast<std::size_t>(i)]; };
  for (std::size_t u = 0; u < split.num_users(); ++u) {
    const UserSplit& us = split.users[u];
    nlohmann::json entry;
    entry["user"] = ds.user_keys[u];
    nlohmann::json train = nlohmann::json::array();
    for (ItemId i : us.train) train.push_back(raw(i));
    entry["train"] = std::move(train);
    if (us.evaluable) {
      entry["valid"] = raw(us.valid_target);
      entry["test"] = raw(us.test_target);
    } else {
      entry["excluded"] = true;
    }
    users.push_back(std::move(entry));
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write split manifest " + path.string());
  out << nlohmann::json{{"num_items", split.num_items}, {"users", std::move(users)}}.dump(1) << '\n';
}

std::size_t Batch::valid_count() const {
  return static_cast<std::size_t>(std::count(valid.begin(), valid.end(), std::uint8_t{1}));
}

namespace {

Batch empty_batch(std::size_t rows, std::size_t len) {
  Batch b;
  b.batch_size = rows;
  b.len = len;
  b.items.assign(rows * len, kPaddingId);
  b.positions.resize(rows * len);
  for (std::size_t r = 0; r < rows * len; ++r) b.positions[r] = static_cast<std::int64_t>(r % len);
  b.valid.assign(rows * len, 0);
  return b;
}

}  // namespace

std::vector<Batch> make_batches(const SplitView& split, std::size_t max_len, std::size_t batch_size,
                                std::uint64_t seed) {
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (max_len < 2) throw ConfigError("max_len must be at least 2");
  if (split.num_items < 2) throw DataError("negative sampling needs at least two items");

  std::vector<std::size_t> order;
  for (std::size_t u = 0; u < split.num_users(); ++u) {
    if (split.users[u].train.size() >= 2) order.push_back(u);
  }
  auto perm_rng = num::make_rng(seed, num::SeedStream::batching, 0);
  for (std::size_t i = order.size(); i > 1; --i) {
    std::swap(order[i - 1], order[num::uniform_index(perm_rng, i)]);
  }

  auto neg_rng = num::make_rng(seed, num::SeedStream::batching, 1);
  const auto n_items = static_cast<std::uint64_t>(split.num_items);
  std::vector<Batch> batches;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t rows = std::min(batch_size, order.size() - start);
    Batch b = empty_batch(rows, max_len);
    b.positives.assign(rows * max_len, kPaddingId);
    b.negatives.assign(rows * max_len, kPaddingId);
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t user = order[start + r];
      b.users.push_back(user);
      const auto& seq = split.users[user].train;
      const std::size_t keep = std::min(seq.size(), max_len);
      const auto recent = seq.end() - static_cast<std::ptrdiff_t>(keep);
      const std::size_t n_inputs = keep - 1;
      const std::size_t offset = max_len - n_inputs;
      for (std::size_t t = 0; t < n_inputs; ++t) {
        const std::size_t slot = r * max_len + offset + t;
        b.items[slot] = recent[static_cast<std::ptrdiff_t>(t)];
        b.positives[slot] = recent[static_cast<std::ptrdiff_t>(t + 1)];
        b.valid[slot] = 1;
        ItemId neg;
        do {
          neg = static_cast<ItemId>(num::uniform_index(neg_rng, n_items) + 1);
        } while (neg == b.positives[slot]);
        b.negatives[slot] = neg;
      }
    }
    batches.push_back(std::move(b));
  }
  return batches;
}

Batch make_context_batch(const std::vector<std::vector<ItemId>>& contexts, std::size_t max_len) {
  if (max_len < 1) throw ConfigError("max_len must be at least 1");
  Batch b = empty_batch(contexts.size(), max_len);
  for (std::size_t r = 0; r < contexts.size(); ++r) {
    const auto& ctx = contexts[r];
    const std::size_t keep = std::min(ctx.size(), max_len);
    for (std::size_t t = 0; t < keep; ++t) {
      const std::size_t slot = r * max_len + (max_len - keep) + t;
      b.items[slot] = ctx[ctx.size() - keep + t];
      b.valid[slot] = 1;
    }
  }
  return b;
}

}  // namespace prism::data

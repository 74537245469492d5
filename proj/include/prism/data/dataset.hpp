#pragma once

#include <cstdint>
#include <filesystem>
#include <unordered_map>
#include <vector>

#include "prism/numerics/tensor.hpp"

namespace prism::data {

/// Dense item id. 0 is the padding id; real items are 1..num_items.
using ItemId = std::int64_t;
inline constexpr ItemId kPaddingId = 0;

/// Raw (file-level) identifiers.
using RawId = std::uint64_t;

struct ItemRecord {
  RawId item_id = 0;
  std::vector<float> image_embedding;
  std::vector<float> text_embedding;
};

/// Precomputed vectors of one modality, keyed by raw item id, in file order.
struct EmbeddingTable {
  std::size_t dim = 0;
  std::vector<RawId> ids;
  std::vector<float> values;  // ids.size() x dim
  std::unordered_map<RawId, std::size_t> index;

  std::size_t size() const noexcept { return ids.size(); }
  void add(RawId id, std::span<const float> vector);
  std::span<const float> at(RawId id) const;
  bool contains(RawId id) const { return index.count(id) > 0; }
};

/// Per-item content aligned to dense ids: row 0 (padding) is all zeros.
struct ModalityContent {
  num::Tensor<float> image;  // [num_items + 1 x D_img]
  num::Tensor<float> text;   // [num_items + 1 x D_txt]

  bool empty() const noexcept { return image.empty(); }
  std::size_t image_dim() const { return image.empty() ? 0 : image.cols(); }
  std::size_t text_dim() const { return text.empty() ? 0 : text.cols(); }
};

/// Chronological item sequences per user. Users and items are remapped to dense ids
/// in ascending raw-id order, so the mapping does not depend on file row order.
struct InteractionDataset {
  std::vector<RawId> user_keys;                  // dense user index -> raw id
  std::vector<RawId> item_keys;                  // dense item id -> raw id; [0] is unused
  std::vector<std::vector<ItemId>> sequences;    // per dense user
  ModalityContent content;

  std::size_t num_users() const noexcept { return sequences.size(); }
  std::size_t num_items() const noexcept { return item_keys.empty() ? 0 : item_keys.size() - 1; }
  std::size_t num_interactions() const;
  ItemRecord record(ItemId item) const;
};

/// Reads `user<TAB>item<TAB>timestamp` rows ('#' lines and blank lines skipped). Each
/// user's items are ordered by ascending timestamp, ties by file order.
InteractionDataset load_interactions(const std::filesystem::path& path);

/// Same as load_interactions, reading from an in-memory TSV body.
InteractionDataset parse_interactions(std::istream& in);

/// Builds a dataset from raw per-user sequences that are already in chronological order.
InteractionDataset make_dataset(const std::vector<std::pair<RawId, std::vector<RawId>>>& raw_sequences);

/// Iteratively drops users and items with fewer than `min_count` interactions until both
/// constraints hold. Throws DataError("dataset exhausted") if nothing survives.
InteractionDataset five_core_filter(const InteractionDataset& ds, std::size_t min_count = 5);

/// Attaches image and text content; every item in the dataset must be covered.
void attach_modalities(InteractionDataset& ds, const EmbeddingTable& image, const EmbeddingTable& text);

/// Binary "PREM" layout: magic, u32 version (=1), u32 count, u32 dim, then count records
/// of (u64 item id, dim x f32), all little-endian.
EmbeddingTable load_modality_embeddings(const std::filesystem::path& path, std::size_t expected_dim);
EmbeddingTable read_modality_embeddings(const std::filesystem::path& path);
void write_modality_embeddings(const std::filesystem::path& path, const EmbeddingTable& table);

/// Writes interactions in the TSV format with timestamps 1, 2, ... per user.
void write_interactions(const std::filesystem::path& path, const InteractionDataset& ds);

}  // namespace prism::data

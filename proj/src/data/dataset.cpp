#include "prism/data/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <string_view>

#include "prism/binary_io.hpp"
#include "prism/errors.hpp"

namespace prism::data {

namespace {

constexpr std::uint32_t kEmbeddingVersion = 1;

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

template <class T>
bool parse_number(std::string_view field, T& out) {
  field = trim(field);
  if (field.empty()) return false;
  const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), out);
  return ec == std::errc{} && ptr == field.data() + field.size();
}

struct Event {
  RawId user;
  RawId item;
  double timestamp;
  std::size_t order;
};

std::string format_ids(const std::vector<RawId>& ids) {
  std::ostringstream os;
  const std::size_t shown = std::min<std::size_t>(ids.size(), 20);
  for (std::size_t i = 0; i < shown; ++i) os << (i ? ", " : "") << ids[i];
  if (ids.size() > shown) os << ", ... (" << ids.size() << " total)";
  return os.str();
}

}  // namespace

void EmbeddingTable::add(RawId id, std::span<const float> vector) {
  if (ids.empty() && dim == 0) dim = vector.size();
  if (vector.size() != dim) {
    throw DataError("embedding for item " + std::to_string(id) + " has dimension " + std::to_string(vector.size()) +
                    ", expected " + std::to_string(dim));
  }
  if (!index.emplace(id, ids.size()).second) throw DataError("duplicate embedding for item " + std::to_string(id));
  ids.push_back(id);
  values.insert(values.end(), vector.begin(), vector.end());
}

std::span<const float> EmbeddingTable::at(RawId id) const {
  const auto it = index.find(id);
  if (it == index.end()) throw DataError("no embedding for item " + std::to_string(id));
  return {values.data() + it->second * dim, dim};
}

std::size_t InteractionDataset::num_interactions() const {
  std::size_t n = 0;
  for (const auto& s : sequences) n += s.size();
  return n;
}

ItemRecord InteractionDataset::record(ItemId item) const {
  if (item <= 0 || static_cast<std::size_t>(item) > num_items()) {
    throw DataError("item id " + std::to_string(item) + " out of range");
  }
  ItemRecord rec;
  rec.item_id = item_keys[static_cast<std::size_t>(item)];
  if (!content.empty()) {
    const auto img = content.image.row(static_cast<std::size_t>(item));
    const auto txt = content.text.row(static_cast<std::size_t>(item));
    rec.image_embedding.assign(img.begin(), img.end());
    rec.text_embedding.assign(txt.begin(), txt.end());
  }
  return rec;
}

InteractionDataset make_dataset(const std::vector<std::pair<RawId, std::vector<RawId>>>& raw_sequences) {
  std::map<RawId, const std::vector<RawId>*> by_user;
  std::vector<RawId> items;
  for (const auto& [user, seq] : raw_sequences) {
    if (seq.empty()) continue;
    if (!by_user.emplace(user, &seq).second) throw DataError("duplicate user " + std::to_string(user));
    items.insert(items.end(), seq.begin(), seq.end());
  }
  std::sort(items.begin(), items.end());
  items.erase(std::unique(items.begin(), items.end()), items.end());

  InteractionDataset ds;
  ds.item_keys.reserve(items.size() + 1);
  ds.item_keys.push_back(0);
  ds.item_keys.insert(ds.item_keys.end(), items.begin(), items.end());
  std::unordered_map<RawId, ItemId> dense;
  dense.reserve(items.size());
  for (std::size_t i = 0; i < items.size(); ++i) dense.emplace(items[i], static_cast<ItemId>(i + 1));

  for (const auto& [user, seq] : by_user) {
    ds.user_keys.push_back(user);
    auto& out = ds.sequences.emplace_back();
    out.reserve(seq->size());
    for (RawId item : *seq) out.push_back(dense.at(item));
  }
  return ds;
}

InteractionDataset parse_interactions(std::istream& in) {
  std::vector<Event> events;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view view = trim(line);
    if (view.empty() || view.front() == '#') continue;
    std::vector<std::string_view> fields;
    for (std::size_t start = 0;;) {
      const std::size_t tab = view.find('\t', start);
      fields.push_back(view.substr(start, tab == std::string_view::npos ? std::string_view::npos : tab - start));
      if (tab == std::string_view::npos) break;
      start = tab + 1;
    }
    if (fields.size() != 3) {
      throw ParseError("expected 3 tab-separated fields (user, item, timestamp)", line_no);
    }
    Event ev{};
    ev.order = events.size();
    if (!parse_number(fields[0], ev.user)) throw ParseError("malformed user id '" + std::string(fields[0]) + "'", line_no);
    if (!parse_number(fields[1], ev.item)) throw ParseError("malformed item id '" + std::string(fields[1]) + "'", line_no);
    if (!parse_number(fields[2], ev.timestamp) || !std::isfinite(ev.timestamp)) {
      throw ParseError("malformed timestamp '" + std::string(fields[2]) + "'", line_no);
    }
    events.push_back(ev);
  }
  std::stable_sort(events.begin(), events.end(), [](const Event& a, const Event& b) {
    if (a.user != b.user) return a.user < b.user;
    return a.timestamp < b.timestamp;
  });
  std::vector<std::pair<RawId, std::vector<RawId>>> raw;
  for (const Event& ev : events) {
    if (raw.empty() || raw.back().first != ev.user) raw.emplace_back(ev.user, std::vector<RawId>{});
    raw.back().second.push_back(ev.item);
  }
  return make_dataset(raw);
}

InteractionDataset load_interactions(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open interactions file " + path.string());
  return parse_interactions(in);
}

InteractionDataset five_core_filter(const InteractionDataset& ds, std::size_t min_count) {
  std::vector<char> user_alive(ds.num_users(), 1);
  std::vector<char> item_alive(ds.num_items() + 1, 1);
  item_alive[0] = 0;
  bool changed = true;
  while (changed) {
    changed = false;
    std::vector<std::size_t> item_count(ds.num_items() + 1, 0);
    for (std::size_t u = 0; u < ds.num_users(); ++u) {
      if (!user_alive[u]) continue;
      std::size_t len = 0;
      for (ItemId i : ds.sequences[u]) len += item_alive[static_cast<std::size_t>(i)] ? 1 : 0;
      if (len < min_count) {
        user_alive[u] = 0;
        changed = true;
        continue;
      }
      for (ItemId i : ds.sequences[u]) {
        if (item_alive[static_cast<std::size_t>(i)]) ++item_count[static_cast<std::size_t>(i)];
      }
    }
    for (std::size_t i = 1; i <= ds.num_items(); ++i) {
      if (item_alive[i] && item_count[i] < min_count) {
        item_alive[i] = 0;
        changed = true;
      }
    }
  }

  std::vector<std::pair<RawId, std::vector<RawId>>> raw;
  for (std::size_t u = 0; u < ds.num_users(); ++u) {
    if (!user_alive[u]) continue;
    std::vector<RawId> seq;
    for (ItemId i : ds.sequences[u]) {
      if (item_alive[static_cast<std::size_t>(i)]) seq.push_back(ds.item_keys[static_cast<std::size_t>(i)]);
    }
    raw.emplace_back(ds.user_keys[u], std::move(seq));
  }
  if (raw.empty()) throw DataError("dataset exhausted: no users survive " + std::to_string(min_count) + "-core filtering");

  InteractionDataset out = make_dataset(raw);
  if (!ds.content.empty()) {
    out.content.image = num::Tensor<float>({out.num_items() + 1, ds.content.image_dim()}, 0.0F);
    out.content.text = num::Tensor<float>({out.num_items() + 1, ds.content.text_dim()}, 0.0F);
    std::unordered_map<RawId, std::size_t> old_ids;
    for (std::size_t i = 1; i <= ds.num_items(); ++i) old_ids.emplace(ds.item_keys[i], i);
    for (std::size_t i = 1; i <= out.num_items(); ++i) {
      const std::size_t old = old_ids.at(out.item_keys[i]);
      std::ranges::copy(ds.content.image.row(old), out.content.image.row(i).begin());
      std::ranges::copy(ds.content.text.row(old), out.content.text.row(i).begin());
    }
  }
  return out;
}

void attach_modalities(InteractionDataset& ds, const EmbeddingTable& image, const EmbeddingTable& text) {
  for (const auto* table : {&image, &text}) {
    std::vector<RawId> missing;
    for (std::size_t i = 1; i <= ds.num_items(); ++i) {
      if (!table->contains(ds.item_keys[i])) missing.push_back(ds.item_keys[i]);
    }
    if (!missing.empty()) {
      throw DataError(std::string("incomplete modality coverage (") + (table == &image ? "image" : "text") +
                      "): missing item ids " + format_ids(missing));
    }
  }
  ds.content.image = num::Tensor<float>({ds.num_items() + 1, image.dim}, 0.0F);
  ds.content.text = num::Tensor<float>({ds.num_items() + 1, text.dim}, 0.0F);
  for (std::size_t i = 1; i <= ds.num_items(); ++i) {
    std::ranges::copy(image.at(ds.item_keys[i]), ds.content.image.row(i).begin());
    std::ranges::copy(text.at(ds.item_keys[i]), ds.content.text.row(i).begin());
  }
}

EmbeddingTable read_modality_embeddings(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open embedding file " + path.string());
  const std::string what = "embedding file " + path.string();
  io::expect_magic(in, "PREM", what);
  const auto version = io::read_le<std::uint32_t>(in);
  if (version != kEmbeddingVersion) throw DataError(what + ": unsupported version " + std::to_string(version));
  const auto count = io::read_le<std::uint32_t>(in);
  const auto dim = io::read_le<std::uint32_t>(in);
  if (dim == 0) throw DataError(what + ": zero dimension");
  EmbeddingTable table;
  table.dim = dim;
  table.ids.reserve(count);
  table.values.reserve(static_cast<std::size_t>(count) * dim);
  std::vector<float> vec(dim);
  for (std::uint32_t r = 0; r < count; ++r) {
    const auto id = io::read_le<std::uint64_t>(in);
    for (auto& v : vec) {
      v = io::read_f32(in);
      if (!std::isfinite(v)) throw DataError(what + ": non-finite value for item " + std::to_string(id));
    }
    table.add(id, vec);
  }
  return table;
}

EmbeddingTable load_modality_embeddings(const std::filesystem::path& path, std::size_t expected_dim) {
  EmbeddingTable table = read_modality_embeddings(path);
  if (table.dim != expected_dim) {
    throw DataError("embedding file " + path.string() + ": dimension mismatch (file has " + std::to_string(table.dim) +
                    ", expected " + std::to_string(expected_dim) + ")");
  }
  return table;
}

void write_modality_embeddings(const std::filesystem::path& path, const EmbeddingTable& table) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write embedding file " + path.string());
  out.write("PREM", 4);
  io::write_le<std::uint32_t>(out, kEmbeddingVersion);
  io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(table.size()));
  io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(table.dim));
  for (std::size_t r = 0; r < table.size(); ++r) {
    io::write_le<std::uint64_t>(out, table.ids[r]);
    for (std::size_t c = 0; c < table.dim; ++c) io::write_f32(out, table.values[r * table.dim + c]);
  }
  if (!out) throw DataError("failed writing embedding file " + path.string());
}

void write_interactions(const std::filesystem::path& path, const InteractionDataset& ds) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write interactions file " + path.string());
  out << "# user_id\titem_id\ttimestamp\n";
  for (std::size_t u = 0; u < ds.num_users(); ++u) {
    for (std::size_t t = 0; t < ds.sequences[u].size(); ++t) {
      out << ds.user_keys[u] << '\t' << ds.item_keys[static_cast<std::size_t>(ds.sequences[u][t])] << '\t' << (t + 1)
          << '\n';
    }
  }
  if (!out) throw DataError("failed writing interactions file " + path.string());
}

}  // namespace prism::data

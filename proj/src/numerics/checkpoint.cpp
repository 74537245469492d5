#include "prism/numerics/checkpoint.hpp"

#include <fstream>

#include "prism/binary_io.hpp"

namespace prism::num {

void save_checkpoint(const std::filesystem::path& path, const StateDict<float>& tensors) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  out.write("PRCK", 4);
  io::write_le<std::uint32_t>(out, kCheckpointVersion);
  for (const auto& [name, tensor] : tensors) {
    io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(tensor.rank()));
    for (std::size_t d : tensor.shape()) io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    for (float v : tensor.values()) io::write_f32(out, v);
  }
  if (!out) throw DataError("failed writing checkpoint " + path.string());
}

StateDict<float> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  io::expect_magic(in, "PRCK", "checkpoint " + path.string());
  const auto version = io::read_le<std::uint32_t>(in);
  if (version != kCheckpointVersion) {
    throw DataError("checkpoint " + path.string() + ": unsupported version " + std::to_string(version));
  }
  StateDict<float> tensors;
  std::uint32_t name_len = 0;
  while (io::try_read_le(in, name_len)) {
    if (name_len > 4096) throw DataError("checkpoint " + path.string() + ": implausible name length");
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    if (static_cast<std::uint32_t>(in.gcount()) != name_len) throw DataError("truncated binary file");
    const auto rank = io::read_le<std::uint32_t>(in);
    if (rank > 8) throw DataError("checkpoint " + path.string() + ": implausible rank for '" + name + "'");
    Shape shape(rank);
    for (auto& d : shape) d = io::read_le<std::uint32_t>(in);
    std::vector<float> values(shape_size(shape));
    for (auto& v : values) v = io::read_f32(in);
    tensors.emplace_back(std::move(name), Tensor<float>(std::move(shape), std::move(values)));
  }
  return tensors;
}

}  // namespace prism::num

#include "colf/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace colf {

namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

constexpr char kMagic[4] = {'C', 'O', 'L', 'F'};

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is, const std::string& path) {
  T v;
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error("checkpoint: truncated file " + path);
  return v;
}

}  // namespace

void write_checkpoint(const std::string& path, const CheckpointMap& entries) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
  os.write(kMagic, 4);
  put<uint32_t>(os, kCheckpointVersion);
  put<uint64_t>(os, entries.size());
  for (const auto& [name, entry] : entries) {
    if (numel(entry.shape) != static_cast<int64_t>(entry.data.size()))
      throw std::runtime_error("checkpoint: entry " + name + " shape/data mismatch");
    put<uint32_t>(os, static_cast<uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<uint32_t>(os, static_cast<uint32_t>(entry.shape.size()));
    for (int64_t e : entry.shape) put<uint64_t>(os, static_cast<uint64_t>(e));
    os.write(reinterpret_cast<const char*>(entry.data.data()),
             static_cast<std::streamsize>(entry.data.size() * sizeof(double)));
  }
  if (!os) throw std::runtime_error("checkpoint: write failed for " + path);
}

CheckpointMap read_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("checkpoint: " + path + " is not a COLF container");
  const auto version = get<uint32_t>(is, path);
  if (version != kCheckpointVersion)
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version) + " in " + path);
  const auto count = get<uint64_t>(is, path);
  CheckpointMap out;
  for (uint64_t k = 0; k < count; ++k) {
    const auto name_len = get<uint32_t>(is, path);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    if (!is) throw std::runtime_error("checkpoint: truncated file " + path);
    const auto rank = get<uint32_t>(is, path);
    CheckpointEntry entry;
    int64_t n = 1;
    for (uint32_t i = 0; i < rank; ++i) {
      entry.shape.push_back(static_cast<int64_t>(get<uint64_t>(is, path)));
      n *= entry.shape.back();
    }
    entry.data.resize(static_cast<size_t>(n));
    is.read(reinterpret_cast<char*>(entry.data.data()),
            static_cast<std::streamsize>(entry.data.size() * sizeof(double)));
    if (!is) throw std::runtime_error("checkpoint: truncated payload for entry " + name + " in " + path);
    out.emplace(std::move(name), std::move(entry));
  }
  return out;
}

void store_to_checkpoint(const ParamStore& store, CheckpointMap& out) {
  for (size_t i = 0; i < store.count(); ++i) {
    const auto& t = store.tensors()[i];
    out[store.names()[i]] = CheckpointEntry{t->shape, t->data};
  }
}

void checkpoint_to_store(const CheckpointMap& in, ParamStore& store) {
  for (size_t i = 0; i < store.count(); ++i) {
    const auto& name = store.names()[i];
    auto it = in.find(name);
    if (it == in.end()) throw std::runtime_error("checkpoint: missing parameter " + name);
    auto& t = *store.tensors()[i];
    if (it->second.shape != t.shape)
      throw std::runtime_error("checkpoint: extents mismatch for " + name + ": file has " +
                               shape_str(it->second.shape) + ", model expects " + shape_str(t.shape));
    t.data = it->second.data;
  }
}

}  // namespace colf

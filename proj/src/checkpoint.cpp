#include "srtod/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace srtod {

namespace {

constexpr char kMagic[4] = {'S', 'R', 'T', 'K'};
constexpr uint32_t kVersion = 1;

template <typename T>
void put(std::ofstream& f, const T& v) {
  f.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::ifstream& f) {
  T v{};
  f.read(reinterpret_cast<char*>(&v), sizeof(T));
  return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path,
                     const ParamStore<float>& store, uint64_t config_hash,
                     int64_t step) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw StorageError("cannot write checkpoint: " + path.string());
  f.write(kMagic, 4);
  put(f, kVersion);
  put(f, config_hash);
  put(f, step);
  put(f, uint32_t(store.all().size()));
  for (const auto& p : store.all()) {
    put(f, uint16_t(p->name.size()));
    f.write(p->name.data(), std::streamsize(p->name.size()));
    put(f, uint8_t(p->value.rank()));
    for (int d : p->value.shape) put(f, int32_t(d));
    f.write(reinterpret_cast<const char*>(p->value.data.data()),
            std::streamsize(p->value.data.size() * sizeof(float)));
    f.write(reinterpret_cast<const char*>(p->momentum.data.data()),
            std::streamsize(p->momentum.data.size() * sizeof(float)));
  }
  if (!f) throw StorageError("checkpoint write failed: " + path.string());
}

int64_t load_checkpoint(const std::filesystem::path& path,
                        ParamStore<float>& store, uint64_t config_hash,
                        bool* hash_mismatch) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw StorageError("cannot open checkpoint: " + path.string());
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, kMagic, 4) != 0)
    throw StorageError("not a checkpoint file: " + path.string());
  const uint32_t version = get<uint32_t>(f);
  if (version != kVersion)
    throw StorageError("unsupported checkpoint version " + std::to_string(version));
  const uint64_t stored_hash = get<uint64_t>(f);
  if (hash_mismatch) *hash_mismatch = (stored_hash != config_hash);
  const int64_t step = get<int64_t>(f);
  const uint32_t n = get<uint32_t>(f);
  if (n != store.all().size())
    throw StorageError("checkpoint parameter count mismatch (" +
                       std::to_string(n) + " vs " +
                       std::to_string(store.all().size()) + ")");
  for (uint32_t i = 0; i < n; ++i) {
    const uint16_t len = get<uint16_t>(f);
    std::string name(len, '\0');
    f.read(name.data(), len);
    Param<float>* p = store.find(name);
    if (!p) throw StorageError("checkpoint has unknown parameter '" + name + "'");
    const uint8_t rank = get<uint8_t>(f);
    std::vector<int> shape(rank);
    for (auto& d : shape) d = get<int32_t>(f);
    if (shape != p->value.shape)
      throw StorageError("checkpoint shape mismatch for '" + name + "'");
    f.read(reinterpret_cast<char*>(p->value.data.data()),
           std::streamsize(p->value.data.size() * sizeof(float)));
    f.read(reinterpret_cast<char*>(p->momentum.data.data()),
           std::streamsize(p->momentum.data.size() * sizeof(float)));
  }
  if (!f) throw StorageError("truncated checkpoint: " + path.string());
  return step;
}

}  // namespace srtod

#include "dyfss/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace dyfss {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'D', 'Y', 'F', 'S', 'S', 'C', 'K', 'P'};
enum : std::uint8_t { kMatrix = 1, kInts = 2, kText = 3 };

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in, const std::string& file) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) throw Error("truncated checkpoint " + file);
  return v;
}

void put_string(std::ostream& out, const std::string& s) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& in, const std::string& file) {
  const auto len = get<std::uint32_t>(in, file);
  std::string s(len, '\0');
  if (len && !in.read(s.data(), len)) throw Error("truncated checkpoint " + file);
  return s;
}

}  // namespace

const Matrix& Checkpoint::matrix(const std::string& name) const {
  auto it = matrices.find(name);
  if (it == matrices.end()) throw Error("checkpoint has no matrix '" + name + "'");
  return it->second;
}

const std::vector<int>& Checkpoint::int_vector(const std::string& name) const {
  auto it = ints.find(name);
  if (it == ints.end()) throw Error("checkpoint has no integer vector '" + name + "'");
  return it->second;
}

const std::string& Checkpoint::meta(const std::string& name) const {
  auto it = text.find(name);
  if (it == text.end()) throw Error("checkpoint has no field '" + name + "'");
  return it->second;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write checkpoint " + tmp.string());
    out.write(kMagic, sizeof(kMagic));
    put<std::uint32_t>(out, Checkpoint::kVersion);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.matrices.size() + ckpt.ints.size() + ckpt.text.size()));
    for (const auto& [name, m] : ckpt.matrices) {
      put<std::uint8_t>(out, kMatrix);
      put_string(out, name);
      put<std::int64_t>(out, m.rows());
      put<std::int64_t>(out, m.cols());
      out.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
    }
    for (const auto& [name, v] : ckpt.ints) {
      put<std::uint8_t>(out, kInts);
      put_string(out, name);
      put<std::int64_t>(out, static_cast<std::int64_t>(v.size()));
      for (int x : v) put<std::int32_t>(out, x);
    }
    for (const auto& [name, s] : ckpt.text) {
      put<std::uint8_t>(out, kText);
      put_string(out, name);
      put_string(out, s);
    }
    if (!out) throw Error("failed writing checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const std::string file = path.string();
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint " + file);
  char magic[8];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw Error(file + " is not a checkpoint");
  const auto version = get<std::uint32_t>(in, file);
  if (version != Checkpoint::kVersion)
    throw Error("checkpoint " + file + " has schema version " + std::to_string(version) + ", expected " +
                std::to_string(Checkpoint::kVersion));
  const auto count = get<std::uint32_t>(in, file);
  Checkpoint ckpt;
  for (std::uint32_t e = 0; e < count; ++e) {
    const auto kind = get<std::uint8_t>(in, file);
    std::string name = get_string(in, file);
    switch (kind) {
      case kMatrix: {
        const auto rows = get<std::int64_t>(in, file);
        const auto cols = get<std::int64_t>(in, file);
        if (rows < 0 || cols < 0) throw Error("corrupt matrix header in " + file);
        Matrix m(rows, cols);
        if (!in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double))))
          throw Error("truncated checkpoint " + file);
        ckpt.matrices.emplace(std::move(name), std::move(m));
        break;
      }
      case kInts: {
        const auto n = get<std::int64_t>(in, file);
        if (n < 0) throw Error("corrupt vector header in " + file);
        std::vector<int> v(static_cast<std::size_t>(n));
        for (auto& x : v) x = get<std::int32_t>(in, file);
        ckpt.ints.emplace(std::move(name), std::move(v));
        break;
      }
      case kText:
        ckpt.text.emplace(std::move(name), get_string(in, file));
        break;
      default:
        throw Error("unknown entry kind in checkpoint " + file);
    }
  }
  return ckpt;
}

}  // namespace dyfss

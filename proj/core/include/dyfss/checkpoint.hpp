#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "dyfss/types.hpp"

namespace dyfss {

/// Named matrices, integer vectors and string metadata in a versioned
/// little-endian binary file:
///
///   "DYFSSCKP" | u32 version | u32 entry count | entries...
///   entry: u8 kind (1 matrix, 2 ints, 3 text) | u32 name length | name |
///          matrix: i64 rows, i64 cols, rows·cols f64 (row-major)
///          ints:   i64 count, count i32
///          text:   u32 length, bytes
///
/// Doubles are stored bit-exactly.
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  std::map<std::string, Matrix> matrices;
  std::map<std::string, std::vector<int>> ints;
  std::map<std::string, std::string> text;

  const Matrix& matrix(const std::string& name) const;
  const std::vector<int>& int_vector(const std::string& name) const;
  const std::string& meta(const std::string& name) const;
  bool has_matrix(const std::string& name) const { return matrices.count(name) > 0; }
};

/// Writes through a temporary file and renames, so an existing checkpoint
/// at `path` survives a failed write.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace dyfss

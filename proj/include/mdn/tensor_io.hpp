#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <vector>

#include "mdn/tensor.hpp"

namespace mdn {

// MDTN binary array format:
//   "MDTN" | version u8 | dtype u8 (0 = float32) | rank u8 |
//   shape: rank x int64 little-endian | payload: row-major float32 little-endian
struct MdtnArray {
  std::vector<int64_t> shape;
  std::vector<float> data;

  int64_t numel() const;
};

inline constexpr uint8_t kMdtnVersion = 1;
inline constexpr uint8_t kMdtnFloat32 = 0;

void write_mdtn(std::ostream& out, const MdtnArray& array);
MdtnArray read_mdtn(std::istream& in);

void save_mdtn(const std::filesystem::path& path, const MdtnArray& array);
MdtnArray load_mdtn(const std::filesystem::path& path);

MdtnArray to_mdtn(const Tensor& t);
// Ranks below 4 are left-padded with unit dimensions.
Tensor from_mdtn(const MdtnArray& array);

// Little-endian scalar helpers shared with the checkpoint container.
void write_u32(std::ostream& out, uint32_t v);
uint32_t read_u32(std::istream& in);

}  // namespace mdn

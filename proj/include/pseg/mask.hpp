#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace pseg {

/// 2D ({H,W}) or 3D ({D,H,W}) boolean grid, row-major (depth-major in 3D).
struct BinaryMask {
  std::vector<std::size_t> extents;
  std::vector<std::uint8_t> bits;  // one byte per voxel, 0 or 1

  BinaryMask() = default;
  explicit BinaryMask(std::vector<std::size_t> ext) : extents(std::move(ext)) {
    std::size_t n = 1;
    for (auto e : extents) {
      if (e == 0) throw std::invalid_argument("BinaryMask: extents must be positive");
      n *= e;
    }
    bits.assign(n, 0);
  }

  std::size_t size() const { return bits.size(); }
  std::size_t ndim() const { return extents.size(); }

  std::uint8_t& at(std::size_t linear) { return bits[linear]; }
  std::uint8_t at(std::size_t linear) const { return bits[linear]; }

  std::size_t count() const {
    std::size_t c = 0;
    for (auto b : bits) c += b;
    return c;
  }
  bool empty_mask() const { return count() == 0; }

  bool operator==(const BinaryMask& o) const { return extents == o.extents && bits == o.bits; }
};

inline std::string extents_str(const std::vector<std::size_t>& e) {
  std::string s = "[";
  for (std::size_t i = 0; i < e.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(e[i]);
  }
  return s + "]";
}

}  // namespace pseg

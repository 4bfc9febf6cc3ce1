#include "mafaseg/tensor.hpp"

#include <numeric>

namespace mafaseg {

std::string Shape::str() const {
  return "(" + std::to_string(n) + "," + std::to_string(h) + "," + std::to_string(w) + "," +
         std::to_string(c) + ")";
}

BinaryMask::BinaryMask(int h, int w, std::uint8_t fill) : height(h), width(w) {
  if (h < 1 || w < 1) {
    throw std::invalid_argument("BinaryMask: dimensions must be >= 1");
  }
  bits.assign(static_cast<std::size_t>(h) * w, fill ? 1 : 0);
}

std::size_t BinaryMask::count() const {
  return std::accumulate(bits.begin(), bits.end(), std::size_t{0},
                         [](std::size_t acc, std::uint8_t b) { return acc + (b ? 1 : 0); });
}

}  // namespace mafaseg

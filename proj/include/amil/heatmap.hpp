#ifndef AMIL_HEATMAP_HPP_
#define AMIL_HEATMAP_HPP_

#include <cstddef>
#include <span>
#include <string>

#include "amil/numkernel.hpp"

namespace amil {

/// Per-joint confidence grids stored channel-major: (channel, row, col).
struct Heatmap {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  Vector values;

  Heatmap() = default;
  Heatmap(std::size_t channels, std::size_t height, std::size_t width, double fill = 0.0);
  // Wraps a flat network output; throws ShapeError on a length mismatch.
  Heatmap(std::size_t channels, std::size_t height, std::size_t width, Vector flat);

  double& at(std::size_t j, std::size_t r, std::size_t c) {
    return values[(j * height + r) * width + c];
  }
  double at(std::size_t j, std::size_t r, std::size_t c) const {
    return values[(j * height + r) * width + c];
  }
  std::span<const double> channel(std::size_t j) const {
    return {values.data() + j * height * width, height * width};
  }
  std::size_t cells() const { return height * width; }
  bool same_shape(const Heatmap& other) const {
    return channels == other.channels && height == other.height && width == other.width;
  }
  std::string shape_string() const;

  bool operator==(const Heatmap&) const = default;
};

}  // namespace amil

#endif  // AMIL_HEATMAP_HPP_

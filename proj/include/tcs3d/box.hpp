#pragma once

#include <string>

#include "tcs3d/tensor.hpp"

namespace tcs3d {

// Axis-aligned rectangle in normalized [0,1] coordinates, x1 < x2, y1 < y2.
struct Box {
  double x1 = 0.0, y1 = 0.0, x2 = 0.0, y2 = 0.0;

  double area() const { return (x2 - x1) * (y2 - y1); }

  bool operator==(const Box&) const = default;
};

inline void check_box(const Box& b, const std::string& what = "box") {
  check(b.x1 < b.x2 && b.y1 < b.y2, what + " is degenerate: (" + std::to_string(b.x1) + "," +
                                        std::to_string(b.y1) + "," + std::to_string(b.x2) + "," +
                                        std::to_string(b.y2) + ")");
}

inline void check_box_normalized(const Box& b, const std::string& what = "box") {
  check_box(b, what);
  check(b.x1 >= 0.0 && b.y1 >= 0.0 && b.x2 <= 1.0 && b.y2 <= 1.0,
        what + " coordinates must lie in [0,1]");
}

}  // namespace tcs3d

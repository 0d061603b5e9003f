#pragma once

#include <string>
#include <vector>

#include "lvr/error.hpp"

namespace lvr {

/// Half-open pixel rectangle [x0, x1) x [y0, y1).
struct BBox {
  int x0 = 0;
  int y0 = 0;
  int x1 = 0;
  int y1 = 0;

  bool operator==(const BBox&) const = default;

  bool valid_for(int height, int width) const noexcept {
    return 0 <= x0 && x0 < x1 && x1 <= width && 0 <= y0 && y0 < y1 && y1 <= height;
  }
};

using PatchIndexList = std::vector<std::size_t>;

/// Row-major indices of every patch whose rectangle overlaps the box with
/// nonzero area. Closed-form: the covered patch rows are y0/P .. (y1-1)/P.
inline PatchIndexList bbox_to_patch_indices(const BBox& box, int height, int width, int patch) {
  require(patch > 0 && height % patch == 0 && width % patch == 0, ErrorKind::kDimension,
          "patch size " + std::to_string(patch) + " does not divide " + std::to_string(height) +
              "x" + std::to_string(width));
  require(box.valid_for(height, width), ErrorKind::kContract,
          "bbox (" + std::to_string(box.x0) + "," + std::to_string(box.y0) + "," +
              std::to_string(box.x1) + "," + std::to_string(box.y1) + ") invalid for image " +
              std::to_string(height) + "x" + std::to_string(width));
  const int cols = width / patch;
  const int r0 = box.y0 / patch, r1 = (box.y1 - 1) / patch;
  const int c0 = box.x0 / patch, c1 = (box.x1 - 1) / patch;
  PatchIndexList out;
  out.reserve(static_cast<std::size_t>((r1 - r0 + 1) * (c1 - c0 + 1)));
  for (int r = r0; r <= r1; ++r) {
    for (int c = c0; c <= c1; ++c) out.push_back(static_cast<std::size_t>(r * cols + c));
  }
  return out;
}

}  // namespace lvr

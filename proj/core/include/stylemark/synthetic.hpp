#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "stylemark/dataset.hpp"

namespace stylemark {

// Procedurally drawn cat-like faces with a 48-point annotation, for tests and
// desk-scale runs. Landmark layout (indices):
//   0-11 contour, 12-19 ears, 20-31 eyes, 32-35 nose, 36-39 mouth, 40-47 whisker pads.
struct SyntheticOptions {
  std::size_t count = 60;
  int image_size = 128;
  std::uint64_t seed = 1;
  bool write_masks = true;
};

// The 48-point template in a unit frame (face radius 1, y down).
std::vector<Point2> template_shape();

// Writes <dir>/images/*.png, <dir>/masks/*.png and <dir>/root.manifest.
// Output is a pure function of the options.
DatasetManifest generate_synthetic_dataset(const std::filesystem::path& dir,
                                           const SyntheticOptions& options);

}  // namespace stylemark

#pragma once

#include <cstdint>
#include <string>

#include "lvr/error.hpp"
#include "lvr/model/vocab.hpp"
#include "lvr/util/json_fields.hpp"

namespace lvr {

struct DataConfig {
  int grid_rows = 4;
  int grid_cols = 4;
  int patch_size = 28;
  int image_channels = 3;
  int n_colors = 8;
  double noise_std = 0.02;
  // Share of color_at_cell questions; the rest are count_in_region.
  double color_task_fraction = 0.5;
  // Largest side (in cells) of a count_in_region sub-grid.
  int max_region = 2;
  double heldout_fraction = 0.1;

  void validate() const {
    require(grid_rows > 0 && grid_cols > 0, ErrorKind::kConfig, "data grid must be non-empty");
    require(patch_size > 0 && image_channels > 0, ErrorKind::kConfig,
            "data.patch_size and data.image_channels must be positive");
    require(n_colors >= 1 && n_colors <= static_cast<int>(Vocab::kColorNames.size()),
            ErrorKind::kConfig, "data.n_colors must be in [1, 8]");
    require(noise_std >= 0, ErrorKind::kConfig, "data.noise_std must be non-negative");
    require(color_task_fraction >= 0 && color_task_fraction <= 1, ErrorKind::kConfig,
            "data.color_task_fraction must be in [0, 1]");
    require(max_region >= 1, ErrorKind::kConfig, "data.max_region must be at least 1");
    require(heldout_fraction >= 0 && heldout_fraction <= 1, ErrorKind::kConfig,
            "data.heldout_fraction must be in [0, 1]");
  }

  int image_height() const noexcept { return grid_rows * patch_size; }
  int image_width() const noexcept { return grid_cols * patch_size; }
};

inline Json to_json(const DataConfig& c) {
  Json j;
  j["grid_rows"] = c.grid_rows;
  j["grid_cols"] = c.grid_cols;
  j["patch_size"] = c.patch_size;
  j["image_channels"] = c.image_channels;
  j["n_colors"] = c.n_colors;
  j["noise_std"] = c.noise_std;
  j["color_task_fraction"] = c.color_task_fraction;
  j["max_region"] = c.max_region;
  j["heldout_fraction"] = c.heldout_fraction;
  return j;
}

inline DataConfig data_config_from_json(const Json& j, DataConfig c = {}) {
  JsonFields f(j, "data");
  f.read("grid_rows", c.grid_rows);
  f.read("grid_cols", c.grid_cols);
  f.read("patch_size", c.patch_size);
  f.read("image_channels", c.image_channels);
  f.read("n_colors", c.n_colors);
  f.read("noise_std", c.noise_std);
  f.read("color_task_fraction", c.color_task_fraction);
  f.read("max_region", c.max_region);
  f.read("heldout_fraction", c.heldout_fraction);
  f.finish();
  c.validate();
  return c;
}

}  // namespace lvr

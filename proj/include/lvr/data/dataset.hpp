#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "lvr/data/bbox.hpp"
#include "lvr/data/config.hpp"
#include "lvr/model/vision.hpp"
#include "lvr/model/vocab.hpp"

namespace lvr {

enum class TaskKind { kColorAtCell, kCountInRegion };

inline std::string to_string(TaskKind k) {
  return k == TaskKind::kColorAtCell ? "color_at_cell" : "count_in_region";
}

inline TaskKind parse_task_kind(const std::string& s) {
  if (s == "color_at_cell") return TaskKind::kColorAtCell;
  if (s == "count_in_region") return TaskKind::kCountInRegion;
  fail(ErrorKind::kFormat, "unknown task kind '" + s + "'");
}

enum class Split { kTrain = 0, kHeldout = 1 };

inline std::string to_string(Split s) { return s == Split::kTrain ? "train" : "heldout"; }

inline Split parse_split(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "heldout") return Split::kHeldout;
  fail(ErrorKind::kFormat, "unknown split '" + s + "'");
}

/// RGB palette in Vocab::kColorNames order.
inline constexpr std::array<std::array<float, 3>, 8> kPalette{{{1, 0, 0},
                                                               {0, 1, 0},
                                                               {0, 0, 1},
                                                               {1, 1, 0},
                                                               {0, 1, 1},
                                                               {1, 0, 1},
                                                               {1, 1, 1},
                                                               {0, 0, 0}}};

struct SyntheticScene {
  int grid_rows = 0;
  int grid_cols = 0;
  std::vector<int> cell_colors;  // row-major palette indices

  int color(int r, int c) const { return cell_colors[static_cast<std::size_t>(r * grid_cols + c)]; }
};

/// Each cell is a P x P block of its palette colour plus N(0, noise_std) noise
/// per pixel. Channel ch takes palette component ch % 3.
inline Image render_scene(const SyntheticScene& scene, int patch, int channels, double noise_std,
                          std::mt19937_64& rng) {
  Image img(channels, scene.grid_rows * patch, scene.grid_cols * patch);
  std::normal_distribution<double> noise(0.0, noise_std > 0 ? noise_std : 1.0);
  for (int ch = 0; ch < channels; ++ch) {
    for (int y = 0; y < img.height; ++y) {
      for (int x = 0; x < img.width; ++x) {
        const float base =
            kPalette[static_cast<std::size_t>(scene.color(y / patch, x / patch))][ch % 3];
        const double n = noise_std > 0 ? noise(rng) : 0.0;
        img.at(ch, y, x) = static_cast<float>(base + n);
      }
    }
  }
  return img;
}

/// Nearest palette colour to the cell's mean pixel.
inline int decode_cell_color(const Image& img, int patch, int r, int c, int n_colors) {
  std::vector<double> mean(static_cast<std::size_t>(img.channels), 0.0);
  for (int ch = 0; ch < img.channels; ++ch) {
    for (int dy = 0; dy < patch; ++dy) {
      for (int dx = 0; dx < patch; ++dx) mean[ch] += img.at(ch, r * patch + dy, c * patch + dx);
    }
    mean[ch] /= patch * patch;
  }
  int best = 0;
  double best_d = 1e300;
  for (int k = 0; k < n_colors; ++k) {
    double d = 0;
    for (int ch = 0; ch < img.channels; ++ch) {
      const double diff = mean[ch] - kPalette[static_cast<std::size_t>(k)][ch % 3];
      d += diff * diff;
    }
    if (d < best_d) {
      best_d = d;
      best = k;
    }
  }
  return best;
}

struct SFTInstance {
  std::string id;
  std::string image_path;  // relative to the manifest directory
  int channels = 0;
  int height = 0;
  int width = 0;
  TaskKind task = TaskKind::kColorAtCell;
  std::vector<int> question;
  BBox bbox;
  std::vector<int> answer;
  Split split = Split::kTrain;
  std::uint64_t scene_seed = 0;

  bool operator==(const SFTInstance&) const = default;
};

struct GeneratedInstance {
  SFTInstance instance;
  SyntheticScene scene;
  Image image;
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

/// Scene seeds carry the split in their lowest bit, so the two splits can
/// never share a scene.
inline std::uint64_t scene_seed_for(std::uint64_t seed, Split split, std::uint64_t index) {
  const std::uint64_t h = splitmix64(splitmix64(seed) ^ splitmix64(index + 0x51ed27ull));
  return (h & ~std::uint64_t{1}) | static_cast<std::uint64_t>(split);
}

inline GeneratedInstance generate_instance(const DataConfig& cfg, const Vocab& vocab,
                                           std::uint64_t scene_seed, std::string id,
                                           Split split) {
  std::mt19937_64 rng(scene_seed);
  const int P = cfg.patch_size;
  GeneratedInstance g;
  auto& s = g.scene;
  s.grid_rows = cfg.grid_rows;
  s.grid_cols = cfg.grid_cols;
  std::uniform_int_distribution<int> color(0, cfg.n_colors - 1);
  for (int i = 0; i < cfg.grid_rows * cfg.grid_cols; ++i) s.cell_colors.push_back(color(rng));

  auto& inst = g.instance;
  inst.id = std::move(id);
  inst.image_path = "images/" + inst.id + ".lvri";
  inst.channels = cfg.image_channels;
  inst.height = cfg.image_height();
  inst.width = cfg.image_width();
  inst.split = split;
  inst.scene_seed = scene_seed;

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const bool color_task = unit(rng) < cfg.color_task_fraction;
  if (color_task) {
    inst.task = TaskKind::kColorAtCell;
    const int r = std::uniform_int_distribution<int>(0, cfg.grid_rows - 1)(rng);
    const int c = std::uniform_int_distribution<int>(0, cfg.grid_cols - 1)(rng);
    inst.question = {vocab.id("color"), vocab.digit(r), vocab.digit(c), vocab.id("?")};
    inst.bbox = {c * P, r * P, (c + 1) * P, (r + 1) * P};
    inst.answer = {vocab.color(s.color(r, c))};
  } else {
    inst.task = TaskKind::kCountInRegion;
    const int h = std::uniform_int_distribution<int>(1, std::min(cfg.max_region, cfg.grid_rows))(rng);
    const int w = std::uniform_int_distribution<int>(1, std::min(cfg.max_region, cfg.grid_cols))(rng);
    const int r0 = std::uniform_int_distribution<int>(0, cfg.grid_rows - h)(rng);
    const int c0 = std::uniform_int_distribution<int>(0, cfg.grid_cols - w)(rng);
    int target;
    if (unit(rng) < 0.5) {
      const int dr = std::uniform_int_distribution<int>(0, h - 1)(rng);
      const int dc = std::uniform_int_distribution<int>(0, w - 1)(rng);
      target = s.color(r0 + dr, c0 + dc);
    } else {
      target = color(rng);
    }
    int count = 0;
    for (int r = r0; r < r0 + h; ++r) {
      for (int c = c0; c < c0 + w; ++c) count += s.color(r, c) == target;
    }
    inst.question = {vocab.id("count"),       vocab.color(target),     vocab.digit(r0),
                     vocab.digit(c0),         vocab.digit(r0 + h - 1), vocab.digit(c0 + w - 1),
                     vocab.id("?")};
    inst.bbox = {c0 * P, r0 * P, (c0 + w) * P, (r0 + h) * P};
    inst.answer = {vocab.digit(count)};
  }
  g.image = render_scene(s, P, cfg.image_channels, cfg.noise_std, rng);
  return g;
}

inline std::string instance_id(Split split, std::size_t index) {
  std::string n = std::to_string(index);
  return to_string(split) + "-" + std::string(n.size() < 6 ? 6 - n.size() : 0, '0') + n;
}

/// Calls fn(GeneratedInstance&&) for instances 0..n-1 of one split, in order.
/// Images are not retained, so arbitrarily large splits stream in constant
/// memory.
template <class Fn>
void generate_split(const DataConfig& cfg, const Vocab& vocab, std::uint64_t seed, Split split,
                    std::size_t n, Fn&& fn) {
  cfg.validate();
  for (std::size_t i = 0; i < n; ++i) {
    fn(generate_instance(cfg, vocab, scene_seed_for(seed, split, i), instance_id(split, i), split));
  }
}

/// n instances in total; round(n * heldout_fraction) of them held out.
inline std::vector<GeneratedInstance> generate_dataset(const DataConfig& cfg, const Vocab& vocab,
                                                       std::uint64_t seed, std::size_t n) {
  const auto n_heldout = static_cast<std::size_t>(std::llround(static_cast<double>(n) * cfg.heldout_fraction));
  std::vector<GeneratedInstance> out;
  out.reserve(n);
  auto keep = [&](GeneratedInstance&& g) { out.push_back(std::move(g)); };
  generate_split(cfg, vocab, seed, Split::kTrain, n - n_heldout, keep);
  generate_split(cfg, vocab, seed, Split::kHeldout, n_heldout, keep);
  return out;
}

}  // namespace lvr

#pragma once
// Patch grids and mask plans. Patches are serialised row-major over the grid,
// each patch flattened as (row-in-patch, col-in-patch, channel).

#include "lmim/common.hpp"
#include "lmim/image.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <numeric>
#include <string>
#include <vector>

namespace lmim {

inline constexpr int kPatchSize = 4;

struct PatchGrid {
  int rows = 0;
  int cols = 0;
  int patch = 0;
  int channels = 0;
  std::vector<float> data;  // rows*cols patches of patch*patch*channels values

  int num_patches() const { return rows * cols; }
  int patch_dim() const { return patch * patch * channels; }
  const float* patch_ptr(int k) const { return data.data() + static_cast<std::size_t>(k) * patch_dim(); }
};

inline PatchGrid patchify(const Image& img, int P = kPatchSize) {
  if (P <= 0 || img.height % P != 0 || img.width % P != 0) {
    throw DimensionError("patchify: image " + std::to_string(img.height) + "x" + std::to_string(img.width) +
                         " is not divisible by patch size " + std::to_string(P));
  }
  PatchGrid g{img.height / P, img.width / P, P, img.channels, {}};
  g.data.resize(img.pixels.size());
  std::size_t o = 0;
  for (int r = 0; r < g.rows; ++r)
    for (int c = 0; c < g.cols; ++c)
      for (int py = 0; py < P; ++py)
        for (int px = 0; px < P; ++px)
          for (int ch = 0; ch < img.channels; ++ch) g.data[o++] = img.at(r * P + py, c * P + px, ch);
  return g;
}

inline Image unpatchify(const PatchGrid& g) {
  if (g.rows <= 0 || g.cols <= 0 || g.patch <= 0 || g.channels <= 0 ||
      g.data.size() != static_cast<std::size_t>(g.num_patches()) * g.patch_dim()) {
    throw DimensionError("unpatchify: grid of " + std::to_string(g.data.size()) + " values does not match " +
                         std::to_string(g.rows) + "x" + std::to_string(g.cols) + " patches of dim " +
                         std::to_string(g.patch_dim()));
  }
  const int P = g.patch;
  Image img(g.rows * P, g.cols * P, g.channels);
  std::size_t o = 0;
  for (int r = 0; r < g.rows; ++r)
    for (int c = 0; c < g.cols; ++c)
      for (int py = 0; py < P; ++py)
        for (int px = 0; px < P; ++px)
          for (int ch = 0; ch < g.channels; ++ch) img.at(r * P + py, c * P + px, ch) = g.data[o++];
  return img;
}

// ---------------------------------------------------------------------------

enum class MaskStrategy { random, block };

inline std::string to_string(MaskStrategy s) { return s == MaskStrategy::random ? "random" : "block"; }

inline MaskStrategy parse_mask_strategy(const std::string& s) {
  if (s == "random") return MaskStrategy::random;
  if (s == "block") return MaskStrategy::block;
  throw ValidationError("unknown mask strategy '" + s + "'");
}

struct MaskPlan {
  std::vector<int> masked;  // sorted ascending
  MaskStrategy strategy = MaskStrategy::random;
  double ratio = 0.0;
  std::uint64_t seed = 0;
  int num_patches = 0;

  std::vector<int> visible() const {
    std::vector<int> out;
    out.reserve(num_patches - masked.size());
    std::size_t j = 0;
    for (int k = 0; k < num_patches; ++k) {
      if (j < masked.size() && masked[j] == k) {
        ++j;
      } else {
        out.push_back(k);
      }
    }
    return out;
  }

  bool is_masked(int k) const { return std::binary_search(masked.begin(), masked.end(), k); }

  /// Throws unless `masked` is a sorted, duplicate-free subset of [0, num_patches).
  void validate() const {
    for (std::size_t i = 0; i < masked.size(); ++i) {
      if (masked[i] < 0 || masked[i] >= num_patches) {
        throw ValidationError("mask plan: index " + std::to_string(masked[i]) + " outside [0, " +
                              std::to_string(num_patches) + ")");
      }
      if (i > 0 && masked[i] <= masked[i - 1]) throw ValidationError("mask plan: indices not strictly increasing");
    }
  }

  nlohmann::json to_json() const {
    return {{"strategy", to_string(strategy)}, {"ratio", ratio}, {"seed", seed},
            {"num_patches", num_patches}, {"indices", masked}};
  }

  static MaskPlan from_json(const nlohmann::json& j) {
    MaskPlan p;
    p.strategy = parse_mask_strategy(j.at("strategy").get<std::string>());
    p.ratio = j.at("ratio").get<double>();
    p.seed = j.at("seed").get<std::uint64_t>();
    p.num_patches = j.at("num_patches").get<int>();
    p.masked = j.at("indices").get<std::vector<int>>();
    p.validate();
    return p;
  }
};

/// Half-up rounding of ratio * n.
inline int rounded_count(double ratio, int n) { return static_cast<int>(std::floor(ratio * n + 0.5)); }

inline void check_ratio(double ratio) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw ValidationError("mask ratio must lie in (0, 1), got " + std::to_string(ratio));
}

inline MaskPlan plan_random_mask(int N, double ratio, std::uint64_t seed) {
  check_ratio(ratio);
  require(N >= 1, "plan_random_mask: N must be positive");
  const int m = rounded_count(ratio, N);
  std::vector<int> perm(N);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(derive_seed(seed, 0x6d61736b));  // "mask"
  // Partial Fisher-Yates: the first m slots are a uniform m-subset.
  for (int i = 0; i < m; ++i) {
    const int j = i + static_cast<int>(rng.below(static_cast<std::uint64_t>(N - i)));
    std::swap(perm[i], perm[j]);
  }
  perm.resize(m);
  std::sort(perm.begin(), perm.end());
  return {std::move(perm), MaskStrategy::random, ratio, seed, N};
}

/// Masks a full-height span of round(ratio * cols) adjacent columns.
inline MaskPlan plan_block_mask(int rows, int cols, double ratio, std::uint64_t seed) {
  check_ratio(ratio);
  require(rows >= 1 && cols >= 1, "plan_block_mask: grid must be non-empty");
  const int width = rounded_count(ratio, cols);
  if (width == 0 || width == cols) {
    throw ValidationError("block mask: ratio " + std::to_string(ratio) + " gives a degenerate span of " +
                          std::to_string(width) + " of " + std::to_string(cols) + " columns");
  }
  Rng rng(derive_seed(seed, 0x626c6f63));  // "bloc"
  const int start = static_cast<int>(rng.below(static_cast<std::uint64_t>(cols - width + 1)));
  std::vector<int> masked;
  masked.reserve(static_cast<std::size_t>(rows) * width);
  for (int r = 0; r < rows; ++r)
    for (int c = start; c < start + width; ++c) masked.push_back(r * cols + c);
  return {std::move(masked), MaskStrategy::block, ratio, seed, rows * cols};
}

inline MaskPlan plan_mask(MaskStrategy s, int rows, int cols, double ratio, std::uint64_t seed) {
  return s == MaskStrategy::random ? plan_random_mask(rows * cols, ratio, seed)
                                   : plan_block_mask(rows, cols, ratio, seed);
}

}  // namespace lmim

#pragma once
// Attention maps of a query patch and their heatmap overlays.

#include "lmim/checkpoint.hpp"
#include "lmim/common.hpp"
#include "lmim/encoder.hpp"
#include "lmim/image.hpp"
#include "lmim/train.hpp"

#include <array>
#include <cmath>
#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

namespace lmim {

struct AttentionMap {
  int rows = 0;
  int cols = 0;
  std::vector<double> weights;  // rows * cols, row-major over the patch grid
  int query_index = 0;
  int block_index = 0;

  double at(int r, int c) const { return weights[static_cast<std::size_t>(r) * cols + c]; }
  double sum() const {
    double s = 0.0;
    for (double w : weights) s += w;
    return s;
  }
  /// Shannon entropy in nats.
  double entropy() const {
    double h = 0.0;
    for (double w : weights)
      if (w > 0) h -= w * std::log(w);
    return h;
  }
};

/// Head-averaged attention of patch (row, col) over all patch keys at
/// `block` (-1: last). The [cls] key is dropped and the rest renormalized.
template <class T>
AttentionMap extract_attention(const Encoder<T>& encoder, const Image& image, int row, int col, int block = -1) {
  const auto& cfg = encoder.config();
  if (row < 0 || row >= cfg.rows() || col < 0 || col >= cfg.cols()) {
    throw ValidationError("query (" + std::to_string(row) + ", " + std::to_string(col) + ") outside the " +
                          std::to_string(cfg.rows()) + "x" + std::to_string(cfg.cols()) + " patch grid");
  }
  if (block == -1) block = cfg.depth - 1;
  if (block < 0 || block >= cfg.depth) {
    throw ValidationError("block " + std::to_string(block) + " outside [0, " + std::to_string(cfg.depth) + ")");
  }
  EncoderCache<T> cache;
  encoder.forward(stack_images<T>({&image}, cfg.patch), 1, nullptr, &cache);
  const auto& probs = cache.blocks[block].attn.probs;
  const int L = cache.length;
  const int q = 1 + row * cfg.cols() + col;
  const int heads = encoder.blocks()[block].attn.heads;

  AttentionMap m;
  m.rows = cfg.rows();
  m.cols = cfg.cols();
  m.query_index = q - 1;
  m.block_index = block;
  m.weights.assign(static_cast<std::size_t>(L - 1), 0.0);
  for (int h = 0; h < heads; ++h)
    for (int k = 1; k < L; ++k) m.weights[k - 1] += static_cast<double>(probs(static_cast<Eigen::Index>(h) * L + q, k));
  double s = 0.0;
  for (double w : m.weights) s += w;
  for (double& w : m.weights) w /= s;
  return m;
}

inline AttentionMap extract_attention(const Checkpoint& ck, const Image& image, int row, int col, int block = -1) {
  return extract_attention(*load_encoder<double>(ck), image, row, col, block);
}

/// Fixed viridis-like ramp: dark blue-violet (cold) to yellow (hot), luminance increasing.
inline std::array<float, 3> colormap(double t) {
  static const std::array<std::array<float, 3>, 9> anchors{{{0.267f, 0.005f, 0.329f},
                                                            {0.278f, 0.175f, 0.483f},
                                                            {0.231f, 0.322f, 0.545f},
                                                            {0.173f, 0.449f, 0.557f},
                                                            {0.128f, 0.567f, 0.551f},
                                                            {0.153f, 0.683f, 0.502f},
                                                            {0.360f, 0.785f, 0.388f},
                                                            {0.678f, 0.864f, 0.190f},
                                                            {0.993f, 0.906f, 0.144f}}};
  static const std::array<std::array<float, 3>, 256> lut = [] {
    std::array<std::array<float, 3>, 256> l{};
    for (int i = 0; i < 256; ++i) {
      const double x = i / 255.0 * 8.0;
      const int a = std::min(7, static_cast<int>(x));
      const double f = x - a;
      for (int c = 0; c < 3; ++c) l[i][c] = static_cast<float>(anchors[a][c] * (1 - f) + anchors[a + 1][c] * f);
    }
    return l;
  }();
  const int idx = static_cast<int>(std::lround(std::clamp(t, 0.0, 1.0) * 255.0));
  return lut[idx];
}

/// Input upsampled 4x (nearest) and alpha-blended with the colour-mapped map;
/// the query patch is outlined in red.
inline Image render_heatmap_image(const AttentionMap& map, const Image& image, int scale = 4, double alpha = 0.55) {
  require(map.rows > 0 && map.cols > 0 && static_cast<int>(map.weights.size()) == map.rows * map.cols, "render_heatmap: malformed map");
  require(image.height % map.rows == 0 && image.width % map.cols == 0, "render_heatmap: image does not tile the map grid");
  const int ph = image.height / map.rows, pw = image.width / map.cols;
  double lo = map.weights[0], hi = map.weights[0];
  for (double w : map.weights) {
    lo = std::min(lo, w);
    hi = std::max(hi, w);
  }
  const double span = hi - lo;
  Image out(image.height * scale, image.width * scale, 3);
  for (int y = 0; y < out.height; ++y) {
    for (int x = 0; x < out.width; ++x) {
      const int sy = y / scale, sx = x / scale;
      const double w = map.at(sy / ph, sx / pw);
      const auto c = colormap(span > 0 ? (w - lo) / span : 0.0);
      for (int ch = 0; ch < 3; ++ch) {
        const float base = image.at(sy, sx, std::min(ch, image.channels - 1));
        out.at(y, x, ch) = static_cast<float>((1 - alpha) * base + alpha * c[ch]);
      }
    }
  }
  const int qr = map.query_index / map.cols, qc = map.query_index % map.cols;
  const int y0 = qr * ph * scale, x0 = qc * pw * scale, y1 = y0 + ph * scale - 1, x1 = x0 + pw * scale - 1;
  const int t = std::max(1, scale / 2);
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) {
      if (y - y0 < t || y1 - y < t || x - x0 < t || x1 - x < t) {
        out.at(y, x, 0) = 1.0f;
        out.at(y, x, 1) = 0.0f;
        out.at(y, x, 2) = 0.0f;
      }
    }
  return out;
}

inline void render_heatmap(const AttentionMap& map, const Image& image, const std::filesystem::path& out_path) {
  write_png(render_heatmap_image(map, image), out_path);
}

struct NamedMap {
  std::string name;
  AttentionMap map;
};

/// One heatmap row per encoder, stacked top to bottom with a white gap;
/// prints `name<TAB>entropy` per row.
template <class T>
std::vector<NamedMap> compare_methods(const std::vector<std::pair<std::string, const Encoder<T>*>>& encoders,
                                      const Image& image, int row, int col, const std::filesystem::path& out_path,
                                      std::ostream* console = nullptr, int block = -1) {
  require(!encoders.empty(), "compare_methods: no encoders");
  std::vector<NamedMap> maps;
  std::vector<Image> panels;
  for (const auto& [name, enc] : encoders) {
    maps.push_back({name, extract_attention(*enc, image, row, col, block)});
    panels.push_back(render_heatmap_image(maps.back().map, image));
    if (console) {
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%.6f", maps.back().map.entropy());
      *console << name << '\t' << buf << '\n';
    }
  }
  const int gap = 4;
  const int H = panels[0].height, W = panels[0].width;
  Image fig(static_cast<int>(panels.size()) * H + (static_cast<int>(panels.size()) - 1) * gap, W, 3, 1.0f);
  for (std::size_t i = 0; i < panels.size(); ++i) {
    const int oy = static_cast<int>(i) * (H + gap);
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x)
        for (int c = 0; c < 3; ++c) fig.at(oy + y, x, c) = panels[i].at(y, x, c);
  }
  write_png(fig, out_path);
  return maps;
}

}  // namespace lmim

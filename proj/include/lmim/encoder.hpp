#pragma once
// Vision-transformer encoder shared by both pre-training branches, the
// teacher and the recognizer.

#include "lmim/common.hpp"
#include "lmim/image.hpp"
#include "lmim/nn.hpp"
#include "lmim/patching.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <optional>
#include <string>
#include <vector>

namespace lmim {

struct EncoderConfig {
  int depth = 4;
  int dim = 64;
  int heads = 4;
  double mlp_ratio = 4.0;
  int patch = kPatchSize;
  int height = kImageHeight;
  int width = kImageWidth;
  int channels = kImageChannels;

  /// ViT-small as used for full-scale pre-training.
  static EncoderConfig paper_scale() {
    EncoderConfig c;
    c.depth = 12;
    c.dim = 384;
    c.heads = 6;
    return c;
  }

  int rows() const { return height / patch; }
  int cols() const { return width / patch; }
  int num_patches() const { return rows() * cols(); }
  int patch_dim() const { return patch * patch * channels; }
  int hidden() const { return static_cast<int>(std::lround(dim * mlp_ratio)); }

  void validate() const {
    require(depth >= 1, "encoder.depth must be >= 1");
    require(dim >= 4 && dim % 4 == 0, "encoder.dim must be a positive multiple of 4");
    require(heads >= 1 && dim % heads == 0, "encoder.dim must be divisible by encoder.heads");
    require(mlp_ratio > 0, "encoder.mlp_ratio must be positive");
    require(patch >= 1 && height % patch == 0 && width % patch == 0, "image size must be divisible by patch size");
  }

  nlohmann::json to_json() const {
    return {{"depth", depth}, {"dim", dim},       {"heads", heads}, {"mlp_ratio", mlp_ratio},
            {"patch", patch}, {"height", height}, {"width", width}, {"channels", channels}};
  }
  static EncoderConfig from_json(const nlohmann::json& j) {
    EncoderConfig c;
    c.depth = j.at("depth");
    c.dim = j.at("dim");
    c.heads = j.at("heads");
    c.mlp_ratio = j.at("mlp_ratio");
    c.patch = j.at("patch");
    c.height = j.at("height");
    c.width = j.at("width");
    c.channels = j.at("channels");
    c.validate();
    return c;
  }
  bool operator==(const EncoderConfig&) const = default;
};

/// A batch of token sequences. Sequence b occupies rows [b*length, (b+1)*length).
template <class T>
struct TokenBatch {
  Mat<T> tokens;
  int batch = 0;
  int length = 0;
  bool has_cls = true;
  std::vector<int> position_ids;  // per row; -1 for [cls]

  int dim() const { return static_cast<int>(tokens.cols()); }
  auto sequence(int b) const { return tokens.middleRows(static_cast<Eigen::Index>(b) * length, length); }
  auto row(int b, int i) const { return tokens.row(static_cast<Eigen::Index>(b) * length + i); }
};

/// Fixed 2-D sine-cosine embedding: first half of the channels encodes the
/// grid row, second half the grid column.
template <class T>
Mat<T> sincos_pos_embed(int rows, int cols, int dim) {
  require(dim % 4 == 0, "positional embedding dim must be divisible by 4");
  const int quarter = dim / 4;
  Mat<T> pe(rows * cols, dim);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      const int k = r * cols + c;
      for (int i = 0; i < quarter; ++i) {
        const double omega = 1.0 / std::pow(10000.0, static_cast<double>(i) / quarter);
        pe(k, i) = static_cast<T>(std::sin(r * omega));
        pe(k, quarter + i) = static_cast<T>(std::cos(r * omega));
        pe(k, 2 * quarter + i) = static_cast<T>(std::sin(c * omega));
        pe(k, 3 * quarter + i) = static_cast<T>(std::cos(c * omega));
      }
    }
  }
  return pe;
}

/// Stacks the patch vectors of several images into (B*N) x patch_dim rows.
template <class T>
Mat<T> stack_patches(const std::vector<PatchGrid>& grids) {
  require(!grids.empty(), "stack_patches: empty batch");
  const int n = grids.front().num_patches();
  const int pd = grids.front().patch_dim();
  Mat<T> out(static_cast<Eigen::Index>(grids.size()) * n, pd);
  for (std::size_t b = 0; b < grids.size(); ++b) {
    if (grids[b].num_patches() != n || grids[b].patch_dim() != pd) throw DimensionError("stack_patches: ragged batch");
    for (int k = 0; k < n; ++k)
      for (int j = 0; j < pd; ++j) out(static_cast<Eigen::Index>(b) * n + k, j) = static_cast<T>(grids[b].patch_ptr(k)[j]);
  }
  return out;
}

template <class T>
Mat<T> stack_images(const std::vector<const Image*>& images, int patch = kPatchSize) {
  std::vector<PatchGrid> grids;
  grids.reserve(images.size());
  for (const Image* img : images) grids.push_back(patchify(*img, patch));
  return stack_patches<T>(grids);
}

template <class T>
struct EncoderCache {
  Mat<T> patches;  // gathered visible patch rows
  std::vector<nn::EncoderBlockCache<T>> blocks;
  nn::LayerNormCache<T> norm;
  int batch = 0, length = 0;
};

template <class T>
class Encoder {
public:
  Encoder() = default;
  Encoder(const EncoderConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg.validate();
    Rng rng(derive_seed(seed, 0x656e63));  // "enc"
    embed_ = nn::Linear<T>(cfg.patch_dim(), cfg.dim, rng);
    cls_ = nn::Param<T>(nn::normal_init<T>(1, cfg.dim, 0.02, rng));
    for (int i = 0; i < cfg.depth; ++i) blocks_.emplace_back(cfg.dim, cfg.heads, cfg.hidden(), rng);
    norm_ = nn::LayerNorm<T>(cfg.dim);
    pos_ = sincos_pos_embed<T>(cfg.rows(), cfg.cols(), cfg.dim);
  }

  const EncoderConfig& config() const { return cfg_; }
  const Mat<T>& pos_embed() const { return pos_; }
  std::vector<nn::EncoderBlock<T>>& blocks() { return blocks_; }
  const std::vector<nn::EncoderBlock<T>>& blocks() const { return blocks_; }

  /// Encodes B images given as stacked patch rows. With `plans`, only the
  /// visible patches of each sample (plus [cls]) enter the transformer; all
  /// samples must then expose the same number of visible patches.
  TokenBatch<T> forward(const Mat<T>& patches, int batch, const std::vector<MaskPlan>* plans,
                        EncoderCache<T>* cache) const {
    const int N = cfg_.num_patches();
    if (patches.rows() != static_cast<Eigen::Index>(batch) * N || patches.cols() != cfg_.patch_dim()) {
      throw DimensionError("encoder: expected " + std::to_string(batch) + "x" + std::to_string(N) +
                           " patches of dim " + std::to_string(cfg_.patch_dim()) + ", got " +
                           std::to_string(patches.rows()) + "x" + std::to_string(patches.cols()));
    }
    if (plans && static_cast<int>(plans->size()) != batch) throw DimensionError("encoder: one mask plan per sample required");

    std::vector<std::vector<int>> visible(batch);
    int nvis = N;
    for (int b = 0; b < batch; ++b) {
      if (plans) {
        const MaskPlan& p = (*plans)[b];
        if (p.num_patches != N) throw DimensionError("encoder: mask plan built for a different patch count");
        p.validate();
        visible[b] = p.visible();
        if (b == 0) nvis = static_cast<int>(visible[b].size());
        if (static_cast<int>(visible[b].size()) != nvis) {
          throw DimensionError("encoder: samples in a batch must have equal visible counts");
        }
      } else {
        visible[b].resize(N);
        for (int k = 0; k < N; ++k) visible[b][k] = k;
      }
    }
    const int L = 1 + nvis;

    Mat<T> x_in(static_cast<Eigen::Index>(batch) * nvis, cfg_.patch_dim());
    for (int b = 0; b < batch; ++b)
      for (int i = 0; i < nvis; ++i) x_in.row(static_cast<Eigen::Index>(b) * nvis + i) = patches.row(static_cast<Eigen::Index>(b) * N + visible[b][i]);
    Mat<T> emb = embed_.forward(x_in);

    TokenBatch<T> out;
    out.batch = batch;
    out.length = L;
    out.has_cls = true;
    out.position_ids.resize(static_cast<std::size_t>(batch) * L);
    Mat<T> h(static_cast<Eigen::Index>(batch) * L, cfg_.dim);
    for (int b = 0; b < batch; ++b) {
      h.row(static_cast<Eigen::Index>(b) * L) = cls_.value.row(0);
      out.position_ids[static_cast<std::size_t>(b) * L] = -1;
      for (int i = 0; i < nvis; ++i) {
        const int k = visible[b][i];
        h.row(static_cast<Eigen::Index>(b) * L + 1 + i) = emb.row(static_cast<Eigen::Index>(b) * nvis + i) + pos_.row(k);
        out.position_ids[static_cast<std::size_t>(b) * L + 1 + i] = k;
      }
    }

    if (cache) {
      cache->patches = std::move(x_in);
      cache->blocks.resize(blocks_.size());
      cache->batch = batch;
      cache->length = L;
    }
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
      h = blocks_[i].forward(h, batch, L, cache ? &cache->blocks[i] : nullptr);
    }
    out.tokens = norm_.forward(h, cache ? &cache->norm : nullptr);
    return out;
  }

  /// Accumulates parameter gradients for a forward pass recorded in `cache`.
  void backward(const Mat<T>& dout, const EncoderCache<T>& cache) {
    Mat<T> d = norm_.backward(dout, cache.norm);
    for (std::size_t i = blocks_.size(); i-- > 0;) d = blocks_[i].backward(d, cache.blocks[i]);
    const int L = cache.length;
    const int nvis = L - 1;
    Mat<T> demb(static_cast<Eigen::Index>(cache.batch) * nvis, cfg_.dim);
    for (int b = 0; b < cache.batch; ++b) {
      cls_.grad.row(0) += d.row(static_cast<Eigen::Index>(b) * L);
      demb.middleRows(static_cast<Eigen::Index>(b) * nvis, nvis) = d.middleRows(static_cast<Eigen::Index>(b) * L + 1, nvis);
    }
    embed_.accumulate(cache.patches, demb);
  }

  template <class F>
  void visit(F&& f, const std::string& p) {
    embed_.visit(f, p + ".embed");
    f(p + ".cls", cls_);
    for (std::size_t i = 0; i < blocks_.size(); ++i) blocks_[i].visit(f, p + ".blocks." + std::to_string(i));
    norm_.visit(f, p + ".norm");
  }

private:
  EncoderConfig cfg_;
  nn::Linear<T> embed_;
  nn::Param<T> cls_;
  std::vector<nn::EncoderBlock<T>> blocks_;
  nn::LayerNorm<T> norm_;
  Mat<T> pos_;  // fixed, not trained
};

/// Fingerprint of every parameter value reachable from `module`.
template <class Module>
std::uint64_t parameter_hash(const Module& module) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  // visit() is non-const only because it hands out mutable parameters; nothing is written here.
  const_cast<Module&>(module).visit(
      [&](const std::string& name, auto& p) {
        h = fnv1a(name.data(), name.size(), h);
        h = fnv1a(p.value.data(), sizeof(*p.value.data()) * static_cast<std::size_t>(p.value.size()), h);
      },
      "");
  return h;
}

}  // namespace lmim

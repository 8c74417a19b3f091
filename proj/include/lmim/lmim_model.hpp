#pragma once
// Dual-branch masked image model.
//
//   masked branch:   X  -> mask -> E({cls, X_v}) -> insert mask tokens -> F
//   guidance branch: X^ ---------> E({cls, X^})                        -> F^
//   decoder:         per block SA over F, CA with keys/values from F^, FFN
//   loss:            recon(p_k, t_k) over masked k  +  align(f_cls, f^_cls)
//
// Both branches call the same Encoder object, so gradients from both losses
// land in one parameter set.

#include "lmim/common.hpp"
#include "lmim/encoder.hpp"
#include "lmim/nn.hpp"
#include "lmim/objectives.hpp"
#include "lmim/patching.hpp"

#include <nlohmann/json.hpp>

#include <string>
#include <vector>

namespace lmim {

using nn::BlockOrder;

struct DecoderConfig {
  int depth = 2;
  BlockOrder order = BlockOrder::sa_ca_ffn;
  int dim = 64;
  int heads = 4;
  double mlp_ratio = 4.0;

  int hidden() const { return static_cast<int>(std::lround(dim * mlp_ratio)); }

  void validate() const {
    require(depth >= 1, "decoder.depth must be >= 1");
    require(dim >= 1 && heads >= 1 && dim % heads == 0, "decoder.dim must be divisible by decoder.heads");
    require(mlp_ratio > 0, "decoder.mlp_ratio must be positive");
  }

  nlohmann::json to_json() const {
    return {{"depth", depth}, {"order", nn::to_string(order)}, {"dim", dim}, {"heads", heads}, {"mlp_ratio", mlp_ratio}};
  }
  static DecoderConfig from_json(const nlohmann::json& j) {
    DecoderConfig c;
    c.depth = j.at("depth");
    c.order = nn::parse_block_order(j.at("order").get<std::string>());
    c.dim = j.at("dim");
    c.heads = j.at("heads");
    c.mlp_ratio = j.at("mlp_ratio");
    c.validate();
    return c;
  }
};

// ---------------------------------------------------------------------------

/// Restores the full 1+N sequence: encoder outputs at their original slots,
/// mask_token + positional embedding at every masked slot.
template <class T>
TokenBatch<T> assemble_decoder_input(const TokenBatch<T>& encoded, const std::vector<MaskPlan>& plans,
                                     const RowVec<T>& mask_token, const Mat<T>& pos_embed) {
  if (!encoded.has_cls) throw ValidationError("assemble_decoder_input: encoder output must carry [cls]");
  if (static_cast<int>(plans.size()) != encoded.batch) throw ValidationError("assemble_decoder_input: one plan per sample required");
  if (mask_token.size() != encoded.dim() || pos_embed.cols() != encoded.dim()) {
    throw DimensionError("assemble_decoder_input: mask token / positional embedding width mismatch");
  }
  const int N = static_cast<int>(pos_embed.rows());
  TokenBatch<T> out;
  out.batch = encoded.batch;
  out.length = 1 + N;
  out.has_cls = true;
  out.tokens.resize(static_cast<Eigen::Index>(out.batch) * out.length, encoded.dim());
  out.position_ids.resize(static_cast<std::size_t>(out.batch) * out.length);
  for (int b = 0; b < encoded.batch; ++b) {
    const MaskPlan& plan = plans[b];
    if (plan.num_patches != N) throw ValidationError("assemble_decoder_input: plan built for a different patch count");
    plan.validate();
    const auto vis = plan.visible();
    if (static_cast<int>(vis.size()) + 1 != encoded.length) {
      throw ValidationError("assemble_decoder_input: plan leaves " + std::to_string(vis.size()) +
                            " visible patches but the encoder produced " + std::to_string(encoded.length - 1));
    }
    const Eigen::Index base = static_cast<Eigen::Index>(b) * out.length;
    out.tokens.row(base) = encoded.row(b, 0);
    out.position_ids[base] = -1;
    for (std::size_t i = 0; i < vis.size(); ++i) {
      const int pid = encoded.position_ids[static_cast<std::size_t>(b) * encoded.length + 1 + i];
      if (pid != vis[i]) throw ValidationError("assemble_decoder_input: plan inconsistent with encoder position ids");
      out.tokens.row(base + 1 + vis[i]) = encoded.row(b, 1 + static_cast<int>(i));
    }
    for (int k : plan.masked) out.tokens.row(base + 1 + k) = mask_token + pos_embed.row(k);
    for (int k = 0; k < N; ++k) out.position_ids[base + 1 + k] = k;
  }
  return out;
}

/// Splits a gradient on the assembled sequence back onto encoder rows and the mask token.
template <class T>
Mat<T> assemble_backward(const Mat<T>& dfull, int batch, int full_len, const std::vector<MaskPlan>& plans,
                         RowVec<T>& dmask_token) {
  const int nvis = static_cast<int>(plans.front().visible().size());
  const int enc_len = 1 + nvis;
  Mat<T> denc(static_cast<Eigen::Index>(batch) * enc_len, dfull.cols());
  for (int b = 0; b < batch; ++b) {
    const Eigen::Index base = static_cast<Eigen::Index>(b) * full_len;
    denc.row(static_cast<Eigen::Index>(b) * enc_len) = dfull.row(base);
    const auto vis = plans[b].visible();
    for (std::size_t i = 0; i < vis.size(); ++i) denc.row(static_cast<Eigen::Index>(b) * enc_len + 1 + i) = dfull.row(base + 1 + vis[i]);
    for (int k : plans[b].masked) dmask_token += dfull.row(base + 1 + k);
  }
  return denc;
}

// ---------------------------------------------------------------------------

template <class T>
struct LmimDecoderCache {
  Mat<T> f_in, mem_in, mem, normed;
  std::vector<nn::CrossBlockCache<T>> blocks;
  nn::LayerNormCache<T> norm;
  int batch = 0, length = 0, mem_len = 0;
  bool guided = false;
};

template <class T>
class LmimDecoder {
public:
  LmimDecoder() = default;
  LmimDecoder(const DecoderConfig& cfg, int enc_dim, int target_dim, std::uint64_t seed) : cfg_(cfg) {
    cfg.validate();
    Rng rng(derive_seed(seed, 0x646563));  // "dec"
    embed_ = nn::Linear<T>(enc_dim, cfg.dim, rng);
    guide_proj_ = nn::Linear<T>(enc_dim, cfg.dim, rng);
    for (int i = 0; i < cfg.depth; ++i) blocks_.emplace_back(cfg.dim, cfg.heads, cfg.hidden(), cfg.order, false, rng);
    norm_ = nn::LayerNorm<T>(cfg.dim);
    head_ = nn::Linear<T>(cfg.dim, target_dim, rng);
  }

  const DecoderConfig& config() const { return cfg_; }
  std::vector<nn::CrossBlock<T>>& blocks() { return blocks_; }

  /// {p_cls, p_1..p_N}. Without `guide`, the cross-attention sub-layers are skipped.
  TokenBatch<T> forward(const TokenBatch<T>& F, const TokenBatch<T>* guide, LmimDecoderCache<T>* c) const {
    if (guide && (guide->batch != F.batch || guide->dim() != F.dim())) {
      throw DimensionError("lmim_decode: branch outputs disagree in batch size or width");
    }
    Mat<T> x = embed_.forward(F.tokens);
    Mat<T> mem;
    if (guide) mem = guide_proj_.forward(guide->tokens);
    const int lm = guide ? guide->length : 0;
    if (c) {
      c->f_in = F.tokens;
      c->guided = guide != nullptr;
      if (guide) c->mem_in = guide->tokens;
      c->mem = mem;
      c->blocks.resize(blocks_.size());
      c->batch = F.batch;
      c->length = F.length;
      c->mem_len = lm;
    }
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
      x = blocks_[i].forward(x, guide ? &mem : nullptr, F.batch, F.length, lm, c ? &c->blocks[i] : nullptr);
    }
    Mat<T> normed = norm_.forward(x, c ? &c->norm : nullptr);
    TokenBatch<T> out;
    out.tokens = head_.forward(normed);
    if (c) c->normed = std::move(normed);
    out.batch = F.batch;
    out.length = F.length;
    out.has_cls = F.has_cls;
    out.position_ids = F.position_ids;
    return out;
  }

  /// Returns {dF, dF_hat}; dF_hat is empty for an unguided pass.
  std::pair<Mat<T>, Mat<T>> backward(const Mat<T>& dout, const LmimDecoderCache<T>& c) {
    Mat<T> d = norm_.backward(head_.backward(c.normed, dout), c.norm);
    Mat<T> dmem;
    if (c.guided) dmem = Mat<T>::Zero(c.mem.rows(), c.mem.cols());
    for (std::size_t i = blocks_.size(); i-- > 0;) {
      auto [dx, dm] = blocks_[i].backward(d, c.blocks[i]);
      d = std::move(dx);
      if (c.guided && dm.size() > 0) dmem += dm;
    }
    Mat<T> dF = embed_.backward(c.f_in, d);
    Mat<T> dguide;
    if (c.guided) dguide = guide_proj_.backward(c.mem_in, dmem);
    return {std::move(dF), std::move(dguide)};
  }

  template <class F>
  void visit(F&& f, const std::string& p) {
    embed_.visit(f, p + ".embed");
    guide_proj_.visit(f, p + ".guide_proj");
    for (std::size_t i = 0; i < blocks_.size(); ++i) blocks_[i].visit(f, p + ".blocks." + std::to_string(i));
    norm_.visit(f, p + ".norm");
    head_.visit(f, p + ".head");
  }

private:
  DecoderConfig cfg_;
  nn::Linear<T> embed_, guide_proj_;
  std::vector<nn::CrossBlock<T>> blocks_;
  nn::LayerNorm<T> norm_;
  nn::Linear<T> head_;
};

// ---------------------------------------------------------------------------

struct LmimConfig {
  EncoderConfig encoder;
  DecoderConfig decoder;
  bool guidance = true;   // second branch + cross-attention
  bool alignment = true;  // [cls] alignment loss (needs guidance)
  int target_dim = 64;

  void validate() const {
    encoder.validate();
    decoder.validate();
    require(target_dim >= 1, "target_dim must be positive");
    require(guidance || !alignment, "alignment loss requires the guidance branch");
  }

  nlohmann::json to_json() const {
    return {{"encoder", encoder.to_json()}, {"decoder", decoder.to_json()}, {"guidance", guidance},
            {"alignment", alignment},       {"target_dim", target_dim}};
  }
  static LmimConfig from_json(const nlohmann::json& j) {
    LmimConfig c;
    c.encoder = EncoderConfig::from_json(j.at("encoder"));
    c.decoder = DecoderConfig::from_json(j.at("decoder"));
    c.guidance = j.at("guidance");
    c.alignment = j.at("alignment");
    c.target_dim = j.at("target_dim");
    c.validate();
    return c;
  }
};

/// One pre-training batch. `targets` rows follow gather_masked_targets order.
template <class T>
struct LmimBatch {
  int batch = 0;
  Mat<T> masked_patches;    // B*N x patch_dim, masked-branch view
  Mat<T> guidance_patches;  // B*N x patch_dim, guidance view (unused when unguided)
  std::vector<MaskPlan> plans;
  Mat<T> targets;
};

enum LossTerms : unsigned { kReconTerm = 1u, kAlignTerm = 2u, kAllTerms = 3u };

template <class T>
struct LmimForward {
  TokenBatch<T> encoded;     // masked branch, 1+|visible|
  TokenBatch<T> guidance;    // guidance branch, 1+N (empty when unguided)
  TokenBatch<T> assembled;   // F
  TokenBatch<T> decoded;     // {p_cls, p_1..p_N}
  LossReport loss;
};

template <class T>
class LmimModel {
public:
  LmimModel() = default;
  LmimModel(const LmimConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg.validate();
    encoder_ = Encoder<T>(cfg.encoder, derive_seed(seed, 1));
    decoder_ = LmimDecoder<T>(cfg.decoder, cfg.encoder.dim, cfg.target_dim, derive_seed(seed, 2));
    Rng rng(derive_seed(seed, 3));
    mask_token_ = nn::Param<T>(nn::normal_init<T>(1, cfg.encoder.dim, 0.02, rng));
  }

  const LmimConfig& config() const { return cfg_; }
  Encoder<T>& encoder() { return encoder_; }
  const Encoder<T>& encoder() const { return encoder_; }
  LmimDecoder<T>& decoder() { return decoder_; }
  nn::Param<T>& mask_token() { return mask_token_; }

  /// Forward pass and loss. With `grads`, also back-propagates the selected
  /// loss terms into the parameter gradients (which accumulate).
  LmimForward<T> run(const LmimBatch<T>& batch, bool grads, unsigned terms = kAllTerms) {
    const int B = batch.batch;
    require(static_cast<int>(batch.plans.size()) == B, "lmim: one mask plan per sample required");
    EncoderCache<T> c_enc, c_guide;
    LmimDecoderCache<T> c_dec;
    LmimForward<T> out;
    out.encoded = encoder_.forward(batch.masked_patches, B, &batch.plans, grads ? &c_enc : nullptr);
    if (cfg_.guidance) out.guidance = encoder_.forward(batch.guidance_patches, B, nullptr, grads ? &c_guide : nullptr);
    out.assembled = assemble_decoder_input<T>(out.encoded, batch.plans, mask_token_.value.row(0), encoder_.pos_embed());
    out.decoded = decoder_.forward(out.assembled, cfg_.guidance ? &out.guidance : nullptr, grads ? &c_dec : nullptr);

    // Reconstruction over masked slots only.
    Mat<T> dpred = Mat<T>::Zero(out.decoded.tokens.rows(), out.decoded.tokens.cols());
    double recon = 0.0;
    Eigen::Index trow = 0;
    for (int b = 0; b < B; ++b) {
      const auto& plan = batch.plans[b];
      TargetSet<T> ts;
      ts.indices = plan.masked;
      ts.values = batch.targets.middleRows(trow, static_cast<Eigen::Index>(plan.masked.size()));
      trow += static_cast<Eigen::Index>(plan.masked.size());
      recon += recon_loss<T>(out.decoded, ts, plan, &dpred, b);
    }
    if (trow != batch.targets.rows()) throw DimensionError("lmim: target rows do not match masked patch count");
    recon /= B;
    dpred /= static_cast<T>(B);

    double align = 0.0;
    const bool use_align = cfg_.guidance && cfg_.alignment;
    Mat<T> dcls_enc, dcls_guide;
    if (use_align) {
      dcls_enc.resize(B, encoder_.config().dim);
      for (int b = 0; b < B; ++b) {
        const RowVec<T> f = out.encoded.row(b, 0);
        const RowVec<T> fh = out.guidance.row(b, 0);
        align += align_loss<T>(f, fh);
        dcls_enc.row(b) = align_loss_grad<T>(f, fh) / static_cast<T>(B);
      }
      align /= B;
    }
    out.loss = combined_loss(recon, align);

    if (grads) {
      if (!(terms & kReconTerm)) dpred.setZero();
      auto [dF, dguide] = decoder_.backward(dpred, c_dec);
      RowVec<T> dmask = RowVec<T>::Zero(encoder_.config().dim);
      Mat<T> denc = assemble_backward<T>(dF, B, out.assembled.length, batch.plans, dmask);
      mask_token_.grad.row(0) += dmask;
      if (use_align && (terms & kAlignTerm)) {
        for (int b = 0; b < B; ++b) {
          denc.row(static_cast<Eigen::Index>(b) * out.encoded.length) += dcls_enc.row(b);
          dguide.row(static_cast<Eigen::Index>(b) * out.guidance.length) -= dcls_enc.row(b);
        }
      }
      if (cfg_.guidance) encoder_.backward(dguide, c_guide);
      encoder_.backward(denc, c_enc);
    }
    return out;
  }

  template <class F>
  void visit(F&& f, const std::string& p = "") {
    encoder_.visit(f, p + "encoder");
    f(p + "mask_token", mask_token_);
    decoder_.visit(f, p + "decoder");
  }

  void zero_grad() {
    visit([](const std::string&, nn::Param<T>& prm) { prm.zero_grad(); });
  }

private:
  LmimConfig cfg_;
  Encoder<T> encoder_;
  LmimDecoder<T> decoder_;
  nn::Param<T> mask_token_;
};

}  // namespace lmim

#pragma once
// Transformer building blocks with explicit forward caches and backward passes.
//
// Layers never store activations themselves: forward() fills a caller-owned
// cache and backward() reads it, accumulating parameter gradients. This lets
// one parameter set serve several forward passes in a single step (the two
// encoder branches) and keeps inference passes read-only.
//
// Activations are row-major (tokens x features). A batch of B sequences of
// length L is stacked into B*L rows; only attention looks across rows.

#include "lmim/common.hpp"

#include <unsupported/Eigen/SpecialFunctions>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

namespace lmim::nn {

template <class T>
struct Param {
  Mat<T> value;
  Mat<T> grad;
  bool decay = false;  // AdamW weight decay applies to matrix weights only

  Param() = default;
  explicit Param(Mat<T> v, bool wd = false) : value(std::move(v)), grad(Mat<T>::Zero(value.rows(), value.cols())), decay(wd) {}

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
  Eigen::Index size() const { return value.size(); }
};

template <class T>
Mat<T> xavier_uniform(int in, int out, Rng& rng) {
  const double limit = std::sqrt(6.0 / (in + out));
  Mat<T> w(in, out);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = static_cast<T>(rng.uniform(-limit, limit));
  return w;
}

template <class T>
Mat<T> normal_init(int rows, int cols, double stddev, Rng& rng) {
  Mat<T> w(rows, cols);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = static_cast<T>(rng.normal(0.0, stddev));
  return w;
}

// ---------------------------------------------------------------------------

template <class T>
struct Linear {
  Param<T> weight;  // in x out
  Param<T> bias;    // 1 x out

  Linear() = default;
  Linear(int in, int out, Rng& rng)
      : weight(xavier_uniform<T>(in, out, rng), true), bias(Mat<T>::Zero(1, out)) {}

  int in_dim() const { return static_cast<int>(weight.value.rows()); }
  int out_dim() const { return static_cast<int>(weight.value.cols()); }

  Mat<T> forward(const Mat<T>& x) const {
    if (x.cols() != weight.value.rows()) {
      throw DimensionError("linear: input has " + std::to_string(x.cols()) + " features, expected " +
                           std::to_string(weight.value.rows()));
    }
    Mat<T> y(x.rows(), weight.value.cols());
    y.noalias() = x * weight.value;
    y.rowwise() += bias.value.row(0);
    return y;
  }

  /// Accumulates dW, db; returns dx.
  Mat<T> backward(const Mat<T>& x, const Mat<T>& dy) {
    accumulate(x, dy);
    Mat<T> dx(dy.rows(), weight.value.rows());
    dx.noalias() = dy * weight.value.transpose();
    return dx;
  }

  /// Parameter gradients only, for layers whose input needs no gradient.
  void accumulate(const Mat<T>& x, const Mat<T>& dy) {
    weight.grad.noalias() += x.transpose() * dy;
    bias.grad += dy.colwise().sum();
  }

  template <class F>
  void visit(F&& f, const std::string& p) {
    f(p + ".weight", weight);
    f(p + ".bias", bias);
  }
};

// ---------------------------------------------------------------------------

template <class T>
struct LayerNormCache {
  Mat<T> xhat;
  Eigen::Matrix<T, Eigen::Dynamic, 1> rstd;
};

template <class T>
struct LayerNorm {
  Param<T> gamma;
  Param<T> beta;
  T eps = static_cast<T>(1e-6);

  LayerNorm() = default;
  explicit LayerNorm(int dim) : gamma(Mat<T>::Ones(1, dim)), beta(Mat<T>::Zero(1, dim)) {}

  Mat<T> forward(const Mat<T>& x, LayerNormCache<T>* cache) const {
    const auto n = x.rows();
    const auto d = x.cols();
    Eigen::Matrix<T, Eigen::Dynamic, 1> mean = x.rowwise().mean();
    Mat<T> xhat = x.colwise() - mean;
    Eigen::Matrix<T, Eigen::Dynamic, 1> rstd =
        ((xhat.array().square().rowwise().sum() / static_cast<T>(d)) + eps).rsqrt().matrix();
    xhat.array().colwise() *= rstd.array();
    Mat<T> y(n, d);
    y.array() = xhat.array().rowwise() * gamma.value.row(0).array();
    y.rowwise() += beta.value.row(0);
    if (cache) {
      cache->xhat = std::move(xhat);
      cache->rstd = std::move(rstd);
    }
    return y;
  }

  Mat<T> backward(const Mat<T>& dy, const LayerNormCache<T>& c) {
    gamma.grad += (dy.array() * c.xhat.array()).colwise().sum().matrix();
    beta.grad += dy.colwise().sum();
    Mat<T> g = dy.array().rowwise() * gamma.value.row(0).array();
    const T inv_d = static_cast<T>(1) / static_cast<T>(dy.cols());
    Eigen::Matrix<T, Eigen::Dynamic, 1> mean_g = g.rowwise().sum() * inv_d;
    Eigen::Matrix<T, Eigen::Dynamic, 1> mean_gx = (g.array() * c.xhat.array()).rowwise().sum().matrix() * inv_d;
    Mat<T> dx = g.colwise() - mean_g;
    dx.array() -= c.xhat.array().colwise() * mean_gx.array();
    dx.array().colwise() *= c.rstd.array();
    return dx;
  }

  template <class F>
  void visit(F&& f, const std::string& p) {
    f(p + ".gamma", gamma);
    f(p + ".beta", beta);
  }
};

// ---------------------------------------------------------------------------

template <class T>
T gelu(T x) {
  return static_cast<T>(0.5) * x * (static_cast<T>(1) + std::erf(x * static_cast<T>(std::numbers::sqrt2 / 2)));
}

template <class T>
T gelu_grad(T x) {
  const T cdf = static_cast<T>(0.5) * (static_cast<T>(1) + std::erf(x * static_cast<T>(std::numbers::sqrt2 / 2)));
  const T pdf = std::exp(static_cast<T>(-0.5) * x * x) * static_cast<T>(0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2);
  return cdf + x * pdf;
}

/// Element-wise gelu over a matrix (vectorised erf).
template <class T>
Mat<T> gelu(const Mat<T>& x) {
  const T r = static_cast<T>(std::numbers::sqrt2 / 2);
  return (static_cast<T>(0.5) * x.array() * (static_cast<T>(1) + (x.array() * r).erf())).matrix();
}

template <class T>
Mat<T> gelu_grad(const Mat<T>& x) {
  const T r = static_cast<T>(std::numbers::sqrt2 / 2);
  const T k = static_cast<T>(0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2);
  return (static_cast<T>(0.5) * (static_cast<T>(1) + (x.array() * r).erf()) +
          x.array() * (static_cast<T>(-0.5) * x.array().square()).exp() * k)
      .matrix();
}

template <class T>
struct MlpCache {
  Mat<T> x;
  Mat<T> pre;  // fc1 output before activation
  Mat<T> act;
};

template <class T>
struct Mlp {
  Linear<T> fc1;
  Linear<T> fc2;

  Mlp() = default;
  Mlp(int dim, int hidden, Rng& rng) : fc1(dim, hidden, rng), fc2(hidden, dim, rng) {}

  Mat<T> forward(const Mat<T>& x, MlpCache<T>* cache) const {
    Mat<T> pre = fc1.forward(x);
    Mat<T> act = gelu(pre);
    Mat<T> y = fc2.forward(act);
    if (cache) {
      cache->x = x;
      cache->pre = std::move(pre);
      cache->act = std::move(act);
    }
    return y;
  }

  Mat<T> backward(const Mat<T>& dy, const MlpCache<T>& c) {
    Mat<T> dact = fc2.backward(c.act, dy);
    dact.array() *= gelu_grad(c.pre).array();
    return fc1.backward(c.x, dact);
  }

  template <class F>
  void visit(F&& f, const std::string& p) {
    fc1.visit(f, p + ".fc1");
    fc2.visit(f, p + ".fc2");
  }
};

// ---------------------------------------------------------------------------
// Scaled dot-product attention.

/// In-place row softmax. With `causal`, entry (i, j) is excluded when j > i + offset.
template <class Derived>
void softmax_rows(Eigen::MatrixBase<Derived>& s, bool causal = false, Eigen::Index offset = 0) {
  using T = typename Derived::Scalar;
  if (!causal || offset + 1 >= s.cols()) {
    const Eigen::Matrix<T, Eigen::Dynamic, 1> mx = s.rowwise().maxCoeff();
    s.colwise() -= mx;
    s.array() = s.array().exp();
    const Eigen::Matrix<T, Eigen::Dynamic, 1> inv = s.rowwise().sum().cwiseInverse();
    s.array().colwise() *= inv.array();
    return;
  }
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    const Eigen::Index valid = std::min<Eigen::Index>(s.cols(), i + offset + 1);
    auto row = s.row(i);
    const T mx = row.head(valid).maxCoeff();
    row.head(valid) = (row.head(valid).array() - mx).exp().matrix();
    const T sum = row.head(valid).sum();
    row.head(valid) /= sum;
    if (valid < s.cols()) row.tail(s.cols() - valid).setZero();
  }
}

/// Softmax(Q K^T / sqrt(d)) V for a single head. `probs`, when given, receives the weights.
template <class T>
Mat<T> attention(const Mat<T>& Q, const Mat<T>& K, const Mat<T>& V, int d, Mat<T>* probs = nullptr,
                 bool causal = false) {
  if (Q.cols() != K.cols() || K.rows() != V.rows() || d <= 0 || K.rows() == 0) {
    throw DimensionError("attention: incompatible shapes Q " + std::to_string(Q.rows()) + "x" +
                         std::to_string(Q.cols()) + ", K " + std::to_string(K.rows()) + "x" +
                         std::to_string(K.cols()) + ", V " + std::to_string(V.rows()) + "x" +
                         std::to_string(V.cols()));
  }
  Mat<T> s(Q.rows(), K.rows());
  s.noalias() = Q * K.transpose();
  s *= static_cast<T>(1.0 / std::sqrt(static_cast<double>(d)));
  softmax_rows(s, causal);
  Mat<T> out(Q.rows(), V.cols());
  out.noalias() = s * V;
  if (probs) *probs = std::move(s);
  return out;
}

template <class T>
struct AttentionCache {
  Mat<T> xq;
  Mat<T> xkv;  // empty for self-attention
  Mat<T> q, k, v, ctx;
  Mat<T> probs;  // (batch * heads * lq) x lk; block (b, h) starts at row (b * heads + h) * lq
  int batch = 0, lq = 0, lk = 0;
  bool self = true;
};

template <class T>
struct MultiHeadAttention {
  Linear<T> q, k, v, o;
  int heads = 1;
  bool causal = false;

  MultiHeadAttention() = default;
  MultiHeadAttention(int dim, int kv_dim, int num_heads, Rng& rng, bool causal_mask = false)
      : q(dim, dim, rng), k(kv_dim, dim, rng), v(kv_dim, dim, rng), o(dim, dim, rng), heads(num_heads),
        causal(causal_mask) {
    require(num_heads > 0 && dim % num_heads == 0, "attention: dim must be divisible by heads");
  }

  int dim() const { return q.out_dim(); }
  int head_dim() const { return dim() / heads; }

  /// Multi-head attention over precomputed projected keys/values.
  Mat<T> attend(const Mat<T>& Q, const Mat<T>& K, const Mat<T>& V, int batch, int lq, int lk,
                Mat<T>* probs) const {
    const int dh = head_dim();
    Mat<T> ctx(static_cast<Eigen::Index>(batch) * lq, dim());
    Mat<T> scratch;
    if (probs) {
      probs->resize(static_cast<Eigen::Index>(batch) * heads * lq, lk);
    } else {
      scratch.resize(lq, lk);
    }
    // Scaling Q once is cheaper than scaling every score matrix.
    const Mat<T> Qs = Q * static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
    for (int b = 0; b < batch; ++b) {
      for (int h = 0; h < heads; ++h) {
        auto s = probs ? probs->middleRows((static_cast<Eigen::Index>(b) * heads + h) * lq, lq) : scratch.middleRows(0, lq);
        s.noalias() = Qs.block(b * lq, h * dh, lq, dh) * K.block(b * lk, h * dh, lk, dh).transpose();
        softmax_rows(s, causal, lk - lq);
        ctx.block(b * lq, h * dh, lq, dh).noalias() = s * V.block(b * lk, h * dh, lk, dh);
      }
    }
    return ctx;
  }

  /// xq: batch*lq rows; xkv: batch*lk rows, or nullptr for self-attention.
  Mat<T> forward(const Mat<T>& xq, const Mat<T>* xkv, int batch, int lq, int lk,
                 AttentionCache<T>* cache) const {
    const Mat<T>& src = xkv ? *xkv : xq;
    if (xq.rows() != static_cast<Eigen::Index>(batch) * lq || src.rows() != static_cast<Eigen::Index>(batch) * lk) {
      throw DimensionError("attention: row count does not match batch x length");
    }
    Mat<T> Q = q.forward(xq);
    Mat<T> K = k.forward(src);
    Mat<T> V = v.forward(src);
    Mat<T> ctx = attend(Q, K, V, batch, lq, lk, cache ? &cache->probs : nullptr);
    Mat<T> out = o.forward(ctx);
    if (cache) {
      cache->xq = xq;
      cache->self = xkv == nullptr;
      if (xkv) cache->xkv = *xkv;
      cache->q = std::move(Q);
      cache->k = std::move(K);
      cache->v = std::move(V);
      cache->ctx = std::move(ctx);
      cache->batch = batch;
      cache->lq = lq;
      cache->lk = lk;
    }
    return out;
  }

  /// Returns {dxq, dxkv}. For self-attention dxkv is already folded into dxq.
  std::pair<Mat<T>, Mat<T>> backward(const Mat<T>& dout, const AttentionCache<T>& c) {
    const int dh = head_dim();
    const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
    Mat<T> dctx = o.backward(c.ctx, dout);
    Mat<T> dQ = Mat<T>::Zero(c.q.rows(), c.q.cols());
    Mat<T> dK = Mat<T>::Zero(c.k.rows(), c.k.cols());
    Mat<T> dV = Mat<T>::Zero(c.v.rows(), c.v.cols());
    Mat<T> dP(c.lq, c.lk);
    for (int b = 0; b < c.batch; ++b) {
      for (int h = 0; h < heads; ++h) {
        const auto P = c.probs.middleRows((static_cast<Eigen::Index>(b) * heads + h) * c.lq, c.lq);
        const auto dctx_bh = dctx.block(b * c.lq, h * dh, c.lq, dh);
        dV.block(b * c.lk, h * dh, c.lk, dh).noalias() = P.transpose() * dctx_bh;
        dP.noalias() = dctx_bh * c.v.block(b * c.lk, h * dh, c.lk, dh).transpose();
        const Eigen::Matrix<T, Eigen::Dynamic, 1> rs = (dP.array() * P.array()).rowwise().sum().matrix();
        dP = (P.array() * (dP.colwise() - rs).array()).matrix() * scale;
        dQ.block(b * c.lq, h * dh, c.lq, dh).noalias() = dP * c.k.block(b * c.lk, h * dh, c.lk, dh);
        dK.block(b * c.lk, h * dh, c.lk, dh).noalias() = dP.transpose() * c.q.block(b * c.lq, h * dh, c.lq, dh);
      }
    }
    Mat<T> dxq = q.backward(c.xq, dQ);
    const Mat<T>& src = c.self ? c.xq : c.xkv;
    Mat<T> dxkv = k.backward(src, dK);
    dxkv += v.backward(src, dV);
    if (c.self) {
      dxq += dxkv;
      return {std::move(dxq), Mat<T>()};
    }
    return {std::move(dxq), std::move(dxkv)};
  }

  template <class F>
  void visit(F&& f, const std::string& p) {
    q.visit(f, p + ".q");
    k.visit(f, p + ".k");
    v.visit(f, p + ".v");
    o.visit(f, p + ".o");
  }
};

// ---------------------------------------------------------------------------
// Pre-norm encoder block: x + SA(LN(x)), then x + MLP(LN(x)).

template <class T>
struct EncoderBlockCache {
  LayerNormCache<T> n1, n2;
  AttentionCache<T> attn;
  MlpCache<T> mlp;
};

template <class T>
struct EncoderBlock {
  LayerNorm<T> n1, n2;
  MultiHeadAttention<T> attn;
  Mlp<T> mlp;

  EncoderBlock() = default;
  EncoderBlock(int dim, int heads, int hidden, Rng& rng)
      : n1(dim), n2(dim), attn(dim, dim, heads, rng), mlp(dim, hidden, rng) {}

  Mat<T> forward(const Mat<T>& x, int batch, int len, EncoderBlockCache<T>* c) const {
    Mat<T> h = x + attn.forward(n1.forward(x, c ? &c->n1 : nullptr), nullptr, batch, len, len,
                                c ? &c->attn : nullptr);
    Mat<T> y = h + mlp.forward(n2.forward(h, c ? &c->n2 : nullptr), c ? &c->mlp : nullptr);
    return y;
  }

  Mat<T> backward(const Mat<T>& dy, const EncoderBlockCache<T>& c) {
    Mat<T> dh = dy + n2.backward(mlp.backward(dy, c.mlp), c.n2);
    return dh + n1.backward(attn.backward(dh, c.attn).first, c.n1);
  }

  template <class F>
  void visit(F&& f, const std::string& p) {
    n1.visit(f, p + ".n1");
    attn.visit(f, p + ".attn");
    n2.visit(f, p + ".n2");
    mlp.visit(f, p + ".mlp");
  }
};

// ---------------------------------------------------------------------------
// Decoder block with self-attention, cross-attention onto a memory sequence and
// a feed-forward layer, each pre-normed with a residual. The order of the two
// attention sub-layers is configurable; a null memory skips cross-attention.

enum class BlockOrder { sa_ca_ffn, ca_sa_ffn };

inline std::string to_string(BlockOrder o) { return o == BlockOrder::sa_ca_ffn ? "SA-CA-FFN" : "CA-SA-FFN"; }

inline BlockOrder parse_block_order(const std::string& s) {
  if (s == "SA-CA-FFN" || s == "sa_ca_ffn" || s == "sa-ca-ffn") return BlockOrder::sa_ca_ffn;
  if (s == "CA-SA-FFN" || s == "ca_sa_ffn" || s == "ca-sa-ffn") return BlockOrder::ca_sa_ffn;
  throw ValidationError("unknown decoder order '" + s + "' (expected SA-CA-FFN or CA-SA-FFN)");
}

template <class T>
struct CrossBlockCache {
  LayerNormCache<T> n_sa, n_ca, n_ffn;
  AttentionCache<T> sa, ca;
  MlpCache<T> ffn;
  Mat<T> after_first, after_second;
  bool used_memory = false;
};

template <class T>
struct CrossBlock {
  LayerNorm<T> n_sa, n_ca, n_ffn;
  MultiHeadAttention<T> sa, ca;
  Mlp<T> ffn;
  BlockOrder order = BlockOrder::sa_ca_ffn;

  CrossBlock() = default;
  CrossBlock(int dim, int heads, int hidden, BlockOrder ord, bool causal, Rng& rng)
      : n_sa(dim), n_ca(dim), n_ffn(dim), sa(dim, dim, heads, rng, causal), ca(dim, dim, heads, rng),
        ffn(dim, hidden, rng), order(ord) {}

  /// `memory` rows: batch*lm (already projected to this block's width). The
  /// optional `mem_kv` supplies pre-projected keys/values for inference.
  Mat<T> forward(const Mat<T>& x, const Mat<T>* memory, int batch, int len, int lm,
                 CrossBlockCache<T>* c, const std::pair<Mat<T>, Mat<T>>* mem_kv = nullptr) const {
    auto self_step = [&](const Mat<T>& in) {
      return Mat<T>(in + sa.forward(n_sa.forward(in, c ? &c->n_sa : nullptr), nullptr, batch, len, len,
                                    c ? &c->sa : nullptr));
    };
    auto cross_step = [&](const Mat<T>& in) {
      if (!memory && !mem_kv) return in;
      Mat<T> qn = n_ca.forward(in, c ? &c->n_ca : nullptr);
      if (mem_kv) {
        Mat<T> Q = ca.q.forward(qn);
        return Mat<T>(in + ca.o.forward(ca.attend(Q, mem_kv->first, mem_kv->second, batch, len, lm, nullptr)));
      }
      return Mat<T>(in + ca.forward(qn, memory, batch, len, lm, c ? &c->ca : nullptr));
    };
    if (c) c->used_memory = memory != nullptr;
    Mat<T> first = order == BlockOrder::sa_ca_ffn ? self_step(x) : cross_step(x);
    Mat<T> second = order == BlockOrder::sa_ca_ffn ? cross_step(first) : self_step(first);
    Mat<T> out = second + ffn.forward(n_ffn.forward(second, c ? &c->n_ffn : nullptr), c ? &c->ffn : nullptr);
    return out;
  }

  /// Projected memory keys/values for repeated inference calls.
  std::pair<Mat<T>, Mat<T>> memory_kv(const Mat<T>& memory) const {
    return {ca.k.forward(memory), ca.v.forward(memory)};
  }

  /// Returns {dx, dmemory}; dmemory is empty when the block ran without memory.
  std::pair<Mat<T>, Mat<T>> backward(const Mat<T>& dy, const CrossBlockCache<T>& c) {
    Mat<T> dmem;
    auto self_back = [&](const Mat<T>& d) { return Mat<T>(d + n_sa.backward(sa.backward(d, c.sa).first, c.n_sa)); };
    auto cross_back = [&](const Mat<T>& d) {
      if (!c.used_memory) return d;
      auto [dq, dm] = ca.backward(d, c.ca);
      dmem = std::move(dm);
      return Mat<T>(d + n_ca.backward(dq, c.n_ca));
    };
    Mat<T> d2 = dy + n_ffn.backward(ffn.backward(dy, c.ffn), c.n_ffn);
    Mat<T> d1 = order == BlockOrder::sa_ca_ffn ? cross_back(d2) : self_back(d2);
    Mat<T> dx = order == BlockOrder::sa_ca_ffn ? self_back(d1) : cross_back(d1);
    return {std::move(dx), std::move(dmem)};
  }

  template <class F>
  void visit(F&& f, const std::string& p) {
    n_sa.visit(f, p + ".n_sa");
    sa.visit(f, p + ".sa");
    n_ca.visit(f, p + ".n_ca");
    ca.visit(f, p + ".ca");
    n_ffn.visit(f, p + ".n_ffn");
    ffn.visit(f, p + ".ffn");
  }
};

// ---------------------------------------------------------------------------

/// Visits every parameter of `module` and sums a callback over them.
template <class Module>
std::size_t count_parameters(Module& m) {
  std::size_t n = 0;
  m.visit([&](const std::string&, auto& p) { n += static_cast<std::size_t>(p.size()); }, "");
  return n;
}

}  // namespace lmim::nn

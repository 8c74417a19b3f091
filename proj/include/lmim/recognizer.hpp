#pragma once
// Downstream text recognizer: ViT encoder + autoregressive transformer decoder
// (causal self-attention, cross-attention over all encoder tokens, FFN),
// trained with teacher-forced cross-entropy and decoded greedily.

#include "lmim/common.hpp"
#include "lmim/corpus.hpp"
#include "lmim/encoder.hpp"
#include "lmim/nn.hpp"

#include <nlohmann/json.hpp>

#include <functional>
#include <string>
#include <vector>

namespace lmim {

/// Token ids: 0 [PAD], 1 [BOS], 2 [EOS], then the charset in order.
class Vocabulary {
public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kFirstSymbol = 3;

  Vocabulary() = default;
  explicit Vocabulary(Charset cs) : charset_(std::move(cs)) {}

  const Charset& charset() const { return charset_; }
  int size() const { return static_cast<int>(charset_.size()) + kFirstSymbol; }

  std::vector<int> encode(const std::string& s) const {
    std::vector<int> ids;
    for (char32_t cp : utf8_decode(s)) {
      const int i = charset_.index_of(cp);
      if (i < 0) throw CharsetError("unsupported character " + format_codepoint(cp) + " in '" + s + "'");
      ids.push_back(kFirstSymbol + i);
    }
    return ids;
  }

  /// Symbols only; specials are dropped.
  std::string decode(const std::vector<int>& ids) const {
    std::string out;
    for (int id : ids) {
      if (id >= kFirstSymbol && id < size()) Charset::append_utf8(out, charset_.at(id - kFirstSymbol));
    }
    return out;
  }

private:
  Charset charset_;
};

struct RecognizerConfig {
  int depth = 2;
  int dim = 128;
  int heads = 4;
  double mlp_ratio = 4.0;
  int max_len = kMaxTranscriptLength;  // characters; the decoder also emits one [EOS]
  std::string charset = "abcdefghijklmnopqrstuvwxyz0123456789";

  /// Six 512-wide blocks, 25 characters (English).
  static RecognizerConfig paper_scale() {
    RecognizerConfig c;
    c.depth = 6;
    c.dim = 512;
    c.heads = 8;
    return c;
  }

  int hidden() const { return static_cast<int>(std::lround(dim * mlp_ratio)); }

  void validate() const {
    require(depth >= 1, "recognizer.depth must be >= 1");
    require(dim >= 1 && heads >= 1 && dim % heads == 0, "recognizer.dim must be divisible by recognizer.heads");
    require(max_len >= 1, "recognizer.max_len must be >= 1");
    require(!charset.empty(), "recognizer.charset must not be empty");
  }

  nlohmann::json to_json() const {
    return {{"depth", depth}, {"dim", dim}, {"heads", heads}, {"mlp_ratio", mlp_ratio},
            {"max_len", max_len}, {"charset", charset}};
  }
  static RecognizerConfig from_json(const nlohmann::json& j) {
    RecognizerConfig c;
    c.depth = j.at("depth");
    c.dim = j.at("dim");
    c.heads = j.at("heads");
    c.mlp_ratio = j.at("mlp_ratio");
    c.max_len = j.at("max_len");
    c.charset = j.at("charset");
    c.validate();
    return c;
  }
};

/// Greedy decoding against an arbitrary next-token scorer. `step` receives the
/// prefix (starting with [BOS]) and returns logits over the vocabulary.
inline std::string greedy_decode(const std::function<Eigen::VectorXd(const std::vector<int>&)>& step,
                                 const Vocabulary& vocab, int max_len) {
  std::vector<int> prefix{Vocabulary::kBos};
  std::vector<int> produced;
  for (int t = 0; t < max_len; ++t) {
    const Eigen::VectorXd logits = step(prefix);
    Eigen::Index best = 0;
    logits.maxCoeff(&best);
    if (best == Vocabulary::kEos) break;
    produced.push_back(static_cast<int>(best));
    prefix.push_back(static_cast<int>(best));
  }
  return vocab.decode(produced);
}

template <class T>
struct RecognizerDecoderCache {
  std::vector<int> ids;
  Mat<T> mem_in, mem, normed;
  std::vector<nn::CrossBlockCache<T>> blocks;
  nn::LayerNormCache<T> norm;
  int batch = 0, length = 0, mem_len = 0;
};

template <class T>
class RecognizerDecoder {
public:
  RecognizerDecoder() = default;
  RecognizerDecoder(const RecognizerConfig& cfg, int enc_dim, int vocab_size, std::uint64_t seed) : cfg_(cfg) {
    Rng rng(derive_seed(seed, 0x726563));  // "rec"
    tok_embed_ = nn::Param<T>(nn::normal_init<T>(vocab_size, cfg.dim, 0.02, rng));
    pos_embed_ = nn::Param<T>(nn::normal_init<T>(cfg.max_len + 1, cfg.dim, 0.02, rng));
    mem_proj_ = nn::Linear<T>(enc_dim, cfg.dim, rng);
    for (int i = 0; i < cfg.depth; ++i) blocks_.emplace_back(cfg.dim, cfg.heads, cfg.hidden(), nn::BlockOrder::sa_ca_ffn, true, rng);
    norm_ = nn::LayerNorm<T>(cfg.dim);
    head_ = nn::Linear<T>(cfg.dim, vocab_size, rng);
    // Near-zero logits at initialisation.
    head_.weight.value = nn::normal_init<T>(cfg.dim, vocab_size, 0.02, rng);
  }

  int vocab_size() const { return static_cast<int>(tok_embed_.value.rows()); }

  /// ids: batch x len row-major. Returns logits (batch*len) x vocab.
  Mat<T> forward(const std::vector<int>& ids, int batch, int len, const TokenBatch<T>& memory,
                 RecognizerDecoderCache<T>* c) const {
    if (len > cfg_.max_len + 1) throw ValidationError("recognizer: sequence longer than max_len + 1");
    Mat<T> x = embed(ids, batch, len);
    Mat<T> mem = mem_proj_.forward(memory.tokens);
    if (c) {
      c->ids = ids;
      c->mem_in = memory.tokens;
      c->mem = mem;
      c->blocks.resize(blocks_.size());
      c->batch = batch;
      c->length = len;
      c->mem_len = memory.length;
    }
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
      x = blocks_[i].forward(x, &mem, batch, len, memory.length, c ? &c->blocks[i] : nullptr);
    }
    Mat<T> normed = norm_.forward(x, c ? &c->norm : nullptr);
    Mat<T> logits = head_.forward(normed);
    if (c) c->normed = std::move(normed);
    return logits;
  }

  /// Returns d(memory tokens).
  Mat<T> backward(const Mat<T>& dlogits, const RecognizerDecoderCache<T>& c) {
    Mat<T> d = norm_.backward(head_.backward(c.normed, dlogits), c.norm);
    Mat<T> dmem = Mat<T>::Zero(c.mem.rows(), c.mem.cols());
    for (std::size_t i = blocks_.size(); i-- > 0;) {
      auto [dx, dm] = blocks_[i].backward(d, c.blocks[i]);
      d = std::move(dx);
      dmem += dm;
    }
    for (int b = 0; b < c.batch; ++b) {
      for (int t = 0; t < c.length; ++t) {
        const Eigen::Index r = static_cast<Eigen::Index>(b) * c.length + t;
        tok_embed_.grad.row(c.ids[r]) += d.row(r);
        pos_embed_.grad.row(t) += d.row(r);
      }
    }
    return mem_proj_.backward(c.mem_in, dmem);
  }

  /// Greedy decoding of a whole batch at once; memory keys/values are projected once.
  std::vector<std::vector<int>> greedy(const TokenBatch<T>& memory, int max_len) const {
    const int B = memory.batch;
    Mat<T> mem = mem_proj_.forward(memory.tokens);
    std::vector<std::pair<Mat<T>, Mat<T>>> kv;
    for (const auto& blk : blocks_) kv.push_back(blk.memory_kv(mem));
    std::vector<std::vector<int>> out(B);
    std::vector<int> ids(B, Vocabulary::kBos);
    std::vector<bool> done(B, false);
    for (int t = 0; t < max_len; ++t) {
      const int len = t + 1;
      Mat<T> x = embed(ids, B, len);
      for (std::size_t i = 0; i < blocks_.size(); ++i) {
        x = blocks_[i].forward(x, nullptr, B, len, memory.length, nullptr, &kv[i]);
      }
      Mat<T> last(B, x.cols());
      for (int b = 0; b < B; ++b) last.row(b) = x.row(static_cast<Eigen::Index>(b) * len + t);
      const Mat<T> logits = head_.forward(norm_.forward(last, nullptr));
      std::vector<int> next_ids(static_cast<std::size_t>(B) * (len + 1));
      bool all_done = true;
      for (int b = 0; b < B; ++b) {
        Eigen::Index best = 0;
        logits.row(b).maxCoeff(&best);
        if (!done[b]) {
          if (best == Vocabulary::kEos) {
            done[b] = true;
          } else {
            out[b].push_back(static_cast<int>(best));
          }
        }
        all_done = all_done && done[b];
        for (int s = 0; s < len; ++s) next_ids[static_cast<std::size_t>(b) * (len + 1) + s] = ids[static_cast<std::size_t>(b) * len + s];
        next_ids[static_cast<std::size_t>(b) * (len + 1) + len] = static_cast<int>(best);
      }
      if (all_done) break;
      ids = std::move(next_ids);
    }
    return out;
  }

  template <class F>
  void visit(F&& f, const std::string& p) {
    f(p + ".tok_embed", tok_embed_);
    f(p + ".pos_embed", pos_embed_);
    mem_proj_.visit(f, p + ".mem_proj");
    for (std::size_t i = 0; i < blocks_.size(); ++i) blocks_[i].visit(f, p + ".blocks." + std::to_string(i));
    norm_.visit(f, p + ".norm");
    head_.visit(f, p + ".head");
  }

private:
  Mat<T> embed(const std::vector<int>& ids, int batch, int len) const {
    Mat<T> x(static_cast<Eigen::Index>(batch) * len, cfg_.dim);
    for (int b = 0; b < batch; ++b)
      for (int t = 0; t < len; ++t) {
        const Eigen::Index r = static_cast<Eigen::Index>(b) * len + t;
        x.row(r) = tok_embed_.value.row(ids[r]) + pos_embed_.value.row(t);
      }
    return x;
  }

  RecognizerConfig cfg_;
  nn::Param<T> tok_embed_, pos_embed_;
  nn::Linear<T> mem_proj_;
  std::vector<nn::CrossBlock<T>> blocks_;
  nn::LayerNorm<T> norm_;
  nn::Linear<T> head_;
};

struct RecognizerStats {
  double loss = 0.0;
  int tokens = 0;          // non-[PAD] target positions
  int correct_tokens = 0;  // teacher-forced argmax hits
  int correct_words = 0;   // sequences with every position right
};

template <class T>
class Recognizer {
public:
  Recognizer() = default;
  Recognizer(const EncoderConfig& enc, const RecognizerConfig& cfg, std::uint64_t seed)
      : cfg_(cfg), vocab_(Charset::from_utf8(cfg.charset)) {
    cfg.validate();
    encoder_ = Encoder<T>(enc, derive_seed(seed, 1));
    decoder_ = RecognizerDecoder<T>(cfg, enc.dim, vocab_.size(), derive_seed(seed, 2));
  }

  const RecognizerConfig& config() const { return cfg_; }
  const Vocabulary& vocabulary() const { return vocab_; }
  Encoder<T>& encoder() { return encoder_; }
  const Encoder<T>& encoder() const { return encoder_; }

  void validate_transcript(const std::string& s) const {
    const auto ids = vocab_.encode(s);
    if (static_cast<int>(ids.size()) > cfg_.max_len) {
      throw ValidationError("transcript '" + s + "' has " + std::to_string(ids.size()) +
                            " characters, more than max_len " + std::to_string(cfg_.max_len));
    }
  }

  /// Teacher-forced cross-entropy over characters and [EOS]; [PAD] targets are
  /// excluded. Accumulates gradients when `grads` is set.
  RecognizerStats run(const Mat<T>& patches, const std::vector<std::string>& transcripts, bool grads) {
    const int B = static_cast<int>(transcripts.size());
    std::vector<std::vector<int>> enc(B);
    int longest = 0;
    for (int b = 0; b < B; ++b) {
      validate_transcript(transcripts[b]);
      enc[b] = vocab_.encode(transcripts[b]);
      longest = std::max<int>(longest, static_cast<int>(enc[b].size()));
    }
    const int L = longest + 1;
    std::vector<int> inputs(static_cast<std::size_t>(B) * L, Vocabulary::kPad);
    std::vector<int> targets(static_cast<std::size_t>(B) * L, Vocabulary::kPad);
    for (int b = 0; b < B; ++b) {
      inputs[static_cast<std::size_t>(b) * L] = Vocabulary::kBos;
      for (std::size_t i = 0; i < enc[b].size(); ++i) {
        inputs[static_cast<std::size_t>(b) * L + 1 + i] = enc[b][i];
        targets[static_cast<std::size_t>(b) * L + i] = enc[b][i];
      }
      targets[static_cast<std::size_t>(b) * L + enc[b].size()] = Vocabulary::kEos;
    }

    EncoderCache<T> c_enc;
    RecognizerDecoderCache<T> c_dec;
    const TokenBatch<T> memory = encoder_.forward(patches, B, nullptr, grads ? &c_enc : nullptr);
    const Mat<T> logits = decoder_.forward(inputs, B, L, memory, grads ? &c_dec : nullptr);

    RecognizerStats st;
    Mat<T> dlogits = Mat<T>::Zero(logits.rows(), logits.cols());
    std::vector<bool> word_ok(B, true);
    for (int b = 0; b < B; ++b) {
      for (int t = 0; t < L; ++t) {
        const Eigen::Index r = static_cast<Eigen::Index>(b) * L + t;
        const int tgt = targets[r];
        if (tgt == Vocabulary::kPad) continue;
        const auto row = logits.row(r).template cast<double>();
        const double mx = row.maxCoeff();
        const Eigen::RowVectorXd e = (row.array() - mx).exp().matrix();
        const double z = e.sum();
        st.loss += -(row(tgt) - mx - std::log(z));
        ++st.tokens;
        Eigen::Index best = 0;
        row.maxCoeff(&best);
        if (best == tgt) {
          ++st.correct_tokens;
        } else {
          word_ok[b] = false;
        }
        dlogits.row(r) = (e / z).template cast<T>();
        dlogits(r, tgt) -= static_cast<T>(1);
      }
      if (word_ok[b]) ++st.correct_words;
    }
    st.loss /= std::max(1, st.tokens);
    if (grads) {
      dlogits /= static_cast<T>(std::max(1, st.tokens));
      const Mat<T> dmem = decoder_.backward(dlogits, c_dec);
      encoder_.backward(dmem, c_enc);
    }
    return st;
  }

  std::vector<std::string> recognize(const Mat<T>& patches, int batch) const {
    const TokenBatch<T> memory = encoder_.forward(patches, batch, nullptr, nullptr);
    std::vector<std::string> out;
    for (const auto& ids : decoder_.greedy(memory, cfg_.max_len)) out.push_back(vocab_.decode(ids));
    return out;
  }

  std::vector<std::string> recognize(const std::vector<const Image*>& images, int chunk = 64) const {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < images.size(); i += chunk) {
      const std::size_t n = std::min<std::size_t>(chunk, images.size() - i);
      std::vector<const Image*> part(images.begin() + static_cast<std::ptrdiff_t>(i),
                                     images.begin() + static_cast<std::ptrdiff_t>(i + n));
      for (auto& s : recognize(stack_images<T>(part, encoder_.config().patch), static_cast<int>(n))) out.push_back(std::move(s));
    }
    return out;
  }

  template <class F>
  void visit(F&& f, const std::string& p = "") {
    encoder_.visit(f, p + "encoder");
    decoder_.visit(f, p + "recognizer");
  }

  void zero_grad() {
    visit([](const std::string&, nn::Param<T>& prm) { prm.zero_grad(); });
  }

private:
  RecognizerConfig cfg_;
  Vocabulary vocab_;
  Encoder<T> encoder_;
  RecognizerDecoder<T> decoder_;
};

}  // namespace lmim

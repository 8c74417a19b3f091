#pragma once
// Run configuration: a TOML-style key/value file with [section] headers,
// command-line overrides, and conversion into the typed training configs.
//
//   # comment
//   [pretrain]
//   epochs = 10
//   augmentation = "medium"
//
// Every key is addressed as "section.key".

#include "lmim/common.hpp"
#include "lmim/eval.hpp"
#include "lmim/train.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace lmim {

enum class KeyType { integer, real, boolean, text };

struct ConfigKey {
  std::string section;
  std::string name;
  KeyType type;
  std::string default_value;
  std::string help;

  std::string full() const { return section + "." + name; }
};

inline const std::vector<ConfigKey>& config_schema() {
  static const std::vector<ConfigKey> keys = [] {
    const PretrainConfig p;
    const FinetuneConfig f;
    const EncoderConfig e;
    const DecoderConfig d;
    const RecognizerConfig r;
    auto num = [](double v) {
      std::ostringstream os;
      os << v;
      return os.str();
    };
    using K = KeyType;
    return std::vector<ConfigKey>{
        {"general", "seed", K::integer, "0", "seed governing all randomness"},
        {"general", "out", K::text, "out", "output directory"},

        {"corpus", "vocab", K::text, "", "word list, one word per line"},
        {"corpus", "count", K::integer, "500", "number of images to render"},
        {"corpus", "augmentation", K::text, "none", "augmentation baked into the images (none|weak|medium|strong)"},
        {"corpus", "charset", K::text, r.charset, "characters allowed in transcripts"},

        {"encoder", "depth", K::integer, std::to_string(e.depth), "encoder blocks"},
        {"encoder", "dim", K::integer, std::to_string(e.dim), "encoder width"},
        {"encoder", "heads", K::integer, std::to_string(e.heads), "encoder attention heads"},
        {"encoder", "mlp_ratio", K::real, num(e.mlp_ratio), "encoder MLP expansion"},

        {"decoder", "depth", K::integer, std::to_string(d.depth), "pre-training decoder blocks"},
        {"decoder", "dim", K::integer, std::to_string(d.dim), "pre-training decoder width"},
        {"decoder", "heads", K::integer, std::to_string(d.heads), "pre-training decoder heads"},
        {"decoder", "mlp_ratio", K::real, num(d.mlp_ratio), "pre-training decoder MLP expansion"},
        {"decoder", "order", K::text, nn::to_string(d.order), "block order (SA-CA-FFN|CA-SA-FFN)"},

        {"pretrain", "corpus", K::text, "", "corpus directory"},
        {"pretrain", "guidance", K::boolean, "true", "guidance branch and cross-attention"},
        {"pretrain", "alignment", K::boolean, "true", "[cls] alignment loss (needs guidance)"},
        {"pretrain", "lr_peak", K::real, num(p.lr_peak), "peak learning rate"},
        {"pretrain", "batch", K::integer, std::to_string(p.batch), "batch size"},
        {"pretrain", "epochs", K::integer, std::to_string(p.epochs), "epochs"},
        {"pretrain", "warmup_epochs", K::integer, std::to_string(p.warmup_epochs), "linear warmup epochs"},
        {"pretrain", "steps_per_epoch", K::integer, "0", "steps per epoch (0: one pass over the corpus)"},
        {"pretrain", "mask_strategy", K::text, "random", "random|block"},
        {"pretrain", "mask_ratio", K::real, num(p.mask_ratio), "fraction of masked patches"},
        {"pretrain", "augmentation", K::text, "medium", "view augmentation (none|weak|medium|strong)"},
        {"pretrain", "target", K::text, "teacher_feature", "pixel|random_feature|teacher_feature"},
        {"pretrain", "normalize_pixel_targets", K::boolean, "true", "per-patch normalisation of pixel targets"},
        {"pretrain", "random_feature_dim", K::integer, std::to_string(p.random_feature_dim), "random feature width"},
        {"pretrain", "teacher_checkpoint", K::text, "", "teacher checkpoint (empty: train a short MAE teacher)"},
        {"pretrain", "teacher_steps", K::integer, std::to_string(p.teacher_steps), "steps of the automatic teacher"},
        {"pretrain", "grad_clip", K::real, num(p.grad_clip), "global gradient norm limit"},
        {"pretrain", "weight_decay", K::real, num(p.adamw.weight_decay), "AdamW weight decay"},
        {"pretrain", "resume", K::text, "", "checkpoint to resume from"},

        {"recognizer", "depth", K::integer, std::to_string(r.depth), "recognizer decoder blocks"},
        {"recognizer", "dim", K::integer, std::to_string(r.dim), "recognizer decoder width"},
        {"recognizer", "heads", K::integer, std::to_string(r.heads), "recognizer decoder heads"},
        {"recognizer", "max_len", K::integer, std::to_string(r.max_len), "maximum transcript length"},

        {"finetune", "corpus", K::text, "", "labelled training corpus directory"},
        {"finetune", "init", K::text, "scratch", "scratch or a pre-training checkpoint"},
        {"finetune", "lr", K::real, num(f.lr), "learning rate"},
        {"finetune", "batch", K::integer, std::to_string(f.batch), "batch size"},
        {"finetune", "epochs", K::integer, std::to_string(f.epochs), "epochs"},
        {"finetune", "augmentation", K::text, "medium", "training augmentation"},
        {"finetune", "grad_clip", K::real, num(f.grad_clip), "global gradient norm limit"},
        {"finetune", "weight_decay", K::real, num(f.adamw.weight_decay), "AdamW weight decay"},

        {"evaluate", "checkpoint", K::text, "", "recognizer checkpoint"},
        {"evaluate", "corpora", K::text, "", "comma-separated corpus directories (one subset each)"},
        {"evaluate", "mode", K::text, "waics", "waics|sentence"},

        {"ablate", "axis", K::text, "all", "components|augmentation|decoder_order|target|masking|all"},
        {"ablate", "preset", K::text, "desk", "desk|smallest"},
        {"ablate", "train_count", K::integer, "0", "override the preset's training images (0: preset)"},
        {"ablate", "eval_per_subset", K::integer, "0", "override the preset's images per subset (0: preset)"},

        {"attmap", "checkpoints", K::text, "", "comma-separated name=path list"},
        {"attmap", "image", K::text, "", "input PNG (32x128)"},
        {"attmap", "query_row", K::integer, "4", "query patch row"},
        {"attmap", "query_col", K::integer, "16", "query patch column"},
        {"attmap", "block", K::integer, "-1", "encoder block (-1: last)"},
    };
  }();
  return keys;
}

inline const ConfigKey* find_key(const std::string& full) {
  for (const auto& k : config_schema())
    if (k.full() == full) return &k;
  return nullptr;
}

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

class RunConfig {
public:
  RunConfig() {
    for (const auto& k : config_schema()) values_[k.full()] = k.default_value;
  }

  /// Reads a config file; unknown sections or keys are rejected.
  void load_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError(path.string() + ": cannot open config file");
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const std::string where = path.string() + ":" + std::to_string(lineno);
      std::string s = trim(strip_comment(line));
      if (s.empty()) continue;
      if (s.front() == '[') {
        if (s.back() != ']') throw ValidationError(where + ": malformed section header");
        section = trim(std::string_view(s).substr(1, s.size() - 2));
        continue;
      }
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw ValidationError(where + ": expected key = value");
      const std::string key = trim(std::string_view(s).substr(0, eq));
      std::string value = trim(std::string_view(s).substr(eq + 1));
      if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
      const std::string full = section.empty() ? key : section + "." + key;
      set(full, value, where);
    }
  }

  void set(const std::string& full, const std::string& value, const std::string& where = "") {
    const ConfigKey* k = find_key(full);
    if (!k) throw ValidationError((where.empty() ? "" : where + ": ") + "unknown config key '" + full + "'");
    check_type(*k, value);
    values_[full] = value;
  }

  const std::string& raw(const std::string& full) const {
    const auto it = values_.find(full);
    if (it == values_.end()) throw ValidationError("unknown config key '" + full + "'");
    return it->second;
  }

  std::string text(const std::string& full) const { return raw(full); }
  long integer(const std::string& full) const { return parse_integer(full, raw(full)); }
  double real(const std::string& full) const { return parse_real(full, raw(full)); }
  bool boolean(const std::string& full) const { return parse_bool(full, raw(full)); }
  std::uint64_t seed() const { return static_cast<std::uint64_t>(integer("general.seed")); }

  nlohmann::json to_json() const {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& k : config_schema()) {
      const std::string& v = values_.at(k.full());
      switch (k.type) {
        case KeyType::integer: j[k.section][k.name] = integer(k.full()); break;
        case KeyType::real: j[k.section][k.name] = real(k.full()); break;
        case KeyType::boolean: j[k.section][k.name] = boolean(k.full()); break;
        case KeyType::text: j[k.section][k.name] = v; break;
      }
    }
    return j;
  }

  /// Runs a parser and prefixes its error with the offending key.
  template <class F>
  static auto keyed(const std::string& key, F&& f) {
    try {
      return f();
    } catch (const ValidationError& e) {
      throw ValidationError(key + ": " + e.what());
    }
  }

  // -- typed views ---------------------------------------------------------

  EncoderConfig encoder() const {
    EncoderConfig e;
    e.depth = static_cast<int>(integer("encoder.depth"));
    e.dim = static_cast<int>(integer("encoder.dim"));
    e.heads = static_cast<int>(integer("encoder.heads"));
    e.mlp_ratio = real("encoder.mlp_ratio");
    e.validate();
    return e;
  }

  DecoderConfig decoder() const {
    DecoderConfig d;
    d.depth = static_cast<int>(integer("decoder.depth"));
    d.dim = static_cast<int>(integer("decoder.dim"));
    d.heads = static_cast<int>(integer("decoder.heads"));
    d.mlp_ratio = real("decoder.mlp_ratio");
    d.order = keyed("decoder.order", [&] { return nn::parse_block_order(text("decoder.order")); });
    d.validate();
    return d;
  }

  PretrainConfig pretrain() const {
    PretrainConfig p;
    p.model.encoder = encoder();
    p.model.decoder = decoder();
    p.model.guidance = boolean("pretrain.guidance");
    p.model.alignment = boolean("pretrain.alignment");
    p.lr_peak = real("pretrain.lr_peak");
    p.batch = static_cast<int>(integer("pretrain.batch"));
    p.epochs = static_cast<int>(integer("pretrain.epochs"));
    p.warmup_epochs = static_cast<int>(integer("pretrain.warmup_epochs"));
    p.steps_per_epoch = static_cast<int>(integer("pretrain.steps_per_epoch"));
    p.mask_strategy = keyed("pretrain.mask_strategy", [&] { return parse_mask_strategy(text("pretrain.mask_strategy")); });
    p.mask_ratio = real("pretrain.mask_ratio");
    p.augmentation = keyed("pretrain.augmentation", [&] { return parse_aug_level(text("pretrain.augmentation")); });
    p.target = keyed("pretrain.target", [&] { return parse_target_kind(text("pretrain.target")); });
    p.normalize_pixel_targets = boolean("pretrain.normalize_pixel_targets");
    p.random_feature_dim = static_cast<int>(integer("pretrain.random_feature_dim"));
    p.teacher_checkpoint = text("pretrain.teacher_checkpoint");
    p.teacher_steps = static_cast<int>(integer("pretrain.teacher_steps"));
    p.grad_clip = real("pretrain.grad_clip");
    p.adamw.weight_decay = real("pretrain.weight_decay");
    p.seed = seed();
    p.validate();
    return p;
  }

  RecognizerConfig recognizer() const {
    RecognizerConfig r;
    r.depth = static_cast<int>(integer("recognizer.depth"));
    r.dim = static_cast<int>(integer("recognizer.dim"));
    r.heads = static_cast<int>(integer("recognizer.heads"));
    r.max_len = static_cast<int>(integer("recognizer.max_len"));
    r.charset = text("corpus.charset");
    r.validate();
    return r;
  }

  FinetuneConfig finetune() const {
    FinetuneConfig f;
    f.encoder = encoder();
    f.recognizer = recognizer();
    f.lr = real("finetune.lr");
    f.batch = static_cast<int>(integer("finetune.batch"));
    f.epochs = static_cast<int>(integer("finetune.epochs"));
    f.init = text("finetune.init");
    f.augmentation = keyed("finetune.augmentation", [&] { return parse_aug_level(text("finetune.augmentation")); });
    f.grad_clip = real("finetune.grad_clip");
    f.adamw.weight_decay = real("finetune.weight_decay");
    f.seed = seed();
    f.validate();
    return f;
  }

private:
  static std::string strip_comment(const std::string& line) {
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
      if (line[i] == '"') quoted = !quoted;
      if (line[i] == '#' && !quoted) return line.substr(0, i);
    }
    return line;
  }

  static long parse_integer(const std::string& key, const std::string& v) {
    std::size_t pos = 0;
    long out = 0;
    try {
      out = std::stol(v, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos == 0 || pos != v.size()) throw ValidationError(key + ": expected an integer, got '" + v + "'");
    return out;
  }

  static double parse_real(const std::string& key, const std::string& v) {
    std::size_t pos = 0;
    double out = 0;
    try {
      out = std::stod(v, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos == 0 || pos != v.size() || !std::isfinite(out)) throw ValidationError(key + ": expected a number, got '" + v + "'");
    return out;
  }

  static bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ValidationError(key + ": expected true or false, got '" + v + "'");
  }

  static void check_type(const ConfigKey& k, const std::string& v) {
    switch (k.type) {
      case KeyType::integer: parse_integer(k.full(), v); break;
      case KeyType::real: parse_real(k.full(), v); break;
      case KeyType::boolean: parse_bool(k.full(), v); break;
      case KeyType::text: break;
    }
  }

  std::map<std::string, std::string> values_;
};

}  // namespace lmim

#pragma once
// Word accuracy (WAICS and exact sentence match), subset aggregation,
// the benchmark runner and the ablation harness.

#include "lmim/checkpoint.hpp"
#include "lmim/common.hpp"
#include "lmim/corpus.hpp"
#include "lmim/recognizer.hpp"
#include "lmim/train.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace lmim {

/// Lowercases ASCII letters and drops every byte outside [a-z0-9]
/// (so any non-ASCII character disappears entirely).
inline std::string waics_normalize(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (unsigned char c : s) {
    if (c >= 'A' && c <= 'Z') c = static_cast<unsigned char>(c - 'A' + 'a');
    if ((c >= 'a' && c <= 'z') || (c >= '0' && c <= '9')) out.push_back(static_cast<char>(c));
  }
  return out;
}

inline bool waics_match(std::string_view pred, std::string_view gt) { return waics_normalize(pred) == waics_normalize(gt); }

enum class MatchMode { waics, sentence };

inline std::string to_string(MatchMode m) { return m == MatchMode::waics ? "waics" : "sentence"; }

inline MatchMode parse_match_mode(const std::string& s) {
  if (s == "waics") return MatchMode::waics;
  if (s == "sentence") return MatchMode::sentence;
  throw ValidationError("unknown evaluation mode '" + s + "' (expected waics or sentence)");
}

inline double subset_accuracy(const std::vector<std::string>& preds, const std::vector<std::string>& gts,
                              MatchMode mode = MatchMode::waics) {
  if (preds.size() != gts.size()) throw ValidationError("subset_accuracy: prediction and label counts differ");
  if (preds.empty()) throw ValidationError("subset_accuracy: empty subset");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    hits += mode == MatchMode::waics ? waics_match(preds[i], gts[i]) : preds[i] == gts[i];
  }
  return static_cast<double>(hits) / static_cast<double>(preds.size());
}

struct SubsetScore {
  std::string name;
  long n_instances = 0;
  double accuracy = 0.0;  // in [0, 1]
};

struct EvalReport {
  std::vector<SubsetScore> per_subset;
  double avg = 0.0;
  double w_avg = 0.0;

  /// CSV rows `subset,n,accuracy` followed by a summary line.
  std::string to_csv() const {
    std::ostringstream os;
    os << "subset,n,accuracy\n";
    char buf[64];
    for (const auto& s : per_subset) {
      std::snprintf(buf, sizeof(buf), "%.6f", s.accuracy);
      os << s.name << ',' << s.n_instances << ',' << buf << '\n';
    }
    char sum[96];
    std::snprintf(sum, sizeof(sum), "# summary avg=%.6f w_avg=%.6f\n", avg, w_avg);
    os << sum;
    return os.str();
  }

  nlohmann::json to_json() const {
    nlohmann::json subs = nlohmann::json::array();
    for (const auto& s : per_subset) subs.push_back({{"name", s.name}, {"n", s.n_instances}, {"accuracy", s.accuracy}});
    return {{"per_subset", subs}, {"avg", avg}, {"w_avg", w_avg}};
  }
};

/// Arithmetic mean (Avg) and instance-weighted mean (W-Avg) of subset accuracies.
inline EvalReport aggregate(const std::vector<SubsetScore>& subsets) {
  if (subsets.empty()) throw ValidationError("aggregate: no subsets");
  EvalReport r;
  r.per_subset = subsets;
  double sum = 0.0, wsum = 0.0, n = 0.0;
  for (const auto& s : subsets) {
    if (s.n_instances < 1) throw ValidationError("aggregate: subset '" + s.name + "' has no instances");
    sum += s.accuracy;
    wsum += s.accuracy * static_cast<double>(s.n_instances);
    n += static_cast<double>(s.n_instances);
  }
  r.avg = sum / static_cast<double>(subsets.size());
  r.w_avg = wsum / n;
  return r;
}

// ---------------------------------------------------------------------------
// Benchmark runner

using Predictor = std::function<std::vector<std::string>(const std::vector<const Image*>&)>;

struct LabeledSubset {
  std::string name;
  std::vector<TextSample> samples;
};

inline EvalReport evaluate_subsets(const Predictor& predict, const std::vector<LabeledSubset>& subsets,
                                   MatchMode mode) {
  std::vector<SubsetScore> scores;
  for (const auto& sub : subsets) {
    std::vector<const Image*> imgs;
    std::vector<std::string> gts;
    for (const auto& s : sub.samples) {
      imgs.push_back(&s.image);
      gts.push_back(s.transcript);
    }
    const auto preds = predict(imgs);
    if (preds.size() != imgs.size()) throw Error("predictor returned " + std::to_string(preds.size()) + " strings for " + std::to_string(imgs.size()) + " images");
    scores.push_back({sub.name, static_cast<long>(imgs.size()), subset_accuracy(preds, gts, mode)});
  }
  return aggregate(scores);
}

/// Scores every labelled image of each corpus directory; one subset per directory.
inline EvalReport run_benchmark(const Predictor& predict, const std::vector<std::filesystem::path>& corpus_dirs,
                                MatchMode mode = MatchMode::waics) {
  if (corpus_dirs.empty()) throw ValidationError("run_benchmark: no corpus directories");
  std::vector<LabeledSubset> subsets;
  for (const auto& dir : corpus_dirs) {
    if (!std::filesystem::is_directory(dir)) throw IoError(dir.string() + ": not a directory");
    std::string name = dir.filename().string();
    if (name.empty()) name = dir.parent_path().filename().string();
    subsets.push_back({name, load_corpus(dir)});
  }
  return evaluate_subsets(predict, subsets, mode);
}

template <class T = float>
Predictor recognizer_predictor(std::shared_ptr<const Recognizer<T>> model) {
  return [model](const std::vector<const Image*>& imgs) { return model->recognize(imgs); };
}

inline EvalReport run_benchmark(const std::filesystem::path& checkpoint,
                                const std::vector<std::filesystem::path>& corpus_dirs,
                                MatchMode mode = MatchMode::waics) {
  auto model = std::make_shared<const Recognizer<float>>(load_recognizer<float>(load_checkpoint(checkpoint)));
  return run_benchmark(recognizer_predictor<float>(model), corpus_dirs, mode);
}

// ---------------------------------------------------------------------------
// Synthetic evaluation subsets mirroring the seven Union14M scenario columns.

inline const std::vector<std::string>& scenario_names() {
  static const std::vector<std::string> names{"Cur.", "M-O", "Art.", "Ctl.", "Sal.", "M-W", "Gen."};
  return names;
}

/// Seven labelled subsets: curved (strong warp), multi-oriented (rotation +
/// perspective), artistic (fancy fonts, strong colour), contextless (random
/// strings), salient (clean), multi-word (two words joined) and general (medium).
inline std::vector<LabeledSubset> synthetic_benchmark(const std::vector<std::string>& vocab, int per_subset,
                                                      std::uint64_t seed, const Charset& charset = Charset(),
                                                      int max_len = kMaxTranscriptLength) {
  require(per_subset >= 1, "synthetic_benchmark: per_subset must be >= 1");
  require(!vocab.empty(), "synthetic_benchmark: vocab must not be empty");
  std::vector<LabeledSubset> out;
  for (std::size_t k = 0; k < scenario_names().size(); ++k) {
    const std::string& name = scenario_names()[k];
    LabeledSubset sub{name, {}};
    AugmentationPolicy pol = AugmentationPolicy::make(AugLevel::medium, seed);
    if (name == "Cur.") {
      pol.distortion = 0.8;
      pol.perspective = 0.1;
    } else if (name == "M-O") {
      pol.rotation_deg = 15.0;
      pol.perspective = 0.6;
    } else if (name == "Art.") {
      pol.brightness = pol.contrast = pol.saturation = 0.7;
    } else if (name == "Sal.") {
      pol = AugmentationPolicy::make(AugLevel::none, seed);
    }
    for (int i = 0; i < per_subset; ++i) {
      Rng rng(derive_seed(seed, k, i, 0x626e6368));  // "bnch"
      std::string text;
      if (name == "Ctl.") {
        const int len = 3 + static_cast<int>(rng.below(6));
        for (int c = 0; c < len; ++c) Charset::append_utf8(text, charset.at(rng.below(charset.size())));
      } else if (name == "M-W") {
        text = vocab[rng.below(vocab.size())];
        const std::string& second = vocab[rng.below(vocab.size())];
        if (static_cast<int>(utf8_decode(text + second).size()) <= max_len) text += second;
      } else {
        text = vocab[rng.below(vocab.size())];
      }
      RenderStyle style;
      if (name == "Art.") style.font_id = 1 + static_cast<int>(rng.below(2));
      TextSample s = render_sample(text, derive_seed(seed, k, i), style, charset);
      Rng aug(derive_seed(seed, k, i, 0x61756721));
      s.image = augment(s.image, pol, aug);
      sub.samples.push_back(std::move(s));
    }
    out.push_back(std::move(sub));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Ablation harness

enum class AblationAxis { components, augmentation, decoder_order, target, masking };

inline std::string to_string(AblationAxis a) {
  switch (a) {
    case AblationAxis::components: return "components";
    case AblationAxis::augmentation: return "augmentation";
    case AblationAxis::decoder_order: return "decoder_order";
    case AblationAxis::target: return "target";
    case AblationAxis::masking: return "masking";
  }
  return "?";
}

inline AblationAxis parse_ablation_axis(const std::string& s) {
  if (s == "components") return AblationAxis::components;
  if (s == "augmentation") return AblationAxis::augmentation;
  if (s == "decoder_order") return AblationAxis::decoder_order;
  if (s == "target") return AblationAxis::target;
  if (s == "masking") return AblationAxis::masking;
  throw ValidationError("unknown ablation axis '" + s +
                        "' (expected components, augmentation, decoder_order, target or masking)");
}

inline const std::vector<AblationAxis>& all_ablation_axes() {
  static const std::vector<AblationAxis> axes{AblationAxis::components, AblationAxis::augmentation,
                                              AblationAxis::decoder_order, AblationAxis::target,
                                              AblationAxis::masking};
  return axes;
}

struct AblationRowSpec {
  std::vector<std::string> cells;  // configuration columns
  PretrainConfig pretrain;
};

/// Configuration column names and one pre-training config per table row.
inline std::pair<std::vector<std::string>, std::vector<AblationRowSpec>> ablation_rows(AblationAxis axis,
                                                                                       const PretrainConfig& base) {
  std::vector<AblationRowSpec> rows;
  auto row = [&](std::vector<std::string> cells, auto&& edit) {
    PretrainConfig c = base;
    edit(c);
    rows.push_back({std::move(cells), c});
  };
  switch (axis) {
    case AblationAxis::components:
      row({"-", "-"}, [](PretrainConfig& c) { c.model.guidance = false; c.model.alignment = false; });
      row({"yes", "-"}, [](PretrainConfig& c) { c.model.guidance = true; c.model.alignment = false; });
      row({"yes", "yes"}, [](PretrainConfig& c) { c.model.guidance = true; c.model.alignment = true; });
      return {{"Guide", "Align"}, rows};
    case AblationAxis::augmentation:
      row({"Strong"}, [](PretrainConfig& c) { c.augmentation = AugLevel::strong; });
      row({"Weak"}, [](PretrainConfig& c) { c.augmentation = AugLevel::weak; });
      row({"Medium"}, [](PretrainConfig& c) { c.augmentation = AugLevel::medium; });
      return {{"Augment"}, rows};
    case AblationAxis::decoder_order:
      row({"CA-SA-FFN"}, [](PretrainConfig& c) { c.model.decoder.order = BlockOrder::ca_sa_ffn; });
      row({"SA-CA-FFN"}, [](PretrainConfig& c) { c.model.decoder.order = BlockOrder::sa_ca_ffn; });
      return {{"Decoder"}, rows};
    case AblationAxis::target:
      row({"Pixel"}, [](PretrainConfig& c) { c.target = TargetKind::pixel; });
      row({"Rand Feat"}, [](PretrainConfig& c) { c.target = TargetKind::random_feature; });
      row({"MAE Feat"}, [](PretrainConfig& c) { c.target = TargetKind::teacher_feature; });
      return {{"Target"}, rows};
    case AblationAxis::masking:
      for (auto [strategy, ratio] : std::vector<std::pair<MaskStrategy, double>>{{MaskStrategy::random, 0.6},
                                                                                  {MaskStrategy::random, 0.8},
                                                                                  {MaskStrategy::random, 0.9},
                                                                                  {MaskStrategy::block, 0.6},
                                                                                  {MaskStrategy::block, 0.8}}) {
        char r[8];
        std::snprintf(r, sizeof(r), "%.1f", ratio);
        row({strategy == MaskStrategy::random ? "Rand" : "Block", r}, [&](PretrainConfig& c) {
          c.mask_strategy = strategy;
          c.mask_ratio = ratio;
        });
      }
      return {{"Mask", "Ratio"}, rows};
  }
  throw ValidationError("unknown ablation axis");
}

struct AblationSettings {
  PretrainConfig pretrain;
  FinetuneConfig finetune;
  std::vector<std::string> vocab;
  int train_count = 500;
  int eval_per_subset = 50;
  std::uint64_t seed = 0;

  /// Desk-scale preset; `smallest` trims every budget for a quick structural run.
  static AblationSettings preset(const std::string& name) {
    AblationSettings s;
    s.vocab = {"cat",    "house",  "river",  "green",  "apple",  "stone",  "light",  "music",  "paper",  "window",
               "garden", "yellow", "market", "orange", "silver", "winter", "bridge", "planet", "coffee", "street"};
    s.pretrain.steps_per_epoch = 30;
    s.finetune.lr = 1e-3;
    s.finetune.epochs = 30;
    s.finetune.recognizer.dim = 64;
    if (name == "desk") return s;
    if (name == "smallest") {
      s.train_count = 192;
      s.eval_per_subset = 20;
      s.pretrain.batch = 16;
      s.pretrain.epochs = 5;
      s.pretrain.steps_per_epoch = 8;
      s.pretrain.teacher_steps = 20;
      s.finetune.batch = 32;
      s.finetune.epochs = 4;
      return s;
    }
    throw ValidationError("unknown ablation preset '" + name + "' (expected desk or smallest)");
  }
};

struct AblationTable {
  AblationAxis axis = AblationAxis::components;
  std::vector<std::string> config_columns;
  std::vector<std::string> subset_columns;
  std::vector<std::vector<std::string>> config_cells;
  std::vector<EvalReport> reports;

  std::string to_csv() const {
    std::ostringstream os;
    os << "# desk-scale ablation (" << to_string(axis)
       << "): synthetic corpora and tiny models; reproduces the table structure and trends only, "
          "accuracies are not comparable to full-scale results\n";
    for (const auto& c : config_columns) os << c << ',';
    for (const auto& c : subset_columns) os << c << ',';
    os << "Avg\n";
    char buf[32];
    for (std::size_t r = 0; r < reports.size(); ++r) {
      for (const auto& c : config_cells[r]) os << c << ',';
      for (const auto& s : reports[r].per_subset) {
        std::snprintf(buf, sizeof(buf), "%.4f", s.accuracy);
        os << buf << ',';
      }
      std::snprintf(buf, sizeof(buf), "%.4f", reports[r].avg);
      os << buf << '\n';
    }
    return os.str();
  }
};

/// Pre-trains, fine-tunes and evaluates one model per table row.
inline AblationTable run_ablation(AblationAxis axis, const AblationSettings& settings,
                                  const std::function<void(const std::string&)>& progress = {}) {
  auto say = [&](const std::string& s) {
    if (progress) progress(s);
  };
  const auto train = synthesize_samples(settings.vocab, settings.train_count, AugmentationPolicy::make(AugLevel::none),
                                        derive_seed(settings.seed, 0x747261696e));  // "train"
  const Charset charset = Charset::from_utf8(settings.finetune.recognizer.charset);
  const auto bench = synthetic_benchmark(settings.vocab, settings.eval_per_subset,
                                         derive_seed(settings.seed, 0x6576616c), charset,  // "eval"
                                         settings.finetune.recognizer.max_len);
  auto [columns, rows] = ablation_rows(axis, settings.pretrain);

  AblationTable table;
  table.axis = axis;
  table.config_columns = columns;
  table.subset_columns = scenario_names();

  std::map<std::string, std::shared_ptr<const Encoder<float>>> teachers;
  const auto tmp = std::filesystem::temp_directory_path() /
                   ("lmim_ablation_" + std::to_string(settings.seed) + "_" + to_string(axis));
  std::filesystem::create_directories(tmp);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    PretrainConfig pc = rows[r].pretrain;
    pc.seed = settings.seed;
    std::string label;
    for (const auto& c : rows[r].cells) label += (label.empty() ? "" : " ") + c;
    std::shared_ptr<const Encoder<float>> teacher;
    if (pc.target == TargetKind::teacher_feature) {
      const std::string key = pc.model.encoder.to_json().dump() + pc.teacher_checkpoint;
      if (!teachers.count(key)) {
        say("teacher for " + to_string(axis));
        teachers[key] = make_teacher<float>(train, pc);
      }
      teacher = teachers[key];
    }
    say(to_string(axis) + " row " + std::to_string(r + 1) + "/" + std::to_string(rows.size()) + " [" + label + "]: pretrain");
    Pretrainer<float> pre(train, pc, teacher);
    pre.run();
    const auto ckpt = tmp / ("row" + std::to_string(r) + ".ckpt");
    save_checkpoint(pre.checkpoint(), ckpt);

    FinetuneConfig fc = settings.finetune;
    fc.init = ckpt.string();
    fc.seed = settings.seed;
    say(to_string(axis) + " row " + std::to_string(r + 1) + ": finetune");
    Finetuner<float> ft(train, fc);
    ft.run();
    auto model = std::make_shared<const Recognizer<float>>(ft.model());
    EvalReport rep = evaluate_subsets(recognizer_predictor<float>(model), bench, MatchMode::waics);
    for (const auto& s : rep.per_subset) {
      if (!(s.accuracy >= 0.0 && s.accuracy <= 1.0)) throw Error("ablation: accuracy outside [0, 1]");
    }
    table.config_cells.push_back(rows[r].cells);
    table.reports.push_back(std::move(rep));
    std::filesystem::remove(ckpt);
  }
  std::filesystem::remove_all(tmp);
  return table;
}

}  // namespace lmim

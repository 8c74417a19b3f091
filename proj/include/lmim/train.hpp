#pragma once
// Pre-training (LMIM and plain MAE teacher) and recognizer fine-tuning loops.
//
// Every random choice in a step (sample order, augmentation of both views,
// mask plan) is a pure function of (seed, step, slot), so runs are
// reproducible and resumable from any saved step.

#include "lmim/checkpoint.hpp"
#include "lmim/common.hpp"
#include "lmim/corpus.hpp"
#include "lmim/lmim_model.hpp"
#include "lmim/objectives.hpp"
#include "lmim/optim.hpp"
#include "lmim/patching.hpp"
#include "lmim/recognizer.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

namespace lmim {

struct PretrainConfig {
  LmimConfig model;
  double lr_peak = 1e-3;
  int batch = 32;
  int epochs = 10;
  int warmup_epochs = 1;
  int steps_per_epoch = 0;  // 0: one pass over the corpus
  MaskStrategy mask_strategy = MaskStrategy::random;
  double mask_ratio = 0.8;
  AugLevel augmentation = AugLevel::medium;
  TargetKind target = TargetKind::teacher_feature;
  bool normalize_pixel_targets = true;
  int random_feature_dim = 64;
  std::string teacher_checkpoint;  // empty: train a short plain-MAE teacher first
  int teacher_steps = 100;
  double grad_clip = 1.0;
  AdamWConfig adamw;
  std::uint64_t seed = 0;

  void validate() const {
    model.validate();
    require(lr_peak > 0, "pretrain.lr_peak must be positive");
    require(batch >= 1, "pretrain.batch must be >= 1");
    require(epochs >= 1, "pretrain.epochs must be >= 1");
    require(warmup_epochs >= 0 && warmup_epochs < epochs, "pretrain.warmup_epochs must be < pretrain.epochs");
    require(steps_per_epoch >= 0, "pretrain.steps_per_epoch must be >= 0");
    check_ratio(mask_ratio);
    if (mask_strategy == MaskStrategy::block) plan_block_mask(model.encoder.rows(), model.encoder.cols(), mask_ratio, 0);
    require(random_feature_dim >= 1, "pretrain.random_feature_dim must be >= 1");
    require(teacher_steps >= 10, "pretrain.teacher_steps must be >= 10");
    require(grad_clip > 0, "pretrain.grad_clip must be positive");
    if (target == TargetKind::teacher_feature && !teacher_checkpoint.empty() &&
        !std::filesystem::exists(teacher_checkpoint)) {
      throw ValidationError("pretrain.teacher_checkpoint '" + teacher_checkpoint + "' does not exist");
    }
  }

  nlohmann::json to_json() const {
    return {{"model", model.to_json()},
            {"lr_peak", lr_peak},
            {"batch", batch},
            {"epochs", epochs},
            {"warmup_epochs", warmup_epochs},
            {"steps_per_epoch", steps_per_epoch},
            {"mask_strategy", to_string(mask_strategy)},
            {"mask_ratio", mask_ratio},
            {"augmentation", to_string(augmentation)},
            {"target", to_string(target)},
            {"normalize_pixel_targets", normalize_pixel_targets},
            {"random_feature_dim", random_feature_dim},
            {"teacher_checkpoint", teacher_checkpoint},
            {"teacher_steps", teacher_steps},
            {"grad_clip", grad_clip},
            {"adamw", {{"beta1", adamw.beta1}, {"beta2", adamw.beta2}, {"eps", adamw.eps}, {"weight_decay", adamw.weight_decay}}},
            {"seed", seed}};
  }
};

struct TrainLogRow {
  long step = 0;
  double recon = 0.0, align = 0.0, total = 0.0, lr = 0.0;
};

inline std::string format_log_row(const TrainLogRow& r) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%ld,%.9g,%.9g,%.9g,%.9g", r.step, r.recon, r.align, r.total, r.lr);
  return buf;
}

/// Moving average over the `window` rows ending at index i (fewer at the start).
inline double smoothed_total(const std::vector<TrainLogRow>& log, std::size_t i, std::size_t window = 20) {
  require(i < log.size(), "smoothed_total: index out of range");
  const std::size_t lo = i + 1 >= window ? i + 1 - window : 0;
  double s = 0.0;
  for (std::size_t k = lo; k <= i; ++k) s += log[k].total;
  return s / static_cast<double>(i + 1 - lo);
}

/// Encoder config recorded in any checkpoint written by this library.
inline EncoderConfig checkpoint_encoder_config(const Checkpoint& ck) {
  if (!ck.meta.contains("encoder")) throw ValidationError("checkpoint metadata has no encoder config");
  return EncoderConfig::from_json(ck.meta.at("encoder"));
}

template <class T>
std::shared_ptr<Encoder<T>> load_encoder(const Checkpoint& ck, const std::string& prefix = "encoder") {
  auto enc = std::make_shared<Encoder<T>>(checkpoint_encoder_config(ck), 0);
  int loaded = 0;
  enc->visit(
      [&](const std::string& name, nn::Param<T>& p) {
        const auto it = ck.tensors.find(name);
        if (it == ck.tensors.end()) throw ValidationError("checkpoint has no tensor '" + name + "'");
        if (static_cast<Eigen::Index>(it->second.rows) != p.value.rows() ||
            static_cast<Eigen::Index>(it->second.cols) != p.value.cols()) {
          throw DimensionError("checkpoint tensor '" + name + "' has the wrong shape");
        }
        p.value = it->second.template as<T>();
        ++loaded;
      },
      prefix);
  return enc;
}

template <class T = float>
class Pretrainer {
public:
  /// `teacher` is required for teacher_feature targets (see make_teacher()).
  Pretrainer(const std::vector<TextSample>& samples, PretrainConfig cfg,
             std::shared_ptr<const Encoder<T>> teacher = nullptr)
      : samples_(samples), cfg_(std::move(cfg)) {
    require(!samples_.empty(), "pretrain: corpus is empty");
    tune_allocator();
    const int pd = cfg_.model.encoder.patch_dim();
    switch (cfg_.target) {
      case TargetKind::pixel:
        provider_ = TargetProvider<T>::pixel(pd, cfg_.normalize_pixel_targets);
        break;
      case TargetKind::random_feature:
        provider_ = TargetProvider<T>::random_feature(pd, cfg_.random_feature_dim, cfg_.seed);
        break;
      case TargetKind::teacher_feature:
        if (!teacher) throw ValidationError("pretrain: teacher_feature targets need a teacher encoder");
        if (!(teacher->config() == cfg_.model.encoder)) {
          throw ValidationError("pretrain: teacher encoder config differs from the student encoder config");
        }
        provider_ = TargetProvider<T>::teacher_feature(teacher);
        break;
    }
    cfg_.model.target_dim = provider_.target_dim;
    cfg_.validate();
    provider_.validate();
    model_ = LmimModel<T>(cfg_.model, derive_seed(cfg_.seed, 0x6d6f64656c));  // "model"
    opt_ = AdamW<T>(cfg_.adamw);
    policy_ = AugmentationPolicy::make(cfg_.augmentation, cfg_.seed);
  }

  const PretrainConfig& config() const { return cfg_; }
  LmimModel<T>& model() { return model_; }
  const TargetProvider<T>& targets() const { return provider_; }
  long step() const { return step_; }
  int steps_per_epoch() const {
    if (cfg_.steps_per_epoch > 0) return cfg_.steps_per_epoch;
    return static_cast<int>((samples_.size() + cfg_.batch - 1) / cfg_.batch);
  }
  long total_steps() const { return static_cast<long>(steps_per_epoch()) * cfg_.epochs; }
  long warmup_steps() const { return static_cast<long>(steps_per_epoch()) * cfg_.warmup_epochs; }
  double lr(long step) const { return lr_at(step, cfg_.lr_peak, warmup_steps(), total_steps()); }

  /// Corpus index used at (step, slot): a fresh permutation per pass over the data.
  std::size_t sample_index(long step, int slot) const {
    const std::size_t n = samples_.size();
    const std::size_t g = static_cast<std::size_t>(step) * cfg_.batch + slot;
    const std::size_t pass = g / n;
    if (pass != perm_pass_ || perm_.empty()) {
      perm_.resize(n);
      std::iota(perm_.begin(), perm_.end(), std::size_t{0});
      Rng rng(derive_seed(cfg_.seed, 0x6f72646572, pass));  // "order"
      for (std::size_t i = n; i > 1; --i) std::swap(perm_[i - 1], perm_[rng.below(i)]);
      perm_pass_ = pass;
    }
    return perm_[g % n];
  }

  LmimBatch<T> make_batch(long step) const {
    const int B = cfg_.batch;
    const auto& ec = cfg_.model.encoder;
    std::vector<PatchGrid> masked_grids, guide_grids;
    LmimBatch<T> b;
    b.batch = B;
    for (int i = 0; i < B; ++i) {
      const TextSample& s = samples_[sample_index(step, i)];
      const ViewPair vp = make_view_pair(s, policy_, derive_seed(cfg_.seed, step, i));
      masked_grids.push_back(patchify(vp.masked_branch_input, ec.patch));
      if (cfg_.model.guidance) guide_grids.push_back(patchify(vp.guidance_input, ec.patch));
      b.plans.push_back(plan_mask(cfg_.mask_strategy, ec.rows(), ec.cols(), cfg_.mask_ratio,
                                  derive_seed(cfg_.seed, step, i, 0x6d61736b)));
    }
    b.masked_patches = stack_patches<T>(masked_grids);
    if (cfg_.model.guidance) b.guidance_patches = stack_patches<T>(guide_grids);
    b.targets = gather_masked_targets<T>(provider_.all_targets(b.masked_patches, B), B, b.plans);
    return b;
  }

  /// One optimizer step. Throws TrainingError on a non-finite loss.
  TrainLogRow train_step() {
    const LmimBatch<T> batch = make_batch(step_);
    model_.zero_grad();
    const LmimForward<T> fwd = model_.run(batch, true);
    TrainLogRow row{step_, fwd.loss.recon, fwd.loss.align, fwd.loss.total, lr(step_)};
    if (!std::isfinite(row.total)) {
      nan_snapshot_ = checkpoint();
      throw TrainingError("pretrain: non-finite loss at step " + std::to_string(step_) + " (recon=" +
                          std::to_string(row.recon) + ", align=" + std::to_string(row.align) + ")");
    }
    clip_grad_norm(model_, cfg_.grad_clip);
    opt_.step(model_, row.lr);
    ++step_;
    return row;
  }

  Checkpoint checkpoint() const {
    Checkpoint ck;
    ck.meta = {{"kind", "lmim"},
               {"encoder", cfg_.model.encoder.to_json()},
               {"model", cfg_.model.to_json()},
               {"pretrain", cfg_.to_json()},
               {"step", step_},
               {"epoch", step_ / steps_per_epoch()},
               {"seed", cfg_.seed},
               {"target", to_string(cfg_.target)}};
    auto& self = const_cast<Pretrainer&>(*this);  // visit() hands out mutable params; nothing is written
    capture_parameters(self.model_, ck);
    capture_optimizer(opt_, ck);
    if (provider_.kind == TargetKind::teacher_feature) {
      const_cast<Encoder<T>&>(*provider_.teacher).visit(
          [&](const std::string& name, nn::Param<T>& p) { ck.tensors[name] = Tensor::from(p.value); }, "teacher");
      ck.meta["teacher_hash"] = parameter_hash(*provider_.teacher);
    }
    return ck;
  }

  /// Continues from a checkpoint written by checkpoint().
  void resume(const Checkpoint& ck) {
    if (ck.meta.value("kind", "") != "lmim") throw ValidationError("resume: not an LMIM pre-training checkpoint");
    restore_parameters(model_, ck);
    restore_optimizer(opt_, ck);
    step_ = ck.meta.at("step").get<long>();
  }

  /// Checkpoint captured when a non-finite loss aborted training.
  const std::optional<Checkpoint>& nan_snapshot() const { return nan_snapshot_; }

  /// Trains to the end of the schedule. With `out_dir`, writes log.csv and
  /// epoch_NNN.ckpt after every epoch (and nan_snapshot.ckpt on abort).
  std::vector<TrainLogRow> run(const std::filesystem::path& out_dir = {},
                               const std::function<void(const TrainLogRow&)>& on_step = {}) {
    std::vector<TrainLogRow> log;
    std::ofstream csv;
    if (!out_dir.empty()) {
      std::filesystem::create_directories(out_dir);
      const bool append = step_ > 0 && std::filesystem::exists(out_dir / "log.csv");
      csv.open(out_dir / "log.csv", append ? std::ios::app : std::ios::trunc);
      if (!csv) throw IoError((out_dir / "log.csv").string() + ": cannot open for writing");
      if (!append) csv << "step,recon,align,total,lr\n";
    }
    while (step_ < total_steps()) {
      TrainLogRow row;
      try {
        row = train_step();
      } catch (const TrainingError&) {
        if (!out_dir.empty() && nan_snapshot_) save_checkpoint(*nan_snapshot_, out_dir / "nan_snapshot.ckpt");
        throw;
      }
      log.push_back(row);
      if (csv.is_open()) csv << format_log_row(row) << '\n';
      if (on_step) on_step(row);
      if (!out_dir.empty() && step_ % steps_per_epoch() == 0) {
        char name[32];
        std::snprintf(name, sizeof(name), "epoch_%03ld.ckpt", step_ / steps_per_epoch());
        csv.flush();
        save_checkpoint(checkpoint(), out_dir / name);
      }
    }
    return log;
  }

private:
  const std::vector<TextSample>& samples_;
  PretrainConfig cfg_;
  TargetProvider<T> provider_;
  LmimModel<T> model_;
  AdamW<T> opt_;
  AugmentationPolicy policy_;
  long step_ = 0;
  mutable std::vector<std::size_t> perm_;
  mutable std::size_t perm_pass_ = 0;
  std::optional<Checkpoint> nan_snapshot_;
};

/// Config of the plain single-branch MAE used as the desk-scale teacher.
inline PretrainConfig teacher_config(const PretrainConfig& student) {
  PretrainConfig t = student;
  t.model.guidance = false;
  t.model.alignment = false;
  t.model.decoder.order = BlockOrder::sa_ca_ffn;
  t.target = TargetKind::pixel;
  t.normalize_pixel_targets = true;
  t.mask_strategy = MaskStrategy::random;
  t.mask_ratio = 0.8;
  t.epochs = 10;
  t.warmup_epochs = 1;
  t.steps_per_epoch = std::max(1, student.teacher_steps / 10);
  t.seed = derive_seed(student.seed, 0x7465616368);  // "teach"
  return t;
}

/// Frozen teacher encoder: loaded from cfg.teacher_checkpoint, or trained
/// briefly as a plain MAE on the same corpus.
template <class T = float>
std::shared_ptr<const Encoder<T>> make_teacher(const std::vector<TextSample>& samples, const PretrainConfig& cfg,
                                               const std::function<void(const TrainLogRow&)>& on_step = {}) {
  if (!cfg.teacher_checkpoint.empty()) return load_encoder<T>(load_checkpoint(cfg.teacher_checkpoint));
  Pretrainer<T> trainer(samples, teacher_config(cfg));
  trainer.run({}, on_step);
  return std::make_shared<const Encoder<T>>(trainer.model().encoder());
}

// ---------------------------------------------------------------------------
// Fine-tuning

struct FinetuneConfig {
  EncoderConfig encoder;
  RecognizerConfig recognizer;
  double lr = 2e-4;
  int batch = 32;
  int epochs = 10;
  std::string init = "scratch";  // or a pre-training checkpoint path
  AugLevel augmentation = AugLevel::medium;
  double grad_clip = 1.0;
  AdamWConfig adamw;
  std::uint64_t seed = 0;

  bool pretrained() const { return init != "scratch"; }

  void validate() const {
    encoder.validate();
    recognizer.validate();
    require(lr > 0, "finetune.lr must be positive");
    require(batch >= 1, "finetune.batch must be >= 1");
    require(epochs >= 1, "finetune.epochs must be >= 1");
    require(grad_clip > 0, "finetune.grad_clip must be positive");
    if (pretrained() && !std::filesystem::exists(init)) {
      throw ValidationError("finetune.init '" + init + "' does not exist");
    }
  }

  nlohmann::json to_json() const {
    return {{"encoder", encoder.to_json()}, {"recognizer", recognizer.to_json()},
            {"lr", lr},                     {"batch", batch},
            {"epochs", epochs},             {"init", init},
            {"augmentation", to_string(augmentation)},
            {"grad_clip", grad_clip},
            {"adamw", {{"beta1", adamw.beta1}, {"beta2", adamw.beta2}, {"eps", adamw.eps}, {"weight_decay", adamw.weight_decay}}},
            {"seed", seed}};
  }
};

struct FinetuneLogRow {
  int epoch = 0;
  double loss = 0.0;
  double token_acc = 0.0;
  double word_acc = 0.0;
  double lr = 0.0;
};

template <class T = float>
class Finetuner {
public:
  Finetuner(const std::vector<TextSample>& samples, FinetuneConfig cfg) : samples_(samples), cfg_(std::move(cfg)) {
    require(!samples_.empty(), "finetune: corpus is empty");
    tune_allocator();
    std::optional<Checkpoint> init;
    if (cfg_.pretrained()) {
      if (!std::filesystem::exists(cfg_.init)) throw ValidationError("finetune.init '" + cfg_.init + "' does not exist");
      init = load_checkpoint(cfg_.init);
      cfg_.encoder = checkpoint_encoder_config(*init);
    }
    cfg_.validate();
    model_ = Recognizer<T>(cfg_.encoder, cfg_.recognizer, derive_seed(cfg_.seed, 0x726563));  // "rec"
    for (std::size_t i = 0; i < samples_.size(); ++i) {
      try {
        model_.validate_transcript(samples_[i].transcript);
      } catch (const Error& e) {
        throw ValidationError("finetune corpus entry " + std::to_string(i) + ": " + e.what());
      }
    }
    if (init) restore_parameters(model_, *init, "encoder.");
    opt_ = AdamW<T>(cfg_.adamw);
    policy_ = AugmentationPolicy::make(cfg_.augmentation, cfg_.seed);
  }

  const FinetuneConfig& config() const { return cfg_; }
  Recognizer<T>& model() { return model_; }
  int steps_per_epoch() const { return static_cast<int>((samples_.size() + cfg_.batch - 1) / cfg_.batch); }
  long total_steps() const { return static_cast<long>(steps_per_epoch()) * cfg_.epochs; }

  /// One pass over the corpus in a per-epoch shuffled order with fresh augmentations.
  FinetuneLogRow train_epoch() {
    const std::size_t n = samples_.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle(derive_seed(cfg_.seed, 0x6f72646572, epoch_));  // "order"
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[shuffle.below(i)]);

    FinetuneLogRow row;
    row.epoch = epoch_ + 1;
    long tokens = 0, correct = 0, words = 0;
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < n; start += cfg_.batch) {
      const std::size_t end = std::min(n, start + cfg_.batch);
      std::vector<Image> views;
      std::vector<std::string> texts;
      for (std::size_t i = start; i < end; ++i) {
        Rng rng(derive_seed(cfg_.seed, epoch_, order[i], 0x6175672d));  // "aug-"
        views.push_back(augment(samples_[order[i]].image, policy_, rng));
        texts.push_back(samples_[order[i]].transcript);
      }
      std::vector<const Image*> ptrs;
      for (const auto& v : views) ptrs.push_back(&v);
      const double lr = lr_at(step_, cfg_.lr, 0, total_steps());
      model_.zero_grad();
      const RecognizerStats st = model_.run(stack_images<T>(ptrs, cfg_.encoder.patch), texts, true);
      if (!std::isfinite(st.loss)) {
        throw TrainingError("finetune: non-finite loss at step " + std::to_string(step_));
      }
      clip_grad_norm(model_, cfg_.grad_clip);
      opt_.step(model_, lr);
      ++step_;
      loss_sum += st.loss * st.tokens;
      tokens += st.tokens;
      correct += st.correct_tokens;
      words += st.correct_words;
      row.lr = lr;
    }
    row.loss = loss_sum / static_cast<double>(tokens);
    row.token_acc = static_cast<double>(correct) / static_cast<double>(tokens);
    row.word_acc = static_cast<double>(words) / static_cast<double>(n);
    ++epoch_;
    return row;
  }

  Checkpoint checkpoint() const {
    Checkpoint ck;
    ck.meta = {{"kind", "recognizer"},
               {"encoder", cfg_.encoder.to_json()},
               {"recognizer", cfg_.recognizer.to_json()},
               {"finetune", cfg_.to_json()},
               {"step", step_},
               {"epoch", epoch_},
               {"seed", cfg_.seed}};
    capture_parameters(const_cast<Recognizer<T>&>(model_), ck);
    return ck;
  }

  /// Trains all epochs; with `out_dir`, writes finetune_log.csv and recognizer.ckpt.
  std::vector<FinetuneLogRow> run(const std::filesystem::path& out_dir = {},
                                  const std::function<void(const FinetuneLogRow&)>& on_epoch = {}) {
    std::vector<FinetuneLogRow> log;
    std::ofstream csv;
    if (!out_dir.empty()) {
      std::filesystem::create_directories(out_dir);
      csv.open(out_dir / "finetune_log.csv", std::ios::trunc);
      if (!csv) throw IoError((out_dir / "finetune_log.csv").string() + ": cannot open for writing");
      csv << "epoch,loss,token_acc,word_acc,lr\n";
    }
    while (epoch_ < cfg_.epochs) {
      const FinetuneLogRow r = train_epoch();
      log.push_back(r);
      if (csv.is_open()) {
        char buf[160];
        std::snprintf(buf, sizeof(buf), "%d,%.9g,%.9g,%.9g,%.9g\n", r.epoch, r.loss, r.token_acc, r.word_acc, r.lr);
        csv << buf << std::flush;
      }
      if (on_epoch) on_epoch(r);
    }
    if (!out_dir.empty()) save_checkpoint(checkpoint(), out_dir / "recognizer.ckpt");
    return log;
  }

private:
  const std::vector<TextSample>& samples_;
  FinetuneConfig cfg_;
  Recognizer<T> model_;
  AdamW<T> opt_;
  AugmentationPolicy policy_;
  int epoch_ = 0;
  long step_ = 0;
};

template <class T = float>
Recognizer<T> load_recognizer(const Checkpoint& ck) {
  if (ck.meta.value("kind", "") != "recognizer") throw ValidationError("checkpoint is not a recognizer checkpoint");
  Recognizer<T> r(checkpoint_encoder_config(ck), RecognizerConfig::from_json(ck.meta.at("recognizer")), 0);
  restore_parameters(r, ck);
  return r;
}

}  // namespace lmim

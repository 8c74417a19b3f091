#pragma once
// Reconstruction loss over masked tokens, [cls] alignment loss, their sum,
// and the reconstruction-target providers (pixels, frozen random features,
// frozen teacher features).
//
// Both squared norms are averaged over the feature dimension; batch losses are
// the mean of per-sample losses.

#include "lmim/common.hpp"
#include "lmim/encoder.hpp"
#include "lmim/patching.hpp"

#include <memory>
#include <string>
#include <vector>

namespace lmim {

struct LossReport {
  double recon = 0.0;
  double align = 0.0;
  double total = 0.0;
};

inline LossReport combined_loss(double recon, double align) {
  if (!(recon >= 0.0) || !(align >= 0.0)) {
    throw ValidationError("combined_loss: losses must be non-negative (recon=" + std::to_string(recon) +
                          ", align=" + std::to_string(align) + ")");
  }
  return {recon, align, recon + align};
}

/// Target vectors for a set of patch indices; values.row(i) belongs to indices[i].
template <class T>
struct TargetSet {
  std::vector<int> indices;  // sorted
  Mat<T> values;

  int dim() const { return static_cast<int>(values.cols()); }

  int find(int k) const {
    const auto it = std::lower_bound(indices.begin(), indices.end(), k);
    return (it != indices.end() && *it == k) ? static_cast<int>(it - indices.begin()) : -1;
  }
};

/// Mean over masked k of mean_j (p_kj - t_kj)^2 for one decoded sequence
/// (length 1+N, slot 0 is [cls]). `grad`, when given, receives dL/dp.
template <class T>
double recon_loss(const TokenBatch<T>& decoded, const TargetSet<T>& targets, const MaskPlan& plan,
                  Mat<T>* grad = nullptr, int sample = 0) {
  if (decoded.length != plan.num_patches + 1) throw DimensionError("recon_loss: decoded length must be 1+N");
  if (decoded.dim() != targets.dim()) throw DimensionError("recon_loss: prediction/target dimension mismatch");
  if (plan.masked.empty()) throw ValidationError("recon_loss: mask plan has no masked patches");
  const double norm = 1.0 / (static_cast<double>(plan.masked.size()) * decoded.dim());
  double loss = 0.0;
  for (int k : plan.masked) {
    const int t = targets.find(k);
    if (t < 0) throw ValidationError("recon_loss: missing target for masked index " + std::to_string(k));
    const auto diff = (decoded.row(sample, 1 + k) - targets.values.row(t)).template cast<double>();
    loss += diff.squaredNorm();
    if (grad) grad->row(static_cast<Eigen::Index>(sample) * decoded.length + 1 + k) +=
        (decoded.row(sample, 1 + k) - targets.values.row(t)) * static_cast<T>(2.0 * norm);
  }
  return loss * norm;
}

/// Mean squared difference of two [cls] features; symmetric in its arguments.
template <class T>
double align_loss(const RowVec<T>& f, const RowVec<T>& f_hat) {
  if (f.size() != f_hat.size() || f.size() == 0) throw DimensionError("align_loss: dimension mismatch");
  return (f - f_hat).template cast<double>().squaredNorm() / static_cast<double>(f.size());
}

/// d align_loss / d f. The gradient with respect to f_hat is its negation.
template <class T>
RowVec<T> align_loss_grad(const RowVec<T>& f, const RowVec<T>& f_hat) {
  if (f.size() != f_hat.size() || f.size() == 0) throw DimensionError("align_loss: dimension mismatch");
  return (f - f_hat) * static_cast<T>(2.0 / static_cast<double>(f.size()));
}

// ---------------------------------------------------------------------------

enum class TargetKind { pixel, random_feature, teacher_feature };

inline std::string to_string(TargetKind k) {
  switch (k) {
    case TargetKind::pixel: return "pixel";
    case TargetKind::random_feature: return "random_feature";
    case TargetKind::teacher_feature: return "teacher_feature";
  }
  return "?";
}

inline TargetKind parse_target_kind(const std::string& s) {
  if (s == "pixel") return TargetKind::pixel;
  if (s == "random_feature") return TargetKind::random_feature;
  if (s == "teacher_feature") return TargetKind::teacher_feature;
  throw ValidationError("unknown target kind '" + s + "' (expected pixel, random_feature or teacher_feature)");
}

template <class T>
struct TargetProvider {
  TargetKind kind = TargetKind::pixel;
  std::shared_ptr<const Encoder<T>> teacher;  // teacher_feature only
  int patch_dim = kPatchSize * kPatchSize * kImageChannels;
  int target_dim = kPatchSize * kPatchSize * kImageChannels;
  bool normalize_per_token = true;
  Mat<T> projection;  // random_feature only: patch_dim x target_dim, drawn once

  static TargetProvider pixel(int patch_dim, bool normalize = true) {
    TargetProvider p;
    p.kind = TargetKind::pixel;
    p.patch_dim = patch_dim;
    p.target_dim = patch_dim;
    p.normalize_per_token = normalize;
    return p;
  }

  static TargetProvider random_feature(int patch_dim, int target_dim, std::uint64_t seed, bool normalize = false) {
    TargetProvider p;
    p.kind = TargetKind::random_feature;
    p.patch_dim = patch_dim;
    p.target_dim = target_dim;
    p.normalize_per_token = normalize;
    Rng rng(derive_seed(seed, 0x726e6466));  // "rndf"
    p.projection = nn::normal_init<T>(patch_dim, target_dim, 1.0 / std::sqrt(static_cast<double>(patch_dim)), rng);
    return p;
  }

  static TargetProvider teacher_feature(std::shared_ptr<const Encoder<T>> teacher, bool normalize = false) {
    TargetProvider p;
    p.kind = TargetKind::teacher_feature;
    p.patch_dim = teacher ? teacher->config().patch_dim() : 0;
    p.target_dim = teacher ? teacher->config().dim : 0;
    p.teacher = std::move(teacher);
    p.normalize_per_token = normalize;
    return p;
  }

  void validate() const {
    if (kind == TargetKind::teacher_feature && !teacher) {
      throw ValidationError("teacher_feature targets need a teacher encoder");
    }
    if (kind == TargetKind::random_feature && (projection.rows() != patch_dim || projection.cols() != target_dim)) {
      throw ValidationError("random_feature targets need a patch_dim x target_dim projection");
    }
    require(target_dim >= 1, "target_dim must be positive");
  }

  /// Targets for every patch of B stacked images: (B*N) x target_dim.
  Mat<T> all_targets(const Mat<T>& patches, int batch) const {
    validate();
    Mat<T> out;
    switch (kind) {
      case TargetKind::pixel:
        out = patches;
        break;
      case TargetKind::random_feature:
        out.noalias() = patches * projection;
        break;
      case TargetKind::teacher_feature: {
        const TokenBatch<T> f = teacher->forward(patches, batch, nullptr, nullptr);
        const int N = f.length - 1;
        out.resize(static_cast<Eigen::Index>(batch) * N, f.dim());
        for (int b = 0; b < batch; ++b) out.middleRows(static_cast<Eigen::Index>(b) * N, N) = f.tokens.middleRows(static_cast<Eigen::Index>(b) * f.length + 1, N);
        break;
      }
    }
    if (normalize_per_token) {
      const T inv = static_cast<T>(1) / static_cast<T>(out.cols());
      for (Eigen::Index r = 0; r < out.rows(); ++r) {
        auto row = out.row(r);
        const T mean = row.sum() * inv;
        row.array() -= mean;
        const T var = row.squaredNorm() * inv;
        row /= std::sqrt(var + static_cast<T>(1e-6));
      }
    }
    return out;
  }
};

/// Targets at the masked indices of one image.
template <class T>
TargetSet<T> make_targets(const TargetProvider<T>& provider, const Image& original, const MaskPlan& plan) {
  const PatchGrid grid = patchify(original);
  if (grid.num_patches() != plan.num_patches) throw DimensionError("make_targets: plan/image patch count mismatch");
  const Mat<T> all = provider.all_targets(stack_patches<T>({grid}), 1);
  TargetSet<T> out;
  out.indices = plan.masked;
  out.values.resize(static_cast<Eigen::Index>(plan.masked.size()), all.cols());
  for (std::size_t i = 0; i < plan.masked.size(); ++i) out.values.row(static_cast<Eigen::Index>(i)) = all.row(plan.masked[i]);
  return out;
}

/// Batched form: rows grouped by sample, masked indices ascending within a sample.
template <class T>
Mat<T> gather_masked_targets(const Mat<T>& all, int batch, const std::vector<MaskPlan>& plans) {
  const int N = static_cast<int>(all.rows()) / batch;
  std::size_t total = 0;
  for (const auto& p : plans) total += p.masked.size();
  Mat<T> out(static_cast<Eigen::Index>(total), all.cols());
  Eigen::Index r = 0;
  for (int b = 0; b < batch; ++b)
    for (int k : plans[b].masked) out.row(r++) = all.row(static_cast<Eigen::Index>(b) * N + k);
  return out;
}

}  // namespace lmim

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "skyrank/common.hpp"
#include "skyrank/embedding.hpp"

namespace skyrank {

// soft:    L_j = sim_j if sim_j > T else 0          (default)
// hard:    L_j = 1     if sim_j > T else 0          (hard-label ablation)
// shifted: L_j = max(0, sim_j - T)
// top1:    label 1 on the retriever's top-ranked candidate, 0 elsewhere
//          (the "no threshold" ablation; labels come from retrieval rank,
//          not ground-truth similarity, so the GT is not forced positive)
enum class LabelMode { Soft, Hard, Shifted, Top1 };

inline const char* label_mode_name(LabelMode m) {
  switch (m) {
    case LabelMode::Soft: return "soft";
    case LabelMode::Hard: return "hard";
    case LabelMode::Shifted: return "shifted";
    case LabelMode::Top1: return "top1";
  }
  return "?";
}

inline LabelMode label_mode_from_name(const std::string& name) {
  if (name == "soft") return LabelMode::Soft;
  if (name == "hard") return LabelMode::Hard;
  if (name == "shifted") return LabelMode::Shifted;
  if (name == "top1") return LabelMode::Top1;
  throw ValidationError("unknown label_mode: \"" + name + "\"");
}

// Per-candidate training targets aligned to a candidate order. The GT entry
// is forced to exactly 1.0 in every similarity-derived mode; thresholding
// applies to the other candidates only.
struct SoftLabelVector {
  std::vector<double> labels;
  std::size_t gt_index = 0;
};

// Pure thresholding rule on precomputed candidate-to-GT similarities.
inline std::vector<double> labels_from_sims(const std::vector<double>& sims,
                                            std::size_t gt_index, double T,
                                            LabelMode mode) {
  if (!(T >= 0.0 && T <= 1.0)) {
    throw ValidationError("similarity threshold T must be in [0, 1]");
  }
  if (gt_index >= sims.size()) {
    throw ValidationError("gt_index out of range");
  }
  if (mode == LabelMode::Top1) {
    throw ValidationError("top1 labels are rank-based, not similarity-based");
  }
  std::vector<double> labels(sims.size());
  for (std::size_t j = 0; j < sims.size(); ++j) {
    if (j == gt_index) {
      labels[j] = 1.0;
      continue;
    }
    const double s = sims[j];
    if (!std::isfinite(s)) throw NumericError("non-finite similarity");
    switch (mode) {
      case LabelMode::Soft: labels[j] = s > T ? s : 0.0; break;
      case LabelMode::Hard: labels[j] = s > T ? 1.0 : 0.0; break;
      case LabelMode::Shifted: labels[j] = std::max(0.0, s - T); break;
      case LabelMode::Top1: break;  // unreachable
    }
  }
  return labels;
}

// Eq.-style soft labels: each candidate's cosine similarity to the ground
// truth, thresholded. The GT must be present among the candidates.
inline SoftLabelVector compute_soft_labels(
    const std::vector<const Embedding*>& candidates, const Embedding& gt,
    double T, LabelMode mode) {
  if (candidates.empty()) throw ValidationError("compute_soft_labels: no candidates");
  SoftLabelVector out;
  bool found_gt = false;
  std::vector<double> sims(candidates.size());
  for (std::size_t j = 0; j < candidates.size(); ++j) {
    sims[j] = cosine_similarity(candidates[j]->vec, gt.vec);
    if (candidates[j]->id == gt.id && !found_gt) {
      found_gt = true;
      out.gt_index = j;
    }
  }
  if (!found_gt) {
    throw DataError("compute_soft_labels: ground truth \"" + gt.id +
                    "\" not among candidates");
  }
  out.labels = labels_from_sims(sims, out.gt_index, T, mode);
  return out;
}

inline double sigmoid(double x) {
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

// Mean binary cross-entropy in the numerically stable logits form:
// max(s,0) - s*l + log(1 + exp(-|s|)); sigma is never materialized.
inline double bce_with_logits(const std::vector<double>& scores,
                              const std::vector<double>& labels) {
  if (scores.empty()) throw ValidationError("bce_with_logits: empty input");
  if (scores.size() != labels.size()) {
    throw ValidationError("bce_with_logits: scores/labels length mismatch");
  }
  double total = 0.0;
  for (std::size_t j = 0; j < scores.size(); ++j) {
    const double s = scores[j];
    const double l = labels[j];
    if (!std::isfinite(s)) throw NumericError("bce_with_logits: non-finite score");
    if (!(l >= 0.0 && l <= 1.0)) {
      throw ValidationError("bce_with_logits: label outside [0, 1]");
    }
    total += std::max(s, 0.0) - s * l + std::log1p(std::exp(-std::abs(s)));
  }
  return total / static_cast<double>(scores.size());
}

}  // namespace skyrank

#pragma once

#include <span>
#include <string>
#include <vector>

#include "confroute/confidence.hpp"
#include "confroute/core.hpp"

namespace confroute::rejection {

enum class RejectDecision { abstain, answer };

struct RocPoint {
  double fpr{0.0};
  double tpr{0.0};
};

struct RocCurve {
  std::vector<RocPoint> points;  // nondecreasing, includes (0,0) and (1,1)
  double auc{0.0};               // trapezoidal area of points
};

/// Corrupts a seeded ceil(fraction*N)-subset of choice records: the correct
/// choice is deleted, the remaining choices are re-lettered consecutively
/// from 'A', and the ground truth becomes the reject label. Record order,
/// count, and ids are preserved.
Dataset build_rejection_set(const Dataset& dataset, double fraction, RngSeed seed);

/// Abstain exactly when confidence < threshold.
RejectDecision reject_decision(const confidence::ConfidenceScore& score,
                               double threshold);

/// ROC of the rejection score s = 1 - confidence against reject-truth
/// labels. Equal scores collapse into a single step; AUC is the trapezoidal
/// area.
RocCurve roc_curve(std::span<const confidence::ConfidenceScore> scores,
                   const std::vector<bool>& is_reject_truth);

/// CSV rows "fpr,tpr" with a trailing "# auc = ..." comment line.
std::string roc_to_csv(const RocCurve& curve);
void save_roc_csv(const RocCurve& curve, const std::string& path);

}  // namespace confroute::rejection

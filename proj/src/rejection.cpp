#include "confroute/rejection.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>

namespace confroute::rejection {

Dataset build_rejection_set(const Dataset& dataset, double fraction, RngSeed seed) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) {
    throw std::invalid_argument("build_rejection_set: fraction must lie in [0,1]");
  }
  for (const auto& record : dataset.records) {
    if (!record.choices.has_value()) {
      throw SchemaError(0, "build_rejection_set: record '" + record.id +
                               "' is not a choice question");
    }
    if (record.choices->size() < 2) {
      throw SchemaError(0, "build_rejection_set: record '" + record.id +
                               "' has fewer than two choices");
    }
    if (record.ground_truth.kind != AnswerValue::Kind::choice_letter) {
      throw SchemaError(0, "build_rejection_set: record '" + record.id +
                               "' lacks a choice-letter ground truth");
    }
  }

  const std::size_t total = dataset.records.size();
  const auto corrupt_count = static_cast<std::size_t>(
      std::ceil(fraction * static_cast<double>(total)));

  std::vector<std::size_t> indices(total);
  for (std::size_t i = 0; i < total; ++i) indices[i] = i;
  Rng rng(seed);
  rng.shuffle(indices);
  std::vector<bool> corrupt(total, false);
  for (std::size_t i = 0; i < corrupt_count; ++i) {
    corrupt[indices[i]] = true;
  }

  Dataset result;
  result.split_tag = dataset.split_tag;
  result.records.reserve(total);
  for (std::size_t i = 0; i < total; ++i) {
    QueryRecord record = dataset.records[i];
    if (corrupt[i]) {
      std::vector<Choice> kept;
      kept.reserve(record.choices->size() - 1);
      for (const auto& choice : *record.choices) {
        if (choice.letter == record.ground_truth.text) continue;
        kept.push_back(choice);
      }
      for (std::size_t k = 0; k < kept.size(); ++k) {
        kept[k].letter = std::string(1, static_cast<char>('A' + k));
      }
      record.choices = std::move(kept);
      record.ground_truth = AnswerValue::reject();
    }
    result.records.push_back(std::move(record));
  }
  return result;
}

RejectDecision reject_decision(const confidence::ConfidenceScore& score,
                               double threshold) {
  return score.value < threshold ? RejectDecision::abstain : RejectDecision::answer;
}

RocCurve roc_curve(std::span<const confidence::ConfidenceScore> scores,
                   const std::vector<bool>& is_reject_truth) {
  if (scores.size() != is_reject_truth.size()) {
    throw std::invalid_argument("roc_curve: scores/labels length mismatch");
  }
  std::size_t positives = 0;
  for (bool label : is_reject_truth) positives += label ? 1 : 0;
  const std::size_t negatives = scores.size() - positives;
  if (positives == 0 || negatives == 0) {
    throw std::invalid_argument("roc_curve: need at least one positive and one negative");
  }

  // Group equal rejection scores into one step, swept from high to low.
  std::map<double, std::pair<std::size_t, std::size_t>, std::greater<>> steps;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const double rejection_score = 1.0 - scores[i].value;
    auto& [pos, neg] = steps[rejection_score];
    (is_reject_truth[i] ? pos : neg) += 1;
  }

  RocCurve curve;
  curve.points.push_back({0.0, 0.0});
  std::size_t true_pos = 0;
  std::size_t false_pos = 0;
  for (const auto& [score, counts] : steps) {
    true_pos += counts.first;
    false_pos += counts.second;
    curve.points.push_back({static_cast<double>(false_pos) / negatives,
                            static_cast<double>(true_pos) / positives});
  }
  if (curve.points.back().fpr != 1.0 || curve.points.back().tpr != 1.0) {
    curve.points.push_back({1.0, 1.0});
  }

  double area = 0.0;
  for (std::size_t i = 1; i < curve.points.size(); ++i) {
    const auto& prev = curve.points[i - 1];
    const auto& next = curve.points[i];
    area += (next.fpr - prev.fpr) * (prev.tpr + next.tpr) / 2.0;
  }
  curve.auc = area;
  return curve;
}

std::string roc_to_csv(const RocCurve& curve) {
  std::string csv = "fpr,tpr\n";
  char row[80];
  for (const auto& point : curve.points) {
    std::snprintf(row, sizeof(row), "%.17g,%.17g\n", point.fpr, point.tpr);
    csv += row;
  }
  std::snprintf(row, sizeof(row), "# auc = %.17g\n", curve.auc);
  csv += row;
  return csv;
}

void save_roc_csv(const RocCurve& curve, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw IoError("cannot write " + path);
  }
  out << roc_to_csv(curve);
}

}  // namespace confroute::rejection

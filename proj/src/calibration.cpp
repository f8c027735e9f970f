#include "confroute/calibration.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include <json.hpp>

namespace confroute::calibration {

namespace {

void check_inputs(std::span<const double> scores, const std::vector<bool>& correct) {
  if (scores.size() != correct.size()) {
    throw std::invalid_argument("calibration: scores/correct length mismatch");
  }
  if (scores.empty()) {
    throw std::invalid_argument("calibration: empty input");
  }
  for (double s : scores) {
    if (!(s >= 0.0 && s <= 1.0)) {
      throw std::invalid_argument("calibration: score outside [0,1]");
    }
  }
}

}  // namespace

double ece(std::span<const double> scores, const std::vector<bool>& correct, int n_bins) {
  check_inputs(scores, correct);
  if (n_bins < 1) {
    throw std::invalid_argument("ece: n_bins must be >= 1");
  }
  std::vector<std::size_t> count(n_bins, 0);
  std::vector<std::size_t> hits(n_bins, 0);
  std::vector<double> conf_sum(n_bins, 0.0);
  for (std::size_t i = 0; i < scores.size(); ++i) {
    auto bin = static_cast<int>(scores[i] * n_bins);
    bin = std::min(bin, n_bins - 1);  // score 1.0 falls in the closed last bin
    ++count[bin];
    hits[bin] += correct[i] ? 1 : 0;
    conf_sum[bin] += scores[i];
  }
  const auto total = static_cast<double>(scores.size());
  double result = 0.0;
  for (int b = 0; b < n_bins; ++b) {
    if (count[b] == 0) continue;
    const auto n = static_cast<double>(count[b]);
    const double acc = static_cast<double>(hits[b]) / n;
    const double conf = conf_sum[b] / n;
    result += (n / total) * std::abs(acc - conf);
  }
  return result;
}

double brier(std::span<const double> scores, const std::vector<bool>& correct) {
  check_inputs(scores, correct);
  double sum = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const double gap = scores[i] - (correct[i] ? 1.0 : 0.0);
    sum += gap * gap;
  }
  return sum / static_cast<double>(scores.size());
}

double ce(std::span<const double> scores, const std::vector<bool>& correct, double eps) {
  check_inputs(scores, correct);
  if (!(eps > 0.0 && eps < 1e-3)) {
    throw std::invalid_argument("ce: eps must lie in (0, 1e-3)");
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const double s = std::clamp(scores[i], eps, 1.0 - eps);
    sum += correct[i] ? -std::log(s) : -std::log(1.0 - s);
  }
  return sum / static_cast<double>(scores.size());
}

CalibrationReport report(std::span<const double> scores, const std::vector<bool>& correct,
                         int n_bins, double eps) {
  CalibrationReport out;
  out.ece = ece(scores, correct, n_bins);
  out.brier = brier(scores, correct);
  out.ce = ce(scores, correct, eps);
  out.n_bins = n_bins;
  out.n_samples = scores.size();
  return out;
}

std::string to_json(const CalibrationReport& report) {
  nlohmann::ordered_json obj;
  obj["ece"] = report.ece;
  obj["brier"] = report.brier;
  obj["ce"] = report.ce;
  obj["n_bins"] = report.n_bins;
  obj["n_samples"] = report.n_samples;
  return obj.dump();
}

}  // namespace confroute::calibration

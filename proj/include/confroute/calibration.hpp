#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace confroute::calibration {

struct CalibrationReport {
  double ece{0.0};
  double brier{0.0};
  double ce{0.0};
  int n_bins{10};
  std::size_t n_samples{0};
};

/// Expected calibration error over equal-width bins [i/n, (i+1)/n), last bin
/// closed. Empty bins contribute nothing.
double ece(std::span<const double> scores, const std::vector<bool>& correct,
           int n_bins = 10);

/// Mean squared gap between confidence and the 0/1 correctness indicator.
double brier(std::span<const double> scores, const std::vector<bool>& correct);

/// Mean negative log-likelihood of the correctness indicator, with scores
/// clamped to [eps, 1 - eps] so one certain-but-wrong sample stays finite.
double ce(std::span<const double> scores, const std::vector<bool>& correct,
          double eps = 1e-12);

CalibrationReport report(std::span<const double> scores,
                         const std::vector<bool>& correct, int n_bins = 10,
                         double eps = 1e-12);

std::string to_json(const CalibrationReport& report);

}  // namespace confroute::calibration

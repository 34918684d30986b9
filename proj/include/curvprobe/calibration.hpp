#pragma once

#include <span>
#include <vector>

#include "curvprobe/common.hpp"

namespace curvprobe {

struct PredictionOutcome {
    double confidence = 0.0;  // max softmax probability, in (0, 1]
    bool correct = false;
};

struct CalibrationBin {
    double lo = 0.0, hi = 0.0;  // membership: lo < confidence <= hi
    size_t count = 0;
    double fraction = 0.0;         // P(i)
    double accuracy = 0.0;         // o_i (0 for empty bins)
    double mean_confidence = 0.0;  // e_i (0 for empty bins)
};

struct CalibrationReport {
    int k = 0;
    std::vector<CalibrationBin> bins;
    double ece = 0.0;   // sum_i P(i) |o_i - e_i|
    double sece = 0.0;  // sum_i P(i) (o_i - e_i); negative = overconfident
};

// Equal-width bins over (0,1]. Throws on an empty prediction list or any
// confidence outside (0,1].
CalibrationReport calibrate(std::span<const PredictionOutcome> preds, int k);

struct ReliabilityRow {
    double bin_center = 0.0;
    double accuracy = 0.0;
    double mean_confidence = 0.0;
    size_t count = 0;
};

std::vector<ReliabilityRow> reliability_rows(const CalibrationReport& report);

}  // namespace curvprobe

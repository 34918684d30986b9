#include "curvprobe/calibration.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace curvprobe {

namespace {

// Equal-width bin index for c in (0,1]. The arithmetic guess is corrected
// against the edge comparisons themselves, so membership is decided by
// lo < c <= hi exactly as written.
int bin_of(double c, int k) {
    int i = int(std::ceil(c * k)) - 1;
    if (i < 0) i = 0;
    if (i > k - 1) i = k - 1;
    while (i > 0 && c <= double(i) / k) --i;
    while (i < k - 1 && c > double(i + 1) / k) ++i;
    return i;
}

}  // namespace

CalibrationReport calibrate(std::span<const PredictionOutcome> preds, int k) {
    if (preds.empty()) throw ValueError("calibrate: empty prediction list");
    if (k < 1) throw ValueError("calibrate: bin count must be >= 1");
    CalibrationReport r;
    r.k = k;
    r.bins.resize(size_t(k));
    for (int i = 0; i < k; ++i) {
        r.bins[size_t(i)].lo = double(i) / k;
        r.bins[size_t(i)].hi = double(i + 1) / k;
    }
    std::vector<std::vector<double>> conf(size_t(k), std::vector<double>{});
    std::vector<size_t> correct(size_t(k), 0);
    for (const auto& p : preds) {
        if (!(p.confidence > 0.0) || p.confidence > 1.0)
            throw ValueError("calibrate: confidence " + std::to_string(p.confidence) +
                             " outside (0,1]");
        const int i = bin_of(p.confidence, k);
        r.bins[size_t(i)].count++;
        conf[size_t(i)].push_back(p.confidence);
        if (p.correct) correct[size_t(i)]++;
    }
    const double n = double(preds.size());
    for (int i = 0; i < k; ++i) {
        auto& b = r.bins[size_t(i)];
        if (b.count > 0) {
            // Sorted summation makes the report invariant under input order.
            std::sort(conf[size_t(i)].begin(), conf[size_t(i)].end());
            double s = 0.0;
            for (double c : conf[size_t(i)]) s += c;
            b.fraction = double(b.count) / n;
            b.accuracy = double(correct[size_t(i)]) / double(b.count);
            b.mean_confidence = s / double(b.count);
        }
        r.ece += b.fraction * std::abs(b.accuracy - b.mean_confidence);
        r.sece += b.fraction * (b.accuracy - b.mean_confidence);
    }
    return r;
}

std::vector<ReliabilityRow> reliability_rows(const CalibrationReport& report) {
    std::vector<ReliabilityRow> rows;
    rows.reserve(report.bins.size());
    for (const auto& b : report.bins)
        rows.push_back({0.5 * (b.lo + b.hi), b.accuracy, b.mean_confidence, b.count});
    return rows;
}

}  // namespace curvprobe

#pragma once

#include <functional>
#include <limits>
#include <span>
#include <vector>

#include "curvprobe/data_io.hpp"
#include "curvprobe/zoo.hpp"

namespace curvprobe {

struct TravelParams {
    double eps_init = 1e-3;    // first probe length
    double eps_decay = 0.9;    // shrink factor on a misclassified probe, in (0,1)
    double eps_tol = 0.01;     // relative bracket-width stop: (hi-lo)/hi < eps_tol
    double eps_max = 1.0;      // growth cap while no crossing has been seen
    int max_iters = 200;       // probe budget (model evaluations)
    bool literal_alg = false;  // run the published loop verbatim, for comparison

    void validate() const;
};

struct TravelResult {
    double eps_star = std::numeric_limits<double>::infinity();
    std::vector<float> x_prime;  // clip01(x + eps_star * d); empty if never crossed
    bool crossed = false;
    int iterations = 0;
    double bracket_lo = 0.0;  // largest probed length still classified correctly
    double bracket_hi = std::numeric_limits<double>::infinity();  // smallest misclassified
};

// d = sign of the input gradient of the cross-entropy loss at (x, y).
// Components with exactly zero gradient map to +1, keeping ||d||_2 = sqrt(D).
// Throws on an all-zero or non-finite gradient.
std::vector<float> fgsm_direction(const Classifier& model, std::span<const float> x, int y);

// Label assigned to an already-clipped image.
using PredictImageFn = std::function<int(std::span<const float>)>;

// Smallest travel length along d that flips the prediction, found by the
// grow/shrink probe schedule (double while correct, decay while not) with a
// relative bracket-width stop. Requires C(x) = y and ||d||_2 = sqrt(D).
TravelResult travel_to_boundary(const PredictImageFn& classify, std::span<const float> x,
                                int y, std::span<const float> d, const TravelParams& params);
TravelResult travel_to_boundary(const Classifier& model, std::span<const float> x, int y,
                                std::span<const float> d, const TravelParams& params);

struct ConfidenceEpsRow {
    int64_t sample_id = 0;
    double confidence = 0.0;
    double eps_star = 0.0;
    bool crossed = false;
};

struct ConfidenceBinMean {
    double bin_center = 0.0;
    double mean_eps = 0.0;
    size_t count = 0;
};

struct EpsVsConfidence {
    std::vector<ConfidenceEpsRow> rows;       // one per analyzed (correct) sample
    std::vector<ConfidenceBinMean> bin_means; // over crossed rows, 10 confidence bins
    size_t skipped_incorrect = 0;
};

// FGSM-direction travel for every correctly classified sample in ds.
EpsVsConfidence epsilon_vs_confidence(const Classifier& model, const Dataset& ds,
                                      const TravelParams& params, int jobs = 1);

// Shared probe helper: predicted label of clip01(x + eps*d).
int predict_traveled(const Classifier& model, std::span<const float> x,
                     std::span<const float> d, double eps);

}  // namespace curvprobe

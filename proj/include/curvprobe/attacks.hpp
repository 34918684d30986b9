#pragma once

#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "curvprobe/boundary.hpp"
#include "curvprobe/trajectory.hpp"

namespace curvprobe {

enum class AttackKind { fgsm, ifgsm, rand_jump };

std::string attack_name(AttackKind k);
AttackKind attack_from_name(const std::string& s);

struct AttackConfig {
    AttackKind kind = AttackKind::ifgsm;
    double eps = 0.002;   // l-inf budget (the paper's eps_IFGSM); step = eps / iters
    int iters = 10;       // T; kind fgsm forces T = 1
    double eps_r = 0.05;  // jump magnitude for rand_jump
    uint64_t seed = 0;
    TravelParams travel;  // boundary search after the jump

    void validate() const;
};

struct AttackResult {
    std::vector<float> x_adv;
    bool success = false;
    double eps_used = 0.0;  // ifgsm: realized l-inf; rand_jump: eps_r + travel length
    double psnr_db = 0.0;   // against the original image, peak 1.0
    int label_before = -1;
    int label_after = -1;
    bool aborted = false;  // non-finite gradient mid-attack; partial result
};

// Input gradient of the cross-entropy loss at (x, y); raw, not signed.
using InputGradFn = std::function<std::vector<float>(std::span<const float>, int)>;

// T iterations of x <- clip01(ball_clip(x + step * sign(grad))); the ball is
// the l-inf radius-eps box around the original image.
AttackResult ifgsm_core(const InputGradFn& grad, const PredictImageFn& classify,
                        std::span<const float> x, int y, const AttackConfig& cfg);
AttackResult ifgsm(const Classifier& model, std::span<const float> x, int y,
                   const AttackConfig& cfg);

// Random jump then FGSM boundary travel from the jumped point; success and
// perturbation are measured against the original x.
AttackResult rand_jump_attack(const Classifier& model, std::span<const float> x, int y,
                              const AttackConfig& cfg);

// 10 log10(1 / MSE) for [0,1] images; identical images report the 99 dB cap.
double psnr_db(std::span<const float> a, std::span<const float> b);

struct RobustnessBin {
    double lo = 0.0, hi = 0.0;  // theta1 range
    size_t count = 0;
    double accuracy = 0.0;  // after attack; 0 for empty bins
};

struct RobustnessReport {
    std::vector<RobustnessBin> bins;
    double overall_accuracy = 0.0;
    size_t attacked = 0;
    size_t skipped = 0;  // misclassified up front or no theta1 available
};

// Accuracy after the configured attack, binned by each sample's theta1
// (taken from trajectory records; bins span [0, pi]).
RobustnessReport robustness_by_curvedness(const Classifier& model, const Dataset& ds,
                                          const AttackConfig& cfg,
                                          std::span<const TrajectoryRecord> records,
                                          int n_bins, int jobs = 1);

}  // namespace curvprobe

#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "curvprobe/boundary.hpp"
#include "curvprobe/data_io.hpp"
#include "curvprobe/zoo.hpp"

namespace curvprobe {

enum class DirectionMode { fgsm, rand, fgsm_perp, rand_jump_fgsm, fgsm_jump_fgsm };

std::string mode_name(DirectionMode m);
DirectionMode mode_from_name(const std::string& s);

struct DirectionSpec {
    DirectionMode mode = DirectionMode::fgsm;
    double eps_r = 0.05;  // jump magnitude for the jump modes
    uint64_t seed = 0;
};

struct MadeDirection {
    std::vector<float> d;      // ||d||_2 = sqrt(D) within relative 1e-4
    std::vector<float> start;  // x, or the jumped start for jump modes
};

// fgsm: Eq.-4 sign direction at x.
// rand: Gaussian direction rescaled to sqrt(D).
// fgsm_perp: random direction orthogonalized against the FGSM direction.
// rand_jump_fgsm: start = x + eps_r * r, direction = FGSM at the start.
// fgsm_jump_fgsm: jump from x along the FGSM direction found at x + eps_r * r,
//   then travel by FGSM from the jumped point.
MadeDirection make_direction(const Classifier& model, std::span<const float> x, int y,
                             const DirectionSpec& spec);

struct TrajectoryRecord {
    int64_t sample_id = -1;
    DirectionMode mode = DirectionMode::fgsm;
    int n_steps = 0;  // N
    double eps = 0.0; // total travel length along d
    std::vector<double> omega;                 // step magnitudes, n = 1..N
    std::vector<std::optional<double>> theta;  // direction changes, n = 1..N-1 (radians)
    std::vector<float> z_start, z_end;
    double repr_distance = 0.0;  // ||z^(N) - z^(0)||
    std::optional<double> theta1;
    double total_turn = 0.0;  // sum over available theta
    int missing_theta = 0;    // zero-length steps give no direction
    double confidence = 0.0;  // at the original x
    bool crossed = true;      // boundary crossing result behind eps
};

// Batched penultimate-feature extractor over already-clipped images.
// Input: flat image buffers; output: one feature vector per image.
using PenultimateFn =
    std::function<std::vector<std::vector<float>>(const std::vector<std::vector<float>>& images)>;

// Walks x^(n) = start + n*(eps/N)*d for n = 0..N, reads z^(n) at each step
// (images clipped to [0,1] first), and fills omega/theta in 64-bit.
TrajectoryRecord run_trajectory_core(const PenultimateFn& features, std::span<const float> start,
                                     std::span<const float> d, int n_steps, double eps);

// Full-pipeline variant: builds the direction per spec, reads features from
// the model, records confidence at x.
TrajectoryRecord run_trajectory(const Classifier& model, std::span<const float> x, int y,
                                const DirectionSpec& spec, int n_steps, double eps);

// Batched penultimate features of a model (eval mode).
PenultimateFn model_features(const Classifier& model);

struct ModeCorrelation {
    DirectionMode mode = DirectionMode::fgsm;
    std::optional<double> correlation;  // theta1 vs total turn; missing if degenerate
    size_t count = 0;
};

struct EarlyStepRow {
    int64_t sample_id = -1;
    DirectionMode mode = DirectionMode::fgsm;
    int step = 0;  // 1..4
    double omega = 0.0;
    std::optional<double> theta;  // empty for the last step or zero-length steps
};

struct JointRow {
    int64_t sample_id = -1;
    DirectionMode mode = DirectionMode::fgsm;
    double confidence = 0.0;
    double repr_distance = 0.0;
    std::optional<double> theta1;
};

struct ProfileRow {
    int64_t sample_id = -1;
    DirectionMode mode = DirectionMode::fgsm;
    double omega_sum = 0.0;
    std::vector<double> omega_normalized;      // omega^(n) / sum omega
    std::vector<std::optional<double>> theta;  // whole-travel direction changes
};

struct CurvednessStats {
    std::vector<ModeCorrelation> correlations;
    std::vector<EarlyStepRow> early_steps;  // theta^(1..4), omega^(1..4)
    std::vector<JointRow> joint;            // confidence / distance / theta1
    std::vector<ProfileRow> profiles;       // whole-travel matrices
};

// Requires at least 2 records with a defined theta1.
CurvednessStats curvedness_stats(std::span<const TrajectoryRecord> records);

struct PairedTheta {
    int64_t sample_id = -1;
    std::optional<double> theta1_a, theta1_b;
};

// Matches records by sample id (e.g. the rand mode under two seeds).
std::vector<PairedTheta> pair_theta1(std::span<const TrajectoryRecord> a,
                                     std::span<const TrajectoryRecord> b);

struct BoundaryDistanceRow {
    int64_t sample_id = -1;
    DirectionMode mode = DirectionMode::fgsm;
    double eps_star = 0.0;
    double repr_distance = 0.0;
    std::optional<double> theta1;
    double confidence = 0.0;
    bool crossed = false;
};

struct JumpPairRow {
    int64_t sample_id = -1;
    double eps_fgsm = 0.0;
    double eps_jump = 0.0;  // travel length from the jumped start
    bool both_crossed = false;
    std::optional<double> theta1_fgsm;
};

struct BoundaryDistanceReport {
    std::vector<BoundaryDistanceRow> rows;
    std::vector<TrajectoryRecord> records;
    std::vector<JumpPairRow> jump_pairs;  // fgsm vs rand_jump_fgsm, when both ran
    size_t skipped_incorrect = 0;
};

// For every correctly classified sample and every requested mode: build the
// direction, travel to the boundary, then step the crossing travel in
// n_steps increments and record the trajectory. Per-sample failures are
// recorded (crossed=false), the run continues.
BoundaryDistanceReport boundary_distance_report(const Classifier& model, const Dataset& ds,
                                                std::span<const DirectionMode> modes,
                                                const TravelParams& travel, int n_steps,
                                                double eps_r, uint64_t seed, int jobs = 1);

}  // namespace curvprobe

#pragma once

#include <optional>
#include <string>
#include <vector>

#include "curvprobe/data_io.hpp"
#include "curvprobe/trajectory.hpp"
#include "curvprobe/zoo.hpp"

namespace curvprobe {

struct TrainConfig {
    int epochs = 60;
    int batch_size = 64;
    float lr = 5e-4f;
    float weight_decay = 0.05f;
    enum class Optimizer { adamw, sgd } optimizer = Optimizer::adamw;
    int ckpt_every = 10;
    uint64_t seed = 0;
    size_t track_n = 1000;  // per-sample dynamics subset (clamped to the dataset)
    bool cosine_lr = false;

    // theta1 snapshots at checkpoints: step size in input space (the
    // evaluation eps/N) and the direction mode that defines theta1.
    double theta_step = 0.002;
    DirectionMode theta_mode = DirectionMode::fgsm;

    std::string out_dir;  // checkpoints land here
    int jobs = 1;         // fan-out for snapshot computation

    void validate() const;
};

struct TrainingDynamicsLog {
    std::vector<size_t> tracked;   // sample indices into the training set
    std::vector<int> ckpt_epochs;  // 0, k, 2k, ..., final
    // [sample][checkpoint], no gaps
    std::vector<std::vector<float>> loss;
    std::vector<std::vector<std::optional<double>>> theta1;

    std::optional<double> final_theta1(size_t sample) const {
        return theta1[sample].back();
    }
    bool complete() const;
};

struct TrainResult {
    std::vector<std::string> checkpoint_paths;
    std::vector<int> checkpoint_epochs;
    std::vector<double> epoch_mean_loss;  // index 0 = epoch 1
    TrainingDynamicsLog log;
};

// Single-threaded over batches; deterministic for a fixed seed. Aborts with
// TrainingDiverged when the loss goes non-finite (checkpoints already on
// disk stay put).
TrainResult train(Classifier& model, const Dataset& ds, const TrainConfig& cfg);

// Artifact (a): per-sample loss changes between consecutive checkpoints,
// clipped to [-2,2], rows sorted ascending by final theta1.
struct LossChangeMatrix {
    std::vector<int64_t> sample_ids;
    std::vector<std::optional<double>> final_theta1;
    std::vector<int> interval_end_epochs;
    std::vector<std::vector<float>> delta;  // [row][interval]
};

// Artifact (b): loss at a checkpoint vs the remaining change to the end.
struct LossScatterRow {
    int64_t sample_id = 0;
    int epoch = 0;
    float loss_at_epoch = 0.0f;
    float loss_change_to_end = 0.0f;  // raw, unclipped
    std::optional<double> final_theta1;
};

// Artifact (c): theta1 at a checkpoint vs the final theta1.
struct ThetaScatterRow {
    int64_t sample_id = 0;
    int epoch = 0;
    std::optional<double> theta1_at_epoch;
    std::optional<double> final_theta1;
};

struct DynamicsReport {
    LossChangeMatrix matrix;
    std::vector<LossScatterRow> loss_rows;
    std::vector<ThetaScatterRow> theta_rows;
};

DynamicsReport dynamics_report(const TrainingDynamicsLog& log);

}  // namespace curvprobe

#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "curvprobe/tensor.hpp"

namespace curvprobe {

enum class Arch { cnn, vit };

std::string arch_name(Arch a);
Arch arch_from_name(const std::string& s);

struct ArchConfig {
    Arch arch = Arch::cnn;
    int in_channels = 3;
    int height = 32;
    int width = 32;
    int num_classes = 10;

    // cnn: residual stages
    std::vector<int> widths{16, 32, 64};
    std::vector<int> blocks{1, 1, 1};

    // vit
    int patch = 4;
    int embed = 64;
    int depth = 4;
    int heads = 4;
    int mlp_ratio = 4;

    // Per-channel input normalization, applied inside the model after the
    // pixel-space clip to [0,1].
    std::vector<float> norm_mean;  // defaults to 0.5 per channel
    std::vector<float> norm_std;   // defaults to 0.5 per channel

    void validate() const;
    int feature_dim() const { return arch == Arch::cnn ? widths.back() : embed; }
    int64_t input_dim() const { return int64_t(in_channels) * height * width; }
};

struct ForwardResult {
    Tensor logits;  // [B, num_classes], = head(z) exactly
    Tensor z;       // [B, feature_dim], penultimate feature
};

struct Prediction {
    int label = 0;
    double confidence = 0.0;  // max softmax probability
};

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

class Classifier {
public:
    Classifier() = default;
    // Fresh initialization from seed. Deterministic.
    static Classifier create(const ArchConfig& cfg, uint64_t seed);

    const ArchConfig& config() const { return cfg_; }
    int feature_dim() const { return cfg_.feature_dim(); }

    // x: [B, C, H, W] with pixel values nominally in [0,1].
    // training=true lets batch norm use batch statistics and update its
    // running buffers; analysis always runs with training=false, which is a
    // pure function of (parameters, input).
    ForwardResult forward(const Tensor& x, bool training = false) const;

    std::vector<Prediction> predict(const Tensor& x) const;

    // Trainable parameters, stable order. Created frozen
    // (requires_grad=false): analysis backward passes must reach only the
    // input. The trainer unfreezes them around its own update steps.
    const std::vector<NamedTensor>& parameters() const { return params_; }

    // Toggle gradient participation of every parameter.
    void set_trainable(bool trainable) const;
    // Non-trainable state (batch norm running stats, normalization constants).
    const std::vector<NamedTensor>& buffers() const { return buffers_; }
    // parameters() followed by buffers(); the checkpoint manifest order.
    std::vector<NamedTensor> named_state() const;

    Tensor find_state(const std::string& name) const;

private:
    ArchConfig cfg_;
    std::vector<NamedTensor> params_;
    std::vector<NamedTensor> buffers_;
    std::unordered_map<std::string, Tensor> index_;

    void register_param(const std::string& name, Tensor t);
    void register_buffer(const std::string& name, Tensor t);
    Tensor p(const std::string& name) const;
    ForwardResult forward_cnn(const Tensor& x, bool training) const;
    ForwardResult forward_vit(const Tensor& x) const;
    Tensor normalize_input(const Tensor& x) const;
};

// Softmax + argmax with lowest-index tie break; exposed for direct testing.
std::vector<Prediction> predictions_from_logits(const Tensor& logits);

}  // namespace curvprobe

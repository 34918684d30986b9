#include "curvprobe/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>

namespace curvprobe {

void TrainConfig::validate() const {
    if (epochs < 0) throw ValueError("train: epochs must be >= 0");
    if (batch_size < 1) throw ValueError("train: batch size must be >= 1");
    if (lr < 0.0f) throw ValueError("train: learning rate must be >= 0");
    if (weight_decay < 0.0f) throw ValueError("train: weight decay must be >= 0");
    if (ckpt_every < 1) throw ValueError("train: checkpoint period must be >= 1");
    if (theta_step <= 0.0) throw ValueError("train: theta step must be > 0");
}

bool TrainingDynamicsLog::complete() const {
    if (loss.size() != tracked.size() || theta1.size() != tracked.size()) return false;
    for (size_t s = 0; s < tracked.size(); ++s)
        if (loss[s].size() != ckpt_epochs.size() || theta1[s].size() != ckpt_epochs.size())
            return false;
    return true;
}

namespace {

class Optimizer {
public:
    Optimizer(const TrainConfig& cfg, const std::vector<NamedTensor>& params) : cfg_(cfg) {
        if (cfg.optimizer == TrainConfig::Optimizer::adamw) {
            m_.reserve(params.size());
            v_.reserve(params.size());
            for (const auto& p : params) {
                m_.emplace_back(p.tensor.numel(), 0.0f);
                v_.emplace_back(p.tensor.numel(), 0.0f);
            }
        }
    }

    void step(std::vector<NamedTensor>& params, float lr) {
        ++t_;
        constexpr float beta1 = 0.9f, beta2 = 0.999f, eps = 1e-8f;
        const float bc1 = 1.0f - std::pow(beta1, float(t_));
        const float bc2 = 1.0f - std::pow(beta2, float(t_));
        for (size_t i = 0; i < params.size(); ++i) {
            auto& p = params[i];
            if (!p.tensor.has_grad()) continue;
            auto w = p.tensor.mutable_data();
            const auto g = p.tensor.grad();
            // Decay weight matrices only; biases, norms and the position
            // table stay undecayed.
            const bool decay = p.tensor.ndim() >= 2 && p.name != "pos";
            const float wd = decay ? cfg_.weight_decay : 0.0f;
            if (cfg_.optimizer == TrainConfig::Optimizer::adamw) {
                auto& m = m_[i];
                auto& v = v_[i];
                for (size_t k = 0; k < w.size(); ++k) {
                    m[k] = beta1 * m[k] + (1.0f - beta1) * g[k];
                    v[k] = beta2 * v[k] + (1.0f - beta2) * g[k] * g[k];
                    const float mhat = m[k] / bc1;
                    const float vhat = v[k] / bc2;
                    w[k] -= lr * (mhat / (std::sqrt(vhat) + eps) + wd * w[k]);
                }
            } else {
                for (size_t k = 0; k < w.size(); ++k)
                    w[k] -= lr * (g[k] + wd * w[k]);
            }
        }
    }

private:
    const TrainConfig& cfg_;
    int t_ = 0;
    std::vector<std::vector<float>> m_, v_;
};

// Per-sample cross-entropy in eval mode, batched.
std::vector<float> eval_losses(const Classifier& model, const Dataset& ds,
                               std::span<const size_t> indices) {
    NoGradGuard ng;
    std::vector<float> out(indices.size());
    const size_t chunk = 256;
    const int64_t C = model.config().num_classes;
    for (size_t base = 0; base < indices.size(); base += chunk) {
        const size_t n = std::min(chunk, indices.size() - base);
        std::vector<size_t> idx(indices.begin() + int64_t(base),
                                indices.begin() + int64_t(base + n));
        Tensor logits = model.forward(ds.batch(idx), false).logits;
        for (size_t i = 0; i < n; ++i) {
            const float* row = logits.data().data() + int64_t(i) * C;
            float mx = row[0];
            for (int64_t c = 1; c < C; ++c) mx = std::max(mx, row[c]);
            double denom = 0.0;
            for (int64_t c = 0; c < C; ++c) denom += std::exp(double(row[c]) - mx);
            out[base + i] =
                float(std::log(denom) + mx - row[ds.labels[idx[i]]]);
        }
    }
    return out;
}

std::vector<std::optional<double>> snapshot_theta1(const Classifier& model, const Dataset& ds,
                                                   std::span<const size_t> indices,
                                                   const TrainConfig& cfg) {
    std::vector<std::optional<double>> out(indices.size());
    parallel_for(indices.size(), cfg.jobs, [&](size_t j) {
        const size_t i = indices[j];
        DirectionSpec spec;
        spec.mode = cfg.theta_mode;
        spec.eps_r = 0.05;
        spec.seed = mix_seed(cfg.seed, uint64_t(i), 0x7e7a);
        try {
            // theta1 needs only z^(0), z^(1), z^(2): two steps of eps/N.
            const auto md = make_direction(model, ds.image(i), ds.labels[i], spec);
            auto rec = run_trajectory_core(model_features(model), md.start, md.d, 2,
                                           2.0 * cfg.theta_step);
            out[j] = rec.theta1;
        } catch (const Error&) {
            out[j] = std::nullopt;  // e.g. zero gradient; recorded as missing
        }
    });
    return out;
}

}  // namespace

TrainResult train(Classifier& model, const Dataset& ds, const TrainConfig& cfg) {
    cfg.validate();
    if (ds.size() == 0) throw ValueError("train: empty dataset");
    if (cfg.out_dir.empty()) throw ValueError("train: out_dir is required (checkpoints persist there)");
    std::filesystem::create_directories(cfg.out_dir);

    TrainResult res;
    const size_t track_n = std::min(cfg.track_n, ds.size());
    {
        // deterministic tracked subset
        auto sub = subset(ds, track_n, mix_seed(cfg.seed, 0x7174ACF));
        res.log.tracked = sub.indices;
        std::sort(res.log.tracked.begin(), res.log.tracked.end());
    }
    res.log.loss.assign(track_n, {});
    res.log.theta1.assign(track_n, {});

    auto checkpoint = [&](int epoch) {
        // Snapshots run analysis backward passes; parameters must be frozen
        // so gradients reach only the probe inputs.
        model.set_trainable(false);
        const std::string path = cfg.out_dir + "/ckpt_epoch_" + std::to_string(epoch) + ".cprb";
        save_checkpoint(model, path, epoch);
        res.checkpoint_paths.push_back(path);
        res.checkpoint_epochs.push_back(epoch);
        res.log.ckpt_epochs.push_back(epoch);
        const auto losses = eval_losses(model, ds, res.log.tracked);
        const auto thetas = snapshot_theta1(model, ds, res.log.tracked, cfg);
        for (size_t s = 0; s < track_n; ++s) {
            res.log.loss[s].push_back(losses[s]);
            res.log.theta1[s].push_back(thetas[s]);
        }
    };

    checkpoint(0);  // initialization snapshot

    auto params = model.parameters();
    Optimizer opt(cfg, params);
    std::vector<size_t> order(ds.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        model.set_trainable(true);
        Rng shuffle_rng(mix_seed(cfg.seed, 0x5348, uint64_t(epoch)));
        for (size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[size_t(shuffle_rng.below(i))]);

        const float lr = cfg.cosine_lr
                             ? cfg.lr * 0.5f *
                                   (1.0f + std::cos(3.14159265f * float(epoch - 1) / float(cfg.epochs)))
                             : cfg.lr;

        double epoch_loss = 0.0;
        size_t batches = 0;
        for (size_t base = 0; base < order.size(); base += size_t(cfg.batch_size)) {
            const size_t n = std::min(size_t(cfg.batch_size), order.size() - base);
            std::vector<size_t> idx(order.begin() + int64_t(base), order.begin() + int64_t(base + n));
            std::vector<int> labels(n);
            for (size_t i = 0; i < n; ++i) labels[i] = ds.labels[idx[i]];
            Tensor loss = cross_entropy(model.forward(ds.batch(idx), true).logits, labels);
            const float value = loss.item();
            if (!std::isfinite(value))
                throw TrainingDiverged("train: loss went non-finite at epoch " +
                                       std::to_string(epoch) + " (last good checkpoint: epoch " +
                                       std::to_string(res.checkpoint_epochs.back()) + ")");
            backward(loss);
            opt.step(params, lr);
            for (auto& p : params) p.tensor.zero_grad();
            epoch_loss += value;
            batches++;
        }
        res.epoch_mean_loss.push_back(batches ? epoch_loss / double(batches) : 0.0);

        if (epoch % cfg.ckpt_every == 0 || epoch == cfg.epochs) checkpoint(epoch);
    }
    model.set_trainable(false);
    return res;
}

DynamicsReport dynamics_report(const TrainingDynamicsLog& log) {
    if (!log.complete() || log.ckpt_epochs.empty())
        throw ValueError("dynamics_report: incomplete training dynamics log");
    const size_t n = log.tracked.size();
    const size_t k = log.ckpt_epochs.size();

    DynamicsReport rep;
    std::vector<size_t> order(n);
    for (size_t i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        const auto ta = log.final_theta1(a);
        const auto tb = log.final_theta1(b);
        if (ta.has_value() != tb.has_value()) return ta.has_value();  // missing last
        if (ta && tb && *ta != *tb) return *ta < *tb;
        return log.tracked[a] < log.tracked[b];
    });

    for (size_t kk = 1; kk < k; ++kk)
        rep.matrix.interval_end_epochs.push_back(log.ckpt_epochs[kk]);
    for (size_t r = 0; r < n; ++r) {
        const size_t s = order[r];
        rep.matrix.sample_ids.push_back(int64_t(log.tracked[s]));
        rep.matrix.final_theta1.push_back(log.final_theta1(s));
        std::vector<float> deltas;
        for (size_t kk = 1; kk < k; ++kk) {
            float d = log.loss[s][kk] - log.loss[s][kk - 1];
            d = std::min(2.0f, std::max(-2.0f, d));  // clipped for the heatmap
            deltas.push_back(d);
        }
        rep.matrix.delta.push_back(std::move(deltas));
    }

    for (size_t s = 0; s < n; ++s) {
        const auto ft = log.final_theta1(s);
        for (size_t kk = 0; kk < k; ++kk) {
            rep.loss_rows.push_back({int64_t(log.tracked[s]), log.ckpt_epochs[kk],
                                     log.loss[s][kk],
                                     log.loss[s][k - 1] - log.loss[s][kk], ft});
            rep.theta_rows.push_back({int64_t(log.tracked[s]), log.ckpt_epochs[kk],
                                      log.theta1[s][kk], ft});
        }
    }
    return rep;
}

}  // namespace curvprobe

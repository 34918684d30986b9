#include "curvprobe/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace curvprobe {

std::string attack_name(AttackKind k) {
    switch (k) {
        case AttackKind::fgsm: return "fgsm";
        case AttackKind::ifgsm: return "ifgsm";
        case AttackKind::rand_jump: return "rand_jump_fgsm";
    }
    throw ValueError("unknown attack kind");
}

AttackKind attack_from_name(const std::string& s) {
    if (s == "fgsm") return AttackKind::fgsm;
    if (s == "ifgsm") return AttackKind::ifgsm;
    if (s == "rand_jump_fgsm" || s == "rand_jump") return AttackKind::rand_jump;
    throw ValueError("unknown attack kind '" + s + "'");
}

void AttackConfig::validate() const {
    if (eps < 0.0) throw ValueError("attack: eps budget must be >= 0");
    if (iters < 1) throw ValueError("attack: iteration count must be >= 1");
    if (eps_r < 0.0) throw ValueError("attack: eps_r must be >= 0");
}

double psnr_db(std::span<const float> a, std::span<const float> b) {
    if (a.size() != b.size()) throw ShapeError("psnr: image size mismatch");
    double mse = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        const double d = double(a[i]) - b[i];
        mse += d * d;
    }
    mse /= double(a.size());
    if (mse == 0.0) return 99.0;  // identical images: sentinel cap
    return std::min(99.0, 10.0 * std::log10(1.0 / mse));
}

AttackResult ifgsm_core(const InputGradFn& grad, const PredictImageFn& classify,
                        std::span<const float> x, int y, const AttackConfig& cfg) {
    cfg.validate();
    const int iters = cfg.kind == AttackKind::fgsm ? 1 : cfg.iters;
    const double step = cfg.eps / double(iters);

    AttackResult res;
    res.label_before = classify(x);
    if (res.label_before != y)
        throw ValueError("attack: x must be correctly classified before attacking");

    std::vector<float> cur(x.begin(), x.end());
    for (int t = 0; t < iters; ++t) {
        const auto g = grad(cur, y);
        bool finite = true;
        for (float v : g)
            if (!std::isfinite(v)) finite = false;
        if (!finite) {
            res.aborted = true;  // keep the partial perturbation
            break;
        }
        for (size_t i = 0; i < cur.size(); ++i) {
            const float sgn = g[i] < 0.0f ? -1.0f : 1.0f;
            double v = double(cur[i]) + step * sgn;
            // project into the l-inf ball around the original, then the pixel box
            v = std::min(double(x[i]) + cfg.eps, std::max(double(x[i]) - cfg.eps, v));
            cur[i] = clip01(float(v));
        }
    }
    res.label_after = classify(cur);
    res.success = res.label_after != y;
    double linf = 0.0;
    for (size_t i = 0; i < cur.size(); ++i)
        linf = std::max(linf, std::abs(double(cur[i]) - x[i]));
    res.eps_used = linf;
    res.psnr_db = psnr_db(cur, x);
    res.x_adv = std::move(cur);
    return res;
}

namespace {

InputGradFn model_grad(const Classifier& model) {
    const ArchConfig cfg = model.config();
    return [model, cfg](std::span<const float> img, int y) {
        Tensor xt = Tensor::from_data({1, cfg.in_channels, cfg.height, cfg.width},
                                      std::vector<float>(img.begin(), img.end()), true);
        backward(cross_entropy(model.forward(xt, false).logits, {y}));
        return std::vector<float>(xt.grad().begin(), xt.grad().end());
    };
}

PredictImageFn model_classify(const Classifier& model) {
    const ArchConfig cfg = model.config();
    return [model, cfg](std::span<const float> img) {
        Tensor t = Tensor::from_data({1, cfg.in_channels, cfg.height, cfg.width},
                                     std::vector<float>(img.begin(), img.end()));
        return model.predict(t)[0].label;
    };
}

}  // namespace

AttackResult ifgsm(const Classifier& model, std::span<const float> x, int y,
                   const AttackConfig& cfg) {
    return ifgsm_core(model_grad(model), model_classify(model), x, y, cfg);
}

AttackResult rand_jump_attack(const Classifier& model, std::span<const float> x, int y,
                              const AttackConfig& cfg) {
    cfg.validate();
    AttackResult res;
    const auto classify = model_classify(model);
    res.label_before = classify(x);
    if (res.label_before != y)
        throw ValueError("attack: x must be correctly classified before attacking");

    Rng rng(mix_seed(cfg.seed, 0x4a554d50));  // jump stream
    std::vector<float> r(x.size());
    double n2 = 0.0;
    for (auto& v : r) {
        v = rng.normal_f();
        n2 += double(v) * v;
    }
    const double s = std::sqrt(double(x.size()) / n2);
    std::vector<float> x0(x.size());
    for (size_t i = 0; i < x.size(); ++i)
        x0[i] = clip01(float(double(x[i]) + cfg.eps_r * double(r[i]) * s));

    res.label_after = classify(x0);
    if (res.label_after != y) {
        // the jump alone crossed the boundary
        res.success = true;
        res.eps_used = cfg.eps_r;
        res.psnr_db = psnr_db(x0, x);
        res.x_adv = std::move(x0);
        return res;
    }
    const auto d = fgsm_direction(model, x0, y);
    const auto tr = travel_to_boundary(model, x0, y, d, cfg.travel);
    if (tr.crossed) {
        res.x_adv = tr.x_prime;
        res.success = true;
        res.eps_used = cfg.eps_r + tr.eps_star;  // total path length, jump included
    } else {
        res.x_adv = std::move(x0);
        res.success = false;
        res.eps_used = cfg.eps_r;
    }
    res.label_after = classify(res.x_adv);
    res.psnr_db = psnr_db(res.x_adv, x);
    return res;
}

RobustnessReport robustness_by_curvedness(const Classifier& model, const Dataset& ds,
                                          const AttackConfig& cfg,
                                          std::span<const TrajectoryRecord> records,
                                          int n_bins, int jobs) {
    if (n_bins < 1) throw ValueError("robustness: bin count must be >= 1");
    constexpr double kPi = 3.14159265358979323846;
    std::map<int64_t, double> theta_by_id;
    for (const auto& r : records)
        if (r.theta1) theta_by_id[r.sample_id] = *r.theta1;

    RobustnessReport rep;
    rep.bins.resize(size_t(n_bins));
    for (int b = 0; b < n_bins; ++b) {
        rep.bins[size_t(b)].lo = kPi * b / n_bins;
        rep.bins[size_t(b)].hi = kPi * (b + 1) / n_bins;
    }

    struct Job {
        size_t index;
        double theta1;
    };
    std::vector<Job> jobs_list;
    {
        const size_t chunk = 256;
        std::vector<Prediction> preds(ds.size());
        for (size_t base = 0; base < ds.size(); base += chunk) {
            const size_t n = std::min(chunk, ds.size() - base);
            std::vector<size_t> idx(n);
            for (size_t i = 0; i < n; ++i) idx[i] = base + i;
            auto p = model.predict(ds.batch(idx));
            std::copy(p.begin(), p.end(), preds.begin() + int64_t(base));
        }
        for (size_t i = 0; i < ds.size(); ++i) {
            auto it = theta_by_id.find(int64_t(i));
            if (it == theta_by_id.end() || preds[i].label != ds.labels[i]) {
                rep.skipped++;
                continue;
            }
            jobs_list.push_back({i, it->second});
        }
    }

    std::vector<uint8_t> survived(jobs_list.size(), 0);
    parallel_for(jobs_list.size(), jobs, [&](size_t j) {
        const auto& job = jobs_list[j];
        AttackConfig per = cfg;
        per.seed = mix_seed(cfg.seed, uint64_t(job.index));
        AttackResult r;
        if (cfg.kind == AttackKind::rand_jump)
            r = rand_jump_attack(model, ds.image(job.index), ds.labels[job.index], per);
        else
            r = ifgsm(model, ds.image(job.index), ds.labels[job.index], per);
        survived[j] = r.success ? 0 : 1;
    });

    std::vector<size_t> bin_total(size_t(n_bins), 0), bin_ok(size_t(n_bins), 0);
    size_t ok = 0;
    for (size_t j = 0; j < jobs_list.size(); ++j) {
        int b = std::min(n_bins - 1, int(jobs_list[j].theta1 / kPi * n_bins));
        if (b < 0) b = 0;
        bin_total[size_t(b)]++;
        if (survived[j]) {
            bin_ok[size_t(b)]++;
            ok++;
        }
    }
    for (int b = 0; b < n_bins; ++b) {
        rep.bins[size_t(b)].count = bin_total[size_t(b)];
        rep.bins[size_t(b)].accuracy =
            bin_total[size_t(b)] ? double(bin_ok[size_t(b)]) / double(bin_total[size_t(b)]) : 0.0;
    }
    rep.attacked = jobs_list.size();
    rep.overall_accuracy = jobs_list.empty() ? 0.0 : double(ok) / double(jobs_list.size());
    return rep;
}

}  // namespace curvprobe

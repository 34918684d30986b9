#include "curvprobe/trajectory.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <map>

namespace curvprobe {

std::string mode_name(DirectionMode m) {
    switch (m) {
        case DirectionMode::fgsm: return "fgsm";
        case DirectionMode::rand: return "rand";
        case DirectionMode::fgsm_perp: return "fgsm_perp";
        case DirectionMode::rand_jump_fgsm: return "rand_jump_fgsm";
        case DirectionMode::fgsm_jump_fgsm: return "fgsm_jump_fgsm";
    }
    throw ValueError("unknown direction mode");
}

DirectionMode mode_from_name(const std::string& s) {
    if (s == "fgsm") return DirectionMode::fgsm;
    if (s == "rand") return DirectionMode::rand;
    if (s == "fgsm_perp") return DirectionMode::fgsm_perp;
    if (s == "rand_jump_fgsm") return DirectionMode::rand_jump_fgsm;
    if (s == "fgsm_jump_fgsm") return DirectionMode::fgsm_jump_fgsm;
    throw ValueError("unknown direction mode '" + s + "'");
}

namespace {

// Gaussian vector rescaled to ||.||_2 = sqrt(D).
std::vector<float> random_direction(Rng& rng, size_t dim) {
    std::vector<float> r(dim);
    double n2 = 0.0;
    do {
        n2 = 0.0;
        for (auto& v : r) {
            v = rng.normal_f();
            n2 += double(v) * v;
        }
    } while (n2 == 0.0);
    const double s = std::sqrt(double(dim) / n2);
    for (auto& v : r) v = float(v * s);
    return r;
}

std::vector<float> jumped(std::span<const float> x, std::span<const float> r, double eps_r) {
    std::vector<float> out(x.size());
    for (size_t i = 0; i < x.size(); ++i) out[i] = float(double(x[i]) + eps_r * r[i]);
    return out;
}

}  // namespace

MadeDirection make_direction(const Classifier& model, std::span<const float> x, int y,
                             const DirectionSpec& spec) {
    const size_t dim = size_t(model.config().input_dim());
    if (x.size() != dim)
        throw ShapeError("make_direction: input size " + std::to_string(x.size()) +
                         " does not match model input dim " + std::to_string(dim));
    Rng rng(mix_seed(spec.seed, 0xD12EC7, uint64_t(spec.mode)));
    MadeDirection out;
    out.start.assign(x.begin(), x.end());
    switch (spec.mode) {
        case DirectionMode::fgsm:
            out.d = fgsm_direction(model, x, y);
            break;
        case DirectionMode::rand:
            out.d = random_direction(rng, dim);
            break;
        case DirectionMode::fgsm_perp: {
            const auto df = fgsm_direction(model, x, y);
            const double dd = double(dim);  // ||df||^2 = D exactly
            for (int attempt = 0;; ++attempt) {
                if (attempt >= 8)
                    throw Error("make_direction: could not orthogonalize against FGSM after 8 draws");
                auto r = random_direction(rng, dim);
                double proj = 0.0;
                for (size_t i = 0; i < dim; ++i) proj += double(r[i]) * df[i];
                proj /= dd;
                double n2 = 0.0;
                for (size_t i = 0; i < dim; ++i) {
                    r[i] = float(double(r[i]) - proj * df[i]);
                    n2 += double(r[i]) * r[i];
                }
                if (n2 < 1e-12 * dd) continue;  // essentially parallel, resample
                const double s = std::sqrt(dd / n2);
                for (auto& v : r) v = float(v * s);
                double check = 0.0;
                for (size_t i = 0; i < dim; ++i) check += double(r[i]) * df[i];
                if (std::abs(check) / dd > 1e-4) continue;
                out.d = std::move(r);
                break;
            }
            break;
        }
        case DirectionMode::rand_jump_fgsm: {
            const auto r = random_direction(rng, dim);
            out.start = jumped(x, r, spec.eps_r);
            out.d = fgsm_direction(model, out.start, y);
            break;
        }
        case DirectionMode::fgsm_jump_fgsm: {
            const auto r = random_direction(rng, dim);
            const auto probe = jumped(x, r, spec.eps_r);
            const auto d_jump = fgsm_direction(model, probe, y);
            out.start = jumped(x, d_jump, spec.eps_r);
            out.d = fgsm_direction(model, out.start, y);
            break;
        }
    }
    return out;
}

PenultimateFn model_features(const Classifier& model) {
    const ArchConfig cfg = model.config();
    return [model, cfg](const std::vector<std::vector<float>>& images) {
        const int64_t n = int64_t(images.size());
        const int64_t dim = cfg.input_dim();
        std::vector<float> flat(size_t(n * dim));
        for (int64_t i = 0; i < n; ++i) {
            if (int64_t(images[size_t(i)].size()) != dim)
                throw ShapeError("features: image size mismatch");
            std::memcpy(flat.data() + i * dim, images[size_t(i)].data(),
                        sizeof(float) * size_t(dim));
        }
        NoGradGuard ng;
        Tensor batch = Tensor::from_data({n, cfg.in_channels, cfg.height, cfg.width},
                                         std::move(flat));
        Tensor z = model.forward(batch, false).z;
        const int64_t fd = z.dim(1);
        std::vector<std::vector<float>> out(size_t(n), std::vector<float>{});
        for (int64_t i = 0; i < n; ++i)
            out[size_t(i)].assign(z.data().begin() + i * fd, z.data().begin() + (i + 1) * fd);
        return out;
    };
}

TrajectoryRecord run_trajectory_core(const PenultimateFn& features, std::span<const float> start,
                                     std::span<const float> d, int n_steps, double eps) {
    if (n_steps < 2) throw ValueError("trajectory: need at least 2 steps");
    if (start.size() != d.size()) throw ShapeError("trajectory: start/direction size mismatch");
    const int N = n_steps;
    std::vector<std::vector<float>> images(size_t(N + 1), std::vector<float>{});
    for (int n = 0; n <= N; ++n) {
        const double t = eps * double(n) / double(N);
        std::vector<float> img(start.size());
        for (size_t i = 0; i < start.size(); ++i)
            img[i] = clip01(float(double(start[i]) + t * d[i]));
        images[size_t(n)] = std::move(img);
    }
    const auto z = features(images);
    const size_t fd = z[0].size();

    TrajectoryRecord rec;
    rec.n_steps = N;
    rec.eps = eps;
    rec.z_start = z.front();
    rec.z_end = z.back();

    // All angle and magnitude math in 64-bit: arccos is ill-conditioned near
    // 0 and pi, and the analysis is angle-sensitive.
    std::vector<std::vector<double>> steps(size_t(N), std::vector<double>{});
    rec.omega.resize(size_t(N));
    for (int n = 1; n <= N; ++n) {
        std::vector<double> dz(fd);
        double norm2 = 0.0;
        for (size_t i = 0; i < fd; ++i) {
            dz[i] = double(z[size_t(n)][i]) - double(z[size_t(n - 1)][i]);
            norm2 += dz[i] * dz[i];
        }
        rec.omega[size_t(n - 1)] = std::sqrt(norm2);
        steps[size_t(n - 1)] = std::move(dz);
    }
    rec.theta.resize(size_t(N - 1));
    for (int n = 1; n <= N - 1; ++n) {
        const auto& a = steps[size_t(n - 1)];
        const auto& b = steps[size_t(n)];
        const double na = rec.omega[size_t(n - 1)];
        const double nb = rec.omega[size_t(n)];
        if (na == 0.0 || nb == 0.0) {
            rec.theta[size_t(n - 1)] = std::nullopt;  // no direction in a zero step
            rec.missing_theta++;
            continue;
        }
        double dot = 0.0;
        for (size_t i = 0; i < fd; ++i) dot += a[i] * b[i];
        const double c = std::clamp(dot / (na * nb), -1.0, 1.0);
        rec.theta[size_t(n - 1)] = std::acos(c);
    }
    rec.theta1 = rec.theta.empty() ? std::nullopt : rec.theta.front();
    rec.total_turn = 0.0;
    for (const auto& t : rec.theta)
        if (t) rec.total_turn += *t;
    double dist2 = 0.0;
    for (size_t i = 0; i < fd; ++i) {
        const double dd = double(rec.z_end[i]) - double(rec.z_start[i]);
        dist2 += dd * dd;
    }
    rec.repr_distance = std::sqrt(dist2);
    return rec;
}

TrajectoryRecord run_trajectory(const Classifier& model, std::span<const float> x, int y,
                                const DirectionSpec& spec, int n_steps, double eps) {
    const auto md = make_direction(model, x, y, spec);
    auto rec = run_trajectory_core(model_features(model), md.start, md.d, n_steps, eps);
    rec.mode = spec.mode;
    const auto& cfg = model.config();
    Tensor xt = Tensor::from_data({1, cfg.in_channels, cfg.height, cfg.width},
                                  std::vector<float>(x.begin(), x.end()));
    rec.confidence = model.predict(xt)[0].confidence;
    return rec;
}

namespace {

std::optional<double> pearson_opt(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() < 2) return std::nullopt;
    double mx = 0.0, my = 0.0;
    for (size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= double(x.size());
    my /= double(x.size());
    double sxx = 0.0, syy = 0.0, sxy = 0.0;
    for (size_t i = 0; i < x.size(); ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
        sxy += (x[i] - mx) * (y[i] - my);
    }
    if (sxx <= 0.0 || syy <= 0.0) return std::nullopt;  // degenerate variance
    return sxy / std::sqrt(sxx * syy);
}

}  // namespace

CurvednessStats curvedness_stats(std::span<const TrajectoryRecord> records) {
    size_t with_theta1 = 0;
    for (const auto& r : records)
        if (r.theta1) with_theta1++;
    if (with_theta1 < 2)
        throw ValueError("curvedness_stats: need at least 2 records with a defined theta1, have " +
                         std::to_string(with_theta1));

    CurvednessStats out;
    std::map<DirectionMode, std::pair<std::vector<double>, std::vector<double>>> per_mode;
    for (const auto& r : records) {
        if (r.theta1) {
            per_mode[r.mode].first.push_back(*r.theta1);
            per_mode[r.mode].second.push_back(r.total_turn);
        }
        for (int step = 1; step <= 4 && step <= int(r.omega.size()); ++step) {
            EarlyStepRow row;
            row.sample_id = r.sample_id;
            row.mode = r.mode;
            row.step = step;
            row.omega = r.omega[size_t(step - 1)];
            if (step <= int(r.theta.size())) row.theta = r.theta[size_t(step - 1)];
            out.early_steps.push_back(std::move(row));
        }
        out.joint.push_back({r.sample_id, r.mode, r.confidence, r.repr_distance, r.theta1});
        ProfileRow prof;
        prof.sample_id = r.sample_id;
        prof.mode = r.mode;
        for (double w : r.omega) prof.omega_sum += w;
        prof.omega_normalized.resize(r.omega.size());
        for (size_t i = 0; i < r.omega.size(); ++i)
            prof.omega_normalized[i] = prof.omega_sum > 0.0 ? r.omega[i] / prof.omega_sum : 0.0;
        prof.theta = r.theta;
        out.profiles.push_back(std::move(prof));
    }
    for (const auto& [mode, xy] : per_mode)
        out.correlations.push_back({mode, pearson_opt(xy.first, xy.second), xy.first.size()});
    return out;
}

std::vector<PairedTheta> pair_theta1(std::span<const TrajectoryRecord> a,
                                     std::span<const TrajectoryRecord> b) {
    std::map<int64_t, PairedTheta> by_id;
    for (const auto& r : a) {
        by_id[r.sample_id].sample_id = r.sample_id;
        by_id[r.sample_id].theta1_a = r.theta1;
    }
    for (const auto& r : b) {
        auto it = by_id.find(r.sample_id);
        if (it == by_id.end()) continue;
        it->second.theta1_b = r.theta1;
    }
    std::vector<PairedTheta> out;
    for (auto& [id, p] : by_id)
        if (p.theta1_a && p.theta1_b) out.push_back(p);
    return out;
}

BoundaryDistanceReport boundary_distance_report(const Classifier& model, const Dataset& ds,
                                                std::span<const DirectionMode> modes,
                                                const TravelParams& travel, int n_steps,
                                                double eps_r, uint64_t seed, int jobs) {
    BoundaryDistanceReport out;
    std::vector<Prediction> preds(ds.size());
    const size_t chunk = 256;
    for (size_t base = 0; base < ds.size(); base += chunk) {
        const size_t n = std::min(chunk, ds.size() - base);
        std::vector<size_t> idx(n);
        for (size_t i = 0; i < n; ++i) idx[i] = base + i;
        auto p = model.predict(ds.batch(idx));
        std::copy(p.begin(), p.end(), preds.begin() + int64_t(base));
    }
    std::vector<size_t> correct;
    for (size_t i = 0; i < ds.size(); ++i) {
        if (preds[i].label == ds.labels[i])
            correct.push_back(i);
        else
            out.skipped_incorrect++;
    }

    struct PerSample {
        std::vector<BoundaryDistanceRow> rows;
        std::vector<TrajectoryRecord> records;
    };
    std::vector<PerSample> results(correct.size());
    const auto features = model_features(model);

    parallel_for(correct.size(), jobs, [&](size_t j) {
        const size_t i = correct[j];
        const auto x = ds.image(i);
        const int y = ds.labels[i];
        PerSample& slot = results[j];
        for (DirectionMode mode : modes) {
            DirectionSpec spec;
            spec.mode = mode;
            spec.eps_r = eps_r;
            spec.seed = mix_seed(seed, uint64_t(i), uint64_t(mode));
            BoundaryDistanceRow row;
            row.sample_id = int64_t(i);
            row.mode = mode;
            row.confidence = preds[i].confidence;
            TrajectoryRecord rec;
            rec.sample_id = int64_t(i);
            rec.mode = mode;
            rec.confidence = preds[i].confidence;
            try {
                const auto md = make_direction(model, x, y, spec);
                // A jump can itself cross the boundary: the travel length
                // from the jumped start is then zero.
                const bool start_correct =
                    predict_traveled(model, md.start, md.d, 0.0) == y;
                if (!start_correct) {
                    row.eps_star = 0.0;
                    row.crossed = true;
                    rec.crossed = true;
                    rec.n_steps = n_steps;
                    slot.rows.push_back(row);
                    slot.records.push_back(rec);
                    continue;
                }
                auto tr = travel_to_boundary(model, md.start, y, md.d, travel);
                row.crossed = tr.crossed;
                row.eps_star = tr.crossed ? tr.eps_star : 0.0;
                const double eps_for_walk = tr.crossed ? tr.eps_star : travel.eps_max;
                rec = run_trajectory_core(features, md.start, md.d, n_steps, eps_for_walk);
                rec.sample_id = int64_t(i);
                rec.mode = mode;
                rec.confidence = preds[i].confidence;
                rec.crossed = tr.crossed;
                row.repr_distance = rec.repr_distance;
                row.theta1 = rec.theta1;
            } catch (const Error&) {
                row.crossed = false;  // recorded, run continues
            }
            slot.rows.push_back(row);
            slot.records.push_back(rec);
        }
    });

    for (auto& slot : results) {
        for (auto& r : slot.rows) out.rows.push_back(std::move(r));
        for (auto& r : slot.records) out.records.push_back(std::move(r));
    }

    // Fig.-16-style pairing of travel lengths with and without the jump.
    const bool has_fgsm = std::find(modes.begin(), modes.end(), DirectionMode::fgsm) != modes.end();
    const bool has_jump =
        std::find(modes.begin(), modes.end(), DirectionMode::rand_jump_fgsm) != modes.end();
    if (has_fgsm && has_jump) {
        std::map<int64_t, JumpPairRow> pairs;
        for (const auto& r : out.rows) {
            if (r.mode == DirectionMode::fgsm) {
                auto& p = pairs[r.sample_id];
                p.sample_id = r.sample_id;
                p.eps_fgsm = r.eps_star;
                p.theta1_fgsm = r.theta1;
                p.both_crossed = r.crossed;
            }
        }
        for (const auto& r : out.rows) {
            if (r.mode == DirectionMode::rand_jump_fgsm) {
                auto it = pairs.find(r.sample_id);
                if (it == pairs.end()) continue;
                it->second.eps_jump = r.eps_star;
                it->second.both_crossed = it->second.both_crossed && r.crossed;
            }
        }
        for (auto& [id, p] : pairs) out.jump_pairs.push_back(p);
    }
    return out;
}

}  // namespace curvprobe

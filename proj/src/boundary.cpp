#include "curvprobe/boundary.hpp"

#include <algorithm>
#include <cmath>

namespace curvprobe {

void TravelParams::validate() const {
    if (eps_init <= 0.0 || eps_tol <= 0.0)
        throw ValueError("travel params: eps_init and eps_tol must be positive");
    if (eps_decay <= 0.0 || eps_decay >= 1.0)
        throw ValueError("travel params: eps_decay must lie in (0,1)");
    if (eps_max <= 0.0 || max_iters < 1)
        throw ValueError("travel params: eps_max and max_iters must be positive");
}

namespace {

void check_direction_norm(std::span<const float> d) {
    double n2 = 0.0;
    for (float v : d) n2 += double(v) * v;
    const double want = double(d.size());  // ||d||^2 = D
    if (std::abs(n2 - want) > 2e-4 * want)
        throw ValueError("travel: direction norm is " + std::to_string(std::sqrt(n2)) +
                         ", expected sqrt(D) = " + std::to_string(std::sqrt(want)));
}

std::vector<float> traveled_image(std::span<const float> x, std::span<const float> d, double eps) {
    std::vector<float> out(x.size());
    for (size_t i = 0; i < x.size(); ++i) out[i] = clip01(float(double(x[i]) + eps * d[i]));
    return out;
}

}  // namespace

int predict_traveled(const Classifier& model, std::span<const float> x,
                     std::span<const float> d, double eps) {
    const auto& cfg = model.config();
    auto img = traveled_image(x, d, eps);
    Tensor t = Tensor::from_data({1, cfg.in_channels, cfg.height, cfg.width}, std::move(img));
    return model.predict(t)[0].label;
}

std::vector<float> fgsm_direction(const Classifier& model, std::span<const float> x, int y) {
    const auto& cfg = model.config();
    if (int64_t(x.size()) != cfg.input_dim())
        throw ShapeError("fgsm_direction: input size " + std::to_string(x.size()) +
                         " does not match model input dim " + std::to_string(cfg.input_dim()));
    Tensor xt = Tensor::from_data({1, cfg.in_channels, cfg.height, cfg.width},
                                  std::vector<float>(x.begin(), x.end()), true);
    Tensor loss = cross_entropy(model.forward(xt, false).logits, {y});
    backward(loss);
    const auto g = xt.grad();
    bool any_nonzero = false;
    std::vector<float> d(g.size());
    for (size_t i = 0; i < g.size(); ++i) {
        if (!std::isfinite(g[i])) throw Error("fgsm_direction: non-finite input gradient");
        if (g[i] != 0.0f) any_nonzero = true;
        d[i] = g[i] < 0.0f ? -1.0f : 1.0f;  // sign, zeros map to +1
    }
    if (!any_nonzero) throw Error("fgsm_direction: input gradient is identically zero");
    return d;
}

TravelResult travel_to_boundary(const PredictImageFn& classify, std::span<const float> x,
                                int y, std::span<const float> d, const TravelParams& params) {
    params.validate();
    check_direction_norm(d);
    auto probe = [&](double eps) { return classify(traveled_image(x, d, eps)); };
    if (probe(0.0) != y)
        throw ValueError("travel: x must be correctly classified before traveling");

    TravelResult res;

    if (params.literal_alg) {
        // The published loop verbatim, kept behind a flag for comparison:
        // while (eps < eps_t) grow on correct / shrink on misclassified,
        // return the last traveled image. With eps_t read as a small
        // tolerance the body may never run at all.
        double eps = params.eps_init;
        double last_eps = 0.0;
        while (eps < params.eps_tol && res.iterations < params.max_iters) {
            last_eps = eps;
            res.iterations++;
            if (probe(eps) != y)
                eps *= params.eps_decay;
            else
                eps += eps;
        }
        res.crossed = res.iterations > 0 && probe(last_eps) != y;
        res.eps_star = last_eps;
        res.x_prime = traveled_image(x, d, last_eps);
        res.bracket_hi = res.crossed ? last_eps : res.bracket_hi;
        return res;
    }

    double eps = params.eps_init;
    double hi = std::numeric_limits<double>::infinity();  // min misclassified length
    std::vector<double> correct_probes{0.0};              // C(x) = y established above

    auto bracket_lo = [&] {
        double lo = 0.0;
        for (double e : correct_probes)
            if (e < hi) lo = std::max(lo, e);
        return lo;
    };

    while (res.iterations < params.max_iters) {
        const int pred = probe(eps);
        res.iterations++;
        if (pred != y) {
            res.crossed = true;
            hi = std::min(hi, eps);
            if ((hi - bracket_lo()) / hi < params.eps_tol) break;
            eps *= params.eps_decay;
        } else {
            correct_probes.push_back(eps);
            if (!res.crossed && eps >= params.eps_max) break;  // boundary out of reach
            eps += eps;
        }
    }
    if (res.crossed) {
        res.eps_star = hi;
        res.bracket_hi = hi;
        res.bracket_lo = bracket_lo();
        res.x_prime = traveled_image(x, d, hi);
    }
    return res;
}

TravelResult travel_to_boundary(const Classifier& model, std::span<const float> x, int y,
                                std::span<const float> d, const TravelParams& params) {
    const auto& cfg = model.config();
    if (int64_t(x.size()) != cfg.input_dim())
        throw ShapeError("travel: input size " + std::to_string(x.size()) +
                         " does not match model input dim " + std::to_string(cfg.input_dim()));
    PredictImageFn classify = [&](std::span<const float> img) {
        Tensor t = Tensor::from_data({1, cfg.in_channels, cfg.height, cfg.width},
                                     std::vector<float>(img.begin(), img.end()));
        return model.predict(t)[0].label;
    };
    return travel_to_boundary(classify, x, y, d, params);
}

EpsVsConfidence epsilon_vs_confidence(const Classifier& model, const Dataset& ds,
                                      const TravelParams& params, int jobs) {
    EpsVsConfidence out;
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
    out.rows.resize(correct.size());
    parallel_for(correct.size(), jobs, [&](size_t j) {
        const size_t i = correct[j];
        const auto x = ds.image(i);
        const auto d = fgsm_direction(model, x, ds.labels[i]);
        const auto r = travel_to_boundary(model, x, ds.labels[i], d, params);
        out.rows[j] = {int64_t(i), preds[i].confidence, r.crossed ? r.eps_star : 0.0, r.crossed};
    });

    constexpr int kBins = 10;
    std::vector<double> sums(kBins, 0.0);
    std::vector<size_t> counts(kBins, 0);
    for (const auto& row : out.rows) {
        if (!row.crossed) continue;
        const int b = std::min(kBins - 1, int(row.confidence * kBins));
        sums[size_t(b)] += row.eps_star;
        counts[size_t(b)]++;
    }
    for (int b = 0; b < kBins; ++b)
        out.bin_means.push_back(
            {(b + 0.5) / kBins,
             counts[size_t(b)] ? sums[size_t(b)] / double(counts[size_t(b)]) : 0.0,
             counts[size_t(b)]});
    return out;
}

}  // namespace curvprobe

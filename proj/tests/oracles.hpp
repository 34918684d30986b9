// Test-only oracles, independent of the implementation paths they check:
// central finite differences for gradients, brute-force confidence binning,
// analytic linear classifiers with known boundary distances, and a
// plain-loop Pearson correlation.
#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <vector>

#include "curvprobe/common.hpp"

namespace oracles {

// Central finite differences: df/dx_i ~ (f(x+he_i) - f(x-he_i)) / 2h.
// f must be a pure function of x.
inline std::vector<double> finite_diff_grad(
    const std::function<double(const std::vector<float>&)>& f,
    std::vector<float> x, double h = 1e-3) {
    std::vector<double> g(x.size());
    for (size_t i = 0; i < x.size(); ++i) {
        const float orig = x[i];
        x[i] = float(orig + h);
        const double fp = f(x);
        x[i] = float(orig - h);
        const double fm = f(x);
        x[i] = orig;
        g[i] = (fp - fm) / (2.0 * h);
    }
    return g;
}

// Relative error between the analytic gradient and the FD gradient as
// vectors: ||a - fd|| / max(||a||, ||fd||). Per-component ratios are
// meaningless where a component is near zero.
inline double max_rel_error(const std::vector<double>& analytic,
                            const std::vector<double>& fd) {
    double diff2 = 0.0, na2 = 0.0, nf2 = 0.0;
    for (size_t i = 0; i < analytic.size(); ++i) {
        const double d = analytic[i] - fd[i];
        diff2 += d * d;
        na2 += analytic[i] * analytic[i];
        nf2 += fd[i] * fd[i];
    }
    const double denom = std::max({std::sqrt(na2), std::sqrt(nf2), 1e-12});
    return std::sqrt(diff2) / denom;
}

// Brute-force calibration: equal-width bins over (0,1], membership decided
// by direct comparison lo < c <= hi per bin. Mirrors the spec contract with
// a linear scan instead of index arithmetic.
struct BruteBin {
    double lo = 0.0, hi = 0.0;
    size_t count = 0;
    double frac = 0.0, accuracy = 0.0, mean_confidence = 0.0;
};

struct BruteCalibration {
    std::vector<BruteBin> bins;
    double ece = 0.0, sece = 0.0;
};

inline BruteCalibration brute_force_calibration(
    const std::vector<std::pair<double, bool>>& preds, int k) {
    BruteCalibration r;
    r.bins.resize(size_t(k));
    for (int i = 0; i < k; ++i) {
        r.bins[size_t(i)].lo = double(i) / k;
        r.bins[size_t(i)].hi = double(i + 1) / k;
    }
    std::vector<double> conf_sum(size_t(k), 0.0);
    std::vector<size_t> correct(size_t(k), 0);
    for (const auto& [c, ok] : preds) {
        for (int i = 0; i < k; ++i) {
            if (c > r.bins[size_t(i)].lo && c <= r.bins[size_t(i)].hi) {
                r.bins[size_t(i)].count++;
                conf_sum[size_t(i)] += c;
                if (ok) correct[size_t(i)]++;
                break;
            }
        }
    }
    const double n = double(preds.size());
    for (int i = 0; i < k; ++i) {
        auto& b = r.bins[size_t(i)];
        if (b.count > 0) {
            b.frac = double(b.count) / n;
            b.accuracy = double(correct[size_t(i)]) / double(b.count);
            b.mean_confidence = conf_sum[size_t(i)] / double(b.count);
        }
        r.ece += b.frac * std::abs(b.accuracy - b.mean_confidence);
        r.sece += b.frac * (b.accuracy - b.mean_confidence);
    }
    return r;
}

// A 2-class linear classifier over R^dim: score(x) = w.(x - x0). Class 0
// where score < margin... constructed so that starting from x0 (class 0,
// i.e. y=0) and walking along direction d, the prediction flips exactly at
// travel length t: logit1 - logit0 = a * (eps - t) for a > 0.
struct LinearBoundary {
    std::vector<float> w0, w1;  // per-class weight rows
    std::vector<float> b{0.0f, 0.0f};
    double boundary_t;  // analytic flip distance along d from x0

    // logits for input x
    std::vector<float> logits(const std::vector<float>& x) const {
        float l0 = b[0], l1 = b[1];
        for (size_t i = 0; i < x.size(); ++i) {
            l0 += w0[i] * x[i];
            l1 += w1[i] * x[i];
        }
        return {l0, l1};
    }
    int predict(const std::vector<float>& x) const {
        const auto l = logits(x);
        return l[1] > l[0] ? 1 : 0;
    }
};

// Builds a linear 2-class model whose decision flip along direction d from
// point x0 happens at travel length exactly t:  (w1-w0).d * eps = gap at
// eps = t. Takes care that x0 + eps*d stays inside [0,1]^dim so pixel
// clipping does not move the boundary.
inline LinearBoundary make_linear_boundary(const std::vector<float>& x0,
                                           const std::vector<float>& d,
                                           double t, double slope = 4.0) {
    LinearBoundary m;
    const size_t n = x0.size();
    m.w0.assign(n, 0.0f);
    m.w1.assign(n, 0.0f);
    double dd = 0.0;
    for (size_t i = 0; i < n; ++i) dd += double(d[i]) * d[i];
    // w1 - w0 = slope * d / (d.d)  =>  (w1-w0).(eps*d) = slope * eps
    double x0_dot_d = 0.0;
    for (size_t i = 0; i < n; ++i) {
        const float wdiff = float(slope * double(d[i]) / dd);
        m.w1[i] = wdiff;  // w0 stays zero
        x0_dot_d += double(m.w1[i]) * x0[i];
    }
    // score(x0 + eps d) = slope*eps + x0.wdiff + b1 - b0 ; zero at eps = t
    m.b[1] = float(-slope * t - x0_dot_d);
    m.boundary_t = t;
    return m;
}

inline std::optional<double> pearson(const std::vector<double>& x,
                                     const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2) return std::nullopt;
    const double n = double(x.size());
    double mx = 0.0, my = 0.0;
    for (size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxx = 0.0, syy = 0.0, sxy = 0.0;
    for (size_t i = 0; i < x.size(); ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
        sxy += (x[i] - mx) * (y[i] - my);
    }
    if (sxx <= 0.0 || syy <= 0.0) return std::nullopt;
    return sxy / std::sqrt(sxx * syy);
}

}  // namespace oracles

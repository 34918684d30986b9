#include "curvprobe/projection.hpp"

#include <algorithm>
#include <cmath>

namespace curvprobe {

std::string basis_name(ProjectionBasis b) {
    return b == ProjectionBasis::random_orthonormal ? "random_orthonormal" : "pca_top2";
}

ProjectionBasis basis_from_name(const std::string& s) {
    if (s == "random_orthonormal") return ProjectionBasis::random_orthonormal;
    if (s == "pca_top2") return ProjectionBasis::pca_top2;
    throw ValueError("unknown projection basis '" + s + "'");
}

void GridVizConfig::validate() const {
    if (n_half < 1) throw ValueError("gridviz: N must be >= 1");
    if (alpha < 0.0) throw ValueError("gridviz: alpha must be >= 0 (0 = auto)");
    if (eps_r < 0.0) throw ValueError("gridviz: eps_r must be >= 0");
}

GridFeatures grid_features_core(const PenultimateFn& features, std::span<const float> center,
                                std::span<const float> d, std::span<const float> d_perp,
                                double alpha, int n_half) {
    if (center.size() != d.size() || center.size() != d_perp.size())
        throw ShapeError("gridviz: center/direction size mismatch");
    const int N = n_half;
    const size_t side = size_t(2 * N + 1);
    std::vector<std::vector<float>> images(side * side, std::vector<float>{});
    for (int i = -N; i <= N; ++i)
        for (int j = -N; j <= N; ++j) {
            const double ci = alpha * double(i) / double(N);
            const double cj = alpha * double(j) / double(N);
            std::vector<float> img(center.size());
            for (size_t p = 0; p < center.size(); ++p)
                img[p] = clip01(float(double(center[p]) + ci * d[p] + cj * d_perp[p]));
            images[size_t(i + N) * side + size_t(j + N)] = std::move(img);
        }
    GridFeatures out;
    out.n_half = N;
    out.alpha = alpha;
    out.center.assign(center.begin(), center.end());
    out.z = features(images);
    out.feature_dim = out.z.empty() ? 0 : out.z[0].size();
    return out;
}

namespace {

GridFeatures grid_features_at(const Classifier& model, std::span<const float> center, int y,
                              const GridVizConfig& cfg) {
    const auto d = fgsm_direction(model, center, y);
    DirectionSpec perp_spec;
    perp_spec.mode = DirectionMode::fgsm_perp;
    perp_spec.seed = cfg.seed;
    const auto d_perp = make_direction(model, center, y, perp_spec).d;

    double alpha = cfg.alpha;
    if (alpha == 0.0) {
        // Tie the grid extent to the sample's own boundary scale so the
        // outermost points land around twice the crossing distance.
        if (model.predict(Tensor::from_data({1, model.config().in_channels,
                                             model.config().height, model.config().width},
                                            std::vector<float>(center.begin(), center.end())))[0]
                .label == y) {
            auto tr = travel_to_boundary(model, center, y, d, cfg.travel);
            alpha = tr.crossed ? 2.0 * tr.eps_star : 0.25;
        } else {
            alpha = 0.25;  // already past the boundary; fixed small extent
        }
    }
    return grid_features_core(model_features(model), center, d, d_perp, alpha, cfg.n_half);
}

}  // namespace

GridFeatures grid_features(const Classifier& model, std::span<const float> x, int y,
                           const GridVizConfig& cfg) {
    cfg.validate();
    if (cfg.eps_r > 0.0) return grid_after_jump(model, x, y, cfg);
    return grid_features_at(model, x, y, cfg);
}

GridFeatures grid_after_jump(const Classifier& model, std::span<const float> x, int y,
                             const GridVizConfig& cfg) {
    cfg.validate();
    Rng rng(mix_seed(cfg.seed, 0x4752494a));  // grid-jump stream
    std::vector<float> r(x.size());
    double n2 = 0.0;
    for (auto& v : r) {
        v = rng.normal_f();
        n2 += double(v) * v;
    }
    const double s = std::sqrt(double(x.size()) / n2);
    std::vector<float> center(x.size());
    for (size_t i = 0; i < x.size(); ++i)
        center[i] = clip01(float(double(x[i]) + cfg.eps_r * double(r[i]) * s));
    return grid_features_at(model, center, y, cfg);
}

namespace {

// Cyclic Jacobi eigensolver for a symmetric matrix. Good enough for the
// 64x64 covariance this module sees.
void jacobi_eigen(std::vector<double>& a, size_t n, std::vector<double>& eigvals,
                  std::vector<double>& eigvecs) {
    eigvecs.assign(n * n, 0.0);
    for (size_t i = 0; i < n; ++i) eigvecs[i * n + i] = 1.0;
    for (int sweep = 0; sweep < 64; ++sweep) {
        double off = 0.0;
        for (size_t p = 0; p < n; ++p)
            for (size_t q = p + 1; q < n; ++q) off += a[p * n + q] * a[p * n + q];
        if (off < 1e-24) break;
        for (size_t p = 0; p < n; ++p)
            for (size_t q = p + 1; q < n; ++q) {
                const double apq = a[p * n + q];
                if (std::abs(apq) < 1e-300) continue;
                const double app = a[p * n + p];
                const double aqq = a[q * n + q];
                const double tau = (aqq - app) / (2.0 * apq);
                const double t = (tau >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(tau) + std::sqrt(1.0 + tau * tau));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = t * c;
                for (size_t k = 0; k < n; ++k) {
                    const double akp = a[k * n + p];
                    const double akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for (size_t k = 0; k < n; ++k) {
                    const double apk = a[p * n + k];
                    const double aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for (size_t k = 0; k < n; ++k) {
                    const double vkp = eigvecs[k * n + p];
                    const double vkq = eigvecs[k * n + q];
                    eigvecs[k * n + p] = c * vkp - s * vkq;
                    eigvecs[k * n + q] = s * vkp + c * vkq;
                }
            }
    }
    eigvals.resize(n);
    for (size_t i = 0; i < n; ++i) eigvals[i] = a[i * n + i];
}

std::pair<std::vector<double>, std::vector<double>> random_orthonormal_pair(Rng& rng, size_t fd) {
    std::vector<double> b1(fd), b2(fd);
    for (;;) {
        double n1 = 0.0;
        for (auto& v : b1) {
            v = rng.normal();
            n1 += v * v;
        }
        if (n1 < 1e-12) continue;
        for (auto& v : b1) v /= std::sqrt(n1);
        double dot = 0.0, n2 = 0.0;
        for (size_t i = 0; i < fd; ++i) {
            b2[i] = rng.normal();
            dot += b2[i] * b1[i];
        }
        for (size_t i = 0; i < fd; ++i) {
            b2[i] -= dot * b1[i];
            n2 += b2[i] * b2[i];
        }
        if (n2 < 1e-12) continue;
        for (auto& v : b2) v /= std::sqrt(n2);
        return {b1, b2};
    }
}

}  // namespace

Projected2d project2d_with_basis(const GridFeatures& grid, std::span<const double> b1,
                                 std::span<const double> b2) {
    if (b1.size() != grid.feature_dim || b2.size() != grid.feature_dim)
        throw ShapeError("project2d: basis dimension mismatch");
    double n1 = 0.0, n2 = 0.0, dot = 0.0;
    for (size_t i = 0; i < b1.size(); ++i) {
        n1 += b1[i] * b1[i];
        n2 += b2[i] * b2[i];
        dot += b1[i] * b2[i];
    }
    if (std::abs(n1 - 1.0) > 1e-6 || std::abs(n2 - 1.0) > 1e-6 || std::abs(dot) > 1e-6)
        throw ValueError("project2d: basis is not orthonormal within 1e-6");
    Projected2d out;
    out.n_half = grid.n_half;
    out.basis1.assign(b1.begin(), b1.end());
    out.basis2.assign(b2.begin(), b2.end());
    out.points.reserve(grid.z.size());
    for (const auto& z : grid.z) {
        double p1 = 0.0, p2 = 0.0;
        for (size_t i = 0; i < z.size(); ++i) {
            p1 += b1[i] * z[i];
            p2 += b2[i] * z[i];
        }
        out.points.push_back({p1, p2});
    }
    return out;
}

Projected2d project2d(const GridFeatures& grid, ProjectionBasis basis, uint64_t seed) {
    if (grid.z.empty() || grid.feature_dim == 0)
        throw ValueError("project2d: empty feature grid");
    const size_t fd = grid.feature_dim;
    Rng rng(mix_seed(seed, 0x50524f4aULL));  // projection stream

    if (basis == ProjectionBasis::pca_top2) {
        // PCA of the grid's own features; fall back to a random basis when
        // the grid does not span two directions.
        const size_t n = grid.z.size();
        std::vector<double> mean(fd, 0.0);
        for (const auto& z : grid.z)
            for (size_t i = 0; i < fd; ++i) mean[i] += z[i];
        for (auto& v : mean) v /= double(n);
        std::vector<double> cov(fd * fd, 0.0);
        for (const auto& z : grid.z)
            for (size_t i = 0; i < fd; ++i) {
                const double di = double(z[i]) - mean[i];
                for (size_t j = i; j < fd; ++j)
                    cov[i * fd + j] += di * (double(z[j]) - mean[j]);
            }
        double trace = 0.0;
        for (size_t i = 0; i < fd; ++i) {
            for (size_t j = i; j < fd; ++j) {
                cov[i * fd + j] /= double(n);
                cov[j * fd + i] = cov[i * fd + j];
            }
            trace += cov[i * fd + i];
        }
        std::vector<double> eigvals, eigvecs;
        jacobi_eigen(cov, fd, eigvals, eigvecs);
        size_t i1 = 0, i2 = 1;
        for (size_t i = 1; i < fd; ++i)
            if (eigvals[i] > eigvals[i1]) i1 = i;
        i2 = i1 == 0 ? 1 : 0;
        for (size_t i = 0; i < fd; ++i)
            if (i != i1 && eigvals[i] > eigvals[i2]) i2 = i;
        const bool degenerate = trace <= 0.0 || eigvals[i2] <= 1e-12 * std::max(trace, 1e-300);
        if (!degenerate) {
            std::vector<double> b1(fd), b2(fd);
            for (size_t k = 0; k < fd; ++k) {
                b1[k] = eigvecs[k * fd + i1];
                b2[k] = eigvecs[k * fd + i2];
            }
            // Jacobi leaves the columns orthonormal to machine precision;
            // one Gram-Schmidt pass tightens them to the 1e-6 contract.
            double n1 = 0.0;
            for (double v : b1) n1 += v * v;
            for (auto& v : b1) v /= std::sqrt(n1);
            double dot = 0.0;
            for (size_t k = 0; k < fd; ++k) dot += b1[k] * b2[k];
            double n2 = 0.0;
            for (size_t k = 0; k < fd; ++k) {
                b2[k] -= dot * b1[k];
                n2 += b2[k] * b2[k];
            }
            for (auto& v : b2) v /= std::sqrt(n2);
            return project2d_with_basis(grid, b1, b2);
        }
        auto [b1, b2] = random_orthonormal_pair(rng, fd);
        auto out = project2d_with_basis(grid, b1, b2);
        out.pca_fallback = true;
        return out;
    }

    auto [b1, b2] = random_orthonormal_pair(rng, fd);
    return project2d_with_basis(grid, b1, b2);
}

}  // namespace curvprobe

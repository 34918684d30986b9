#pragma once

#include <array>
#include <span>
#include <vector>

#include "curvprobe/trajectory.hpp"

namespace curvprobe {

enum class ProjectionBasis { random_orthonormal, pca_top2 };

std::string basis_name(ProjectionBasis b);
ProjectionBasis basis_from_name(const std::string& s);

struct GridVizConfig {
    double alpha = 0.0;  // grid extent; 0 = auto (2x the sample's boundary distance)
    int n_half = 7;      // N: the grid has (2N+1)^2 points
    ProjectionBasis basis = ProjectionBasis::pca_top2;
    uint64_t seed = 0;
    double eps_r = 0.0;       // > 0: center the grid on a randomly jumped input
    TravelParams travel;      // used only to derive alpha automatically

    void validate() const;
};

struct GridFeatures {
    int n_half = 0;
    size_t feature_dim = 0;
    double alpha = 0.0;
    // (2N+1)^2 rows; index (i+N)*(2N+1) + (j+N) for i,j in [-N, N].
    std::vector<std::vector<float>> z;
    std::vector<float> center;  // grid-center input (jumped when eps_r > 0)

    size_t side() const { return size_t(2 * n_half + 1); }
    const std::vector<float>& at(int i, int j) const {
        return z[size_t(i + n_half) * side() + size_t(j + n_half)];
    }
};

// Features over x_ij = center + (alpha*i/N) d + (alpha*j/N) d_perp, inputs
// clipped to [0,1] before the feature read.
GridFeatures grid_features_core(const PenultimateFn& features, std::span<const float> center,
                                std::span<const float> d, std::span<const float> d_perp,
                                double alpha, int n_half);

// Full pipeline: d = FGSM direction at the grid center, d_perp = random
// orthogonal direction; alpha auto-derived from boundary travel when 0.
GridFeatures grid_features(const Classifier& model, std::span<const float> x, int y,
                           const GridVizConfig& cfg);

// Identical pipeline with the center first jumped to clip01(x + eps_r * r).
GridFeatures grid_after_jump(const Classifier& model, std::span<const float> x, int y,
                             const GridVizConfig& cfg);

struct Projected2d {
    int n_half = 0;
    std::vector<std::array<double, 2>> points;  // same indexing as GridFeatures::z
    bool pca_fallback = false;  // pca was degenerate; random basis used instead
    std::vector<double> basis1, basis2;
};

Projected2d project2d(const GridFeatures& grid, ProjectionBasis basis, uint64_t seed);
// Projection onto a caller-supplied orthonormal pair (checked to 1e-6).
Projected2d project2d_with_basis(const GridFeatures& grid, std::span<const double> b1,
                                 std::span<const double> b2);

}  // namespace curvprobe

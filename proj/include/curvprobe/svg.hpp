#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

namespace curvprobe {

// Just enough SVG to render the toolkit's plots: scatters, bar charts and
// grid nets with axes. Data coordinates are mapped into a fixed viewport.
class SvgPlot {
public:
    SvgPlot(std::string title, std::string x_label, std::string y_label);

    void points(std::span<const std::array<double, 2>> pts, const std::string& color,
                double radius = 2.0, double opacity = 1.0);
    void polyline(std::span<const std::array<double, 2>> pts, const std::string& color,
                  double width = 1.5);
    // Vertical bars centered on x with the given width, from y=0 to y.
    // Per-bar opacities optional (used for count-weighted reliability bars).
    void bars(std::span<const std::array<double, 2>> xy, double bar_width,
              const std::string& color, std::span<const double> opacities = {});
    // Reference diagonal y = x across the current data range.
    void diagonal(const std::string& color = "#888888");
    // Connect 4-neighbors of a (2N+1)x(2N+1) grid of projected points.
    void grid_net(std::span<const std::array<double, 2>> pts, int n_half,
                  const std::string& color);

    void save(const std::string& path) const;

private:
    struct Mark {
        enum class Kind { point, line, bar, diagonal } kind;
        std::vector<std::array<double, 2>> pts;
        std::vector<double> opacities;
        std::string color;
        double size = 0.0;
        double opacity = 1.0;
    };
    void extend_range(std::span<const std::array<double, 2>> pts);

    std::string title_, x_label_, y_label_;
    std::vector<Mark> marks_;
    double min_x_ = 0.0, max_x_ = 0.0, min_y_ = 0.0, max_y_ = 0.0;
    bool has_data_ = false;
};

}  // namespace curvprobe

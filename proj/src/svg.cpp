#include "curvprobe/svg.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>

#include "curvprobe/common.hpp"

namespace curvprobe {

namespace {

constexpr double kWidth = 640.0, kHeight = 480.0;
constexpr double kMarginL = 64.0, kMarginR = 20.0, kMarginT = 40.0, kMarginB = 48.0;

std::string fmt(double v) {
    char buf[32];
    const auto r = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::fixed, 2);
    return std::string(buf, r.ptr);
}

std::string fmt_tick(double v) {
    char buf[32];
    const auto r = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general, 4);
    return std::string(buf, r.ptr);
}

}  // namespace

SvgPlot::SvgPlot(std::string title, std::string x_label, std::string y_label)
    : title_(std::move(title)), x_label_(std::move(x_label)), y_label_(std::move(y_label)) {}

void SvgPlot::extend_range(std::span<const std::array<double, 2>> pts) {
    for (const auto& p : pts) {
        if (!std::isfinite(p[0]) || !std::isfinite(p[1])) continue;
        if (!has_data_) {
            min_x_ = max_x_ = p[0];
            min_y_ = max_y_ = p[1];
            has_data_ = true;
        } else {
            min_x_ = std::min(min_x_, p[0]);
            max_x_ = std::max(max_x_, p[0]);
            min_y_ = std::min(min_y_, p[1]);
            max_y_ = std::max(max_y_, p[1]);
        }
    }
}

void SvgPlot::points(std::span<const std::array<double, 2>> pts, const std::string& color,
                     double radius, double opacity) {
    extend_range(pts);
    Mark m;
    m.kind = Mark::Kind::point;
    m.pts.assign(pts.begin(), pts.end());
    m.color = color;
    m.size = radius;
    m.opacity = opacity;
    marks_.push_back(std::move(m));
}

void SvgPlot::polyline(std::span<const std::array<double, 2>> pts, const std::string& color,
                       double width) {
    extend_range(pts);
    Mark m;
    m.kind = Mark::Kind::line;
    m.pts.assign(pts.begin(), pts.end());
    m.color = color;
    m.size = width;
    marks_.push_back(std::move(m));
}

void SvgPlot::bars(std::span<const std::array<double, 2>> xy, double bar_width,
                   const std::string& color, std::span<const double> opacities) {
    extend_range(xy);
    std::array<double, 2> base{0.0, 0.0};
    extend_range(std::span<const std::array<double, 2>>(&base, 1));
    Mark m;
    m.kind = Mark::Kind::bar;
    m.pts.assign(xy.begin(), xy.end());
    m.opacities.assign(opacities.begin(), opacities.end());
    m.color = color;
    m.size = bar_width;
    marks_.push_back(std::move(m));
}

void SvgPlot::diagonal(const std::string& color) {
    Mark m;
    m.kind = Mark::Kind::diagonal;
    m.color = color;
    marks_.push_back(std::move(m));
}

void SvgPlot::grid_net(std::span<const std::array<double, 2>> pts, int n_half,
                       const std::string& color) {
    extend_range(pts);
    const int side = 2 * n_half + 1;
    auto at = [&](int i, int j) { return pts[size_t(i) * size_t(side) + size_t(j)]; };
    for (int i = 0; i < side; ++i) {
        std::vector<std::array<double, 2>> row, col;
        for (int j = 0; j < side; ++j) {
            row.push_back(at(i, j));
            col.push_back(at(j, i));
        }
        polyline(row, color, 1.0);
        polyline(col, color, 1.0);
    }
    points(pts, color, 2.0);
}

void SvgPlot::save(const std::string& path) const {
    double lo_x = has_data_ ? min_x_ : 0.0, hi_x = has_data_ ? max_x_ : 1.0;
    double lo_y = has_data_ ? min_y_ : 0.0, hi_y = has_data_ ? max_y_ : 1.0;
    if (hi_x == lo_x) {
        hi_x += 1.0;
        lo_x -= 1.0;
    }
    if (hi_y == lo_y) {
        hi_y += 1.0;
        lo_y -= 1.0;
    }
    const double pad_x = 0.04 * (hi_x - lo_x), pad_y = 0.04 * (hi_y - lo_y);
    lo_x -= pad_x;
    hi_x += pad_x;
    lo_y -= pad_y;
    hi_y += pad_y;
    auto sx = [&](double x) {
        return kMarginL + (x - lo_x) / (hi_x - lo_x) * (kWidth - kMarginL - kMarginR);
    };
    auto sy = [&](double y) {
        return kHeight - kMarginB - (y - lo_y) / (hi_y - lo_y) * (kHeight - kMarginT - kMarginB);
    };

    std::string s;
    s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fmt(kWidth) + "\" height=\"" +
         fmt(kHeight) + "\" viewBox=\"0 0 " + fmt(kWidth) + " " + fmt(kHeight) + "\">\n";
    s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    s += "<text x=\"" + fmt(kWidth / 2) + "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" +
         title_ + "</text>\n";
    // axes
    s += "<line x1=\"" + fmt(kMarginL) + "\" y1=\"" + fmt(kHeight - kMarginB) + "\" x2=\"" +
         fmt(kWidth - kMarginR) + "\" y2=\"" + fmt(kHeight - kMarginB) +
         "\" stroke=\"black\"/>\n";
    s += "<line x1=\"" + fmt(kMarginL) + "\" y1=\"" + fmt(kMarginT) + "\" x2=\"" + fmt(kMarginL) +
         "\" y2=\"" + fmt(kHeight - kMarginB) + "\" stroke=\"black\"/>\n";
    s += "<text x=\"" + fmt(kWidth / 2) + "\" y=\"" + fmt(kHeight - 10) +
         "\" text-anchor=\"middle\" font-size=\"12\">" + x_label_ + "</text>\n";
    s += "<text x=\"16\" y=\"" + fmt(kHeight / 2) +
         "\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 16 " +
         fmt(kHeight / 2) + ")\">" + y_label_ + "</text>\n";
    // min/max ticks
    s += "<text x=\"" + fmt(kMarginL) + "\" y=\"" + fmt(kHeight - kMarginB + 16) +
         "\" font-size=\"10\">" + fmt_tick(lo_x + pad_x) + "</text>\n";
    s += "<text x=\"" + fmt(kWidth - kMarginR) + "\" y=\"" + fmt(kHeight - kMarginB + 16) +
         "\" text-anchor=\"end\" font-size=\"10\">" + fmt_tick(hi_x - pad_x) + "</text>\n";
    s += "<text x=\"" + fmt(kMarginL - 6) + "\" y=\"" + fmt(kHeight - kMarginB) +
         "\" text-anchor=\"end\" font-size=\"10\">" + fmt_tick(lo_y + pad_y) + "</text>\n";
    s += "<text x=\"" + fmt(kMarginL - 6) + "\" y=\"" + fmt(kMarginT + 4) +
         "\" text-anchor=\"end\" font-size=\"10\">" + fmt_tick(hi_y - pad_y) + "</text>\n";

    for (const auto& m : marks_) {
        switch (m.kind) {
            case Mark::Kind::point:
                for (const auto& p : m.pts) {
                    if (!std::isfinite(p[0]) || !std::isfinite(p[1])) continue;
                    s += "<circle cx=\"" + fmt(sx(p[0])) + "\" cy=\"" + fmt(sy(p[1])) +
                         "\" r=\"" + fmt(m.size) + "\" fill=\"" + m.color + "\" fill-opacity=\"" +
                         fmt(m.opacity) + "\"/>\n";
                }
                break;
            case Mark::Kind::line: {
                std::string pl;
                for (const auto& p : m.pts) {
                    if (!std::isfinite(p[0]) || !std::isfinite(p[1])) continue;
                    pl += fmt(sx(p[0])) + "," + fmt(sy(p[1])) + " ";
                }
                s += "<polyline points=\"" + pl + "\" fill=\"none\" stroke=\"" + m.color +
                     "\" stroke-width=\"" + fmt(m.size) + "\"/>\n";
                break;
            }
            case Mark::Kind::bar:
                for (size_t i = 0; i < m.pts.size(); ++i) {
                    const auto& p = m.pts[i];
                    const double x0 = sx(p[0] - m.size / 2);
                    const double x1 = sx(p[0] + m.size / 2);
                    const double y0 = sy(std::max(0.0, p[1]));
                    const double y1 = sy(std::min(0.0, p[1]));
                    const double op = i < m.opacities.size() ? m.opacities[i] : 1.0;
                    s += "<rect x=\"" + fmt(x0) + "\" y=\"" + fmt(y0) + "\" width=\"" +
                         fmt(x1 - x0) + "\" height=\"" + fmt(std::max(0.5, y1 - y0)) +
                         "\" fill=\"" + m.color + "\" fill-opacity=\"" + fmt(op) +
                         "\" stroke=\"none\"/>\n";
                }
                break;
            case Mark::Kind::diagonal: {
                const double lo = std::max(lo_x, lo_y), hi = std::min(hi_x, hi_y);
                s += "<line x1=\"" + fmt(sx(lo)) + "\" y1=\"" + fmt(sy(lo)) + "\" x2=\"" +
                     fmt(sx(hi)) + "\" y2=\"" + fmt(sy(hi)) + "\" stroke=\"" + m.color +
                     "\" stroke-dasharray=\"4 3\"/>\n";
                break;
            }
        }
    }
    s += "</svg>\n";

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("svg: cannot open for writing: " + path);
    out.write(s.data(), std::streamsize(s.size()));
}

}  // namespace curvprobe

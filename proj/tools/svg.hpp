#pragma once

// Hand-emitted SVG polyline charts; no plotting dependency, no timestamps, so
// rerunning a sweep reproduces the file byte for byte.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "mlsr/common.hpp"

namespace mlsr::svg {

struct Series {
    std::string label;
    std::vector<double> x;
    std::vector<double> y;
};

namespace detail {

inline std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}

}  // namespace detail

// One stacked panel per series, shared x axis semantics, labeled ticks.
inline void write_chart(const std::string& path, const std::string& title,
                        const std::string& x_label, const std::vector<Series>& series) {
    const int width = 640;
    const int panel_h = 240;
    const int margin_l = 72, margin_r = 24, margin_t = 40, margin_b = 48;
    const int height = margin_t + static_cast<int>(series.size()) * panel_h + margin_b;

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write chart " + path);
    f << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" font-family=\"monospace\" font-size=\"12\">\n";
    f << "<text x=\"" << width / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">"
      << title << "</text>\n";

    for (std::size_t s = 0; s < series.size(); ++s) {
        const auto& ser = series[s];
        if (ser.x.empty()) continue;
        double xmin = *std::min_element(ser.x.begin(), ser.x.end());
        double xmax = *std::max_element(ser.x.begin(), ser.x.end());
        double ymin = *std::min_element(ser.y.begin(), ser.y.end());
        double ymax = *std::max_element(ser.y.begin(), ser.y.end());
        if (xmax == xmin) {
            xmin -= 1;
            xmax += 1;
        }
        if (ymax == ymin) {
            ymin -= 1;
            ymax += 1;
        }
        const double pad_y = 0.08 * (ymax - ymin);
        ymin -= pad_y;
        ymax += pad_y;

        const int top = margin_t + static_cast<int>(s) * panel_h;
        const int bottom = top + panel_h - 40;
        const int left = margin_l, right = width - margin_r;
        auto px = [&](double v) { return left + (v - xmin) / (xmax - xmin) * (right - left); };
        auto py = [&](double v) { return bottom - (v - ymin) / (ymax - ymin) * (bottom - top - 16); };

        f << "<rect x=\"" << left << "\" y=\"" << top + 16 << "\" width=\"" << right - left
          << "\" height=\"" << bottom - top - 16 << "\" fill=\"none\" stroke=\"#999\"/>\n";
        f << "<text x=\"" << left << "\" y=\"" << top + 12 << "\">" << ser.label << "</text>\n";

        for (int tick = 0; tick <= 4; ++tick) {
            const double xv = xmin + tick * (xmax - xmin) / 4;
            const double yv = ymin + tick * (ymax - ymin) / 4;
            f << "<text x=\"" << px(xv) << "\" y=\"" << bottom + 16
              << "\" text-anchor=\"middle\">" << detail::fmt(xv) << "</text>\n";
            f << "<text x=\"" << left - 6 << "\" y=\"" << py(yv) + 4
              << "\" text-anchor=\"end\">" << detail::fmt(yv) << "</text>\n";
        }

        f << "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"2\" points=\"";
        for (std::size_t i = 0; i < ser.x.size(); ++i) {
            f << detail::fmt(px(ser.x[i])) << ',' << detail::fmt(py(ser.y[i])) << ' ';
        }
        f << "\"/>\n";
        for (std::size_t i = 0; i < ser.x.size(); ++i) {
            f << "<circle cx=\"" << detail::fmt(px(ser.x[i])) << "\" cy=\""
              << detail::fmt(py(ser.y[i])) << "\" r=\"3\" fill=\"#1f77b4\"/>\n";
        }
    }
    f << "<text x=\"" << width / 2 << "\" y=\"" << height - 12
      << "\" text-anchor=\"middle\">" << x_label << "</text>\n";
    f << "</svg>\n";
}

}  // namespace mlsr::svg

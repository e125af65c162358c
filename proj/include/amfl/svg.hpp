#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>
#include <vector>

namespace amfl {

struct ChartSeries {
    std::string name;
    std::vector<double> x;
    std::vector<double> y;
};

/// Minimal self-contained SVG line chart: one polyline per series, dashed
/// horizontal reference lines (budgets), axis ticks, legend.
inline void write_line_chart(const std::string& path, const std::string& title,
                             const std::string& x_label, const std::string& y_label,
                             const std::vector<ChartSeries>& series,
                             const std::vector<std::pair<std::string, double>>& hlines = {}) {
    const double W = 760, H = 420, L = 70, R = 170, T = 46, B = 52;
    double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
    for (const auto& s : series)
        for (size_t i = 0; i < s.x.size(); ++i) {
            xmin = std::min(xmin, s.x[i]);
            xmax = std::max(xmax, s.x[i]);
            ymin = std::min(ymin, s.y[i]);
            ymax = std::max(ymax, s.y[i]);
        }
    for (const auto& h : hlines) {
        ymin = std::min(ymin, h.second);
        ymax = std::max(ymax, h.second);
    }
    if (xmin > xmax) { xmin = 0; xmax = 1; }
    if (ymin > ymax) { ymin = 0; ymax = 1; }
    if (xmax - xmin < 1e-12) { xmax = xmin + 1; }
    if (ymax - ymin < 1e-12) { ymax = ymin + 1e-6; }
    const double pad = 0.05 * (ymax - ymin);
    ymin -= pad;
    ymax += pad;

    auto px = [&](double x) { return L + (x - xmin) / (xmax - xmin) * (W - L - R); };
    auto py = [&](double y) { return H - B - (y - ymin) / (ymax - ymin) * (H - T - B); };
    static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                   "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};

    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write chart: " + path);
    out << "<svg xmlns='http://www.w3.org/2000/svg' width='" << W << "' height='" << H << "'>\n";
    out << "<rect width='100%' height='100%' fill='white'/>\n";
    out << "<text x='" << W / 2 << "' y='22' text-anchor='middle' font-size='15' "
           "font-family='sans-serif'>" << title << "</text>\n";
    out << "<line x1='" << L << "' y1='" << H - B << "' x2='" << W - R << "' y2='" << H - B
        << "' stroke='black'/>\n";
    out << "<line x1='" << L << "' y1='" << T << "' x2='" << L << "' y2='" << H - B
        << "' stroke='black'/>\n";
    for (int t = 0; t <= 5; ++t) {
        const double xv = xmin + t * (xmax - xmin) / 5;
        const double yv = ymin + t * (ymax - ymin) / 5;
        out << "<text x='" << px(xv) << "' y='" << H - B + 18
            << "' text-anchor='middle' font-size='11' font-family='sans-serif'>" << xv << "</text>\n";
        out << "<text x='" << L - 8 << "' y='" << py(yv) + 4
            << "' text-anchor='end' font-size='11' font-family='sans-serif'>" << yv << "</text>\n";
        out << "<line x1='" << L << "' y1='" << py(yv) << "' x2='" << W - R << "' y2='" << py(yv)
            << "' stroke='#eeeeee'/>\n";
    }
    out << "<text x='" << (L + W - R) / 2 << "' y='" << H - 12
        << "' text-anchor='middle' font-size='12' font-family='sans-serif'>" << x_label << "</text>\n";
    out << "<text x='18' y='" << (T + H - B) / 2
        << "' text-anchor='middle' font-size='12' font-family='sans-serif' transform='rotate(-90 18 "
        << (T + H - B) / 2 << ")'>" << y_label << "</text>\n";

    for (const auto& h : hlines) {
        out << "<line x1='" << L << "' y1='" << py(h.second) << "' x2='" << W - R << "' y2='"
            << py(h.second) << "' stroke='#555555' stroke-dasharray='6,4'/>\n";
        out << "<text x='" << W - R + 6 << "' y='" << py(h.second) + 4
            << "' font-size='11' font-family='sans-serif'>" << h.first << "=" << h.second << "</text>\n";
    }
    int ci = 0;
    double ly = T + 10;
    for (const auto& s : series) {
        const char* color = colors[ci++ % 8];
        out << "<polyline fill='none' stroke='" << color << "' stroke-width='1.5' points='";
        for (size_t i = 0; i < s.x.size(); ++i) out << px(s.x[i]) << ',' << py(s.y[i]) << ' ';
        out << "'/>\n";
        out << "<line x1='" << W - R + 6 << "' y1='" << ly << "' x2='" << W - R + 26 << "' y2='" << ly
            << "' stroke='" << color << "' stroke-width='2'/>\n";
        out << "<text x='" << W - R + 32 << "' y='" << ly + 4
            << "' font-size='11' font-family='sans-serif'>" << s.name << "</text>\n";
        ly += 16;
    }
    out << "</svg>\n";
}

} // namespace amfl

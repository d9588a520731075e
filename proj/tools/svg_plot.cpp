#include "svg_plot.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "ndgan/error.hpp"

namespace ndgan::plot {
namespace {

constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf"};

std::string escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '&': out += "&amp;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

// Roughly five "nice" tick values covering [lo, hi].
std::vector<double> ticks(double lo, double hi) {
    const double span = hi - lo;
    const double raw = span / 5.0;
    const double mag = std::pow(10.0, std::floor(std::log10(raw)));
    double step = mag;
    for (double m : {1.0, 2.0, 5.0, 10.0}) {
        if (raw <= m * mag) {
            step = m * mag;
            break;
        }
    }
    std::vector<double> out;
    for (double t = std::ceil(lo / step) * step; t <= hi + 1e-9 * span; t += step) out.push_back(t);
    return out;
}

std::string fmt(double v) {
    std::ostringstream os;
    os.precision(4);
    os << v;
    return os.str();
}

}  // namespace

std::string render_svg(const Chart& chart, int width, int height) {
    double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin, ymin = xmin, ymax = -xmin;
    for (const auto& s : chart.series) {
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
            xmin = std::min(xmin, s.x[i]);
            xmax = std::max(xmax, s.x[i]);
            ymin = std::min(ymin, s.y[i]);
            ymax = std::max(ymax, s.y[i]);
        }
    }
    if (chart.reference_y) {
        ymin = std::min(ymin, *chart.reference_y);
        ymax = std::max(ymax, *chart.reference_y);
    }
    if (!std::isfinite(xmin)) throw InputError("plot: nothing to draw for '" + chart.title + "'");
    if (xmax == xmin) xmax = xmin + 1.0;
    if (ymax == ymin) {
        ymin -= 0.5;
        ymax += 0.5;
    }
    const double pad = 0.05 * (ymax - ymin);
    ymin -= pad;
    ymax += pad;

    const double left = 70, right = 170, top = 40, bottom = 55;
    const double pw = width - left - right, ph = height - top - bottom;
    auto sx = [&](double x) { return left + (x - xmin) / (xmax - xmin) * pw; };
    auto sy = [&](double y) { return top + (1.0 - (y - ymin) / (ymax - ymin)) * ph; };

    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
       << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<text x=\"" << width / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << escape(chart.title)
       << "</text>\n";
    for (double t : ticks(xmin, xmax)) {
        os << "<line x1=\"" << sx(t) << "\" y1=\"" << top << "\" x2=\"" << sx(t) << "\" y2=\"" << top + ph
           << "\" stroke=\"#eee\"/>\n";
        os << "<text x=\"" << sx(t) << "\" y=\"" << top + ph + 16 << "\" text-anchor=\"middle\">" << fmt(t)
           << "</text>\n";
    }
    for (double t : ticks(ymin, ymax)) {
        os << "<line x1=\"" << left << "\" y1=\"" << sy(t) << "\" x2=\"" << left + pw << "\" y2=\"" << sy(t)
           << "\" stroke=\"#eee\"/>\n";
        os << "<text x=\"" << left - 6 << "\" y=\"" << sy(t) + 4 << "\" text-anchor=\"end\">" << fmt(t) << "</text>\n";
    }
    os << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph
       << "\" fill=\"none\" stroke=\"#333\"/>\n";
    os << "<text x=\"" << left + pw / 2 << "\" y=\"" << height - 12 << "\" text-anchor=\"middle\">"
       << escape(chart.x_label) << "</text>\n";
    os << "<text transform=\"translate(16," << top + ph / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
       << escape(chart.y_label) << "</text>\n";

    double legend_y = top + 10;
    if (chart.reference_y) {
        os << "<line x1=\"" << left << "\" y1=\"" << sy(*chart.reference_y) << "\" x2=\"" << left + pw << "\" y2=\""
           << sy(*chart.reference_y) << "\" stroke=\"#2ca02c\" stroke-width=\"2\" stroke-dasharray=\"6,4\"/>\n";
        os << "<line x1=\"" << left + pw + 12 << "\" y1=\"" << legend_y << "\" x2=\"" << left + pw + 36 << "\" y2=\""
           << legend_y << "\" stroke=\"#2ca02c\" stroke-width=\"2\" stroke-dasharray=\"6,4\"/>\n";
        os << "<text x=\"" << left + pw + 42 << "\" y=\"" << legend_y + 4 << "\">" << escape(chart.reference_label)
           << "</text>\n";
        legend_y += 18;
    }
    for (std::size_t i = 0; i < chart.series.size(); ++i) {
        const Series& s = chart.series[i];
        const char* color = kPalette[i % std::size(kPalette)];
        os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.6\" points=\"";
        for (std::size_t p = 0; p < s.x.size(); ++p) {
            if (std::isfinite(s.x[p]) && std::isfinite(s.y[p])) os << sx(s.x[p]) << ',' << sy(s.y[p]) << ' ';
        }
        os << "\"/>\n";
        if (s.markers) {
            for (std::size_t p = 0; p < s.x.size(); ++p) {
                if (!std::isfinite(s.y[p])) continue;
                os << "<circle cx=\"" << sx(s.x[p]) << "\" cy=\"" << sy(s.y[p]) << "\" r=\"3\" fill=\"" << color
                   << "\"/>\n";
            }
        }
        os << "<line x1=\"" << left + pw + 12 << "\" y1=\"" << legend_y << "\" x2=\"" << left + pw + 36 << "\" y2=\""
           << legend_y << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
        os << "<text x=\"" << left + pw + 42 << "\" y=\"" << legend_y + 4 << "\">" << escape(s.label) << "</text>\n";
        legend_y += 18;
    }
    os << "</svg>\n";
    return os.str();
}

void write_svg(const std::filesystem::path& path, const Chart& chart) {
    std::ofstream os(path);
    os << render_svg(chart);
    if (!os) throw Error("plot: cannot write " + path.string());
}

}  // namespace ndgan::plot

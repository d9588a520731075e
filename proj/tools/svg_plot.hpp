#pragma once

// Minimal line-chart writer producing standalone SVG files.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace ndgan::plot {

struct Series {
    std::string label;
    std::vector<double> x, y;
    bool markers = false;
};

struct Chart {
    std::string title;
    std::string x_label;
    std::string y_label;
    std::vector<Series> series;
    // Horizontal reference line (drawn dashed) with its legend label.
    std::optional<double> reference_y;
    std::string reference_label;
};

std::string render_svg(const Chart& chart, int width = 720, int height = 440);
void write_svg(const std::filesystem::path& path, const Chart& chart);

}  // namespace ndgan::plot

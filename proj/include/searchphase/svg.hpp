#pragma once

#include <string>
#include <vector>

namespace searchphase {

struct PlotSpec {
    std::string x;
    std::vector<std::string> y;
    bool log_x = false;
    bool log_y = false;
    std::string title;
    int width = 720;
    int height = 440;
};

// Line plot of CSV columns. Depends only on the CSV text and the PlotSpec, so the
// same CSV always gives the same SVG. Non-finite points (and non-positive ones
// on a log axis) break the line.
std::string render_svg(const std::string& csv_text, const PlotSpec& spec);

}  // namespace searchphase

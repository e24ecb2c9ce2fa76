#include "searchphase/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include "searchphase/csv.hpp"
#include "searchphase/errors.hpp"

namespace searchphase {

namespace {

constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf"};

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

std::string tick_label(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3g", v);
    return buf;
}

std::string escape(const std::string& s) {
    std::string o;
    for (char c : s) {
        if (c == '<') o += "&lt;";
        else if (c == '>') o += "&gt;";
        else if (c == '&') o += "&amp;";
        else o += c;
    }
    return o;
}

struct Axis {
    bool log = false;
    double lo = 0, hi = 1;

    double map(double v) const { return log ? std::log10(v) : v; }
    bool usable(double v) const { return std::isfinite(v) && (!log || v > 0); }
    double frac(double v) const { return (map(v) - lo) / (hi - lo); }

    std::vector<double> ticks() const {
        std::vector<double> t;
        if (log) {
            for (double e = std::ceil(lo); e <= std::floor(hi) + 1e-9; e += 1.0) t.push_back(std::pow(10.0, e));
            if (t.size() < 2) t = {std::pow(10.0, lo), std::pow(10.0, hi)};
            return t;
        }
        const double span = hi - lo;
        const double raw = span / 5.0;
        const double mag = std::pow(10.0, std::floor(std::log10(raw)));
        double step = mag;
        for (double f : {1.0, 2.0, 5.0, 10.0})
            if (f * mag >= raw) {
                step = f * mag;
                break;
            }
        for (double v = std::ceil(lo / step) * step; v <= hi + 1e-9 * span; v += step) t.push_back(v);
        return t;
    }
};

Axis fit_axis(const std::vector<std::vector<double>>& cols, bool log) {
    Axis a;
    a.log = log;
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (const auto& c : cols)
        for (double v : c)
            if (a.usable(v)) {
                lo = std::min(lo, a.map(v));
                hi = std::max(hi, a.map(v));
            }
    if (!std::isfinite(lo)) lo = 0, hi = 1;
    if (hi - lo < 1e-12) {
        const double pad = std::max(std::abs(lo) * 0.05, log ? 0.5 : 1e-3);
        lo -= pad;
        hi += pad;
    }
    a.lo = lo;
    a.hi = hi;
    return a;
}

}  // namespace

std::string render_svg(const std::string& csv_text, const PlotSpec& spec) {
    const CsvTable t = parse_csv(csv_text);
    if (spec.y.empty()) throw InvalidArgument("plot needs at least one y column");
    const auto xs = t.numeric_column(spec.x);
    std::vector<std::vector<double>> ys;
    for (const auto& name : spec.y) ys.push_back(t.numeric_column(name));

    const Axis ax = fit_axis({xs}, spec.log_x);
    const Axis ay = fit_axis(ys, spec.log_y);
    const double W = spec.width, H = spec.height;
    const double L = 70, R = 20, T = 36, B = 48;
    const double pw = W - L - R, ph = H - T - B;
    auto px = [&](double v) { return L + ax.frac(v) * pw; };
    auto py = [&](double v) { return T + (1.0 - ay.frac(v)) * ph; };

    std::string s;
    s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(spec.width) + "\" height=\"" +
         std::to_string(spec.height) + "\" font-family=\"sans-serif\" font-size=\"11\">\n";
    s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    if (!spec.title.empty())
        s += "<text x=\"" + num(W / 2) + "\" y=\"20\" text-anchor=\"middle\" font-size=\"13\">" + escape(spec.title) +
             "</text>\n";
    s += "<rect x=\"" + num(L) + "\" y=\"" + num(T) + "\" width=\"" + num(pw) + "\" height=\"" + num(ph) +
         "\" fill=\"none\" stroke=\"#444\"/>\n";
    for (double v : ax.ticks()) {
        const double x = px(v);
        s += "<line x1=\"" + num(x) + "\" y1=\"" + num(T + ph) + "\" x2=\"" + num(x) + "\" y2=\"" + num(T + ph + 4) +
             "\" stroke=\"#444\"/>\n";
        s += "<text x=\"" + num(x) + "\" y=\"" + num(T + ph + 16) + "\" text-anchor=\"middle\">" + tick_label(v) +
             "</text>\n";
    }
    for (double v : ay.ticks()) {
        const double y = py(v);
        s += "<line x1=\"" + num(L - 4) + "\" y1=\"" + num(y) + "\" x2=\"" + num(L) + "\" y2=\"" + num(y) +
             "\" stroke=\"#444\"/>\n";
        s += "<text x=\"" + num(L - 6) + "\" y=\"" + num(y + 4) + "\" text-anchor=\"end\">" + tick_label(v) +
             "</text>\n";
    }
    s += "<text x=\"" + num(L + pw / 2) + "\" y=\"" + num(H - 10) + "\" text-anchor=\"middle\">" + escape(spec.x) +
         (spec.log_x ? " (log)" : "") + "</text>\n";

    for (std::size_t j = 0; j < ys.size(); ++j) {
        const char* colour = kPalette[j % (sizeof kPalette / sizeof *kPalette)];
        std::string pts;
        auto flush = [&] {
            if (!pts.empty())
                s += "<polyline fill=\"none\" stroke=\"" + std::string(colour) + "\" stroke-width=\"1.5\" points=\"" +
                     pts + "\"/>\n";
            pts.clear();
        };
        for (std::size_t i = 0; i < xs.size(); ++i) {
            if (!ax.usable(xs[i]) || !ay.usable(ys[j][i])) {
                flush();
                continue;
            }
            if (!pts.empty()) pts += ' ';
            pts += num(px(xs[i])) + "," + num(py(ys[j][i]));
        }
        flush();
        const double ly = T + 14 + 14.0 * static_cast<double>(j);
        s += "<line x1=\"" + num(L + pw - 120) + "\" y1=\"" + num(ly - 4) + "\" x2=\"" + num(L + pw - 100) +
             "\" y2=\"" + num(ly - 4) + "\" stroke=\"" + colour + "\" stroke-width=\"2\"/>\n";
        s += "<text x=\"" + num(L + pw - 96) + "\" y=\"" + num(ly) + "\">" + escape(spec.y[j]) +
             (spec.log_y ? " (log)" : "") + "</text>\n";
    }
    s += "</svg>\n";
    return s;
}

}  // namespace searchphase

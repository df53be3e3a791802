#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "culturemap/detail/text.hpp"
#include "culturemap/metrics.hpp"
#include "culturemap/projection.hpp"

namespace culturemap::svg {

inline std::string escape(std::string_view s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

inline std::string num(double v) { return detail::fmt_fixed(v, 2); }

inline constexpr std::array<const char*, 8> kPalette{"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728",
                                                     "#9467bd", "#8c564b", "#e377c2", "#17becf"};
inline constexpr const char* kNoZone = "#9a9a9a";

// Zones sorted by name get palette colors in order; empty zone is gray.
inline std::map<std::string, std::string> zone_colors(const std::vector<std::string>& zones) {
    std::vector<std::string> sorted(zones);
    std::sort(sorted.begin(), sorted.end());
    sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
    std::map<std::string, std::string> out;
    std::size_t i = 0;
    for (const auto& z : sorted) {
        if (z.empty()) continue;
        out[z] = kPalette[i++ % kPalette.size()];
    }
    return out;
}

struct PlotPoint {
    std::string label;
    MapPoint at;
    std::string group;  // zone for countries, regime for overlays
};

struct Segment {
    MapPoint from;
    MapPoint to;
};

struct MapPlotSpec {
    std::vector<PlotPoint> countries;
    std::vector<PlotPoint> overlays;
    std::array<std::string, 2> axis_labels{"Survival vs. Self-Expression", "Traditional vs. Secular"};
    std::optional<std::array<double, 4>> ranges;  // xmin, xmax, ymin, ymax
    std::vector<Segment> arrows;
    std::vector<Segment> dashed;
};

namespace detail_svg {

struct Frame {
    double xmin, xmax, ymin, ymax;
    double left, top, width, height;

    double sx(double x) const { return left + (x - xmin) / (xmax - xmin) * width; }
    double sy(double y) const { return top + height - (y - ymin) / (ymax - ymin) * height; }
};

inline std::array<double, 4> bounds(const std::vector<MapPoint>& pts, double pad_frac, double min_span) {
    double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
    for (const auto& p : pts) {
        xmin = std::min(xmin, p.x);
        xmax = std::max(xmax, p.x);
        ymin = std::min(ymin, p.y);
        ymax = std::max(ymax, p.y);
    }
    if (pts.empty()) return {-1, 1, -1, 1};
    const auto widen = [&](double& lo, double& hi) {
        double span = hi - lo;
        if (span < min_span) {
            const double mid = 0.5 * (lo + hi);
            lo = mid - 0.5 * min_span;
            hi = mid + 0.5 * min_span;
            span = min_span;
        }
        lo -= pad_frac * span;
        hi += pad_frac * span;
    };
    widen(xmin, xmax);
    widen(ymin, ymax);
    return {xmin, xmax, ymin, ymax};
}

inline std::string line(const Frame& f, const Segment& s, const std::string& attrs) {
    return "<line x1=\"" + num(f.sx(s.from.x)) + "\" y1=\"" + num(f.sy(s.from.y)) + "\" x2=\"" + num(f.sx(s.to.x)) +
           "\" y2=\"" + num(f.sy(s.to.y)) + "\" " + attrs + "/>\n";
}

inline const char* kArrowDefs =
    "<defs><marker id=\"arrow\" viewBox=\"0 0 10 10\" refX=\"9\" refY=\"5\" markerWidth=\"6\" markerHeight=\"6\" "
    "orient=\"auto-start-reverse\"><path d=\"M 0 0 L 10 5 L 0 10 z\" fill=\"#333\"/></marker></defs>\n";

}  // namespace detail_svg

// Country points colored by zone plus model overlay markers.
// Throws InvalidSpec when an arrow endpoint is not a plotted point.
inline std::string render_map(const MapPlotSpec& spec) {
    using detail_svg::Frame;
    std::vector<MapPoint> all;
    for (const auto& p : spec.countries) all.push_back(p.at);
    for (const auto& p : spec.overlays) all.push_back(p.at);
    for (const auto& a : spec.arrows)
        for (const auto& end : {a.from, a.to})
            if (std::find(all.begin(), all.end(), end) == all.end())
                throw InvalidSpec("arrow endpoint (" + num(end.x) + ", " + num(end.y) + ") is not a plotted point");
    const auto r = spec.ranges ? *spec.ranges : detail_svg::bounds(all, 0.08, 1.0);
    const Frame f{r[0], r[1], r[2], r[3], 70, 30, 640, 520};

    std::vector<std::string> zones;
    for (const auto& p : spec.countries) zones.push_back(p.group);
    const auto colors = zone_colors(zones);

    std::string out;
    out += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"900\" height=\"620\" viewBox=\"0 0 900 620\">\n";
    out += detail_svg::kArrowDefs;
    out += "<rect x=\"0\" y=\"0\" width=\"900\" height=\"620\" fill=\"white\"/>\n";
    out += "<rect x=\"70\" y=\"30\" width=\"640\" height=\"520\" fill=\"none\" stroke=\"#333\"/>\n";
    // zero lines when in range
    if (f.xmin < 0 && f.xmax > 0)
        out += detail_svg::line(f, {{0, f.ymin}, {0, f.ymax}}, "stroke=\"#ccc\" stroke-width=\"1\"");
    if (f.ymin < 0 && f.ymax > 0)
        out += detail_svg::line(f, {{f.xmin, 0}, {f.xmax, 0}}, "stroke=\"#ccc\" stroke-width=\"1\"");
    out += "<text x=\"390\" y=\"590\" text-anchor=\"middle\" font-size=\"14\">" + escape(spec.axis_labels[0]) + "</text>\n";
    out += "<text x=\"22\" y=\"290\" text-anchor=\"middle\" font-size=\"14\" transform=\"rotate(-90 22 290)\">" +
           escape(spec.axis_labels[1]) + "</text>\n";
    out += "<text x=\"70\" y=\"568\" font-size=\"10\">" + num(f.xmin) + "</text>\n";
    out += "<text x=\"710\" y=\"568\" font-size=\"10\" text-anchor=\"end\">" + num(f.xmax) + "</text>\n";
    out += "<text x=\"64\" y=\"550\" font-size=\"10\" text-anchor=\"end\">" + num(f.ymin) + "</text>\n";
    out += "<text x=\"64\" y=\"40\" font-size=\"10\" text-anchor=\"end\">" + num(f.ymax) + "</text>\n";

    for (const auto& a : spec.arrows)
        out += detail_svg::line(f, a, "stroke=\"#333\" stroke-width=\"1.2\" marker-end=\"url(#arrow)\"");
    for (const auto& d : spec.dashed) out += detail_svg::line(f, d, "stroke=\"#666\" stroke-dasharray=\"4 3\"");

    for (const auto& p : spec.countries) {
        const auto it = colors.find(p.group);
        const std::string color = it == colors.end() ? kNoZone : it->second;
        out += "<circle class=\"country\" cx=\"" + num(f.sx(p.at.x)) + "\" cy=\"" + num(f.sy(p.at.y)) +
               "\" r=\"4\" fill=\"" + color + "\"><title>" + escape(p.label) + "</title></circle>\n";
        out += "<text x=\"" + num(f.sx(p.at.x) + 6) + "\" y=\"" + num(f.sy(p.at.y) + 3) + "\" font-size=\"9\" fill=\"" +
               color + "\">" + escape(p.label) + "</text>\n";
    }
    for (const auto& p : spec.overlays) {
        const double cx = f.sx(p.at.x), cy = f.sy(p.at.y);
        const std::string fill = p.group == "manual" ? "#ffd700" : p.group == "compiled" ? "#00a86b" : "#000";
        out += "<path class=\"overlay\" d=\"M " + num(cx) + " " + num(cy - 7) + " L " + num(cx + 6) + " " + num(cy + 5) +
               " L " + num(cx - 6) + " " + num(cy + 5) + " Z\" fill=\"" + fill + "\" stroke=\"#000\"><title>" +
               escape(p.label + " (" + p.group + ")") + "</title></path>\n";
        out += "<text x=\"" + num(cx + 8) + "\" y=\"" + num(cy - 6) + "\" font-size=\"10\" font-weight=\"bold\">" +
               escape(p.label) + "</text>\n";
    }

    // legend
    double ly = 40;
    for (const auto& [zone, color] : colors) {
        out += "<circle cx=\"730\" cy=\"" + num(ly) + "\" r=\"4\" fill=\"" + color + "\"/><text x=\"740\" y=\"" +
               num(ly + 4) + "\" font-size=\"11\">" + escape(zone) + "</text>\n";
        ly += 18;
    }
    out += "</svg>\n";
    return out;
}

// One mini-panel per country: Generic, Aligned and Human points, the shift
// arrow, the dashed residual and the delta annotation. Panels are grouped by
// zone (`zones` maps country -> zone).
inline std::string render_shift_panels(std::vector<ShiftRecord> shifts, const std::map<std::string, std::string>& zones,
                                       const std::map<std::string, std::string>& names = {}) {
    const auto zone_of = [&](const std::string& c) {
        const auto it = zones.find(c);
        return it == zones.end() ? std::string() : it->second;
    };
    std::stable_sort(shifts.begin(), shifts.end(), [&](const ShiftRecord& a, const ShiftRecord& b) {
        return std::make_pair(zone_of(a.country), a.country) < std::make_pair(zone_of(b.country), b.country);
    });
    std::vector<std::string> zone_list;
    for (const auto& s : shifts) zone_list.push_back(zone_of(s.country));
    const auto colors = zone_colors(zone_list);

    constexpr int cols = 5, pw = 200, ph = 180, gap = 12;
    const int rows = static_cast<int>((shifts.size() + cols - 1) / cols);
    const int width = cols * (pw + gap) + gap;
    const int height = std::max(1, rows) * (ph + gap) + gap + 30;

    std::string out;
    out += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(width) + "\" height=\"" +
           std::to_string(height) + "\" viewBox=\"0 0 " + std::to_string(width) + " " + std::to_string(height) + "\">\n";
    out += detail_svg::kArrowDefs;
    out += "<rect x=\"0\" y=\"0\" width=\"" + std::to_string(width) + "\" height=\"" + std::to_string(height) +
           "\" fill=\"white\"/>\n";
    out += "<text x=\"" + std::to_string(gap) +
           "\" y=\"20\" font-size=\"12\">Generic (gray square), Aligned (blue circle), Human (red diamond); "
           "arrow = shift, dashed = residual</text>\n";

    for (std::size_t i = 0; i < shifts.size(); ++i) {
        const auto& s = shifts[i];
        const int px = gap + static_cast<int>(i % cols) * (pw + gap);
        const int py = 30 + gap + static_cast<int>(i / cols) * (ph + gap);
        const auto r = detail_svg::bounds({s.generic_point, s.aligned_point, s.human_point}, 0.15, 0.5);
        const detail_svg::Frame f{r[0], r[1], r[2], r[3], double(px + 10), double(py + 24), double(pw - 20), double(ph - 34)};
        const auto zit = colors.find(zone_of(s.country));
        const std::string tint = zit == colors.end() ? kNoZone : zit->second;
        const auto nit = names.find(s.country);
        const std::string title = nit == names.end() ? s.country : nit->second + " (" + s.country + ")";

        out += "<g class=\"panel\" data-country=\"" + escape(s.country) + "\">\n";
        out += "<rect x=\"" + std::to_string(px) + "\" y=\"" + std::to_string(py) + "\" width=\"" + std::to_string(pw) +
               "\" height=\"" + std::to_string(ph) + "\" fill=\"" + tint + "\" fill-opacity=\"0.08\" stroke=\"" + tint +
               "\"/>\n";
        out += "<text x=\"" + std::to_string(px + 6) + "\" y=\"" + std::to_string(py + 14) + "\" font-size=\"11\">" +
               escape(title) + "</text>\n";
        const std::string delta = (s.delta_c >= 0 ? "+" : "") + detail::fmt_fixed(s.delta_c, 3);
        out += "<text class=\"delta\" x=\"" + std::to_string(px + pw - 6) + "\" y=\"" + std::to_string(py + 14) +
               "\" font-size=\"11\" text-anchor=\"end\">&#916;=" + delta + "</text>\n";
        out += detail_svg::line(f, {s.aligned_point, s.human_point}, "stroke=\"#666\" stroke-dasharray=\"4 3\"");
        out += detail_svg::line(f, {s.generic_point, s.aligned_point},
                                "stroke=\"#333\" stroke-width=\"1.2\" marker-end=\"url(#arrow)\"");
        const double gx = f.sx(s.generic_point.x), gy = f.sy(s.generic_point.y);
        out += "<rect x=\"" + num(gx - 4) + "\" y=\"" + num(gy - 4) + "\" width=\"8\" height=\"8\" fill=\"#777\"/>\n";
        out += "<circle cx=\"" + num(f.sx(s.aligned_point.x)) + "\" cy=\"" + num(f.sy(s.aligned_point.y)) +
               "\" r=\"4\" fill=\"#1f5fbf\"/>\n";
        const double hx = f.sx(s.human_point.x), hy = f.sy(s.human_point.y);
        out += "<path d=\"M " + num(hx) + " " + num(hy - 5) + " L " + num(hx + 5) + " " + num(hy) + " L " + num(hx) + " " +
               num(hy + 5) + " L " + num(hx - 5) + " " + num(hy) + " Z\" fill=\"#d62728\"/>\n";
        out += "</g>\n";
    }
    out += "</svg>\n";
    return out;
}

}  // namespace culturemap::svg

#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "culturemap/benchmark.hpp"
#include "culturemap/detail/text.hpp"
#include "culturemap/error.hpp"
#include "culturemap/projection.hpp"

namespace culturemap {

// Euclidean distance on the cultural map.
inline double distance(const MapPoint& p, const MapPoint& q) { return std::hypot(p.x - q.x, p.y - q.y); }

inline MapPoint to_point(const std::array<double, 2>& a) { return {a[0], a[1]}; }

struct DistanceReport {
    std::string model;
    std::string country;
    MapPoint generic_point;
    MapPoint human_point;
    std::optional<MapPoint> man_point;
    std::optional<MapPoint> dspy_point;
    double d_nocond = 0.0;
    std::optional<double> d_man;
    std::optional<double> d_dspy;
    std::optional<double> delta_man;
    std::optional<double> delta_dspy;
    std::optional<bool> improved_man;
    std::optional<bool> improved_dspy;
};

struct RegimeSummary {
    std::size_t count = 0;
    double mean = 0.0;
    double median = 0.0;
};

struct ReportSummary {
    std::optional<RegimeSummary> nocond;
    std::optional<RegimeSummary> man;
    std::optional<RegimeSummary> dspy;
    std::optional<double> improved_fraction_man;
    std::optional<double> improved_fraction_dspy;
};

struct RegimeReport {
    std::vector<DistanceReport> rows;
    ReportSummary summary;
};

// Model points per regime; manual/compiled points are keyed by country.
struct RegimePoints {
    MapPoint generic;
    std::map<std::string, MapPoint> manual;
    std::map<std::string, MapPoint> compiled;
};

inline std::optional<RegimeSummary> summarize(std::vector<double> values) {
    if (values.empty()) return std::nullopt;
    RegimeSummary s;
    s.count = values.size();
    for (double v : values) s.mean += v;
    s.mean /= static_cast<double>(values.size());
    std::sort(values.begin(), values.end());
    const std::size_t n = values.size();
    s.median = n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
    return s;
}

// count(delta < 0) / count(delta present); ties are not improvements.
inline std::optional<double> improved_fraction(const std::vector<std::optional<double>>& deltas) {
    std::size_t present = 0, improved = 0;
    for (const auto& d : deltas) {
        if (!d) continue;
        ++present;
        if (*d < 0.0) ++improved;
    }
    if (present == 0) return std::nullopt;
    return static_cast<double>(improved) / static_cast<double>(present);
}

inline const CountryReference& require_reference(const std::vector<CountryReference>& refs, const std::string& c) {
    const auto* ref = find_reference(refs, c);
    if (!ref) throw UnknownCountry("no human reference for '" + c + "'");
    return *ref;
}

// One row per country in `countries` (all references when empty).
inline RegimeReport regime_report(const std::string& model, const std::vector<CountryReference>& refs,
                                  const RegimePoints& points, std::vector<std::string> countries = {}) {
    for (const auto* table : {&points.manual, &points.compiled})
        for (const auto& [c, _] : *table) require_reference(refs, c);
    if (countries.empty())
        for (const auto& r : refs) countries.push_back(r.country);

    RegimeReport report;
    std::vector<double> d_no, d_man, d_dspy;
    std::vector<std::optional<double>> delta_man, delta_dspy;
    for (const auto& c : countries) {
        const auto& ref = require_reference(refs, c);
        DistanceReport row;
        row.model = model;
        row.country = c;
        row.generic_point = points.generic;
        row.human_point = to_point(ref.nu);
        row.d_nocond = distance(points.generic, row.human_point);
        d_no.push_back(row.d_nocond);
        if (const auto it = points.manual.find(c); it != points.manual.end()) {
            row.man_point = it->second;
            row.d_man = distance(it->second, row.human_point);
            row.delta_man = *row.d_man - row.d_nocond;
            row.improved_man = *row.delta_man < 0.0;
            d_man.push_back(*row.d_man);
        }
        if (const auto it = points.compiled.find(c); it != points.compiled.end()) {
            row.dspy_point = it->second;
            row.d_dspy = distance(it->second, row.human_point);
            row.delta_dspy = *row.d_dspy - row.d_nocond;
            row.improved_dspy = *row.delta_dspy < 0.0;
            d_dspy.push_back(*row.d_dspy);
        }
        delta_man.push_back(row.delta_man);
        delta_dspy.push_back(row.delta_dspy);
        report.rows.push_back(std::move(row));
    }
    report.summary.nocond = summarize(d_no);
    report.summary.man = summarize(d_man);
    report.summary.dspy = summarize(d_dspy);
    report.summary.improved_fraction_man = improved_fraction(delta_man);
    report.summary.improved_fraction_dspy = improved_fraction(delta_dspy);
    return report;
}

struct ShiftRecord {
    std::string country;
    MapPoint generic_point;
    MapPoint aligned_point;
    MapPoint human_point;
    double d_generic = 0.0;
    double d_aligned = 0.0;
    double delta_c = 0.0;  // d_generic - d_aligned; positive = moved closer
};

inline std::vector<ShiftRecord> shift_records(const MapPoint& generic, const std::map<std::string, MapPoint>& aligned,
                                              const std::vector<CountryReference>& refs) {
    std::vector<ShiftRecord> out;
    for (const auto& [c, pt] : aligned) {
        const auto& ref = require_reference(refs, c);
        ShiftRecord s;
        s.country = c;
        s.generic_point = generic;
        s.aligned_point = pt;
        s.human_point = to_point(ref.nu);
        s.d_generic = distance(generic, s.human_point);
        s.d_aligned = distance(pt, s.human_point);
        s.delta_c = s.d_generic - s.d_aligned;
        out.push_back(std::move(s));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

inline nlohmann::ordered_json point_json(const MapPoint& p) { return nlohmann::ordered_json::array({p.x, p.y}); }

inline MapPoint point_from_json(const nlohmann::ordered_json& j) { return {j.at(0).get<double>(), j.at(1).get<double>()}; }

inline std::string report_to_csv(const RegimeReport& report) {
    using detail::fmt17;
    std::string out =
        "model,country,generic_x,generic_y,human_x,human_y,man_x,man_y,dspy_x,dspy_y,"
        "d_nocond,d_man,d_dspy,delta_man,delta_dspy,improved_man,improved_dspy\n";
    const auto opt = [](const std::optional<double>& v) { return v ? fmt17(*v) : std::string(); };
    const auto flag = [](const std::optional<bool>& v) { return v ? std::string(*v ? "1" : "0") : std::string(); };
    for (const auto& r : report.rows) {
        out += r.model + "," + r.country + "," + fmt17(r.generic_point.x) + "," + fmt17(r.generic_point.y) + "," +
               fmt17(r.human_point.x) + "," + fmt17(r.human_point.y) + ",";
        out += (r.man_point ? fmt17(r.man_point->x) + "," + fmt17(r.man_point->y) : std::string(",")) + ",";
        out += (r.dspy_point ? fmt17(r.dspy_point->x) + "," + fmt17(r.dspy_point->y) : std::string(",")) + ",";
        out += fmt17(r.d_nocond) + "," + opt(r.d_man) + "," + opt(r.d_dspy) + "," + opt(r.delta_man) + "," +
               opt(r.delta_dspy) + "," + flag(r.improved_man) + "," + flag(r.improved_dspy) + "\n";
    }
    return out;
}

inline nlohmann::ordered_json report_to_json(const RegimeReport& report) {
    using json = nlohmann::ordered_json;
    const auto opt = [](const auto& v) { return v ? json(*v) : json(nullptr); };
    json rows = json::array();
    for (const auto& r : report.rows) {
        rows.push_back({
            {"model", r.model},
            {"country", r.country},
            {"generic_point", point_json(r.generic_point)},
            {"human_point", point_json(r.human_point)},
            {"man_point", r.man_point ? point_json(*r.man_point) : json(nullptr)},
            {"dspy_point", r.dspy_point ? point_json(*r.dspy_point) : json(nullptr)},
            {"d_nocond", r.d_nocond},
            {"d_man", opt(r.d_man)},
            {"d_dspy", opt(r.d_dspy)},
            {"delta_man", opt(r.delta_man)},
            {"delta_dspy", opt(r.delta_dspy)},
            {"improved_man", opt(r.improved_man)},
            {"improved_dspy", opt(r.improved_dspy)},
        });
    }
    const auto summary = [](const std::optional<RegimeSummary>& s) {
        if (!s) return json(nullptr);
        return json{{"count", s->count}, {"mean", s->mean}, {"median", s->median}};
    };
    return json{
        {"rows", rows},
        {"summary",
         {
             {"nocond", summary(report.summary.nocond)},
             {"man", summary(report.summary.man)},
             {"dspy", summary(report.summary.dspy)},
             {"improved_fraction_man", opt(report.summary.improved_fraction_man)},
             {"improved_fraction_dspy", opt(report.summary.improved_fraction_dspy)},
         }},
    };
}

inline nlohmann::ordered_json shift_to_json(const ShiftRecord& s) {
    return {
        {"country", s.country},
        {"generic_point", point_json(s.generic_point)},
        {"aligned_point", point_json(s.aligned_point)},
        {"human_point", point_json(s.human_point)},
        {"d_generic", s.d_generic},
        {"d_aligned", s.d_aligned},
        {"delta_c", s.delta_c},
    };
}

}  // namespace culturemap

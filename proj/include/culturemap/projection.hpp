#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <string>

#include "culturemap/benchmark.hpp"
#include "culturemap/error.hpp"
#include "culturemap/survey_core.hpp"

namespace culturemap {

// A location on the cultural map, in rescaled units.
struct MapPoint {
    double x = 0.0;  // Survival <-> Self-Expression
    double y = 0.0;  // Traditional <-> Secular

    bool operator==(const MapPoint&) const = default;
};

enum class Regime { generic, manual, compiled };

inline const char* regime_name(Regime r) {
    switch (r) {
        case Regime::generic: return "generic";
        case Regime::manual: return "manual";
        case Regime::compiled: return "compiled";
    }
    return "generic";
}

inline Regime parse_regime(const std::string& s) {
    if (s == "generic") return Regime::generic;
    if (s == "manual") return Regime::manual;
    if (s == "compiled") return Regime::compiled;
    throw ConfigError("unknown regime '" + s + "'");
}

inline constexpr const char* kGenericCountry = "GENERIC";

struct ConditionKey {
    std::string model;
    std::string country = kGenericCountry;
    Regime regime = Regime::generic;
    std::optional<std::string> program_id;

    static ConditionKey generic(std::string model) { return {std::move(model), kGenericCountry, Regime::generic, {}}; }
    static ConditionKey manual(std::string model, std::string country) {
        return {std::move(model), std::move(country), Regime::manual, {}};
    }
    static ConditionKey compiled(std::string model, std::string country, std::string program_id) {
        return {std::move(model), std::move(country), Regime::compiled, std::move(program_id)};
    }

    bool valid() const {
        if (regime == Regime::generic) return country == kGenericCountry;
        if (regime == Regime::compiled) return program_id.has_value() && country != kGenericCountry;
        return country != kGenericCountry;
    }
};

inline MapPoint project(const CodedVector& x, const BenchmarkSpace& space) {
    const auto pt = project_raw(x.values, space);
    return {pt[0], pt[1]};
}

inline MapPoint persona_average(std::span<const MapPoint> points) {
    if (points.empty()) throw EmptyVariantSet("cannot average an empty set of persona variants");
    MapPoint mean;
    for (const auto& p : points) {
        mean.x += p.x;
        mean.y += p.y;
    }
    mean.x /= static_cast<double>(points.size());
    mean.y /= static_cast<double>(points.size());
    return mean;
}

}  // namespace culturemap

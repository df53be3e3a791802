#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <tuple>
#include <utility>
#include <vector>

#include "culturemap/detail/digest.hpp"
#include "culturemap/detail/text.hpp"
#include "culturemap/error.hpp"
#include "culturemap/survey_core.hpp"

namespace culturemap {

struct RespondentRecord {
    std::string country;
    int wave = 0;
    double weight = 1.0;
    // Raw answers in registry order; nullopt marks a missing cell.
    std::vector<std::optional<int>> answers;

    bool complete() const {
        return std::all_of(answers.begin(), answers.end(), [](const auto& a) { return a.has_value(); });
    }

    bool operator==(const RespondentRecord&) const = default;
};

struct CountryWaveAggregate {
    std::string country;
    int wave = 0;
    std::vector<double> mean_vector;
    double effective_n = 0.0;
};

struct YearWindow {
    int year_min = 2005;
    int year_max = 2022;
};

using WaveYearTable = std::map<int, int>;

// ---------------------------------------------------------------------------
// CSV ingestion: header `country,wave,weight,<id1>,...,<id10>`; empty cell
// means missing. Registry ids may appear in any column order.
// ---------------------------------------------------------------------------

namespace detail {

inline std::string unquote(std::string_view cell) {
    auto t = trim(cell);
    if (t.size() >= 2 && t.front() == '"' && t.back() == '"') t = t.substr(1, t.size() - 2);
    return std::string(t);
}

}  // namespace detail

inline std::vector<RespondentRecord> parse_respondents(std::string_view text, const IndicatorRegistry& reg) {
    std::vector<RespondentRecord> records;
    const auto lines = detail::split(text, '\n');
    std::size_t li = 0;
    while (li < lines.size() && detail::trim(lines[li]).empty()) ++li;
    if (li == lines.size()) throw MissingColumn("empty file, no header");

    std::vector<std::string> header;
    for (const auto& c : detail::split(detail::trim(lines[li]), ',')) header.push_back(detail::unquote(c));
    const auto column = [&](const std::string& name) -> std::size_t {
        const auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end()) throw MissingColumn("header lacks column '" + name + "'");
        return static_cast<std::size_t>(it - header.begin());
    };
    const std::size_t c_country = column("country");
    const std::size_t c_wave = column("wave");
    const std::size_t c_weight = column("weight");
    std::vector<std::size_t> c_items;
    for (const auto& spec : reg.indicators()) c_items.push_back(column(spec.id));

    for (++li; li < lines.size(); ++li) {
        const auto line = detail::trim(lines[li]);
        if (line.empty()) continue;
        const std::string line_tag = "line " + std::to_string(li + 1);
        const auto cells = detail::split(line, ',');
        if (cells.size() != header.size()) {
            throw SchemaError(line_tag + ": expected " + std::to_string(header.size()) + " cells, got " +
                              std::to_string(cells.size()));
        }
        const auto where = [&](std::size_t col) { return line_tag + ", column " + header[col]; };

        RespondentRecord r;
        r.country = detail::unquote(cells[c_country]);
        if (r.country.empty()) throw SchemaError(where(c_country) + ": empty country");
        r.wave = static_cast<int>(detail::parse_int(detail::unquote(cells[c_wave]), where(c_wave)));
        r.weight = detail::parse_double(detail::unquote(cells[c_weight]), where(c_weight));
        if (!std::isfinite(r.weight) || r.weight < 0.0) {
            throw SchemaError(where(c_weight) + ": weight must be finite and non-negative");
        }
        r.answers.reserve(reg.size());
        for (std::size_t j = 0; j < reg.size(); ++j) {
            const std::size_t col = c_items[j];
            const std::string cell = detail::unquote(cells[col]);
            if (cell.empty()) {
                r.answers.emplace_back(std::nullopt);
                continue;
            }
            const auto raw = detail::parse_int(cell, where(col));
            if (raw < reg[j].scale_min || raw > reg[j].scale_max) {
                throw SchemaError(where(col) + ": value " + cell + " outside scale");
            }
            r.answers.emplace_back(static_cast<int>(raw));
        }
        records.push_back(std::move(r));
    }
    return records;
}

inline std::vector<RespondentRecord> load_respondents(const std::string& path, const IndicatorRegistry& reg) {
    return parse_respondents(detail::read_file(path), reg);
}

inline std::string respondents_to_csv(const std::vector<RespondentRecord>& records, const IndicatorRegistry& reg) {
    std::string out = "country,wave,weight";
    for (const auto& s : reg.indicators()) out += "," + s.id;
    out += "\n";
    for (const auto& r : records) {
        out += r.country + "," + std::to_string(r.wave) + "," + detail::fmt17(r.weight);
        for (const auto& a : r.answers) out += "," + (a ? std::to_string(*a) : std::string());
        out += "\n";
    }
    return out;
}

// Canonical digest of a record set, used as dataset provenance.
inline std::string dataset_hash(const std::vector<RespondentRecord>& records, const IndicatorRegistry& reg) {
    return detail::sha256_hex(respondents_to_csv(records, reg));
}

inline std::vector<RespondentRecord> filter_waves(const std::vector<RespondentRecord>& records,
                                                  const YearWindow& window, const WaveYearTable& wave_years) {
    std::vector<RespondentRecord> kept;
    for (const auto& r : records) {
        const auto it = wave_years.find(r.wave);
        if (it == wave_years.end()) throw UnknownWave("wave " + std::to_string(r.wave) + " has no year mapping");
        if (it->second >= window.year_min && it->second <= window.year_max) kept.push_back(r);
    }
    return kept;
}

// Sort by (country, wave) and then by record contents; fixes the
// floating-point summation order for everything downstream.
inline std::vector<RespondentRecord> sorted_by_group(std::vector<RespondentRecord> records) {
    std::stable_sort(records.begin(), records.end(), [](const auto& a, const auto& b) {
        return std::tie(a.country, a.wave, a.weight, a.answers) < std::tie(b.country, b.wave, b.weight, b.answers);
    });
    return records;
}

// Survey-weighted country-wave means over complete cases (listwise deletion).
inline std::vector<CountryWaveAggregate> aggregate_country_wave(const std::vector<RespondentRecord>& records,
                                                                const IndicatorRegistry& reg) {
    std::map<std::pair<std::string, int>, std::vector<const RespondentRecord*>> groups;
    for (const auto& r : records) groups[{r.country, r.wave}].push_back(&r);

    std::vector<CountryWaveAggregate> out;
    out.reserve(groups.size());
    for (const auto& [key, members] : groups) {
        CountryWaveAggregate agg;
        agg.country = key.first;
        agg.wave = key.second;
        agg.mean_vector.assign(reg.size(), 0.0);
        double total = 0.0;
        for (const auto* r : members) {
            if (r->answers.size() != reg.size() || !r->complete()) continue;
            total += r->weight;
            for (std::size_t j = 0; j < reg.size(); ++j)
                agg.mean_vector[j] += r->weight * code_answer(*r->answers[j], reg[j]);
        }
        if (!(total > 0.0)) {
            throw EmptyGroup("(" + key.first + ", " + std::to_string(key.second) + ") has no weighted complete cases");
        }
        for (auto& m : agg.mean_vector) m /= total;
        agg.effective_n = total;
        out.push_back(std::move(agg));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Synthetic data
// ---------------------------------------------------------------------------

struct SyntheticCountry {
    std::string code;
    std::string name;
    std::string zone;
    std::array<double, 2> latent{};
};

struct SyntheticSpec {
    std::vector<SyntheticCountry> countries;
    std::vector<std::array<double, 2>> loadings;  // one row per indicator
    std::vector<double> center;                   // raw-scale intercept per indicator
    double noise_sd = 0.0;
    int respondents_per_group = 100;
    std::vector<int> waves{5, 6};
    double weight_min = 0.5;
    double weight_max = 1.5;
};

struct LatentRow {
    std::string code;
    std::array<double, 2> latent{};
};

struct SyntheticDataset {
    std::vector<RespondentRecord> records;
    std::vector<LatentRow> latents;
};

// Raw answer for one respondent before noise: round(center + L * latent), clamped.
inline std::vector<int> synthetic_raw_answers(const SyntheticSpec& spec, const IndicatorRegistry& reg,
                                              const std::array<double, 2>& latent,
                                              const std::vector<double>* noise = nullptr) {
    std::vector<int> raw(reg.size());
    for (std::size_t j = 0; j < reg.size(); ++j) {
        double x = spec.center[j] + spec.loadings[j][0] * latent[0] + spec.loadings[j][1] * latent[1];
        if (noise) x += (*noise)[j];
        const double r = std::clamp(std::round(x), double(reg[j].scale_min), double(reg[j].scale_max));
        raw[j] = static_cast<int>(r);
    }
    return raw;
}

inline SyntheticDataset generate_synthetic(const SyntheticSpec& spec, const IndicatorRegistry& reg,
                                           std::uint64_t seed) {
    if (spec.loadings.size() != reg.size() || spec.center.size() != reg.size()) {
        throw InvalidSpec("loadings and center need one row per indicator");
    }
    if (spec.countries.empty()) throw InvalidSpec("no countries");
    if (spec.respondents_per_group < 1) throw InvalidSpec("respondents_per_group must be >= 1");
    if (spec.noise_sd < 0.0) throw InvalidSpec("noise_sd must be >= 0");
    if (spec.waves.empty()) throw InvalidSpec("no waves");
    if (!(spec.weight_min >= 0.0) || spec.weight_max < spec.weight_min) throw InvalidSpec("bad weight range");

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise_dist(0.0, 1.0);
    std::uniform_real_distribution<double> weight_dist(spec.weight_min, spec.weight_max);

    SyntheticDataset out;
    std::vector<double> noise(reg.size(), 0.0);
    for (const auto& c : spec.countries) {
        out.latents.push_back({c.code, c.latent});
        for (int wave : spec.waves) {
            for (int i = 0; i < spec.respondents_per_group; ++i) {
                for (auto& e : noise) e = spec.noise_sd > 0.0 ? spec.noise_sd * noise_dist(rng) : 0.0;
                RespondentRecord r;
                r.country = c.code;
                r.wave = wave;
                r.weight = spec.weight_min == spec.weight_max ? spec.weight_min : weight_dist(rng);
                for (int a : synthetic_raw_answers(spec, reg, c.latent, &noise)) r.answers.emplace_back(a);
                out.records.push_back(std::move(r));
            }
        }
    }
    return out;
}

// Ten fictional territories on an integer latent lattice, with integer
// loadings sized to each indicator's scale so zero-noise answers never clamp.
inline SyntheticSpec default_synthetic_spec(const IndicatorRegistry& reg) {
    SyntheticSpec spec;
    const std::array<std::tuple<const char*, const char*, const char*, double, double>, 10> countries{{
        {"XAU", "Aurelia", "Northern Reach", 1, 1},
        {"XBO", "Borvania", "Northern Reach", 1, 0},
        {"XCA", "Calderra", "Northern Reach", 0, 1},
        {"XDU", "Dunmore", "Central Belt", 0, 0},
        {"XES", "Estrovia", "Central Belt", -1, 1},
        {"XFE", "Fenmark", "Central Belt", 1, -1},
        {"XGA", "Galtria", "Southern Coast", 0, -1},
        {"XHE", "Hesperia", "Southern Coast", -1, 0},
        {"XIS", "Istvania", "Southern Coast", -1, -1},
        {"XJO", "Jorvale", "Southern Coast", 0, 0},
    }};
    for (const auto& [code, name, zone, a, b] : countries) spec.countries.push_back({code, name, zone, {a, b}});

    for (std::size_t j = 0; j < reg.size(); ++j) {
        const int range = reg[j].scale_max - reg[j].scale_min;
        const int half = range / 2;
        spec.center.push_back(static_cast<double>(reg[j].scale_min + half));
        const double sign = (j / 2) % 2 == 0 ? 1.0 : -1.0;
        if (half >= 2) {
            const double u = static_cast<double>(half / 2);
            spec.loadings.push_back(j % 2 == 0 ? std::array<double, 2>{u, sign * u} : std::array<double, 2>{sign * u, u});
        } else {
            spec.loadings.push_back(j % 2 == 0 ? std::array<double, 2>{sign, 0.0} : std::array<double, 2>{0.0, sign});
        }
    }
    spec.noise_sd = 0.0;
    spec.respondents_per_group = 20;
    spec.waves = {5, 6};
    return spec;
}

}  // namespace culturemap

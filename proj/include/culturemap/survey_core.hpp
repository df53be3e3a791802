#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "culturemap/detail/digest.hpp"
#include "culturemap/detail/text.hpp"
#include "culturemap/error.hpp"

namespace culturemap {

inline constexpr std::size_t kIndicatorCount = 10;

struct CodingTransform {
    enum class Kind { identity, reverse, affine };

    Kind kind = Kind::identity;
    double a = 1.0;
    double b = 0.0;

    static CodingTransform identity() { return {}; }
    static CodingTransform reverse(int scale_min, int scale_max) {
        return {Kind::reverse, -1.0, static_cast<double>(scale_min + scale_max)};
    }
    static CodingTransform affine(double slope, double offset) { return {Kind::affine, slope, offset}; }

    double apply(int raw) const {
        if (kind == Kind::identity) return static_cast<double>(raw);
        return a * static_cast<double>(raw) + b;
    }
};

enum class AxisAnchor { none, axis1, axis2 };

struct IndicatorSpec {
    std::string id;
    std::string name;  // short human label, optional
    std::string question_text;
    int scale_min = 1;
    int scale_max = 2;
    std::vector<std::string> option_labels;
    CodingTransform coding;
    AxisAnchor axis_anchor = AxisAnchor::none;
    bool placeholder = false;  // operator has not confirmed this item yet

    int scale_size() const { return scale_max - scale_min + 1; }
    bool categorical() const { return static_cast<int>(option_labels.size()) == scale_size(); }

    // Closed interval spanned by coding the scale endpoints.
    std::pair<double, double> coded_range() const {
        const double lo = coding.apply(scale_min);
        const double hi = coding.apply(scale_max);
        return {std::min(lo, hi), std::max(lo, hi)};
    }
};

class IndicatorRegistry {
public:
    explicit IndicatorRegistry(std::vector<IndicatorSpec> indicators) : indicators_(std::move(indicators)) {
        if (indicators_.size() != kIndicatorCount) {
            throw RegistryError("registry must hold exactly " + std::to_string(kIndicatorCount) +
                                " indicators, got " + std::to_string(indicators_.size()));
        }
        std::set<std::string> seen;
        for (const auto& spec : indicators_) {
            if (spec.id.empty()) throw RegistryError("indicator with empty id");
            if (!seen.insert(spec.id).second) throw RegistryError("duplicate indicator id " + spec.id);
            if (spec.scale_min >= spec.scale_max) throw RegistryError(spec.id + ": scale_min must be < scale_max");
            const auto n = static_cast<int>(spec.option_labels.size());
            if (n != 0 && n != 2 && n != spec.scale_size()) {
                throw RegistryError(spec.id + ": labels must cover every option or just the two endpoints");
            }
            if (spec.coding.kind == CodingTransform::Kind::affine && spec.coding.a == 0.0) {
                throw RegistryError(spec.id + ": affine coding slope must be non-zero");
            }
        }
    }

    const std::vector<IndicatorSpec>& indicators() const { return indicators_; }
    const IndicatorSpec& operator[](std::size_t i) const { return indicators_.at(i); }
    std::size_t size() const { return indicators_.size(); }

    std::optional<std::size_t> index_of(std::string_view id) const {
        for (std::size_t i = 0; i < indicators_.size(); ++i)
            if (indicators_[i].id == id) return i;
        return std::nullopt;
    }

    // Canonical text form; also the input to the registry hash.
    std::string serialize() const;

    std::string hash() const { return detail::sha256_hex(serialize()); }

private:
    std::vector<IndicatorSpec> indicators_;
};

struct CodedVector {
    enum class Source { human, model };

    std::vector<double> values;
    Source source = Source::human;

    bool operator==(const CodedVector&) const = default;
};

// Applies the indicator's coding transform to a raw scale answer.
inline double code_answer(int raw, const IndicatorSpec& spec) {
    if (raw < spec.scale_min || raw > spec.scale_max) {
        throw OutOfRange(spec.id + ": raw value " + std::to_string(raw) + " outside [" +
                         std::to_string(spec.scale_min) + ", " + std::to_string(spec.scale_max) + "]");
    }
    return spec.coding.apply(raw);
}

inline std::string format_integer(int k) { return std::to_string(k); }

// Returns the first standalone integer token in `text` that lies on the
// indicator's scale. A token is standalone when it is not glued to letters or
// digits and is not part of a decimal number.
inline int parse_answer(std::string_view text, const IndicatorSpec& spec) {
    const auto is_alnum = [](char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; };
    const auto is_digit = [](char c) { return std::isdigit(static_cast<unsigned char>(c)) != 0; };
    const std::size_t n = text.size();
    std::size_t i = 0;
    while (i < n) {
        if (!is_digit(text[i])) {
            ++i;
            continue;
        }
        std::size_t start = i;
        while (i < n && is_digit(text[i])) ++i;
        const std::size_t end = i;

        bool negative = false;
        std::size_t lead = start;
        if (start > 0 && text[start - 1] == '-') {
            negative = true;
            lead = start - 1;
        }
        if (lead > 0) {
            const char before = text[lead - 1];
            if (is_alnum(before)) continue;
            // fractional part of a decimal like "2.5"
            if (before == '.' && lead >= 2 && is_digit(text[lead - 2])) continue;
            if (negative && before == '-') continue;
        }
        if (end < n) {
            const char after = text[end];
            if (is_alnum(after)) continue;
            if (after == '.' && end + 1 < n && is_digit(text[end + 1])) continue;
        }
        if (end - start > 9) continue;
        long value = std::stol(std::string(text.substr(start, end - start)));
        if (negative) value = -value;
        if (value >= spec.scale_min && value <= spec.scale_max) return static_cast<int>(value);
    }
    throw NoAnswerFound(spec.id + ": no in-range integer in completion '" + std::string(text) + "'");
}

// Returns v unchanged when it has one finite, in-range entry per indicator.
inline const CodedVector& validate_vector(const CodedVector& v, const IndicatorRegistry& reg) {
    if (v.values.size() != reg.size()) {
        throw InvalidEntry(-1, "expected " + std::to_string(reg.size()) + " entries, got " +
                                   std::to_string(v.values.size()));
    }
    for (std::size_t j = 0; j < reg.size(); ++j) {
        const double x = v.values[j];
        const auto [lo, hi] = reg[j].coded_range();
        if (!std::isfinite(x)) throw InvalidEntry(static_cast<int>(j), reg[j].id + " is not finite");
        if (x < lo || x > hi) {
            throw InvalidEntry(static_cast<int>(j), reg[j].id + " value " + detail::fmt17(x) + " outside coded range");
        }
    }
    return v;
}

// Codes a full raw answer map (registry order) into a vector.
inline CodedVector code_answers(const std::vector<int>& raw, const IndicatorRegistry& reg,
                                CodedVector::Source source = CodedVector::Source::human) {
    if (raw.size() != reg.size()) throw InvalidEntry(-1, "raw answer arity mismatch");
    CodedVector out;
    out.source = source;
    out.values.reserve(raw.size());
    for (std::size_t j = 0; j < raw.size(); ++j) out.values.push_back(code_answer(raw[j], reg[j]));
    return out;
}

// ---------------------------------------------------------------------------
// Registry file
//
//   # comment
//   [indicator]
//   id = A008
//   name = Feeling of happiness
//   question = Taking all things together, rate how happy you would say you are.
//   min = 1
//   max = 4
//   labels = Very happy | Quite happy | Not very happy | Not at all happy
//   coding = reverse            (identity | reverse | affine <slope> <offset>)
//   anchor = axis1              (none | axis1 | axis2)
//   status = confirmed          (confirmed | placeholder)
// ---------------------------------------------------------------------------

namespace detail {

inline std::string coding_to_text(const CodingTransform& c) {
    switch (c.kind) {
        case CodingTransform::Kind::identity: return "identity";
        case CodingTransform::Kind::reverse: return "reverse";
        case CodingTransform::Kind::affine: return "affine " + fmt17(c.a) + " " + fmt17(c.b);
    }
    return "identity";
}

inline std::string anchor_to_text(AxisAnchor a) {
    switch (a) {
        case AxisAnchor::axis1: return "axis1";
        case AxisAnchor::axis2: return "axis2";
        case AxisAnchor::none: return "none";
    }
    return "none";
}

}  // namespace detail

inline std::string IndicatorRegistry::serialize() const {
    std::string out;
    for (const auto& s : indicators_) {
        out += "[indicator]\n";
        out += "id = " + s.id + "\n";
        if (!s.name.empty()) out += "name = " + s.name + "\n";
        out += "question = " + s.question_text + "\n";
        out += "min = " + std::to_string(s.scale_min) + "\n";
        out += "max = " + std::to_string(s.scale_max) + "\n";
        if (!s.option_labels.empty()) out += "labels = " + detail::join(s.option_labels, " | ") + "\n";
        out += "coding = " + detail::coding_to_text(s.coding) + "\n";
        out += "anchor = " + detail::anchor_to_text(s.axis_anchor) + "\n";
        out += std::string("status = ") + (s.placeholder ? "placeholder" : "confirmed") + "\n\n";
    }
    return out;
}

inline IndicatorRegistry parse_registry(std::string_view text) {
    std::vector<IndicatorSpec> specs;
    struct Pending {
        IndicatorSpec spec;
        std::string coding = "identity";
        bool has_min = false, has_max = false;
        int line = 0;
    };
    std::optional<Pending> cur;

    const auto finish = [&]() {
        if (!cur) return;
        auto& p = *cur;
        const std::string where = "indicator block at line " + std::to_string(p.line);
        if (p.spec.id.empty()) throw RegistryError(where + ": missing id");
        if (p.spec.question_text.empty()) throw RegistryError(where + ": missing question");
        if (!p.has_min || !p.has_max) throw RegistryError(where + ": missing min/max");
        const auto parts = detail::split(p.coding, ' ');
        std::vector<std::string> words;
        for (const auto& w : parts)
            if (!w.empty()) words.push_back(w);
        if (words.empty() || words[0] == "identity") {
            p.spec.coding = CodingTransform::identity();
        } else if (words[0] == "reverse") {
            p.spec.coding = CodingTransform::reverse(p.spec.scale_min, p.spec.scale_max);
        } else if (words[0] == "affine" && words.size() == 3) {
            try {
                p.spec.coding = CodingTransform::affine(detail::parse_double(words[1], where),
                                                        detail::parse_double(words[2], where));
            } catch (const SchemaError& e) {
                throw RegistryError(e.what());
            }
        } else {
            throw RegistryError(where + ": unknown coding '" + p.coding + "'");
        }
        specs.push_back(std::move(p.spec));
        cur.reset();
    };

    int line_no = 0;
    for (const auto& raw_line : detail::split(text, '\n')) {
        ++line_no;
        const auto line = detail::trim(raw_line);
        if (line.empty() || line.front() == '#') continue;
        if (line == "[indicator]") {
            finish();
            cur.emplace();
            cur->line = line_no;
            continue;
        }
        const auto eq = line.find('=');
        if (!cur || eq == std::string_view::npos) {
            throw RegistryError("line " + std::to_string(line_no) + ": expected '[indicator]' or 'key = value'");
        }
        const std::string key(detail::trim(line.substr(0, eq)));
        const std::string value(detail::trim(line.substr(eq + 1)));
        auto& s = cur->spec;
        const std::string where = "line " + std::to_string(line_no);
        try {
            if (key == "id") s.id = value;
            else if (key == "name") s.name = value;
            else if (key == "question") s.question_text = value;
            else if (key == "min") { s.scale_min = static_cast<int>(detail::parse_int(value, where)); cur->has_min = true; }
            else if (key == "max") { s.scale_max = static_cast<int>(detail::parse_int(value, where)); cur->has_max = true; }
            else if (key == "labels") {
                s.option_labels.clear();
                for (const auto& l : detail::split(value, '|')) s.option_labels.emplace_back(detail::trim(l));
            }
            else if (key == "coding") cur->coding = value;
            else if (key == "anchor") {
                if (value == "axis1") s.axis_anchor = AxisAnchor::axis1;
                else if (value == "axis2") s.axis_anchor = AxisAnchor::axis2;
                else if (value == "none") s.axis_anchor = AxisAnchor::none;
                else throw RegistryError(where + ": unknown anchor '" + value + "'");
            }
            else if (key == "status") {
                if (value == "placeholder") s.placeholder = true;
                else if (value == "confirmed") s.placeholder = false;
                else throw RegistryError(where + ": unknown status '" + value + "'");
            }
            else throw RegistryError(where + ": unknown key '" + key + "'");
        } catch (const SchemaError& e) {
            throw RegistryError(e.what());
        }
    }
    finish();
    return IndicatorRegistry(std::move(specs));
}

inline IndicatorRegistry load_registry(const std::string& path) { return parse_registry(detail::read_file(path)); }

}  // namespace culturemap

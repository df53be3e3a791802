#pragma once

#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "culturemap/detail/digest.hpp"
#include "culturemap/detail/text.hpp"
#include "culturemap/error.hpp"
#include "culturemap/gateway.hpp"
#include "culturemap/projection.hpp"
#include "culturemap/survey_core.hpp"

namespace culturemap {

struct PersonaVariant {
    std::string descriptor;
    int variant_id = 0;

    bool operator==(const PersonaVariant&) const = default;
};

// {average, typical} x {human being, person, individual}, then "world citizen".
inline std::vector<PersonaVariant> variants() {
    std::vector<PersonaVariant> out;
    int id = 0;
    for (const char* adjective : {"average", "typical"})
        for (const char* noun : {"human being", "person", "individual"})
            out.push_back({std::string(adjective) + " " + noun, id++});
    out.push_back({"world citizen", id});
    return out;
}

inline std::string persona_statement(const PersonaVariant& v) {
    const char first = v.descriptor.empty() ? 'x' : v.descriptor.front();
    const bool vowel = std::string_view("aeiou").find(first) != std::string_view::npos;
    return std::string("You are ") + (vowel ? "an " : "a ") + v.descriptor + ".";
}

inline constexpr const char* kFormatReminder = "Respond with a single number from the scale only.";

// ---------------------------------------------------------------------------
// Country display names (code,name[,zone] CSV)
// ---------------------------------------------------------------------------

struct CountryInfo {
    std::string name;
    std::string zone;
};

using CountryTable = std::map<std::string, CountryInfo>;

inline CountryTable parse_country_table(std::string_view text) {
    CountryTable table;
    bool header = true;
    int line_no = 0;
    for (const auto& raw : detail::split(text, '\n')) {
        ++line_no;
        const auto line = detail::trim(raw);
        if (line.empty() || line.front() == '#') continue;
        if (header) {
            header = false;
            if (line.rfind("code,", 0) == 0) continue;
        }
        const auto cells = detail::split(line, ',');
        if (cells.size() < 2) throw SchemaError("country table line " + std::to_string(line_no) + ": need code,name");
        CountryInfo info{std::string(detail::trim(cells[1])), cells.size() > 2 ? std::string(detail::trim(cells[2])) : ""};
        table[std::string(detail::trim(cells[0]))] = std::move(info);
    }
    return table;
}

inline CountryTable load_country_table(const std::string& path) { return parse_country_table(detail::read_file(path)); }

inline std::string display_name(const CountryTable& table, const std::string& code) {
    const auto it = table.find(code);
    return it == table.end() ? code : it->second.name;
}

// ---------------------------------------------------------------------------
// Prompt programs
// ---------------------------------------------------------------------------

struct Demo {
    std::string question;
    std::string answer;

    bool operator==(const Demo&) const = default;
};

struct PromptProgram {
    std::string instruction;  // may contain {country}
    std::vector<Demo> demos;
    std::string optimizer = "manual";
    int iteration = 0;

    // Digest of the content only; lineage does not change identity.
    std::string program_id() const {
        std::string canon = "instruction\x1f" + instruction + "\x1e";
        for (const auto& d : demos) canon += "demo\x1f" + d.question + "\x1f" + d.answer + "\x1e";
        return detail::sha256_hex(canon).substr(0, 16);
    }
};

inline nlohmann::ordered_json program_to_json(const PromptProgram& p) {
    nlohmann::ordered_json demos = nlohmann::ordered_json::array();
    for (const auto& d : p.demos) demos.push_back({{"question", d.question}, {"answer", d.answer}});
    return {{"program_id", p.program_id()},
            {"instruction", p.instruction},
            {"demos", demos},
            {"lineage", {{"optimizer", p.optimizer}, {"iteration", p.iteration}}}};
}

template <class Json>
PromptProgram program_from_json(const Json& j) {
    PromptProgram p;
    p.instruction = j.at("instruction").template get<std::string>();
    if (p.instruction.empty()) throw ConfigError("prompt program has an empty instruction");
    if (j.contains("demos"))
        for (const auto& d : j.at("demos"))
            p.demos.push_back({d.at("question").template get<std::string>(), d.at("answer").template get<std::string>()});
    if (j.contains("lineage")) {
        p.optimizer = j.at("lineage").value("optimizer", std::string("manual"));
        p.iteration = j.at("lineage").value("iteration", 0);
    }
    if (j.contains("program_id") && j.at("program_id").template get<std::string>() != p.program_id())
        throw ConfigError("program_id does not match program contents");
    return p;
}

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

inline std::string scale_recital(const IndicatorSpec& spec) {
    const auto& labels = spec.option_labels;
    if (spec.categorical()) {
        std::vector<std::string> parts;
        for (int k = spec.scale_min; k <= spec.scale_max; ++k)
            parts.push_back(std::to_string(k) + " is " + labels[static_cast<std::size_t>(k - spec.scale_min)]);
        return detail::join(parts, ", ");
    }
    if (labels.size() == 2) {
        return std::to_string(spec.scale_min) + " is " + labels[0] + " and " + std::to_string(spec.scale_max) +
               " is " + labels[1];
    }
    return std::to_string(spec.scale_min) + " is the lowest and " + std::to_string(spec.scale_max) + " is the highest";
}

// The fixed survey question with its response-format constraints; identical
// bytes under every regime.
inline std::string question_block(const IndicatorSpec& spec) {
    std::string out;
    out += std::string(kQuestionMarker) + spec.question_text + "\n";
    out += "Please use a scale from " + std::to_string(spec.scale_min) + " to " + std::to_string(spec.scale_max) +
           ", where " + scale_recital(spec) + ".\n";
    out += "You can only respond with a score number based on the scale provided and please do not give reasons.\n";
    out += "Your score number:";
    return out;
}

inline std::string manual_prefix(const std::string& country_name) {
    return "You are a citizen of " + country_name + ".";
}

inline std::string instantiate(const std::string& instruction, const std::string& country_name) {
    return detail::replace_all(instruction, "{country}", country_name);
}

// Lines: [conditioning] persona [demos] question-block, sent as one user message.
inline std::vector<Message> render(Regime regime, const std::optional<std::string>& country_name,
                                   const PersonaVariant& variant, const IndicatorSpec& indicator,
                                   const PromptProgram* program = nullptr) {
    std::vector<std::string> lines;
    if (regime != Regime::generic && !country_name) throw MissingCountry("regime needs a country");
    switch (regime) {
        case Regime::generic: break;
        case Regime::manual: lines.push_back(manual_prefix(*country_name)); break;
        case Regime::compiled:
            if (!program) throw MissingProgram("compiled regime needs a prompt program");
            lines.push_back(instantiate(program->instruction, *country_name));
            break;
    }
    lines.push_back(persona_statement(variant));
    if (regime == Regime::compiled) {
        for (const auto& d : program->demos) {
            lines.push_back("Example question: " + d.question);
            lines.push_back("Example answer: " + d.answer);
        }
    }
    lines.push_back(question_block(indicator));
    return {Message{"user", detail::join(lines, "\n")}};
}

// ---------------------------------------------------------------------------
// Elicitation
// ---------------------------------------------------------------------------

struct ElicitedAnswer {
    std::string indicator_id;
    std::string question;
    int raw = 0;
};

struct Elicitation {
    CodedVector vector;
    std::vector<ElicitedAnswer> answers;
    int completions = 0;
};

class Elicitor {
public:
    Elicitor(Gateway& gateway, const IndicatorRegistry& reg, const CountryTable& countries, int max_tokens = 32)
        : gateway_(gateway), reg_(reg), countries_(countries), max_tokens_(max_tokens) {}

    // Ten completions in registry order, one format-reminder retry per item.
    Elicitation elicit_vector(const ConditionKey& condition, const PersonaVariant& variant,
                              const PromptProgram* program = nullptr) const {
        if (condition.regime == Regime::compiled && !program) throw MissingProgram("compiled condition without program");
        std::optional<std::string> name;
        if (condition.regime != Regime::generic) name = display_name(countries_, condition.country);

        Elicitation out;
        out.vector.source = CodedVector::Source::model;
        std::vector<int> raws;
        for (const auto& spec : reg_.indicators()) {
            auto messages = render(condition.regime, name, variant, spec, program);
            std::optional<int> raw;
            for (int attempt = 0; attempt < 2 && !raw; ++attempt) {
                if (attempt == 1) messages.back().content += std::string("\n") + kFormatReminder;
                CompletionRequest req{condition.model, messages, 0.0, max_tokens_, std::nullopt};
                ++out.completions;
                const std::string completion = gateway_.complete(req);
                try {
                    raw = parse_answer(completion, spec);
                } catch (const NoAnswerFound&) {
                }
            }
            if (!raw) throw ElicitationFailed(spec.id + " under " + regime_name(condition.regime) + "/" + condition.country);
            raws.push_back(*raw);
            out.answers.push_back({spec.id, spec.question_text, *raw});
        }
        out.vector = code_answers(raws, reg_, CodedVector::Source::model);
        validate_vector(out.vector, reg_);
        return out;
    }

    const IndicatorRegistry& registry() const { return reg_; }
    const CountryTable& countries() const { return countries_; }
    Gateway& gateway() const { return gateway_; }

private:
    Gateway& gateway_;
    const IndicatorRegistry& reg_;
    const CountryTable& countries_;
    int max_tokens_;
};

}  // namespace culturemap

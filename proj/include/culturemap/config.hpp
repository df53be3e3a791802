#pragma once

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "culturemap/benchmark.hpp"
#include "culturemap/error.hpp"
#include "culturemap/gateway.hpp"
#include "culturemap/ivs_ingest.hpp"
#include "culturemap/optimizer.hpp"
#include "culturemap/prompting.hpp"

namespace culturemap {

using json = nlohmann::json;

struct BackendConfig {
    std::string kind = "mock";  // mock | http
    std::string endpoint;
    std::string api_key;
    int max_concurrent = 4;
    int timeout_s = 120;
    int max_tokens = 32;
    int max_retries = 3;
    int retry_base_ms = 1000;
};

struct OptimizerConfig {
    std::string method = "copro";  // copro | mipro
    std::string base_instruction = "You are a citizen of {country}.";
    CoproOptions copro;
    MiproOptions mipro;
    double penalty = 100.0;
    std::size_t max_completions = 0;
    int folds = 5;
    double proposer_temperature = 0.7;
};

struct RunConfig {
    std::string config_dir = ".";
    std::optional<std::string> registry;
    std::optional<std::string> data;
    json synthetic;  // null when unused
    WaveYearTable wave_years{{5, 2007}, {6, 2012}, {7, 2019}};
    YearWindow window;
    AffineRescale affine;
    std::optional<std::string> space;
    std::optional<std::string> countries_table;
    std::string model = "mock-model";
    std::string proposer = "mock-proposer";
    BackendConfig backend;
    std::optional<BackendConfig> proposer_backend;
    json mock;  // mock backend block
    std::optional<std::string> cache;
    std::vector<std::string> countries;
    std::vector<std::string> regimes{"generic", "manual"};
    std::optional<std::string> program;
    std::optional<std::string> report;
    OptimizerConfig optimizer;
    std::uint64_t seed = 0;
    int workers = 1;
    std::string out = "out";
};

// ---------------------------------------------------------------------------
// Layering: file < env < flags. Dotted names address nested keys.
// ---------------------------------------------------------------------------

// Flag values are parsed as JSON when they look like JSON, else kept as text.
inline json flag_value(const std::string& text) {
    if (text.empty()) return text;
    try {
        auto v = json::parse(text);
        if (v.is_number() || v.is_boolean() || v.is_array() || v.is_object() || v.is_null()) return v;
    } catch (const json::exception&) {
    }
    return text;
}

inline void set_dotted(json& root, const std::string& dotted, json value) {
    json* node = &root;
    const auto parts = detail::split(dotted, '.');
    for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
        if (parts[i].empty()) throw ConfigError("bad config key '" + dotted + "'");
        if (!node->is_object()) *node = json::object();
        node = &(*node)[parts[i]];
    }
    if (!node->is_object()) *node = json::object();
    (*node)[parts.back()] = std::move(value);
}

inline std::vector<std::string> csv_list(const json& v) {
    if (v.is_array()) return v.get<std::vector<std::string>>();
    std::vector<std::string> out;
    for (const auto& s : detail::split(v.get<std::string>(), ','))
        if (!detail::trim(s).empty()) out.emplace_back(detail::trim(s));
    return out;
}

inline const std::vector<std::pair<const char*, const char*>>& env_bindings() {
    static const std::vector<std::pair<const char*, const char*>> bindings{
        {"CULTUREMAP_ENDPOINT", "backend.endpoint"},
        {"CULTUREMAP_API_KEY", "backend.api_key"},
        {"CULTUREMAP_CACHE", "cache"},
        {"CULTUREMAP_PROPOSER_ENDPOINT", "proposer_backend.endpoint"},
    };
    return bindings;
}

// Path-valued keys in a config file are relative to the file's directory.
inline void resolve_file_paths(json& j, const std::filesystem::path& dir) {
    for (const char* key : {"registry", "data", "space", "countries_table", "cache", "program", "out", "report"}) {
        if (!j.contains(key) || !j[key].is_string()) continue;
        std::filesystem::path p(j[key].get<std::string>());
        if (p.is_relative()) j[key] = (dir / p).lexically_normal().string();
    }
    if (!j.contains("optimizer") || !j["optimizer"].is_object()) return;
    for (const char* key : {"copro_template", "mipro_template"}) {
        auto& o = j["optimizer"];
        if (!o.contains(key) || !o[key].is_string()) continue;
        std::filesystem::path p(o[key].get<std::string>());
        if (p.is_relative()) o[key] = (dir / p).lexically_normal().string();
    }
}

inline json layered_config(const std::optional<std::string>& config_path,
                           const std::vector<std::pair<std::string, std::string>>& flag_overrides) {
    json j = json::object();
    if (config_path) {
        try {
            j = json::parse(detail::read_file(*config_path));
        } catch (const json::exception& e) {
            throw ConfigError("config " + *config_path + ": " + e.what());
        }
        if (!j.is_object()) throw ConfigError("config root must be an object");
        resolve_file_paths(j, std::filesystem::path(*config_path).parent_path());
    }
    std::set<std::string> touched;
    for (const auto& [env, key] : env_bindings()) {
        if (const char* v = std::getenv(env); v && *v) {
            set_dotted(j, key, std::string(v));
            touched.insert(key);
        }
    }
    for (const auto& [key, value] : flag_overrides) {
        set_dotted(j, key, flag_value(value));
        touched.insert(key);
    }
    // An endpoint given outside the file selects the http backend unless the
    // kind is overridden as well.
    for (const char* block : {"backend", "proposer_backend"}) {
        const std::string b(block);
        if (touched.count(b + ".endpoint") && !touched.count(b + ".kind")) set_dotted(j, b + ".kind", "http");
    }
    return j;
}

inline BackendConfig backend_from_json(const json& j, BackendConfig b = {}) {
    b.kind = j.value("kind", b.kind);
    b.endpoint = j.value("endpoint", b.endpoint);
    if (!b.endpoint.empty() && !j.contains("kind")) b.kind = "http";
    b.api_key = j.value("api_key", b.api_key);
    if (j.contains("api_key_env")) {
        if (const char* v = std::getenv(j["api_key_env"].get<std::string>().c_str())) b.api_key = v;
    }
    b.max_concurrent = j.value("max_concurrent", b.max_concurrent);
    b.timeout_s = j.value("timeout_s", b.timeout_s);
    b.max_tokens = j.value("max_tokens", b.max_tokens);
    b.max_retries = j.value("max_retries", b.max_retries);
    b.retry_base_ms = j.value("retry_base_ms", b.retry_base_ms);
    if (b.kind != "mock" && b.kind != "http") throw ConfigError("backend.kind must be mock or http");
    if (b.kind == "http" && b.endpoint.empty()) throw ConfigError("http backend needs an endpoint");
    return b;
}

inline RunConfig run_config_from_json(const json& j) {
    RunConfig c;
    try {
        const auto opt_str = [&](const char* key) -> std::optional<std::string> {
            if (!j.contains(key) || j[key].is_null()) return std::nullopt;
            return j[key].get<std::string>();
        };
        c.registry = opt_str("registry");
        c.data = opt_str("data");
        if (j.contains("synthetic")) c.synthetic = j["synthetic"];
        if (j.contains("waves")) {
            c.wave_years.clear();
            for (const auto& [k, v] : j["waves"].items())
                c.wave_years[static_cast<int>(detail::parse_int(k, "waves"))] = v.get<int>();
        }
        if (j.contains("window")) c.window = {j["window"].at(0).get<int>(), j["window"].at(1).get<int>()};
        if (j.contains("affine")) {
            const auto& a = j["affine"];
            c.affine = {a.at(0).get<double>(), a.at(1).get<double>(), a.at(2).get<double>(), a.at(3).get<double>()};
        }
        c.space = opt_str("space");
        c.countries_table = opt_str("countries_table");
        c.model = j.value("model", c.model);
        c.proposer = j.value("proposer", c.proposer);
        if (j.contains("backend")) c.backend = backend_from_json(j["backend"]);
        if (j.contains("proposer_backend")) c.proposer_backend = backend_from_json(j["proposer_backend"], c.backend);
        if (j.contains("mock")) c.mock = j["mock"];
        c.cache = opt_str("cache");
        if (j.contains("countries")) c.countries = csv_list(j["countries"]);
        if (j.contains("regimes")) c.regimes = csv_list(j["regimes"]);
        for (const auto& r : c.regimes) parse_regime(r);
        c.program = opt_str("program");
        c.report = opt_str("report");
        if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
        c.workers = j.value("workers", c.workers);
        c.out = j.value("out", c.out);
        if (j.contains("optimizer")) {
            const auto& o = j["optimizer"];
            auto& oc = c.optimizer;
            oc.method = o.value("method", oc.method);
            if (oc.method != "copro" && oc.method != "mipro") throw ConfigError("optimizer.method must be copro or mipro");
            oc.base_instruction = o.value("base_instruction", oc.base_instruction);
            oc.copro.breadth = o.value("breadth", oc.copro.breadth);
            oc.copro.depth = o.value("depth", oc.copro.depth);
            oc.mipro.n_instructions = o.value("n_instructions", oc.mipro.n_instructions);
            oc.mipro.n_demo_sets = o.value("n_demo_sets", oc.mipro.n_demo_sets);
            oc.mipro.trials = o.value("trials", oc.mipro.trials);
            oc.mipro.minibatch = o.value("minibatch", oc.mipro.minibatch);
            oc.mipro.exploration = o.value("exploration", oc.mipro.exploration);
            oc.mipro.max_demos = o.value("max_demos", oc.mipro.max_demos);
            oc.penalty = o.value("penalty", oc.penalty);
            oc.max_completions = o.value("max_completions", oc.max_completions);
            oc.folds = o.value("folds", oc.folds);
            oc.proposer_temperature = o.value("proposer_temperature", oc.proposer_temperature);
            if (o.contains("copro_template")) oc.copro.meta_template = detail::read_file(o["copro_template"].get<std::string>());
            if (o.contains("mipro_template")) oc.mipro.meta_template = detail::read_file(o["mipro_template"].get<std::string>());
        }
        c.optimizer.mipro.seed = c.seed;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    return c;
}

// ---------------------------------------------------------------------------
// Synthetic block
//
//   "synthetic": { "default": true, "seed": 7, "noise_sd": 0.0, ... }
// or a full spec with "countries", "loadings", "center".
// ---------------------------------------------------------------------------

inline SyntheticSpec synthetic_from_json(const json& j, const IndicatorRegistry& reg) {
    SyntheticSpec spec = default_synthetic_spec(reg);
    try {
        if (j.contains("countries")) {
            spec.countries.clear();
            for (const auto& c : j["countries"]) {
                spec.countries.push_back({c.at("code").get<std::string>(), c.value("name", c.at("code").get<std::string>()),
                                          c.value("zone", std::string()),
                                          {c.at("latent").at(0).get<double>(), c.at("latent").at(1).get<double>()}});
            }
        }
        if (j.contains("loadings")) {
            spec.loadings.clear();
            for (const auto& row : j["loadings"]) spec.loadings.push_back({row.at(0).get<double>(), row.at(1).get<double>()});
        }
        if (j.contains("center")) spec.center = j["center"].get<std::vector<double>>();
        spec.noise_sd = j.value("noise_sd", spec.noise_sd);
        spec.respondents_per_group = j.value("respondents_per_group", spec.respondents_per_group);
        if (j.contains("waves")) spec.waves = j["waves"].get<std::vector<int>>();
        spec.weight_min = j.value("weight_min", spec.weight_min);
        spec.weight_max = j.value("weight_max", spec.weight_max);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("synthetic: ") + e.what());
    }
    return spec;
}

inline CountryTable country_table_from_synthetic(const SyntheticSpec& spec) {
    CountryTable t;
    for (const auto& c : spec.countries) t[c.code] = {c.name, c.zone};
    return t;
}

// Off the country lattice, so unconditioned answers sit away from every country.
inline constexpr std::array<double, 2> kFallbackLatent{2.0, 2.0};

// Profiles that answer with each synthetic country's noiseless raw vector
// when the prompt names that country as "citizen of <name>.".
inline MockConfig mock_from_synthetic(const SyntheticSpec& spec, const IndicatorRegistry& reg,
                                      const std::array<double, 2>& fallback_latent) {
    MockConfig m;
    const auto table = [&](const std::array<double, 2>& latent) {
        std::map<std::string, int> t;
        const auto raw = synthetic_raw_answers(spec, reg, latent);
        for (std::size_t j = 0; j < reg.size(); ++j) t[reg[j].id] = raw[j];
        return t;
    };
    for (const auto& c : spec.countries) m.profiles.push_back({c.code, table(c.latent), {"citizen of " + c.name + "."}});
    m.fallback = table(fallback_latent);
    return m;
}

}  // namespace culturemap

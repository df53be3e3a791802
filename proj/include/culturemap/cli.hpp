#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "culturemap/benchmark.hpp"
#include "culturemap/config.hpp"
#include "culturemap/error.hpp"
#include "culturemap/gateway.hpp"
#include "culturemap/ivs_ingest.hpp"
#include "culturemap/metrics.hpp"
#include "culturemap/optimizer.hpp"
#include "culturemap/projection.hpp"
#include "culturemap/prompting.hpp"
#include "culturemap/svg.hpp"
#include "culturemap/survey_core.hpp"

namespace culturemap {

// Exit codes: 0 ok, 1 usage/config, 2 data or partial failure, 3 backend.
inline int exit_code(ErrorCategory c) {
    switch (c) {
        case ErrorCategory::usage: return 1;
        case ErrorCategory::data: return 2;
        case ErrorCategory::backend: return 3;
    }
    return 1;
}

struct CliStats {
    GatewayStats target;
    GatewayStats proposer;
};

namespace cli_detail {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

inline void write_text(const fs::path& p, const std::string& text) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    detail::write_file(p.string(), text);
}

// Everything a command needs, built lazily from the run configuration.
class Session {
public:
    explicit Session(RunConfig cfg) : cfg_(std::move(cfg)) {}

    const RunConfig& config() const { return cfg_; }

    const IndicatorRegistry& registry() {
        if (!registry_) {
            if (!cfg_.registry) throw ConfigError("no indicator registry configured (registry / --registry)");
            registry_ = std::make_unique<IndicatorRegistry>(load_registry(*cfg_.registry));
        }
        return *registry_;
    }

    const std::optional<SyntheticSpec>& synthetic() {
        if (!synthetic_loaded_) {
            synthetic_loaded_ = true;
            if (!cfg_.synthetic.is_null()) synthetic_ = synthetic_from_json(cfg_.synthetic, registry());
        }
        return synthetic_;
    }

    std::uint64_t synthetic_seed() const {
        if (cfg_.synthetic.is_object() && cfg_.synthetic.contains("seed")) return cfg_.synthetic["seed"].get<std::uint64_t>();
        return cfg_.seed;
    }

    const CountryTable& countries() {
        if (!countries_) {
            if (cfg_.countries_table) {
                countries_ = load_country_table(*cfg_.countries_table);
            } else if (synthetic()) {
                countries_ = country_table_from_synthetic(*synthetic());
            } else {
                countries_ = CountryTable{};
            }
        }
        return *countries_;
    }

    std::map<std::string, std::string> zones() {
        std::map<std::string, std::string> z;
        for (const auto& [code, info] : countries())
            if (!info.zone.empty()) z[code] = info.zone;
        return z;
    }

    std::vector<RespondentRecord> records() {
        if (cfg_.data) return load_respondents(*cfg_.data, registry());
        if (synthetic()) return generate_synthetic(*synthetic(), registry(), synthetic_seed()).records;
        throw ConfigError("no survey data configured (data / --data, or a synthetic block)");
    }

    BenchmarkSpace build() {
        const auto kept = filter_waves(records(), cfg_.window, cfg_.wave_years);
        if (kept.empty()) throw EmptyGroup("no respondents inside the year window");
        BenchmarkSpace s = build_space(kept, registry(), cfg_.affine);
        s.references = country_references(s, aggregate_country_wave(kept, registry()), zones());
        return s;
    }

    const BenchmarkSpace& space() {
        if (!space_) {
            if (cfg_.space && fs::exists(*cfg_.space)) {
                space_ = load_space(*cfg_.space);
                if (space_->registry_hash != registry().hash())
                    throw ConfigError("benchmark space " + *cfg_.space + " was built with a different registry");
            } else if (cfg_.space && !cfg_.data && !synthetic()) {
                throw ConfigError("benchmark space " + *cfg_.space + " does not exist");
            } else {
                space_ = build();
            }
        }
        return *space_;
    }

    std::vector<std::string> selected_countries() {
        std::vector<std::string> out = cfg_.countries;
        if (out.empty())
            for (const auto& r : space().references) out.push_back(r.country);
        for (const auto& c : out) require_reference(space().references, c);
        return out;
    }

    Gateway& gateway() {
        ensure_backends();
        return *gateway_;
    }

    Gateway& proposer_gateway() {
        ensure_backends();
        return *proposer_gateway_;
    }

    void set_audit(std::ostream* audit) { audit_ = audit; }

    void audit_line(const ojson& j) {
        if (!audit_) return;
        std::lock_guard lock(audit_mu_);
        (*audit_) << j.dump() << '\n';
    }

    CliStats stats() const {
        CliStats s;
        if (gateway_) s.target = gateway_->stats();
        if (proposer_gateway_) s.proposer = proposer_gateway_->stats();
        return s;
    }

    std::optional<PromptProgram> program() {
        if (!cfg_.program) return std::nullopt;
        try {
            return program_from_json(nlohmann::json::parse(detail::read_file(*cfg_.program)));
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError("program " + *cfg_.program + ": " + e.what());
        }
    }

private:
    MockConfig mock_config() {
        const json& m = cfg_.mock;
        const bool has_profiles = m.is_object() && m.contains("profiles");
        const bool from_synth = m.is_object() && m.contains("from_synthetic") ? m["from_synthetic"].get<bool>()
                                                                              : !has_profiles && synthetic().has_value();
        MockConfig mc;
        if (from_synth) {
            if (!synthetic()) throw ConfigError("mock.from_synthetic needs a synthetic block");
            std::array<double, 2> fb = kFallbackLatent;
            if (m.is_object() && m.contains("fallback_latent"))
                fb = {m["fallback_latent"].at(0).get<double>(), m["fallback_latent"].at(1).get<double>()};
            mc = mock_from_synthetic(*synthetic(), registry(), fb);
            if (m.is_object() && m.contains("proposals")) mc.proposals = m["proposals"].get<std::vector<std::string>>();
        } else if (m.is_object()) {
            try {
                mc = mock_config_from_json(m);
            } catch (const json::exception& e) {
                throw ConfigError(std::string("mock: ") + e.what());
            }
        }
        return mc;
    }

    std::unique_ptr<Backend> make_backend(const BackendConfig& b) {
        if (b.kind == "mock") return std::make_unique<MockBackend>(mock_config(), registry());
        RetryPolicy retry{b.max_retries, std::chrono::milliseconds(b.retry_base_ms)};
        auto http = std::make_unique<HttpBackend>(b.endpoint, b.api_key, b.max_concurrent,
                                                  std::chrono::seconds(b.timeout_s), retry);
        http->set_response_hook([this](const nlohmann::json& echoed) {
            audit_line(ojson{{"type", "response"}, {"echo", ojson::parse(echoed.dump())}});
        });
        return http;
    }

    void ensure_backends() {
        if (gateway_) return;
        if (cfg_.cache) {
            const fs::path p(*cfg_.cache);
            if (p.has_parent_path()) fs::create_directories(p.parent_path());
            cache_ = std::make_unique<ResponseCache>(*cfg_.cache);
        }
        backend_ = make_backend(cfg_.backend);
        gateway_ = std::make_unique<Gateway>(*backend_, cache_.get());
        Backend* pb = backend_.get();
        if (cfg_.proposer_backend) {
            proposer_backend_ = make_backend(*cfg_.proposer_backend);
            pb = proposer_backend_.get();
        }
        proposer_gateway_ = std::make_unique<Gateway>(*pb, cache_.get());
        const auto hook = [this](const char* role) {
            return [this, role](const std::string& key, const CompletionRequest& req, const std::string& completion) {
                audit_line(ojson{{"type", "completion"},
                                 {"role", role},
                                 {"key", key},
                                 {"model", req.model},
                                 {"prompt", prompt_text(req)},
                                 {"completion", completion},
                                 {"completion_sha256", detail::sha256_hex(completion)}});
            };
        };
        gateway_->set_audit_hook(hook("target"));
        proposer_gateway_->set_audit_hook(hook("proposer"));
    }

    RunConfig cfg_;
    std::unique_ptr<IndicatorRegistry> registry_;
    bool synthetic_loaded_ = false;
    std::optional<SyntheticSpec> synthetic_;
    std::optional<CountryTable> countries_;
    std::optional<BenchmarkSpace> space_;
    std::unique_ptr<ResponseCache> cache_;
    std::unique_ptr<Backend> backend_;
    std::unique_ptr<Backend> proposer_backend_;
    std::unique_ptr<Gateway> gateway_;
    std::unique_ptr<Gateway> proposer_gateway_;
    std::ostream* audit_ = nullptr;
    std::mutex audit_mu_;
};

inline EvaluatorOptions evaluator_options(const RunConfig& c) {
    return {c.optimizer.penalty, c.optimizer.max_completions, c.workers};
}

inline PromptProgram base_program(const RunConfig& c) {
    PromptProgram p;
    p.instruction = c.optimizer.base_instruction;
    return p;
}

inline std::string fmt_opt(const std::optional<double>& v, int digits = 3) {
    return v ? detail::fmt_fixed(*v, digits) : std::string("-");
}

inline std::vector<svg::PlotPoint> reference_points(const BenchmarkSpace& space) {
    std::vector<svg::PlotPoint> pts;
    for (const auto& r : space.references) pts.push_back({r.country, to_point(r.nu), r.zone});
    return pts;
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

inline int cmd_build_benchmark(Session& s, std::ostream& out) {
    const BenchmarkSpace space = s.build();
    const fs::path dest = s.config().space ? fs::path(*s.config().space) : fs::path(s.config().out) / "space.txt";
    write_text(dest, serialize_space(space));
    out << "eigenvalues " << detail::fmt_fixed(space.eigenvalues[0], 6) << " "
        << detail::fmt_fixed(space.eigenvalues[1], 6) << "\n";
    out << "rotation " << detail::fmt_fixed(space.rotation[0], 6) << " " << detail::fmt_fixed(space.rotation[1], 6) << " "
        << detail::fmt_fixed(space.rotation[2], 6) << " " << detail::fmt_fixed(space.rotation[3], 6) << "\n";
    out << "varimax_sweeps " << space.varimax_sweeps << "\n";
    for (const auto& r : space.references)
        out << r.country << "\t" << detail::fmt_fixed(r.nu[0], 4) << "\t" << detail::fmt_fixed(r.nu[1], 4) << "\n";
    out << "wrote " << dest.string() << "\n";
    return 0;
}

inline int cmd_evaluate(Session& s, std::ostream& out, std::ostream& err) {
    const auto& cfg = s.config();
    const BenchmarkSpace& space = s.space();
    const auto countries = s.selected_countries();
    const Elicitor elicitor(s.gateway(), s.registry(), s.countries(), cfg.backend.max_tokens);
    const Evaluator eval(elicitor, space, space.references, cfg.model, evaluator_options(cfg));

    bool want_manual = false, want_compiled = false;
    for (const auto& r : cfg.regimes) {
        want_manual |= parse_regime(r) == Regime::manual;
        want_compiled |= parse_regime(r) == Regime::compiled;
    }
    std::optional<PromptProgram> program;
    if (want_compiled) {
        program = s.program();
        if (!program) throw MissingProgram("regime compiled needs a prompt program (program / --program)");
    }

    const fs::path dir(cfg.out);
    ojson failures = ojson::array();
    RegimePoints points;
    try {
        points.generic = eval.condition_point(ConditionKey::generic(cfg.model));
    } catch (const ElicitationFailed& e) {
        failures.push_back({{"regime", "generic"}, {"country", kGenericCountry}, {"error", e.what()}});
        write_text(dir / "report.json", ojson{{"model", cfg.model}, {"failures", failures}}.dump(2) + "\n");
        err << "error: generic regime failed: " << e.what() << "\n";
        return 2;
    }
    for (const auto& c : countries) {
        if (want_manual) {
            try {
                points.manual[c] = eval.condition_point(ConditionKey::manual(cfg.model, c));
            } catch (const ElicitationFailed& e) {
                failures.push_back({{"regime", "manual"}, {"country", c}, {"error", e.what()}});
            }
        }
        if (want_compiled) {
            try {
                points.compiled[c] =
                    eval.condition_point(ConditionKey::compiled(cfg.model, c, program->program_id()), &*program);
            } catch (const ElicitationFailed& e) {
                failures.push_back({{"regime", "compiled"}, {"country", c}, {"error", e.what()}});
            }
        }
    }

    const RegimeReport report = regime_report(cfg.model, space.references, points, countries);
    ojson j = report_to_json(report);
    j["regimes"] = cfg.regimes;
    if (program) j["program_id"] = program->program_id();
    j["failures"] = failures;
    write_text(dir / "report.csv", report_to_csv(report));
    write_text(dir / "report.json", j.dump(2) + "\n");

    svg::MapPlotSpec plot;
    plot.axis_labels = space.axis_labels;
    plot.countries = reference_points(space);
    plot.overlays.push_back({cfg.model, points.generic, "generic"});
    for (const auto& [c, p] : points.manual) plot.overlays.push_back({c, p, "manual"});
    for (const auto& [c, p] : points.compiled) plot.overlays.push_back({c, p, "compiled"});
    write_text(dir / "map.svg", svg::render_map(plot));

    const auto row = [&](const char* name, const std::optional<RegimeSummary>& sum, const std::optional<double>& imp) {
        char buf[128];
        std::snprintf(buf, sizeof buf, "%-8s %4zu %8s %8s %9s\n", name, sum ? sum->count : std::size_t{0},
                      sum ? detail::fmt_fixed(sum->mean, 3).c_str() : "-",
                      sum ? detail::fmt_fixed(sum->median, 3).c_str() : "-", fmt_opt(imp).c_str());
        out << buf;
    };
    out << "regime      n     mean   median  improved\n";
    row("nocond", report.summary.nocond, std::nullopt);
    if (want_manual) row("manual", report.summary.man, report.summary.improved_fraction_man);
    if (want_compiled) row("compiled", report.summary.dspy, report.summary.improved_fraction_dspy);
    out << "wrote " << (dir / "report.csv").string() << ", report.json, map.svg\n";

    if (!failures.empty()) {
        err << "warning: " << failures.size() << " condition(s) failed; see report.json\n";
        return 2;
    }
    return 0;
}

inline CompileResult run_compile(Session& s, const Evaluator& eval, const std::vector<std::string>& train,
                                 const std::vector<std::string>& dev, std::uint64_t seed) {
    const auto& cfg = s.config();
    const Proposer proposer{s.proposer_gateway(), cfg.proposer, cfg.optimizer.proposer_temperature, 1024};
    if (cfg.optimizer.method == "mipro") {
        MiproOptions opt = cfg.optimizer.mipro;
        opt.seed = seed;
        return compile_mipro(base_program(cfg), eval, train, dev, &proposer, opt);
    }
    return compile_copro(base_program(cfg), eval, train, cfg.optimizer.copro.breadth > 0 ? &proposer : nullptr,
                         cfg.optimizer.copro);
}

inline void attach_score_audit(Session& s, Evaluator& eval) {
    eval.set_score_hook([&s](const PromptProgram& p, const ScoreOutcome& o) {
        s.audit_line(ojson{{"type", "score"},
                           {"program_id", p.program_id()},
                           {"instruction", p.instruction},
                           {"demos", p.demos.size()},
                           {"country", o.country},
                           {"score", o.score},
                           {"failed", o.failed}});
    });
}

inline int cmd_compile(Session& s, std::ostream& out) {
    const auto& cfg = s.config();
    const fs::path dir(cfg.out);
    fs::create_directories(dir);
    std::ofstream audit(dir / "audit.jsonl", std::ios::trunc);
    s.set_audit(&audit);

    const BenchmarkSpace& space = s.space();
    const auto countries = s.selected_countries();
    const Elicitor elicitor(s.gateway(), s.registry(), s.countries(), cfg.backend.max_tokens);
    Evaluator eval(elicitor, space, space.references, cfg.model, evaluator_options(cfg));
    attach_score_audit(s, eval);

    std::vector<std::string> train = countries, dev;
    if (cfg.optimizer.method == "mipro") std::tie(train, dev) = split_train_dev(countries, cfg.seed);
    const CompileResult result = run_compile(s, eval, train, dev, cfg.seed);
    s.set_audit(nullptr);

    ojson j = compile_result_to_json(result);
    j["method"] = cfg.optimizer.method;
    j["model"] = cfg.model;
    j["train"] = train;
    j["dev"] = dev;
    write_text(dir / "program.json", program_to_json(result.best).dump(2) + "\n");
    write_text(dir / "compile_result.json", j.dump(2) + "\n");

    out << "best instruction: " << result.best.instruction << "\n";
    out << "demos: " << result.best.demos.size() << "\n";
    out << "train J: " << fmt_opt(result.train_J, 4) << "\n";
    out << "completions: " << result.budget_used << (result.budget_exhausted ? " (budget exhausted)" : "") << "\n";
    out << "wrote " << (dir / "program.json").string() << ", compile_result.json, audit.jsonl\n";
    return 0;
}

inline int cmd_cross_validate(Session& s, std::ostream& out, std::ostream& err) {
    const auto& cfg = s.config();
    const fs::path dir(cfg.out);
    fs::create_directories(dir);
    std::ofstream audit(dir / "audit.jsonl", std::ios::trunc);
    s.set_audit(&audit);

    const BenchmarkSpace& space = s.space();
    const auto countries = s.selected_countries();
    const Elicitor elicitor(s.gateway(), s.registry(), s.countries(), cfg.backend.max_tokens);
    Evaluator eval(elicitor, space, space.references, cfg.model, evaluator_options(cfg));
    attach_score_audit(s, eval);

    MapPoint generic;
    try {
        generic = eval.condition_point(ConditionKey::generic(cfg.model));
    } catch (const ElicitationFailed& e) {
        err << "error: generic regime failed: " << e.what() << "\n";
        return 2;
    }

    const bool mipro = cfg.optimizer.method == "mipro";
    std::size_t fold_no = 0;
    const CvReport report = cross_validate(
        eval, countries, cfg.optimizer.folds, cfg.seed, mipro,
        [&](const std::vector<std::string>& train, const std::vector<std::string>& dev) {
            return run_compile(s, eval, train, dev, cfg.seed + ++fold_no);
        });
    s.set_audit(nullptr);

    std::map<std::string, MapPoint> aligned;
    for (const auto& f : report.folds)
        for (const auto& h : f.heldout)
            if (!h.failed && h.aligned_point) aligned[h.country] = *h.aligned_point;
    const auto shifts = shift_records(generic, aligned, space.references);

    ojson j = cv_report_to_json(report);
    j["method"] = cfg.optimizer.method;
    j["model"] = cfg.model;
    j["seed"] = cfg.seed;
    j["generic_point"] = point_json(generic);
    ojson sj = ojson::array();
    for (const auto& sh : shifts) sj.push_back(shift_to_json(sh));
    j["shifts"] = sj;
    write_text(dir / "cv_report.json", j.dump(2) + "\n");

    std::map<std::string, std::string> zones;
    std::map<std::string, std::string> names;
    for (const auto& r : space.references)
        if (!r.zone.empty()) zones[r.country] = r.zone;
    for (const auto& [code, z] : s.zones()) zones.emplace(code, z);
    for (const auto& [code, info] : s.countries()) names[code] = info.name;
    write_text(dir / "shift_panels.svg", svg::render_shift_panels(shifts, zones, names));

    for (std::size_t f = 0; f < report.folds.size(); ++f) {
        const auto& fr = report.folds[f];
        out << "fold " << f + 1 << ": test " << detail::join(fr.fold.test, ",") << "  "
            << (fr.failed ? "FAILED (" + fr.error + ")" : "held-out " + detail::fmt_fixed(fr.heldout_mean, 4)) << "\n";
    }
    out << "mean held-out distance: "
        << (std::isnan(report.mean_heldout) ? std::string("-") : detail::fmt_fixed(report.mean_heldout, 4)) << "\n";
    out << "wrote " << (dir / "cv_report.json").string() << ", shift_panels.svg, audit.jsonl\n";
    if (report.failed_folds > 0) {
        err << "warning: " << report.failed_folds << " fold(s) failed\n";
        return 2;
    }
    return 0;
}

inline int cmd_render_map(Session& s, std::ostream& out) {
    const auto& cfg = s.config();
    const BenchmarkSpace& space = s.space();
    svg::MapPlotSpec plot;
    plot.axis_labels = space.axis_labels;
    plot.countries = reference_points(space);
    if (cfg.report) {
        ojson j;
        try {
            j = ojson::parse(detail::read_file(*cfg.report));
            const std::string model = j.value("model", std::string("model"));
            bool generic_done = false;
            for (const auto& row : j.at("rows")) {
                if (!generic_done) {
                    plot.overlays.push_back({model, point_from_json(row.at("generic_point")), "generic"});
                    generic_done = true;
                }
                if (!row.at("man_point").is_null())
                    plot.overlays.push_back({row.at("country").get<std::string>(), point_from_json(row.at("man_point")), "manual"});
                if (!row.at("dspy_point").is_null())
                    plot.overlays.push_back(
                        {row.at("country").get<std::string>(), point_from_json(row.at("dspy_point")), "compiled"});
            }
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError("report " + *cfg.report + ": " + e.what());
        }
    }
    const fs::path dest = fs::path(cfg.out) / "map.svg";
    write_text(dest, svg::render_map(plot));
    out << "wrote " << dest.string() << " (" << plot.countries.size() << " countries, " << plot.overlays.size()
        << " overlays)\n";
    return 0;
}

inline int cmd_generate_synthetic(Session& s, std::ostream& out) {
    if (!s.synthetic()) throw ConfigError("generate-synthetic needs a synthetic block (or --synthetic)");
    const auto& reg = s.registry();
    const auto& spec = *s.synthetic();
    const SyntheticDataset ds = generate_synthetic(spec, reg, s.synthetic_seed());
    const fs::path dir(s.config().out);
    write_text(dir / "respondents.csv", respondents_to_csv(ds.records, reg));
    std::string countries = "code,name,zone\n", latents = "code,latent1,latent2\n";
    for (const auto& c : spec.countries) countries += c.code + "," + c.name + "," + c.zone + "\n";
    for (const auto& l : ds.latents) latents += l.code + "," + detail::fmt17(l.latent[0]) + "," + detail::fmt17(l.latent[1]) + "\n";
    write_text(dir / "countries.csv", countries);
    write_text(dir / "latents.csv", latents);
    write_text(dir / "mock.json", mock_config_to_json(mock_from_synthetic(spec, reg, kFallbackLatent)).dump(2) + "\n");
    out << "wrote " << ds.records.size() << " respondents for " << spec.countries.size() << " countries to "
        << dir.string() << "\n";
    return 0;
}

// Pulls `--a.b=value` / `--a.b value` overrides out of argv; CLI11 sees the rest.
inline std::vector<std::pair<std::string, std::string>> extract_dotted(std::vector<std::string>& args) {
    std::vector<std::pair<std::string, std::string>> found;
    std::vector<std::string> rest;
    for (std::size_t i = 0; i < args.size(); ++i) {
        const std::string& a = args[i];
        if (a.rfind("--", 0) != 0) {
            rest.push_back(a);
            continue;
        }
        const auto eq = a.find('=');
        const std::string name = a.substr(2, eq == std::string::npos ? std::string::npos : eq - 2);
        if (name.find('.') == std::string::npos) {
            rest.push_back(a);
            continue;
        }
        if (eq != std::string::npos) {
            found.emplace_back(name, a.substr(eq + 1));
        } else {
            if (i + 1 >= args.size()) throw ConfigError("override --" + name + " needs a value");
            found.emplace_back(name, args[++i]);
        }
    }
    args = std::move(rest);
    return found;
}

}  // namespace cli_detail

// Entry point shared by the executable and the acceptance suite.
inline int run_cli(std::vector<std::string> args, std::ostream& out = std::cout, std::ostream& err = std::cerr,
                   CliStats* stats = nullptr) {
    using namespace cli_detail;
    std::vector<std::pair<std::string, std::string>> overrides;
    try {
        overrides = extract_dotted(args);
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }

    CLI::App app{"culturemap: cultural-map benchmark and prompt alignment"};
    app.require_subcommand(1);
    std::optional<std::string> config_path;
    std::vector<std::pair<std::string, std::optional<std::string>>> named{
        {"model", {}},       {"proposer", {}},        {"backend.endpoint", {}}, {"cache", {}},
        {"countries", {}},   {"regimes", {}},         {"seed", {}},             {"out", {}},
        {"data", {}},        {"registry", {}},        {"space", {}},            {"program", {}},
        {"report", {}},      {"optimizer.method", {}}, {"optimizer.folds", {}}, {"workers", {}},
    };
    bool synthetic_flag = false;

    const auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "JSON run configuration");
        for (auto& [key, value] : named) {
            std::string flag = key;
            if (flag == "backend.endpoint") flag = "endpoint";
            if (flag == "optimizer.method") flag = "method";
            if (flag == "optimizer.folds") flag = "folds";
            sub->add_option("--" + flag, value);
        }
        sub->add_flag("--synthetic", synthetic_flag, "use the built-in synthetic survey");
    };
    const std::vector<std::pair<std::string, std::string>> commands{
        {"build-benchmark", "fit the cultural-map space and country references"},
        {"evaluate", "place a model on the map under each conditioning regime"},
        {"compile-prompt", "optimize the conditioning instruction"},
        {"cross-validate", "k-fold held-out evaluation of prompt optimization"},
        {"render-map", "draw the cultural map with optional model overlays"},
        {"generate-synthetic", "write the synthetic survey and matching mock profiles"},
    };
    for (const auto& [name, help] : commands) add_common(app.add_subcommand(name, help));

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? 0 : 1;
    }

    std::string command;
    for (const auto& [name, _] : commands)
        if (app.got_subcommand(name)) command = name;

    int rc = 0;
    std::unique_ptr<Session> session;
    try {
        for (const auto& [key, value] : named)
            if (value) overrides.emplace_back(key, *value);
        auto j = layered_config(config_path, overrides);
        if (synthetic_flag && !j.contains("synthetic")) j["synthetic"] = json::object({{"default", true}});
        session = std::make_unique<Session>(run_config_from_json(j));
        if (command == "build-benchmark") rc = cmd_build_benchmark(*session, out);
        else if (command == "evaluate") rc = cmd_evaluate(*session, out, err);
        else if (command == "compile-prompt") rc = cmd_compile(*session, out);
        else if (command == "cross-validate") rc = cmd_cross_validate(*session, out, err);
        else if (command == "render-map") rc = cmd_render_map(*session, out);
        else rc = cmd_generate_synthetic(*session, out);
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        rc = exit_code(e.category());
    } catch (const std::filesystem::filesystem_error& e) {
        err << "error: " << e.what() << "\n";
        rc = 1;
    }
    if (session) {
        const CliStats st = session->stats();
        if (st.target.requests + st.proposer.requests > 0) {
            err << "completions: " << st.target.requests << " requests, " << st.target.cache_hits << " cache hits, "
                << st.target.backend_calls << " backend calls";
            if (st.proposer.requests > 0)
                err << "; proposer " << st.proposer.requests << " requests, " << st.proposer.cache_hits << " cache hits";
            err << "\n";
        }
        if (stats) *stats = st;
    }
    return rc;
}

inline int run_cli(int argc, char** argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    return run_cli(std::vector<std::string>(argv + 1, argv + argc), out, err);
}

}  // namespace culturemap

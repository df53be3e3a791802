#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <future>
#include <limits>
#include <map>
#include <mutex>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "culturemap/benchmark.hpp"
#include "culturemap/detail/text.hpp"
#include "culturemap/error.hpp"
#include "culturemap/gateway.hpp"
#include "culturemap/metrics.hpp"
#include "culturemap/projection.hpp"
#include "culturemap/prompting.hpp"

namespace culturemap {

// ---------------------------------------------------------------------------
// Proposer meta-prompts. {{...}} fields are filled here; {country} is left for
// the proposed instruction.
// ---------------------------------------------------------------------------

inline constexpr const char* kCoproTemplate =
    R"(You are improving an instruction that is placed before a fixed values-survey question. The instruction should make a language model answer the way a typical person from a given country would. The placeholder {country} is replaced by the country's name, so keep it in every instruction. Answers must stay a single number on the survey scale.

Current best instruction:
{{instruction}}

Previously tried instructions with their scores (negative cultural distance; higher is better, 0 is perfect):
{{history}}

Propose {{n}} rewrites of the current best instruction that should score higher. Reply with a numbered list, one instruction per line, and nothing else.)";

inline constexpr const char* kMiproTemplate =
    R"(Task: write instructions that condition a language model to answer values-survey questions the way people from a specific country would. The placeholder {country} is replaced by the country's name, so keep it in every instruction. Answers must stay a single number on the survey scale.

Base instruction:
{{instruction}}

Example answers from well-aligned runs:
{{examples}}

Propose {{n}} diverse instructions that differ in how they describe the cultural perspective and how they constrain the answer format. Reply with a numbered list, one instruction per line, and nothing else.)";

inline std::string fill_template(std::string tmpl, const std::map<std::string, std::string>& fields) {
    for (const auto& [k, v] : fields) tmpl = detail::replace_all(std::move(tmpl), "{{" + k + "}}", v);
    return tmpl;
}

// Items of a "1. foo" / "2) bar" list, trimmed, de-duplicated in order.
inline std::vector<std::string> parse_numbered_list(std::string_view text) {
    std::vector<std::string> out;
    std::set<std::string> seen;
    for (const auto& raw : detail::split(text, '\n')) {
        auto line = detail::trim(raw);
        std::size_t i = 0;
        while (i < line.size() && std::isdigit(static_cast<unsigned char>(line[i]))) ++i;
        if (i == 0 || i >= line.size() || (line[i] != '.' && line[i] != ')')) continue;
        auto item = detail::trim(line.substr(i + 1));
        if (item.size() >= 2 && item.front() == '"' && item.back() == '"') item = detail::trim(item.substr(1, item.size() - 2));
        if (item.empty()) continue;
        std::string s(item);
        if (seen.insert(s).second) out.push_back(std::move(s));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Scoring
// ---------------------------------------------------------------------------

struct ScoreOutcome {
    std::string country;
    double score = 0.0;  // -distance, or -penalty when elicitation failed
    bool failed = false;
    std::optional<MapPoint> point;
    std::vector<ElicitedAnswer> answers;  // first persona variant, for demo bootstrapping
};

struct BudgetExhausted {};

struct EvaluatorOptions {
    double penalty = 100.0;
    std::size_t max_completions = 0;  // 0 = unlimited
    int workers = 1;
};

// Objective evaluation for one target model against fixed human references.
class Evaluator {
public:
    using ScoreHook = std::function<void(const PromptProgram&, const ScoreOutcome&)>;

    Evaluator(const Elicitor& elicitor, const BenchmarkSpace& space, const std::vector<CountryReference>& refs,
              std::string model, EvaluatorOptions options = {})
        : elicitor_(elicitor), space_(space), refs_(refs), model_(std::move(model)), opt_(options) {}

    // Persona-averaged point for one condition; throws ElicitationFailed.
    MapPoint condition_point(const ConditionKey& key, const PromptProgram* program = nullptr,
                             std::vector<ElicitedAnswer>* first_answers = nullptr) const {
        std::vector<MapPoint> pts;
        for (const auto& v : variants()) {
            const Elicitation e = elicitor_.elicit_vector(key, v, program);
            completions_ += static_cast<std::size_t>(e.completions);
            if (first_answers && v.variant_id == 0) *first_answers = e.answers;
            pts.push_back(project(e.vector, space_));
        }
        return persona_average(pts);
    }

    // score = -||mu(theta) - nu_c||; a failed elicitation scores -penalty.
    ScoreOutcome score(const PromptProgram& program, const std::string& country) const {
        const std::string memo_key = program.program_id() + "\x1f" + country;
        {
            std::lock_guard lock(mu_);
            if (const auto it = memo_.find(memo_key); it != memo_.end()) return it->second;
        }
        const auto& ref = require_reference(refs_, country);
        if (opt_.max_completions > 0 && completions_.load() >= opt_.max_completions) throw BudgetExhausted{};

        ScoreOutcome out;
        out.country = country;
        try {
            const MapPoint pt = condition_point(ConditionKey::compiled(model_, country, program.program_id()), &program,
                                                &out.answers);
            out.point = pt;
            out.score = -distance(pt, to_point(ref.nu));
        } catch (const ElicitationFailed&) {
            out.failed = true;
            out.score = -opt_.penalty;
        }
        {
            std::lock_guard lock(mu_);
            memo_.emplace(memo_key, out);
        }
        if (hook_) {
            std::lock_guard lock(hook_mu_);
            hook_(program, out);
        }
        return out;
    }

    std::vector<ScoreOutcome> score_all(const PromptProgram& program, const std::vector<std::string>& countries) const {
        std::vector<ScoreOutcome> out(countries.size());
        if (opt_.workers <= 1 || countries.size() < 2) {
            for (std::size_t i = 0; i < countries.size(); ++i) out[i] = score(program, countries[i]);
            return out;
        }
        // Results are keyed by position, so completion order never matters.
        std::atomic<std::size_t> next{0};
        std::vector<std::future<void>> jobs;
        const auto worker = [&]() {
            for (std::size_t i = next++; i < countries.size(); i = next++) out[i] = score(program, countries[i]);
        };
        const int n = std::min<int>(opt_.workers, static_cast<int>(countries.size()));
        for (int w = 0; w < n; ++w) jobs.push_back(std::async(std::launch::async, worker));
        for (auto& j : jobs) j.get();
        return out;
    }

    // Mean score over the given countries.
    double objective_J(const PromptProgram& program, const std::vector<std::string>& countries,
                       std::vector<std::string>* failed = nullptr) const {
        if (countries.empty()) throw ConfigError("objective over an empty country set");
        double total = 0.0;
        for (const auto& o : score_all(program, countries)) {
            total += o.score;
            if (failed && o.failed) failed->push_back(o.country);
        }
        return total / static_cast<double>(countries.size());
    }

    std::size_t completions() const { return completions_.load(); }
    double penalty() const { return opt_.penalty; }
    const std::string& model() const { return model_; }
    const std::vector<CountryReference>& refs() const { return refs_; }
    const IndicatorRegistry& registry() const { return elicitor_.registry(); }
    void set_score_hook(ScoreHook h) { hook_ = std::move(h); }

private:
    const Elicitor& elicitor_;
    const BenchmarkSpace& space_;
    const std::vector<CountryReference>& refs_;
    std::string model_;
    EvaluatorOptions opt_;
    ScoreHook hook_;
    mutable std::atomic<std::size_t> completions_{0};
    mutable std::mutex mu_;
    mutable std::mutex hook_mu_;
    mutable std::map<std::string, ScoreOutcome> memo_;
};

// Seeded k-subset, order preserved from `pool`.
inline std::vector<std::string> sample_minibatch(const std::vector<std::string>& pool, std::size_t k,
                                                 std::mt19937_64& rng) {
    if (k >= pool.size()) return pool;
    std::vector<std::size_t> idx(pool.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    for (std::size_t i = 0; i < k; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng() % (idx.size() - i));
        std::swap(idx[i], idx[j]);
    }
    idx.resize(k);
    std::sort(idx.begin(), idx.end());
    std::vector<std::string> out;
    for (auto i : idx) out.push_back(pool[i]);
    return out;
}

// ---------------------------------------------------------------------------
// Compilation
// ---------------------------------------------------------------------------

struct Proposer {
    Gateway& gateway;
    std::string model;
    double temperature = 0.7;
    int max_tokens = 1024;

    std::vector<std::string> propose(const std::string& meta_prompt) const {
        CompletionRequest req{model, {Message{"user", meta_prompt}}, temperature, max_tokens, std::nullopt};
        return parse_numbered_list(gateway.complete(req));
    }
};

struct CandidateRecord {
    std::size_t index = 0;
    std::string instruction;
    std::size_t demo_set = 0;
    std::string program_id;
    double score = 0.0;      // J over the evaluated countries
    std::size_t n_evals = 1;
    std::vector<std::string> failed_countries;
};

struct RoundRecord {
    std::string stage;  // "copro", "bandit", "dev"
    int iteration = 0;
    std::vector<CandidateRecord> candidates;
    std::string note;
};

struct CompileResult {
    PromptProgram best;
    std::optional<double> train_J;
    std::vector<RoundRecord> history;
    std::size_t budget_used = 0;
    bool budget_exhausted = false;
};

struct CoproOptions {
    int breadth = 8;
    int depth = 4;
    std::string meta_template = kCoproTemplate;
};

// Coordinate ascent over instruction text: the incumbent plus `breadth`
// proposer rewrites are scored on the full training set each round.
inline CompileResult compile_copro(const PromptProgram& base, const Evaluator& eval,
                                   const std::vector<std::string>& train, const Proposer* proposer,
                                   const CoproOptions& opt = {}) {
    if (opt.depth < 1 || opt.breadth < 0) throw ConfigError("copro needs depth >= 1 and breadth >= 0");
    if (opt.breadth > 0 && !proposer) throw ConfigError("copro with breadth > 0 needs a proposer");
    const std::size_t start = eval.completions();

    CompileResult result;
    PromptProgram incumbent = base;
    incumbent.optimizer = "copro";
    incumbent.iteration = 0;
    std::optional<double> incumbent_J;
    std::vector<std::pair<std::string, double>> transcript;

    try {
        for (int round = 1; round <= opt.depth; ++round) {
            RoundRecord rec{"copro", round, {}, {}};
            std::vector<PromptProgram> pool{incumbent};
            if (opt.breadth > 0) {
                std::string history;
                for (const auto& [instr, s] : transcript) history += "- (" + detail::fmt_fixed(s, 4) + ") " + instr + "\n";
                if (history.empty()) history = "(none yet)\n";
                const std::string meta = fill_template(opt.meta_template, {{"instruction", incumbent.instruction},
                                                                           {"history", history},
                                                                           {"n", std::to_string(opt.breadth)}});
                auto proposals = proposer->propose(meta);
                std::erase(proposals, incumbent.instruction);
                if (proposals.empty()) {
                    rec.note = "ProposerFailed: no parsable candidates; round skipped";
                } else {
                    if (proposals.size() > static_cast<std::size_t>(opt.breadth)) proposals.resize(opt.breadth);
                    for (auto& p : proposals) {
                        PromptProgram cand = incumbent;
                        cand.instruction = std::move(p);
                        cand.iteration = round;
                        pool.push_back(std::move(cand));
                    }
                }
            }

            std::size_t best_i = 0;
            double best_J = -std::numeric_limits<double>::infinity();
            for (std::size_t i = 0; i < pool.size(); ++i) {
                CandidateRecord c;
                c.index = i;
                c.instruction = pool[i].instruction;
                c.program_id = pool[i].program_id();
                c.score = eval.objective_J(pool[i], train, &c.failed_countries);
                c.n_evals = train.size();
                if (i == 0) incumbent_J = c.score;
                if (c.score > best_J) {
                    best_J = c.score;
                    best_i = i;
                }
                transcript.emplace_back(c.instruction, c.score);
                rec.candidates.push_back(std::move(c));
            }
            incumbent = pool[best_i];
            incumbent_J = best_J;
            result.history.push_back(std::move(rec));
        }
    } catch (const BudgetExhausted&) {
        result.budget_exhausted = true;
    }
    result.best = incumbent;
    result.train_J = incumbent_J;
    result.budget_used = eval.completions() - start;
    return result;
}

struct MiproOptions {
    int n_instructions = 12;
    int n_demo_sets = 4;
    int trials = 60;
    int minibatch = 8;
    double exploration = 1.4142135623730951;  // sqrt(2)
    int max_demos = 3;
    int finalists = 3;
    std::uint64_t seed = 0;
    std::string meta_template = kMiproTemplate;
};

// Joint instruction x demo-set search: bootstrap demos, propose
// instructions, UCB bandit over the grid on minibatches, dev-set finalists.
inline CompileResult compile_mipro(const PromptProgram& base, const Evaluator& eval,
                                   const std::vector<std::string>& train, const std::vector<std::string>& dev,
                                   const Proposer* proposer, const MiproOptions& opt = {}) {
    if (opt.n_instructions < 1) throw ConfigError("mipro needs n_instructions >= 1");
    if (opt.minibatch < 1) throw ConfigError("mipro minibatch must be >= 1");
    if (train.empty()) throw ConfigError("mipro needs a non-empty training set");
    const std::size_t start = eval.completions();
    std::mt19937_64 rng(opt.seed);

    CompileResult result;
    PromptProgram base_prog = base;
    base_prog.optimizer = "mipro";
    result.best = base_prog;

    try {
        // (1) demo bootstrapping from above-median countries under the base program
        std::vector<std::vector<Demo>> demo_sets{{}};
        {
            RoundRecord rec{"bootstrap", 0, {}, {}};
            std::vector<ScoreOutcome> outcomes = eval.score_all(base_prog, train);
            std::vector<double> scores;
            for (const auto& o : outcomes) scores.push_back(o.score);
            std::vector<double> sorted = scores;
            std::sort(sorted.begin(), sorted.end());
            const std::size_t n = sorted.size();
            const double median = n % 2 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
            std::vector<Demo> pool;
            for (const auto& o : outcomes) {
                if (o.failed || !(o.score > median)) continue;
                for (const auto& a : o.answers) pool.push_back({a.question, std::to_string(a.raw)});
            }
            for (std::size_t i = pool.size(); i > 1; --i) std::swap(pool[i - 1], pool[rng() % i]);
            for (std::size_t i = 0; i < pool.size() && demo_sets.size() < static_cast<std::size_t>(opt.n_demo_sets) + 1;
                 i += static_cast<std::size_t>(opt.max_demos)) {
                const auto end = std::min(pool.size(), i + static_cast<std::size_t>(opt.max_demos));
                demo_sets.emplace_back(pool.begin() + static_cast<long>(i), pool.begin() + static_cast<long>(end));
            }
            rec.note = "median " + detail::fmt17(median) + ", " + std::to_string(demo_sets.size() - 1) + " demo sets";
            result.history.push_back(std::move(rec));
        }

        // (2) instruction proposals; the base instruction is always candidate 0
        std::vector<std::string> instructions{base_prog.instruction};
        {
            RoundRecord rec{"propose", 0, {}, {}};
            if (proposer) {
                std::string examples;
                for (std::size_t s = 1; s < demo_sets.size(); ++s)
                    for (const auto& d : demo_sets[s]) examples += "- " + d.question + " -> " + d.answer + "\n";
                if (examples.empty()) examples = "(none)\n";
                const std::string meta = fill_template(opt.meta_template, {{"instruction", base_prog.instruction},
                                                                           {"examples", examples},
                                                                           {"n", std::to_string(opt.n_instructions)}});
                auto proposals = proposer->propose(meta);
                std::erase(proposals, base_prog.instruction);
                if (proposals.empty()) rec.note = "ProposerFailed: no parsable candidates";
                for (auto& p : proposals) {
                    if (instructions.size() > static_cast<std::size_t>(opt.n_instructions)) break;
                    instructions.push_back(std::move(p));
                }
            } else {
                rec.note = "no proposer; base instruction only";
            }
            result.history.push_back(std::move(rec));
        }

        const std::size_t n_demo = demo_sets.size();
        const std::size_t grid = instructions.size() * n_demo;
        const auto program_at = [&](std::size_t cfg) {
            PromptProgram p = base_prog;
            p.instruction = instructions[cfg / n_demo];
            p.demos = demo_sets[cfg % n_demo];
            p.iteration = static_cast<int>(cfg);
            return p;
        };

        // (3) UCB bandit; untried configurations go first in index order
        std::vector<double> mean(grid, 0.0);
        std::vector<std::size_t> n_evals(grid, 0);
        std::size_t total = 0;
        const std::size_t mb = std::min<std::size_t>(static_cast<std::size_t>(opt.minibatch), train.size());
        for (int t = 0; t < opt.trials; ++t) {
            std::size_t pick = grid;
            for (std::size_t c = 0; c < grid && pick == grid; ++c)
                if (n_evals[c] == 0) pick = c;
            if (pick == grid) {
                double best = -std::numeric_limits<double>::infinity();
                for (std::size_t c = 0; c < grid; ++c) {
                    const double ucb = mean[c] + opt.exploration * std::sqrt(std::log(double(total) + 1.0) /
                                                                             (double(n_evals[c]) + 1.0));
                    if (ucb > best) {
                        best = ucb;
                        pick = c;
                    }
                }
            }
            const auto batch = sample_minibatch(train, mb, rng);
            const PromptProgram prog = program_at(pick);
            CandidateRecord c;
            c.index = pick;
            c.instruction = prog.instruction;
            c.demo_set = pick % n_demo;
            c.program_id = prog.program_id();
            c.score = eval.objective_J(prog, batch, &c.failed_countries);
            ++n_evals[pick];
            ++total;
            mean[pick] += (c.score - mean[pick]) / static_cast<double>(n_evals[pick]);
            c.n_evals = n_evals[pick];
            result.history.push_back({"bandit", t + 1, {std::move(c)}, {}});
        }

        // (4) finalists by running mean, selected on dev
        std::vector<std::size_t> tried;
        for (std::size_t c = 0; c < grid; ++c)
            if (n_evals[c] > 0) tried.push_back(c);
        if (tried.empty()) tried.push_back(0);
        std::stable_sort(tried.begin(), tried.end(), [&](std::size_t a, std::size_t b) { return mean[a] > mean[b]; });
        if (tried.size() > static_cast<std::size_t>(opt.finalists)) tried.resize(static_cast<std::size_t>(opt.finalists));
        std::sort(tried.begin(), tried.end());

        const auto& select_on = dev.empty() ? train : dev;
        RoundRecord rec{"dev", 0, {}, dev.empty() ? "empty dev split; finalists ranked on train" : ""};
        std::size_t best_cfg = tried.front();
        double best_dev = -std::numeric_limits<double>::infinity();
        for (std::size_t cfg : tried) {
            const PromptProgram prog = program_at(cfg);
            CandidateRecord c;
            c.index = cfg;
            c.instruction = prog.instruction;
            c.demo_set = cfg % n_demo;
            c.program_id = prog.program_id();
            c.score = eval.objective_J(prog, select_on, &c.failed_countries);
            c.n_evals = select_on.size();
            if (c.score > best_dev) {
                best_dev = c.score;
                best_cfg = cfg;
            }
            rec.candidates.push_back(std::move(c));
        }
        result.history.push_back(std::move(rec));
        result.best = program_at(best_cfg);
        result.train_J = eval.objective_J(result.best, train);
    } catch (const BudgetExhausted&) {
        result.budget_exhausted = true;
    }
    result.budget_used = eval.completions() - start;
    return result;
}

// ---------------------------------------------------------------------------
// Cross-validation over countries
// ---------------------------------------------------------------------------

struct Fold {
    std::vector<std::string> train;
    std::vector<std::string> dev;
    std::vector<std::string> test;
};

// Seeded shuffle, then k contiguous folds whose sizes differ by at most one.
inline std::vector<std::vector<std::string>> make_folds(std::vector<std::string> countries, int k, std::uint64_t seed) {
    if (k < 2) throw ConfigError("cross-validation needs k >= 2");
    if (countries.size() < static_cast<std::size_t>(k)) throw ConfigError("fewer countries than folds");
    std::sort(countries.begin(), countries.end());
    std::mt19937_64 rng(seed);
    for (std::size_t i = countries.size(); i > 1; --i) std::swap(countries[i - 1], countries[rng() % i]);
    std::vector<std::vector<std::string>> folds(static_cast<std::size_t>(k));
    const std::size_t n = countries.size();
    std::size_t pos = 0;
    for (std::size_t f = 0; f < folds.size(); ++f) {
        const std::size_t size = n / folds.size() + (f < n % folds.size() ? 1 : 0);
        folds[f].assign(countries.begin() + static_cast<long>(pos), countries.begin() + static_cast<long>(pos + size));
        pos += size;
    }
    return folds;
}

// 75/25 train/dev split of a compilation pool (dev gets at least one country).
inline std::pair<std::vector<std::string>, std::vector<std::string>> split_train_dev(std::vector<std::string> pool,
                                                                                     std::uint64_t seed) {
    if (pool.size() < 2) return {pool, {}};
    std::mt19937_64 rng(seed);
    for (std::size_t i = pool.size(); i > 1; --i) std::swap(pool[i - 1], pool[rng() % i]);
    const std::size_t n_dev = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(0.25 * double(pool.size()))));
    std::vector<std::string> dev(pool.end() - static_cast<long>(n_dev), pool.end());
    pool.resize(pool.size() - n_dev);
    std::sort(pool.begin(), pool.end());
    std::sort(dev.begin(), dev.end());
    return {pool, dev};
}

struct HeldOutResult {
    std::string country;
    double distance = 0.0;
    bool failed = false;
    std::optional<MapPoint> aligned_point;
};

struct FoldResult {
    Fold fold;
    std::optional<CompileResult> compile;
    std::vector<HeldOutResult> heldout;
    double heldout_mean = 0.0;
    bool failed = false;
    std::string error;
};

struct CvReport {
    std::vector<FoldResult> folds;
    double mean_heldout = 0.0;
    std::size_t failed_folds = 0;
};

using CompileFn = std::function<CompileResult(const std::vector<std::string>& train, const std::vector<std::string>& dev)>;

inline CvReport cross_validate(const Evaluator& eval, const std::vector<std::string>& countries, int k,
                               std::uint64_t seed, bool split_dev, const CompileFn& compile) {
    CvReport report;
    const auto folds = make_folds(countries, k, seed);
    double sum = 0.0;
    std::size_t ok = 0;
    for (std::size_t f = 0; f < folds.size(); ++f) {
        FoldResult fr;
        fr.fold.test = folds[f];
        std::vector<std::string> pool;
        for (std::size_t g = 0; g < folds.size(); ++g)
            if (g != f) pool.insert(pool.end(), folds[g].begin(), folds[g].end());
        std::sort(pool.begin(), pool.end());
        if (split_dev) {
            std::tie(fr.fold.train, fr.fold.dev) = split_train_dev(pool, seed + f + 1);
        } else {
            fr.fold.train = pool;
        }
        try {
            fr.compile = compile(fr.fold.train, fr.fold.dev);
            double total = 0.0;
            for (const auto& c : fr.fold.test) {
                const ScoreOutcome o = eval.score(fr.compile->best, c);
                fr.heldout.push_back({c, -o.score, o.failed, o.point});
                total += -o.score;
            }
            fr.heldout_mean = total / static_cast<double>(fr.fold.test.size());
            sum += fr.heldout_mean;
            ++ok;
        } catch (const BudgetExhausted&) {
            fr.failed = true;
            fr.error = "budget exhausted";
        } catch (const Error& e) {
            fr.failed = true;
            fr.error = e.what();
        }
        if (fr.failed) ++report.failed_folds;
        report.folds.push_back(std::move(fr));
    }
    report.mean_heldout = ok ? sum / static_cast<double>(ok) : std::numeric_limits<double>::quiet_NaN();
    return report;
}

// ---------------------------------------------------------------------------
// JSON
// ---------------------------------------------------------------------------

inline nlohmann::ordered_json compile_result_to_json(const CompileResult& r) {
    using json = nlohmann::ordered_json;
    json history = json::array();
    for (const auto& round : r.history) {
        json cands = json::array();
        for (const auto& c : round.candidates) {
            cands.push_back({{"index", c.index},
                             {"instruction", c.instruction},
                             {"demo_set", c.demo_set},
                             {"program_id", c.program_id},
                             {"score", c.score},
                             {"n_evals", c.n_evals},
                             {"failed_countries", c.failed_countries}});
        }
        json entry{{"stage", round.stage}, {"iteration", round.iteration}, {"candidates", cands}};
        if (!round.note.empty()) entry["note"] = round.note;
        history.push_back(std::move(entry));
    }
    return {{"best", program_to_json(r.best)},
            {"train_J", r.train_J ? json(*r.train_J) : json(nullptr)},
            {"budget_used", r.budget_used},
            {"budget_exhausted", r.budget_exhausted},
            {"history", history}};
}

inline nlohmann::ordered_json cv_report_to_json(const CvReport& r) {
    using json = nlohmann::ordered_json;
    json folds = json::array();
    for (const auto& f : r.folds) {
        json held = json::array();
        for (const auto& h : f.heldout) {
            held.push_back({{"country", h.country},
                            {"distance", h.distance},
                            {"failed", h.failed},
                            {"aligned_point", h.aligned_point ? point_json(*h.aligned_point) : json(nullptr)}});
        }
        json entry{{"train", f.fold.train}, {"dev", f.fold.dev}, {"test", f.fold.test}, {"failed", f.failed}};
        if (f.failed) entry["error"] = f.error;
        entry["compile"] = f.compile ? compile_result_to_json(*f.compile) : json(nullptr);
        entry["heldout"] = held;
        entry["heldout_mean"] = f.failed ? json(nullptr) : json(f.heldout_mean);
        folds.push_back(std::move(entry));
    }
    return {{"k", r.folds.size()},
            {"mean_heldout", std::isnan(r.mean_heldout) ? json(nullptr) : json(r.mean_heldout)},
            {"failed_folds", r.failed_folds},
            {"folds", folds}};
}

}  // namespace culturemap

#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <condition_variable>
#include <ctime>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <unordered_map>
#include <utility>
#include <vector>

#include "httplib.h"
#include "json.hpp"

#include "culturemap/detail/digest.hpp"
#include "culturemap/detail/text.hpp"
#include "culturemap/error.hpp"
#include "culturemap/survey_core.hpp"

namespace culturemap {

struct Message {
    std::string role;
    std::string content;

    bool operator==(const Message&) const = default;
};

struct CompletionRequest {
    std::string model;
    std::vector<Message> messages;
    double temperature = 0.0;
    int max_tokens = 16;
    std::optional<int> seed_hint;
};

// All message contents joined, the text a backend "sees".
inline std::string prompt_text(const CompletionRequest& req) {
    std::string out;
    for (const auto& m : req.messages) {
        if (!out.empty()) out += '\n';
        out += m.content;
    }
    return out;
}

// Unit/record separators keep field boundaries unambiguous.
inline std::string canonical_request(const std::string& backend_id, const CompletionRequest& req) {
    std::string s;
    s += "backend\x1f" + backend_id + "\x1e";
    s += "model\x1f" + req.model + "\x1e";
    s += "temperature\x1f" + detail::fmt17(req.temperature) + "\x1e";
    s += "max_tokens\x1f" + std::to_string(req.max_tokens) + "\x1e";
    for (const auto& m : req.messages) s += "message\x1f" + m.role + "\x1f" + m.content + "\x1e";
    return s;
}

inline std::string cache_key(const std::string& backend_id, const CompletionRequest& req) {
    return detail::sha256_hex(canonical_request(backend_id, req));
}

// ---------------------------------------------------------------------------
// Persistent cache: append-only JSON lines, loaded fully on open.
// ---------------------------------------------------------------------------

struct CacheEntry {
    std::string key;
    std::string completion;
    std::string created_at;
};

class ResponseCache {
public:
    ResponseCache() = default;

    explicit ResponseCache(std::string path) : path_(std::move(path)) {
        std::ifstream in(path_);
        std::string line;
        while (std::getline(in, line)) {
            if (detail::trim(line).empty()) continue;
            try {
                const auto j = nlohmann::json::parse(line);
                entries_[j.at("key").get<std::string>()] = j.at("completion").get<std::string>();
            } catch (const nlohmann::json::exception&) {
                // a torn final line from an interrupted run is skipped
            }
        }
    }

    std::optional<std::string> lookup(const std::string& key) const {
        std::lock_guard lock(mu_);
        const auto it = entries_.find(key);
        if (it == entries_.end()) return std::nullopt;
        return it->second;
    }

    void store(const std::string& key, const std::string& completion) {
        std::lock_guard lock(mu_);
        if (!entries_.emplace(key, completion).second) return;
        if (path_.empty()) return;
        std::ofstream out(path_, std::ios::app);
        if (!out) throw ConfigError("cannot append to cache file " + path_);
        const nlohmann::json j{{"key", key}, {"completion", completion}, {"created_at", now_iso8601()}};
        out << j.dump() << '\n';
    }

    std::size_t size() const {
        std::lock_guard lock(mu_);
        return entries_.size();
    }

    const std::string& path() const { return path_; }

private:
    static std::string now_iso8601() {
        const std::time_t t = std::time(nullptr);
        std::tm tm{};
        gmtime_r(&t, &tm);
        char buf[32];
        std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
        return buf;
    }

    std::string path_;
    mutable std::mutex mu_;
    std::unordered_map<std::string, std::string> entries_;
};

// ---------------------------------------------------------------------------
// Backends
// ---------------------------------------------------------------------------

class Backend {
public:
    virtual ~Backend() = default;
    // Stable identity; part of every cache key.
    virtual std::string id() const = 0;
    virtual std::string complete(const CompletionRequest& req) = 0;
};

// Adapts a callable; used for scripted test backends.
class CallbackBackend final : public Backend {
public:
    CallbackBackend(std::string id, std::function<std::string(const CompletionRequest&)> fn)
        : id_(std::move(id)), fn_(std::move(fn)) {}

    std::string id() const override { return id_; }
    std::string complete(const CompletionRequest& req) override { return fn_(req); }

private:
    std::string id_;
    std::function<std::string(const CompletionRequest&)> fn_;
};

struct MockProfile {
    std::string country;
    std::map<std::string, int> answer_table;
    std::vector<std::string> trigger_tokens;
};

struct MockConfig {
    std::vector<MockProfile> profiles;
    std::optional<std::map<std::string, int>> fallback;
    // Returned as a numbered list when the prompt carries no survey question,
    // letting the same mock act as an instruction proposer.
    std::vector<std::string> proposals;
};

inline constexpr std::string_view kQuestionMarker = "Question: ";

// Picks the asked indicator by the longest question text found after the last
// question marker, then the first triggered profile (configuration order).
inline std::string mock_answer(std::string_view prompt, const MockConfig& mock, const IndicatorRegistry& reg) {
    std::string_view tail = prompt;
    if (const auto pos = prompt.rfind(kQuestionMarker); pos != std::string_view::npos) tail = prompt.substr(pos);
    const IndicatorSpec* asked = nullptr;
    for (const auto& spec : reg.indicators()) {
        if (spec.question_text.empty() || !detail::contains(tail, spec.question_text)) continue;
        if (!asked || spec.question_text.size() > asked->question_text.size()) asked = &spec;
    }
    if (!asked) throw UnknownQuestion("prompt contains no registry question");

    for (const auto& profile : mock.profiles) {
        const bool triggered = std::any_of(profile.trigger_tokens.begin(), profile.trigger_tokens.end(),
                                           [&](const std::string& t) { return !t.empty() && detail::contains(prompt, t); });
        if (!triggered) continue;
        if (const auto it = profile.answer_table.find(asked->id); it != profile.answer_table.end())
            return std::to_string(it->second);
        break;
    }
    if (!mock.fallback) throw MockMisconfigured("no profile triggered and no fallback configured");
    const auto it = mock.fallback->find(asked->id);
    if (it == mock.fallback->end()) throw MockMisconfigured("fallback lacks indicator " + asked->id);
    return std::to_string(it->second);
}

inline nlohmann::ordered_json mock_config_to_json(const MockConfig& m) {
    nlohmann::ordered_json profiles = nlohmann::ordered_json::array();
    for (const auto& p : m.profiles) {
        nlohmann::ordered_json table = nlohmann::ordered_json::object();
        for (const auto& [k, v] : p.answer_table) table[k] = v;
        profiles.push_back({{"country", p.country}, {"triggers", p.trigger_tokens}, {"answers", table}});
    }
    nlohmann::ordered_json j{{"profiles", profiles}};
    if (m.fallback) {
        nlohmann::ordered_json fb = nlohmann::ordered_json::object();
        for (const auto& [k, v] : *m.fallback) fb[k] = v;
        j["fallback"] = fb;
    }
    j["proposals"] = m.proposals;
    return j;
}

template <class Json>
MockConfig mock_config_from_json(const Json& j) {
    MockConfig m;
    if (j.contains("profiles")) {
        for (const auto& p : j.at("profiles")) {
            MockProfile profile;
            profile.country = p.at("country").template get<std::string>();
            profile.trigger_tokens = p.at("triggers").template get<std::vector<std::string>>();
            for (const auto& [k, v] : p.at("answers").items()) profile.answer_table[k] = v.template get<int>();
            m.profiles.push_back(std::move(profile));
        }
    }
    if (j.contains("fallback") && !j.at("fallback").is_null()) {
        std::map<std::string, int> fb;
        for (const auto& [k, v] : j.at("fallback").items()) fb[k] = v.template get<int>();
        m.fallback = std::move(fb);
    }
    if (j.contains("proposals")) m.proposals = j.at("proposals").template get<std::vector<std::string>>();
    return m;
}

class MockBackend final : public Backend {
public:
    MockBackend(MockConfig config, const IndicatorRegistry& reg) : config_(std::move(config)), reg_(reg) {
        // Profile answers must lie on each indicator's scale.
        const auto check = [&](const std::map<std::string, int>& table, const std::string& who) {
            for (const auto& [id, v] : table) {
                const auto idx = reg_.index_of(id);
                if (!idx) throw MockMisconfigured(who + ": unknown indicator " + id);
                if (v < reg_[*idx].scale_min || v > reg_[*idx].scale_max)
                    throw MockMisconfigured(who + ": answer for " + id + " off scale");
            }
        };
        for (const auto& p : config_.profiles) check(p.answer_table, "profile " + p.country);
        if (config_.fallback) check(*config_.fallback, "fallback");
        id_ = "mock:" + detail::sha256_hex(mock_config_to_json(config_).dump() + reg_.hash()).substr(0, 16);
    }

    std::string id() const override { return id_; }

    std::string complete(const CompletionRequest& req) override {
        const std::string prompt = prompt_text(req);
        // Meta-prompts may quote question texts as examples, so only the
        // question marker distinguishes a survey item.
        if (!detail::contains(prompt, kQuestionMarker) && !config_.proposals.empty()) {
            std::string out;
            for (std::size_t i = 0; i < config_.proposals.size(); ++i)
                out += std::to_string(i + 1) + ". " + config_.proposals[i] + "\n";
            return out;
        }
        return mock_answer(prompt, config_, reg_);
    }

    const MockConfig& config() const { return config_; }

private:
    MockConfig config_;
    const IndicatorRegistry& reg_;
    std::string id_;
};

struct RetryPolicy {
    int max_retries = 3;
    std::chrono::milliseconds base_delay{1000};  // doubles per retry: 1s, 2s, 4s
};

// Bounds the number of simultaneous live requests.
class ConcurrencyLimiter {
public:
    explicit ConcurrencyLimiter(int bound) : available_(bound < 1 ? 1 : bound) {}

    void acquire() {
        std::unique_lock lock(mu_);
        cv_.wait(lock, [&] { return available_ > 0; });
        --available_;
    }
    void release() {
        {
            std::lock_guard lock(mu_);
            ++available_;
        }
        cv_.notify_one();
    }

private:
    std::mutex mu_;
    std::condition_variable cv_;
    int available_;
};

struct HttpEndpoint {
    std::string scheme_host_port;  // e.g. http://localhost:8000
    std::string path;              // e.g. /v1/chat/completions
};

// Accepts `http://host:port`, `http://host:port/v1` or a full
// `.../chat/completions` URL.
inline HttpEndpoint parse_endpoint(const std::string& url) {
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) throw ConfigError("endpoint needs a scheme: " + url);
    const auto path_start = url.find('/', scheme_end + 3);
    HttpEndpoint ep;
    ep.scheme_host_port = url.substr(0, path_start);
    std::string path = path_start == std::string::npos ? "" : url.substr(path_start);
    while (!path.empty() && path.back() == '/') path.pop_back();
    if (path.empty()) path = "/v1";
    if (path.size() < 17 || path.compare(path.size() - 17, 17, "/chat/completions") != 0) path += "/chat/completions";
    ep.path = path;
    return ep;
}

inline nlohmann::json chat_request_body(const CompletionRequest& req) {
    nlohmann::json messages = nlohmann::json::array();
    for (const auto& m : req.messages) messages.push_back({{"role", m.role}, {"content", m.content}});
    nlohmann::json body{{"model", req.model},
                        {"messages", messages},
                        {"temperature", req.temperature},
                        {"max_tokens", req.max_tokens}};
    if (req.seed_hint) body["seed"] = *req.seed_hint;
    return body;
}

// OpenAI-compatible POST /v1/chat/completions client.
class HttpBackend final : public Backend {
public:
    using Sleeper = std::function<void(std::chrono::milliseconds)>;
    using ResponseHook = std::function<void(const nlohmann::json& echoed)>;

    HttpBackend(std::string endpoint_url, std::string api_key = {}, int max_concurrent = 4,
                std::chrono::seconds timeout = std::chrono::seconds(120), RetryPolicy retry = {})
        : url_(std::move(endpoint_url)),
          endpoint_(parse_endpoint(url_)),
          api_key_(std::move(api_key)),
          timeout_(timeout),
          retry_(retry),
          limiter_(max_concurrent),
          sleeper_([](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); }) {}

    std::string id() const override { return "http:" + url_; }

    void set_sleeper(Sleeper s) { sleeper_ = std::move(s); }
    void set_response_hook(ResponseHook h) { hook_ = std::move(h); }
    std::size_t attempts() const { return attempts_.load(); }

    std::string complete(const CompletionRequest& req) override {
        const std::string body = chat_request_body(req).dump();
        std::string last_error;
        for (int attempt = 0; attempt <= retry_.max_retries; ++attempt) {
            if (attempt > 0) sleeper_(retry_.base_delay * (1 << (attempt - 1)));
            ++attempts_;
            limiter_.acquire();
            httplib::Result res = post(body);
            limiter_.release();
            if (!res) {
                last_error = "transport: " + httplib::to_string(res.error());
                continue;
            }
            const int status = res->status;
            if (status == 429 || status >= 500) {
                last_error = "HTTP " + std::to_string(status);
                continue;
            }
            if (status < 200 || status >= 300) throw BadStatus(status, res->body);
            return parse_response(res->body);
        }
        throw TransportError("giving up after " + std::to_string(retry_.max_retries + 1) + " attempts (" + last_error + ")");
    }

private:
    httplib::Result post(const std::string& body) {
        httplib::Client cli(endpoint_.scheme_host_port);
        cli.set_connection_timeout(timeout_);
        cli.set_read_timeout(timeout_);
        cli.set_write_timeout(timeout_);
        httplib::Headers headers;
        if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);
        return cli.Post(endpoint_.path, headers, body, "application/json");
    }

    std::string parse_response(const std::string& body) {
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(body);
        } catch (const nlohmann::json::exception& e) {
            throw TransportError(std::string("unparsable response body: ") + e.what());
        }
        if (hook_) {
            nlohmann::json echoed = nlohmann::json::object();
            for (const char* k : {"model", "system_fingerprint", "usage"})
                if (j.contains(k)) echoed[k] = j[k];
            hook_(echoed);
        }
        try {
            const auto& content = j.at("choices").at(0).at("message").at("content");
            return content.is_null() ? std::string() : content.get<std::string>();
        } catch (const nlohmann::json::exception&) {
            throw TransportError("response lacks choices[0].message.content");
        }
    }

    std::string url_;
    HttpEndpoint endpoint_;
    std::string api_key_;
    std::chrono::seconds timeout_;
    RetryPolicy retry_;
    ConcurrencyLimiter limiter_;
    Sleeper sleeper_;
    ResponseHook hook_;
    std::atomic<std::size_t> attempts_{0};
};

// ---------------------------------------------------------------------------
// Gateway: cache in front of a backend.
// ---------------------------------------------------------------------------

struct GatewayStats {
    std::size_t requests = 0;
    std::size_t cache_hits = 0;
    std::size_t backend_calls = 0;
};

class Gateway {
public:
    // Called once per completion with (key, prompt text, completion).
    using AuditHook = std::function<void(const std::string&, const CompletionRequest&, const std::string&)>;

    Gateway(Backend& backend, ResponseCache* cache = nullptr) : backend_(backend), cache_(cache) {}

    std::string complete(const CompletionRequest& req) {
        ++requests_;
        const std::string key = cache_key(backend_.id(), req);
        if (cache_) {
            if (auto hit = cache_->lookup(key)) {
                ++hits_;
                audit(key, req, *hit);
                return *hit;
            }
        }
        ++calls_;
        std::string completion = backend_.complete(req);
        if (cache_) cache_->store(key, completion);
        audit(key, req, completion);
        return completion;
    }

    GatewayStats stats() const { return {requests_.load(), hits_.load(), calls_.load()}; }
    void set_audit_hook(AuditHook h) { audit_ = std::move(h); }
    Backend& backend() { return backend_; }

private:
    void audit(const std::string& key, const CompletionRequest& req, const std::string& completion) {
        if (!audit_) return;
        std::lock_guard lock(audit_mu_);
        audit_(key, req, completion);
    }

    Backend& backend_;
    ResponseCache* cache_;
    std::atomic<std::size_t> requests_{0}, hits_{0}, calls_{0};
    AuditHook audit_;
    std::mutex audit_mu_;
};

}  // namespace culturemap

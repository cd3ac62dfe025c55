#include "specforge/llm_gateway.hpp"

#include <algorithm>
#include <chrono>
#include <climits>
#include <fstream>
#include <future>
#include <set>
#include <sstream>
#include <tuple>

#include "specforge/resources.hpp"
#include "specforge/strip_merge.hpp"

namespace specforge {

std::string_view to_string(ReasoningEffort r) {
    switch (r) {
        case ReasoningEffort::None: return "none";
        case ReasoningEffort::Low: return "low";
        case ReasoningEffort::Medium: return "medium";
        case ReasoningEffort::High: return "high";
    }
    return "none";
}

std::string_view to_string(PromptKind k) { return k == PromptKind::Direct ? "direct" : "repair"; }

std::string_view to_string(ProviderError::Kind k) {
    switch (k) {
        case ProviderError::Kind::Transport: return "transport";
        case ProviderError::Kind::RateLimit: return "rate-limit";
        case ProviderError::Kind::Timeout: return "timeout";
        case ProviderError::Kind::Auth: return "auth";
        case ProviderError::Kind::BadResponse: return "bad-response";
    }
    return "transport";
}

ProviderConfig provider_config_from_json(const nlohmann::json& j) {
    ProviderConfig c;
    c.name = j.at("name").get<std::string>();
    c.model_id = j.value("model_id", c.name);
    c.temperature = j.value("temperature", c.temperature);
    if (j.contains("reasoning_effort") && !j["reasoning_effort"].is_null()) {
        std::string r = j["reasoning_effort"].get<std::string>();
        bool found = false;
        for (auto e : {ReasoningEffort::None, ReasoningEffort::Low, ReasoningEffort::Medium, ReasoningEffort::High}) {
            if (to_string(e) == r) {
                c.reasoning_effort = e;
                found = true;
            }
        }
        if (!found) throw std::invalid_argument("unknown reasoning effort: " + r);
    }
    c.cost_per_input_token = j.value("cost_per_input_token", 0.0);
    c.cost_per_output_token = j.value("cost_per_output_token", 0.0);
    c.priority = j.value("priority", 0);
    c.timeout_s = j.value("timeout_s", c.timeout_s);
    c.api = j.value("api", c.api);
    c.endpoint = j.value("endpoint", "");
    c.api_key_env = j.value("api_key_env", "");
    c.auth_header = j.value("auth_header", c.auth_header);
    c.max_output_tokens = j.value("max_output_tokens", c.max_output_tokens);
    return c;
}

void validate_providers(const std::vector<ProviderConfig>& providers) {
    std::set<int> priorities;
    for (const auto& p : providers) {
        if (p.temperature < 0) throw std::invalid_argument("negative temperature for provider " + p.name);
        if (!priorities.insert(p.priority).second) {
            throw std::invalid_argument("duplicate provider priority " + std::to_string(p.priority));
        }
    }
}

// ---- prompts --------------------------------------------------------------------------

namespace {

PromptTemplate load_template(const std::string& name) {
    std::string text(embedded_resource("prompts/" + name + ".txt"));
    return {name, text, sha256_hex(text)};
}

std::string dafny_block(const std::string& program) { return "BEGIN DAFNY\n" + program + "\nEND DAFNY\n"; }

}  // namespace

const PromptTemplate& direct_template() {
    static const PromptTemplate t = load_template("direct.v1");
    return t;
}

const PromptTemplate& repair_template() {
    static const PromptTemplate t = load_template("repair.v1");
    return t;
}

std::vector<ChatMessage> render_direct_prompt(const std::string& program_text) {
    return {{"system", direct_template().text}, {"user", dafny_block(program_text)}};
}

std::vector<ChatMessage> render_repair_prompt(const std::string& program_text, const std::string& errors_text) {
    std::string errors = errors_text;
    while (!errors.empty() && (errors.back() == '\n' || errors.back() == '\r')) errors.pop_back();
    if (errors.empty()) throw std::invalid_argument("repair prompt needs verifier errors");
    return {{"system", repair_template().text},
            {"user", dafny_block(program_text) + "\nBEGIN VERIFICATION ERRORS\n" + errors + "\nEND VERIFICATION ERRORS\n"}};
}

std::vector<ChatMessage> render_request(const GenerationRequest& request) {
    if (request.kind == PromptKind::Direct) return render_direct_prompt(request.program_text);
    return render_repair_prompt(request.program_text, request.verifier_errors.value_or(""));
}

std::string render_diagnostics(std::vector<Diagnostic> diagnostics, std::size_t max_lines) {
    std::stable_sort(diagnostics.begin(), diagnostics.end(), [](const Diagnostic& a, const Diagnostic& b) {
        return std::tie(a.file, a.line, a.col) < std::tie(b.file, b.line, b.col);
    });
    std::string out;
    std::size_t n = std::min(max_lines, diagnostics.size());
    for (std::size_t i = 0; i < n; ++i) {
        out += format_diagnostic(diagnostics[i]);
        out += '\n';
    }
    return out;
}

std::string request_hash(const std::vector<ChatMessage>& messages) {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& m : messages) j.push_back({m.role, m.content});
    return sha256_hex(j.dump());
}

// ---- providers ------------------------------------------------------------------------

namespace {

ProviderError::Kind error_kind_from_string(const std::string& s) {
    for (auto k : {ProviderError::Kind::Transport, ProviderError::Kind::RateLimit, ProviderError::Kind::Timeout,
                   ProviderError::Kind::Auth, ProviderError::Kind::BadResponse}) {
        if (to_string(k) == s) return k;
    }
    return ProviderError::Kind::Transport;
}

std::string user_message(const std::vector<ChatMessage>& messages) {
    std::string out;
    for (const auto& m : messages) {
        if (m.role == "user") out += m.content;
    }
    return out;
}

}  // namespace

ReplayProvider::ReplayProvider(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw std::runtime_error("cannot open replay file " + file.string());
    std::string line;
    while (std::getline(in, line)) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        entries_.push_back({nlohmann::json::parse(line)});
    }
}

ReplayProvider::ReplayProvider(std::vector<nlohmann::json> entries) {
    for (auto& e : entries) entries_.push_back({std::move(e)});
}

Completion ReplayProvider::complete(const ProviderConfig& cfg, const std::vector<ChatMessage>& messages) {
    std::string hash = request_hash(messages);
    std::string user = user_message(messages);
    std::lock_guard<std::mutex> lock(mutex_);
    for (auto& e : entries_) {
        if (e.used) continue;
        const auto& d = e.data;
        if (d.contains("provider") && d["provider"].get<std::string>() != cfg.name) continue;
        if (d.contains("request_hash")) {
            if (d["request_hash"].get<std::string>() != hash) continue;
        } else if (d.contains("match")) {
            if (user.find(d["match"].get<std::string>()) == std::string::npos) continue;
        }
        if (!d.value("repeat", false)) e.used = true;
        if (d.contains("error")) {
            throw ProviderError(error_kind_from_string(d["error"].get<std::string>()), "replayed " + d["error"].get<std::string>());
        }
        Completion c;
        c.text = d.at("response").get<std::string>();
        c.input_tokens = d.value("input_tokens", 0L);
        c.output_tokens = d.value("output_tokens", 0L);
        c.latency_s = d.value("latency_s", 0.0);
        return c;
    }
    throw ProviderError(ProviderError::Kind::BadResponse, "no replay entry for request " + hash.substr(0, 12));
}

std::size_t ReplayProvider::unused_entries() const {
    std::lock_guard<std::mutex> lock(mutex_);
    return std::count_if(entries_.begin(), entries_.end(), [](const Entry& e) { return !e.used && !e.data.value("repeat", false); });
}

void ScriptedProvider::push(std::string text, long input_tokens, long output_tokens) {
    std::lock_guard<std::mutex> lock(mutex_);
    queue_.push_back([text = std::move(text), input_tokens, output_tokens](const std::vector<ChatMessage>&) {
        return Completion{text, input_tokens, output_tokens, 0.0};
    });
}

void ScriptedProvider::push_error(ProviderError::Kind kind, std::string message) {
    std::lock_guard<std::mutex> lock(mutex_);
    queue_.push_back([kind, message = std::move(message)](const std::vector<ChatMessage>&) -> Completion {
        throw ProviderError(kind, message);
    });
}

Completion ScriptedProvider::complete(const ProviderConfig&, const std::vector<ChatMessage>& messages) {
    Handler h;
    {
        std::lock_guard<std::mutex> lock(mutex_);
        requests_.push_back(messages);
        if (next_ < queue_.size()) {
            h = queue_[next_++];
        } else {
            h = fallback_;
        }
    }
    if (!h) throw ProviderError(ProviderError::Kind::Transport, "scripted provider exhausted");
    return h(messages);
}

std::vector<std::vector<ChatMessage>> ScriptedProvider::requests() const {
    std::lock_guard<std::mutex> lock(mutex_);
    return requests_;
}

RecordingProvider::RecordingProvider(ProviderClient& inner, std::filesystem::path file)
    : inner_(inner), file_(std::move(file)) {}

Completion RecordingProvider::complete(const ProviderConfig& cfg, const std::vector<ChatMessage>& messages) {
    nlohmann::json entry{{"provider", cfg.name}, {"request_hash", request_hash(messages)}};
    try {
        auto start = std::chrono::steady_clock::now();
        Completion c = inner_.complete(cfg, messages);
        double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        entry["response"] = c.text;
        entry["input_tokens"] = c.input_tokens;
        entry["output_tokens"] = c.output_tokens;
        entry["latency_s"] = c.latency_s.value_or(elapsed);
        std::lock_guard<std::mutex> lock(mutex_);
        std::ofstream(file_, std::ios::app) << entry.dump() << '\n';
        return c;
    } catch (const ProviderError& e) {
        entry["error"] = std::string(to_string(e.kind));
        std::lock_guard<std::mutex> lock(mutex_);
        std::ofstream(file_, std::ios::app) << entry.dump() << '\n';
        throw;
    }
}

// ---- accounting -----------------------------------------------------------------------

void UsageLedger::record(UsageRecord r) {
    std::lock_guard<std::mutex> lock(mutex_);
    records_.push_back(std::move(r));
}

std::vector<UsageRecord> UsageLedger::records() const {
    std::lock_guard<std::mutex> lock(mutex_);
    return records_;
}

double UsageLedger::total_cost() const {
    std::lock_guard<std::mutex> lock(mutex_);
    double s = 0;
    for (const auto& r : records_) s += r.cost;
    return s;
}

double UsageLedger::total_latency() const {
    std::lock_guard<std::mutex> lock(mutex_);
    double s = 0;
    for (const auto& r : records_) s += r.latency_s;
    return s;
}

std::size_t UsageLedger::calls() const {
    std::lock_guard<std::mutex> lock(mutex_);
    return records_.size();
}

// ---- calls ----------------------------------------------------------------------------

GenerationResult call_provider(const BoundProvider& provider, const GenerationRequest& request, UsageLedger& ledger) {
    const auto& cfg = provider.config;
    auto messages = render_request(request);
    UsageRecord rec;
    rec.provider = cfg.name;
    rec.prompt_kind = std::string(to_string(request.kind));
    auto start = std::chrono::steady_clock::now();
    Completion c;
    try {
        if (!provider.client) throw ProviderError(ProviderError::Kind::Transport, "provider has no client");
        c = provider.client->complete(cfg, messages);
    } catch (const ProviderError& e) {
        rec.status = std::string(to_string(e.kind));
        rec.latency_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        ledger.record(rec);
        throw;
    }
    GenerationResult r;
    r.provider = cfg.name;
    r.provider_priority = cfg.priority;
    r.raw_text = c.text;
    r.input_tokens = c.input_tokens;
    r.output_tokens = c.output_tokens;
    r.cost = c.input_tokens * cfg.cost_per_input_token + c.output_tokens * cfg.cost_per_output_token;
    r.latency_s = c.latency_s.value_or(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
    try {
        r.extracted_program = extract_code_block(c.text);
        rec.status = "ok";
    } catch (const NoCodeBlock&) {
        rec.status = "no-code-block";
    }
    rec.input_tokens = r.input_tokens;
    rec.output_tokens = r.output_tokens;
    rec.cost = r.cost;
    rec.latency_s = r.latency_s;
    ledger.record(rec);
    return r;
}

namespace {

std::string join_failures(const std::vector<ProviderFailure>& failures) {
    std::string s = "all providers failed";
    for (const auto& f : failures) s += "; " + f.provider + ": " + f.reason;
    return s;
}

}  // namespace

AllProvidersFailed::AllProvidersFailed(std::vector<ProviderFailure> f)
    : std::runtime_error(join_failures(f)), failures(std::move(f)) {}

GenerationResult call_with_failover(std::vector<BoundProvider> providers, const GenerationRequest& request,
                                    UsageLedger& ledger) {
    if (providers.empty()) throw std::invalid_argument("no providers configured");
    std::stable_sort(providers.begin(), providers.end(),
                     [](const BoundProvider& a, const BoundProvider& b) { return a.config.priority < b.config.priority; });
    std::vector<ProviderFailure> failures;
    for (const auto& p : providers) {
        try {
            GenerationResult r = call_provider(p, request, ledger);
            if (r.extracted_program) return r;
            failures.push_back({p.config.name, "no code block in response"});
        } catch (const ProviderError& e) {
            failures.push_back({p.config.name, std::string(to_string(e.kind)) + ": " + e.what()});
        }
    }
    throw AllProvidersFailed(std::move(failures));
}

std::vector<std::optional<GenerationResult>> call_all(const std::vector<BoundProvider>& providers,
                                                      const GenerationRequest& request, UsageLedger& ledger) {
    std::vector<std::future<std::optional<GenerationResult>>> futures;
    for (const auto& p : providers) {
        futures.push_back(std::async(std::launch::async, [&p, &request, &ledger]() -> std::optional<GenerationResult> {
            try {
                return call_provider(p, request, ledger);
            } catch (const ProviderError&) {
                return std::nullopt;
            }
        }));
    }
    std::vector<std::optional<GenerationResult>> out;
    for (auto& f : futures) out.push_back(f.get());
    return out;
}

// ---- arbitration ----------------------------------------------------------------------

std::size_t arbitrate(const std::vector<ArbitrationEntry>& entries) {
    if (entries.empty()) throw std::invalid_argument("nothing to arbitrate");
    struct Key {
        int invalid;
        int unverified;
        int loc;
        double verify_time;
        int priority;
        const std::string* provider;
        const std::string* raw;
    };
    auto key_of = [](const ArbitrationEntry& e) {
        const auto& r = e.result;
        bool valid = r.extracted_program && e.outcome.status != VerifyStatus::SyntaxError &&
                     e.outcome.status != VerifyStatus::ToolError;
        int loc = INT_MAX;
        if (r.extracted_program) {
            LocStats s = count_loc(parse(*r.extracted_program));
            loc = s.L + s.A;
        }
        return Key{!valid, e.outcome.status != VerifyStatus::Success, loc, e.outcome.elapsed_s, r.provider_priority,
                   &r.provider, &r.raw_text};
    };
    auto less = [](const Key& a, const Key& b) {
        return std::tie(a.invalid, a.unverified, a.loc, a.verify_time, a.priority, *a.provider, *a.raw) <
               std::tie(b.invalid, b.unverified, b.loc, b.verify_time, b.priority, *b.provider, *b.raw);
    };
    std::size_t best = 0;
    Key best_key = key_of(entries[0]);
    for (std::size_t i = 1; i < entries.size(); ++i) {
        Key k = key_of(entries[i]);
        if (less(k, best_key)) {
            best = i;
            best_key = k;
        }
    }
    return best;
}

}  // namespace specforge

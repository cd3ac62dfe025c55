#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "specforge/verifier.hpp"

namespace specforge {

enum class ReasoningEffort { None, Low, Medium, High };
std::string_view to_string(ReasoningEffort r);

struct ProviderConfig {
    std::string name;
    std::string model_id;
    double temperature = 0.5;
    std::optional<ReasoningEffort> reasoning_effort;
    double cost_per_input_token = 0;
    double cost_per_output_token = 0;
    int priority = 0;  // lower is preferred
    double timeout_s = 300;

    // transport
    std::string api = "openai";  // openai | anthropic
    std::string endpoint;
    std::string api_key_env;
    std::string auth_header = "Authorization";
    int max_output_tokens = 8192;
};

ProviderConfig provider_config_from_json(const nlohmann::json& j);
/// Throws std::invalid_argument on duplicate priorities or negative temperatures.
void validate_providers(const std::vector<ProviderConfig>& providers);

enum class PromptKind { Direct, Repair };
std::string_view to_string(PromptKind k);

struct ChatMessage {
    std::string role;  // system | user | assistant
    std::string content;
    bool operator==(const ChatMessage&) const = default;
};

struct GenerationRequest {
    PromptKind kind = PromptKind::Direct;
    std::string program_text;
    std::optional<std::string> verifier_errors;
};

struct GenerationResult {
    std::string provider;
    int provider_priority = 0;
    std::string raw_text;
    std::optional<std::string> extracted_program;
    long input_tokens = 0;
    long output_tokens = 0;
    double cost = 0;
    double latency_s = 0;
};

struct PromptTemplate {
    std::string name;  // e.g. "direct.v1"
    std::string text;
    std::string sha256;
};

const PromptTemplate& direct_template();
const PromptTemplate& repair_template();

std::vector<ChatMessage> render_direct_prompt(const std::string& program_text);
/// Throws std::invalid_argument when errors_text is empty.
std::vector<ChatMessage> render_repair_prompt(const std::string& program_text, const std::string& errors_text);
std::vector<ChatMessage> render_request(const GenerationRequest& request);

/// One "file(line,col): severity: message" line per diagnostic in (file, line, col) order,
/// cut to at most max_lines lines.
std::string render_diagnostics(std::vector<Diagnostic> diagnostics, std::size_t max_lines = 100);

/// Stable hash of a message sequence, used to key replayed responses.
std::string request_hash(const std::vector<ChatMessage>& messages);

class ProviderError : public std::runtime_error {
public:
    enum class Kind { Transport, RateLimit, Timeout, Auth, BadResponse };
    ProviderError(Kind kind, const std::string& what) : std::runtime_error(what), kind(kind) {}
    Kind kind;
};
std::string_view to_string(ProviderError::Kind k);

struct Completion {
    std::string text;
    long input_tokens = 0;
    long output_tokens = 0;
    std::optional<double> latency_s;  // recorded latency (replay); measured otherwise
};

class ProviderClient {
public:
    virtual ~ProviderClient() = default;
    /// Throws ProviderError.
    virtual Completion complete(const ProviderConfig& cfg, const std::vector<ChatMessage>& messages) = 0;
};

/// Chat-completion endpoint over HTTP(S). The API key comes from cfg.api_key_env.
class HttpChatProvider : public ProviderClient {
public:
    Completion complete(const ProviderConfig& cfg, const std::vector<ChatMessage>& messages) override;
    static nlohmann::json request_body(const ProviderConfig& cfg, const std::vector<ChatMessage>& messages);
    static Completion parse_response(const ProviderConfig& cfg, const nlohmann::json& body);
};

/// Canned responses from a JSON-lines file. Each entry has "response" (or "error") and is
/// selected by "request_hash" or by a "match" substring of the user message, optionally
/// restricted to one "provider". Entries are used once unless "repeat" is true.
class ReplayProvider : public ProviderClient {
public:
    explicit ReplayProvider(const std::filesystem::path& file);
    explicit ReplayProvider(std::vector<nlohmann::json> entries);
    Completion complete(const ProviderConfig& cfg, const std::vector<ChatMessage>& messages) override;
    std::size_t unused_entries() const;

private:
    struct Entry {
        nlohmann::json data;
        bool used = false;
    };
    mutable std::mutex mutex_;
    std::vector<Entry> entries_;
};

/// Returns queued completions in order (with zero latency), then the fallback; records every request.
class ScriptedProvider : public ProviderClient {
public:
    using Handler = std::function<Completion(const std::vector<ChatMessage>&)>;

    void push(std::string text, long input_tokens = 100, long output_tokens = 100);
    void push_error(ProviderError::Kind kind, std::string message = "scripted failure");
    void set_fallback(Handler h) { fallback_ = std::move(h); }

    Completion complete(const ProviderConfig& cfg, const std::vector<ChatMessage>& messages) override;
    std::vector<std::vector<ChatMessage>> requests() const;

private:
    mutable std::mutex mutex_;
    std::vector<Handler> queue_;
    std::size_t next_ = 0;
    Handler fallback_;
    std::vector<std::vector<ChatMessage>> requests_;
};

/// Forwards to another client and appends every exchange to a replay file.
class RecordingProvider : public ProviderClient {
public:
    RecordingProvider(ProviderClient& inner, std::filesystem::path file);
    Completion complete(const ProviderConfig& cfg, const std::vector<ChatMessage>& messages) override;

private:
    ProviderClient& inner_;
    std::filesystem::path file_;
    std::mutex mutex_;
};

struct BoundProvider {
    ProviderConfig config;
    std::shared_ptr<ProviderClient> client;
};

struct UsageRecord {
    std::string provider;
    std::string prompt_kind;
    std::string status;  // ok | no-code-block | rate-limit | timeout | transport | auth | bad-response
    long input_tokens = 0;
    long output_tokens = 0;
    double cost = 0;
    double latency_s = 0;
};

/// Cost and latency of every provider call.
class UsageLedger {
public:
    void record(UsageRecord r);
    std::vector<UsageRecord> records() const;
    double total_cost() const;
    double total_latency() const;
    std::size_t calls() const;

private:
    mutable std::mutex mutex_;
    std::vector<UsageRecord> records_;
};

/// One provider call: render, send, extract. Throws ProviderError; a missing code block leaves
/// extracted_program empty. The call is recorded in the ledger either way.
GenerationResult call_provider(const BoundProvider& provider, const GenerationRequest& request, UsageLedger& ledger);

struct ProviderFailure {
    std::string provider;
    std::string reason;
};

class AllProvidersFailed : public std::runtime_error {
public:
    explicit AllProvidersFailed(std::vector<ProviderFailure> failures);
    std::vector<ProviderFailure> failures;
};

/// Tries providers by priority until one returns an extractable program.
GenerationResult call_with_failover(std::vector<BoundProvider> providers, const GenerationRequest& request,
                                    UsageLedger& ledger);

/// Calls every provider concurrently. Failed calls yield an empty slot.
std::vector<std::optional<GenerationResult>> call_all(const std::vector<BoundProvider>& providers,
                                                      const GenerationRequest& request, UsageLedger& ledger);

struct ArbitrationEntry {
    GenerationResult result;
    VerificationOutcome outcome;
};

/// Index of the best entry: syntactically valid, then verified, then fewer lines, then faster
/// verification, then provider priority.
std::size_t arbitrate(const std::vector<ArbitrationEntry>& entries);

}  // namespace specforge

#pragma once

#include <atomic>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <regex>
#include <string>
#include <vector>

#include "json.hpp"
#include "specforge/source_model.hpp"

namespace specforge {

enum class VerifyStatus { Success, SyntaxError, VerificationFailure, Timeout, ToolError };
enum class Severity { Error, Warning };
enum class DiagCategory { Parse, Resolution, Verification, Timeout, Other };

std::string_view to_string(VerifyStatus s);
std::string_view to_string(Severity s);
std::string_view to_string(DiagCategory c);
VerifyStatus verify_status_from_string(std::string_view s);
DiagCategory diag_category_from_string(std::string_view s);

struct Diagnostic {
    std::string file;
    int line = 0;
    int col = 0;
    Severity severity = Severity::Error;
    std::string message;
    DiagCategory category = DiagCategory::Other;

    bool operator==(const Diagnostic&) const = default;
};

/// "file(line,col): severity: message"
std::string format_diagnostic(const Diagnostic& d);

struct VerificationOutcome {
    VerifyStatus status = VerifyStatus::ToolError;
    std::vector<Diagnostic> diagnostics;
    double elapsed_s = 0;
    int obligations_verified = 0;
    int obligations_failed = 0;
    bool cached = false;

    int error_count() const;
};

nlohmann::json to_json(const VerificationOutcome& o);
VerificationOutcome outcome_from_json(const nlohmann::json& j);

struct VerifierConfig {
    std::string executable = "dafny";
    std::vector<std::string> base_args = {"verify"};
    double timeout_s = 60;
    std::vector<std::string> extra_args;
    std::optional<std::string> filter_symbol;
    std::string filter_symbol_flag = "--filter-symbol";
    double grace_s = 2;
};

/// Message patterns that turn verifier output into diagnostics and a status.
struct PatternTable {
    struct Rule {
        std::regex pattern;
        DiagCategory category;
    };
    std::regex diagnostic;
    std::regex summary;
    std::vector<Rule> run_level;
    std::vector<Rule> message;
    std::vector<std::regex> tool_error;

    static PatternTable from_json(const nlohmann::json& j);
    /// Table compiled into the library.
    static const PatternTable& builtin();
};

struct RawRun {
    std::string output;
    int exit_code = 0;
    bool timed_out = false;
    bool crashed = false;  // killed by a signal or could not start
};

VerificationOutcome parse_verifier_output(const RawRun& run, const PatternTable& table = PatternTable::builtin());

class Verifier {
public:
    virtual ~Verifier() = default;
    virtual VerificationOutcome verify(const std::string& text, const VerifierConfig& cfg) = 0;
};

/// Runs the verifier executable on a temporary file.
class ProcessVerifier : public Verifier {
public:
    explicit ProcessVerifier(PatternTable table = PatternTable::builtin());
    VerificationOutcome verify(const std::string& text, const VerifierConfig& cfg) override;
    std::vector<std::string> command_line(const VerifierConfig& cfg, const std::string& file) const;

private:
    PatternTable table_;
};

/// Scripted verifier for tests and offline runs. Rules are tried in order; the first match
/// decides the outcome.
class MockVerifier : public Verifier {
public:
    using Predicate = std::function<bool(const std::string& text, const VerifierConfig& cfg)>;

    void add_rule(Predicate when, VerificationOutcome outcome);
    void add_fingerprint(const std::string& text, VerificationOutcome outcome);
    void set_default(VerificationOutcome outcome) { default_ = std::move(outcome); }

    /// {"rules": [{"contains"|"not_contains"|"regex"|"fingerprint"|"program": ..., "outcome": {...}}],
    ///  "default": {...}}
    static std::unique_ptr<MockVerifier> from_json(const nlohmann::json& j);

    VerificationOutcome verify(const std::string& text, const VerifierConfig& cfg) override;
    int calls() const { return calls_.load(); }

private:
    struct Rule {
        Predicate when;
        VerificationOutcome outcome;
    };
    std::vector<Rule> rules_;
    std::map<std::string, VerificationOutcome> fingerprints_;
    VerificationOutcome default_ = success_outcome();
    std::atomic<int> calls_{0};

public:
    static VerificationOutcome success_outcome(int verified = 1);
    static VerificationOutcome failure_outcome(std::vector<Diagnostic> diags, int verified = 0);
    static VerificationOutcome syntax_outcome(std::string message);
    static VerificationOutcome timeout_outcome();
};

/// Collapses whitespace runs and drops blank lines.
std::string normalize_for_cache(const std::string& text);
std::string sha256_hex(std::string_view data);
std::string cache_key(const std::string& text, const VerifierConfig& cfg);

/// Persistent verification cache in front of another verifier (JSON lines: key, outcome).
class CachedVerifier : public Verifier {
public:
    CachedVerifier(Verifier& inner, std::filesystem::path cache_file);
    VerificationOutcome verify(const std::string& text, const VerifierConfig& cfg) override;

    std::size_t hits() const { return hits_; }
    std::size_t misses() const { return misses_; }
    std::size_t corrupt_lines() const { return corrupt_; }

private:
    Verifier& inner_;
    std::filesystem::path file_;
    std::mutex mutex_;
    std::map<std::string, VerificationOutcome> entries_;
    std::size_t hits_ = 0, misses_ = 0, corrupt_ = 0;
};

enum class ErrorClass { Success, Syntax, Timeout, Incomplete, PotentiallyIncorrect, ToolError };
std::string_view to_string(ErrorClass c);
ErrorClass error_class_from_string(std::string_view s);

struct Classification {
    ErrorClass error_class = ErrorClass::PotentiallyIncorrect;
    bool skeleton_mismatch = false;  // merge refused: the candidate altered the program
};

using VerifyFn = std::function<VerificationOutcome(const std::string&)>;

Classification classify_outcome(const VerificationOutcome& outcome, const SourceFile& candidate,
                                const SourceFile* manual, const VerifyFn& verify_fn);

}  // namespace specforge

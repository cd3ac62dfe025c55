#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "specforge/llm_gateway.hpp"
#include "specforge/minimizer.hpp"
#include "specforge/strip_merge.hpp"
#include "specforge/verifier.hpp"

namespace specforge {

enum class Strategy { Direct, Repair };
std::string_view to_string(Strategy s);
Strategy strategy_from_string(std::string_view s);

struct RunConfig {
    Strategy strategy = Strategy::Repair;
    int max_direct_runs = 5;
    int max_repair_iterations = 9;
    bool multimodel = false;
    std::vector<BoundProvider> providers;
    VerifierConfig verifier;
    bool minimize_on_success = false;
    MinimizeOptions minimize;  // verifier settings are taken from `verifier`
    std::size_t diagnostic_budget = 100;
    bool check_negative_tests = true;
    bool negative_test_retry = true;  // one extra repair attempt per failing marker
    CheatingOptions cheating;

    /// Throws std::invalid_argument.
    void validate() const;
    int max_attempts() const { return strategy == Strategy::Direct ? max_direct_runs : 1 + max_repair_iterations; }
};

struct AttemptRecord {
    int attempt_index = 0;  // 1-based
    PromptKind kind = PromptKind::Direct;
    std::string provider;
    ErrorClass error_class = ErrorClass::ToolError;
    std::optional<VerifyStatus> verify_status;  // absent when nothing was verified
    int obligations_verified = 0;
    int obligations_failed = 0;
    std::vector<Diagnostic> diagnostics;
    int cheating_violations = 0;
    std::vector<std::string> notes;
    LocStats loc;
    int calls = 0;  // provider calls made for this attempt
    double cost = 0;
    double llm_latency_s = 0;
    double verify_elapsed_s = 0;
    std::string program;  // candidate after post-processing; empty if none
};

nlohmann::json to_json(const AttemptRecord& a);

struct NegativeTestFailure {
    int marker_index = 0;  // 1-based
    int line = 0;
    std::string text;      // the activated test line
};

struct SolveResult {
    bool solved = false;
    std::vector<AttemptRecord> attempts;
    std::vector<AttemptRecord> negative_retries;
    std::optional<std::string> final_program;
    std::optional<std::string> minimized_program;
    std::optional<bool> negative_tests_passed;
    std::vector<NegativeTestFailure> negative_failures;
    std::optional<MinimizeResult> minimization;

    double total_cost() const;
};

nlohmann::json to_json(const SolveResult& r);

struct SolveContext {
    Verifier* verifier = nullptr;
    UsageLedger* ledger = nullptr;          // optional; receives every provider call
    const std::string* manual = nullptr;    // manual solution for error classification
    std::function<void(const AttemptRecord&)> on_attempt;
    std::function<void(int attempt_index, std::string_view phase)> on_phase;  // prompting | verifying
    std::function<bool()> cancelled;        // checked between attempts
    /// Maps an extracted candidate to the program that is screened and verified.
    std::function<std::string(const std::string&)> postprocess;
    /// Makes the first repair-strategy attempt a repair of the input with these errors.
    std::optional<std::string> initial_errors;
};

SolveResult run_direct(const std::string& stripped_program, const RunConfig& cfg, const SolveContext& ctx);
SolveResult run_repair(const std::string& stripped_program, const RunConfig& cfg, const SolveContext& ctx);
/// Dispatches on cfg.strategy.
SolveResult solve(const std::string& stripped_program, const RunConfig& cfg, const SolveContext& ctx);

/// Activates every negative test in turn; each must fail to verify.
std::pair<bool, std::vector<NegativeTestFailure>> check_negative_tests(const std::string& verified_program,
                                                                       const RunConfig& cfg, Verifier& verifier);

/// Diagnostics rendered for a repair prompt, or a one-line status summary.
std::string outcome_message(const VerificationOutcome& o, std::size_t budget = 100);

/// Repair message naming the negative tests that verified.
std::string negative_test_message(const std::vector<NegativeTestFailure>& failures);

}  // namespace specforge

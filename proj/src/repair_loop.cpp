#include "specforge/repair_loop.hpp"

#include <algorithm>
#include <sstream>

namespace specforge {

std::string_view to_string(Strategy s) { return s == Strategy::Direct ? "direct" : "repair"; }

Strategy strategy_from_string(std::string_view s) {
    if (s == "direct") return Strategy::Direct;
    if (s == "repair") return Strategy::Repair;
    throw std::invalid_argument("unknown strategy '" + std::string(s) + "'");
}

void RunConfig::validate() const {
    if (max_direct_runs < 1) throw std::invalid_argument("max_direct_runs must be at least 1");
    if (max_repair_iterations < 0) throw std::invalid_argument("max_repair_iterations must not be negative");
    if (providers.empty()) throw std::invalid_argument("no providers configured");
    std::vector<ProviderConfig> configs;
    for (const auto& p : providers) {
        if (!p.client) throw std::invalid_argument("provider '" + p.config.name + "' has no client");
        configs.push_back(p.config);
    }
    validate_providers(configs);
}

nlohmann::json to_json(const AttemptRecord& a) {
    nlohmann::json j{{"attempt", a.attempt_index},
                     {"kind", to_string(a.kind)},
                     {"provider", a.provider},
                     {"error_class", to_string(a.error_class)},
                     {"cheating_violations", a.cheating_violations},
                     {"notes", a.notes},
                     {"loc", {{"L", a.loc.L}, {"A", a.loc.A}, {"H", a.loc.H}}},
                     {"calls", a.calls},
                     {"cost", a.cost},
                     {"llm_latency_s", a.llm_latency_s},
                     {"verify_elapsed_s", a.verify_elapsed_s},
                     {"obligations_verified", a.obligations_verified},
                     {"obligations_failed", a.obligations_failed}};
    j["verify_status"] = a.verify_status ? nlohmann::json(to_string(*a.verify_status)) : nlohmann::json();
    return j;
}

double SolveResult::total_cost() const {
    double c = 0;
    for (const auto& a : attempts) c += a.cost;
    for (const auto& a : negative_retries) c += a.cost;
    return c;
}

nlohmann::json to_json(const SolveResult& r) {
    nlohmann::json j{{"solved", r.solved}, {"attempts", nlohmann::json::array()}, {"negative_retries", nlohmann::json::array()}};
    for (const auto& a : r.attempts) j["attempts"].push_back(to_json(a));
    for (const auto& a : r.negative_retries) j["negative_retries"].push_back(to_json(a));
    j["final_program"] = r.final_program ? nlohmann::json(*r.final_program) : nlohmann::json();
    j["minimized_program"] = r.minimized_program ? nlohmann::json(*r.minimized_program) : nlohmann::json();
    j["negative_tests_passed"] = r.negative_tests_passed ? nlohmann::json(*r.negative_tests_passed) : nlohmann::json();
    nlohmann::json neg = nlohmann::json::array();
    for (const auto& f : r.negative_failures) neg.push_back({{"marker", f.marker_index}, {"line", f.line}, {"text", f.text}});
    j["negative_failures"] = neg;
    j["total_cost"] = r.total_cost();
    return j;
}

namespace {

int first_differing_line(const std::string& a, const std::string& b) {
    int line = 1;
    for (std::size_t i = 0; i < a.size() && i < b.size(); ++i) {
        if (a[i] != b[i]) return line;
        if (a[i] == '\n') ++line;
    }
    return line;
}

std::string line_at(const std::string& text, int line) {
    std::istringstream in(text);
    std::string l;
    for (int i = 1; std::getline(in, l); ++i) {
        if (i == line) return l;
    }
    return {};
}

std::string trim(const std::string& s) {
    auto b = s.find_first_not_of(" \t");
    auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

std::string violation_message(const std::vector<Violation>& violations) {
    std::string out = "The previous answer was rejected because it breaks the annotation rules:\n";
    for (const auto& v : violations) {
        out += "line " + std::to_string(v.line) + ": " + std::string(to_string(v.kind)) + ": " + v.detail + "\n";
    }
    return out;
}

const char* const kNoProgram =
    "The previous answer did not contain a Dafny program between BEGIN DAFNY and END DAFNY.\n";

/// Result of one generate, screen and verify step.
struct Step {
    AttemptRecord record;
    std::optional<VerificationOutcome> outcome;
    std::vector<Violation> violations;
    bool clean_program = false;  // a candidate passed the cheating screen
};

class Solver {
public:
    Solver(const std::string& stripped, const RunConfig& cfg, const SolveContext& ctx)
        : stripped_(stripped), stripped_file_(parse(stripped)), cfg_(cfg), ctx_(ctx) {
        if (!ctx.verifier) throw std::invalid_argument("no verifier");
        cfg.validate();
        if (ctx.manual) manual_file_ = parse(*ctx.manual);
    }

    SolveResult direct() {
        SolveResult r;
        for (int i = 1; i <= cfg_.max_direct_runs && !cancelled(); ++i) {
            Step s = step(i, {PromptKind::Direct, stripped_, std::nullopt});
            bool ok = s.record.error_class == ErrorClass::Success;
            publish(r.attempts, s.record);
            if (ok) {
                finish(r, s.record.program);
                break;
            }
        }
        return r;
    }

    SolveResult repair() {
        SolveResult r;
        std::string current = stripped_;
        std::string clean_errors = ctx_.initial_errors.value_or("");  // diagnostics of the carried-forward program
        std::string last_errors = clean_errors;
        for (int i = 1; i <= 1 + cfg_.max_repair_iterations && !cancelled(); ++i) {
            GenerationRequest req{PromptKind::Direct, stripped_, std::nullopt};
            if ((i > 1 || ctx_.initial_errors) && !last_errors.empty()) req = {PromptKind::Repair, current, last_errors};
            Step s = step(i, req);
            bool ok = s.record.error_class == ErrorClass::Success;
            publish(r.attempts, s.record);
            if (ok) {
                finish(r, s.record.program);
                break;
            }
            if (s.clean_program) {
                current = s.record.program;
                clean_errors = outcome_message(*s.outcome, cfg_.diagnostic_budget);
                last_errors = clean_errors;
            } else if (!s.violations.empty()) {
                last_errors = clean_errors + violation_message(s.violations);
            } else if (s.record.error_class == ErrorClass::Syntax) {
                last_errors = clean_errors + kNoProgram;
            }
        }
        return r;
    }

private:
    bool cancelled() const { return ctx_.cancelled && ctx_.cancelled(); }

    void phase(std::string_view p) const {
        if (ctx_.on_phase) ctx_.on_phase(current_attempt_, p);
    }

    void publish(std::vector<AttemptRecord>& list, const AttemptRecord& a) {
        list.push_back(a);
        if (ctx_.on_attempt) ctx_.on_attempt(a);
    }

    VerificationOutcome verify(const std::string& text, double& elapsed) {
        VerificationOutcome o = ctx_.verifier->verify(text, cfg_.verifier);
        elapsed += o.elapsed_s;
        return o;
    }

    void forward(const UsageLedger& local) {
        if (!ctx_.ledger) return;
        for (auto r : local.records()) ctx_.ledger->record(std::move(r));
    }

    /// Screens and verifies one extracted program.
    struct Candidate {
        std::string provider;
        GenerationResult gen;
        std::string program;
        std::vector<Violation> violations;
        std::optional<VerificationOutcome> outcome;
    };

    Candidate evaluate(const GenerationResult& gen, double& verify_elapsed) {
        std::string text = *gen.extracted_program;
        if (!text.empty() && text.back() != '\n') text += '\n';
        text = relocate_invariants(text);
        if (ctx_.postprocess) text = ctx_.postprocess(text);
        Candidate c{gen.provider, gen, text, {}, std::nullopt};
        SourceFile file = parse(c.program);
        c.violations = detect_cheating(stripped_file_, file, cfg_.cheating);
        if (c.violations.empty()) {
            phase("verifying");
            c.outcome = verify(c.program, verify_elapsed);
        }
        return c;
    }

    Step step(int index, const GenerationRequest& req) {
        Step s;
        AttemptRecord& a = s.record;
        a.attempt_index = index;
        a.kind = req.kind;
        UsageLedger local;
        current_attempt_ = index;
        phase("prompting");

        std::optional<Candidate> chosen;
        if (!cfg_.multimodel) {
            try {
                GenerationResult gen = call_with_failover(cfg_.providers, req, local);
                a.llm_latency_s = gen.latency_s;
                chosen = evaluate(gen, a.verify_elapsed_s);
            } catch (const AllProvidersFailed& e) {
                bool all_empty = std::all_of(e.failures.begin(), e.failures.end(), [](const ProviderFailure& f) {
                    return f.reason == "no code block in response";
                });
                a.error_class = all_empty ? ErrorClass::Syntax : ErrorClass::ToolError;
                a.notes.push_back(all_empty ? "no-code-block" : "providers-failed");
                for (const auto& f : e.failures) a.notes.push_back(f.provider + ": " + f.reason);
                for (const auto& r : local.records()) a.llm_latency_s += r.latency_s;
            }
        } else {
            auto results = call_all(cfg_.providers, req, local);
            std::vector<Candidate> clean;
            std::vector<Candidate> cheating;
            for (const auto& r : results) {
                if (r) a.llm_latency_s = std::max(a.llm_latency_s, r->latency_s);
                if (!r || !r->extracted_program) continue;
                Candidate c = evaluate(*r, a.verify_elapsed_s);
                (c.violations.empty() ? clean : cheating).push_back(std::move(c));
            }
            if (!clean.empty()) {
                std::vector<ArbitrationEntry> entries;
                for (const auto& c : clean) {
                    GenerationResult g = c.gen;
                    g.extracted_program = c.program;
                    entries.push_back({g, *c.outcome});
                }
                chosen = clean[arbitrate(entries)];
            } else if (!cheating.empty()) {
                chosen = cheating.front();
            } else {
                bool any_reply = std::any_of(results.begin(), results.end(), [](const auto& r) { return r.has_value(); });
                a.error_class = any_reply ? ErrorClass::Syntax : ErrorClass::ToolError;
                a.notes.push_back(any_reply ? "no-code-block" : "providers-failed");
            }
        }

        a.cost = local.total_cost();
        a.calls = static_cast<int>(local.calls());
        forward(local);
        if (!chosen) return s;

        a.provider = chosen->provider;
        a.program = chosen->program;
        a.loc = count_loc(parse(a.program));
        if (!chosen->violations.empty()) {
            s.violations = chosen->violations;
            a.cheating_violations = static_cast<int>(s.violations.size());
            a.error_class = ErrorClass::PotentiallyIncorrect;
            a.notes.push_back("cheating");
            for (const auto& v : s.violations) a.notes.push_back(std::string(to_string(v.kind)) + ": " + v.detail);
            return s;
        }
        s.clean_program = true;
        s.outcome = chosen->outcome;
        a.verify_status = s.outcome->status;
        a.obligations_verified = s.outcome->obligations_verified;
        a.obligations_failed = s.outcome->obligations_failed;
        a.diagnostics = s.outcome->diagnostics;
        VerifyFn verify_fn = [this, &a](const std::string& text) { return verify(text, a.verify_elapsed_s); };
        Classification cls = classify_outcome(*s.outcome, parse(a.program), manual_file_ ? &*manual_file_ : nullptr, verify_fn);
        a.error_class = cls.error_class;
        if (cls.skeleton_mismatch) a.notes.push_back("skeleton-mismatch");
        return s;
    }

    void finish(SolveResult& r, const std::string& program) {
        r.solved = true;
        r.final_program = program;
        if (cfg_.check_negative_tests) check_negatives(r);
        if (cfg_.minimize_on_success) {
            MinimizeOptions opts = cfg_.minimize;
            opts.verifier = cfg_.verifier;
            opts.check_initial = false;
            try {
                MinimizeResult m = minimize(stripped_, *r.final_program, *ctx_.verifier, opts);
                r.minimized_program = m.text;
                r.minimization = std::move(m);
            } catch (const std::exception&) {
                r.minimized_program.reset();
            }
        }
    }

    void check_negatives(SolveResult& r) {
        auto [passed, failures] = check_negative_tests(*r.final_program, cfg_, *ctx_.verifier);
        int budget = cfg_.negative_test_retry ? static_cast<int>(failures.size()) : 0;
        int index = static_cast<int>(r.attempts.size());
        while (!passed && budget-- > 0 && !cancelled()) {
            Step s = step(++index, {PromptKind::Repair, *r.final_program, negative_test_message(failures)});
            s.record.notes.insert(s.record.notes.begin(), "negative-test-retry");
            publish(r.negative_retries, s.record);
            if (s.record.error_class != ErrorClass::Success) continue;
            auto [p2, f2] = check_negative_tests(s.record.program, cfg_, *ctx_.verifier);
            if (p2 || f2.size() < failures.size()) {
                r.final_program = s.record.program;
                passed = p2;
                failures = f2;
            }
        }
        r.negative_tests_passed = passed;
        r.negative_failures = failures;
    }

    const std::string& stripped_;
    SourceFile stripped_file_;
    std::optional<SourceFile> manual_file_;
    const RunConfig& cfg_;
    const SolveContext& ctx_;
    int current_attempt_ = 0;
};

}  // namespace

std::string outcome_message(const VerificationOutcome& o, std::size_t budget) {
    std::string diags = render_diagnostics(o.diagnostics, budget);
    if (!diags.empty()) return diags;
    switch (o.status) {
        case VerifyStatus::Timeout: return "Verification timed out.\n";
        case VerifyStatus::SyntaxError: return "The program does not parse.\n";
        case VerifyStatus::ToolError: return "The verifier failed to run.\n";
        default: return "Verification failed with " + std::to_string(o.error_count()) + " errors.\n";
    }
}

SolveResult run_direct(const std::string& stripped_program, const RunConfig& cfg, const SolveContext& ctx) {
    if (cfg.strategy != Strategy::Direct) throw std::invalid_argument("run_direct needs the direct strategy");
    return Solver(stripped_program, cfg, ctx).direct();
}

SolveResult run_repair(const std::string& stripped_program, const RunConfig& cfg, const SolveContext& ctx) {
    if (cfg.strategy != Strategy::Repair) throw std::invalid_argument("run_repair needs the repair strategy");
    return Solver(stripped_program, cfg, ctx).repair();
}

SolveResult solve(const std::string& stripped_program, const RunConfig& cfg, const SolveContext& ctx) {
    return cfg.strategy == Strategy::Direct ? run_direct(stripped_program, cfg, ctx) : run_repair(stripped_program, cfg, ctx);
}

std::pair<bool, std::vector<NegativeTestFailure>> check_negative_tests(const std::string& verified_program,
                                                                       const RunConfig& cfg, Verifier& verifier) {
    std::vector<NegativeTestFailure> failures;
    int n = count_negative_tests(verified_program);
    for (int i = 1; i <= n; ++i) {
        std::string active = activate_negative_test(verified_program, i);
        if (verifier.verify(active, cfg.verifier).status != VerifyStatus::Success) continue;
        int line = first_differing_line(verified_program, active);
        failures.push_back({i, line, trim(line_at(active, line))});
    }
    return {failures.empty(), failures};
}

std::string negative_test_message(const std::vector<NegativeTestFailure>& failures) {
    std::string out;
    for (const auto& f : failures) {
        out += "program.dfy(" + std::to_string(f.line) + ",1): Error: negative test '" + f.text +
               "' verifies but is expected to fail; the specification is too weak or too strong\n";
    }
    return out;
}

}  // namespace specforge

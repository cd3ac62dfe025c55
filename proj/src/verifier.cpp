#include "specforge/verifier.hpp"

#include <openssl/evp.h>
#include <unistd.h>

#include <fstream>
#include <sstream>

#include "specforge/process.hpp"
#include "specforge/resources.hpp"
#include "specforge/strip_merge.hpp"
#include "specforge/text_edit.hpp"

namespace specforge {

std::string_view to_string(VerifyStatus s) {
    switch (s) {
        case VerifyStatus::Success: return "Success";
        case VerifyStatus::SyntaxError: return "SyntaxError";
        case VerifyStatus::VerificationFailure: return "VerificationFailure";
        case VerifyStatus::Timeout: return "Timeout";
        case VerifyStatus::ToolError: return "ToolError";
    }
    return "ToolError";
}

std::string_view to_string(Severity s) { return s == Severity::Error ? "error" : "warning"; }

std::string_view to_string(DiagCategory c) {
    switch (c) {
        case DiagCategory::Parse: return "parse";
        case DiagCategory::Resolution: return "resolution";
        case DiagCategory::Verification: return "verification";
        case DiagCategory::Timeout: return "timeout";
        case DiagCategory::Other: return "other";
    }
    return "other";
}

VerifyStatus verify_status_from_string(std::string_view s) {
    for (auto v : {VerifyStatus::Success, VerifyStatus::SyntaxError, VerifyStatus::VerificationFailure,
                   VerifyStatus::Timeout, VerifyStatus::ToolError}) {
        if (to_string(v) == s) return v;
    }
    throw std::invalid_argument("unknown verification status: " + std::string(s));
}

DiagCategory diag_category_from_string(std::string_view s) {
    for (auto v : {DiagCategory::Parse, DiagCategory::Resolution, DiagCategory::Verification,
                   DiagCategory::Timeout, DiagCategory::Other}) {
        if (to_string(v) == s) return v;
    }
    throw std::invalid_argument("unknown diagnostic category: " + std::string(s));
}

std::string format_diagnostic(const Diagnostic& d) {
    std::ostringstream os;
    os << d.file << "(" << d.line << "," << d.col << "): " << to_string(d.severity) << ": " << d.message;
    return os.str();
}

int VerificationOutcome::error_count() const {
    int n = 0;
    for (const auto& d : diagnostics) n += d.severity == Severity::Error;
    return n;
}

nlohmann::json to_json(const VerificationOutcome& o) {
    nlohmann::json diags = nlohmann::json::array();
    for (const auto& d : o.diagnostics) {
        diags.push_back({{"file", d.file},
                         {"line", d.line},
                         {"col", d.col},
                         {"severity", to_string(d.severity)},
                         {"message", d.message},
                         {"category", to_string(d.category)}});
    }
    return {{"status", to_string(o.status)},
            {"diagnostics", diags},
            {"elapsed_s", o.elapsed_s},
            {"obligations_verified", o.obligations_verified},
            {"obligations_failed", o.obligations_failed}};
}

VerificationOutcome outcome_from_json(const nlohmann::json& j) {
    VerificationOutcome o;
    o.status = verify_status_from_string(j.at("status").get<std::string>());
    for (const auto& d : j.value("diagnostics", nlohmann::json::array())) {
        Diagnostic diag;
        diag.file = d.value("file", "program.dfy");
        diag.line = d.value("line", 0);
        diag.col = d.value("col", 0);
        diag.severity = d.value("severity", "error") == "warning" ? Severity::Warning : Severity::Error;
        diag.message = d.value("message", "");
        diag.category = diag_category_from_string(d.value("category", "other"));
        o.diagnostics.push_back(std::move(diag));
    }
    o.elapsed_s = j.value("elapsed_s", 0.0);
    o.obligations_verified = j.value("obligations_verified", 0);
    o.obligations_failed = j.value("obligations_failed", 0);
    return o;
}

// ---- output parsing -----------------------------------------------------------------

PatternTable PatternTable::from_json(const nlohmann::json& j) {
    PatternTable t;
    t.diagnostic = std::regex(j.at("diagnostic").get<std::string>());
    t.summary = std::regex(j.at("summary").get<std::string>());
    for (const auto& r : j.value("run_level", nlohmann::json::array())) {
        t.run_level.push_back({std::regex(r.at("pattern").get<std::string>()),
                               diag_category_from_string(r.at("category").get<std::string>())});
    }
    for (const auto& r : j.value("message", nlohmann::json::array())) {
        t.message.push_back({std::regex(r.at("pattern").get<std::string>()),
                             diag_category_from_string(r.at("category").get<std::string>())});
    }
    for (const auto& r : j.value("tool_error", nlohmann::json::array())) {
        t.tool_error.emplace_back(r.get<std::string>());
    }
    return t;
}

const PatternTable& PatternTable::builtin() {
    static const PatternTable table =
        from_json(nlohmann::json::parse(embedded_resource("verifier_patterns.json")));
    return table;
}

VerificationOutcome parse_verifier_output(const RawRun& run, const PatternTable& table) {
    VerificationOutcome o;
    std::optional<int> verified, errors, timeouts;
    std::optional<DiagCategory> run_category;
    bool tool_error_text = false;

    std::istringstream in(run.output);
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        std::smatch m;
        if (std::regex_search(line, m, table.summary)) {
            verified = std::stoi(m[1].str());
            errors = std::stoi(m[2].str());
            if (m.size() > 3 && m[3].matched) timeouts = std::stoi(m[3].str());
            continue;
        }
        for (const auto& r : table.run_level) {
            if (std::regex_search(line, r.pattern)) run_category = r.category;
        }
        for (const auto& r : table.tool_error) {
            if (std::regex_search(line, r)) tool_error_text = true;
        }
        if (!std::regex_match(line, m, table.diagnostic)) continue;
        Diagnostic d;
        d.file = m[1].str();
        d.line = std::stoi(m[2].str());
        d.col = std::stoi(m[3].str());
        std::string sev = m[4].matched ? m[4].str() : "";
        d.message = m[5].str();
        d.category = DiagCategory::Other;
        for (const auto& r : table.message) {
            if (std::regex_search(d.message, r.pattern)) {
                d.category = r.category;
                break;
            }
        }
        if (sev.empty() || sev == "Info" || sev == "info") {
            if (d.category != DiagCategory::Timeout) continue;  // related-location notes
            d.severity = Severity::Error;
        } else {
            d.severity = (sev == "Warning" || sev == "warning") ? Severity::Warning : Severity::Error;
        }
        if (d.severity == Severity::Error && d.category == DiagCategory::Other) {
            d.category = DiagCategory::Verification;
        }
        o.diagnostics.push_back(std::move(d));
    }
    if (run_category) {
        for (auto& d : o.diagnostics) {
            if (d.severity == Severity::Error && d.category != DiagCategory::Parse &&
                d.category != DiagCategory::Resolution) {
                d.category = *run_category;
            }
        }
    }

    bool syntax = false, timeout_diag = false, verification_diag = false;
    for (const auto& d : o.diagnostics) {
        if (d.severity != Severity::Error) continue;
        syntax |= d.category == DiagCategory::Parse || d.category == DiagCategory::Resolution;
        timeout_diag |= d.category == DiagCategory::Timeout;
        verification_diag |= d.category == DiagCategory::Verification;
    }
    o.obligations_verified = verified.value_or(0);
    o.obligations_failed = errors ? *errors + timeouts.value_or(0) : o.error_count();

    if (run.crashed || (tool_error_text && o.diagnostics.empty() && !verified)) {
        o.status = VerifyStatus::ToolError;
    } else if (run.timed_out) {
        o.status = VerifyStatus::Timeout;
        if (o.diagnostics.empty() || !timeout_diag) {
            o.diagnostics.push_back({"", 0, 0, Severity::Error, "verifier timed out", DiagCategory::Timeout});
        }
        o.obligations_failed = std::max(o.obligations_failed, 1);
    } else if (syntax) {
        o.status = VerifyStatus::SyntaxError;
    } else if (verification_diag || errors.value_or(0) > 0) {
        o.status = VerifyStatus::VerificationFailure;
    } else if (timeout_diag || timeouts.value_or(0) > 0) {
        o.status = VerifyStatus::Timeout;
    } else if (verified || run.exit_code == 0) {
        o.status = VerifyStatus::Success;
        o.obligations_failed = 0;
    } else {
        o.status = VerifyStatus::ToolError;
    }
    return o;
}

// ---- process verifier -----------------------------------------------------------------

ProcessVerifier::ProcessVerifier(PatternTable table) : table_(std::move(table)) {}

std::vector<std::string> ProcessVerifier::command_line(const VerifierConfig& cfg, const std::string& file) const {
    std::vector<std::string> argv{cfg.executable};
    argv.insert(argv.end(), cfg.base_args.begin(), cfg.base_args.end());
    argv.insert(argv.end(), cfg.extra_args.begin(), cfg.extra_args.end());
    if (cfg.filter_symbol) {
        argv.push_back(cfg.filter_symbol_flag);
        argv.push_back(*cfg.filter_symbol);
    }
    argv.push_back(file);
    return argv;
}

VerificationOutcome ProcessVerifier::verify(const std::string& text, const VerifierConfig& cfg) {
    if (cfg.timeout_s <= 0) throw std::invalid_argument("verifier timeout must be positive");
    std::string dir_template = (std::filesystem::temp_directory_path() / "specforge-XXXXXX").string();
    std::vector<char> buf(dir_template.begin(), dir_template.end());
    buf.push_back('\0');
    if (!mkdtemp(buf.data())) {
        VerificationOutcome o;
        o.status = VerifyStatus::ToolError;
        o.diagnostics.push_back({"", 0, 0, Severity::Error, "cannot create temporary directory", DiagCategory::Other});
        return o;
    }
    std::filesystem::path dir(buf.data());
    std::filesystem::path file = dir / "program.dfy";
    {
        std::ofstream out(file, std::ios::binary);
        out << text;
    }
    ProcessResult pr = run_process(command_line(cfg, file.string()), cfg.timeout_s, cfg.grace_s);
    std::error_code ec;
    std::filesystem::remove_all(dir, ec);

    VerificationOutcome o;
    if (pr.spawn_failed) {
        o.status = VerifyStatus::ToolError;
        o.diagnostics.push_back({"", 0, 0, Severity::Error, pr.spawn_error, DiagCategory::Other});
    } else {
        RawRun raw{pr.output, pr.exit_code, pr.timed_out, pr.signal != 0 && !pr.timed_out};
        o = parse_verifier_output(raw, table_);
        for (auto& d : o.diagnostics) {
            if (d.file == file.string() || std::filesystem::path(d.file).filename() == "program.dfy") {
                d.file = "program.dfy";
            }
        }
    }
    o.elapsed_s = pr.elapsed_s;
    return o;
}

// ---- mock verifier --------------------------------------------------------------------

VerificationOutcome MockVerifier::success_outcome(int verified) {
    VerificationOutcome o;
    o.status = VerifyStatus::Success;
    o.obligations_verified = verified;
    return o;
}

VerificationOutcome MockVerifier::failure_outcome(std::vector<Diagnostic> diags, int verified) {
    VerificationOutcome o;
    o.status = VerifyStatus::VerificationFailure;
    o.diagnostics = std::move(diags);
    o.obligations_verified = verified;
    o.obligations_failed = std::max(1, o.error_count());
    return o;
}

VerificationOutcome MockVerifier::syntax_outcome(std::string message) {
    VerificationOutcome o;
    o.status = VerifyStatus::SyntaxError;
    o.diagnostics.push_back({"program.dfy", 1, 1, Severity::Error, std::move(message), DiagCategory::Parse});
    o.obligations_failed = 1;
    return o;
}

VerificationOutcome MockVerifier::timeout_outcome() {
    VerificationOutcome o;
    o.status = VerifyStatus::Timeout;
    o.diagnostics.push_back({"program.dfy", 1, 1, Severity::Error, "verification timed out", DiagCategory::Timeout});
    o.obligations_failed = 1;
    return o;
}

void MockVerifier::add_rule(Predicate when, VerificationOutcome outcome) {
    rules_.push_back({std::move(when), std::move(outcome)});
}

void MockVerifier::add_fingerprint(const std::string& text, VerificationOutcome outcome) {
    fingerprints_[sha256_hex(normalize_for_cache(text))] = std::move(outcome);
}

std::unique_ptr<MockVerifier> MockVerifier::from_json(const nlohmann::json& j) {
    auto mock = std::make_unique<MockVerifier>();
    for (const auto& r : j.value("rules", nlohmann::json::array())) {
        VerificationOutcome out = outcome_from_json(r.at("outcome"));
        if (r.contains("fingerprint")) {
            mock->fingerprints_[r["fingerprint"].get<std::string>()] = out;
        } else if (r.contains("program")) {
            mock->add_fingerprint(r["program"].get<std::string>(), out);
        } else if (r.contains("contains")) {
            std::string s = r["contains"].get<std::string>();
            mock->add_rule([s](const std::string& t, const VerifierConfig&) { return t.find(s) != std::string::npos; }, out);
        } else if (r.contains("not_contains")) {
            std::string s = r["not_contains"].get<std::string>();
            mock->add_rule([s](const std::string& t, const VerifierConfig&) { return t.find(s) == std::string::npos; }, out);
        } else if (r.contains("regex")) {
            std::regex re(r["regex"].get<std::string>());
            mock->add_rule([re](const std::string& t, const VerifierConfig&) { return std::regex_search(t, re); }, out);
        } else {
            throw std::invalid_argument("mock verifier rule needs contains, not_contains, regex, fingerprint or program");
        }
    }
    if (j.contains("default")) mock->set_default(outcome_from_json(j["default"]));
    return mock;
}

VerificationOutcome MockVerifier::verify(const std::string& text, const VerifierConfig& cfg) {
    ++calls_;
    auto it = fingerprints_.find(sha256_hex(normalize_for_cache(text)));
    if (it != fingerprints_.end()) return it->second;
    for (const auto& r : rules_) {
        if (r.when(text, cfg)) return r.outcome;
    }
    return default_;
}

// ---- cache ----------------------------------------------------------------------------

std::string normalize_for_cache(const std::string& text) {
    std::string out;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        std::string c = collapse_whitespace(line);
        if (c.empty()) continue;
        out += c;
        out += '\n';
    }
    return out;
}

std::string sha256_hex(std::string_view data) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
    EVP_DigestUpdate(ctx, data.data(), data.size());
    EVP_DigestFinal_ex(ctx, digest, &len);
    EVP_MD_CTX_free(ctx);
    static const char* hex = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out += hex[digest[i] >> 4];
        out += hex[digest[i] & 15];
    }
    return out;
}

std::string cache_key(const std::string& text, const VerifierConfig& cfg) {
    std::ostringstream os;
    os << normalize_for_cache(text) << '\0';
    for (const auto& a : cfg.extra_args) os << a << '\x1f';
    os << '\0' << cfg.filter_symbol.value_or("") << '\0' << cfg.timeout_s << '\0' << cfg.executable;
    return sha256_hex(os.str());
}

CachedVerifier::CachedVerifier(Verifier& inner, std::filesystem::path cache_file)
    : inner_(inner), file_(std::move(cache_file)) {
    std::ifstream in(file_);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        try {
            auto j = nlohmann::json::parse(line);
            entries_[j.at("key").get<std::string>()] = outcome_from_json(j.at("outcome"));
        } catch (const std::exception&) {
            ++corrupt_;
        }
    }
}

VerificationOutcome CachedVerifier::verify(const std::string& text, const VerifierConfig& cfg) {
    std::string key = cache_key(text, cfg);
    {
        std::lock_guard<std::mutex> lock(mutex_);
        auto it = entries_.find(key);
        if (it != entries_.end()) {
            ++hits_;
            VerificationOutcome o = it->second;
            o.cached = true;
            return o;
        }
        ++misses_;
    }
    VerificationOutcome o = inner_.verify(text, cfg);
    if (o.status == VerifyStatus::ToolError) return o;
    std::lock_guard<std::mutex> lock(mutex_);
    entries_[key] = o;
    if (!file_.empty()) {
        if (file_.has_parent_path()) std::filesystem::create_directories(file_.parent_path());
        std::ofstream out(file_, std::ios::app);
        out << nlohmann::json{{"key", key}, {"outcome", to_json(o)}}.dump() << '\n';
    }
    return o;
}

// ---- classification -------------------------------------------------------------------

std::string_view to_string(ErrorClass c) {
    switch (c) {
        case ErrorClass::Success: return "Success";
        case ErrorClass::Syntax: return "Syntax";
        case ErrorClass::Timeout: return "Timeout";
        case ErrorClass::Incomplete: return "Incomplete";
        case ErrorClass::PotentiallyIncorrect: return "PotentiallyIncorrect";
        case ErrorClass::ToolError: return "ToolError";
    }
    return "ToolError";
}

ErrorClass error_class_from_string(std::string_view s) {
    for (auto c : {ErrorClass::Success, ErrorClass::Syntax, ErrorClass::Timeout, ErrorClass::Incomplete,
                   ErrorClass::PotentiallyIncorrect, ErrorClass::ToolError}) {
        if (to_string(c) == s) return c;
    }
    throw std::invalid_argument("unknown error class: " + std::string(s));
}

Classification classify_outcome(const VerificationOutcome& outcome, const SourceFile& candidate,
                                const SourceFile* manual, const VerifyFn& verify_fn) {
    Classification c;
    switch (outcome.status) {
        case VerifyStatus::Success: c.error_class = ErrorClass::Success; return c;
        case VerifyStatus::SyntaxError: c.error_class = ErrorClass::Syntax; return c;
        case VerifyStatus::ToolError: c.error_class = ErrorClass::ToolError; return c;
        default: break;
    }
    if (manual && verify_fn) {
        try {
            std::string merged = merge_with_manual(candidate, *manual);
            if (verify_fn(merged).status == VerifyStatus::Success) {
                c.error_class = ErrorClass::Incomplete;
                return c;
            }
        } catch (const SkeletonMismatch&) {
            c.skeleton_mismatch = true;
            c.error_class = ErrorClass::PotentiallyIncorrect;
            return c;
        }
    }
    c.error_class = outcome.status == VerifyStatus::Timeout ? ErrorClass::Timeout : ErrorClass::PotentiallyIncorrect;
    return c;
}

}  // namespace specforge

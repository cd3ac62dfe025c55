#include "specforge/assistant_service.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>

#include <arpa/inet.h>
#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

namespace specforge {

using nlohmann::json;

std::string_view to_string(JobKind k) {
    switch (k) {
        case JobKind::Generate: return "generate";
        case JobKind::Repair: return "repair";
        case JobKind::Minimize: return "minimize";
    }
    return "generate";
}

std::string_view to_string(JobState s) {
    switch (s) {
        case JobState::Queued: return "queued";
        case JobState::Running: return "running";
        case JobState::Done: return "done";
        case JobState::Failed: return "failed";
        case JobState::Cancelled: return "cancelled";
    }
    return "failed";
}

JobKind job_kind_from_string(std::string_view s) {
    if (s == "generate") return JobKind::Generate;
    if (s == "repair") return JobKind::Repair;
    if (s == "minimize") return JobKind::Minimize;
    throw BadRequest("unknown job kind '" + std::string(s) + "'");
}

namespace {

JobState job_state_from_string(std::string_view s) {
    for (auto st : {JobState::Queued, JobState::Running, JobState::Done, JobState::Failed, JobState::Cancelled}) {
        if (to_string(st) == s) return st;
    }
    throw std::invalid_argument("unknown job state '" + std::string(s) + "'");
}

}  // namespace

bool is_terminal(JobState s) { return s == JobState::Done || s == JobState::Failed || s == JobState::Cancelled; }

json to_json(const ProgressEvent& e) {
    return {{"ordinal", e.ordinal},
            {"attempt", e.attempt_index},
            {"phase", e.phase},
            {"summary", e.summary},
            {"obligations_verified", e.obligations_verified},
            {"obligations_failed", e.obligations_failed},
            {"state", to_string(e.state)}};
}

ProgressEvent progress_event_from_json(const json& j) {
    ProgressEvent e;
    e.ordinal = j.at("ordinal").get<long>();
    e.attempt_index = j.at("attempt").get<int>();
    e.phase = j.at("phase").get<std::string>();
    e.summary = j.at("summary").get<std::string>();
    e.obligations_verified = j.at("obligations_verified").get<int>();
    e.obligations_failed = j.at("obligations_failed").get<int>();
    e.state = job_state_from_string(j.at("state").get<std::string>());
    return e;
}

// ---- best effort ----------------------------------------------------------------

BestEffort best_effort(const std::vector<std::pair<std::string, VerificationOutcome>>& attempts) {
    if (attempts.empty()) throw std::invalid_argument("best_effort needs at least one attempt");
    std::size_t best = 0;
    for (std::size_t i = 1; i < attempts.size(); ++i) {
        const auto& a = attempts[i].second;
        const auto& b = attempts[best].second;
        if (a.obligations_verified != b.obligations_verified) {
            if (a.obligations_verified > b.obligations_verified) best = i;
        } else if (a.error_count() < b.error_count()) {
            best = i;
        }
    }
    const auto& o = attempts[best].second;
    std::ostringstream out;
    out << "attempt " << best + 1 << " verified " << o.obligations_verified << " proof obligations with "
        << o.obligations_failed << " failing and " << o.error_count() << " errors\n";
    out << outcome_message(o);
    return {best, attempts[best].first, out.str()};
}

// ---- selections -----------------------------------------------------------------

namespace {

std::vector<const Declaration*> selected_declarations(const SourceFile& file, const SelectionSpan& sel) {
    std::vector<const Declaration*> out;
    for (const auto& d : file.declarations) {
        if (d.name.empty()) continue;
        if (d.span.start_line <= sel.end_line && sel.start_line <= d.span.end_line) out.push_back(&d);
    }
    return out;
}

void check_selection(const std::string& buffer, const SelectionSpan& sel) {
    SourceFile file = parse(buffer);
    if (sel.start_line < 1 || sel.end_line < sel.start_line || sel.end_line > static_cast<int>(file.lines.size())) {
        throw BadRequest("selection lines " + std::to_string(sel.start_line) + "-" + std::to_string(sel.end_line) +
                         " are outside the buffer");
    }
    if (selected_declarations(file, sel).empty()) throw BadRequest("the selection contains no declaration");
}

}  // namespace

std::string splice_selection(const std::string& buffer, const SelectionSpan& selection, const std::string& candidate) {
    SourceFile buf = parse(buffer);
    SourceFile cand = parse(candidate);
    auto targets = selected_declarations(buf, selection);
    if (targets.empty()) throw BadRequest("the selection contains no declaration");

    std::string out = buffer;
    std::sort(targets.begin(), targets.end(), [](auto* a, auto* b) { return a->span.begin > b->span.begin; });
    for (const Declaration* d : targets) {
        const Declaration* cd = cand.find(d->name);
        if (!cd) continue;
        out.replace(d->span.begin, d->span.end - d->span.begin,
                    cand.text.substr(cd->span.begin, cd->span.end - cd->span.begin));
    }
    for (const auto& cd : cand.declarations) {
        if (cd.name.empty() || buf.find(cd.name)) continue;
        if (!out.empty() && out.back() != '\n') out += '\n';
        out += '\n' + cand.text.substr(cd.span.begin, cd.span.end - cd.span.begin) + '\n';
    }
    return out;
}

// ---- requests -------------------------------------------------------------------

JobRequest job_request_from_json(const json& params) {
    if (!params.is_object()) throw BadRequest("params must be an object");
    JobRequest r;
    try {
        r.kind = job_kind_from_string(params.at("kind").get<std::string>());
        r.program_text = params.value("program_text", std::string());
        if (params.contains("original_text")) r.original_text = params["original_text"].get<std::string>();
        if (params.contains("selection") && !params["selection"].is_null()) {
            const auto& s = params["selection"];
            r.selection = SelectionSpan{s.at("start_line").get<int>(), s.at("end_line").get<int>()};
        }
        if (params.contains("config")) r.config_overrides = params["config"];
    } catch (const json::exception& e) {
        throw BadRequest(std::string("malformed submit parameters: ") + e.what());
    }
    if (r.program_text.empty()) throw BadRequest("program_text is empty");
    if (!r.config_overrides.is_object()) throw BadRequest("config must be an object");
    if (r.kind == JobKind::Minimize) {
        if (!r.original_text) throw BadRequest("minimize needs original_text");
        if (r.selection) throw BadRequest("minimize works on the whole buffer");
    }
    if (r.selection) check_selection(r.program_text, *r.selection);
    return r;
}

json to_json(const JobSnapshot& s) {
    json events = json::array();
    for (const auto& e : s.events) events.push_back(to_json(e));
    json j{{"job", s.id}, {"kind", to_string(s.kind)}, {"state", to_string(s.state)}, {"events", events}};
    if (s.result) j["result"] = *s.result;
    if (s.error) j["error"] = *s.error;
    return j;
}

RunConfig apply_overrides(const ServiceConfig& service, const json& overrides) {
    RunConfig c = service.run;
    c.max_repair_iterations = service.ide_retry_limit;
    c.max_direct_runs = 1 + service.ide_retry_limit;
    if (!overrides.is_object()) throw BadRequest("config must be an object");
    try {
        for (const auto& [key, value] : overrides.items()) {
            if (key == "strategy") {
                try {
                    c.strategy = strategy_from_string(value.get<std::string>());
                } catch (const std::invalid_argument& e) {
                    throw BadRequest(e.what());
                }
            } else if (key == "retry_limit") {
                int n = value.get<int>();
                if (n < 0) throw BadRequest("retry_limit must be nonnegative");
                c.max_repair_iterations = n;
                c.max_direct_runs = 1 + n;
            } else if (key == "multimodel") {
                c.multimodel = value.get<bool>();
            } else if (key == "providers") {
                std::vector<BoundProvider> chosen;
                for (const auto& name : value.get<std::vector<std::string>>()) {
                    auto it = std::find_if(service.run.providers.begin(), service.run.providers.end(),
                                           [&](const BoundProvider& p) { return p.config.name == name; });
                    if (it == service.run.providers.end()) throw BadRequest("unknown provider '" + name + "'");
                    chosen.push_back(*it);
                }
                c.providers = std::move(chosen);
            } else if (key == "minimize_on_success") {
                c.minimize_on_success = value.get<bool>();
            } else if (key == "check_negative_tests") {
                c.check_negative_tests = value.get<bool>();
            } else if (key == "timeout_s") {
                double t = value.get<double>();
                if (!(t > 0)) throw BadRequest("timeout_s must be positive");
                c.verifier.timeout_s = t;
            } else if (key == "minimize_timeout_s") {
                double t = value.get<double>();
                if (!(t > 0)) throw BadRequest("minimize_timeout_s must be positive");
                c.minimize.short_timeout_s = t;
            } else {
                throw BadRequest("unknown configuration key '" + key + "'");
            }
        }
    } catch (const json::exception& e) {
        throw BadRequest(std::string("malformed configuration: ") + e.what());
    }
    try {
        c.validate();
    } catch (const std::invalid_argument& e) {
        throw BadRequest(e.what());
    }
    return c;
}

// ---- jobs -----------------------------------------------------------------------

struct JobManager::Job {
    std::string id;
    JobRequest request;
    RunConfig config;
    JobState state = JobState::Queued;
    std::vector<ProgressEvent> events;
    std::optional<json> result;
    std::optional<std::string> error;
    std::atomic<bool> cancel_flag{false};
    int attempt = 0;
};

JobManager::JobManager(ServiceConfig cfg) : cfg_(std::move(cfg)) {
    if (!cfg_.verifier) throw std::invalid_argument("the service needs a verifier");
    if (cfg_.max_concurrent_jobs < 1) throw std::invalid_argument("max_concurrent_jobs must be positive");
    if (cfg_.ide_retry_limit < 0) throw std::invalid_argument("ide_retry_limit must be nonnegative");
    std::random_device rd;
    std::ostringstream salt;
    salt << std::hex << (rd() & 0xffffffu);
    id_salt_ = salt.str();
    for (int i = 0; i < cfg_.max_concurrent_jobs; ++i) workers_.emplace_back([this] { worker_loop(); });
}

JobManager::~JobManager() {
    {
        std::lock_guard lock(mutex_);
        stopping_ = true;
        for (auto& [id, job] : jobs_) job->cancel_flag = true;
    }
    changed_.notify_all();
    for (auto& t : workers_) t.join();
}

std::string JobManager::submit(JobRequest request) {
    if (request.program_text.empty()) throw BadRequest("program_text is empty");
    if (request.kind == JobKind::Minimize && !request.original_text) throw BadRequest("minimize needs original_text");
    if (request.selection) check_selection(request.program_text, *request.selection);
    auto job = std::make_shared<Job>();
    std::lock_guard lock(mutex_);
    json overrides = default_overrides_;
    overrides.update(request.config_overrides);
    job->config = apply_overrides(cfg_, overrides);
    job->request = std::move(request);
    job->id = "job-" + std::to_string(++next_id_) + "-" + id_salt_;
    jobs_[job->id] = job;
    queue_.push_back(job);
    changed_.notify_all();
    return job->id;
}

std::shared_ptr<JobManager::Job> JobManager::find(const std::string& id) const {
    std::lock_guard lock(mutex_);
    auto it = jobs_.find(id);
    if (it == jobs_.end()) throw UnknownJob(id);
    return it->second;
}

std::pair<std::vector<ProgressEvent>, JobState> JobManager::events(const std::string& id, long since,
                                                                   double wait_s) const {
    auto job = find(id);
    std::unique_lock lock(mutex_);
    auto ready = [&] { return static_cast<long>(job->events.size()) > since || is_terminal(job->state); };
    if (wait_s > 0) changed_.wait_for(lock, std::chrono::duration<double>(std::min(wait_s, 60.0)), ready);
    std::vector<ProgressEvent> out;
    for (const auto& e : job->events) {
        if (e.ordinal > since) out.push_back(e);
    }
    return {out, job->state};
}

JobState JobManager::cancel(const std::string& id) {
    auto job = find(id);
    {
        std::lock_guard lock(mutex_);
        if (!is_terminal(job->state)) {
            job->state = JobState::Cancelled;
            job->cancel_flag = true;
            queue_.erase(std::remove(queue_.begin(), queue_.end(), job), queue_.end());
        }
    }
    changed_.notify_all();
    return state(id);
}

JobState JobManager::state(const std::string& id) const {
    auto job = find(id);
    std::lock_guard lock(mutex_);
    return job->state;
}

JobSnapshot JobManager::snapshot(const std::string& id) const {
    auto job = find(id);
    std::lock_guard lock(mutex_);
    return {job->id, job->request.kind, job->state, job->events, job->result, job->error};
}

JobState JobManager::wait(const std::string& id, double timeout_s) const {
    auto job = find(id);
    std::unique_lock lock(mutex_);
    changed_.wait_for(lock, std::chrono::duration<double>(timeout_s), [&] { return is_terminal(job->state); });
    return job->state;
}

json JobManager::config_json() const {
    std::lock_guard lock(mutex_);
    json providers = json::array();
    for (const auto& p : cfg_.run.providers) providers.push_back(p.config.name);
    return {{"protocol_version", kProtocolVersion},
            {"max_concurrent_jobs", cfg_.max_concurrent_jobs},
            {"ide_retry_limit", cfg_.ide_retry_limit},
            {"strategy", to_string(cfg_.run.strategy)},
            {"providers", providers},
            {"timeout_s", cfg_.run.verifier.timeout_s},
            {"defaults", default_overrides_}};
}

void JobManager::update_config(const json& patch) {
    if (!patch.is_object()) throw BadRequest("config must be an object");
    std::lock_guard lock(mutex_);
    ServiceConfig next = cfg_;
    json defaults = default_overrides_;
    try {
        for (const auto& [key, value] : patch.items()) {
            if (key == "ide_retry_limit") {
                int n = value.get<int>();
                if (n < 0) throw BadRequest("ide_retry_limit must be nonnegative");
                next.ide_retry_limit = n;
            } else if (key == "defaults") {
                if (!value.is_object()) throw BadRequest("defaults must be an object");
                defaults = value;
            } else {
                throw BadRequest("configuration key '" + key + "' cannot be changed");
            }
        }
    } catch (const json::exception& e) {
        throw BadRequest(std::string("malformed configuration: ") + e.what());
    }
    apply_overrides(next, defaults);
    cfg_.ide_retry_limit = next.ide_retry_limit;
    default_overrides_ = std::move(defaults);
}

void JobManager::worker_loop() {
    for (;;) {
        std::shared_ptr<Job> job;
        {
            std::unique_lock lock(mutex_);
            changed_.wait(lock, [&] { return stopping_ || !queue_.empty(); });
            if (stopping_) return;
            job = queue_.front();
            queue_.pop_front();
            if (job->state != JobState::Queued) continue;
            job->state = JobState::Running;
        }
        changed_.notify_all();
        run(job);
    }
}

void JobManager::emit(const std::shared_ptr<Job>& job, ProgressEvent e) {
    {
        std::lock_guard lock(mutex_);
        if (job->state != JobState::Running) return;
        e.ordinal = static_cast<long>(job->events.size()) + 1;
        e.state = JobState::Running;
        e.obligations_verified = std::max(0, e.obligations_verified);
        e.obligations_failed = std::max(0, e.obligations_failed);
        job->events.push_back(std::move(e));
    }
    changed_.notify_all();
}

void JobManager::finish(const std::shared_ptr<Job>& job, JobState state, std::optional<json> result,
                        std::optional<std::string> error) {
    {
        std::lock_guard lock(mutex_);
        if (job->state != JobState::Running) return;
        ProgressEvent e;
        e.ordinal = static_cast<long>(job->events.size()) + 1;
        e.attempt_index = job->attempt;
        e.phase = job->events.empty() ? "verifying" : job->events.back().phase;
        if (result) {
            e.obligations_verified = result->value("obligations_verified", 0);
            e.obligations_failed = result->value("obligations_failed", 0);
        }
        e.summary = state == JobState::Done
                        ? (result && result->value("verified", false) ? "finished: verified" : "finished: not verified")
                        : "failed: " + error.value_or("unknown error");
        e.state = state;
        job->events.push_back(e);
        job->state = state;
        job->result = std::move(result);
        job->error = std::move(error);
        if (cfg_.artifacts_dir) {
            std::error_code ec;
            std::filesystem::create_directories(*cfg_.artifacts_dir, ec);
            std::ofstream out(*cfg_.artifacts_dir / (job->id + ".json"));
            out << to_json(JobSnapshot{job->id, job->request.kind, job->state, job->events, job->result, job->error}).dump(2)
                << '\n';
        }
    }
    changed_.notify_all();
}

void JobManager::run(const std::shared_ptr<Job>& job) {
    try {
        json result = job->request.kind == JobKind::Minimize ? run_minimize(job, job->config) : run_solve(job, job->config);
        finish(job, JobState::Done, std::move(result), std::nullopt);
    } catch (const std::exception& e) {
        finish(job, JobState::Failed, std::nullopt, e.what());
    }
}

namespace {

std::string attempt_summary(const AttemptRecord& a) {
    std::string s = "attempt " + std::to_string(a.attempt_index) + ": " + std::string(to_string(a.error_class));
    if (a.verify_status) {
        s += ", " + std::to_string(a.obligations_verified) + " obligations verified, " +
             std::to_string(a.obligations_failed) + " failed";
    } else if (a.cheating_violations > 0) {
        s += ", rejected by the annotation rules";
    }
    return s;
}

std::string removal_summary(const RemovalRecord& r) {
    std::string s = "removed " + r.category;
    if (!r.owner.empty()) s += " in " + r.owner;
    if (!r.removed_declarations.empty()) {
        s += " (";
        for (std::size_t i = 0; i < r.removed_declarations.size(); ++i) s += (i ? ", " : "") + r.removed_declarations[i];
        s += ")";
    }
    return s + ", round " + std::to_string(r.round);
}

VerificationOutcome outcome_of(const AttemptRecord& a) {
    VerificationOutcome o;
    o.status = a.verify_status.value_or(VerifyStatus::ToolError);
    o.diagnostics = a.diagnostics;
    o.obligations_verified = a.obligations_verified;
    o.obligations_failed = a.obligations_failed;
    o.elapsed_s = a.verify_elapsed_s;
    return o;
}

}  // namespace

json JobManager::run_solve(const std::shared_ptr<Job>& job, const RunConfig& base) {
    const std::string& buffer = job->request.program_text;
    RunConfig cfg = base;
    SolveContext ctx;
    ctx.verifier = cfg_.verifier;
    ctx.cancelled = [job] { return job->cancel_flag.load(); };
    ctx.on_phase = [this, job](int attempt, std::string_view phase) {
        job->attempt = attempt;
        emit(job, {0, attempt, std::string(phase), "attempt " + std::to_string(attempt) + ": " + std::string(phase), 0, 0});
    };
    ctx.on_attempt = [this, job](const AttemptRecord& a) {
        emit(job, {0, a.attempt_index, "verifying", attempt_summary(a), a.obligations_verified, a.obligations_failed});
    };
    cfg.minimize.cancelled = ctx.cancelled;
    cfg.minimize.on_removal = [this, job](const RemovalRecord& r) {
        emit(job, {0, job->attempt, "minimizing", removal_summary(r), 0, 0});
    };
    if (job->request.selection) {
        SelectionSpan sel = *job->request.selection;
        ctx.postprocess = [buffer, sel](const std::string& text) { return splice_selection(buffer, sel, text); };
    }

    json result{{"kind", to_string(job->request.kind)}};
    if (job->request.kind == JobKind::Repair) {
        emit(job, {0, 0, "verifying", "checking the buffer", 0, 0});
        VerificationOutcome o = cfg_.verifier->verify(buffer, cfg.verifier);
        if (o.status == VerifyStatus::ToolError) throw std::runtime_error("the verifier failed: " + outcome_message(o));
        if (o.status == VerifyStatus::Success) {
            result.update({{"verified", true},
                           {"program", buffer},
                           {"obligations_verified", o.obligations_verified},
                           {"obligations_failed", 0},
                           {"attempts", json::array()},
                           {"summary", "the buffer already verifies"}});
            return result;
        }
        ctx.initial_errors = outcome_message(o, cfg.diagnostic_budget);
    }

    SolveResult r = solve(buffer, cfg, ctx);
    json solved = to_json(r);
    result["attempts"] = solved["attempts"];
    result["negative_retries"] = solved["negative_retries"];
    result["total_cost"] = r.total_cost();
    result["verified"] = r.solved;
    if (r.solved) {
        const AttemptRecord& last = r.attempts.back();
        result["program"] = r.minimized_program.value_or(*r.final_program);
        result["obligations_verified"] = last.obligations_verified;
        result["obligations_failed"] = 0;
        if (r.negative_tests_passed) result["negative_tests_passed"] = *r.negative_tests_passed;
        result["negative_failures"] = solved["negative_failures"];
        if (r.minimization) {
            json removals = json::array();
            for (const auto& rm : r.minimization->removals) removals.push_back(to_json(rm));
            result["removals"] = removals;
        }
        return result;
    }

    std::vector<std::pair<std::string, VerificationOutcome>> verified;
    std::vector<int> indices;
    for (const auto& a : r.attempts) {
        if (!a.verify_status || a.program.empty()) continue;
        verified.emplace_back(a.program, outcome_of(a));
        indices.push_back(a.attempt_index);
    }
    if (verified.empty()) {
        result["program"] = buffer;
        result["obligations_verified"] = 0;
        result["obligations_failed"] = 0;
        result["best_effort"] = {{"attempt", 0}, {"explanation", "no attempt produced a program that could be verified\n"}};
        return result;
    }
    BestEffort best = best_effort(verified);
    result["program"] = best.program;
    result["obligations_verified"] = verified[best.index].second.obligations_verified;
    result["obligations_failed"] = verified[best.index].second.obligations_failed;
    json diags = json::array();
    for (const auto& d : verified[best.index].second.diagnostics) diags.push_back(format_diagnostic(d));
    result["best_effort"] = {{"attempt", indices[best.index]}, {"explanation", best.explanation}, {"diagnostics", diags}};
    return result;
}

json JobManager::run_minimize(const std::shared_ptr<Job>& job, const RunConfig& cfg) {
    MinimizeOptions opts = cfg.minimize;
    opts.verifier = cfg.verifier;
    opts.cancelled = [job] { return job->cancel_flag.load(); };
    opts.on_removal = [this, job](const RemovalRecord& r) { emit(job, {0, 0, "minimizing", removal_summary(r), 0, 0}); };
    emit(job, {0, 0, "minimizing", "checking the annotated program", 0, 0});
    const std::string& original = *job->request.original_text;
    MinimizeResult m = minimize(original, job->request.program_text, *cfg_.verifier, opts);
    if (m.aborted && m.abort_reason == "cancelled") throw std::runtime_error("cancelled");
    json removals = json::array();
    for (const auto& r : m.removals) removals.push_back(to_json(r));
    LocStats before = count_loc(parse(job->request.program_text));
    LocStats after = count_loc(parse(m.text));
    return {{"kind", "minimize"},
            {"verified", !m.aborted},
            {"program", m.text},
            {"removals", removals},
            {"rounds", m.rounds},
            {"verifier_calls", m.verifier_calls},
            {"aborted", m.aborted},
            {"abort_reason", m.abort_reason},
            {"loc_before", before.L + before.A},
            {"loc_after", after.L + after.A},
            {"summary", m.removals.empty() ? "nothing to remove" : std::to_string(m.removals.size()) + " removals"}};
}

// ---- wire protocol --------------------------------------------------------------

json error_response(const json& id, const std::string& code, const std::string& message) {
    return {{"version", kProtocolVersion}, {"id", id}, {"ok", false}, {"error", {{"code", code}, {"message", message}}}};
}

AssistantService::AssistantService(ServiceConfig cfg) : jobs_(std::move(cfg)) {}

namespace {

std::string job_param(const json& params) {
    if (!params.is_object() || !params.contains("job") || !params["job"].is_string()) {
        throw BadRequest("params.job must be a job id");
    }
    return params["job"].get<std::string>();
}

}  // namespace

json AssistantService::handle(const json& request) {
    json id = request.is_object() && request.contains("id") ? request["id"] : json();
    try {
        if (!request.is_object()) throw BadRequest("a request must be a JSON object");
        if (!request.contains("version")) return error_response(id, "bad_request", "the version field is mandatory");
        if (request["version"] != kProtocolVersion) {
            return error_response(id, "unsupported_version",
                                  "protocol version " + request["version"].dump() + " is not supported");
        }
        if (!request.contains("id")) throw BadRequest("the id field is mandatory");
        if (!request.contains("method") || !request["method"].is_string()) throw BadRequest("method must be a string");
        std::string method = request["method"];
        json params = request.value("params", json::object());
        json payload;
        if (method == "submit") {
            std::string job = jobs_.submit(job_request_from_json(params));
            payload = {{"job", job}, {"state", to_string(jobs_.state(job))}};
        } else if (method == "events") {
            std::string job = job_param(params);
            long since = 0;
            double wait_s = 0;
            try {
                since = params.value("since", 0L);
                wait_s = params.value("wait_s", 0.0);
            } catch (const json::exception&) {
                throw BadRequest("since and wait_s must be numbers");
            }
            if (since < 0) throw BadRequest("since must be nonnegative");
            auto [events, state] = jobs_.events(job, since, wait_s);
            json list = json::array();
            for (const auto& e : events) list.push_back(to_json(e));
            payload = {{"job", job}, {"state", to_string(state)}, {"events", list}};
            if (is_terminal(state)) {
                JobSnapshot s = jobs_.snapshot(job);
                if (s.result) payload["result"] = *s.result;
                if (s.error) payload["error"] = *s.error;
            }
        } else if (method == "cancel") {
            std::string job = job_param(params);
            payload = {{"job", job}, {"state", to_string(jobs_.cancel(job))}};
        } else if (method == "config") {
            if (!params.is_object()) throw BadRequest("params must be an object");
            if (!params.empty()) jobs_.update_config(params);
            payload = jobs_.config_json();
        } else {
            return error_response(id, "unknown_method", "unknown method '" + method + "'");
        }
        return {{"version", kProtocolVersion}, {"id", id}, {"ok", true}, {"payload", payload}};
    } catch (const BadRequest& e) {
        return error_response(id, "bad_request", e.what());
    } catch (const UnknownJob& e) {
        return error_response(id, "unknown_job", e.what());
    } catch (const std::exception& e) {
        return error_response(id, "internal", e.what());
    }
}

std::string AssistantService::handle_line(const std::string& line) {
    json request;
    try {
        request = json::parse(line);
    } catch (const json::parse_error& e) {
        return error_response(nullptr, "parse_error", e.what()).dump();
    }
    return handle(request).dump();
}

void AssistantService::serve_stream(std::istream& in, std::ostream& out) {
    std::mutex out_mutex;
    std::vector<std::thread> handlers;
    std::string line;
    while (!stop_ && std::getline(in, line)) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        handlers.emplace_back([this, line, &out, &out_mutex] {
            std::string response = handle_line(line);
            std::lock_guard lock(out_mutex);
            out << response << '\n' << std::flush;
        });
    }
    for (auto& t : handlers) t.join();
}

namespace {

void send_all(int fd, const std::string& data) {
    std::size_t sent = 0;
    while (sent < data.size()) {
        ssize_t n = ::send(fd, data.data() + sent, data.size() - sent, MSG_NOSIGNAL);
        if (n <= 0) return;
        sent += static_cast<std::size_t>(n);
    }
}

}  // namespace

void AssistantService::serve_tcp(int port, const std::function<void(int)>& on_listening) {
    int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd < 0) throw std::runtime_error("cannot create a socket");
    int one = 1;
    ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(static_cast<std::uint16_t>(port));
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    if (::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) < 0 || ::listen(fd, 16) < 0) {
        ::close(fd);
        throw std::runtime_error("cannot listen on 127.0.0.1:" + std::to_string(port));
    }
    socklen_t len = sizeof addr;
    ::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len);
    listen_fd_ = fd;
    if (on_listening) on_listening(ntohs(addr.sin_port));

    std::vector<std::thread> connections;
    while (!stop_) {
        pollfd p{fd, POLLIN, 0};
        if (::poll(&p, 1, 100) <= 0) continue;
        int client = ::accept(fd, nullptr, nullptr);
        if (client < 0) continue;
        connections.emplace_back([this, client] {
            std::mutex out_mutex;
            std::vector<std::thread> handlers;
            std::string buffer;
            char chunk[4096];
            while (!stop_) {
                pollfd cp{client, POLLIN, 0};
                if (::poll(&cp, 1, 100) <= 0) continue;
                ssize_t n = ::recv(client, chunk, sizeof chunk, 0);
                if (n <= 0) break;
                buffer.append(chunk, static_cast<std::size_t>(n));
                for (auto pos = buffer.find('\n'); pos != std::string::npos; pos = buffer.find('\n')) {
                    std::string line = buffer.substr(0, pos);
                    buffer.erase(0, pos + 1);
                    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
                    handlers.emplace_back([this, line, client, &out_mutex] {
                        std::string response = handle_line(line) + "\n";
                        std::lock_guard lock(out_mutex);
                        send_all(client, response);
                    });
                }
            }
            for (auto& t : handlers) t.join();
            ::close(client);
        });
    }
    for (auto& t : connections) t.join();
    ::close(fd);
    listen_fd_ = -1;
}

void AssistantService::stop() { stop_ = true; }

}  // namespace specforge

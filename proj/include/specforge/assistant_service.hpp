#pragma once

#include <atomic>
#include <condition_variable>
#include <deque>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "specforge/repair_loop.hpp"

namespace specforge {

enum class JobKind { Generate, Repair, Minimize };
enum class JobState { Queued, Running, Done, Failed, Cancelled };

std::string_view to_string(JobKind k);
std::string_view to_string(JobState s);
/// Throws BadRequest.
JobKind job_kind_from_string(std::string_view s);
bool is_terminal(JobState s);

class BadRequest : public std::invalid_argument {
public:
    explicit BadRequest(const std::string& what) : std::invalid_argument(what) {}
};

class UnknownJob : public std::out_of_range {
public:
    explicit UnknownJob(const std::string& id) : std::out_of_range("unknown job '" + id + "'"), id(id) {}
    std::string id;
};

struct ProgressEvent {
    long ordinal = 0;  // 1-based, strictly increasing per job
    int attempt_index = 0;
    std::string phase;  // prompting | verifying | minimizing
    std::string summary;
    int obligations_verified = 0;
    int obligations_failed = 0;
    JobState state = JobState::Running;  // job state once the event is applied
};

nlohmann::json to_json(const ProgressEvent& e);
ProgressEvent progress_event_from_json(const nlohmann::json& j);

struct BestEffort {
    std::size_t index = 0;  // into the attempt list
    std::string program;
    std::string explanation;
};

/// Most obligations verified, then fewest error diagnostics, then earliest. Throws
/// std::invalid_argument on an empty list.
BestEffort best_effort(const std::vector<std::pair<std::string, VerificationOutcome>>& attempts);

/// 1-based inclusive line range of the buffer.
struct SelectionSpan {
    int start_line = 0;
    int end_line = 0;
};

/// Replaces the buffer's declarations that overlap the selection with the candidate's
/// declarations of the same name and appends declarations the buffer lacks.
std::string splice_selection(const std::string& buffer, const SelectionSpan& selection, const std::string& candidate);

struct JobRequest {
    JobKind kind = JobKind::Generate;
    std::string program_text;
    std::optional<std::string> original_text;  // minimize: the program before annotation
    std::optional<SelectionSpan> selection;
    nlohmann::json config_overrides = nlohmann::json::object();
};

/// Throws BadRequest.
JobRequest job_request_from_json(const nlohmann::json& params);

struct JobSnapshot {
    std::string id;
    JobKind kind = JobKind::Generate;
    JobState state = JobState::Queued;
    std::vector<ProgressEvent> events;
    std::optional<nlohmann::json> result;
    std::optional<std::string> error;
};

nlohmann::json to_json(const JobSnapshot& s);

struct ServiceConfig {
    RunConfig run;                 // defaults for every job
    Verifier* verifier = nullptr;
    int max_concurrent_jobs = 2;
    int ide_retry_limit = 3;       // repair iterations per job
    std::optional<std::filesystem::path> artifacts_dir;  // <dir>/<job id>.json on completion
};

/// Applies {strategy, retry_limit, multimodel, providers, minimize_on_success,
/// check_negative_tests, timeout_s}. Throws BadRequest.
RunConfig apply_overrides(const ServiceConfig& service, const nlohmann::json& overrides);

/// Queue of jobs run by a fixed pool of workers.
class JobManager {
public:
    explicit JobManager(ServiceConfig cfg);
    ~JobManager();
    JobManager(const JobManager&) = delete;
    JobManager& operator=(const JobManager&) = delete;

    /// Throws BadRequest.
    std::string submit(JobRequest request);
    /// Events with ordinal > since. A positive wait blocks until one arrives or the job ends.
    std::pair<std::vector<ProgressEvent>, JobState> events(const std::string& id, long since, double wait_s = 0) const;
    /// Queued and running jobs become cancelled; finished jobs keep their state.
    JobState cancel(const std::string& id);
    JobState state(const std::string& id) const;
    JobSnapshot snapshot(const std::string& id) const;
    /// Blocks until the job is finished or the timeout passes.
    JobState wait(const std::string& id, double timeout_s = 600) const;

    nlohmann::json config_json() const;
    /// Updates ide_retry_limit and the default overrides for later jobs. Throws BadRequest.
    void update_config(const nlohmann::json& patch);

private:
    struct Job;
    std::shared_ptr<Job> find(const std::string& id) const;
    void worker_loop();
    void run(const std::shared_ptr<Job>& job);
    nlohmann::json run_solve(const std::shared_ptr<Job>& job, const RunConfig& cfg);
    nlohmann::json run_minimize(const std::shared_ptr<Job>& job, const RunConfig& cfg);
    void emit(const std::shared_ptr<Job>& job, ProgressEvent e);
    void finish(const std::shared_ptr<Job>& job, JobState state, std::optional<nlohmann::json> result,
                std::optional<std::string> error);

    ServiceConfig cfg_;
    nlohmann::json default_overrides_ = nlohmann::json::object();
    mutable std::mutex mutex_;
    mutable std::condition_variable changed_;
    std::map<std::string, std::shared_ptr<Job>> jobs_;
    std::deque<std::shared_ptr<Job>> queue_;
    std::vector<std::thread> workers_;
    bool stopping_ = false;
    long next_id_ = 0;
    std::string id_salt_;
};

inline constexpr int kProtocolVersion = 1;

/// Newline-delimited JSON front end. Requests: {version, id, method, params}; responses:
/// {version, id, ok, payload} or {version, id, ok: false, error: {code, message}}.
class AssistantService {
public:
    explicit AssistantService(ServiceConfig cfg);

    nlohmann::json handle(const nlohmann::json& request);
    /// Parses one line; malformed input yields a parse_error response.
    std::string handle_line(const std::string& line);

    /// Answers every request in its own thread until EOF; responses are written whole
    /// lines at a time, in completion order.
    void serve_stream(std::istream& in, std::ostream& out);
    /// Listens on 127.0.0.1:port (0 picks a free port) until stop() is called.
    void serve_tcp(int port, const std::function<void(int bound_port)>& on_listening = {});
    void stop();

    JobManager& jobs() { return jobs_; }

private:
    JobManager jobs_;
    std::atomic<bool> stop_{false};
    std::atomic<int> listen_fd_{-1};
};

nlohmann::json error_response(const nlohmann::json& id, const std::string& code, const std::string& message);

}  // namespace specforge

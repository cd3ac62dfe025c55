#include "specforge/process.hpp"

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstring>

namespace specforge {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

}  // namespace

ProcessResult run_process(const std::vector<std::string>& argv, double timeout_s, double grace_s) {
    ProcessResult result;
    if (argv.empty()) {
        result.spawn_failed = true;
        result.spawn_error = "empty command";
        return result;
    }
    int out_pipe[2];
    int err_pipe[2];  // carries errno if exec fails
    if (pipe2(out_pipe, O_CLOEXEC) != 0 || pipe2(err_pipe, O_CLOEXEC) != 0) {
        result.spawn_failed = true;
        result.spawn_error = std::strerror(errno);
        return result;
    }
    std::vector<char*> args;
    for (const auto& a : argv) args.push_back(const_cast<char*>(a.c_str()));
    args.push_back(nullptr);

    auto t0 = Clock::now();
    pid_t pid = fork();
    if (pid < 0) {
        result.spawn_failed = true;
        result.spawn_error = std::strerror(errno);
        close(out_pipe[0]);
        close(out_pipe[1]);
        close(err_pipe[0]);
        close(err_pipe[1]);
        return result;
    }
    if (pid == 0) {
        setpgid(0, 0);
        dup2(out_pipe[1], STDOUT_FILENO);
        dup2(out_pipe[1], STDERR_FILENO);
        int devnull = open("/dev/null", O_RDONLY);
        if (devnull >= 0) dup2(devnull, STDIN_FILENO);
        execvp(args[0], args.data());
        int e = errno;
        ssize_t ignored = write(err_pipe[1], &e, sizeof e);
        (void)ignored;
        _exit(127);
    }
    setpgid(pid, pid);
    close(out_pipe[1]);
    close(err_pipe[1]);

    int exec_errno = 0;
    if (read(err_pipe[0], &exec_errno, sizeof exec_errno) == static_cast<ssize_t>(sizeof exec_errno)) {
        result.spawn_failed = true;
        result.spawn_error = std::string("cannot execute ") + argv[0] + ": " + std::strerror(exec_errno);
    }
    close(err_pipe[0]);

    bool term_sent = false, kill_sent = false;
    Clock::time_point term_time;
    char buf[4096];
    bool open_out = true;
    while (open_out) {
        double elapsed = seconds_since(t0);
        if (!term_sent && elapsed >= timeout_s) {
            kill(-pid, SIGTERM);
            term_sent = true;
            term_time = Clock::now();
            result.timed_out = true;
        }
        if (term_sent && !kill_sent && seconds_since(term_time) >= grace_s) {
            kill(-pid, SIGKILL);
            kill_sent = true;
        }
        if (kill_sent && seconds_since(term_time) >= grace_s + 1.0) break;  // descendants kept the pipe open
        pollfd pfd{out_pipe[0], POLLIN, 0};
        int wait_ms = 50;
        if (poll(&pfd, 1, wait_ms) > 0) {
            ssize_t n = read(out_pipe[0], buf, sizeof buf);
            if (n > 0) {
                result.output.append(buf, static_cast<std::size_t>(n));
            } else if (n == 0 || (n < 0 && errno != EINTR && errno != EAGAIN)) {
                open_out = false;
            }
        }
    }
    close(out_pipe[0]);

    int status = 0;
    for (;;) {
        pid_t r = waitpid(pid, &status, WNOHANG);
        if (r == pid || (r < 0 && errno != EINTR)) break;
        if (!term_sent && seconds_since(t0) >= timeout_s) {
            kill(-pid, SIGTERM);
            term_sent = true;
            term_time = Clock::now();
            result.timed_out = true;
        }
        if (term_sent && !kill_sent && seconds_since(term_time) >= grace_s) {
            kill(-pid, SIGKILL);
            kill_sent = true;
        }
        usleep(10000);
    }
    if (WIFEXITED(status)) result.exit_code = WEXITSTATUS(status);
    if (WIFSIGNALED(status)) result.signal = WTERMSIG(status);
    result.elapsed_s = seconds_since(t0);
    return result;
}

}  // namespace specforge

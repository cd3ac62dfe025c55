#pragma once

#include <string>
#include <vector>

namespace specforge {

struct ProcessResult {
    std::string output;       // stdout and stderr, interleaved
    int exit_code = -1;       // valid when exited normally
    int signal = 0;           // terminating signal, 0 if none
    bool timed_out = false;   // killed by the timeout
    bool spawn_failed = false;
    std::string spawn_error;
    double elapsed_s = 0;
};

/// Runs argv[0] (PATH lookup) in its own process group. After timeout_s the group gets
/// SIGTERM, and SIGKILL grace_s later.
ProcessResult run_process(const std::vector<std::string>& argv, double timeout_s, double grace_s = 2.0);

}  // namespace specforge

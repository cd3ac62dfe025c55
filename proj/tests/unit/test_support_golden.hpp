#pragma once

#include <cstdlib>
#include <fstream>
#include <string>

#include "test_support.hpp"

namespace testing_support {

/// Compares against a committed golden file; SPECFORGE_UPDATE_GOLDEN=1 rewrites it.
inline std::string golden(const std::string& rel, const std::string& actual) {
    if (const char* u = std::getenv("SPECFORGE_UPDATE_GOLDEN"); u && std::string(u) == "1") {
        std::ofstream(source_path(rel), std::ios::binary) << actual;
        return actual;
    }
    return read_file(rel);
}

}  // namespace testing_support

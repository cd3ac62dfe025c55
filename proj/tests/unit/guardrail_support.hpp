#pragma once

#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "specforge/strip_merge.hpp"
#include "test_support.hpp"

namespace testing_support {

struct GuardrailCase {
    std::string id;
    std::string original;   // stripped
    std::string candidate_path;
    std::string candidate;
    std::set<std::string> expected;  // violation kinds; empty for clean files
};

inline std::vector<GuardrailCase> guardrail_cases() {
    auto manifest = nlohmann::json::parse(read_file("corpus/guardrail/manifest.json"));
    std::vector<GuardrailCase> out;
    for (const auto& c : manifest.at("cases")) {
        GuardrailCase g;
        g.id = c.at("id");
        g.original = specforge::strip_annotations(read_file("corpus/guardrail/" + c.at("original").get<std::string>()));
        g.candidate_path = "corpus/guardrail/" + c.at("candidate").get<std::string>();
        g.candidate = read_file(g.candidate_path);
        for (const auto& k : c.at("expected")) g.expected.insert(k.get<std::string>());
        out.push_back(std::move(g));
    }
    return out;
}

/// Every .dfy file under corpus/ and the test fixtures, relative to the source tree.
inline std::vector<std::string> all_corpus_files() {
    std::vector<std::string> out;
    for (const char* dir : {"corpus", "tests/fixtures"}) {
        for (const auto& e : std::filesystem::recursive_directory_iterator(source_path(dir))) {
            if (e.path().extension() != ".dfy") continue;
            out.push_back(std::filesystem::relative(e.path(), source_path("")).generic_string());
        }
    }
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace testing_support

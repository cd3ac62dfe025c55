#pragma once

#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "specforge/source_model.hpp"

namespace specforge {

class NoCodeBlock : public std::runtime_error {
public:
    NoCodeBlock() : std::runtime_error("model response contains no Dafny code block") {}
};

class SkeletonMismatch : public std::runtime_error {
public:
    explicit SkeletonMismatch(const std::string& declaration)
        : std::runtime_error("executable code differs in declaration '" + declaration + "'"),
          declaration(declaration) {}
    std::string declaration;
};

class NoSuchMarker : public std::runtime_error {
public:
    explicit NoSuchMarker(int index)
        : std::runtime_error("no negative-test marker with index " + std::to_string(index)) {}
};

struct Violation {
    enum class Kind { Assume, DecreasesStar, RemovedTestAssertion, AlteredCode };
    Kind kind;
    int line = 0;        // in the candidate for Assume/DecreasesStar, else in the original
    std::string detail;  // offending text
};

std::string_view to_string(Violation::Kind kind);

struct CheatingOptions {
    /// Paths (SourceFile::path) in which "decreases *" is accepted.
    std::vector<std::string> decreases_star_whitelist;
};

/// Removes specification and proof annotations, keeping test oracles, negative-test
/// comment lines and other comments.
std::string strip_annotations(const SourceFile& file);
std::string strip_annotations(const std::string& text);

/// Program text between BEGIN DAFNY / END DAFNY, or inside a fenced block.
std::string extract_code_block(std::string_view llm_output);

/// Moves loop invariants written inside or after a loop body up into the loop header.
std::string relocate_invariants(const std::string& text);

std::vector<Violation> detect_cheating(const SourceFile& stripped_original, const SourceFile& candidate,
                                       const CheatingOptions& options = {});

/// Candidate text plus the manual solution's clauses and missing helper declarations.
std::string merge_with_manual(const SourceFile& candidate, const SourceFile& manual);

/// Number of "//@invalid" negative-test lines.
int count_negative_tests(const std::string& text);

/// Uncomments the marker_index-th (1-based) negative-test line.
std::string activate_negative_test(const std::string& text, int marker_index);

}  // namespace specforge

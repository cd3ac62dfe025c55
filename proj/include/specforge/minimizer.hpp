#pragma once

#include <functional>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "specforge/source_model.hpp"
#include "specforge/verifier.hpp"

namespace specforge {

class OriginalNotContained : public std::runtime_error {
public:
    OriginalNotContained(int original_line, const std::string& text)
        : std::runtime_error("original line " + std::to_string(original_line) + " is missing from the extended program: " + text),
          original_line(original_line) {}
    int original_line;
};

class ExtendedNotVerified : public std::runtime_error {
public:
    ExtendedNotVerified() : std::runtime_error("the extended program does not verify") {}
};

/// Comparison form of every line: comments and "{:...}" attributes removed, whitespace
/// collapsed. Lines that become empty take no part in alignment.
std::vector<std::string> normalized_lines(const std::string& text);

struct LineRun {
    int first = 0;  // 0-based extended line indices, inclusive
    int last = 0;
};

struct DeltaAlignment {
    /// One entry per extended line: (original line or -1, extended line).
    std::vector<std::pair<int, int>> pairs;
    /// Maximal runs of unmatched extended lines that contain code.
    std::vector<LineRun> inserted_runs;
};

/// Throws OriginalNotContained.
DeltaAlignment compute_delta(const std::string& original_text, const std::string& extended_text);

/// True if the original's normalized lines form a subsequence of the candidate's.
bool contains_original(const std::vector<std::string>& original_norm, const std::string& text);

enum class CandidateCategory { Statement, BlockPart, StatementGroup, LoopClause, DeclClause };
std::string_view to_string(CandidateCategory c);  // a-statement, b-block-part, ...

struct CandidateSegment {
    CandidateCategory category;
    Span span;                 // the segment itself
    std::string owner_decl;
    int depth = 0;             // statement nesting level
    std::size_t cut_begin = 0; // bytes removed on deletion
    std::size_t cut_end = 0;
    std::optional<std::string> replacement;  // safe substitute for the cut, if any
    bool in_header = false;    // declaration header clause
    bool body_internal = false;

    std::string apply(const std::string& text) const;
};

/// Removal candidates of extended_file whose deletion keeps every original line, in
/// document order with outer segments first.
std::vector<CandidateSegment> extract_candidates(const DeltaAlignment& delta, const SourceFile& extended_file,
                                                 const std::vector<std::string>& original_norm);
std::vector<CandidateSegment> extract_candidates(const std::string& original_text, const SourceFile& extended_file);

struct DependencyGraph {
    std::map<std::string, std::set<std::string>> edges;  // declaration -> referenced declarations
    std::map<std::string, int> ref_count;                // inbound references from other declarations

    std::set<std::string> referrers(const std::string& name) const;
};

DependencyGraph build_dependencies(const SourceFile& file);

/// Removes declarations absent from keep_names that are unreachable from the kept ones.
/// Returns the new text and the removed names.
std::pair<std::string, std::vector<std::string>> remove_unreferenced(const std::string& text,
                                                                     const std::set<std::string>& keep_names);

struct RemovalRecord {
    std::string category;  // candidate category, or "unreferenced-declaration"
    Span span;  // in the text the removal was applied to
    std::string owner;
    int round = 0;
    std::string removed_text;
    std::vector<std::string> removed_declarations;
    int loc_after = 0;  // L + A of the program after the removal
};

struct MinimizeOptions {
    VerifierConfig verifier;          // job configuration; timeout is replaced by short_timeout_s
    double short_timeout_s = 10;
    bool use_filter_symbol = true;
    bool use_eligibility = true;      // skip candidates whose surroundings did not change
    std::optional<double> max_time_factor;  // reject removals that slow verification down this much
    bool check_initial = true;        // verify the extended program before starting
    int max_rounds = 100;
    std::function<void(const RemovalRecord&)> on_removal;
    std::function<bool()> cancelled;  // checked before every verifier call
};


struct MinimizeResult {
    std::string text;
    std::vector<RemovalRecord> removals;
    int rounds = 0;
    int verifier_calls = 0;
    int skipped_ineligible = 0;
    bool aborted = false;  // a tool error stopped the job; text is the last committed version
    std::string abort_reason;
};

nlohmann::json to_json(const RemovalRecord& r);

/// Throws OriginalNotContained, ExtendedNotVerified.
MinimizeResult minimize(const std::string& original_text, const std::string& extended_text, Verifier& verifier,
                        const MinimizeOptions& opts = {});

}  // namespace specforge

#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace specforge {

/// Region of a source file. Lines and columns are 1-based; end_line/end_col name the
/// last byte of the region (inclusive). begin/end are byte offsets, end exclusive.
struct Span {
    int start_line = 0;
    int start_col = 0;
    int end_line = 0;
    int end_col = 0;
    std::size_t begin = 0;
    std::size_t end = 0;

    bool contains(const Span& other) const { return begin <= other.begin && other.end <= end; }
    bool overlaps(const Span& other) const { return begin < other.end && other.begin < end; }
    int line_count() const { return end_line - start_line + 1; }
    bool operator==(const Span&) const = default;
};

enum class DeclKind {
    Method,
    Lemma,
    Function,
    Predicate,
    GhostFunction,
    GhostPredicate,
    Datatype,
    Const,
    Other,
};

enum class ClauseKind {
    Requires,
    Ensures,
    Invariant,
    Decreases,
    Modifies,
    Reads,
    Assert,
    Assume,
    Expect,
    Calc,
    GhostVar,
    Statement,  // commented-out negative test that is not an assert (e.g. a call)
};

std::string_view to_string(DeclKind kind);
std::string_view to_string(ClauseKind kind);

struct Clause {
    ClauseKind kind;
    Span span;
    std::string owner;  // declaration name, or loop id such as "Foo.loop1"
    std::string text;   // raw source text of the span
    bool is_negative_test = false;
    bool is_tagged_helper = false;
};

enum class StmtKind {
    Assert,
    Assume,
    Expect,
    Calc,
    GhostVar,
    Var,
    If,
    While,
    For,
    Forall,
    Match,
    Block,
    Call,
    Assign,
    Return,
    StrayClause,  // a loop or method clause found where a statement was expected
    Other,
};

std::string_view to_string(StmtKind kind);

/// Statement tree of a method or lemma body.
struct Statement {
    StmtKind kind = StmtKind::Other;
    Span span;
    std::string callee;                 // for Call: the invoked name
    std::string loop_id;                // for While/For
    std::vector<Clause> loop_clauses;   // header clauses of a loop
    std::optional<Span> body;           // braces of the (then-)block
    std::optional<Span> else_part;      // from "else" through the end of the statement
    std::optional<Span> by_part;        // "by { ... }" of an assert
    bool is_else_if = false;            // an "if" that directly follows "else"
    std::optional<ClauseKind> stray_kind;
    std::vector<Statement> children;    // nested statements (then, else, loop bodies)
};

struct Declaration {
    DeclKind kind = DeclKind::Other;
    std::string name;
    std::string keyword;  // leading declaration keyword, e.g. "method", "lemma"
    bool is_ghost = false;
    std::vector<std::string> attributes;
    Span span;               // whole declaration
    Span header_span;        // signature plus specification clauses
    std::optional<Span> body_span;
    Span signature_span;     // header without its clauses
    std::vector<Clause> clauses;      // all clauses, document order
    std::vector<Statement> body;      // statements (methods, lemmas, constructors)
    bool is_test = false;

    bool is_lemma() const { return kind == DeclKind::Lemma; }
    /// Ghost declarations and lemmas are specification-only.
    bool is_specification_only() const {
        return is_ghost || kind == DeclKind::Lemma || kind == DeclKind::GhostFunction ||
               kind == DeclKind::GhostPredicate;
    }
    bool has_statement_body() const {
        return kind == DeclKind::Method || kind == DeclKind::Lemma;
    }
};

struct SourceFile {
    std::string path;
    std::string text;
    std::vector<std::string> lines;   // raw lines without '\n'
    std::vector<Declaration> declarations;
    std::vector<Span> free_comments;  // comments outside every declaration
    std::vector<std::string> warnings;

    /// Byte offset of the first character of a 1-based line.
    std::size_t line_offset(int line) const;
    const Declaration* find(std::string_view name) const;
};

struct LocStats {
    int L = 0;  // code lines, excluding blanks, comments and annotations
    int A = 0;  // annotation lines
    int H = 0;  // proof-helper annotation lines (subset of A)

    LocStats& operator+=(const LocStats& o) {
        L += o.L;
        A += o.A;
        H += o.H;
        return *this;
    }
    bool operator==(const LocStats&) const = default;
};

/// Best-effort segmentation of Dafny source; never throws.
SourceFile parse(std::string text, std::string path = {});

/// Annotation-aware line accounting over the whole file.
LocStats count_loc(const SourceFile& file);

/// Same accounting restricted to the 1-based inclusive line range.
LocStats count_loc_lines(const SourceFile& file, int first_line, int last_line);

/// Untagged assert clauses inside test methods: the static test oracles.
std::vector<Clause> test_oracle_asserts(const SourceFile& file);

/// Flat, document-ordered view of every statement in a declaration's body.
std::vector<const Statement*> flatten(const std::vector<Statement>& stmts);

/// A piece of the file: either a declaration or the text between declarations.
struct Segment {
    std::size_t begin = 0;
    std::size_t end = 0;
    int declaration = -1;  // index into declarations, -1 for gaps
};

/// Partition of the text into gaps and declarations, in order.
std::vector<Segment> segments(const SourceFile& file);
std::string reconstruct(const SourceFile& file);

/// Whitespace-collapsed text with "{:...}" attributes and comments removed.
std::string normalize_code(std::string_view text);

/// True if a physical line carries a trailing "// helper" style tag.
bool line_has_helper_tag(std::string_view line);

/// Matches a commented-out negative test line; returns the inner statement text.
std::optional<std::string> negative_test_statement(std::string_view line);

}  // namespace specforge

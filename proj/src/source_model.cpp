#include "specforge/source_model.hpp"

#include <algorithm>
#include <regex>
#include <unordered_set>

#include "specforge/lexer.hpp"

namespace specforge {

std::string_view to_string(DeclKind kind) {
    switch (kind) {
        case DeclKind::Method: return "method";
        case DeclKind::Lemma: return "lemma";
        case DeclKind::Function: return "function";
        case DeclKind::Predicate: return "predicate";
        case DeclKind::GhostFunction: return "ghost-function";
        case DeclKind::GhostPredicate: return "ghost-predicate";
        case DeclKind::Datatype: return "datatype";
        case DeclKind::Const: return "const";
        case DeclKind::Other: return "other";
    }
    return "other";
}

std::string_view to_string(ClauseKind kind) {
    switch (kind) {
        case ClauseKind::Requires: return "requires";
        case ClauseKind::Ensures: return "ensures";
        case ClauseKind::Invariant: return "invariant";
        case ClauseKind::Decreases: return "decreases";
        case ClauseKind::Modifies: return "modifies";
        case ClauseKind::Reads: return "reads";
        case ClauseKind::Assert: return "assert";
        case ClauseKind::Assume: return "assume";
        case ClauseKind::Expect: return "expect";
        case ClauseKind::Calc: return "calc";
        case ClauseKind::GhostVar: return "ghost-var";
        case ClauseKind::Statement: return "statement";
    }
    return "statement";
}

std::string_view to_string(StmtKind kind) {
    switch (kind) {
        case StmtKind::Assert: return "assert";
        case StmtKind::Assume: return "assume";
        case StmtKind::Expect: return "expect";
        case StmtKind::Calc: return "calc";
        case StmtKind::GhostVar: return "ghost-var";
        case StmtKind::Var: return "var";
        case StmtKind::If: return "if";
        case StmtKind::While: return "while";
        case StmtKind::For: return "for";
        case StmtKind::Forall: return "forall";
        case StmtKind::Match: return "match";
        case StmtKind::Block: return "block";
        case StmtKind::Call: return "call";
        case StmtKind::Assign: return "assign";
        case StmtKind::Return: return "return";
        case StmtKind::StrayClause: return "stray-clause";
        case StmtKind::Other: return "other";
    }
    return "other";
}

std::size_t SourceFile::line_offset(int line) const {
    std::size_t off = 0;
    for (int l = 1; l < line && l <= static_cast<int>(lines.size()); ++l) {
        off += lines[l - 1].size() + 1;
    }
    return std::min(off, text.size());
}

const Declaration* SourceFile::find(std::string_view name) const {
    for (const auto& d : declarations) {
        if (d.name == name) return &d;
    }
    return nullptr;
}

namespace {

std::optional<ClauseKind> clause_keyword(std::string_view w) {
    if (w == "requires") return ClauseKind::Requires;
    if (w == "ensures") return ClauseKind::Ensures;
    if (w == "invariant") return ClauseKind::Invariant;
    if (w == "decreases") return ClauseKind::Decreases;
    if (w == "modifies") return ClauseKind::Modifies;
    if (w == "reads") return ClauseKind::Reads;
    return std::nullopt;
}

bool is_modifier(std::string_view w) {
    static const std::unordered_set<std::string_view> kMods = {
        "ghost", "static", "opaque", "abstract", "twostate", "least", "greatest",
        "inductive", "replaceable", "copredicate", "colemma",
    };
    return kMods.count(w) > 0;
}

bool is_decl_keyword(std::string_view w) {
    static const std::unordered_set<std::string_view> kKeys = {
        "method", "constructor", "lemma", "function", "predicate", "datatype", "codatatype",
        "const", "type", "newtype", "class", "trait", "module", "import", "include",
        "iterator", "var", "export",
    };
    return kKeys.count(w) > 0;
}

bool is_container_keyword(std::string_view w) {
    return w == "module" || w == "class" || w == "trait";
}

// Tokens after which a '{' opens a set/map display rather than a body.
bool opens_display_after(const Token& prev) {
    static const std::unordered_set<std::string_view> kOps = {
        ":=", "==", "!=", "<", ">", "<=", ">=", "+", "-", "*", "in", "!", "(", "[", ",", "::",
        ":|", "&&", "||", "==>", "<==", "<==>", "then", "else", "|", "=", ":", "reads",
        "modifies", "return", "#", "iset", "set", "multiset", "map", "imap",
    };
    if (prev.kind != TokenKind::Identifier && prev.kind != TokenKind::Punct) return false;
    return kOps.count(prev.text) > 0;
}

class Parser {
public:
    explicit Parser(SourceFile& file) : file_(file), text_(file.text) {
        all_ = tokenize(text_);
        for (const auto& t : all_) {
            if (!t.is_comment()) toks_.push_back(t);
        }
        line_starts_.push_back(0);
        for (std::size_t i = 0; i < text_.size(); ++i) {
            if (text_[i] == '\n') line_starts_.push_back(i + 1);
        }
    }

    void run() {
        std::size_t i = 0;
        parse_members(i, toks_.size());
        collect_free_comments();
    }

private:
    // ---- positions -------------------------------------------------------

    std::pair<int, int> position(std::size_t offset) const {
        auto it = std::upper_bound(line_starts_.begin(), line_starts_.end(), offset);
        std::size_t line_idx = static_cast<std::size_t>(it - line_starts_.begin()) - 1;
        return {static_cast<int>(line_idx + 1),
                static_cast<int>(offset - line_starts_[line_idx] + 1)};
    }

    Span span_of(std::size_t begin, std::size_t end) const {
        Span s;
        s.begin = begin;
        s.end = end;
        std::tie(s.start_line, s.start_col) = position(begin);
        std::tie(s.end_line, s.end_col) = position(end > begin ? end - 1 : begin);
        return s;
    }

    Span tok_span(std::size_t first, std::size_t last) const {
        return span_of(toks_[first].begin, toks_[last].end);
    }

    std::string slice(const Span& s) const { return text_.substr(s.begin, s.end - s.begin); }

    bool at(std::size_t i, std::string_view s) const { return i < toks_.size() && toks_[i].is(s); }

    // ---- brace helpers ---------------------------------------------------

    // Index of the '}' matching the '{' at open, or npos when unbalanced.
    std::size_t match_brace(std::size_t open, std::size_t limit) const {
        int depth = 0;
        for (std::size_t j = open; j < limit; ++j) {
            if (toks_[j].is("{")) ++depth;
            if (toks_[j].is("}")) {
                --depth;
                if (depth == 0) return j;
            }
        }
        return npos;
    }

    // First body-opening '{' at bracket depth 0 in [from, limit); stops (returning npos)
    // at ';' or an unmatched '}' at depth 0, or at a member keyword when at_member_level.
    std::size_t find_body_brace(std::size_t from, std::size_t limit, bool at_member_level,
                                bool first_brace_is_body = false) const {
        int depth = 0;
        for (std::size_t j = from; j < limit; ++j) {
            const Token& t = toks_[j];
            if (t.is("(") || t.is("[")) {
                ++depth;
            } else if (t.is(")") || t.is("]")) {
                depth = std::max(0, depth - 1);
            } else if (depth == 0 && t.is("{")) {
                bool display = !first_brace_is_body && j > from && opens_display_after(toks_[j - 1]);
                if (display && toks_[j - 1].is("*") && j >= 2 && toks_[j - 2].is("decreases")) {
                    display = false;
                }
                if (!display) return j;
                std::size_t close = match_brace(j, limit);
                if (close == npos) return npos;
                j = close;
            } else if (depth == 0 && (t.is("}") || t.is(";"))) {
                return npos;
            } else if (depth == 0 && at_member_level && j > from && member_start(j)) {
                return npos;
            }
        }
        return npos;
    }

    bool member_start(std::size_t j) const {
        const Token& t = toks_[j];
        if (t.kind != TokenKind::Identifier) return false;
        if (is_decl_keyword(t.text)) return true;
        if (is_modifier(t.text)) {
            // "ghost" also prefixes statements; at member level it starts a declaration.
            return true;
        }
        return false;
    }

    // ---- members ---------------------------------------------------------

    void parse_members(std::size_t& i, std::size_t stop) {
        while (i < stop) {
            std::size_t before = i;
            parse_member(i, stop);
            if (i == before) ++i;
        }
    }

    void parse_member(std::size_t& i, std::size_t stop) {
        const std::size_t start = i;
        if (toks_[i].is("}")) {
            file_.warnings.push_back("unmatched '}' at line " + std::to_string(toks_[i].line));
            ++i;
            return;
        }
        Declaration d;
        std::size_t k = i;
        while (k < stop && (toks_[k].kind == TokenKind::Attribute ||
                            (toks_[k].kind == TokenKind::Identifier && is_modifier(toks_[k].text)))) {
            if (toks_[k].kind == TokenKind::Attribute) d.attributes.emplace_back(toks_[k].text);
            if (toks_[k].is("ghost")) d.is_ghost = true;
            ++k;
        }
        if (k >= stop || toks_[k].kind != TokenKind::Identifier || !is_decl_keyword(toks_[k].text)) {
            // Legacy "copredicate"/"colemma" modifiers act as keywords themselves.
            if (k > start && k <= stop &&
                (toks_[k - 1].is("copredicate") || toks_[k - 1].is("colemma"))) {
                --k;
            } else {
                parse_unknown(i, stop);
                return;
            }
        }
        std::string_view keyword = toks_[k].text;
        d.keyword = std::string(keyword);
        ++k;

        if (is_container_keyword(keyword)) {
            std::size_t open = find_body_brace(k, stop, false, true);
            if (open == npos) {
                parse_unknown(i, stop);
                return;
            }
            std::size_t close = match_brace(open, stop);
            if (close == npos) {
                file_.warnings.push_back("unbalanced braces in " + std::string(keyword) +
                                         " at line " + std::to_string(toks_[start].line));
                close = stop;
            }
            std::size_t inner = open + 1;
            parse_members(inner, std::min(close, stop));
            i = close == stop ? stop : close + 1;
            return;
        }

        bool function_method = false;
        if ((keyword == "function" || keyword == "predicate") && at(k, "method")) {
            function_method = true;
            ++k;
        }
        while (k < stop && toks_[k].kind == TokenKind::Attribute) {
            d.attributes.emplace_back(toks_[k].text);
            ++k;
        }
        if (k < stop && (toks_[k].kind == TokenKind::Identifier || toks_[k].kind == TokenKind::String)) {
            d.name = std::string(toks_[k].text);
            ++k;
        }
        d.kind = classify_kind(keyword, d.is_ghost, function_method);

        // Header extent and body.
        std::size_t open = npos;
        if (keyword != "import" && keyword != "include" && keyword != "export") {
            open = find_body_brace(k, stop, true);
        }
        std::size_t header_last;
        std::size_t last;
        if (open != npos) {
            header_last = open - 1;
            std::size_t close = match_brace(open, stop);
            if (close == npos) {
                file_.warnings.push_back("unbalanced braces in body of '" + d.name +
                                         "' starting at line " + std::to_string(toks_[open].line));
                close = stop - 1;
                d.body_span = span_of(toks_[open].begin, std::max(toks_[close].end, text_end_before(stop)));
            } else {
                d.body_span = tok_span(open, close);
            }
            last = close;
            // function ... { } by method { }
            if (at(last + 1, "by") && at(last + 2, "method") && at(last + 3, "{")) {
                std::size_t close2 = match_brace(last + 3, stop);
                if (close2 != npos) {
                    last = close2;
                    d.body_span = tok_span(open, close2);
                }
            }
        } else {
            // No body: header runs until the next member start or the enclosing '}'.
            std::size_t j = k;
            int depth = 0;
            while (j < stop) {
                const Token& t = toks_[j];
                if (t.is("(") || t.is("[") || t.is("{")) ++depth;
                if (t.is(")") || t.is("]")) depth = std::max(0, depth - 1);
                if (t.is("}")) {
                    if (depth == 0) break;
                    --depth;
                }
                if (depth == 0 && j > k && member_start(j)) break;
                ++j;
            }
            if (j == k) j = k + 1 <= stop ? k : k;
            header_last = j > start ? j - 1 : start;
            if (header_last < k - 1) header_last = k - 1;
            last = header_last;
        }
        if (header_last < start) header_last = start;
        d.header_span = tok_span(start, header_last);
        d.span = d.body_span ? span_of(toks_[start].begin, d.body_span->end) : d.header_span;

        // Specification clauses inside the header.
        std::size_t sig_last = header_last;
        std::vector<std::size_t> clause_starts;
        {
            int depth = 0;
            for (std::size_t j = k; j <= header_last && j < toks_.size(); ++j) {
                const Token& t = toks_[j];
                if (t.is("(") || t.is("[") || t.is("{")) ++depth;
                if (t.is(")") || t.is("]") || t.is("}")) depth = std::max(0, depth - 1);
                if (depth == 0 && t.kind == TokenKind::Identifier && clause_keyword(t.text)) {
                    clause_starts.push_back(j);
                }
            }
        }
        if (!clause_starts.empty()) sig_last = clause_starts.front() - 1;
        d.signature_span = tok_span(start, std::max(sig_last, start));
        for (std::size_t c = 0; c < clause_starts.size(); ++c) {
            std::size_t first = clause_starts[c];
            std::size_t cl_last = c + 1 < clause_starts.size() ? clause_starts[c + 1] - 1 : header_last;
            Clause cl;
            cl.kind = *clause_keyword(toks_[first].text);
            cl.span = tok_span(first, cl_last);
            cl.owner = d.name;
            cl.text = slice(cl.span);
            d.clauses.push_back(std::move(cl));
        }

        if (d.body_span && open != npos &&
            (d.kind == DeclKind::Method || d.kind == DeclKind::Lemma)) {
            std::size_t close = match_brace(open, stop);
            if (close == npos) close = stop;
            decl_name_ = d.name;
            loop_counter_ = 0;
            d.body = parse_block(open + 1, close, "");
        }

        d.is_test = d.name.rfind("Test", 0) == 0 || d.name == "Main" ||
                    std::any_of(d.attributes.begin(), d.attributes.end(), [](const std::string& a) {
                        return a.find(":test") != std::string::npos;
                    });

        collect_statement_clauses(d, d.body, d.name);
        collect_negative_tests(d);
        for (auto& cl : d.clauses) cl.is_tagged_helper = span_has_helper_tag(cl.span);
        std::stable_sort(d.clauses.begin(), d.clauses.end(),
                         [](const Clause& a, const Clause& b) { return a.span.begin < b.span.begin; });

        file_.declarations.push_back(std::move(d));
        i = last + 1;
    }

    std::size_t text_end_before(std::size_t stop) const {
        return stop < toks_.size() ? toks_[stop].begin : text_.size();
    }

    static DeclKind classify_kind(std::string_view keyword, bool ghost, bool function_method) {
        if (keyword == "method" || keyword == "constructor") return DeclKind::Method;
        if (keyword == "lemma" || keyword == "colemma") return DeclKind::Lemma;
        if (keyword == "function") {
            return ghost && !function_method ? DeclKind::GhostFunction : DeclKind::Function;
        }
        if (keyword == "predicate" || keyword == "copredicate") {
            return ghost && !function_method ? DeclKind::GhostPredicate : DeclKind::Predicate;
        }
        if (keyword == "datatype" || keyword == "codatatype") return DeclKind::Datatype;
        if (keyword == "const") return DeclKind::Const;
        return DeclKind::Other;
    }

    // Unrecognized region: becomes an "other" declaration up to the next member start.
    void parse_unknown(std::size_t& i, std::size_t stop) {
        std::size_t j = i;
        int depth = 0;
        while (j < stop) {
            const Token& t = toks_[j];
            if (j > i && depth == 0 && member_start(j)) break;
            if (t.is("{")) ++depth;
            if (t.is("}")) {
                if (depth == 0) break;
                --depth;
            }
            ++j;
        }
        if (j == i) j = i + 1;
        Declaration d;
        d.kind = DeclKind::Other;
        d.header_span = tok_span(i, j - 1);
        d.signature_span = d.header_span;
        d.span = d.header_span;
        file_.declarations.push_back(std::move(d));
        i = j;
    }

    // ---- statements ------------------------------------------------------

    std::vector<Statement> parse_block(std::size_t from, std::size_t close, const std::string& loop) {
        std::vector<Statement> out;
        std::size_t i = from;
        while (i < close) {
            if (toks_[i].is(";")) {
                ++i;
                continue;
            }
            std::size_t before = i;
            out.push_back(parse_statement(i, close, loop));
            if (i <= before) i = before + 1;
        }
        return out;
    }

    // End index (inclusive) of a ';'-terminated statement starting at i.
    std::size_t scan_simple(std::size_t i, std::size_t close) const {
        int depth = 0;
        for (std::size_t j = i; j < close; ++j) {
            const Token& t = toks_[j];
            if (t.is("(") || t.is("[") || t.is("{")) ++depth;
            if (t.is(")") || t.is("]")) depth = std::max(0, depth - 1);
            if (t.is("}")) {
                if (depth == 0) return j > i ? j - 1 : i;
                --depth;
            }
            if (depth == 0 && t.is(";")) return j;
        }
        return close > i ? close - 1 : i;
    }

    Statement parse_statement(std::size_t& i, std::size_t close, const std::string& loop) {
        Statement s;
        const Token& t = toks_[i];
        std::size_t start = i;
        std::size_t last = i;

        auto finish = [&](std::size_t end_idx) {
            last = std::min(end_idx, close - 1);
            s.span = tok_span(start, last);
            i = last + 1;
        };

        if (t.is("assert")) {
            s.kind = StmtKind::Assert;
            int depth = 0;
            for (std::size_t j = i + 1; j < close; ++j) {
                const Token& u = toks_[j];
                if (u.is("(") || u.is("[") || u.is("{")) ++depth;
                if (u.is(")") || u.is("]")) depth = std::max(0, depth - 1);
                if (u.is("}")) {
                    if (depth == 0) {
                        finish(j - 1);
                        return s;
                    }
                    --depth;
                }
                if (depth == 0 && u.is("by") && at(j + 1, "{")) {
                    std::size_t c = match_brace(j + 1, close);
                    if (c == npos) c = close - 1;
                    s.by_part = tok_span(j, c);
                    std::size_t open = j + 1;
                    s.children = parse_block(open + 1, c, loop);
                    finish(c);
                    return s;
                }
                if (depth == 0 && u.is(";")) {
                    finish(j);
                    return s;
                }
            }
            finish(close - 1);
            return s;
        }
        if (t.is("calc")) {
            s.kind = StmtKind::Calc;
            std::size_t open = find_body_brace(i + 1, close, false, true);
            if (open == npos) {
                finish(scan_simple(i, close));
                return s;
            }
            std::size_t c = match_brace(open, close);
            if (c == npos) c = close - 1;
            s.body = tok_span(open, c);
            if (at(c + 1, ";") && c + 1 < close) ++c;
            finish(c);
            return s;
        }
        if (t.is("if")) {
            s.kind = StmtKind::If;
            std::size_t open = at(i + 1, "{") ? i + 1 : find_body_brace(i + 1, close, false);
            if (open == npos) {
                finish(scan_simple(i, close));
                return s;
            }
            std::size_t c = match_brace(open, close);
            if (c == npos) c = close - 1;
            s.body = tok_span(open, c);
            s.children = parse_block(open + 1, c, loop);
            std::size_t end_idx = c;
            if (at(c + 1, "else") && c + 1 < close) {
                std::size_t e = c + 1;
                if (at(e + 1, "if")) {
                    std::size_t k = e + 1;
                    Statement nested = parse_statement(k, close, loop);
                    nested.is_else_if = true;
                    end_idx = k - 1;
                    s.children.push_back(std::move(nested));
                } else if (at(e + 1, "{")) {
                    std::size_t c2 = match_brace(e + 1, close);
                    if (c2 == npos) c2 = close - 1;
                    auto more = parse_block(e + 2, c2, loop);
                    for (auto& m : more) s.children.push_back(std::move(m));
                    end_idx = c2;
                } else {
                    end_idx = e;
                }
                s.else_part = tok_span(e, end_idx);
            }
            finish(end_idx);
            return s;
        }
        if (t.is("while") || t.is("for")) {
            s.kind = t.is("while") ? StmtKind::While : StmtKind::For;
            s.loop_id = decl_name_ + ".loop" + std::to_string(++loop_counter_);
            std::size_t open = find_body_brace(i + 1, close, false);
            std::size_t header_end = open == npos ? scan_simple(i, close) : open - 1;
            // Loop specification clauses.
            std::vector<std::size_t> starts;
            int depth = 0;
            for (std::size_t j = i + 1; j <= header_end && j < close; ++j) {
                const Token& u = toks_[j];
                if (u.is("(") || u.is("[") || u.is("{")) ++depth;
                if (u.is(")") || u.is("]") || u.is("}")) depth = std::max(0, depth - 1);
                if (depth == 0 && u.kind == TokenKind::Identifier && clause_keyword(u.text)) {
                    starts.push_back(j);
                }
            }
            for (std::size_t c = 0; c < starts.size(); ++c) {
                std::size_t cl_last = c + 1 < starts.size() ? starts[c + 1] - 1 : header_end;
                Clause cl;
                cl.kind = *clause_keyword(toks_[starts[c]].text);
                cl.span = tok_span(starts[c], cl_last);
                cl.owner = s.loop_id;
                cl.text = slice(cl.span);
                s.loop_clauses.push_back(std::move(cl));
            }
            if (open == npos) {
                finish(header_end);
                return s;
            }
            std::size_t c = match_brace(open, close);
            if (c == npos) c = close - 1;
            s.body = tok_span(open, c);
            s.children = parse_block(open + 1, c, s.loop_id);
            finish(c);
            return s;
        }
        if (t.is("forall") || t.is("match")) {
            s.kind = t.is("forall") ? StmtKind::Forall : StmtKind::Match;
            std::size_t open = find_body_brace(i + 1, close, false);
            if (open == npos) {
                finish(scan_simple(i, close));
                return s;
            }
            std::size_t c = match_brace(open, close);
            if (c == npos) c = close - 1;
            s.body = tok_span(open, c);
            if (s.kind == StmtKind::Forall) s.children = parse_block(open + 1, c, loop);
            finish(c);
            return s;
        }
        if (t.is("{")) {
            s.kind = StmtKind::Block;
            std::size_t c = match_brace(i, close);
            if (c == npos) c = close - 1;
            s.body = tok_span(i, c);
            s.children = parse_block(i + 1, c, loop);
            finish(c);
            return s;
        }
        if (t.kind == TokenKind::Identifier && clause_keyword(t.text)) {
            s.kind = StmtKind::StrayClause;
            s.stray_kind = clause_keyword(t.text);
            s.loop_id = loop;
            int depth = 0;
            std::size_t j = i + 1;
            std::size_t end_idx = i;
            for (; j < close; ++j) {
                const Token& u = toks_[j];
                if (depth == 0 && (u.is("{") || u.is("}"))) break;
                if (depth == 0 && u.line != toks_[j - 1].line) break;
                if (u.is("(") || u.is("[")) ++depth;
                if (u.is(")") || u.is("]")) depth = std::max(0, depth - 1);
                end_idx = j;
                if (depth == 0 && u.is(";")) break;
            }
            finish(end_idx);
            return s;
        }

        if (t.is("assume")) s.kind = StmtKind::Assume;
        else if (t.is("expect")) s.kind = StmtKind::Expect;
        else if (t.is("return")) s.kind = StmtKind::Return;
        else if (t.is("var")) s.kind = StmtKind::Var;
        else if (t.is("ghost") && at(i + 1, "var")) s.kind = StmtKind::GhostVar;
        std::size_t end_idx = scan_simple(i, close);
        if (s.kind == StmtKind::Other) {
            bool assign = false;
            std::size_t first_paren = npos;
            int depth = 0;
            for (std::size_t j = i; j <= end_idx; ++j) {
                const Token& u = toks_[j];
                if (depth == 0 && (u.is(":=") || u.is(":|"))) assign = true;
                if (u.is("(") && depth == 0 && first_paren == npos) first_paren = j;
                if (u.is("(") || u.is("[") || u.is("{")) ++depth;
                if (u.is(")") || u.is("]") || u.is("}")) depth = std::max(0, depth - 1);
            }
            if (assign) {
                s.kind = StmtKind::Assign;
            } else if (first_paren != npos && first_paren > i &&
                       toks_[first_paren - 1].kind == TokenKind::Identifier &&
                       !t.is("print") && !t.is("reveal")) {
                s.kind = StmtKind::Call;
                s.callee = std::string(toks_[first_paren - 1].text);
            }
        }
        finish(end_idx);
        return s;
    }

    // ---- clause collection -----------------------------------------------

    void collect_statement_clauses(Declaration& d, const std::vector<Statement>& stmts,
                                   const std::string& owner) {
        for (const auto& s : stmts) {
            std::optional<ClauseKind> kind;
            switch (s.kind) {
                case StmtKind::Assert: kind = ClauseKind::Assert; break;
                case StmtKind::Assume: kind = ClauseKind::Assume; break;
                case StmtKind::Expect: kind = ClauseKind::Expect; break;
                case StmtKind::Calc: kind = ClauseKind::Calc; break;
                case StmtKind::GhostVar: kind = ClauseKind::GhostVar; break;
                case StmtKind::StrayClause: kind = s.stray_kind; break;
                default: break;
            }
            if (kind) {
                Clause cl;
                cl.kind = *kind;
                cl.span = s.span;
                cl.owner = s.kind == StmtKind::StrayClause && !s.loop_id.empty() ? s.loop_id : owner;
                cl.text = slice(s.span);
                d.clauses.push_back(std::move(cl));
            }
            for (const auto& cl : s.loop_clauses) d.clauses.push_back(cl);
            if (s.kind != StmtKind::Assert && s.kind != StmtKind::Calc) {
                collect_statement_clauses(d, s.children, owner);
            }
        }
    }

    void collect_negative_tests(Declaration& d) {
        for (const auto& t : all_) {
            if (t.kind != TokenKind::LineComment) continue;
            if (t.begin < d.span.begin || t.end > d.span.end) continue;
            auto [line, col] = position(t.begin);
            std::string_view raw = file_.lines[static_cast<std::size_t>(line - 1)];
            // Only full-line comments are commented-out statements.
            if (raw.find_first_not_of(" \t") != static_cast<std::size_t>(col - 1)) continue;
            auto inner = negative_test_statement(raw);
            if (!inner) continue;
            Clause cl;
            cl.kind = inner->rfind("assert", 0) == 0 ? ClauseKind::Assert
                      : inner->rfind("expect", 0) == 0 ? ClauseKind::Expect
                                                        : ClauseKind::Statement;
            cl.span = span_of(t.begin, t.end);
            cl.owner = d.name;
            cl.text = std::string(t.text);
            cl.is_negative_test = true;
            d.clauses.push_back(std::move(cl));
        }
    }

    bool span_has_helper_tag(const Span& s) const {
        for (int l = s.start_line; l <= s.end_line && l <= static_cast<int>(file_.lines.size()); ++l) {
            if (line_has_helper_tag(file_.lines[static_cast<std::size_t>(l - 1)])) return true;
        }
        return false;
    }

    void collect_free_comments() {
        for (const auto& t : all_) {
            if (!t.is_comment()) continue;
            bool inside = std::any_of(file_.declarations.begin(), file_.declarations.end(),
                                      [&](const Declaration& d) {
                                          return d.span.begin <= t.begin && t.end <= d.span.end;
                                      });
            if (!inside) file_.free_comments.push_back(span_of(t.begin, t.end));
        }
    }

    static constexpr std::size_t npos = static_cast<std::size_t>(-1);

    SourceFile& file_;
    const std::string& text_;
    std::vector<Token> all_;
    std::vector<Token> toks_;
    std::vector<std::size_t> line_starts_;
    std::string decl_name_;
    int loop_counter_ = 0;
};

std::vector<std::string> split_lines(const std::string& text) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (start <= text.size()) {
        std::size_t nl = text.find('\n', start);
        if (nl == std::string::npos) {
            if (start < text.size()) out.push_back(text.substr(start));
            break;
        }
        out.push_back(text.substr(start, nl - start));
        start = nl + 1;
    }
    return out;
}

void flatten_into(const std::vector<Statement>& stmts, std::vector<const Statement*>& out) {
    for (const auto& s : stmts) {
        out.push_back(&s);
        flatten_into(s.children, out);
    }
}

}  // namespace

SourceFile parse(std::string text, std::string path) {
    SourceFile file;
    file.path = std::move(path);
    file.text = std::move(text);
    file.lines = split_lines(file.text);
    Parser parser(file);
    parser.run();
    return file;
}

std::vector<const Statement*> flatten(const std::vector<Statement>& stmts) {
    std::vector<const Statement*> out;
    flatten_into(stmts, out);
    return out;
}

bool line_has_helper_tag(std::string_view line) {
    // Find a "//" outside string literals.
    bool in_string = false;
    for (std::size_t i = 0; i + 1 < line.size(); ++i) {
        char c = line[i];
        if (in_string) {
            if (c == '\\') ++i;
            else if (c == '"') in_string = false;
            continue;
        }
        if (c == '"') {
            in_string = true;
            continue;
        }
        if (c == '/' && line[i + 1] == '/') {
            if (line.substr(0, i).find_first_not_of(" \t") == std::string_view::npos) return false;
            static const std::regex kTag(R"(\bhelper\b)", std::regex::icase);
            std::string comment(line.substr(i + 2));
            return std::regex_search(comment, kTag);
        }
    }
    return false;
}

std::optional<std::string> negative_test_statement(std::string_view line) {
    static const std::regex kNeg(R"(^\s*//\s*(\S.*?)\s*//\s*@invalid\s*$)");
    std::string s(line);
    std::smatch m;
    if (!std::regex_match(s, m, kNeg)) return std::nullopt;
    std::string inner = m[1].str();
    if (inner.rfind("//", 0) == 0) return std::nullopt;
    return inner;
}

std::string normalize_code(std::string_view text) {
    std::string out;
    for (const auto& t : tokenize(text)) {
        if (t.is_comment() || t.kind == TokenKind::Attribute) continue;
        if (!out.empty()) out += ' ';
        out += t.text;
    }
    return out;
}

std::vector<Segment> segments(const SourceFile& file) {
    std::vector<Segment> out;
    std::size_t pos = 0;
    for (std::size_t i = 0; i < file.declarations.size(); ++i) {
        const auto& d = file.declarations[i];
        if (d.span.begin < pos) continue;  // defensive: overlapping spans are never produced
        if (d.span.begin > pos) out.push_back({pos, d.span.begin, -1});
        out.push_back({d.span.begin, d.span.end, static_cast<int>(i)});
        pos = d.span.end;
    }
    if (pos < file.text.size()) out.push_back({pos, file.text.size(), -1});
    return out;
}

std::string reconstruct(const SourceFile& file) {
    std::string out;
    for (const auto& seg : segments(file)) out += file.text.substr(seg.begin, seg.end - seg.begin);
    return out;
}

namespace {

enum : unsigned char { kCode = 1, kAnnot = 2, kHelper = 4 };

void mark(std::vector<unsigned char>& flags, const Span& s, unsigned char bits) {
    for (std::size_t k = s.begin; k < s.end && k < flags.size(); ++k) flags[k] |= bits;
}

bool is_annotation_clause(ClauseKind k) {
    return k == ClauseKind::Requires || k == ClauseKind::Ensures || k == ClauseKind::Invariant ||
           k == ClauseKind::Decreases || k == ClauseKind::Reads;
}

void mark_statements(const SourceFile& file, const Declaration& d, const std::vector<Statement>& stmts,
                     std::vector<unsigned char>& flags,
                     const std::vector<std::pair<std::size_t, std::size_t>>& oracle) {
    for (const auto& s : stmts) {
        switch (s.kind) {
            case StmtKind::Assert: {
                bool is_oracle = std::any_of(oracle.begin(), oracle.end(), [&](const auto& o) {
                    return o.first == s.span.begin && o.second == s.span.end;
                });
                mark(flags, s.span, is_oracle ? kAnnot : kAnnot | kHelper);
                break;
            }
            case StmtKind::Assume:
            case StmtKind::Calc:
            case StmtKind::GhostVar:
                mark(flags, s.span, kAnnot | kHelper);
                break;
            case StmtKind::Call: {
                const Declaration* callee = file.find(s.callee);
                if (callee && callee->is_specification_only()) mark(flags, s.span, kAnnot | kHelper);
                break;
            }
            case StmtKind::StrayClause:
                if (s.stray_kind && is_annotation_clause(*s.stray_kind)) mark(flags, s.span, kAnnot);
                break;
            default:
                break;
        }
        for (const auto& cl : s.loop_clauses) {
            if (is_annotation_clause(cl.kind)) mark(flags, cl.span, kAnnot);
        }
        if (s.kind != StmtKind::Assert) mark_statements(file, d, s.children, flags, oracle);
    }
}

std::vector<unsigned char> classify_bytes(const SourceFile& file) {
    std::vector<unsigned char> flags(file.text.size(), 0);
    for (const auto& t : tokenize(file.text)) {
        if (t.is_comment()) continue;
        for (std::size_t k = t.begin; k < t.end; ++k) {
            if (!std::isspace(static_cast<unsigned char>(file.text[k]))) flags[k] |= kCode;
        }
    }
    std::vector<std::pair<std::size_t, std::size_t>> oracle;
    for (const auto& c : test_oracle_asserts(file)) oracle.emplace_back(c.span.begin, c.span.end);

    for (const auto& d : file.declarations) {
        if (d.is_specification_only()) {
            mark(flags, d.span, d.is_lemma() ? kAnnot | kHelper : kAnnot);
            continue;
        }
        for (const auto& cl : d.clauses) {
            bool header = cl.span.end <= d.header_span.end;
            if (header && is_annotation_clause(cl.kind)) mark(flags, cl.span, kAnnot);
        }
        mark_statements(file, d, d.body, flags, oracle);
    }
    // "// helper" tagged lines count entirely as proof helpers.
    std::size_t off = 0;
    for (const auto& line : file.lines) {
        if (line_has_helper_tag(line)) {
            for (std::size_t k = off; k < off + line.size() && k < flags.size(); ++k) {
                flags[k] |= kAnnot | kHelper;
            }
        }
        off += line.size() + 1;
    }
    return flags;
}

}  // namespace

LocStats count_loc_lines(const SourceFile& file, int first_line, int last_line) {
    LocStats stats;
    auto flags = classify_bytes(file);
    std::size_t off = 0;
    for (int l = 1; l <= static_cast<int>(file.lines.size()); ++l) {
        const auto& line = file.lines[static_cast<std::size_t>(l - 1)];
        if (l >= first_line && l <= last_line) {
            bool has_code = false, all_annot = true, all_helper = true;
            for (std::size_t k = off; k < off + line.size(); ++k) {
                if (!(flags[k] & kCode)) continue;
                has_code = true;
                if (!(flags[k] & kAnnot)) all_annot = false;
                if (!(flags[k] & kHelper)) all_helper = false;
            }
            if (has_code) {
                if (all_annot) {
                    ++stats.A;
                    if (all_helper) ++stats.H;
                } else {
                    ++stats.L;
                }
            }
        }
        off += line.size() + 1;
    }
    return stats;
}

LocStats count_loc(const SourceFile& file) {
    return count_loc_lines(file, 1, static_cast<int>(file.lines.size()));
}

std::vector<Clause> test_oracle_asserts(const SourceFile& file) {
    std::vector<Clause> out;
    for (const auto& d : file.declarations) {
        if (!d.is_test) continue;
        for (const auto& c : d.clauses) {
            if (c.kind == ClauseKind::Assert && !c.is_tagged_helper && !c.is_negative_test) {
                out.push_back(c);
            }
        }
    }
    return out;
}

}  // namespace specforge

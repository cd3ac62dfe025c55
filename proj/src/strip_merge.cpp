#include "specforge/strip_merge.hpp"

#include <algorithm>
#include <map>
#include <regex>
#include <set>

#include "specforge/lcs.hpp"
#include "specforge/lexer.hpp"
#include "specforge/text_edit.hpp"

namespace specforge {

std::string_view to_string(Violation::Kind kind) {
    switch (kind) {
        case Violation::Kind::Assume: return "assume";
        case Violation::Kind::DecreasesStar: return "decreases-star";
        case Violation::Kind::RemovedTestAssertion: return "removed-test-assertion";
        case Violation::Kind::AlteredCode: return "altered-code";
    }
    return "altered-code";
}

namespace {

bool is_annotation_clause(ClauseKind k) {
    return k == ClauseKind::Requires || k == ClauseKind::Ensures || k == ClauseKind::Invariant ||
           k == ClauseKind::Decreases || k == ClauseKind::Reads;
}

void mark(std::vector<bool>& removed, const Span& s) {
    for (std::size_t k = s.begin; k < s.end && k < removed.size(); ++k) removed[k] = true;
}

bool same_span(const Span& a, const Span& b) { return a.begin == b.begin && a.end == b.end; }

void mark_statements(const SourceFile& file, const std::vector<Statement>& stmts,
                     const std::vector<Clause>& oracles, std::vector<bool>& removed) {
    for (const auto& s : stmts) {
        bool drop = false;
        switch (s.kind) {
            case StmtKind::Assert:
                drop = std::none_of(oracles.begin(), oracles.end(),
                                    [&](const Clause& c) { return same_span(c.span, s.span); });
                break;
            case StmtKind::Assume:
            case StmtKind::Calc:
            case StmtKind::GhostVar:
                drop = true;
                break;
            case StmtKind::Call: {
                const Declaration* callee = file.find(s.callee);
                drop = callee && callee->is_specification_only();
                break;
            }
            case StmtKind::StrayClause:
                drop = s.stray_kind && is_annotation_clause(*s.stray_kind);
                break;
            default:
                break;
        }
        if (drop) {
            mark(removed, s.span);
            continue;
        }
        for (const auto& cl : s.loop_clauses) {
            if (is_annotation_clause(cl.kind)) mark(removed, cl.span);
        }
        mark_statements(file, s.children, oracles, removed);
    }
}

// Comment-only lines directly above a removed declaration go with it.
void mark_leading_comments(const std::string& text, std::size_t decl_begin, std::vector<bool>& removed) {
    std::size_t ls = line_start(text, decl_begin);
    if (text.find_first_not_of(" \t", ls) != decl_begin) return;
    while (ls > 0) {
        std::size_t prev = line_start(text, ls - 1);
        std::string_view line(text.data() + prev, ls - 1 - prev);
        auto first = line.find_first_not_of(" \t\r");
        if (first == std::string_view::npos || line.substr(first, 2) != "//") break;
        if (std::regex_search(std::string(line), std::regex(R"(//\s*@invalid)"))) break;
        for (std::size_t k = prev; k < ls - 1; ++k) removed[k] = true;
        ls = prev;
    }
}

std::vector<bool> removal_mask(const SourceFile& file) {
    std::vector<bool> removed(file.text.size(), false);
    auto oracles = test_oracle_asserts(file);
    for (const auto& d : file.declarations) {
        if (d.is_specification_only()) {
            mark(removed, d.span);
            mark_leading_comments(file.text, d.span.begin, removed);
            continue;
        }
        for (const auto& cl : d.clauses) {
            if (cl.span.end <= d.header_span.end && is_annotation_clause(cl.kind)) mark(removed, cl.span);
        }
        mark_statements(file, d.body, oracles, removed);
    }
    std::size_t off = 0;
    for (const auto& line : file.lines) {
        if (line_has_helper_tag(line)) {
            for (std::size_t k = off; k < off + line.size(); ++k) removed[k] = true;
        }
        off += line.size() + 1;
    }
    return removed;
}

bool is_blank(const std::string& s) {
    return s.find_first_not_of(" \t\r") == std::string::npos;
}

}  // namespace

std::string strip_annotations(const SourceFile& file) {
    const std::string& text = file.text;
    std::vector<bool> removed = removal_mask(file);
    std::vector<bool> code(text.size(), false);
    for (const auto& t : tokenize(text)) {
        if (t.is_comment()) continue;
        for (std::size_t k = t.begin; k < t.end; ++k) code[k] = true;
    }

    std::vector<std::string> out;
    bool dropped_since_output = false;
    std::size_t off = 0;
    for (const auto& line : file.lines) {
        const std::size_t b = off, e = off + line.size();
        off = e + 1;
        bool has_code = false, all_code_removed = true, any_removed = false, all_visible_removed = true;
        for (std::size_t k = b; k < e; ++k) {
            bool ws = line[k - b] == ' ' || line[k - b] == '\t' || line[k - b] == '\r';
            if (removed[k]) any_removed = true;
            if (!ws && !removed[k]) all_visible_removed = false;
            if (code[k]) {
                has_code = true;
                if (!removed[k]) all_code_removed = false;
            }
        }
        bool drop = has_code ? all_code_removed : (any_removed && all_visible_removed);
        if (drop) {
            dropped_since_output = true;
            continue;
        }
        std::string kept;
        if (!any_removed) {
            kept = line;
        } else {
            for (std::size_t k = b; k < e;) {
                if (!removed[k]) {
                    kept += text[k++];
                    continue;
                }
                while (k < e && removed[k]) ++k;
                bool after_space = kept.empty() || kept.back() == ' ' || kept.back() == '\t';
                if (after_space) {
                    while (k < e && (text[k] == ' ' || text[k] == '\t')) ++k;
                }
            }
            while (!kept.empty() && (kept.back() == ' ' || kept.back() == '\t')) kept.pop_back();
            if (is_blank(kept)) {
                dropped_since_output = true;
                continue;
            }
        }
        if (is_blank(kept) && dropped_since_output && (out.empty() || is_blank(out.back()))) {
            continue;
        }
        if (!is_blank(kept)) dropped_since_output = false;
        out.push_back(std::move(kept));
    }
    if (dropped_since_output) {
        while (!out.empty() && is_blank(out.back())) out.pop_back();
    }
    std::string result;
    for (std::size_t i = 0; i < out.size(); ++i) {
        result += out[i];
        if (i + 1 < out.size() || (!text.empty() && text.back() == '\n')) result += '\n';
    }
    return result;
}

std::string strip_annotations(const std::string& text) { return strip_annotations(parse(text)); }

std::string extract_code_block(std::string_view llm_output) {
    std::string s(llm_output);
    auto trim_newlines = [](std::string x) {
        std::size_t b = 0;
        while (b < x.size() && (x[b] == '\n' || x[b] == '\r')) ++b;
        std::size_t e = x.size();
        while (e > b && std::isspace(static_cast<unsigned char>(x[e - 1]))) --e;
        return x.substr(b, e - b);
    };
    auto strip_fence = [&](std::string x) {
        static const std::regex kFenced(R"(^\s*```[A-Za-z]*[ \t]*\r?\n([\s\S]*?)\n?```\s*$)");
        std::smatch m;
        if (std::regex_match(x, m, kFenced)) return trim_newlines(m[1].str());
        return x;
    };
    std::size_t begin = s.find("BEGIN DAFNY");
    if (begin != std::string::npos) {
        std::size_t body = begin + std::string_view("BEGIN DAFNY").size();
        std::size_t end = s.find("END DAFNY", body);
        std::string inner = s.substr(body, end == std::string::npos ? std::string::npos : end - body);
        inner = strip_fence(trim_newlines(inner));
        if (end != std::string::npos || !parse(inner).declarations.empty()) return inner;
    }
    static const std::regex kFence(R"(```[A-Za-z]*[ \t]*\r?\n([\s\S]*?)```)");
    std::smatch m;
    if (std::regex_search(s, m, kFence)) return trim_newlines(m[1].str());
    throw NoCodeBlock();
}

// ---- invariant relocation ---------------------------------------------------------

namespace {

bool relocatable(const Statement& s) {
    return s.kind == StmtKind::StrayClause && s.stray_kind &&
           (*s.stray_kind == ClauseKind::Invariant || *s.stray_kind == ClauseKind::Decreases);
}

bool is_loop(const Statement& s) {
    return (s.kind == StmtKind::While || s.kind == StmtKind::For) && s.body.has_value();
}

// Removal edit for a stray clause: the whole line when nothing else is on it.
TextEdit removal_for(const std::string& text, const Span& span) {
    std::size_t ls = line_start(text, span.begin);
    std::size_t le = next_line_start(text, span.end);
    std::size_t content_end = le > 0 && le <= text.size() && text[le - 1] == '\n' ? le - 1 : le;
    bool alone_before = text.substr(ls, span.begin - ls).find_first_not_of(" \t") == std::string::npos;
    bool alone_after =
        text.substr(span.end, content_end - span.end).find_first_not_of(" \t\r") == std::string::npos;
    if (alone_before && alone_after) return {ls, le, ""};
    return {span.begin, span.end, ""};
}

std::string clause_text(const std::string& text, const Span& span) {
    std::string t = text.substr(span.begin, span.end - span.begin);
    while (!t.empty() && (t.back() == ';' || std::isspace(static_cast<unsigned char>(t.back())))) {
        t.pop_back();
    }
    return t;
}

void relocation_edits(const std::string& text, const std::vector<Statement>& stmts,
                      std::vector<TextEdit>& edits) {
    for (std::size_t i = 0; i < stmts.size(); ++i) {
        const Statement& s = stmts[i];
        if (is_loop(s)) {
            std::vector<const Statement*> moved;
            for (const auto& c : s.children) {
                if (relocatable(c)) moved.push_back(&c);
            }
            for (std::size_t j = i + 1; j < stmts.size() && relocatable(stmts[j]); ++j) {
                moved.push_back(&stmts[j]);
            }
            if (!moved.empty()) {
                std::string loop_indent = indentation_at(text, s.span.begin);
                std::size_t brace = s.body->begin;
                std::size_t header_end = brace;
                while (header_end > s.span.begin && std::isspace(static_cast<unsigned char>(text[header_end - 1]))) {
                    --header_end;
                }
                bool brace_on_own_line = line_start(text, brace) > header_end;
                std::string insert;
                for (const Statement* m : moved) {
                    insert += "\n" + loop_indent + "  " + clause_text(text, m->span);
                    edits.push_back(removal_for(text, m->span));
                }
                if (brace_on_own_line) {
                    edits.push_back({header_end, header_end, insert});
                } else {
                    edits.push_back({header_end, brace, insert + "\n" + loop_indent});
                }
            }
            // Stray clauses following the loop were consumed; skip them.
            while (i + 1 < stmts.size() && relocatable(stmts[i + 1])) ++i;
        }
        relocation_edits(text, s.children, edits);
    }
}

}  // namespace

std::string relocate_invariants(const std::string& text) {
    SourceFile file = parse(text);
    std::vector<TextEdit> edits;
    for (const auto& d : file.declarations) relocation_edits(text, d.body, edits);
    if (edits.empty()) return text;
    return apply_edits(text, std::move(edits));
}

// ---- cheating detection -------------------------------------------------------

namespace {

struct TokenRef {
    std::string text;
    int line;
    std::string decl;  // enclosing declaration, empty at top level
};

// Executable tokens of strip(file), excluding assert statements.
std::vector<TokenRef> executable_tokens(const SourceFile& file) {
    std::string stripped = strip_annotations(file);
    SourceFile s = parse(stripped);
    std::vector<std::pair<std::size_t, std::size_t>> excluded;
    for (const auto& d : s.declarations) {
        for (const Statement* st : flatten(d.body)) {
            if (st->kind == StmtKind::Assert) excluded.emplace_back(st->span.begin, st->span.end);
        }
    }
    std::vector<TokenRef> out;
    for (const auto& t : tokenize(s.text)) {
        if (t.is_comment() || t.kind == TokenKind::Attribute) continue;
        bool skip = std::any_of(excluded.begin(), excluded.end(),
                                [&](const auto& r) { return r.first <= t.begin && t.end <= r.second; });
        if (skip) continue;
        std::string decl;
        for (const auto& d : s.declarations) {
            if (d.span.begin <= t.begin && t.end <= d.span.end) decl = d.name;
        }
        out.push_back({std::string(t.text), t.line, decl});
    }
    return out;
}

}  // namespace

std::vector<Violation> detect_cheating(const SourceFile& stripped_original, const SourceFile& candidate,
                                       const CheatingOptions& options) {
    std::vector<Violation> out;

    for (const auto& d : candidate.declarations) {
        for (const Statement* s : flatten(d.body)) {
            if (s->kind == StmtKind::Assume) {
                out.push_back({Violation::Kind::Assume, s->span.start_line,
                               candidate.text.substr(s->span.begin, s->span.end - s->span.begin)});
            }
        }
    }

    bool star_allowed = std::find(options.decreases_star_whitelist.begin(),
                                  options.decreases_star_whitelist.end(),
                                  candidate.path) != options.decreases_star_whitelist.end();
    if (!star_allowed) {
        for (const auto& d : candidate.declarations) {
            for (const auto& c : d.clauses) {
                if (c.kind == ClauseKind::Decreases && !c.is_negative_test &&
                    normalize_code(c.text) == "decreases *") {
                    out.push_back({Violation::Kind::DecreasesStar, c.span.start_line, c.text});
                }
            }
        }
    }

    std::map<std::string, std::multiset<std::string>> candidate_asserts;
    for (const auto& d : candidate.declarations) {
        auto& bag = candidate_asserts[d.name];
        for (const Statement* s : flatten(d.body)) {
            if (s->kind == StmtKind::Assert) {
                bag.insert(normalize_code(candidate.text.substr(s->span.begin, s->span.end - s->span.begin)));
            }
        }
    }
    for (const auto& c : test_oracle_asserts(stripped_original)) {
        auto& bag = candidate_asserts[c.owner];
        auto it = bag.find(normalize_code(c.text));
        if (it == bag.end()) {
            out.push_back({Violation::Kind::RemovedTestAssertion, c.span.start_line, c.text});
        } else {
            bag.erase(it);
        }
    }

    auto orig = executable_tokens(stripped_original);
    auto cand = executable_tokens(candidate);
    std::vector<std::string> a, b;
    for (auto& t : orig) a.push_back(t.text);
    for (auto& t : cand) b.push_back(t.text);
    std::vector<bool> matched(a.size(), false);
    std::vector<int> partner(b.size(), -1);
    for (auto [i, j] : lcs_align(a, b)) {
        matched[i] = true;
        partner[j] = static_cast<int>(i);
    }
    std::set<int> bad_lines;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (!matched[i]) bad_lines.insert(orig[i].line);
    }
    SourceFile reparsed = parse(strip_annotations(stripped_original));
    auto original_line = [&](int line) {
        return line <= static_cast<int>(reparsed.lines.size())
                   ? collapse_whitespace(reparsed.lines[static_cast<std::size_t>(line - 1)])
                   : std::string();
    };
    for (int line : bad_lines) out.push_back({Violation::Kind::AlteredCode, line, original_line(line)});

    // code inserted into declarations the original already has
    std::set<std::string> original_decls;
    for (const auto& t : orig) original_decls.insert(t.decl);
    SourceFile cand_stripped = parse(strip_annotations(candidate));
    int anchor = orig.empty() ? 1 : orig.front().line;
    std::set<int> inserted_lines;
    for (std::size_t j = 0; j < b.size(); ++j) {
        if (partner[j] >= 0) {
            anchor = orig[static_cast<std::size_t>(partner[j])].line;
            continue;
        }
        if (cand[j].decl.empty() || !original_decls.count(cand[j].decl) || bad_lines.count(anchor)) continue;
        if (!inserted_lines.insert(cand[j].line).second) continue;
        std::string detail = cand[j].line <= static_cast<int>(cand_stripped.lines.size())
                                 ? collapse_whitespace(cand_stripped.lines[static_cast<std::size_t>(cand[j].line - 1)])
                                 : std::string();
        out.push_back({Violation::Kind::AlteredCode, anchor, detail});
    }
    return out;
}

// ---- merge ----------------------------------------------------------------------

namespace {

void check_skeleton(const SourceFile& candidate, const SourceFile& manual) {
    SourceFile sm = parse(strip_annotations(manual));
    SourceFile sc = parse(strip_annotations(candidate));
    for (const auto& md : sm.declarations) {
        if (md.name.empty() || md.is_specification_only()) continue;
        const Declaration* cd = sc.find(md.name);
        if (!cd) throw SkeletonMismatch(md.name);
        auto text_of = [](const SourceFile& f, const Declaration& d) {
            return normalize_code(f.text.substr(d.span.begin, d.span.end - d.span.begin));
        };
        if (text_of(sm, md) != text_of(sc, *cd)) throw SkeletonMismatch(md.name);
    }
}

std::vector<const Clause*> header_clauses(const Declaration& d) {
    std::vector<const Clause*> out;
    for (const auto& c : d.clauses) {
        if (c.span.end <= d.header_span.end && is_annotation_clause(c.kind)) out.push_back(&c);
    }
    return out;
}

std::vector<const Statement*> loops_of(const Declaration& d) {
    std::vector<const Statement*> out;
    for (const Statement* s : flatten(d.body)) {
        if (s->kind == StmtKind::While || s->kind == StmtKind::For) out.push_back(s);
    }
    return out;
}

std::size_t end_of_loop_header(const std::string& text, const Statement& loop) {
    std::size_t pos = loop.body ? loop.body->begin : loop.span.end;
    while (pos > loop.span.begin && std::isspace(static_cast<unsigned char>(text[pos - 1]))) --pos;
    return pos;
}

}  // namespace

std::string merge_with_manual(const SourceFile& candidate, const SourceFile& manual) {
    check_skeleton(candidate, manual);
    const std::string& text = candidate.text;
    std::vector<TextEdit> edits;

    for (const auto& md : manual.declarations) {
        if (md.name.empty()) continue;
        const Declaration* cd = candidate.find(md.name);
        if (!cd) continue;

        auto cand_clauses = header_clauses(*cd);
        std::set<std::string> present;
        for (const Clause* c : cand_clauses) present.insert(normalize_code(c->text));
        std::string indent = cand_clauses.empty() ? indentation_at(text, cd->span.begin) + "  "
                                                  : indentation_at(text, cand_clauses.back()->span.begin);
        std::string insert;
        for (const Clause* c : header_clauses(md)) {
            if (present.insert(normalize_code(c->text)).second) insert += "\n" + indent + c->text;
        }
        if (!insert.empty()) {
            std::size_t at = cd->header_span.end;
            edits.push_back({at, at, insert});
        }

        auto mloops = loops_of(md);
        auto cloops = loops_of(*cd);
        for (std::size_t k = 0; k < std::min(mloops.size(), cloops.size()); ++k) {
            std::set<std::string> have;
            for (const auto& c : cloops[k]->loop_clauses) have.insert(normalize_code(c.text));
            std::string loop_indent = indentation_at(text, cloops[k]->span.begin) + "  ";
            std::string add;
            for (const auto& c : mloops[k]->loop_clauses) {
                if (!is_annotation_clause(c.kind)) continue;
                if (have.insert(normalize_code(c.text)).second) add += "\n" + loop_indent + c.text;
            }
            if (!add.empty()) {
                std::size_t at = end_of_loop_header(text, *cloops[k]);
                edits.push_back({at, at, add});
            }
        }
    }

    std::string merged = apply_edits(text, std::move(edits));
    for (const auto& md : manual.declarations) {
        if (!md.is_specification_only() || md.name.empty() || candidate.find(md.name)) continue;
        if (!merged.empty() && merged.back() != '\n') merged += '\n';
        merged += "\n" + manual.text.substr(md.span.begin, md.span.end - md.span.begin) + "\n";
    }
    return merged;
}

// ---- negative tests ---------------------------------------------------------------

int count_negative_tests(const std::string& text) {
    int n = 0;
    for (const auto& line : parse(text).lines) {
        if (negative_test_statement(line)) ++n;
    }
    return n;
}

std::string activate_negative_test(const std::string& text, int marker_index) {
    int seen = 0;
    std::size_t off = 0;
    while (off <= text.size()) {
        std::size_t nl = text.find('\n', off);
        std::size_t end = nl == std::string::npos ? text.size() : nl;
        std::string_view line(text.data() + off, end - off);
        if (negative_test_statement(line) && ++seen == marker_index) {
            std::size_t slash = text.find("//", off);
            std::size_t after = slash + 2;
            while (after < end && (text[after] == ' ' || text[after] == '\t')) ++after;
            return text.substr(0, slash) + text.substr(after);
        }
        if (nl == std::string::npos) break;
        off = nl + 1;
    }
    throw NoSuchMarker(marker_index);
}

}  // namespace specforge

#include "specforge/minimizer.hpp"

#include <algorithm>
#include <deque>
#include <tuple>

#include "specforge/lcs.hpp"
#include "specforge/lexer.hpp"
#include "specforge/text_edit.hpp"

namespace specforge {

std::string_view to_string(CandidateCategory c) {
    switch (c) {
        case CandidateCategory::Statement: return "a-statement";
        case CandidateCategory::BlockPart: return "b-block-part";
        case CandidateCategory::StatementGroup: return "c-statement-group";
        case CandidateCategory::LoopClause: return "d-loop-spec-clause";
        case CandidateCategory::DeclClause: return "e-decl-spec-clause";
    }
    return "a-statement";
}

std::vector<std::string> normalized_lines(const std::string& text) {
    std::size_t n = std::count(text.begin(), text.end(), '\n') + 1;
    if (!text.empty() && text.back() == '\n') --n;
    std::vector<std::string> out(text.empty() ? 0 : n);
    for (const auto& t : tokenize(text)) {
        if (t.is_comment() || t.kind == TokenKind::Attribute) continue;
        std::size_t i = static_cast<std::size_t>(t.line - 1);
        if (i >= out.size()) out.resize(i + 1);
        if (!out[i].empty()) out[i] += ' ';
        out[i] += t.text;
    }
    return out;
}

namespace {

std::vector<std::string> non_empty(const std::vector<std::string>& lines) {
    std::vector<std::string> out;
    for (const auto& l : lines) {
        if (!l.empty()) out.push_back(l);
    }
    return out;
}

Span span_at(const std::string& text, std::size_t begin, std::size_t end) {
    Span s;
    s.begin = begin;
    s.end = end;
    auto pos = [&](std::size_t off, int& line, int& col) {
        line = 1 + static_cast<int>(std::count(text.begin(), text.begin() + off, '\n'));
        col = 1 + static_cast<int>(off - line_start(text, off));
    };
    pos(begin, s.start_line, s.start_col);
    pos(end > begin ? end - 1 : begin, s.end_line, s.end_col);
    return s;
}

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\r'; }

// Whole lines when the segment has the lines to itself (trailing line comments allowed),
// otherwise the segment plus adjacent blanks on its line.
std::pair<std::size_t, std::size_t> cut_for(const std::string& text, const Span& span) {
    std::size_t ls = line_start(text, span.begin);
    bool prefix_blank = true;
    for (std::size_t k = ls; k < span.begin; ++k) prefix_blank &= is_space(text[k]);
    std::size_t le = text.find('\n', span.end > 0 ? span.end - 1 : 0);
    if (span.end > 0 && text[span.end - 1] == '\n') le = span.end - 1;
    if (le == std::string::npos) le = text.size();
    std::size_t k = span.end;
    while (k < le && is_space(text[k])) ++k;
    bool suffix_ok = k == le || text.compare(k, 2, "//") == 0;
    if (prefix_blank && suffix_ok) return {ls, le < text.size() ? le + 1 : le};
    if (prefix_blank) return {span.begin, k};
    std::size_t b = span.begin;
    while (b > ls && is_space(text[b - 1])) --b;
    return {b, span.end};
}

std::size_t skip_back_space(const std::string& text, std::size_t pos) {
    while (pos > 0 && (is_space(text[pos - 1]) || text[pos - 1] == '\n')) --pos;
    return pos;
}

bool is_header_clause_kind(ClauseKind k) {
    return k == ClauseKind::Requires || k == ClauseKind::Ensures || k == ClauseKind::Decreases ||
           k == ClauseKind::Reads || k == ClauseKind::Modifies;
}

struct Extractor {
    const SourceFile& file;
    const DeltaAlignment* delta;
    const std::vector<std::string>& original_norm;
    std::vector<CandidateSegment> out;

    bool admissible(const CandidateSegment& c) const {
        if (delta && whole_lines(c) && lines_unmatched(c)) return true;
        return contains_original(original_norm, c.apply(file.text));
    }

    bool whole_lines(const CandidateSegment& c) const {
        return !c.replacement && c.cut_begin == line_start(file.text, c.cut_begin) &&
               (c.cut_end == file.text.size() || file.text[c.cut_end - 1] == '\n');
    }

    bool lines_unmatched(const CandidateSegment& c) const {
        std::size_t first = std::count(file.text.begin(), file.text.begin() + c.cut_begin, '\n');
        std::size_t last = std::count(file.text.begin(), file.text.begin() + c.cut_end - 1, '\n');
        for (std::size_t l = first; l <= last && l < delta->pairs.size(); ++l) {
            if (delta->pairs[l].first >= 0) return false;
        }
        return true;
    }

    void add(CandidateSegment c) {
        if (c.cut_end <= c.cut_begin) return;
        if (admissible(c)) out.push_back(std::move(c));
    }

    CandidateSegment make(CandidateCategory cat, const Span& span, const std::string& owner, int depth) {
        CandidateSegment c;
        c.category = cat;
        c.span = span;
        c.owner_decl = owner;
        c.depth = depth;
        std::tie(c.cut_begin, c.cut_end) = cut_for(file.text, span);
        return c;
    }

    void walk(const std::vector<Statement>& stmts, const std::string& owner, int depth) {
        for (const auto& s : stmts) {
            auto whole = make(CandidateCategory::Statement, s.span, owner, depth);
            whole.body_internal = true;
            add(whole);
            if (s.else_part && s.body) {
                CandidateSegment c = make(CandidateCategory::BlockPart, *s.else_part, owner, depth);
                c.cut_begin = skip_back_space(file.text, s.else_part->begin);
                c.cut_end = s.else_part->end;
                c.body_internal = true;
                add(c);
            }
            if (s.by_part) {
                CandidateSegment c = make(CandidateCategory::BlockPart, *s.by_part, owner, depth);
                c.cut_begin = skip_back_space(file.text, s.by_part->begin);
                c.cut_end = s.by_part->end;
                if (c.cut_end < file.text.size() && file.text[c.cut_end] == ';') ++c.cut_end;
                c.replacement = ";";
                c.body_internal = true;
                add(c);
            }
            for (const auto& cl : s.loop_clauses) {
                auto c = make(CandidateCategory::LoopClause, cl.span, owner, depth + 1);
                c.body_internal = true;
                add(c);
            }
            walk(s.children, owner, depth + 1);
        }
        groups(stmts, owner, depth);
    }

    void groups(const std::vector<Statement>& stmts, const std::string& owner, int depth) {
        std::size_t i = 0;
        while (i < stmts.size()) {
            std::size_t j = i;
            std::vector<CandidateSegment> members;
            while (j < stmts.size()) {
                const auto& s = stmts[j];
                if (s.span.start_line != s.span.end_line) break;
                if (!members.empty() && s.span.start_line == stmts[j - 1].span.end_line) break;
                auto c = make(CandidateCategory::Statement, s.span, owner, depth);
                if (!whole_lines(c) || !admissible(c)) break;
                members.push_back(c);
                ++j;
            }
            if (members.size() >= 2) {
                CandidateSegment g = make(CandidateCategory::StatementGroup, span_at(file.text, stmts[i].span.begin, stmts[j - 1].span.end), owner, depth);
                g.cut_begin = members.front().cut_begin;
                g.cut_end = members.back().cut_end;
                g.body_internal = true;
                add(g);
            }
            i = j > i ? j : i + 1;
        }
    }

    void run() {
        for (const auto& d : file.declarations) {
            for (const auto& cl : d.clauses) {
                if (cl.span.end > d.header_span.end || !is_header_clause_kind(cl.kind) || cl.is_negative_test) continue;
                auto c = make(CandidateCategory::DeclClause, cl.span, d.name, 0);
                c.in_header = true;
                add(c);
            }
            walk(d.body, d.name, 1);
        }
        std::sort(out.begin(), out.end(), [](const CandidateSegment& a, const CandidateSegment& b) {
            return std::make_tuple(a.cut_begin, b.cut_end, static_cast<int>(a.category)) <
                   std::make_tuple(b.cut_begin, a.cut_end, static_cast<int>(b.category));
        });
        out.erase(std::unique(out.begin(), out.end(),
                              [](const CandidateSegment& a, const CandidateSegment& b) {
                                  return a.cut_begin == b.cut_begin && a.cut_end == b.cut_end &&
                                         a.replacement == b.replacement;
                              }),
                  out.end());
    }
};

}  // namespace

// ---- delta ----------------------------------------------------------------------------

DeltaAlignment compute_delta(const std::string& original_text, const std::string& extended_text) {
    auto on = normalized_lines(original_text);
    auto en = normalized_lines(extended_text);
    std::vector<std::string> a, b;
    std::vector<int> a_idx, b_idx;
    for (std::size_t i = 0; i < on.size(); ++i) {
        if (!on[i].empty()) {
            a.push_back(on[i]);
            a_idx.push_back(static_cast<int>(i));
        }
    }
    for (std::size_t j = 0; j < en.size(); ++j) {
        if (!en[j].empty()) {
            b.push_back(en[j]);
            b_idx.push_back(static_cast<int>(j));
        }
    }
    auto matches = lcs_align(a, b);
    if (matches.size() < a.size()) {
        std::size_t k = 0;
        for (; k < matches.size() && matches[k].first == k; ++k) {}
        std::string raw = parse(original_text).lines.at(a_idx[k]);
        throw OriginalNotContained(a_idx[k] + 1, collapse_whitespace(raw));
    }
    DeltaAlignment d;
    d.pairs.resize(en.size());
    for (std::size_t j = 0; j < en.size(); ++j) d.pairs[j] = {-1, static_cast<int>(j)};
    for (const auto& [i, j] : matches) d.pairs[b_idx[j]].first = a_idx[i];

    std::optional<LineRun> run;
    for (std::size_t j = 0; j < en.size(); ++j) {
        if (en[j].empty()) continue;
        if (d.pairs[j].first >= 0) {
            if (run) d.inserted_runs.push_back(*run);
            run.reset();
        } else if (run) {
            run->last = static_cast<int>(j);
        } else {
            run = LineRun{static_cast<int>(j), static_cast<int>(j)};
        }
    }
    if (run) d.inserted_runs.push_back(*run);
    return d;
}

bool contains_original(const std::vector<std::string>& original_norm, const std::string& text) {
    auto lines = normalized_lines(text);
    std::size_t i = 0;
    for (const auto& l : lines) {
        if (i == original_norm.size()) break;
        if (!l.empty() && l == original_norm[i]) ++i;
    }
    return i == original_norm.size();
}

// ---- candidates -----------------------------------------------------------------------

std::string CandidateSegment::apply(const std::string& text) const {
    return text.substr(0, cut_begin) + replacement.value_or("") + text.substr(cut_end);
}

std::vector<CandidateSegment> extract_candidates(const DeltaAlignment& delta, const SourceFile& extended_file,
                                                 const std::vector<std::string>& original_norm) {
    Extractor ex{extended_file, &delta, original_norm, {}};
    ex.run();
    return ex.out;
}

std::vector<CandidateSegment> extract_candidates(const std::string& original_text, const SourceFile& extended_file) {
    auto delta = compute_delta(original_text, extended_file.text);
    return extract_candidates(delta, extended_file, non_empty(normalized_lines(original_text)));
}

// ---- dependencies ---------------------------------------------------------------------

std::set<std::string> DependencyGraph::referrers(const std::string& name) const {
    std::set<std::string> out;
    for (const auto& [from, to] : edges) {
        if (to.count(name)) out.insert(from);
    }
    return out;
}

DependencyGraph build_dependencies(const SourceFile& file) {
    DependencyGraph g;
    std::set<std::string> names;
    for (const auto& d : file.declarations) {
        if (d.name.empty()) continue;
        names.insert(d.name);
        g.edges[d.name];
        g.ref_count[d.name];
    }
    auto tokens = tokenize(file.text);
    for (const auto& d : file.declarations) {
        if (d.name.empty()) continue;
        for (const auto& t : tokens) {
            if (t.begin < d.span.begin || t.end > d.span.end || t.kind != TokenKind::Identifier) continue;
            std::string id(t.text);
            if (id != d.name && names.count(id)) g.edges[d.name].insert(id);
        }
    }
    for (const auto& [from, to] : g.edges) {
        for (const auto& n : to) ++g.ref_count[n];
    }
    return g;
}

std::pair<std::string, std::vector<std::string>> remove_unreferenced(const std::string& text,
                                                                     const std::set<std::string>& keep_names) {
    SourceFile f = parse(text);
    auto g = build_dependencies(f);
    auto removable = [&](const Declaration& d) {
        if (d.name.empty() || keep_names.count(d.name) || d.kind == DeclKind::Other) return false;
        for (const auto& o : f.declarations) {
            if (&o != &d && d.span.contains(o.span)) return false;
        }
        return true;
    };
    std::set<std::string> reached;
    std::deque<std::string> work;
    for (const auto& d : f.declarations) {
        if (!removable(d) && !d.name.empty() && reached.insert(d.name).second) work.push_back(d.name);
    }
    while (!work.empty()) {
        std::string n = work.front();
        work.pop_front();
        for (const auto& m : g.edges[n]) {
            if (reached.insert(m).second) work.push_back(m);
        }
    }
    std::vector<TextEdit> edits;
    std::vector<std::string> removed;
    for (const auto& d : f.declarations) {
        if (!removable(d) || reached.count(d.name)) continue;
        std::size_t b = line_start(text, d.span.begin);
        std::size_t e = next_line_start(text, d.span.end > 0 ? d.span.end - 1 : 0);
        // attached comment lines above
        while (b > 0) {
            std::size_t pb = line_start(text, b - 1);
            std::string line = text.substr(pb, b - 1 - pb);
            auto first = line.find_first_not_of(" \t\r");
            if (first == std::string::npos || line.compare(first, 2, "//") != 0) break;
            b = pb;
        }
        // one adjoining blank line
        std::size_t ne = next_line_start(text, e);
        if (e < text.size() && text.substr(e, ne - e).find_first_not_of(" \t\r\n") == std::string::npos) {
            e = ne;
        } else if (b > 0) {
            std::size_t pb = line_start(text, b - 1);
            if (text.substr(pb, b - pb).find_first_not_of(" \t\r\n") == std::string::npos) b = pb;
        }
        edits.push_back({b, e, ""});
        removed.push_back(d.name);
    }
    if (edits.empty()) return {text, {}};
    return {apply_edits(text, edits), removed};
}

// ---- minimization ---------------------------------------------------------------------

nlohmann::json to_json(const RemovalRecord& r) {
    return {{"category", r.category},
            {"owner", r.owner},
            {"round", r.round},
            {"start_line", r.span.start_line},
            {"end_line", r.span.end_line},
            {"removed_text", r.removed_text},
            {"removed_declarations", r.removed_declarations},
            {"loc_after", r.loc_after}};
}

namespace {

int loc_of(const std::string& text) {
    LocStats s = count_loc(parse(text));
    return s.L + s.A;
}

class Minimizer {
public:
    Minimizer(const std::string& original, Verifier& verifier, const MinimizeOptions& opts)
        : verifier_(verifier), opts_(opts), original_norm_(non_empty(normalized_lines(original))) {
        for (const auto& d : parse(original).declarations) {
            if (!d.name.empty()) keep_.insert(d.name);
        }
    }

    MinimizeResult run(const std::string& extended) {
        current_ = extended;
        if (opts_.check_initial) {
            VerificationOutcome o = call(current_, std::nullopt, opts_.verifier.timeout_s);
            if (o.status == VerifyStatus::ToolError) return abort("verifier tool error on the extended program");
            if (o.status != VerifyStatus::Success) throw ExtendedNotVerified();
        }
        sweep_unreferenced();
        if (result_.aborted) return finish();
        for (int round = 1; round <= opts_.max_rounds; ++round) {
            result_.rounds = round;
            int commits = run_round(round);
            if (result_.aborted || commits == 0) break;
        }
        return finish();
    }

private:
    Verifier& verifier_;
    MinimizeOptions opts_;
    std::vector<std::string> original_norm_;
    std::set<std::string> keep_;
    std::string current_;
    MinimizeResult result_;
    std::map<std::string, VerificationOutcome> memo_;
    std::map<std::string, double> baseline_;

    long clock_ = 0;
    bool cancelled_ = false;
    std::map<std::string, long> header_mod_, body_mod_;
    std::map<std::string, long> last_visit_;

    MinimizeResult abort(std::string reason) {
        result_.aborted = true;
        result_.abort_reason = cancelled_ ? "cancelled" : std::move(reason);
        return finish();
    }

    MinimizeResult finish() {
        result_.text = current_;
        return result_;
    }

    VerificationOutcome call(const std::string& text, const std::optional<std::string>& filter, double timeout) {
        VerifierConfig cfg = opts_.verifier;
        cfg.timeout_s = timeout;
        if (filter && opts_.use_filter_symbol) cfg.filter_symbol = filter;
        std::string key = cache_key(text, cfg);
        auto it = memo_.find(key);
        if (it != memo_.end()) return it->second;
        if (opts_.cancelled && opts_.cancelled()) {
            cancelled_ = true;
            return VerificationOutcome{};  // ToolError stops the job
        }
        ++result_.verifier_calls;
        VerificationOutcome o = verifier_.verify(text, cfg);
        if (o.status != VerifyStatus::ToolError) memo_[key] = o;
        return o;
    }

    void sweep_unreferenced() {
        auto [tent, removed] = remove_unreferenced(current_, keep_);
        if (removed.empty() || !contains_original(original_norm_, tent)) return;
        VerificationOutcome o = call(tent, std::nullopt, opts_.short_timeout_s);
        if (o.status == VerifyStatus::ToolError) {
            abort("verifier tool error");
            return;
        }
        if (o.status != VerifyStatus::Success) return;
        RemovalRecord r;
        r.category = "unreferenced-declaration";
        r.round = 0;
        r.removed_declarations = removed;
        r.loc_after = loc_of(tent);
        result_.removals.push_back(r);
        if (opts_.on_removal) opts_.on_removal(r);
        current_ = tent;
        ++clock_;
    }

    long modified(const std::string& d) const {
        auto h = header_mod_.find(d);
        auto b = body_mod_.find(d);
        return std::max(h == header_mod_.end() ? 0L : h->second, b == body_mod_.end() ? 0L : b->second);
    }

    long header_modified(const std::string& d) const {
        auto h = header_mod_.find(d);
        return h == header_mod_.end() ? 0L : h->second;
    }

    bool eligible(const CandidateSegment& c, const std::string& key, const DependencyGraph& g) const {
        auto it = last_visit_.find(key);
        long seen = it == last_visit_.end() ? -1 : it->second;
        const std::string& d = c.owner_decl;
        if (modified(d) > seen) return true;
        auto e = g.edges.find(d);
        if (e != g.edges.end()) {
            for (const auto& ref : e->second) {
                if (header_modified(ref) > seen) return true;
            }
        }
        if (c.in_header) {
            for (const auto& r : g.referrers(d)) {
                if (modified(r) > seen) return true;
            }
        }
        return false;
    }

    std::string identity(const CandidateSegment& c, std::map<std::string, int>& seen) const {
        std::string base = std::string(to_string(c.category)) + '\x1f' + c.owner_decl + '\x1f' +
                           collapse_whitespace(current_.substr(c.cut_begin, c.cut_end - c.cut_begin)) + '\x1f' +
                           c.replacement.value_or("");
        return base + '\x1f' + std::to_string(seen[base]++);
    }

    struct Ordered {
        std::vector<CandidateSegment> cands;
        std::vector<std::string> keys;
        DependencyGraph graph;
    };

    Ordered ordered_candidates() const {
        SourceFile f = parse(current_);
        Extractor ex{f, nullptr, original_norm_, {}};
        ex.run();
        Ordered o;
        std::map<std::string, int> seen;
        for (const auto& c : ex.out) o.keys.push_back(identity(c, seen));
        std::vector<std::size_t> idx(ex.out.size());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
            const auto& x = ex.out[a];
            const auto& y = ex.out[b];
            return std::make_tuple(x.cut_end, x.cut_end - x.cut_begin) > std::make_tuple(y.cut_end, y.cut_end - y.cut_begin);
        });
        std::vector<std::string> keys;
        for (auto i : idx) {
            o.cands.push_back(ex.out[i]);
            keys.push_back(o.keys[i]);
        }
        o.keys = std::move(keys);
        o.graph = build_dependencies(f);
        return o;
    }

    bool slower(const CandidateSegment& c, const VerificationOutcome& o) {
        if (!opts_.max_time_factor) return false;
        std::string scope = c.body_internal ? c.owner_decl : std::string();
        auto it = baseline_.find(scope);
        if (it == baseline_.end()) {
            std::optional<std::string> filter;
            if (!scope.empty()) filter = scope;
            it = baseline_.emplace(scope, call(current_, filter, opts_.short_timeout_s).elapsed_s).first;
        }
        return o.elapsed_s > *opts_.max_time_factor * it->second;
    }

    int run_round(int round) {
        int commits = 0;
        Ordered ord = ordered_candidates();
        std::size_t i = 0;
        int current_loc = loc_of(current_);
        while (i < ord.cands.size()) {
            const CandidateSegment c = ord.cands[i];
            const std::string key = ord.keys[i];
            if (opts_.use_eligibility && !eligible(c, key, ord.graph)) {
                ++result_.skipped_ineligible;
                ++i;
                continue;
            }
            last_visit_[key] = clock_;
            auto [tent, removed_decls] = remove_unreferenced(c.apply(current_), keep_);
            int tent_loc = loc_of(tent);
            if (tent_loc >= current_loc || !contains_original(original_norm_, tent)) {
                ++i;
                continue;
            }
            std::optional<std::string> filter;
            if (c.body_internal) filter = c.owner_decl;
            VerificationOutcome o = call(tent, filter, opts_.short_timeout_s);
            if (o.status == VerifyStatus::ToolError) {
                abort("verifier tool error");
                return commits;
            }
            if (o.status != VerifyStatus::Success || slower(c, o)) {
                ++i;
                continue;
            }
            RemovalRecord r;
            r.category = std::string(to_string(c.category));
            r.span = span_at(current_, c.cut_begin, c.cut_end);
            r.owner = c.owner_decl;
            r.round = round;
            r.removed_text = current_.substr(c.cut_begin, c.cut_end - c.cut_begin);
            r.removed_declarations = removed_decls;
            r.loc_after = tent_loc;
            result_.removals.push_back(std::move(r));
            if (opts_.on_removal) opts_.on_removal(result_.removals.back());
            ++clock_;
            (c.in_header ? header_mod_ : body_mod_)[c.owner_decl] = clock_;
            if (opts_.max_time_factor) baseline_.erase(c.body_internal ? c.owner_decl : std::string());
            current_ = tent;
            current_loc = tent_loc;
            ++commits;

            ord = ordered_candidates();
            i = 0;
            while (i < ord.cands.size() && ord.cands[i].cut_end > c.cut_begin) ++i;
        }
        return commits;
    }
};

}  // namespace

MinimizeResult minimize(const std::string& original_text, const std::string& extended_text, Verifier& verifier,
                        const MinimizeOptions& opts) {
    compute_delta(original_text, extended_text);
    Minimizer m(original_text, verifier, opts);
    return m.run(extended_text);
}

}  // namespace specforge

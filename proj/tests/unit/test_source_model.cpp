#include <algorithm>
#include <random>

#include "doctest.h"
#include "json.hpp"
#include "specforge/lexer.hpp"
#include "specforge/source_model.hpp"
#include "test_support.hpp"

using namespace specforge;
using testing_support::read_file;

namespace {

int count_kind(const Declaration& d, ClauseKind k) {
    return static_cast<int>(std::count_if(d.clauses.begin(), d.clauses.end(),
                                          [&](const Clause& c) { return c.kind == k; }));
}

const char* kLoopMethod = R"(method SumTo(n: nat) returns (s: nat)
  ensures s == n * (n + 1) / 2
{
  s := 0;
  var i := 0;
  while i < n
    invariant 0 <= i <= n
    invariant s == i * (i + 1) / 2
  {
    i := i + 1;
    s := s + i;
  }
}
)";

}  // namespace

TEST_CASE("lexer distinguishes primes from char literals") {
    auto toks = tokenize("var x' := 'a'; var y := x'';");
    std::vector<std::string> texts;
    for (auto& t : toks) texts.emplace_back(t.text);
    CHECK(texts[1] == "x'");
    CHECK(toks[3].kind == TokenKind::Char);
    CHECK(texts[8] == "x''");
}

TEST_CASE("lexer keeps ranges and attributes whole") {
    auto toks = tokenize("a[1..3] {:fuel 5} /* a /* nested */ c */ x");
    CHECK(toks[2].text == "1");
    CHECK(toks[3].text == "..");
    CHECK(toks[6].kind == TokenKind::Attribute);
    CHECK(toks[6].text == "{:fuel 5}");
    CHECK(toks[7].kind == TokenKind::BlockComment);
    CHECK(toks[8].text == "x");
}

TEST_CASE("empty input has no declarations") {
    auto f = parse("");
    CHECK(f.declarations.empty());
    CHECK(count_loc(f) == LocStats{});
}

TEST_CASE("binary search example segments into three declarations") {
    auto f = parse(read_file("tests/fixtures/fig2_binary_search.dfy"));
    REQUIRE(f.declarations.size() == 3);
    CHECK(f.declarations[0].kind == DeclKind::GhostPredicate);
    CHECK(f.declarations[0].name == "IsSorted");
    CHECK(f.declarations[1].kind == DeclKind::Method);
    CHECK(f.declarations[1].name == "BinarySearch");
    CHECK_FALSE(f.declarations[1].is_test);
    CHECK(f.declarations[2].name == "TestBinarySearch");
    CHECK(f.declarations[2].is_test);
    CHECK(f.warnings.empty());

    const auto& bs = f.declarations[1];
    CHECK(count_kind(bs, ClauseKind::Requires) == 1);
    CHECK(count_kind(bs, ClauseKind::Ensures) == 1);
    CHECK(count_kind(bs, ClauseKind::Invariant) == 2);
    CHECK(bs.header_span.end_line == 7);
    REQUIRE(bs.body_span);
    CHECK(bs.body_span->start_line == 8);
    CHECK(bs.body_span->end_line == 24);
}

TEST_CASE("binary search example line accounting") {
    auto f = parse(read_file("tests/fixtures/fig2_binary_search.dfy"));
    auto s = count_loc(f);
    CHECK(s.L == 23);
    CHECK(s.A == 9);
    CHECK(s.H == 2);
}

TEST_CASE("binary search oracle asserts exclude helpers") {
    auto f = parse(read_file("tests/fixtures/fig2_binary_search.dfy"));
    auto oracles = test_oracle_asserts(f);
    REQUIRE(oracles.size() == 2);
    CHECK(oracles[0].text == "assert idx == 2;");
    CHECK(oracles[1].text == "assert idx == -1;");
    const auto& test = f.declarations[2];
    auto neg = std::find_if(test.clauses.begin(), test.clauses.end(),
                            [](const Clause& c) { return c.is_negative_test; });
    REQUIRE(neg != test.clauses.end());
    CHECK(neg->span.start_line == 33);
}

TEST_CASE("loop invariants are owned by the loop") {
    auto f = parse(kLoopMethod);
    REQUIRE(f.declarations.size() == 1);
    const auto& d = f.declarations[0];
    CHECK(f.lines.size() == 13);
    int inv = 0;
    for (const auto& c : d.clauses) {
        if (c.kind == ClauseKind::Invariant) {
            ++inv;
            CHECK(c.owner == "SumTo.loop1");
        }
    }
    CHECK(inv == 2);
    auto stmts = flatten(d.body);
    auto loop = std::find_if(stmts.begin(), stmts.end(),
                             [](const Statement* s) { return s->kind == StmtKind::While; });
    REQUIRE(loop != stmts.end());
    CHECK((*loop)->loop_clauses.size() == 2);
    CHECK((*loop)->children.size() == 2);
}

TEST_CASE("oracle asserts skip tagged helpers") {
    auto f = parse(R"(method Inc(x: int) returns (y: int) ensures y == x + 1 { y := x + 1; }
method TestInc() {
  var r := Inc(1);
  assert r == 2;
  assert r > 0; // helper
  assert r != 3;
}
)");
    CHECK(test_oracle_asserts(f).size() == 2);
    auto none = parse("method M() { assert true; }");
    CHECK(test_oracle_asserts(none).empty());
}

TEST_CASE("test flag follows name and attribute rules") {
    auto f = parse(R"(method Main() { }
method {:test} Check() { }
method Tester() { }
method Other() { }
)");
    REQUIRE(f.declarations.size() == 4);
    CHECK(f.declarations[0].is_test);
    CHECK(f.declarations[1].is_test);
    CHECK(f.declarations[2].is_test);
    CHECK_FALSE(f.declarations[3].is_test);
}

TEST_CASE("set displays are not mistaken for bodies") {
    auto f = parse(R"(method M(s: set<int>) returns (r: set<int>)
  requires s == {1, 2}
  ensures r == s + {3}
{
  r := s + {3};
}
)");
    REQUIRE(f.declarations.size() == 1);
    const auto& d = f.declarations[0];
    REQUIRE(d.body_span);
    CHECK(d.body_span->start_line == 4);
    CHECK(count_kind(d, ClauseKind::Requires) == 1);
    CHECK(count_kind(d, ClauseKind::Ensures) == 1);
}

TEST_CASE("function by method and decreases star") {
    auto f = parse(R"(function Fib(n: nat): nat { if n < 2 then n else Fib(n - 1) + Fib(n - 2) } by method {
  var a, b := 0, 1;
  for i := 0 to n { a, b := b, a + b; }
  return a;
}
method Spin() decreases * { while true decreases * { } }
)");
    REQUIRE(f.declarations.size() == 2);
    CHECK(f.declarations[0].kind == DeclKind::Function);
    CHECK(f.declarations[0].body_span->end_line == 5);
    CHECK(count_kind(f.declarations[1], ClauseKind::Decreases) == 2);
}

TEST_CASE("classes and modules are traversed") {
    auto f = parse(R"(module M {
  class Counter {
    var n: int
    constructor() ensures n == 0 { n := 0; }
    method Inc() modifies this ensures n == old(n) + 1 { n := n + 1; }
  }
}
)");
    std::vector<std::string> names;
    for (auto& d : f.declarations) names.push_back(d.name);
    CHECK(names == std::vector<std::string>{"n", "", "Inc"});
    CHECK(count_kind(f.declarations[2], ClauseKind::Modifies) == 1);
    CHECK(reconstruct(f) == f.text);
}

TEST_CASE("statement tree shapes") {
    auto f = parse(R"(method M(x: int) returns (y: int) {
  ghost var g := x;
  if x > 0 { y := 1; } else if x < 0 { y := -1; } else { y := 0; }
  assert y * y <= 1 by { assert y == 1 || y == -1 || y == 0; }
  calc == { y; y; }
  L(x);
  forall i | 0 <= i < 3 ensures true { }
}
lemma L(x: int) ensures true { }
)");
    const auto& body = f.declarations[0].body;
    REQUIRE(body.size() == 6);
    CHECK(body[0].kind == StmtKind::GhostVar);
    CHECK(body[1].kind == StmtKind::If);
    REQUIRE(body[1].else_part);
    CHECK(body[1].children.back().is_else_if);
    CHECK(body[2].kind == StmtKind::Assert);
    CHECK(body[2].by_part);
    CHECK(body[3].kind == StmtKind::Calc);
    CHECK(body[4].kind == StmtKind::Call);
    CHECK(body[4].callee == "L");
    CHECK(body[5].kind == StmtKind::Forall);
    auto s = count_loc(f);
    CHECK(s.L == 4);
    CHECK(s.A == 5);
    CHECK(s.H == 5);
}

TEST_CASE("unbalanced braces are tolerated with a warning") {
    auto f = parse("method M() {\n  var x := 1;\n  if x > 0 {\n");
    REQUIRE(f.declarations.size() == 1);
    REQUIRE(f.declarations[0].body_span);
    CHECK(f.declarations[0].body_span->end == f.text.size());
    CHECK_FALSE(f.warnings.empty());
}

TEST_CASE("negative test markers") {
    CHECK(negative_test_statement("  // assert idx == 0; //@invalid") == std::string("assert idx == 0;"));
    CHECK(negative_test_statement("  // M(x); //@invalid  ") == std::string("M(x);"));
    CHECK_FALSE(negative_test_statement("  assert idx == 0; //@invalid"));
    CHECK_FALSE(negative_test_statement("  // assert idx == 0;"));
    CHECK(line_has_helper_tag("  assert a[..] == [1]; // helper"));
    CHECK_FALSE(line_has_helper_tag("  // helper comment only"));
    CHECK_FALSE(line_has_helper_tag("  print \"// helper\";"));
}

TEST_CASE("normalization ignores layout, comments and attributes") {
    CHECK(normalize_code("function {:fuel 5} F(x: int): int  // c\n") ==
          normalize_code("function F(x:int):int"));
    CHECK(normalize_code("  a  :=  b ;") == "a := b ;");
}

// ---- properties --------------------------------------------------------------

namespace {

std::vector<std::string> property_inputs() {
    std::vector<std::string> out = {
        read_file("tests/fixtures/fig2_binary_search.dfy"),
        kLoopMethod,
        "}}}{{{",
        "method",
        "method M( {",
        "/* unterminated",
        "\"unterminated string",
        "ghost predicate P(x: int) { x > 0 } lemma L() ensures P(1) {}",
    };
    std::mt19937 rng(20240917);
    const std::string alphabet = "{}()[];:=<>!|&'\"/*\n \tabcxyz01assertwhileinvariant";
    for (int n = 0; n < 150; ++n) {
        std::string s;
        int len = static_cast<int>(rng() % 200);
        for (int i = 0; i < len; ++i) s += alphabet[rng() % alphabet.size()];
        out.push_back(s);
    }
    // Random truncations and deletions of a well-formed program.
    std::string base = out[0];
    for (int n = 0; n < 60; ++n) {
        std::string s = base;
        int cuts = 1 + static_cast<int>(rng() % 5);
        for (int c = 0; c < cuts && !s.empty(); ++c) {
            std::size_t pos = rng() % s.size();
            std::size_t len = std::min<std::size_t>(rng() % 20, s.size() - pos);
            s.erase(pos, len);
        }
        out.push_back(s);
    }
    return out;
}

}  // namespace

TEST_CASE("property: parsing is total and reconstruction is exact") {
    for (const auto& text : property_inputs()) {
        SourceFile f = parse(text);
        CHECK(reconstruct(f) == text);
        std::string joined;
        for (std::size_t i = 0; i < f.lines.size(); ++i) {
            if (i) joined += '\n';
            joined += f.lines[i];
        }
        CHECK((joined == text || joined + "\n" == text));
        for (const auto& d : f.declarations) {
            CHECK(d.span.end <= text.size());
            CHECK(d.span.begin <= d.span.end);
            if (d.body_span) CHECK(d.header_span.begin <= d.body_span->begin);
        }
        for (std::size_t i = 1; i < f.declarations.size(); ++i) {
            CHECK_FALSE(f.declarations[i - 1].span.overlaps(f.declarations[i].span));
        }
    }
}

TEST_CASE("property: accounting is pure, bounded and additive") {
    for (const auto& text : property_inputs()) {
        SourceFile f = parse(text);
        LocStats a = count_loc(f);
        LocStats b = count_loc(f);
        CHECK(a == b);
        CHECK(0 <= a.H);
        CHECK(a.H <= a.A);
        int code_lines = 0;
        {
            std::vector<bool> has(f.lines.size() + 1, false);
            for (const auto& t : tokenize(f.text)) {
                if (t.is_comment()) continue;
                for (int l = t.line; l <= t.line + static_cast<int>(std::count(
                                                     t.text.begin(), t.text.end(), '\n'));
                     ++l) {
                    if (l <= static_cast<int>(f.lines.size())) has[l] = true;
                }
            }
            code_lines = static_cast<int>(std::count(has.begin(), has.end(), true));
        }
        CHECK(a.L + a.A <= code_lines);
        // Split at every line boundary: per-range counts add up to the whole.
        int n = static_cast<int>(f.lines.size());
        if (n > 1) {
            int mid = n / 2;
            LocStats lo = count_loc_lines(f, 1, mid);
            LocStats hi = count_loc_lines(f, mid + 1, n);
            lo += hi;
            CHECK(lo == a);
        }
    }
}

TEST_CASE("property: declaration totals plus free lines equal the file total") {
    SourceFile f = parse(read_file("tests/fixtures/fig2_binary_search.dfy"));
    LocStats sum;
    int covered_to = 0;
    for (const auto& d : f.declarations) {
        if (d.span.start_line > covered_to + 1) sum += count_loc_lines(f, covered_to + 1, d.span.start_line - 1);
        sum += count_loc_lines(f, d.span.start_line, d.span.end_line);
        covered_to = d.span.end_line;
    }
    sum += count_loc_lines(f, covered_to + 1, static_cast<int>(f.lines.size()));
    CHECK(sum == count_loc(f));
}

TEST_CASE("property: oracle asserts are asserts inside test declarations") {
    for (const auto& text : property_inputs()) {
        SourceFile f = parse(text);
        for (const auto& c : test_oracle_asserts(f)) {
            CHECK(c.kind == ClauseKind::Assert);
            bool inside = std::any_of(f.declarations.begin(), f.declarations.end(), [&](const Declaration& d) {
                return d.is_test && d.span.contains(c.span);
            });
            CHECK(inside);
        }
    }
}

TEST_CASE("sample corpus matches hand-counted manifest values") {
    auto manifest = nlohmann::json::parse(read_file("corpus/sample/manifest.json"));
    LocStats total, expected_total;
    for (const auto& p : manifest["programs"]) {
        CAPTURE(p["id"].get<std::string>());
        auto s = count_loc(parse(read_file("corpus/sample/" + p["file"].get<std::string>())));
        LocStats expected{p["expected"]["L"].get<int>(), p["expected"]["A"].get<int>(),
                          p["expected"]["H"].get<int>()};
        CHECK(s.L == expected.L);
        CHECK(s.A == expected.A);
        CHECK(s.H == expected.H);
        total += s;
        expected_total += expected;
    }
    CHECK(total == expected_total);
    CHECK(expected_total == LocStats{99, 56, 14});
}

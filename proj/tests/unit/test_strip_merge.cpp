#include <algorithm>
#include <map>
#include <set>

#include "doctest.h"
#include "specforge/source_model.hpp"
#include "specforge/strip_merge.hpp"
#include "guardrail_support.hpp"

using namespace specforge;
using namespace testing_support;

namespace {

const std::vector<std::string> kCorpus = {
    "corpus/sample/programs/binary_search.dfy", "corpus/sample/programs/power.dfy",
    "corpus/sample/programs/palindrome.dfy",    "corpus/sample/programs/reverse.dfy",
    "corpus/sample/programs/sum_array.dfy",     "corpus/sample/programs/count_evens.dfy",
};

std::multiset<std::string> oracle_texts(const SourceFile& f) {
    std::multiset<std::string> out;
    for (const auto& c : test_oracle_asserts(f)) out.insert(c.owner + ":" + normalize_code(c.text));
    return out;
}

int count_clauses(const SourceFile& f, ClauseKind k) {
    int n = 0;
    for (const auto& d : f.declarations) {
        for (const auto& c : d.clauses) n += c.kind == k && !c.is_negative_test;
    }
    return n;
}

std::vector<std::string> lines_of(const std::string& text) { return parse(text).lines; }

}  // namespace

TEST_CASE("strip of the binary search example") {
    std::string stripped = strip_annotations(read_file("tests/fixtures/fig2_binary_search.dfy"));
    const std::string expected = R"(// Finds the index of a value x in a sorted array a, or returns -1 if x is absent.
method BinarySearch(a: array<int>, x: int) returns (index: int)
{
  var low, high := 0, a.Length;
  while low < high
  {
    var mid := low + (high - low) / 2;
    if a[mid] < x {
      low := mid + 1;
    } else if a[mid] > x {
      high := mid;
    } else {
      return mid;
    }
  }
  return -1;
}

// Test cases checked statically using the method's contract.
method TestBinarySearch()
{
  var a := new int[] [1, 3, 5, 7, 9];
  var idx := BinarySearch(a, 5);
  assert idx == 2;
  // assert idx == 0; //@invalid
  var b := new int[] [2, 4, 6];
  idx := BinarySearch(b, 5);
  assert idx == -1;
}
)";
    CHECK(stripped == expected);
}

TEST_CASE("strip removes lemmas referenced only by removed annotations") {
    std::string src = R"(lemma Helper(n: nat) ensures n + 0 == n { }

method M(n: nat) returns (r: nat) ensures r == n {
  Helper(n);
  r := n; // result
}
)";
    SourceFile out = parse(strip_annotations(src));
    CHECK(out.find("Helper") == nullptr);
    REQUIRE(out.declarations.size() == 1);
    CHECK(out.text == "method M(n: nat) returns (r: nat) {\n  r := n; // result\n}\n");
}

TEST_CASE("strip keeps partial lines tidy") {
    CHECK(strip_annotations("method M() ensures true { assert 1 == 1; var x := 1; }\n") ==
          "method M() { var x := 1; }\n");
}

TEST_CASE("extract code block") {
    CHECK(extract_code_block("BEGIN DAFNY\nmethod M(){}\nEND DAFNY") == "method M(){}");
    CHECK(extract_code_block("Sure! Here it is:\nBEGIN DAFNY\nmethod M() {}\nEND DAFNY\nHope this helps.") ==
          "method M() {}");
    CHECK(extract_code_block("BEGIN DAFNY\n```dafny\nmethod M() {}\n```\nEND DAFNY") == "method M() {}");
    CHECK(extract_code_block("Text\n```dafny\nmethod F() {}\n```\nmore") == "method F() {}");
    CHECK_THROWS_AS(extract_code_block("I cannot help with that."), NoCodeBlock);
}

TEST_CASE("relocate invariants") {
    std::string ok = "method M(n: nat) {\n  var i := 0;\n  while i < n\n    invariant i <= n\n  {\n    i := i + 1;\n  }\n}\n";
    CHECK(relocate_invariants(ok) == ok);

    std::string inside = "method M(n: nat) {\n  var i := 0;\n  while i < n {\n    invariant i <= n\n    i := i + 1;\n  }\n}\n";
    std::string fixed = relocate_invariants(inside);
    CHECK(fixed == "method M(n: nat) {\n  var i := 0;\n  while i < n\n    invariant i <= n\n  {\n    i := i + 1;\n  }\n}\n");
    SourceFile f = parse(fixed);
    REQUIRE(f.declarations.size() == 1);
    auto inv = std::find_if(f.declarations[0].clauses.begin(), f.declarations[0].clauses.end(),
                            [](const Clause& c) { return c.kind == ClauseKind::Invariant; });
    REQUIRE(inv != f.declarations[0].clauses.end());
    CHECK(inv->owner == "M.loop1");

    std::string trailing =
        "method S(a: array<int>) {\n  var s := 0;\n  for i := 0 to a.Length\n  {\n    s := s + a[i];\n  }\n  invariant s >= 0\n}\n";
    std::string moved = relocate_invariants(trailing);
    CHECK(moved ==
          "method S(a: array<int>) {\n  var s := 0;\n  for i := 0 to a.Length\n    invariant s >= 0\n  {\n    s := s + a[i];\n  }\n}\n");
}

TEST_CASE("cheating detection examples") {
    std::string original_text = strip_annotations(read_file("tests/fixtures/fig2_binary_search.dfy"));
    SourceFile original = parse(original_text);
    SourceFile clean = parse(read_file("tests/fixtures/fig2_binary_search.dfy"));
    CHECK(detect_cheating(original, clean).empty());

    std::string with_assume = clean.text;
    with_assume.replace(with_assume.find("  var low, high"), 0, "  assume x > 0;\n");
    auto v = detect_cheating(original, parse(with_assume));
    REQUIRE(v.size() == 1);
    CHECK(v[0].kind == Violation::Kind::Assume);

    std::string deleted = clean.text;
    deleted.erase(deleted.find("  assert idx == 2;\n"), std::string("  assert idx == 2;\n").size());
    v = detect_cheating(original, parse(deleted));
    REQUIRE(v.size() == 1);
    CHECK(v[0].kind == Violation::Kind::RemovedTestAssertion);
    CHECK(v[0].detail == "assert idx == 2;");

    std::string star = clean.text;
    star.replace(star.find("    invariant 0 <= low"), 0, "    decreases *\n");
    v = detect_cheating(original, parse(star));
    REQUIRE(v.size() == 1);
    CHECK(v[0].kind == Violation::Kind::DecreasesStar);
    CheatingOptions allow;
    SourceFile star_file = parse(star, "lib/trusted.dfy");
    allow.decreases_star_whitelist.push_back("lib/trusted.dfy");
    CHECK(detect_cheating(original, star_file, allow).empty());

    std::string altered = clean.text;
    altered.replace(altered.find("low := mid + 1;"), std::string("low := mid + 1;").size(), "low := mid;");
    v = detect_cheating(original, parse(altered));
    REQUIRE(v.size() == 1);
    CHECK(v[0].kind == Violation::Kind::AlteredCode);
    CHECK(v[0].detail == "low := mid + 1;");
}

TEST_CASE("cheating detection tolerates layout and attributes") {
    SourceFile original = parse(strip_annotations(read_file("corpus/sample/programs/sum_array.dfy")));
    std::string reformatted = read_file("corpus/sample/programs/sum_array.dfy");
    auto pos = reformatted.find("ghost function Sum");
    reformatted.replace(pos, std::string("ghost function Sum").size(), "ghost function {:fuel 5} Sum");
    pos = reformatted.find("total := total + a[i];");
    reformatted.replace(pos, std::string("total := total + a[i];").size(), "total :=\n      total + a[i];");
    CHECK(detect_cheating(original, parse(reformatted)).empty());
}

TEST_CASE("merge with manual") {
    std::string manual_text = read_file("tests/fixtures/fig2_binary_search.dfy");
    SourceFile manual = parse(manual_text);
    std::string merged_same = merge_with_manual(manual, manual);
    CHECK(merged_same == manual_text);

    std::string cand = manual_text;
    std::string ens = "  ensures if x in a[..] then 0 <= index < a.Length && a[index] == x else index == -1\n";
    cand.erase(cand.find(ens), ens.size());
    cand.replace(cand.find("  requires IsSorted(a[..])"), std::string("  requires IsSorted(a[..])").size(),
                 "  requires IsSorted(a[..])\n  ensures -1 <= index < a.Length");
    std::string merged = merge_with_manual(parse(cand), manual);
    SourceFile mf = parse(merged);
    const Declaration* bs = mf.find("BinarySearch");
    REQUIRE(bs);
    std::vector<std::string> ensures;
    for (const auto& c : bs->clauses) {
        if (c.kind == ClauseKind::Ensures) ensures.push_back(c.text);
    }
    REQUIRE(ensures.size() == 2);
    CHECK(ensures[0] == "ensures -1 <= index < a.Length");
    CHECK(ensures[1] == "ensures if x in a[..] then 0 <= index < a.Length && a[index] == x else index == -1");

    std::string renamed = manual_text;
    renamed.replace(renamed.find("method BinarySearch"), std::string("method BinarySearch").size(), "method BSearch");
    CHECK_THROWS_AS(merge_with_manual(parse(renamed), manual), SkeletonMismatch);
}

TEST_CASE("merge adds loop clauses and missing helper declarations") {
    SourceFile manual = parse(read_file("corpus/sample/programs/power.dfy"));
    std::string bare = strip_annotations(manual);
    std::string merged = merge_with_manual(parse(bare), manual);
    SourceFile mf = parse(merged);
    CHECK(mf.find("Pow") != nullptr);
    CHECK(mf.find("PowStep") != nullptr);
    CHECK(count_clauses(mf, ClauseKind::Invariant) == 2);
    CHECK(count_clauses(mf, ClauseKind::Ensures) == count_clauses(manual, ClauseKind::Ensures));
}

TEST_CASE("negative test activation") {
    CHECK_THROWS_AS(activate_negative_test("method M() {}\n", 1), NoSuchMarker);
    CHECK(activate_negative_test("  // assert idx == 0; //@invalid\n", 1) == "  assert idx == 0; //@invalid\n");
    std::string two = "method T() {\n  // assert a == 1; //@invalid\n  var x := 1;\n  // assert a == 2; //@invalid\n}\n";
    CHECK(count_negative_tests(two) == 2);
    std::string act = activate_negative_test(two, 2);
    auto a = lines_of(two), b = lines_of(act);
    REQUIRE(a.size() == b.size());
    int diff = 0;
    for (std::size_t i = 0; i < a.size(); ++i) diff += a[i] != b[i];
    CHECK(diff == 1);
    CHECK(b[3] == "  assert a == 2; //@invalid");
    CHECK_THROWS_AS(activate_negative_test(two, 3), NoSuchMarker);
}

TEST_CASE("property: strip is idempotent and keeps oracles over the corpus") {
    for (const auto& path : kCorpus) {
        CAPTURE(path);
        SourceFile f = parse(read_file(path));
        std::string once = strip_annotations(f);
        CHECK(strip_annotations(once) == once);
        SourceFile s = parse(once);
        CHECK(count_clauses(s, ClauseKind::Requires) == 0);
        CHECK(count_clauses(s, ClauseKind::Ensures) == 0);
        CHECK(count_clauses(s, ClauseKind::Invariant) == 0);
        for (const auto& d : s.declarations) CHECK_FALSE(d.is_specification_only());
        CHECK(oracle_texts(s) == oracle_texts(f));
        CHECK(count_negative_tests(once) == count_negative_tests(f.text));
        LocStats st = count_loc(s);
        CHECK(st.A == static_cast<int>(test_oracle_asserts(s).size()));
        CHECK(st.H == 0);
    }
}

TEST_CASE("property: annotation additions are never cheating") {
    for (const auto& path : kCorpus) {
        CAPTURE(path);
        SourceFile manual = parse(read_file(path));
        SourceFile stripped = parse(strip_annotations(manual));
        CHECK(detect_cheating(stripped, manual).empty());
        CHECK(detect_cheating(stripped, stripped).empty());
    }
}

TEST_CASE("property: merging a manual solution with itself keeps its clauses") {
    for (const auto& path : kCorpus) {
        CAPTURE(path);
        SourceFile manual = parse(read_file(path));
        SourceFile merged = parse(merge_with_manual(manual, manual));
        std::multiset<std::string> a, b;
        for (const auto& d : manual.declarations)
            for (const auto& c : d.clauses) a.insert(d.name + std::string(to_string(c.kind)) + normalize_code(c.text));
        for (const auto& d : merged.declarations)
            for (const auto& c : d.clauses) b.insert(d.name + std::string(to_string(c.kind)) + normalize_code(c.text));
        CHECK(a == b);
    }
}

TEST_CASE("property: activation changes exactly one line") {
    for (const auto& path : kCorpus) {
        std::string text = read_file(path);
        int n = count_negative_tests(text);
        for (int k = 1; k <= n; ++k) {
            auto a = lines_of(text), b = lines_of(activate_negative_test(text, k));
            REQUIRE(a.size() == b.size());
            int diff = 0;
            for (std::size_t i = 0; i < a.size(); ++i) diff += a[i] != b[i];
            CHECK(diff == 1);
        }
    }
}

TEST_CASE("strip is idempotent on every corpus file") {
    auto files = all_corpus_files();
    CHECK(files.size() >= 40);
    for (const auto& path : files) {
        CAPTURE(path);
        std::string once = strip_annotations(read_file(path));
        CHECK(strip_annotations(once) == once);
    }
}

TEST_CASE("seeded cheating corpus") {
    auto cases = guardrail_cases();
    int cheating = 0, clean = 0;
    for (const auto& c : cases) {
        CAPTURE(c.id);
        auto violations = detect_cheating(parse(c.original), parse(c.candidate, c.candidate_path));
        std::set<std::string> kinds;
        for (const auto& v : violations) kinds.insert(std::string(to_string(v.kind)));
        CHECK(kinds == c.expected);
        (c.expected.empty() ? clean : cheating) += 1;
    }
    CHECK(cheating == 12);
    CHECK(clean == 12);
}

TEST_CASE("code inserted into an existing declaration is altered code") {
    std::string original = "method M(n: int) returns (r: int)\n{\n  r := n;\n}\n";
    std::string guarded = "method M(n: int) returns (r: int)\n{\n  if n > 0 {\n    r := n;\n  }\n}\n";
    auto v = detect_cheating(parse(original), parse(guarded));
    REQUIRE(!v.empty());
    CHECK(v[0].kind == Violation::Kind::AlteredCode);
    CHECK(v[0].detail == "if n > 0 {");

    std::string helper = original + "\nfunction Twice(x: int): int { 2 * x }\n";
    CHECK(detect_cheating(parse(original), parse(helper)).empty());
}

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include "httplib.h"

#include <algorithm>
#include <random>
#include <thread>

#include "doctest.h"
#include "specforge/llm_gateway.hpp"
#include "specforge/strip_merge.hpp"
#include "test_support_golden.hpp"

using namespace specforge;
using testing_support::golden;
using testing_support::read_file;

namespace {

int count_of(const std::string& hay, const std::string& needle) {
    int n = 0;
    for (auto p = hay.find(needle); p != std::string::npos; p = hay.find(needle, p + 1)) ++n;
    return n;
}

std::string between(const std::string& s, const std::string& open, const std::string& close) {
    auto a = s.find(open);
    auto b = s.find(close, a + open.size());
    return s.substr(a + open.size(), b - a - open.size());
}

ProviderConfig provider(const std::string& name, int priority, double in = 0, double out = 0) {
    ProviderConfig c;
    c.name = name;
    c.model_id = name + "-model";
    c.priority = priority;
    c.cost_per_input_token = in;
    c.cost_per_output_token = out;
    return c;
}

const char* kGood = "BEGIN DAFNY\nmethod M() {}\nEND DAFNY\n";

}  // namespace

TEST_CASE("direct prompt layout") {
    auto msgs = render_direct_prompt("method M() {}");
    REQUIRE(msgs.size() == 2);
    CHECK(msgs[0].role == "system");
    CHECK(msgs[0].content == direct_template().text);
    CHECK(count_of(msgs[1].content, "BEGIN DAFNY") == 1);
    CHECK(count_of(msgs[1].content, "END DAFNY") == 1);
    CHECK(between(msgs[1].content, "BEGIN DAFNY\n", "\nEND DAFNY") == "method M() {}");

    auto empty = render_direct_prompt("");
    CHECK(empty[1].content == "BEGIN DAFNY\n\nEND DAFNY\n");
    CHECK(direct_template().text.find("Do not change the original Dafny code!") != std::string::npos);
    CHECK(direct_template().sha256 == sha256_hex(direct_template().text));
    CHECK(direct_template().name == "direct.v1");
}

TEST_CASE("direct prompt for the stripped binary search matches the golden rendering") {
    std::string stripped = strip_annotations(read_file("tests/fixtures/fig2_binary_search.dfy"));
    auto msgs = render_direct_prompt(stripped);
    nlohmann::json j = nlohmann::json::array();
    for (const auto& m : msgs) j.push_back({{"role", m.role}, {"content", m.content}});
    std::string rendered = j.dump(2) + "\n";
    CHECK(rendered == golden("tests/golden/direct_prompt_binary_search.json", rendered));
}

TEST_CASE("program text is embedded verbatim") {
    std::mt19937 rng(7);
    const std::string alphabet = "abc {}()\n\t;:=<>\"'/*";
    for (int i = 0; i < 200; ++i) {
        std::string prog;
        int n = rng() % 80;
        for (int k = 0; k < n; ++k) prog += alphabet[rng() % alphabet.size()];
        auto d = render_direct_prompt(prog);
        CHECK(between(d[1].content, "BEGIN DAFNY\n", "\nEND DAFNY\n") == prog);
        auto r = render_repair_prompt(prog, "x.dfy(1,1): error: e");
        CHECK(r[1].content.substr(0, 12 + prog.size()) == "BEGIN DAFNY\n" + prog);
    }
}

TEST_CASE("repair prompt layout") {
    auto msgs = render_repair_prompt("method M() {}", "program.dfy(1,1): error: bad\n");
    CHECK(msgs[0].content == repair_template().text);
    std::string errs = between(msgs[1].content, "BEGIN VERIFICATION ERRORS\n", "\nEND VERIFICATION ERRORS");
    CHECK(errs == "program.dfy(1,1): error: bad");
    CHECK_THROWS_AS(render_repair_prompt("method M() {}", ""), std::invalid_argument);
    CHECK_THROWS_AS(render_repair_prompt("method M() {}", "\n"), std::invalid_argument);
}

TEST_CASE("diagnostics are rendered in position order") {
    std::vector<Diagnostic> diags = {
        {"b.dfy", 2, 1, Severity::Error, "third", DiagCategory::Verification},
        {"a.dfy", 10, 5, Severity::Error, "second", DiagCategory::Verification},
        {"a.dfy", 3, 7, Severity::Warning, "first", DiagCategory::Other},
    };
    std::string text = render_diagnostics(diags);
    CHECK(text ==
          "a.dfy(3,7): warning: first\n"
          "a.dfy(10,5): error: second\n"
          "b.dfy(2,1): error: third\n");
    auto msgs = render_repair_prompt("x", text);
    std::string block = between(msgs[1].content, "BEGIN VERIFICATION ERRORS\n", "\nEND VERIFICATION ERRORS");
    CHECK(count_of(block, "\n") == 2);
    CHECK(render_diagnostics({diags[0]}) == "b.dfy(2,1): error: third\n");
    CHECK(render_diagnostics(diags, 2) == "a.dfy(3,7): warning: first\na.dfy(10,5): error: second\n");
}

TEST_CASE("failover stops at the first usable provider") {
    auto a = std::make_shared<ScriptedProvider>();
    auto b = std::make_shared<ScriptedProvider>();
    a->push(kGood, 1000, 500);
    UsageLedger ledger;
    auto r = call_with_failover({{provider("b", 2), b}, {provider("a", 1, 1e-6, 2e-6), a}}, {PromptKind::Direct, "x", {}}, ledger);
    CHECK(r.provider == "a");
    CHECK(r.extracted_program == std::optional<std::string>("method M() {}"));
    CHECK(r.cost == doctest::Approx(1000 * 1e-6 + 500 * 2e-6));
    CHECK(b->requests().empty());
    CHECK(ledger.calls() == 1);
}

TEST_CASE("failover after a rate limit and a missing code block") {
    auto a = std::make_shared<ScriptedProvider>();
    auto b = std::make_shared<ScriptedProvider>();
    auto c = std::make_shared<ScriptedProvider>();
    a->push_error(ProviderError::Kind::RateLimit, "429");
    b->push("I cannot help with that.", 50, 10);
    c->push(kGood, 70, 30);
    UsageLedger ledger;
    std::vector<BoundProvider> ps = {{provider("a", 1), a}, {provider("b", 2, 0.01, 0.02), b}, {provider("c", 3, 0.001, 0.002), c}};
    auto r = call_with_failover(ps, {PromptKind::Direct, "x", {}}, ledger);
    CHECK(r.provider == "c");
    auto recs = ledger.records();
    REQUIRE(recs.size() == 3);
    CHECK(recs[0].status == "rate-limit");
    CHECK(recs[1].status == "no-code-block");
    CHECK(recs[2].status == "ok");
    CHECK(ledger.total_cost() == doctest::Approx(50 * 0.01 + 10 * 0.02 + 70 * 0.001 + 30 * 0.002));
}

TEST_CASE("all providers failing") {
    auto a = std::make_shared<ScriptedProvider>();
    auto b = std::make_shared<ScriptedProvider>();
    a->push_error(ProviderError::Kind::Timeout);
    b->push_error(ProviderError::Kind::Transport);
    UsageLedger ledger;
    try {
        call_with_failover({{provider("a", 1), a}, {provider("b", 2), b}}, {PromptKind::Direct, "x", {}}, ledger);
        FAIL("expected AllProvidersFailed");
    } catch (const AllProvidersFailed& e) {
        REQUIRE(e.failures.size() == 2);
        CHECK(e.failures[0].provider == "a");
        CHECK(e.failures[0].reason.find("timeout") == 0);
        CHECK(e.failures[1].provider == "b");
    }
    CHECK_THROWS_AS(call_with_failover({}, {PromptKind::Direct, "x", {}}, ledger), std::invalid_argument);
}

TEST_CASE("concurrent calls and ledger totals") {
    std::vector<BoundProvider> ps;
    for (int i = 0; i < 6; ++i) {
        auto s = std::make_shared<ScriptedProvider>();
        if (i % 3 == 2) {
            s->push_error(ProviderError::Kind::Transport);
        } else {
            s->push(kGood, 100 * (i + 1), 10 * (i + 1));
        }
        ps.push_back({provider("p" + std::to_string(i), i, 0.001, 0.01), s});
    }
    UsageLedger ledger;
    auto results = call_all(ps, {PromptKind::Direct, "x", {}}, ledger);
    REQUIRE(results.size() == 6);
    double sum = 0;
    for (int i = 0; i < 6; ++i) {
        CHECK(results[i].has_value() == (i % 3 != 2));
        if (results[i]) sum += results[i]->cost;
    }
    CHECK(ledger.calls() == 6);
    CHECK(ledger.total_cost() == doctest::Approx(sum));
}

TEST_CASE("arbitration order") {
    auto entry = [](std::string provider, int priority, const std::string& program, VerifyStatus st, double t) {
        ArbitrationEntry e;
        e.result.provider = provider;
        e.result.provider_priority = priority;
        e.result.raw_text = program;
        e.result.extracted_program = program;
        e.outcome.status = st;
        e.outcome.elapsed_s = t;
        return e;
    };
    std::string small, big;
    for (int i = 0; i < 40; ++i) small += "method M" + std::to_string(i) + "() {}\n";
    big = small;
    for (int i = 0; i < 10; ++i) big += "method N" + std::to_string(i) + "() {}\n";

    CHECK(arbitrate({entry("a", 1, small, VerifyStatus::SyntaxError, 1), entry("b", 2, big, VerifyStatus::Success, 9)}) == 1);
    CHECK(arbitrate({entry("a", 1, big, VerifyStatus::Success, 1), entry("b", 2, small, VerifyStatus::Success, 9)}) == 1);
    CHECK(arbitrate({entry("a", 1, small, VerifyStatus::Success, 5), entry("b", 2, small, VerifyStatus::Success, 2)}) == 1);
    CHECK(arbitrate({entry("a", 2, small, VerifyStatus::Success, 2), entry("b", 1, small, VerifyStatus::Success, 2)}) == 1);
    CHECK(arbitrate({entry("a", 1, small, VerifyStatus::VerificationFailure, 1), entry("b", 2, big, VerifyStatus::Success, 9)}) == 1);
    auto no_block = entry("a", 0, small, VerifyStatus::Success, 0);
    no_block.result.extracted_program.reset();
    CHECK(arbitrate({no_block, entry("b", 1, big, VerifyStatus::VerificationFailure, 1)}) == 1);
}

TEST_CASE("arbitration winner does not depend on input order") {
    std::mt19937 rng(11);
    const VerifyStatus statuses[] = {VerifyStatus::Success, VerifyStatus::SyntaxError, VerifyStatus::VerificationFailure,
                                     VerifyStatus::Timeout};
    for (int round = 0; round < 100; ++round) {
        std::vector<ArbitrationEntry> es;
        int n = 1 + rng() % 5;
        for (int i = 0; i < n; ++i) {
            ArbitrationEntry e;
            e.result.provider = "p" + std::to_string(i);
            e.result.provider_priority = i;
            std::string prog;
            for (unsigned k = 0; k < 1 + rng() % 3; ++k) prog += "method M" + std::to_string(k) + "() {}\n";
            e.result.extracted_program = prog;
            e.outcome.status = statuses[rng() % 4];
            e.outcome.elapsed_s = rng() % 3;
            es.push_back(e);
        }
        std::string winner = es[arbitrate(es)].result.provider;
        for (int p = 0; p < 5; ++p) {
            std::shuffle(es.begin(), es.end(), rng);
            CHECK(es[arbitrate(es)].result.provider == winner);
        }
    }
}

TEST_CASE("replay provider") {
    auto msgs = render_direct_prompt("method A() {}");
    std::vector<nlohmann::json> entries = {
        {{"request_hash", request_hash(msgs)}, {"response", "first"}, {"input_tokens", 3}, {"latency_s", 1.25}},
        {{"request_hash", request_hash(msgs)}, {"response", "second"}},
        {{"match", "method B"}, {"provider", "other"}, {"response", "for other"}},
        {{"match", "method B"}, {"error", "rate-limit"}},
        {{"match", "method C"}, {"response", "always"}, {"repeat", true}},
    };
    ReplayProvider replay(entries);
    auto cfg = provider("main", 1);
    auto c1 = replay.complete(cfg, msgs);
    CHECK(c1.text == "first");
    CHECK(c1.input_tokens == 3);
    CHECK(c1.latency_s == std::optional<double>(1.25));
    CHECK(replay.complete(cfg, msgs).text == "second");
    CHECK_THROWS_AS(replay.complete(cfg, msgs), ProviderError);
    try {
        replay.complete(cfg, render_direct_prompt("method B() {}"));
        FAIL("expected rate limit");
    } catch (const ProviderError& e) {
        CHECK(e.kind == ProviderError::Kind::RateLimit);
    }
    CHECK(replay.complete(provider("other", 2), render_direct_prompt("method B() {}")).text == "for other");
    for (int i = 0; i < 3; ++i) CHECK(replay.complete(cfg, render_direct_prompt("method C() {}")).text == "always");
    CHECK(replay.unused_entries() == 0);
}

TEST_CASE("recording then replaying reproduces responses") {
    auto path = std::filesystem::temp_directory_path() / ("specforge-rec-" + std::to_string(::getpid()) + ".jsonl");
    std::filesystem::remove(path);
    ScriptedProvider scripted;
    scripted.push("one");
    scripted.push_error(ProviderError::Kind::Timeout);
    RecordingProvider rec(scripted, path);
    auto cfg = provider("p", 1);
    auto m1 = render_direct_prompt("x");
    auto m2 = render_direct_prompt("y");
    CHECK(rec.complete(cfg, m1).text == "one");
    CHECK_THROWS_AS(rec.complete(cfg, m2), ProviderError);
    ReplayProvider replay(path);
    CHECK(replay.complete(cfg, m1).text == "one");
    CHECK_THROWS_AS(replay.complete(cfg, m2), ProviderError);
}

TEST_CASE("provider configuration") {
    auto c = provider_config_from_json(nlohmann::json::parse(
        R"({"name": "gpt", "model_id": "gpt-x", "temperature": 1.0, "reasoning_effort": "low", "priority": 2,
            "api": "openai", "endpoint": "https://example.invalid/v1/chat/completions", "api_key_env": "X_KEY"})"));
    CHECK(c.temperature == 1.0);
    CHECK(c.reasoning_effort == ReasoningEffort::Low);
    CHECK(provider_config_from_json(nlohmann::json{{"name", "d"}}).temperature == 0.5);
    CHECK_THROWS(provider_config_from_json(nlohmann::json{{"name", "d"}, {"reasoning_effort", "extreme"}}));
    CHECK_THROWS_AS(validate_providers({provider("a", 1), provider("b", 1)}), std::invalid_argument);
    auto neg = provider("a", 1);
    neg.temperature = -0.1;
    CHECK_THROWS_AS(validate_providers({neg}), std::invalid_argument);
    CHECK_NOTHROW(validate_providers({provider("a", 1), provider("b", 2)}));

    auto body = HttpChatProvider::request_body(c, render_direct_prompt("x"));
    CHECK(body["model"] == "gpt-x");
    CHECK(body["reasoning_effort"] == "low");
    CHECK(body["messages"].size() == 2);
    c.api = "anthropic";
    auto abody = HttpChatProvider::request_body(c, render_direct_prompt("x"));
    CHECK(abody["messages"].size() == 1);
    CHECK(abody["system"] == direct_template().text);
    CHECK_FALSE(abody.contains("reasoning_effort"));
}

TEST_CASE("http provider against a local endpoint") {
    httplib::Server server;
    int calls = 0;
    std::string seen_auth;
    server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
        ++calls;
        seen_auth = req.get_header_value("Authorization");
        auto body = nlohmann::json::parse(req.body);
        if (body["model"] == "busy") {
            res.status = 429;
            return;
        }
        nlohmann::json out{{"choices", {{{"message", {{"role", "assistant"}, {"content", kGood}}}}}},
                           {"usage", {{"prompt_tokens", 12}, {"completion_tokens", 34}}}};
        res.set_content(out.dump(), "application/json");
    });
    server.Post("/anthropic/v1/messages", [&](const httplib::Request& req, httplib::Response& res) {
        ++calls;
        seen_auth = req.get_header_value("x-api-key");
        nlohmann::json out{{"content", {{{"type", "text"}, {"text", kGood}}}},
                           {"usage", {{"input_tokens", 5}, {"output_tokens", 6}}}};
        res.set_content(out.dump(), "application/json");
    });
    int port = server.bind_to_any_port("127.0.0.1");
    std::thread t([&] { server.listen_after_bind(); });
    server.wait_until_ready();

    ::setenv("SPECFORGE_TEST_KEY", "secret", 1);
    auto cfg = provider("local", 1);
    cfg.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/v1/chat/completions";
    cfg.api_key_env = "SPECFORGE_TEST_KEY";
    cfg.timeout_s = 10;
    HttpChatProvider http;
    auto c = http.complete(cfg, render_direct_prompt("x"));
    CHECK(c.text == kGood);
    CHECK(c.input_tokens == 12);
    CHECK(c.output_tokens == 34);
    CHECK(seen_auth == "Bearer secret");

    auto busy = cfg;
    busy.model_id = "busy";
    try {
        http.complete(busy, render_direct_prompt("x"));
        FAIL("expected rate limit");
    } catch (const ProviderError& e) {
        CHECK(e.kind == ProviderError::Kind::RateLimit);
    }

    auto anth = cfg;
    anth.api = "anthropic";
    anth.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/anthropic/v1/messages";
    anth.auth_header = "x-api-key";
    auto ac = http.complete(anth, render_direct_prompt("x"));
    CHECK(ac.output_tokens == 6);
    CHECK(seen_auth == "secret");

    auto missing_key = cfg;
    missing_key.api_key_env = "SPECFORGE_TEST_KEY_UNSET";
    try {
        http.complete(missing_key, render_direct_prompt("x"));
        FAIL("expected auth error");
    } catch (const ProviderError& e) {
        CHECK(e.kind == ProviderError::Kind::Auth);
    }
    server.stop();
    t.join();

    auto down = cfg;
    down.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/v1/chat/completions";
    CHECK_THROWS_AS(http.complete(down, render_direct_prompt("x")), ProviderError);
    CHECK(calls == 3);
}

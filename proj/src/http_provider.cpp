#define CPPHTTPLIB_OPENSSL_SUPPORT
#include "httplib.h"
#include "specforge/llm_gateway.hpp"

#include <cstdlib>
#include <regex>

namespace specforge {

nlohmann::json HttpChatProvider::request_body(const ProviderConfig& cfg, const std::vector<ChatMessage>& messages) {
    nlohmann::json body{{"model", cfg.model_id}, {"temperature", cfg.temperature}};
    nlohmann::json msgs = nlohmann::json::array();
    if (cfg.api == "anthropic") {
        std::string system;
        for (const auto& m : messages) {
            if (m.role == "system") {
                system += m.content;
            } else {
                msgs.push_back({{"role", m.role}, {"content", m.content}});
            }
        }
        if (!system.empty()) body["system"] = system;
        body["max_tokens"] = cfg.max_output_tokens;
    } else {
        for (const auto& m : messages) msgs.push_back({{"role", m.role}, {"content", m.content}});
        body["max_completion_tokens"] = cfg.max_output_tokens;
        if (cfg.reasoning_effort) body["reasoning_effort"] = std::string(to_string(*cfg.reasoning_effort));
    }
    body["messages"] = msgs;
    return body;
}

Completion HttpChatProvider::parse_response(const ProviderConfig& cfg, const nlohmann::json& body) {
    Completion c;
    try {
        if (cfg.api == "anthropic") {
            for (const auto& part : body.at("content")) {
                if (part.value("type", "") == "text") c.text += part.at("text").get<std::string>();
            }
            c.input_tokens = body.at("usage").value("input_tokens", 0L);
            c.output_tokens = body.at("usage").value("output_tokens", 0L);
        } else {
            c.text = body.at("choices").at(0).at("message").at("content").get<std::string>();
            if (body.contains("usage")) {
                c.input_tokens = body["usage"].value("prompt_tokens", 0L);
                c.output_tokens = body["usage"].value("completion_tokens", 0L);
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw ProviderError(ProviderError::Kind::BadResponse, std::string("unexpected response shape: ") + e.what());
    }
    return c;
}

Completion HttpChatProvider::complete(const ProviderConfig& cfg, const std::vector<ChatMessage>& messages) {
    static const std::regex url_re(R"(^(https?://[^/]+)(/.*)?$)");
    std::smatch m;
    if (!std::regex_match(cfg.endpoint, m, url_re)) {
        throw ProviderError(ProviderError::Kind::Transport, "invalid endpoint '" + cfg.endpoint + "'");
    }
    std::string path = m[2].matched ? m[2].str() : "/";

    httplib::Headers headers;
    if (!cfg.api_key_env.empty()) {
        const char* key = std::getenv(cfg.api_key_env.c_str());
        if (!key || !*key) throw ProviderError(ProviderError::Kind::Auth, "environment variable " + cfg.api_key_env + " is not set");
        std::string value = key;
        if (cfg.auth_header == "Authorization") value = "Bearer " + value;
        headers.emplace(cfg.auth_header, value);
    }
    if (cfg.api == "anthropic") headers.emplace("anthropic-version", "2023-06-01");

    httplib::Client client(m[1].str());
    auto secs = static_cast<time_t>(cfg.timeout_s);
    client.set_connection_timeout(std::min<time_t>(secs, 30), 0);
    client.set_read_timeout(secs, 0);
    client.set_write_timeout(secs, 0);

    auto res = client.Post(path, headers, request_body(cfg, messages).dump(), "application/json");
    if (!res) {
        auto err = res.error();
        if (err == httplib::Error::Read || err == httplib::Error::Write || err == httplib::Error::ConnectionTimeout) {
            throw ProviderError(ProviderError::Kind::Timeout, "request timed out (" + httplib::to_string(err) + ")");
        }
        throw ProviderError(ProviderError::Kind::Transport, httplib::to_string(err));
    }
    if (res->status == 429) throw ProviderError(ProviderError::Kind::RateLimit, "rate limited");
    if (res->status == 401 || res->status == 403) throw ProviderError(ProviderError::Kind::Auth, "HTTP " + std::to_string(res->status));
    if (res->status == 408 || res->status == 504) throw ProviderError(ProviderError::Kind::Timeout, "HTTP " + std::to_string(res->status));
    if (res->status != 200) {
        throw ProviderError(ProviderError::Kind::Transport, "HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 200));
    }
    nlohmann::json body;
    try {
        body = nlohmann::json::parse(res->body);
    } catch (const nlohmann::json::exception&) {
        throw ProviderError(ProviderError::Kind::BadResponse, "response is not JSON");
    }
    return parse_response(cfg, body);
}

}  // namespace specforge

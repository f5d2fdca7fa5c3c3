#include "spanlab/ports.hpp"

#include <cstdlib>
#include <thread>

#include "httplib.h"
#include "json.hpp"

namespace spanlab {

TextPort::TextPort(std::string name, Transport transport, RetryPolicy policy,
                   std::function<void(std::chrono::milliseconds)> sleeper)
    : name_(std::move(name)),
      transport_(std::move(transport)),
      policy_(policy),
      sleeper_(std::move(sleeper)) {
    if (!sleeper_)
        sleeper_ = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
}

std::string TextPort::encode_request(const PortRequest& req) {
    nlohmann::ordered_json j;
    j["prompt"] = req.prompt;
    j["max_tokens"] = req.max_tokens;
    j["temperature"] = req.temperature;
    return j.dump();
}

std::optional<std::string> TextPort::decode_response(const std::string& body) {
    auto j = nlohmann::json::parse(body, nullptr, /*allow_exceptions=*/false);
    if (j.is_discarded() || !j.contains("text") || !j["text"].is_string()) return std::nullopt;
    return j["text"].get<std::string>();
}

std::optional<std::string> TextPort::complete(const PortRequest& req, PortError* error) const {
    if (!transport_) {
        if (error) *error = {"port '" + name_ + "' is not configured", false};
        return std::nullopt;
    }
    const std::string payload = encode_request(req);
    PortError last{"no attempt made", false};
    auto backoff = policy_.initial_backoff;
    for (int attempt = 0; attempt < policy_.max_attempts; ++attempt) {
        if (attempt > 0) {
            sleeper_(backoff);
            backoff = std::chrono::milliseconds(static_cast<long long>(
                static_cast<double>(backoff.count()) * policy_.backoff_factor));
        }
        PortError err;
        auto body = transport_(payload, &err);
        if (body) {
            auto text = decode_response(*body);
            if (text) return text;
            last = {"malformed response body from '" + name_ + "'", false};
            continue;
        }
        last = err;
    }
    if (error) *error = last;
    return std::nullopt;
}

Transport make_http_transport(const std::string& url, const std::string& api_key,
                              std::chrono::milliseconds timeout) {
    // split scheme://host[:port]/path
    std::string rest = url;
    const auto scheme_end = rest.find("://");
    if (scheme_end != std::string::npos) rest = rest.substr(scheme_end + 3);
    std::string host = rest, path = "/";
    if (const auto slash = rest.find('/'); slash != std::string::npos) {
        host = rest.substr(0, slash);
        path = rest.substr(slash);
    }
    return [host, path, api_key, timeout](const std::string& payload,
                                          PortError* error) -> std::optional<std::string> {
        httplib::Client client(host);
        client.set_connection_timeout(std::chrono::duration_cast<std::chrono::seconds>(timeout));
        client.set_read_timeout(std::chrono::duration_cast<std::chrono::seconds>(timeout));
        httplib::Headers headers;
        if (!api_key.empty()) headers.emplace("Authorization", "Bearer " + api_key);
        auto res = client.Post(path, headers, payload, "application/json");
        if (!res) {
            if (error)
                *error = {"transport failure: " + httplib::to_string(res.error()),
                          res.error() == httplib::Error::ConnectionTimeout ||
                              res.error() == httplib::Error::Read};
            return std::nullopt;
        }
        if (res->status < 200 || res->status >= 300) {
            if (error) *error = {"http status " + std::to_string(res->status), false};
            return std::nullopt;
        }
        return res->body;
    };
}

TextPort port_from_env(const std::string& name, const char* url_env) {
    const char* url = std::getenv(url_env);
    if (url == nullptr || *url == '\0') return TextPort{};
    const char* key = std::getenv("SPANLAB_API_KEY");
    RetryPolicy policy;
    return TextPort(name, make_http_transport(url, key ? key : "", policy.request_timeout),
                    policy);
}

}  // namespace spanlab

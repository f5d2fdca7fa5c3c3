#pragma once

#include <chrono>
#include <functional>
#include <memory>
#include <optional>
#include <string>

namespace spanlab {

// Text completion request/response shared by the generator, judge, and
// solver ports. The wire shape is a single JSON object
// {prompt, max_tokens, temperature} -> {text}.
struct PortRequest {
    std::string prompt;
    int max_tokens = 256;
    double temperature = 0.0;
};

struct PortResponse {
    std::string text;
};

struct PortError {
    std::string message;
    bool timeout = false;
};

// Pluggable transport: JSON payload in, JSON body out (or an error). The
// HTTP transport posts to a configured URL; tests substitute fakes.
using Transport = std::function<std::optional<std::string>(const std::string& payload_json,
                                                           PortError* error)>;

struct RetryPolicy {
    int max_attempts = 3;
    std::chrono::milliseconds initial_backoff{100};
    double backoff_factor = 2.0;
    std::chrono::milliseconds request_timeout{30000};
};

// A text port with retry + exponential backoff around a transport. Ports are
// optional everywhere: when unconfigured, in-process oracles take over.
class TextPort {
public:
    TextPort() = default;
    TextPort(std::string name, Transport transport, RetryPolicy policy = {},
             std::function<void(std::chrono::milliseconds)> sleeper = nullptr);

    bool configured() const { return static_cast<bool>(transport_); }
    const std::string& name() const { return name_; }
    const RetryPolicy& policy() const { return policy_; }

    // Retries transport failures with exponential backoff; returns the
    // completion text or the last error.
    std::optional<std::string> complete(const PortRequest& req, PortError* error = nullptr) const;

    static std::string encode_request(const PortRequest& req);
    static std::optional<std::string> decode_response(const std::string& body);

private:
    std::string name_;
    Transport transport_;
    RetryPolicy policy_;
    std::function<void(std::chrono::milliseconds)> sleeper_;
};

// HTTP POST transport against `url` (http://host:port/path). Adds
// `Authorization: Bearer <api_key>` when a key is given.
Transport make_http_transport(const std::string& url, const std::string& api_key,
                              std::chrono::milliseconds timeout);

// Builds a port from SPANLAB_GENERATOR_URL / SPANLAB_JUDGE_URL (+
// SPANLAB_API_KEY). Absent variables yield an unconfigured port.
TextPort port_from_env(const std::string& name, const char* url_env);

}  // namespace spanlab

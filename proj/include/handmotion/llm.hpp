#pragma once

#include <array>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace hm::llm {

struct Request {
  std::string prompt;
  std::string model = "default";
  double temperature = 1.0;
  std::uint64_t seed = 0;

  nlohmann::json to_json() const;
  static Request from_json(const nlohmann::json& j);
  /// SHA-256 hex of the sorted-key compact JSON of all four fields.
  std::string key() const;
};

struct Response {
  std::array<std::string, 3> descriptions;
  std::string raw;
  double latency_s = 0.0;
};

/// Returns the raw model text for one request.
class Client {
 public:
  virtual ~Client() = default;
  virtual std::string complete(const Request& req) = 0;
};

struct HttpConfig {
  std::string url;  // http://host:port/path or https://...
  std::string api_key_env = "HANDMOTION_LLM_API_KEY";
  double timeout_s = 120.0;
  int max_retries = 4;
  double backoff_initial_s = 1.0;
  double backoff_factor = 2.0;
};

/// POSTs {"model","prompt","temperature","seed"} as JSON with a bearer token
/// taken from the configured environment variable. The reply body is either
/// JSON with a "text" field or plain text. Connection failures, 429 and 5xx
/// are retried with exponential backoff; other statuses fail at once.
class HttpClient : public Client {
 public:
  explicit HttpClient(HttpConfig cfg);
  std::string complete(const Request& req) override;
  int attempts() const { return attempts_; }

 private:
  HttpConfig cfg_;
  std::string scheme_host_port_;
  std::string path_;
  int attempts_ = 0;
};

/// Replays recorded responses from `<dir>/<key>.json`; a missing file throws
/// FixtureMiss.
class FixtureClient : public Client {
 public:
  explicit FixtureClient(std::filesystem::path dir);
  std::string complete(const Request& req) override;

  static void record(const std::filesystem::path& dir, const Request& req, const std::string& raw);

 private:
  std::filesystem::path dir_;
};

/// "fixtures:DIR" -> FixtureClient, anything else -> HttpClient on that URL.
std::unique_ptr<Client> make_client(const std::string& spec);

/// Extracts "Description 1".."Description 3" from a JSON object (possibly
/// embedded in surrounding text) or from "Description N: ..." lines.
/// Throws ParseError unless all three are found.
std::array<std::string, 3> parse_descriptions(const std::string& raw);

Response generate_descriptions(const Request& req, Client& client);

/// Runs `requests` with at most `max_in_flight` concurrent calls. Clients
/// must be safe to call from several threads; each request carries its own
/// retry state. Results keep the request order; the first failure is
/// rethrown after all workers stop.
std::vector<Response> generate_batch(const std::vector<Request>& requests,
                                     const std::function<std::unique_ptr<Client>()>& make,
                                     int max_in_flight);

}  // namespace hm::llm

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include "handmotion/llm.hpp"

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <regex>
#include <thread>

#include "handmotion/binary_io.hpp"
#include "handmotion/error.hpp"

namespace hm::llm {

nlohmann::json Request::to_json() const {
  return {{"model", model}, {"prompt", prompt}, {"temperature", temperature}, {"seed", seed}};
}

Request Request::from_json(const nlohmann::json& j) {
  Request r;
  try {
    r.prompt = j.at("prompt").get<std::string>();
    r.model = j.value("model", r.model);
    r.temperature = j.value("temperature", r.temperature);
    r.seed = j.value("seed", r.seed);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::SchemaViolation, std::string("LLM request: ") + e.what());
  }
  return r;
}

std::string Request::key() const { return io::sha256_hex(to_json().dump()); }

HttpClient::HttpClient(HttpConfig cfg) : cfg_(std::move(cfg)) {
  static const std::regex url(R"(^(https?://[^/]+)(/.*)?$)");
  std::smatch m;
  if (!std::regex_match(cfg_.url, m, url)) fail(ErrorCode::ConfigError, "bad LLM endpoint URL '" + cfg_.url + "'");
  scheme_host_port_ = m[1].str();
  path_ = m[2].matched ? m[2].str() : "/";
  if (cfg_.max_retries < 0 || !(cfg_.timeout_s > 0.0) || cfg_.backoff_initial_s < 0.0) {
    fail(ErrorCode::ConfigError, "bad LLM client retry/timeout settings");
  }
}

std::string HttpClient::complete(const Request& req) {
  httplib::Client cli(scheme_host_port_);
  const auto timeout = std::chrono::duration<double>(cfg_.timeout_s);
  cli.set_connection_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
  cli.set_read_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
  httplib::Headers headers;
  if (const char* key = std::getenv(cfg_.api_key_env.c_str()); key && *key) {
    headers.emplace("Authorization", std::string("Bearer ") + key);
  }
  const std::string body = req.to_json().dump();
  std::string last_error;
  for (int attempt = 0; attempt <= cfg_.max_retries; ++attempt) {
    if (attempt > 0) {
      const double wait = cfg_.backoff_initial_s * std::pow(cfg_.backoff_factor, attempt - 1);
      std::this_thread::sleep_for(std::chrono::duration<double>(wait));
    }
    ++attempts_;
    auto res = cli.Post(path_, headers, body, "application/json");
    if (!res) {
      last_error = "connection failed: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status == 200) {
      const auto j = nlohmann::json::parse(res->body, nullptr, false);
      if (!j.is_discarded() && j.is_object() && j.contains("text") && j["text"].is_string()) {
        return j["text"].get<std::string>();
      }
      return res->body;
    }
    last_error = "HTTP " + std::to_string(res->status);
    if (res->status != 429 && res->status < 500) break;
  }
  fail(ErrorCode::EndpointError, cfg_.url + ": " + last_error);
}

FixtureClient::FixtureClient(std::filesystem::path dir) : dir_(std::move(dir)) {
  if (!std::filesystem::is_directory(dir_)) {
    fail(ErrorCode::IoError, "fixture directory " + dir_.string() + " does not exist");
  }
}

std::string FixtureClient::complete(const Request& req) {
  const auto path = dir_ / (req.key() + ".json");
  if (!std::filesystem::exists(path)) {
    fail(ErrorCode::FixtureMiss, "no recorded response " + path.filename().string());
  }
  const auto j = nlohmann::json::parse(io::read_text(path), nullptr, false);
  if (j.is_discarded() || !j.contains("response") || !j["response"].is_string()) {
    fail(ErrorCode::SchemaViolation, path.string() + ": expected {\"request\", \"response\"}");
  }
  return j["response"].get<std::string>();
}

void FixtureClient::record(const std::filesystem::path& dir, const Request& req, const std::string& raw) {
  const nlohmann::json j = {{"request", req.to_json()}, {"response", raw}};
  io::write_text(dir / (req.key() + ".json"), j.dump(2) + "\n");
}

std::unique_ptr<Client> make_client(const std::string& spec) {
  constexpr std::string_view prefix = "fixtures:";
  if (spec.rfind(prefix, 0) == 0) return std::make_unique<FixtureClient>(spec.substr(prefix.size()));
  HttpConfig cfg;
  cfg.url = spec;
  return std::make_unique<HttpClient>(cfg);
}

namespace {

bool take_from_json(const nlohmann::json& j, std::array<std::string, 3>& out) {
  if (!j.is_object()) return false;
  const nlohmann::json* obj = &j;
  if (j.contains("content") && j["content"].is_object()) obj = &j["content"];
  for (int i = 0; i < 3; ++i) {
    const std::string key = "Description " + std::to_string(i + 1);
    if (!obj->contains(key) || !(*obj)[key].is_string()) return false;
    out[i] = (*obj)[key].get<std::string>();
  }
  return true;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r\n") - b + 1);
}

}  // namespace

std::array<std::string, 3> parse_descriptions(const std::string& raw) {
  std::array<std::string, 3> out;
  // Whole text, then the outermost brace span (fenced code blocks, chatter).
  auto j = nlohmann::json::parse(raw, nullptr, false);
  if (!j.is_discarded() && take_from_json(j, out)) return out;
  const auto open = raw.find('{');
  const auto close = raw.rfind('}');
  if (open != std::string::npos && close != std::string::npos && close > open) {
    j = nlohmann::json::parse(raw.substr(open, close - open + 1), nullptr, false);
    if (!j.is_discarded() && take_from_json(j, out)) return out;
  }
  static const std::regex quoted(R"re("Description\s*([1-3])"\s*:\s*"((?:[^"\\]|\\.)*)")re");
  static const std::regex line(R"re((?:^|\n)\s*\**\s*Description\s*([1-3])\s*\**\s*[:.-]\**\s*([^\n]+))re");
  for (const std::regex* re : {&quoted, &line}) {
    std::array<bool, 3> seen{};
    for (auto it = std::sregex_iterator(raw.begin(), raw.end(), *re); it != std::sregex_iterator(); ++it) {
      const int idx = std::stoi((*it)[1].str()) - 1;
      if (seen[idx]) continue;
      seen[idx] = true;
      std::string text = (*it)[2].str();
      if (re == &quoted) {
        const auto unescaped = nlohmann::json::parse("\"" + text + "\"", nullptr, false);
        if (!unescaped.is_discarded()) text = unescaped.get<std::string>();
      }
      out[idx] = trim(text);
    }
    if (seen[0] && seen[1] && seen[2]) return out;
  }
  fail(ErrorCode::ParseError, "response does not contain three descriptions");
}

Response generate_descriptions(const Request& req, Client& client) {
  const auto start = std::chrono::steady_clock::now();
  Response r;
  r.raw = client.complete(req);
  r.latency_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  r.descriptions = parse_descriptions(r.raw);
  return r;
}

std::vector<Response> generate_batch(const std::vector<Request>& requests,
                                     const std::function<std::unique_ptr<Client>()>& make,
                                     int max_in_flight) {
  std::vector<Response> out(requests.size());
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  auto worker = [&] {
    try {
      auto client = make();
      for (std::size_t i = next++; i < requests.size() && !failed; i = next++) {
        out[i] = generate_descriptions(requests[i], *client);
      }
    } catch (...) {
      std::lock_guard lock(error_mutex);
      if (!first_error) first_error = std::current_exception();
      failed = true;
    }
  };
  const int n = std::max(1, std::min<int>(max_in_flight, static_cast<int>(requests.size())));
  std::vector<std::thread> threads;
  for (int i = 0; i < n; ++i) threads.emplace_back(worker);
  for (auto& t : threads) t.join();
  if (first_error) std::rethrow_exception(first_error);
  return out;
}

}  // namespace hm::llm

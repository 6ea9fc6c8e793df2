#include <gtest/gtest.h>

#include <atomic>
#include <thread>

#include "handmotion/error.hpp"
#include "handmotion/llm.hpp"
#include "test_util.hpp"

// resolv.h (pulled in by httplib) defines _res, which clashes with Eigen internals.
#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

using namespace hm;
using namespace hm::llm;

namespace {

const char* kGood = R"({"Description 1": "One.", "Description 2": "Two \"quoted\".", "Description 3": "Three."})";

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no exception";
  return ErrorCode::ConfigError;
}

/// Local endpoint that fails the first `failures` calls with `status`.
class FlakyServer {
 public:
  FlakyServer(int failures, int status) : failures_(failures), status_(status) {
    server_.Post("/v1/generate", [this](const httplib::Request& req, httplib::Response& res) {
      const int n = calls_++;
      last_auth_ = req.get_header_value("Authorization");
      last_body_ = req.body;
      if (n < failures_) {
        res.status = status_;
        return;
      }
      res.set_content(nlohmann::json{{"text", kGood}}.dump(), "application/json");
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~FlakyServer() {
    server_.stop();
    thread_.join();
  }
  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_) + "/v1/generate"; }
  int calls() const { return calls_; }
  std::string last_auth_, last_body_;

 private:
  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
  int failures_, status_;
  std::atomic<int> calls_{0};
};

HttpConfig fast(const std::string& url) {
  HttpConfig cfg;
  cfg.url = url;
  cfg.timeout_s = 5.0;
  cfg.max_retries = 3;
  cfg.backoff_initial_s = 0.01;
  return cfg;
}

}  // namespace

TEST(RequestKey, StableAcrossFieldOrder) {
  const auto a = nlohmann::json::parse(R"({"prompt": "p", "model": "m", "temperature": 0.7, "seed": 3})");
  const auto b = nlohmann::json::parse(R"({"seed": 3, "temperature": 0.7, "model": "m", "prompt": "p"})");
  EXPECT_EQ(Request::from_json(a).key(), Request::from_json(b).key());
  Request c = Request::from_json(a);
  c.seed = 4;
  EXPECT_NE(c.key(), Request::from_json(a).key());
  EXPECT_EQ(Request::from_json(a).key().size(), 64u);
}

TEST(ParseDescriptions, JsonAndLineForms) {
  auto d = parse_descriptions(kGood);
  EXPECT_EQ(d[1], "Two \"quoted\".");
  d = parse_descriptions(std::string("Sure!\n```json\n") + kGood + "\n```\n");
  EXPECT_EQ(d[0], "One.");
  d = parse_descriptions("Description 1: A.\nDescription 2: B.\n**Description 3:** C.");
  EXPECT_EQ(d[2], "C.");
  d = parse_descriptions(R"({"role": "model", "content": {"Description 1": "x", "Description 2": "y", "Description 3": "z", "Comment": ""}})");
  EXPECT_EQ(d[0], "x");
}

TEST(ParseDescriptions, TwoDescriptionsRejected) {
  EXPECT_EQ(code_of([] { parse_descriptions(R"({"Description 1": "a", "Description 2": "b"})"); }),
            ErrorCode::ParseError);
  EXPECT_EQ(code_of([] { parse_descriptions("nothing useful"); }), ErrorCode::ParseError);
}

TEST(FixtureClient, ReplayAndMiss) {
  const auto dir = test::temp_dir("llm_fixtures");
  Request req;
  req.prompt = "describe";
  req.seed = 5;
  FixtureClient::record(dir, req, kGood);
  FixtureClient client(dir);
  const Response r = generate_descriptions(req, client);
  EXPECT_EQ(r.raw, kGood);
  EXPECT_EQ(r.descriptions[2], "Three.");
  req.seed = 6;
  EXPECT_EQ(code_of([&] { client.complete(req); }), ErrorCode::FixtureMiss);
  EXPECT_EQ(code_of([&] { make_client("fixtures:" + (dir / "missing").string()); }), ErrorCode::IoError);
}

TEST(HttpClient, RetriesTransientFailures) {
  FlakyServer server(2, 503);
  setenv("HANDMOTION_TEST_KEY", "sekret", 1);
  HttpConfig cfg = fast(server.url());
  cfg.api_key_env = "HANDMOTION_TEST_KEY";
  HttpClient client(cfg);
  Request req;
  req.prompt = "hello";
  const Response r = generate_descriptions(req, client);
  EXPECT_EQ(r.descriptions[0], "One.");
  EXPECT_EQ(client.attempts(), 3);
  EXPECT_EQ(server.calls(), 3);
  EXPECT_EQ(server.last_auth_, "Bearer sekret");
  EXPECT_EQ(nlohmann::json::parse(server.last_body_), req.to_json());
}

TEST(HttpClient, GivesUpAfterMaxRetries) {
  FlakyServer server(100, 500);
  HttpClient client(fast(server.url()));
  EXPECT_EQ(code_of([&] { client.complete(Request{}); }), ErrorCode::EndpointError);
  EXPECT_EQ(server.calls(), 4);
}

TEST(HttpClient, ClientErrorsAreNotRetried) {
  FlakyServer server(100, 400);
  HttpClient client(fast(server.url()));
  EXPECT_EQ(code_of([&] { client.complete(Request{}); }), ErrorCode::EndpointError);
  EXPECT_EQ(server.calls(), 1);
}

TEST(HttpClient, UnreachableEndpoint) {
  HttpConfig cfg = fast("http://127.0.0.1:1/none");
  cfg.max_retries = 1;
  HttpClient client(cfg);
  EXPECT_EQ(code_of([&] { client.complete(Request{}); }), ErrorCode::EndpointError);
  EXPECT_EQ(code_of([] { HttpClient bad(fast("ftp://x")); }), ErrorCode::ConfigError);
}

TEST(GenerateBatch, BoundedConcurrencyKeepsOrder) {
  FlakyServer server(1, 503);
  std::vector<Request> reqs(6);
  for (int i = 0; i < 6; ++i) reqs[i].prompt = "p" + std::to_string(i);
  const auto out = generate_batch(
      reqs, [&] { return std::make_unique<HttpClient>(fast(server.url())); }, 3);
  ASSERT_EQ(out.size(), 6u);
  for (const auto& r : out) EXPECT_EQ(r.descriptions[1], "Two \"quoted\".");
  EXPECT_EQ(server.calls(), 7);
}

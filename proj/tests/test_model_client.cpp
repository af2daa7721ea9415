#include <atomic>
#include <chrono>
#include <cstdlib>
#include <memory>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "doctest.h"
#include "httplib.h"
#include "json.hpp"
#include "mageval/digest.hpp"
#include "mageval/errors.hpp"
#include "mageval/model_client.hpp"
#include "support/tmpdir.hpp"

using namespace mageval;
using mageval::testsup::TempDir;

namespace {

DecodingConfig decoding(double temp = 0.0, int max_tokens = 16) {
  DecodingConfig d;
  d.temperature = temp;
  d.max_output_tokens = max_tokens;
  return d;
}

TrialRequest request_for(const std::string& image_bytes, const std::string& prompt) {
  TrialRequest req;
  req.image_bytes = image_bytes;
  req.image_sha256 = sha256_hex(image_bytes);
  req.media_type = "image/png";
  req.prompt = prompt;
  return req;
}

// Backend that answers a fixed string and counts invocations.
class CountingBackend : public Backend {
 public:
  std::string send(const TrialRequest&, const EndpointConfig&, const DecodingConfig&) override {
    ++calls;
    return "Yes.";
  }
  bool offline() const override { return true; }
  int calls = 0;
};

std::string chat_payload(const std::string& content) {
  nlohmann::json j;
  j["choices"] = nlohmann::json::array(
      {nlohmann::json{{"message", nlohmann::json{{"content", content}}}}});
  return j.dump();
}

// Minimal in-process OpenAI-style endpoint for transport tests.
struct LocalServer {
  httplib::Server server;
  std::thread thread;
  int port = 0;
  std::atomic<int> hits{0};
  std::atomic<int> fail_first{0};  // respond 429 to this many requests
  std::string last_auth;
  std::string last_body;

  LocalServer() {
    server.Post("/v1/chat/completions",
                [this](const httplib::Request& req, httplib::Response& res) {
                  ++hits;
                  last_auth = req.get_header_value("Authorization");
                  last_body = req.body;
                  if (fail_first.load() > 0) {
                    --fail_first;
                    res.status = 429;
                    res.set_content("slow down", "text/plain");
                    return;
                  }
                  res.set_content(chat_payload("Yes."), "application/json");
                });
    server.Post("/v1/broken/chat/completions",
                [](const httplib::Request&, httplib::Response& res) {
                  res.set_content("not json at all", "application/json");
                });
    server.Post("/v1/denied/chat/completions",
                [](const httplib::Request&, httplib::Response& res) {
                  res.status = 401;
                  res.set_content("bad credentials", "text/plain");
                });
    server.Post("/v1/flaky/chat/completions",
                [](const httplib::Request&, httplib::Response& res) {
                  res.status = 503;
                  res.set_content("overloaded", "text/plain");
                });
    port = server.bind_to_any_port("127.0.0.1");
    REQUIRE(port > 0);
    thread = std::thread([this] { server.listen_after_bind(); });
    server.wait_until_ready();
  }
  ~LocalServer() {
    server.stop();
    thread.join();
  }

  EndpointConfig endpoint(const std::string& prefix = "/v1") const {
    EndpointConfig e;
    e.base_url = "http://127.0.0.1:" + std::to_string(port) + prefix;
    e.model = "mock-vlm";
    e.timeout_seconds = 5;
    e.max_retries = 2;
    return e;
  }
};

}  // namespace

TEST_SUITE_BEGIN("model_client");

TEST_CASE("cache_key is deterministic and sensitive to every identity field") {
  const auto base = cache_key("m", "prompt", "imghash", decoding(0.0, 16));
  CHECK(base.size() == 64);
  CHECK(base.find_first_not_of("0123456789abcdef") == std::string::npos);
  CHECK(cache_key("m", "prompt", "imghash", decoding(0.0, 16)) == base);

  std::set<std::string> keys{base};
  CHECK(keys.insert(cache_key("m2", "prompt", "imghash", decoding(0.0, 16))).second);
  CHECK(keys.insert(cache_key("m", "prompt!", "imghash", decoding(0.0, 16))).second);
  CHECK(keys.insert(cache_key("m", "prompt", "otherhash", decoding(0.0, 16))).second);
  CHECK(keys.insert(cache_key("m", "prompt", "imghash", decoding(0.5, 16))).second);
  CHECK(keys.insert(cache_key("m", "prompt", "imghash", decoding(0.0, 17))).second);
}

TEST_CASE("cache store appends entries and treats them as immutable") {
  TempDir tmp("cache");
  const auto file = tmp / "cache.jsonl";
  {
    CacheStore store(file);
    CHECK(store.size() == 0);
    CHECK_FALSE(store.find("k1").has_value());
    store.put(CacheEntry{"k1", "m", "p", "i", 0.0, 16, "Yes.", 12, "2026-01-01T00:00:00Z"});
    store.put(CacheEntry{"k1", "m", "p", "i", 0.0, 16, "OVERWRITE", 99, ""});
    store.put(CacheEntry{"k2", "m", "p", "i", 0.0, 16, "No.", 7, ""});
    CHECK(store.size() == 2);
    CHECK(store.find("k1")->response == "Yes.");  // first write wins
  }
  {
    // Reopen: the file round-trips both entries, still first-occurrence-wins.
    CacheStore store(file);
    CHECK(store.size() == 2);
    CHECK(store.find("k1")->response == "Yes.");
    CHECK(store.find("k1")->latency_ms == 12);
    CHECK(store.find("k2")->response == "No.");
  }
  // Exactly two physical lines: the duplicate put was never appended.
  const std::string bytes = read_file(file);
  CHECK(std::count(bytes.begin(), bytes.end(), '\n') == 2);
}

TEST_CASE("cache load keeps the first occurrence of duplicated keys") {
  TempDir tmp("cache");
  const auto file = tmp / "dup.jsonl";
  write_file(file,
             R"({"key":"k","response":"first"})" "\n"
             R"({"key":"k","response":"second"})" "\n");
  CacheStore store(file);
  CHECK(store.size() == 1);
  CHECK(store.find("k")->response == "first");
}

TEST_CASE("cache load reports malformed lines with their number") {
  TempDir tmp("cache");
  const auto file = tmp / "bad.jsonl";
  write_file(file, R"({"key":"k","response":"ok"})" "\n{oops\n");
  CHECK_THROWS_WITH_AS(CacheStore{file}, doctest::Contains(":2"), ValidationError);
}

TEST_CASE("backoff delay doubles, caps at 30s and jitters into the lower half") {
  using std::chrono::milliseconds;
  CHECK(backoff_delay(0, 0.0) == milliseconds(500));
  CHECK(backoff_delay(1, 0.0) == milliseconds(1000));
  CHECK(backoff_delay(2, 0.0) == milliseconds(2000));
  CHECK(backoff_delay(0, 0.5) == milliseconds(750));
  CHECK(backoff_delay(4, 0.0) == milliseconds(8000));
  CHECK(backoff_delay(5, 0.0) == milliseconds(15000));  // 32s nominal capped to 30s
  CHECK(backoff_delay(10, 0.0) == milliseconds(15000));  // capped nominal 30s
  CHECK(backoff_delay(62, 0.25) == milliseconds(18750));

  for (int attempt = 0; attempt <= 40; ++attempt) {
    const std::int64_t nominal =
        std::min<std::int64_t>(30000, 1000LL << std::min(attempt, 5));
    for (const double jitter : {0.0, 0.3, 0.7, 0.999999}) {
      const auto d = backoff_delay(attempt, jitter).count();
      CAPTURE(attempt);
      CAPTURE(jitter);
      CHECK(d >= nominal / 2);
      CHECK(d < nominal);
    }
  }
}

TEST_CASE("request body carries one data-url image part and one text part") {
  const auto req = request_for("abc", "Is there a cat? Answer:");
  EndpointConfig endpoint;
  endpoint.model = "mock-vlm";
  const auto body = nlohmann::json::parse(HttpBackend::request_body(req, endpoint, decoding(0.2, 9)));
  CHECK(body.at("model") == "mock-vlm");
  CHECK(body.at("temperature").get<double>() == doctest::Approx(0.2));
  CHECK(body.at("max_tokens") == 9);
  REQUIRE(body.at("messages").size() == 1);
  const auto& msg = body["messages"][0];
  CHECK(msg.at("role") == "user");
  REQUIRE(msg.at("content").size() == 2);
  CHECK(msg["content"][0].at("type") == "image_url");
  CHECK(msg["content"][0].at("image_url").at("url") == "data:image/png;base64,YWJj");
  CHECK(msg["content"][1].at("type") == "text");
  CHECK(msg["content"][1].at("text") == "Is there a cat? Answer:");
}

TEST_CASE("request body base64 handles both padding lengths") {
  EndpointConfig endpoint;
  auto url_for = [&](const std::string& bytes) {
    const auto body =
        nlohmann::json::parse(HttpBackend::request_body(request_for(bytes, "q"), endpoint, decoding()));
    return body["messages"][0]["content"][0]["image_url"]["url"].get<std::string>();
  };
  CHECK(url_for("a") == "data:image/png;base64,YQ==");
  CHECK(url_for("ab") == "data:image/png;base64,YWI=");
  CHECK(url_for(std::string("\x00\xff\x10", 3)) == "data:image/png;base64,AP8Q");
}

TEST_CASE("replay backend serves by key and refuses unknown requests") {
  TempDir tmp("replay");
  const auto fixture = tmp / "fixture.jsonl";
  const auto dec = decoding();
  const std::string key = cache_key("mock-vlm", "known prompt", "imghash", dec);
  write_file(fixture, nlohmann::json{{"key", key}, {"response", "No."}}.dump() + "\n");

  ReplayBackend backend(fixture);
  CHECK(backend.size() == 1);
  CHECK(backend.offline());

  EndpointConfig endpoint;
  endpoint.model = "mock-vlm";
  TrialRequest req;
  req.prompt = "known prompt";
  req.image_sha256 = "imghash";
  CHECK(backend.send(req, endpoint, dec) == "No.");

  req.prompt = "unknown prompt";
  try {
    backend.send(req, endpoint, dec);
    FAIL("expected TransportError");
  } catch (const TransportError& e) {
    CHECK_FALSE(e.retryable);
    CHECK(std::string(e.what()).find("no entry") != std::string::npos);
  }
}

TEST_CASE("client serves repeats from the cache without touching the backend") {
  TempDir tmp("client");
  auto backend = std::make_shared<CountingBackend>();
  auto cache = std::make_shared<CacheStore>(tmp / "cache.jsonl");
  EndpointConfig endpoint;
  endpoint.model = "mock-vlm";
  ModelClient client(endpoint, decoding(), backend, cache);

  const auto req = request_for("bytes", "Is there a dog? Answer:");
  const TrialResponse first = client.complete(req);
  CHECK(first.text == "Yes.");
  CHECK(first.attempts == 1);
  CHECK_FALSE(first.cache_hit);
  CHECK(client.backend_calls() == 1);
  CHECK(client.cache_hits() == 0);
  CHECK(client.network_calls() == 0);  // offline backend

  const TrialResponse second = client.complete(req);
  CHECK(second.text == "Yes.");
  CHECK(second.attempts == 0);
  CHECK(second.cache_hit);
  CHECK(backend->calls == 1);
  CHECK(client.backend_calls() == 1);
  CHECK(client.cache_hits() == 1);

  // The cached entry records the trial identity fields.
  const auto key = cache_key("mock-vlm", req.prompt, req.image_sha256, decoding());
  const auto entry = cache->find(key);
  REQUIRE(entry.has_value());
  CHECK(entry->prompt_sha256 == sha256_hex(req.prompt));
  CHECK(entry->image_sha256 == req.image_sha256);
}

TEST_CASE("live request without image bytes is rejected before the network") {
  HttpBackend backend;
  EndpointConfig endpoint;
  endpoint.base_url = "http://127.0.0.1:1";  // never reached
  TrialRequest req;
  req.image_sha256 = "deadbeef";
  req.prompt = "q";
  try {
    backend.send(req, endpoint, decoding());
    FAIL("expected TransportError");
  } catch (const TransportError& e) {
    CHECK_FALSE(e.retryable);
    CHECK(std::string(e.what()).find("image bytes") != std::string::npos);
  }
}

TEST_CASE("missing credential env var fails without a request") {
  HttpBackend backend;
  EndpointConfig endpoint;
  endpoint.base_url = "http://127.0.0.1:1";
  endpoint.credential_env = "MAGEVAL_TEST_UNSET_CREDENTIAL";
  ::unsetenv("MAGEVAL_TEST_UNSET_CREDENTIAL");
  try {
    backend.send(request_for("abc", "q"), endpoint, decoding());
    FAIL("expected TransportError");
  } catch (const TransportError& e) {
    CHECK_FALSE(e.retryable);
    CHECK(std::string(e.what()).find("MAGEVAL_TEST_UNSET_CREDENTIAL") != std::string::npos);
  }
}

TEST_CASE("http transport round trip against a local endpoint") {
  LocalServer srv;
  auto backend = std::make_shared<HttpBackend>();

  SUBCASE("success carries the bearer token and parses the reply") {
    ::setenv("MAGEVAL_TEST_CREDENTIAL", "sekret", 1);
    auto endpoint = srv.endpoint();
    endpoint.credential_env = "MAGEVAL_TEST_CREDENTIAL";
    ModelClient client(endpoint, decoding(), backend);
    const TrialResponse resp = client.complete(request_for("abc", "Is there a cat? Answer:"));
    CHECK(resp.text == "Yes.");
    CHECK(resp.attempts == 1);
    CHECK(client.network_calls() == 1);
    CHECK(srv.last_auth == "Bearer sekret");
    const auto body = nlohmann::json::parse(srv.last_body);
    CHECK(body.at("model") == "mock-vlm");
    ::unsetenv("MAGEVAL_TEST_CREDENTIAL");
  }

  SUBCASE("429 is retried with recorded backoff, then succeeds") {
    srv.fail_first = 2;
    ModelClient client(srv.endpoint(), decoding(), backend);
    std::vector<std::chrono::milliseconds> sleeps;
    client.set_sleeper([&](std::chrono::milliseconds d) { sleeps.push_back(d); });
    const TrialResponse resp = client.complete(request_for("abc", "q"));
    CHECK(resp.text == "Yes.");
    CHECK(resp.attempts == 3);
    CHECK(srv.hits.load() == 3);
    REQUIRE(sleeps.size() == 2);
    CHECK(sleeps[0].count() >= 500);
    CHECK(sleeps[0].count() < 1000);
    CHECK(sleeps[1].count() >= 1000);
    CHECK(sleeps[1].count() < 2000);
  }

  SUBCASE("401 is not retried") {
    ModelClient client(srv.endpoint("/v1/denied"), decoding(), backend);
    int sleep_count = 0;
    client.set_sleeper([&](std::chrono::milliseconds) { ++sleep_count; });
    try {
      client.complete(request_for("abc", "q"));
      FAIL("expected TransportError");
    } catch (const TransportError& e) {
      CHECK(e.status == 401);
      const std::string what = e.what();
      CHECK(what.find("HTTP 401") != std::string::npos);
      CHECK(what.find("(after 1 attempt(s))") != std::string::npos);
    }
    CHECK(sleep_count == 0);
  }

  SUBCASE("retryable failures stop after max_retries") {
    auto endpoint = srv.endpoint("/v1/flaky");
    endpoint.max_retries = 2;
    ModelClient client(endpoint, decoding(), backend);
    int sleep_count = 0;
    client.set_sleeper([&](std::chrono::milliseconds) { ++sleep_count; });
    try {
      client.complete(request_for("abc", "q"));
      FAIL("expected TransportError");
    } catch (const TransportError& e) {
      CHECK(e.status == 503);
      CHECK(std::string(e.what()).find("(after 3 attempt(s))") != std::string::npos);
    }
    CHECK(sleep_count == 2);
    CHECK(client.backend_calls() == 3);
  }

  SUBCASE("malformed payloads surface the body and do not retry") {
    ModelClient client(srv.endpoint("/v1/broken"), decoding(), backend);
    try {
      client.complete(request_for("abc", "q"));
      FAIL("expected TransportError");
    } catch (const TransportError& e) {
      CHECK(std::string(e.what()).find("malformed response payload") != std::string::npos);
      CHECK(std::string(e.what()).find("not json at all") != std::string::npos);
    }
  }

  SUBCASE("connection refused is retryable until attempts run out") {
    EndpointConfig endpoint = srv.endpoint();
    endpoint.base_url = "http://127.0.0.1:9";  // discard port, nothing listens
    endpoint.max_retries = 1;
    endpoint.timeout_seconds = 1;
    ModelClient client(endpoint, decoding(), backend);
    int sleep_count = 0;
    client.set_sleeper([&](std::chrono::milliseconds) { ++sleep_count; });
    CHECK_THROWS_WITH_AS(client.complete(request_for("abc", "q")),
                         doctest::Contains("(after 2 attempt(s))"), TransportError);
    CHECK(sleep_count == 1);
  }
}

TEST_SUITE_END();

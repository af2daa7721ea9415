#include "mageval/model_client.hpp"

#include <httplib.h>
#include <json.hpp>

#include <cstdlib>
#include <ctime>
#include <fstream>
#include <random>
#include <sstream>
#include <thread>

#include "mageval/digest.hpp"
#include "mageval/errors.hpp"

namespace mageval {

namespace {

using nlohmann::json;

// Canonical serialization hashed into the trial identity. Field order is part
// of the cache contract and must never change.
std::string key_material(const std::string& model, const std::string& prompt,
                         const std::string& image_sha256, const DecodingConfig& decoding) {
  json j;
  j["image_sha256"] = image_sha256;
  j["max_output_tokens"] = decoding.max_output_tokens;
  j["model"] = model;
  j["prompt_sha256"] = sha256_hex(prompt);
  j["temperature"] = decoding.temperature;
  return j.dump();
}

std::string utc_timestamp() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

json entry_to_json(const CacheEntry& e) {
  json j;
  j["key"] = e.key;
  j["model"] = e.model;
  j["prompt_sha256"] = e.prompt_sha256;
  j["image_sha256"] = e.image_sha256;
  j["temperature"] = e.temperature;
  j["max_output_tokens"] = e.max_output_tokens;
  j["response"] = e.response;
  j["latency_ms"] = e.latency_ms;
  j["timestamp"] = e.timestamp;
  return j;
}

CacheEntry entry_from_json(const json& j) {
  CacheEntry e;
  e.key = j.at("key").get<std::string>();
  e.model = j.value("model", "");
  e.prompt_sha256 = j.value("prompt_sha256", "");
  e.image_sha256 = j.value("image_sha256", "");
  e.temperature = j.value("temperature", 0.0);
  e.max_output_tokens = j.value("max_output_tokens", 0);
  e.response = j.at("response").get<std::string>();
  e.latency_ms = j.value("latency_ms", std::int64_t{0});
  e.timestamp = j.value("timestamp", "");
  return e;
}

std::string base64_encode(std::string_view bytes) {
  static const char* alphabet =
      "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  size_t i = 0;
  while (i + 3 <= bytes.size()) {
    const unsigned v = (static_cast<unsigned char>(bytes[i]) << 16) |
                       (static_cast<unsigned char>(bytes[i + 1]) << 8) |
                       static_cast<unsigned char>(bytes[i + 2]);
    out += alphabet[(v >> 18) & 63];
    out += alphabet[(v >> 12) & 63];
    out += alphabet[(v >> 6) & 63];
    out += alphabet[v & 63];
    i += 3;
  }
  if (i + 1 == bytes.size()) {
    const unsigned v = static_cast<unsigned char>(bytes[i]) << 16;
    out += alphabet[(v >> 18) & 63];
    out += alphabet[(v >> 12) & 63];
    out += "==";
  } else if (i + 2 == bytes.size()) {
    const unsigned v = (static_cast<unsigned char>(bytes[i]) << 16) |
                       (static_cast<unsigned char>(bytes[i + 1]) << 8);
    out += alphabet[(v >> 18) & 63];
    out += alphabet[(v >> 12) & 63];
    out += alphabet[(v >> 6) & 63];
    out += '=';
  }
  return out;
}

bool retryable_status(int status) {
  return status == 408 || status == 429 || status >= 500;
}

// Splits "https://host:port/prefix" into client target and path prefix.
std::pair<std::string, std::string> split_base_url(const std::string& base_url) {
  const auto scheme_end = base_url.find("://");
  if (scheme_end == std::string::npos) {
    throw ConfigError("base_url must include a scheme: " + base_url);
  }
  const auto path_start = base_url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {base_url, ""};
  std::string prefix = base_url.substr(path_start);
  while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
  return {base_url.substr(0, path_start), prefix};
}

}  // namespace

std::string cache_key(const std::string& model, const std::string& prompt,
                      const std::string& image_sha256, const DecodingConfig& decoding) {
  return sha256_hex(key_material(model, prompt, image_sha256, decoding));
}

CacheStore::CacheStore(std::filesystem::path file) : file_(std::move(file)) {
  if (!std::filesystem::exists(file_)) return;
  std::istringstream in(read_file(file_));
  std::string line;
  std::int64_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      CacheEntry e = entry_from_json(json::parse(line));
      entries_.emplace(e.key, std::move(e));  // first occurrence wins
    } catch (const json::exception& e) {
      throw ValidationError(file_.string() + ":" + std::to_string(lineno) +
                            ": malformed cache entry: " + e.what());
    }
  }
}

std::optional<CacheEntry> CacheStore::find(const std::string& key) const {
  std::lock_guard lock(mutex_);
  const auto it = entries_.find(key);
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

void CacheStore::put(const CacheEntry& entry) {
  std::lock_guard lock(mutex_);
  if (!entries_.emplace(entry.key, entry).second) return;  // immutable once written
  if (file_.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(file_.parent_path(), ec);
  }
  std::ofstream out(file_, std::ios::binary | std::ios::app);
  if (!out) throw ValidationError("cannot append to cache file: " + file_.string());
  out << entry_to_json(entry).dump() << '\n';
  if (!out) throw ValidationError("error while appending to cache file: " + file_.string());
}

std::size_t CacheStore::size() const {
  std::lock_guard lock(mutex_);
  return entries_.size();
}

std::string HttpBackend::request_body(const TrialRequest& request, const EndpointConfig& endpoint,
                                      const DecodingConfig& decoding) {
  json image_part;
  image_part["type"] = "image_url";
  image_part["image_url"]["url"] =
      "data:" + request.media_type + ";base64," + base64_encode(request.image_bytes);
  json text_part;
  text_part["type"] = "text";
  text_part["text"] = request.prompt;

  json body;
  body["model"] = endpoint.model;
  body["temperature"] = decoding.temperature;
  body["max_tokens"] = decoding.max_output_tokens;
  body["messages"] = json::array({json{{"role", "user"},
                                       {"content", json::array({image_part, text_part})}}});
  return body.dump();
}

std::string HttpBackend::send(const TrialRequest& request, const EndpointConfig& endpoint,
                              const DecodingConfig& decoding) {
  if (request.image_bytes.empty()) {
    throw TransportError("live request without image bytes (image_ref is hash-only?)", false);
  }
  const auto [target, prefix] = split_base_url(endpoint.base_url);
  httplib::Client client(target);
  client.set_connection_timeout(endpoint.timeout_seconds, 0);
  client.set_read_timeout(endpoint.timeout_seconds, 0);
  client.set_write_timeout(endpoint.timeout_seconds, 0);

  httplib::Headers headers;
  if (!endpoint.credential_env.empty()) {
    const char* token = std::getenv(endpoint.credential_env.c_str());
    if (!token || !*token) {
      throw TransportError("credential env var " + endpoint.credential_env + " is not set", false);
    }
    headers.emplace("Authorization", std::string("Bearer ") + token);
  }

  const auto result = client.Post(prefix + "/chat/completions", headers,
                                  request_body(request, endpoint, decoding), "application/json");
  if (!result) {
    throw TransportError("connection to " + endpoint.base_url +
                             " failed: " + httplib::to_string(result.error()),
                         true);
  }
  if (result->status != 200) {
    throw TransportError("HTTP " + std::to_string(result->status) + " from " + endpoint.base_url +
                             ": " + result->body,
                         retryable_status(result->status), result->status);
  }
  try {
    const json doc = json::parse(result->body);
    return doc.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const json::exception& e) {
    throw TransportError(std::string("malformed response payload: ") + e.what() +
                             "; body: " + result->body,
                         false, result->status);
  }
}

ReplayBackend::ReplayBackend(const std::filesystem::path& fixture) {
  std::istringstream in(read_file(fixture));
  std::string line;
  std::int64_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      responses_[j.at("key").get<std::string>()] = j.at("response").get<std::string>();
    } catch (const json::exception& e) {
      throw ValidationError(fixture.string() + ":" + std::to_string(lineno) +
                            ": malformed replay entry: " + e.what());
    }
  }
}

std::string ReplayBackend::send(const TrialRequest& request, const EndpointConfig& endpoint,
                                const DecodingConfig& decoding) {
  const std::string key = cache_key(endpoint.model, request.prompt, request.image_sha256, decoding);
  const auto it = responses_.find(key);
  if (it == responses_.end()) {
    throw TransportError("replay fixture has no entry for key " + key, false);
  }
  return it->second;
}

std::chrono::milliseconds backoff_delay(int attempt, double jitter01) {
  constexpr std::int64_t base_ms = 1000;
  constexpr std::int64_t cap_ms = 30000;
  std::int64_t nominal = base_ms;
  for (int i = 0; i < attempt && nominal < cap_ms; ++i) nominal *= 2;
  nominal = std::min(nominal, cap_ms);
  const auto jittered = nominal / 2 + static_cast<std::int64_t>(jitter01 * (nominal / 2.0));
  return std::chrono::milliseconds(jittered);
}

ModelClient::ModelClient(EndpointConfig endpoint, DecodingConfig decoding,
                         std::shared_ptr<Backend> backend, std::shared_ptr<CacheStore> cache)
    : endpoint_(std::move(endpoint)),
      decoding_(decoding),
      backend_(std::move(backend)),
      cache_(std::move(cache)),
      sleeper_([](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); }) {
  if (!backend_) throw ConfigError("ModelClient requires a backend");
}

void ModelClient::set_sleeper(std::function<void(std::chrono::milliseconds)> sleeper) {
  sleeper_ = std::move(sleeper);
}

TrialResponse ModelClient::complete(const TrialRequest& request) {
  const std::string key =
      cache_key(endpoint_.model, request.prompt, request.image_sha256, decoding_);
  if (cache_) {
    if (const auto hit = cache_->find(key)) {
      cache_hits_.fetch_add(1);
      return TrialResponse{hit->response, 0, hit->latency_ms, true};
    }
  }

  thread_local std::mt19937_64 jitter_rng(std::random_device{}());
  std::uniform_real_distribution<double> jitter01(0.0, 1.0);

  int attempt = 0;
  for (;;) {
    backend_calls_.fetch_add(1);
    const auto t0 = std::chrono::steady_clock::now();
    try {
      std::string text = backend_->send(request, endpoint_, decoding_);
      const auto latency = std::chrono::duration_cast<std::chrono::milliseconds>(
                               std::chrono::steady_clock::now() - t0)
                               .count();
      if (cache_) {
        cache_->put(CacheEntry{key, endpoint_.model, sha256_hex(request.prompt),
                               request.image_sha256, decoding_.temperature,
                               decoding_.max_output_tokens, text, latency, utc_timestamp()});
      }
      return TrialResponse{std::move(text), attempt + 1, latency, false};
    } catch (const TransportError& e) {
      if (!e.retryable || attempt >= endpoint_.max_retries) {
        throw TransportError(std::string(e.what()) + " (after " + std::to_string(attempt + 1) +
                                 " attempt(s))",
                             false, e.status);
      }
      sleeper_(backoff_delay(attempt, jitter01(jitter_rng)));
      ++attempt;
    }
  }
}

}  // namespace mageval

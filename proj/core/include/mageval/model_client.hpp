#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>

namespace mageval {

struct EndpointConfig {
  std::string base_url;        // e.g. https://api.openai.com/v1
  std::string model;
  std::string credential_env;  // env var holding the bearer token; empty -> anonymous
  int timeout_seconds = 60;
  int max_retries = 3;         // retries after the first attempt
};

struct DecodingConfig {
  double temperature = 0.0;
  int max_output_tokens = 64;
};

struct TrialRequest {
  std::string image_sha256;  // content hash of the image bytes
  std::string image_bytes;   // raw bytes; empty when only the hash is known (replay-only)
  std::string media_type;    // image/jpeg, image/png, ...
  std::string prompt;
};

struct TrialResponse {
  std::string text;
  int attempts = 0;  // backend attempts made; 0 on a cache hit
  std::int64_t latency_ms = 0;
  bool cache_hit = false;
};

// Identity of a completed trial: SHA-256 over a canonical serialization of
// (model id, prompt text, image content hash, temperature, max output tokens).
std::string cache_key(const std::string& model, const std::string& prompt,
                      const std::string& image_sha256, const DecodingConfig& decoding);

struct CacheEntry {
  std::string key;
  std::string model;
  std::string prompt_sha256;
  std::string image_sha256;
  double temperature = 0.0;
  int max_output_tokens = 0;
  std::string response;
  std::int64_t latency_ms = 0;
  std::string timestamp;  // ISO-8601 UTC of the original call
};

// Append-only JSONL response cache. Entries are immutable: appends for a key
// already present are ignored, and the first occurrence wins on load.
class CacheStore {
 public:
  explicit CacheStore(std::filesystem::path file);

  std::optional<CacheEntry> find(const std::string& key) const;
  void put(const CacheEntry& entry);
  std::size_t size() const;
  const std::filesystem::path& file() const { return file_; }

 private:
  std::filesystem::path file_;
  mutable std::mutex mutex_;
  std::map<std::string, CacheEntry> entries_;
};

// Transport abstraction behind the client. Implementations either return the
// raw response text or throw TransportError (retryable flag set for transient
// failures).
class Backend {
 public:
  virtual ~Backend() = default;
  virtual std::string send(const TrialRequest& request, const EndpointConfig& endpoint,
                           const DecodingConfig& decoding) = 0;
  // True when send() never touches the network (replay/mock transports).
  virtual bool offline() const = 0;
};

// OpenAI-compatible chat-completions transport. Each request carries exactly
// one image part (data URL) and one text part.
class HttpBackend : public Backend {
 public:
  std::string send(const TrialRequest&, const EndpointConfig&, const DecodingConfig&) override;
  bool offline() const override { return false; }

  // Exposed for tests: the JSON body a request serializes to.
  static std::string request_body(const TrialRequest&, const EndpointConfig&,
                                  const DecodingConfig&);
};

// Offline transport serving responses from a fixture keyed by cache_key().
// A missing key is a non-retryable TransportError.
class ReplayBackend : public Backend {
 public:
  explicit ReplayBackend(const std::filesystem::path& fixture);

  std::string send(const TrialRequest&, const EndpointConfig&, const DecodingConfig&) override;
  bool offline() const override { return true; }
  std::size_t size() const { return responses_.size(); }

 private:
  std::map<std::string, std::string> responses_;
};

// Nominal delay 1s * 2^attempt capped at 30s, then equal-jittered into
// [nominal/2, nominal) using jitter01 in [0,1).
std::chrono::milliseconds backoff_delay(int attempt, double jitter01);

// Cache-fronted completion client with bounded retries. Thread-safe.
class ModelClient {
 public:
  ModelClient(EndpointConfig endpoint, DecodingConfig decoding, std::shared_ptr<Backend> backend,
              std::shared_ptr<CacheStore> cache = nullptr);

  // Cache lookup, then backend attempts with exponential backoff on retryable
  // failures. Successful fresh responses are appended to the cache.
  TrialResponse complete(const TrialRequest& request);

  const EndpointConfig& endpoint() const { return endpoint_; }
  const DecodingConfig& decoding() const { return decoding_; }
  bool offline() const { return backend_->offline(); }

  // Execution accounting (never persisted with results).
  std::int64_t backend_calls() const { return backend_calls_.load(); }
  std::int64_t network_calls() const { return backend_->offline() ? 0 : backend_calls_.load(); }
  std::int64_t cache_hits() const { return cache_hits_.load(); }

  // Test hook: replaces the real sleep between retries.
  void set_sleeper(std::function<void(std::chrono::milliseconds)> sleeper);

 private:
  EndpointConfig endpoint_;
  DecodingConfig decoding_;
  std::shared_ptr<Backend> backend_;
  std::shared_ptr<CacheStore> cache_;
  std::function<void(std::chrono::milliseconds)> sleeper_;
  std::atomic<std::int64_t> backend_calls_{0};
  std::atomic<std::int64_t> cache_hits_{0};
};

}  // namespace mageval

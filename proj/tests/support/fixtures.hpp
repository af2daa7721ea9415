#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "mageval/dataset.hpp"
#include "mageval/model_client.hpp"

namespace mageval::testsup {

// Model identity shared by every bundled replay entry.
inline constexpr const char* kMockModel = "mock-vlm";

inline DecodingConfig mock_decoding() {
  DecodingConfig d;
  d.temperature = 0.0;
  d.max_output_tokens = 16;
  return d;
}

inline EndpointConfig mock_endpoint() {
  EndpointConfig e;
  e.model = kMockModel;
  e.max_retries = 2;
  return e;
}

struct FixtureSet {
  // 100 items, 50 yes / 50 no, hash-only image refs, no sub-tasks.
  std::vector<EvalItem> synthetic100;
  // 40 items, 20 yes / 20 no, five sub-tasks x two modes, all groups balanced.
  std::vector<EvalItem> synthetic40;
  // cache_key -> response text, deterministic order. Covers synthetic100
  // under the original/rule2_only/magprompt templates (engineered to tally
  // {tp 40, fp 5, tn 45, fn 10} / {40,4,46,10} / {40,3,47,10}) and
  // synthetic40 under original (all correct).
  std::vector<std::pair<std::string, std::string>> replay;
};

FixtureSet build_fixture_set();

// Writes synthetic100.jsonl, synthetic40.jsonl (plus sidecar manifests),
// replay_mock.jsonl and run_replay_original.conf into dir.
void write_fixture_files(const std::filesystem::path& dir);

}  // namespace mageval::testsup

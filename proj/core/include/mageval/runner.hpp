#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mageval/dataset.hpp"
#include "mageval/label.hpp"
#include "mageval/metrics.hpp"
#include "mageval/model_client.hpp"
#include "mageval/prompts.hpp"

namespace mageval {

// Version tag of the answer-normalization rule set. Results are comparable
// only within one version; it participates in the run identity hash.
inline constexpr std::string_view kRuleSetVersion = "answer-rules-v1";

// Ordered, total rule set mapping a raw reply to {yes, no, unresolved}:
//   1. lowercase, strip leading punctuation/whitespace;
//   2. if the first word token is "yes"/"no", that label wins;
//   3. else if exactly one of the yes-phrase family {"yes", "there is",
//      "there are", "it is", "correct", "right"} and the no-phrase family
//      {"no", "there is no", "there are no", "not", "isn't", "aren't",
//      "incorrect"} matches anywhere (on word boundaries), that label wins;
//   4. else unresolved.
Answer normalize_answer(std::string_view raw);

struct SampleSpec {
  std::int64_t n_per_class = 0;
  std::uint64_t seed = 0;
};

struct RunConfig {
  std::filesystem::path dataset_path;
  // Empty filter = keep all values of that field.
  std::string dataset_filter;
  std::string split_filter;
  std::string subtask_filter;
  std::string mode_filter;
  std::string template_id = "original";
  std::filesystem::path template_file;  // when set, overrides template_id (id = file stem)
  EndpointConfig endpoint;
  DecodingConfig decoding;
  std::optional<SampleSpec> sample;
  int concurrency = 1;
  std::filesystem::path output_dir = "runs";
  std::string backend_kind = "live";     // "live" | "replay"
  std::filesystem::path replay_fixture;  // required for the replay backend
  std::filesystem::path cache_file;      // empty -> <output_dir>/cache.jsonl
};

struct RunRecord {
  std::string item_id;
  std::string dataset, split, subtask, mode;
  std::string template_id;
  std::string prompt;
  std::string raw_response;
  Answer label = Answer::unresolved;
  Label gold = Label::yes;
  std::int64_t latency_ms = 0;
  bool cache_hit = false;
  bool failed = false;   // transport failure; excluded from metrics
  std::string error;
};

struct GroupKey {
  std::string dataset, split, mode, subtask;
  auto operator<=>(const GroupKey&) const = default;
  std::string to_string() const;
};

struct GroupResult {
  GroupKey key;
  ConfusionMatrix cm;
  MetricsReport report;
  std::int64_t items = 0;   // selected into the group (including failed)
  std::int64_t failed = 0;
};

struct SubtaskAverage {
  std::string dataset, split, mode;
  std::int64_t subtasks = 0;
  MetricsReport report;  // field-wise mean over the sub-task reports
};

struct RunResult {
  std::string run_id;
  std::string rule_set_version;
  std::string dataset_sha256;
  std::string config_json;  // canonical config snapshot (contents of config.json)
  std::vector<GroupResult> groups;            // sorted by key
  std::vector<SubtaskAverage> subtask_averages;
  MetricsReport overall;
  bool overall_is_subtask_average = false;
  std::int64_t items = 0;
  std::int64_t failed = 0;
  std::int64_t unresolved = 0;
  bool final_result = true;  // false when any trial failed
};

// Ephemeral execution accounting; never part of the persisted result.
struct RunExecution {
  RunResult result;
  std::filesystem::path run_dir;
  std::int64_t backend_calls = 0;
  std::int64_t network_calls = 0;
  std::int64_t cache_hits = 0;
};

// Template a config resolves to (builtin id or loaded file).
PromptTemplate resolve_template(const RunConfig& config);

// Content-addressed run identity: SHA-256 (truncated to 16 hex chars) over the
// semantic config subset (dataset checksum + filters + template body hash +
// model/decoding + sample spec + backend identity) and the rule-set version.
// Operational knobs (concurrency, output_dir, timeouts, credentials) do not
// change a run's identity.
std::string run_id_for(const RunConfig& config, const std::string& dataset_sha256);

// Executes the run and persists <output_dir>/<run_id>/{config.json,
// records.jsonl, result.json}. Re-running an identical config yields a
// byte-identical result.json and is served from the cache.
RunExecution run_eval(const RunConfig& config);

// Recomputes groups, sub-task averages, overall report and counts from
// records (what run_eval applies after all trials settle).
void summarize_records(const std::vector<RunRecord>& records, RunResult& result);

RunResult load_run_result(const std::filesystem::path& run_dir);
std::vector<RunRecord> load_run_records(const std::filesystem::path& run_dir);
std::vector<RunRecord> load_records_file(const std::filesystem::path& file);

struct GroupComparison {
  GroupKey key;
  MetricsReport baseline;
  MetricsReport treated;
  ImprovementDelta delta;  // on macro F1
};

struct RunComparison {
  std::string baseline_run_id;
  std::string treated_run_id;
  std::vector<GroupComparison> groups;
  GroupComparison overall;
};

// Compares two persisted runs over the same item selection. Rejects pairs
// with different dataset checksums, sample specs/seeds, rule-set versions, or
// item id sets (reporting the symmetric difference size).
RunComparison compare_runs(const std::filesystem::path& baseline_dir,
                           const std::filesystem::path& treated_dir);

}  // namespace mageval

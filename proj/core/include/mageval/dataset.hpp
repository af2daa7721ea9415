#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "mageval/label.hpp"

namespace mageval {

// One canonical yes/no visual question. image_ref is either a local path or a
// literal "sha256:<hex>" content reference for datasets whose images are not
// materialized (replay-only fixtures).
struct EvalItem {
  std::string id;
  std::string image_ref;
  std::string question;
  Label gold = Label::yes;
  std::string dataset;
  std::string split;
  std::string subtask;  // empty when the dataset defines none
  std::string mode;     // empty when the dataset defines none
};

struct DatasetManifest {
  std::string dataset;  // "*" when the file mixes datasets
  std::string split;    // "*" when the file mixes splits
  std::int64_t items = 0;
  std::int64_t gold_yes = 0;
  std::int64_t gold_no = 0;
  std::string sha256;   // checksum of the canonical file bytes
};

struct LoadedDataset {
  std::vector<EvalItem> items;
  DatasetManifest manifest;
};

// Path of the sidecar manifest written next to a canonical file.
std::filesystem::path manifest_path_for(const std::filesystem::path& canonical);

// Loads a canonical line-delimited file. Rejects duplicate ids, bad gold
// values and malformed lines with the offending line number.
LoadedDataset load_canonical(const std::filesystem::path& path);

// Writes items as a canonical file plus its sidecar manifest; returns the manifest.
DatasetManifest write_canonical(const std::filesystem::path& path,
                                const std::vector<EvalItem>& items);

// A mapping-spec value source: exactly one of `field` (copy from the source
// record) or `value` (constant) is set.
struct FieldSource {
  std::string field;
  std::string value;
  bool from_field() const { return !field.empty(); }
};

struct MappingSpec {
  std::string question_field;
  std::string gold_field;
  std::string image_field;
  std::string id_field;  // empty: ids are generated as <dataset>-<line number>
  std::map<std::string, std::string> gold_map;  // source value -> "yes"/"no"
  FieldSource dataset_source;
  FieldSource split_source;
  FieldSource subtask_source;
  FieldSource mode_source;
  std::string image_prefix;     // optional path prefix applied to image refs
  double max_error_rate = 0.0;  // tolerated fraction of rejected records
};

MappingSpec load_mapping_spec(const std::filesystem::path& path);

struct AdaptStats {
  std::int64_t read = 0;
  std::int64_t kept = 0;
  std::int64_t rejected = 0;
  std::vector<std::string> errors;  // one message per rejected record
  DatasetManifest manifest;
};

// Converts a source JSONL benchmark file into the canonical format. Aborts
// with ValidationError when the rejected fraction exceeds spec.max_error_rate.
AdaptStats adapt(const std::filesystem::path& source, const MappingSpec& spec,
                 const std::filesystem::path& output);

// Deterministic balanced sampling: per-class ids are sorted, shuffled by a
// seeded Fisher-Yates pass (mt19937_64, rejection-sampled bounds, stable
// across platforms), truncated to n_per_class, then interleaved yes/no.
// Selection depends only on item identity, never on input order.
std::vector<EvalItem> balanced_sample(const std::vector<EvalItem>& pool,
                                      std::int64_t n_per_class, std::uint64_t seed);

}  // namespace mageval

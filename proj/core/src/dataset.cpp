#include "mageval/dataset.hpp"

#include <json.hpp>

#include <algorithm>
#include <random>
#include <set>
#include <sstream>

#include "mageval/digest.hpp"
#include "mageval/errors.hpp"

namespace mageval {

namespace {

using nlohmann::json;

json parse_line(const std::string& line, const std::filesystem::path& path, std::int64_t lineno) {
  try {
    json j = json::parse(line);
    if (!j.is_object()) throw ValidationError("record is not an object");
    return j;
  } catch (const json::exception& e) {
    throw ValidationError(path.string() + ":" + std::to_string(lineno) +
                          ": malformed record: " + e.what());
  }
}

std::string require_string(const json& j, const char* key, const std::filesystem::path& path,
                           std::int64_t lineno) {
  if (!j.contains(key) || !j[key].is_string()) {
    throw ValidationError(path.string() + ":" + std::to_string(lineno) +
                          ": missing or non-string field \"" + key + "\"");
  }
  return j[key].get<std::string>();
}

// Unbiased draw from [0, bound) via rejection; mt19937_64's output sequence is
// pinned by the standard, which keeps samples identical across platforms
// (std::uniform_int_distribution is not).
std::uint64_t bounded_draw(std::mt19937_64& rng, std::uint64_t bound) {
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % bound;
  std::uint64_t v = rng();
  while (v >= limit) v = rng();
  return v % bound;
}

void fisher_yates(std::vector<std::string>& ids, std::mt19937_64& rng) {
  for (std::size_t i = ids.size(); i > 1; --i) {
    std::swap(ids[i - 1], ids[bounded_draw(rng, i)]);
  }
}

std::string uniform_or_star(const std::set<std::string>& values) {
  if (values.size() == 1) return *values.begin();
  return "*";
}

}  // namespace

std::filesystem::path manifest_path_for(const std::filesystem::path& canonical) {
  auto p = canonical;
  p += ".manifest.json";
  return p;
}

static DatasetManifest build_manifest(const std::vector<EvalItem>& items, std::string sha256) {
  DatasetManifest m;
  std::set<std::string> datasets, splits;
  for (const auto& item : items) {
    ++m.items;
    if (item.gold == Label::yes) ++m.gold_yes; else ++m.gold_no;
    datasets.insert(item.dataset);
    splits.insert(item.split);
  }
  m.dataset = items.empty() ? "" : uniform_or_star(datasets);
  m.split = items.empty() ? "" : uniform_or_star(splits);
  m.sha256 = std::move(sha256);
  return m;
}

LoadedDataset load_canonical(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  LoadedDataset out;
  std::set<std::string> seen_ids;
  std::istringstream in(bytes);
  std::string line;
  std::int64_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const json j = parse_line(line, path, lineno);
    EvalItem item;
    item.id = require_string(j, "id", path, lineno);
    item.image_ref = require_string(j, "image_ref", path, lineno);
    item.question = require_string(j, "question", path, lineno);
    try {
      item.gold = parse_label(require_string(j, "gold", path, lineno));
    } catch (const ValidationError& e) {
      throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
    item.dataset = require_string(j, "dataset", path, lineno);
    item.split = require_string(j, "split", path, lineno);
    if (j.contains("subtask") && !j["subtask"].is_null()) {
      item.subtask = j["subtask"].get<std::string>();
    }
    if (j.contains("mode") && !j["mode"].is_null()) {
      item.mode = j["mode"].get<std::string>();
    }
    if (!seen_ids.insert(item.id).second) {
      throw ValidationError(path.string() + ":" + std::to_string(lineno) +
                            ": duplicate item id \"" + item.id + "\"");
    }
    out.items.push_back(std::move(item));
  }
  out.manifest = build_manifest(out.items, sha256_hex(bytes));
  return out;
}

DatasetManifest write_canonical(const std::filesystem::path& path,
                                const std::vector<EvalItem>& items) {
  std::string bytes;
  for (const auto& item : items) {
    json j;
    j["id"] = item.id;
    j["image_ref"] = item.image_ref;
    j["question"] = item.question;
    j["gold"] = to_string(item.gold);
    j["dataset"] = item.dataset;
    j["split"] = item.split;
    if (!item.subtask.empty()) j["subtask"] = item.subtask;
    if (!item.mode.empty()) j["mode"] = item.mode;
    bytes += j.dump();
    bytes += '\n';
  }
  write_file(path, bytes);

  DatasetManifest m = build_manifest(items, sha256_hex(bytes));
  json mj;
  mj["dataset"] = m.dataset;
  mj["split"] = m.split;
  mj["items"] = m.items;
  mj["gold_yes"] = m.gold_yes;
  mj["gold_no"] = m.gold_no;
  mj["sha256"] = m.sha256;
  write_file(manifest_path_for(path), mj.dump(2) + "\n");
  return m;
}

MappingSpec load_mapping_spec(const std::filesystem::path& path) {
  json doc;
  try {
    doc = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw ValidationError("mapping spec " + path.string() + ": " + e.what());
  }
  auto field_source = [&](const char* key) {
    FieldSource src;
    if (!doc.contains(key)) return src;
    const json& v = doc[key];
    if (v.is_object() && v.contains("field")) src.field = v["field"].get<std::string>();
    else if (v.is_object() && v.contains("const")) src.value = v["const"].get<std::string>();
    else if (v.is_string()) src.value = v.get<std::string>();
    else throw ValidationError("mapping spec: \"" + std::string(key) +
                               "\" must be a string, {\"field\": ...} or {\"const\": ...}");
    return src;
  };
  MappingSpec spec;
  for (const char* key : {"question_field", "gold_field", "image_field"}) {
    if (!doc.contains(key) || !doc[key].is_string()) {
      throw ValidationError("mapping spec: missing required string field \"" + std::string(key) + "\"");
    }
  }
  spec.question_field = doc["question_field"].get<std::string>();
  spec.gold_field = doc["gold_field"].get<std::string>();
  spec.image_field = doc["image_field"].get<std::string>();
  spec.id_field = doc.value("id_field", "");
  if (!doc.contains("gold_map") || !doc["gold_map"].is_object() || doc["gold_map"].empty()) {
    throw ValidationError("mapping spec: \"gold_map\" must be a non-empty object");
  }
  for (const auto& [k, v] : doc["gold_map"].items()) {
    const std::string label = v.get<std::string>();
    if (label != "yes" && label != "no") {
      throw ValidationError("mapping spec: gold_map values must be \"yes\" or \"no\"");
    }
    spec.gold_map[k] = label;
  }
  spec.dataset_source = field_source("dataset");
  spec.split_source = field_source("split");
  spec.subtask_source = field_source("subtask");
  spec.mode_source = field_source("mode");
  spec.image_prefix = doc.value("image_prefix", "");
  spec.max_error_rate = doc.value("max_error_rate", 0.0);
  if (spec.max_error_rate < 0.0 || spec.max_error_rate > 1.0) {
    throw ValidationError("mapping spec: max_error_rate must be within [0,1]");
  }
  if (spec.dataset_source.field.empty() && spec.dataset_source.value.empty()) {
    throw ValidationError("mapping spec: \"dataset\" is required (string or field reference)");
  }
  if (spec.split_source.field.empty() && spec.split_source.value.empty()) {
    throw ValidationError("mapping spec: \"split\" is required (string or field reference)");
  }
  return spec;
}

namespace {

// Source values may be strings, numbers or bools; canonicalize to text.
std::string scalar_to_string(const json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_integer()) return std::to_string(v.get<std::int64_t>());
  if (v.is_number_unsigned()) return std::to_string(v.get<std::uint64_t>());
  if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
  if (v.is_number_float()) {
    json copy = v;
    return copy.dump();
  }
  throw ValidationError("non-scalar value");
}

std::string resolve_source(const json& record, const FieldSource& src, const char* what) {
  if (!src.from_field()) return src.value;
  if (!record.contains(src.field)) {
    throw ValidationError(std::string("missing source field \"") + src.field + "\" for " + what);
  }
  return scalar_to_string(record[src.field]);
}

}  // namespace

AdaptStats adapt(const std::filesystem::path& source, const MappingSpec& spec,
                 const std::filesystem::path& output) {
  const std::string bytes = read_file(source);
  AdaptStats stats;
  std::vector<EvalItem> items;
  std::set<std::string> seen_ids;
  std::istringstream in(bytes);
  std::string line;
  std::int64_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    ++stats.read;
    try {
      const json j = parse_line(line, source, lineno);
      EvalItem item;
      item.dataset = resolve_source(j, spec.dataset_source, "dataset");
      item.split = resolve_source(j, spec.split_source, "split");
      item.subtask = resolve_source(j, spec.subtask_source, "subtask");
      item.mode = resolve_source(j, spec.mode_source, "mode");
      if (!j.contains(spec.question_field)) {
        throw ValidationError("missing question field \"" + spec.question_field + "\"");
      }
      item.question = scalar_to_string(j[spec.question_field]);
      if (!j.contains(spec.image_field)) {
        throw ValidationError("missing image field \"" + spec.image_field + "\"");
      }
      item.image_ref = spec.image_prefix + scalar_to_string(j[spec.image_field]);
      if (!j.contains(spec.gold_field)) {
        throw ValidationError("missing gold field \"" + spec.gold_field + "\"");
      }
      const std::string raw_gold = scalar_to_string(j[spec.gold_field]);
      const auto mapped = spec.gold_map.find(raw_gold);
      if (mapped == spec.gold_map.end()) {
        throw ValidationError("gold value \"" + raw_gold + "\" not covered by gold_map");
      }
      item.gold = parse_label(mapped->second);
      if (spec.id_field.empty()) {
        item.id = item.dataset + "-" + std::to_string(lineno);
      } else if (j.contains(spec.id_field)) {
        item.id = scalar_to_string(j[spec.id_field]);
      } else {
        throw ValidationError("missing id field \"" + spec.id_field + "\"");
      }
      if (!seen_ids.insert(item.id).second) {
        throw ValidationError("duplicate item id \"" + item.id + "\"");
      }
      items.push_back(std::move(item));
      ++stats.kept;
    } catch (const ValidationError& e) {
      ++stats.rejected;
      stats.errors.push_back(source.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (stats.read == 0) throw ValidationError("adapt: source file has no records: " + source.string());
  const double error_rate = static_cast<double>(stats.rejected) / static_cast<double>(stats.read);
  if (error_rate > spec.max_error_rate) {
    std::string msg = "adapt: rejected " + std::to_string(stats.rejected) + "/" +
                      std::to_string(stats.read) + " records, above the configured threshold";
    if (!stats.errors.empty()) msg += "; first error: " + stats.errors.front();
    throw ValidationError(msg);
  }
  stats.manifest = write_canonical(output, items);
  return stats;
}

std::vector<EvalItem> balanced_sample(const std::vector<EvalItem>& pool,
                                      std::int64_t n_per_class, std::uint64_t seed) {
  if (n_per_class <= 0) throw ValidationError("balanced_sample: n_per_class must be positive");
  std::map<std::string, const EvalItem*> by_id;
  std::vector<std::string> yes_ids, no_ids;
  for (const auto& item : pool) {
    if (!by_id.emplace(item.id, &item).second) {
      throw ValidationError("balanced_sample: duplicate item id \"" + item.id + "\"");
    }
    (item.gold == Label::yes ? yes_ids : no_ids).push_back(item.id);
  }
  if (std::ssize(yes_ids) < n_per_class || std::ssize(no_ids) < n_per_class) {
    throw ValidationError("balanced_sample: pool has " + std::to_string(yes_ids.size()) +
                          " yes / " + std::to_string(no_ids.size()) + " no items, need " +
                          std::to_string(n_per_class) + " of each");
  }
  std::sort(yes_ids.begin(), yes_ids.end());
  std::sort(no_ids.begin(), no_ids.end());
  std::mt19937_64 rng(seed);
  fisher_yates(yes_ids, rng);
  fisher_yates(no_ids, rng);
  std::vector<EvalItem> out;
  out.reserve(static_cast<std::size_t>(2 * n_per_class));
  for (std::int64_t i = 0; i < n_per_class; ++i) {
    out.push_back(*by_id.at(yes_ids[static_cast<std::size_t>(i)]));
    out.push_back(*by_id.at(no_ids[static_cast<std::size_t>(i)]));
  }
  return out;
}

}  // namespace mageval

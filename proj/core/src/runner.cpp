#include "mageval/runner.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <cctype>
#include <map>
#include <set>
#include <sstream>
#include <thread>

#include "mageval/digest.hpp"
#include "mageval/errors.hpp"

namespace mageval {

namespace {

using nlohmann::json;

constexpr std::string_view kHashRefPrefix = "sha256:";

bool is_word_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) != 0;
}

// Whole-word occurrence of `phrase` anywhere in `text` (both lowercase).
bool phrase_match(std::string_view text, std::string_view phrase) {
  for (size_t pos = text.find(phrase); pos != std::string_view::npos;
       pos = text.find(phrase, pos + 1)) {
    const bool left_ok = pos == 0 || !is_word_char(text[pos - 1]);
    const size_t end = pos + phrase.size();
    const bool right_ok = end == text.size() || !is_word_char(text[end]);
    if (left_ok && right_ok) return true;
  }
  return false;
}

constexpr std::string_view kYesFamily[] = {"yes", "there is", "there are",
                                           "it is", "correct", "right"};
constexpr std::string_view kNoFamily[] = {"no",  "there is no", "there are no", "not",
                                          "isn't", "aren't", "incorrect"};

std::string media_type_for(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (ext == ".jpg" || ext == ".jpeg") return "image/jpeg";
  if (ext == ".png") return "image/png";
  if (ext == ".webp") return "image/webp";
  if (ext == ".gif") return "image/gif";
  if (ext == ".bmp") return "image/bmp";
  return "image/jpeg";
}

json report_to_json(const MetricsReport& r) {
  json j;
  j["accuracy"] = r.accuracy;
  j["precision"] = r.precision;
  j["recall_yes"] = r.recall_yes;
  j["recall_no"] = r.recall_no;
  j["f1_pos"] = r.f1_pos;
  j["f1_neg"] = r.f1_neg;
  j["macro_f1"] = r.macro_f1;
  j["h_recall"] = r.h_recall;
  j["phd_score"] = r.phd_score;
  j["unresolved_rate"] = r.unresolved_rate;
  return j;
}

MetricsReport report_from_json(const json& j) {
  MetricsReport r;
  r.accuracy = j.at("accuracy").get<double>();
  r.precision = j.at("precision").get<double>();
  r.recall_yes = j.at("recall_yes").get<double>();
  r.recall_no = j.at("recall_no").get<double>();
  r.f1_pos = j.at("f1_pos").get<double>();
  r.f1_neg = j.at("f1_neg").get<double>();
  r.macro_f1 = j.at("macro_f1").get<double>();
  r.h_recall = j.at("h_recall").get<double>();
  r.phd_score = j.at("phd_score").get<double>();
  r.unresolved_rate = j.at("unresolved_rate").get<double>();
  return r;
}

json cm_to_json(const ConfusionMatrix& cm) {
  json j;
  j["tp"] = cm.tp;
  j["fp"] = cm.fp;
  j["tn"] = cm.tn;
  j["fn"] = cm.fn;
  j["unresolved_gold_yes"] = cm.unresolved_gold_yes;
  j["unresolved_gold_no"] = cm.unresolved_gold_no;
  return j;
}

ConfusionMatrix cm_from_json(const json& j) {
  ConfusionMatrix cm;
  cm.tp = j.at("tp").get<std::int64_t>();
  cm.fp = j.at("fp").get<std::int64_t>();
  cm.tn = j.at("tn").get<std::int64_t>();
  cm.fn = j.at("fn").get<std::int64_t>();
  cm.unresolved_gold_yes = j.at("unresolved_gold_yes").get<std::int64_t>();
  cm.unresolved_gold_no = j.at("unresolved_gold_no").get<std::int64_t>();
  return cm;
}

json record_to_json(const RunRecord& r) {
  json j;
  j["item_id"] = r.item_id;
  j["dataset"] = r.dataset;
  j["split"] = r.split;
  j["subtask"] = r.subtask;
  j["mode"] = r.mode;
  j["template_id"] = r.template_id;
  j["prompt"] = r.prompt;
  j["raw_response"] = r.raw_response;
  j["label"] = to_string(r.label);
  j["gold"] = to_string(r.gold);
  j["latency_ms"] = r.latency_ms;
  j["cache_hit"] = r.cache_hit;
  j["failed"] = r.failed;
  j["error"] = r.error;
  return j;
}

RunRecord record_from_json(const json& j) {
  RunRecord r;
  r.item_id = j.at("item_id").get<std::string>();
  r.dataset = j.value("dataset", "");
  r.split = j.value("split", "");
  r.subtask = j.value("subtask", "");
  r.mode = j.value("mode", "");
  r.template_id = j.value("template_id", "");
  r.prompt = j.value("prompt", "");
  r.raw_response = j.value("raw_response", "");
  r.label = parse_answer(j.at("label").get<std::string>());
  r.gold = parse_label(j.at("gold").get<std::string>());
  r.latency_ms = j.value("latency_ms", std::int64_t{0});
  r.cache_hit = j.value("cache_hit", false);
  r.failed = j.value("failed", false);
  r.error = j.value("error", "");
  return r;
}

std::filesystem::path resolve_cache_file(const RunConfig& cfg) {
  return cfg.cache_file.empty() ? cfg.output_dir / "cache.jsonl" : cfg.cache_file;
}

// Canonical config snapshot. nlohmann::json orders keys, so equal configs
// serialize identically.
json config_snapshot(const RunConfig& cfg, const std::string& dataset_sha256,
                     const PromptTemplate& tpl, const std::string& run_id) {
  json j;
  j["run_id"] = run_id;
  j["rule_set_version"] = std::string(kRuleSetVersion);
  j["dataset"] = cfg.dataset_path.string();
  j["dataset_sha256"] = dataset_sha256;
  j["filters"] = {{"dataset", cfg.dataset_filter},
                  {"split", cfg.split_filter},
                  {"subtask", cfg.subtask_filter},
                  {"mode", cfg.mode_filter}};
  j["template"] = {{"id", tpl.id},
                   {"body_sha256", sha256_hex(tpl.body)},
                   {"rule1", tpl.rule1},
                   {"rule2", tpl.rule2}};
  // Benchmark-provided question text is substituted whole into the template
  // placeholder, misleading phrasings included.
  j["question_handling"] = "full-question-substitution";
  j["endpoint"] = {{"base_url", cfg.endpoint.base_url},
                   {"model", cfg.endpoint.model},
                   {"credential_env", cfg.endpoint.credential_env},
                   {"timeout_seconds", cfg.endpoint.timeout_seconds},
                   {"max_retries", cfg.endpoint.max_retries}};
  j["decoding"] = {{"temperature", cfg.decoding.temperature},
                   {"max_output_tokens", cfg.decoding.max_output_tokens}};
  if (cfg.sample) {
    j["sample"] = {{"n_per_class", cfg.sample->n_per_class}, {"seed", cfg.sample->seed}};
  } else {
    j["sample"] = nullptr;
  }
  j["backend"] = cfg.backend_kind;
  j["replay_fixture"] = cfg.replay_fixture.string();
  j["concurrency"] = cfg.concurrency;
  j["output_dir"] = cfg.output_dir.string();
  j["cache_file"] = resolve_cache_file(cfg).string();
  return j;
}

}  // namespace

Answer normalize_answer(std::string_view raw) {
  std::string text(raw);
  std::transform(text.begin(), text.end(), text.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });

  size_t start = 0;
  while (start < text.size() && !is_word_char(text[start])) ++start;
  size_t end = start;
  while (end < text.size() && is_word_char(text[end])) ++end;
  const std::string_view first_token = std::string_view(text).substr(start, end - start);
  if (first_token == "yes") return Answer::yes;
  if (first_token == "no") return Answer::no;

  bool yes_hit = false, no_hit = false;
  for (const auto phrase : kYesFamily) {
    if (phrase_match(text, phrase)) { yes_hit = true; break; }
  }
  for (const auto phrase : kNoFamily) {
    if (phrase_match(text, phrase)) { no_hit = true; break; }
  }
  if (yes_hit && !no_hit) return Answer::yes;
  if (no_hit && !yes_hit) return Answer::no;
  return Answer::unresolved;
}

std::string GroupKey::to_string() const {
  std::string out = dataset + "/" + split;
  if (!mode.empty()) out += "/" + mode;
  if (!subtask.empty()) out += "/" + subtask;
  return out;
}

PromptTemplate resolve_template(const RunConfig& config) {
  if (!config.template_file.empty()) {
    return load_template_file(config.template_file.stem().string(), config.template_file);
  }
  return builtin_template(config.template_id);
}

std::string run_id_for(const RunConfig& config, const std::string& dataset_sha256) {
  const PromptTemplate tpl = resolve_template(config);
  json j;
  j["dataset_sha256"] = dataset_sha256;
  j["filters"] = {{"dataset", config.dataset_filter},
                  {"split", config.split_filter},
                  {"subtask", config.subtask_filter},
                  {"mode", config.mode_filter}};
  j["template_body_sha256"] = sha256_hex(tpl.body);
  j["model"] = config.endpoint.model;
  j["temperature"] = config.decoding.temperature;
  j["max_output_tokens"] = config.decoding.max_output_tokens;
  if (config.sample) {
    j["sample"] = {{"n_per_class", config.sample->n_per_class}, {"seed", config.sample->seed}};
  } else {
    j["sample"] = nullptr;
  }
  j["backend"] = config.backend_kind;
  j["replay_fixture_sha256"] =
      config.backend_kind == "replay" && !config.replay_fixture.empty()
          ? sha256_file(config.replay_fixture)
          : "";
  j["rule_set_version"] = std::string(kRuleSetVersion);
  return sha256_hex(j.dump()).substr(0, 16);
}

void summarize_records(const std::vector<RunRecord>& records, RunResult& result) {
  result.groups.clear();
  result.subtask_averages.clear();
  result.items = static_cast<std::int64_t>(records.size());
  result.failed = 0;
  result.unresolved = 0;

  std::map<GroupKey, std::vector<std::pair<Label, Answer>>> outcomes;
  std::map<GroupKey, std::int64_t> group_items, group_failed;
  for (const auto& rec : records) {
    const GroupKey key{rec.dataset, rec.split, rec.mode, rec.subtask};
    ++group_items[key];
    if (rec.failed) {
      ++result.failed;
      ++group_failed[key];
      continue;
    }
    if (rec.label == Answer::unresolved) ++result.unresolved;
    outcomes[key].emplace_back(rec.gold, rec.label);
  }
  result.final_result = result.failed == 0;

  bool any_subtask = false;
  ConfusionMatrix pooled;
  std::map<std::string, MetricsReport> all_reports;
  for (const auto& [key, pairs] : outcomes) {
    GroupResult g;
    g.key = key;
    g.cm = tally(pairs);
    g.report = compute_metrics(g.cm);
    g.items = group_items[key];
    g.failed = group_failed.count(key) ? group_failed[key] : 0;
    pooled += g.cm;
    all_reports[key.to_string()] = g.report;
    if (!key.subtask.empty()) any_subtask = true;
    result.groups.push_back(std::move(g));
  }
  // Groups where every trial failed still appear, with empty counts.
  for (const auto& [key, n] : group_items) {
    if (outcomes.count(key)) continue;
    GroupResult g;
    g.key = key;
    g.items = n;
    g.failed = group_failed[key];
    result.groups.push_back(std::move(g));
  }
  std::sort(result.groups.begin(), result.groups.end(),
            [](const GroupResult& a, const GroupResult& b) { return a.key < b.key; });

  // Sub-task averaging applies only at the sub-task level: each
  // (dataset, split, mode) node with named sub-tasks gets a field-wise mean.
  std::map<std::tuple<std::string, std::string, std::string>, std::map<std::string, MetricsReport>>
      nodes;
  for (const auto& g : result.groups) {
    if (g.key.subtask.empty() || g.items == g.failed) continue;
    nodes[{g.key.dataset, g.key.split, g.key.mode}][g.key.subtask] = g.report;
  }
  for (const auto& [node, reports] : nodes) {
    SubtaskAverage avg;
    avg.dataset = std::get<0>(node);
    avg.split = std::get<1>(node);
    avg.mode = std::get<2>(node);
    avg.subtasks = static_cast<std::int64_t>(reports.size());
    avg.report = aggregate_subtasks(reports);
    result.subtask_averages.push_back(std::move(avg));
  }

  if (outcomes.empty()) {
    result.overall = MetricsReport{};
    result.overall_is_subtask_average = false;
  } else if (any_subtask) {
    result.overall = aggregate_subtasks(all_reports);
    result.overall_is_subtask_average = true;
  } else {
    result.overall = compute_metrics(pooled);
    result.overall_is_subtask_average = false;
  }
}

namespace {

json result_to_json(const RunResult& r) {
  json j;
  j["run_id"] = r.run_id;
  j["rule_set_version"] = r.rule_set_version;
  j["dataset_sha256"] = r.dataset_sha256;
  j["final"] = r.final_result;
  j["counts"] = {{"items", r.items}, {"failed", r.failed}, {"unresolved", r.unresolved}};
  j["overall"] = {{"report", report_to_json(r.overall)},
                  {"subtask_average", r.overall_is_subtask_average}};
  j["groups"] = json::array();
  for (const auto& g : r.groups) {
    json gj;
    gj["dataset"] = g.key.dataset;
    gj["split"] = g.key.split;
    gj["mode"] = g.key.mode;
    gj["subtask"] = g.key.subtask;
    gj["items"] = g.items;
    gj["failed"] = g.failed;
    gj["cm"] = cm_to_json(g.cm);
    gj["report"] = report_to_json(g.report);
    j["groups"].push_back(std::move(gj));
  }
  j["subtask_averages"] = json::array();
  for (const auto& a : r.subtask_averages) {
    json aj;
    aj["dataset"] = a.dataset;
    aj["split"] = a.split;
    aj["mode"] = a.mode;
    aj["subtasks"] = a.subtasks;
    aj["report"] = report_to_json(a.report);
    j["subtask_averages"].push_back(std::move(aj));
  }
  return j;
}

RunResult result_from_json(const json& j) {
  RunResult r;
  r.run_id = j.at("run_id").get<std::string>();
  r.rule_set_version = j.at("rule_set_version").get<std::string>();
  r.dataset_sha256 = j.at("dataset_sha256").get<std::string>();
  r.final_result = j.at("final").get<bool>();
  r.items = j.at("counts").at("items").get<std::int64_t>();
  r.failed = j.at("counts").at("failed").get<std::int64_t>();
  r.unresolved = j.at("counts").at("unresolved").get<std::int64_t>();
  r.overall = report_from_json(j.at("overall").at("report"));
  r.overall_is_subtask_average = j.at("overall").at("subtask_average").get<bool>();
  for (const auto& gj : j.at("groups")) {
    GroupResult g;
    g.key = GroupKey{gj.at("dataset").get<std::string>(), gj.at("split").get<std::string>(),
                     gj.at("mode").get<std::string>(), gj.at("subtask").get<std::string>()};
    g.items = gj.at("items").get<std::int64_t>();
    g.failed = gj.at("failed").get<std::int64_t>();
    g.cm = cm_from_json(gj.at("cm"));
    if (g.items > g.failed) g.report = report_from_json(gj.at("report"));
    r.groups.push_back(std::move(g));
  }
  for (const auto& aj : j.at("subtask_averages")) {
    SubtaskAverage a;
    a.dataset = aj.at("dataset").get<std::string>();
    a.split = aj.at("split").get<std::string>();
    a.mode = aj.at("mode").get<std::string>();
    a.subtasks = aj.at("subtasks").get<std::int64_t>();
    a.report = report_from_json(aj.at("report"));
    r.subtask_averages.push_back(std::move(a));
  }
  return r;
}

}  // namespace

RunExecution run_eval(const RunConfig& config) {
  if (config.dataset_path.empty()) throw ConfigError("run: dataset path is required");
  if (config.concurrency < 1) throw ConfigError("run: concurrency must be >= 1");
  if (config.backend_kind != "live" && config.backend_kind != "replay") {
    throw ConfigError("run: backend must be \"live\" or \"replay\", got \"" +
                      config.backend_kind + "\"");
  }

  LoadedDataset loaded = load_canonical(config.dataset_path);
  std::vector<EvalItem> items;
  for (auto& item : loaded.items) {
    if (!config.dataset_filter.empty() && item.dataset != config.dataset_filter) continue;
    if (!config.split_filter.empty() && item.split != config.split_filter) continue;
    if (!config.subtask_filter.empty() && item.subtask != config.subtask_filter) continue;
    if (!config.mode_filter.empty() && item.mode != config.mode_filter) continue;
    items.push_back(std::move(item));
  }
  if (items.empty()) throw ValidationError("run: no items remain after filtering");
  if (config.sample) {
    items = balanced_sample(items, config.sample->n_per_class, config.sample->seed);
  }

  const PromptTemplate tpl = resolve_template(config);
  std::shared_ptr<Backend> backend;
  if (config.backend_kind == "replay") {
    if (config.replay_fixture.empty()) {
      throw ConfigError("run: the replay backend requires a replay fixture path");
    }
    backend = std::make_shared<ReplayBackend>(config.replay_fixture);
  } else {
    backend = std::make_shared<HttpBackend>();
    for (const auto& item : items) {
      if (item.image_ref.starts_with(kHashRefPrefix)) {
        throw ConfigError("run: item \"" + item.id +
                          "\" has a hash-only image_ref; a live backend needs image files");
      }
    }
  }
  auto cache = std::make_shared<CacheStore>(resolve_cache_file(config));
  ModelClient client(config.endpoint, config.decoding, backend, cache);

  const std::string run_id = run_id_for(config, loaded.manifest.sha256);
  const std::filesystem::path run_dir = config.output_dir / run_id;

  const auto dataset_dir = config.dataset_path.parent_path();
  std::vector<RunRecord> records(items.size());
  std::atomic<size_t> next{0};
  auto worker = [&]() {
    for (;;) {
      const size_t i = next.fetch_add(1);
      if (i >= items.size()) return;
      const EvalItem& item = items[i];
      RunRecord rec;
      rec.item_id = item.id;
      rec.dataset = item.dataset;
      rec.split = item.split;
      rec.subtask = item.subtask;
      rec.mode = item.mode;
      rec.template_id = tpl.id;
      const RenderedPrompt prompt = render(tpl, item.question);
      rec.prompt = prompt.text;
      try {
        TrialRequest req;
        req.prompt = prompt.text;
        if (item.image_ref.starts_with(kHashRefPrefix)) {
          req.image_sha256 = item.image_ref.substr(kHashRefPrefix.size());
          req.media_type = "image/jpeg";
        } else {
          std::filesystem::path image_path(item.image_ref);
          if (image_path.is_relative()) image_path = dataset_dir / image_path;
          const std::string bytes = read_file(image_path);
          req.image_sha256 = sha256_hex(bytes);
          req.image_bytes = bytes;
          req.media_type = media_type_for(image_path);
        }
        const TrialResponse resp = client.complete(req);
        rec.raw_response = resp.text;
        rec.label = normalize_answer(resp.text);
        rec.latency_ms = resp.latency_ms;
        rec.cache_hit = resp.cache_hit;
      } catch (const std::exception& e) {
        rec.failed = true;
        rec.error = e.what();
      }
      rec.gold = item.gold;
      records[i] = std::move(rec);
    }
  };
  const int threads = std::min<int>(config.concurrency, static_cast<int>(items.size()));
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(threads));
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  RunExecution exec;
  exec.result.run_id = run_id;
  exec.result.rule_set_version = std::string(kRuleSetVersion);
  exec.result.dataset_sha256 = loaded.manifest.sha256;
  exec.result.config_json =
      config_snapshot(config, loaded.manifest.sha256, tpl, run_id).dump(2) + "\n";
  summarize_records(records, exec.result);

  std::string record_lines;
  for (const auto& rec : records) {
    record_lines += record_to_json(rec).dump();
    record_lines += '\n';
  }
  write_file(run_dir / "config.json", exec.result.config_json);
  write_file(run_dir / "records.jsonl", record_lines);
  write_file(run_dir / "result.json", result_to_json(exec.result).dump(2) + "\n");

  exec.run_dir = run_dir;
  exec.backend_calls = client.backend_calls();
  exec.network_calls = client.network_calls();
  exec.cache_hits = client.cache_hits();
  return exec;
}

RunResult load_run_result(const std::filesystem::path& run_dir) {
  json doc;
  try {
    doc = json::parse(read_file(run_dir / "result.json"));
  } catch (const json::exception& e) {
    throw ValidationError((run_dir / "result.json").string() + ": " + e.what());
  }
  RunResult r = result_from_json(doc);
  r.config_json = read_file(run_dir / "config.json");
  return r;
}

std::vector<RunRecord> load_run_records(const std::filesystem::path& run_dir) {
  return load_records_file(run_dir / "records.jsonl");
}

std::vector<RunRecord> load_records_file(const std::filesystem::path& file) {
  std::istringstream in(read_file(file));
  std::vector<RunRecord> records;
  std::string line;
  std::int64_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      records.push_back(record_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw ValidationError(file.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return records;
}

RunComparison compare_runs(const std::filesystem::path& baseline_dir,
                           const std::filesystem::path& treated_dir) {
  const RunResult a = load_run_result(baseline_dir);
  const RunResult b = load_run_result(treated_dir);

  if (a.rule_set_version != b.rule_set_version) {
    throw ValidationError("compare: rule-set versions differ (" + a.rule_set_version + " vs " +
                          b.rule_set_version + ")");
  }
  if (a.dataset_sha256 != b.dataset_sha256) {
    throw ValidationError("compare: dataset checksums differ; runs drew from different data");
  }
  json ca, cb;
  try {
    ca = json::parse(a.config_json);
    cb = json::parse(b.config_json);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("compare: unreadable config snapshot: ") + e.what());
  }
  if (ca.at("sample") != cb.at("sample")) {
    throw ValidationError("compare: sample specs differ (" + ca.at("sample").dump() + " vs " +
                          cb.at("sample").dump() + "); runs must share n_per_class and seed");
  }
  if (ca.at("filters") != cb.at("filters")) {
    throw ValidationError("compare: item filters differ; runs select different items");
  }

  std::set<std::string> ids_a, ids_b;
  for (const auto& rec : load_run_records(baseline_dir)) ids_a.insert(rec.item_id);
  for (const auto& rec : load_run_records(treated_dir)) ids_b.insert(rec.item_id);
  std::vector<std::string> sym_diff;
  std::set_symmetric_difference(ids_a.begin(), ids_a.end(), ids_b.begin(), ids_b.end(),
                                std::back_inserter(sym_diff));
  if (!sym_diff.empty()) {
    throw ValidationError("compare: item sets differ; symmetric difference has " +
                          std::to_string(sym_diff.size()) + " item(s), e.g. \"" + sym_diff.front() +
                          "\"");
  }

  std::map<GroupKey, const GroupResult*> groups_b;
  for (const auto& g : b.groups) groups_b[g.key] = &g;
  RunComparison cmp;
  cmp.baseline_run_id = a.run_id;
  cmp.treated_run_id = b.run_id;
  for (const auto& g : a.groups) {
    const auto it = groups_b.find(g.key);
    if (it == groups_b.end()) {
      throw ValidationError("compare: group " + g.key.to_string() + " is missing from run " +
                            b.run_id);
    }
    GroupComparison gc;
    gc.key = g.key;
    gc.baseline = g.report;
    gc.treated = it->second->report;
    gc.delta = relative_improvement(gc.baseline, gc.treated);
    cmp.groups.push_back(std::move(gc));
  }
  cmp.overall.key = GroupKey{"overall", "", "", ""};
  cmp.overall.baseline = a.overall;
  cmp.overall.treated = b.overall;
  cmp.overall.delta = relative_improvement(a.overall, b.overall);
  return cmp;
}

}  // namespace mageval

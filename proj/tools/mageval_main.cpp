// mageval: batch evaluation front end.
//
// Subcommands: run, compare, sample, metrics, verify-paper, adapt.
// Exit codes: 0 success, 1 usage/config error, 2 data/validation error,
// 3 transport failure, 4 verification failures present.

#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "mageval/dataset.hpp"
#include "mageval/digest.hpp"
#include "mageval/errors.hpp"
#include "mageval/metrics.hpp"
#include "mageval/report.hpp"
#include "mageval/runner.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string fmt1(double v) {
  std::ostringstream out;
  out.setf(std::ios::fixed);
  out.precision(1);
  out << v;
  return out.str();
}

std::string fmt2(double v) {
  std::ostringstream out;
  out.setf(std::ios::fixed);
  out.precision(2);
  out << v;
  return out.str();
}

// Flat key=value run configuration. Blank lines and #-comments are skipped;
// relative paths resolve against the config file's directory.
std::map<std::string, std::string> read_config_file(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw mageval::ConfigError("cannot open config file " + file.string());
  std::map<std::string, std::string> kv;
  std::string line;
  int lineno = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    ++lineno;
    const std::string text = trim(line);
    if (text.empty() || text[0] == '#') continue;
    const auto eq = text.find('=');
    if (eq == std::string::npos) {
      throw mageval::ConfigError(file.string() + ":" + std::to_string(lineno) +
                                 ": expected key = value");
    }
    const std::string key = trim(text.substr(0, eq));
    if (key.empty()) {
      throw mageval::ConfigError(file.string() + ":" + std::to_string(lineno) + ": empty key");
    }
    if (!kv.emplace(key, trim(text.substr(eq + 1))).second) {
      throw mageval::ConfigError(file.string() + ":" + std::to_string(lineno) +
                                 ": duplicate key \"" + key + "\"");
    }
  }
  return kv;
}

void apply_config_file(mageval::RunConfig& config, const fs::path& file) {
  const fs::path base = file.has_parent_path() ? file.parent_path() : fs::path(".");
  auto resolve = [&](const std::string& p) {
    fs::path path(p);
    return path.is_absolute() ? path : base / path;
  };
  std::optional<std::int64_t> per_class;
  std::optional<std::uint64_t> seed;
  for (const auto& [key, value] : read_config_file(file)) {
    try {
      if (key == "dataset") config.dataset_path = resolve(value);
      else if (key == "dataset_filter") config.dataset_filter = value;
      else if (key == "split_filter") config.split_filter = value;
      else if (key == "subtask_filter") config.subtask_filter = value;
      else if (key == "mode_filter") config.mode_filter = value;
      else if (key == "template") config.template_id = value;
      else if (key == "template_file") config.template_file = resolve(value);
      else if (key == "base_url") config.endpoint.base_url = value;
      else if (key == "model") config.endpoint.model = value;
      else if (key == "credential_env") config.endpoint.credential_env = value;
      else if (key == "timeout_seconds") config.endpoint.timeout_seconds = std::stoi(value);
      else if (key == "max_retries") config.endpoint.max_retries = std::stoi(value);
      else if (key == "temperature") config.decoding.temperature = std::stod(value);
      else if (key == "max_output_tokens") config.decoding.max_output_tokens = std::stoi(value);
      else if (key == "sample_per_class") per_class = std::stoll(value);
      else if (key == "sample_seed") seed = std::stoull(value);
      else if (key == "concurrency") config.concurrency = std::stoi(value);
      else if (key == "output_dir") config.output_dir = resolve(value);
      else if (key == "backend") config.backend_kind = value;
      else if (key == "replay_fixture") config.replay_fixture = resolve(value);
      else if (key == "cache_file") config.cache_file = resolve(value);
      else throw mageval::ConfigError(file.string() + ": unknown config key \"" + key + "\"");
    } catch (const std::invalid_argument&) {
      throw mageval::ConfigError(file.string() + ": bad numeric value for \"" + key + "\"");
    } catch (const std::out_of_range&) {
      throw mageval::ConfigError(file.string() + ": numeric value out of range for \"" + key +
                                 "\"");
    }
  }
  if (per_class || seed) {
    if (!per_class || !seed) {
      throw mageval::ConfigError(file.string() +
                                 ": sample_per_class and sample_seed must be set together");
    }
    config.sample = mageval::SampleSpec{*per_class, *seed};
  }
}

mageval::TableRow result_row(const std::string& label, const std::string& sublabel,
                             const mageval::MetricsReport& report) {
  return mageval::TableRow{label, sublabel, report};
}

void print_run_summary(const mageval::RunExecution& exec, mageval::TableFormat format,
                       std::ostream& out) {
  const mageval::RunResult& r = exec.result;
  out << "run " << r.run_id << (r.final_result ? "" : "  [not final: failed trials]") << "\n";
  out << "dir " << exec.run_dir.string() << "\n";
  out << "items " << r.items << "  failed " << r.failed << "  unresolved " << r.unresolved
      << "\n";
  out << "backend calls " << exec.backend_calls << "  network calls " << exec.network_calls
      << "  cache hits " << exec.cache_hits << "\n\n";

  std::vector<mageval::TableRow> rows;
  for (const auto& g : r.groups) rows.push_back(result_row(g.key.to_string(), "", g.report));
  for (const auto& a : r.subtask_averages) {
    std::string label = a.dataset + "/" + a.split;
    if (!a.mode.empty()) label += "/" + a.mode;
    rows.push_back(result_row(label, "subtask-average", a.report));
  }
  rows.push_back(result_row("overall",
                            r.overall_is_subtask_average ? "subtask-average" : "pooled",
                            r.overall));
  out << mageval::emit_table(rows, format);
}

fs::path resolve_run_dir(const std::string& spec, const fs::path& runs_dir) {
  const fs::path direct(spec);
  if (fs::is_directory(direct)) return direct;
  const fs::path nested = runs_dir / spec;
  if (fs::is_directory(nested)) return nested;
  throw mageval::ValidationError("run \"" + spec + "\" not found (looked for " + direct.string() +
                                 " and " + nested.string() + ")");
}

std::string comparison_table(const mageval::RunComparison& cmp, mageval::TableFormat format) {
  using mageval::round_display;
  std::ostringstream out;
  if (format == mageval::TableFormat::json) {
    json doc;
    doc["baseline_run_id"] = cmp.baseline_run_id;
    doc["treated_run_id"] = cmp.treated_run_id;
    doc["groups"] = json::array();
    auto group_json = [](const mageval::GroupComparison& g, const std::string& name) {
      json j;
      j["group"] = name;
      j["baseline_macro_f1"] = round_display(g.baseline.macro_f1);
      j["treated_macro_f1"] = round_display(g.treated.macro_f1);
      j["delta_percent"] = g.delta.delta_percent;
      return j;
    };
    for (const auto& g : cmp.groups) doc["groups"].push_back(group_json(g, g.key.to_string()));
    doc["overall"] = group_json(cmp.overall, "overall");
    out << doc.dump(2) << "\n";
    return out.str();
  }

  const char sep = format == mageval::TableFormat::csv ? ',' : '\t';
  std::vector<std::array<std::string, 4>> lines;
  lines.push_back({"Group", "Baseline macro F1", "Treated macro F1", "Delta %"});
  auto add = [&](const mageval::GroupComparison& g, const std::string& name) {
    lines.push_back({name, fmt1(round_display(g.baseline.macro_f1)),
                     fmt1(round_display(g.treated.macro_f1)), fmt2(g.delta.delta_percent)});
  };
  for (const auto& g : cmp.groups) add(g, g.key.to_string());
  add(cmp.overall, "overall");

  if (format != mageval::TableFormat::text) {
    for (const auto& cells : lines) {
      for (std::size_t i = 0; i < cells.size(); ++i) out << (i ? std::string(1, sep) : "") << cells[i];
      out << "\n";
    }
    return out.str();
  }
  std::array<std::size_t, 4> width{};
  for (const auto& cells : lines) {
    for (std::size_t i = 0; i < cells.size(); ++i) width[i] = std::max(width[i], cells[i].size());
  }
  for (const auto& cells : lines) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out << "  ";
      if (i == 0) {
        out << cells[i] << std::string(width[i] - cells[i].size(), ' ');
      } else {
        out << std::string(width[i] - cells[i].size(), ' ') << cells[i];
      }
    }
    out << "\n";
  }
  return out.str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Batch evaluation harness for yes/no visual-question benchmarks"};
  app.require_subcommand(1);

  std::string format_name = "text";
  std::string data_dir_flag;
  app.add_option("--format", format_name, "Table output format: text, tsv, csv, json")
      ->capture_default_str();
  app.add_option("--data-dir", data_dir_flag,
                 "Bundled data directory (templates/, reference/); overrides MAGEVAL_DATA_DIR");

  // run
  auto* run_cmd = app.add_subcommand("run", "Execute an evaluation run from a config file");
  std::string run_config_file;
  mageval::RunConfig flags;  // holds flag values; merged over the config file
  std::int64_t flag_per_class = 0;
  std::uint64_t flag_seed = 0;
  run_cmd->add_option("config", run_config_file, "Run config file (key = value lines)");
  run_cmd->add_option("--dataset", flags.dataset_path, "Canonical dataset file");
  run_cmd->add_option("--filter-dataset", flags.dataset_filter, "Keep only this dataset tag");
  run_cmd->add_option("--filter-split", flags.split_filter, "Keep only this split");
  run_cmd->add_option("--filter-subtask", flags.subtask_filter, "Keep only this sub-task");
  run_cmd->add_option("--filter-mode", flags.mode_filter, "Keep only this questioning mode");
  run_cmd->add_option("--template", flags.template_id, "Built-in prompt template id");
  run_cmd->add_option("--template-file", flags.template_file, "Prompt template file");
  run_cmd->add_option("--base-url", flags.endpoint.base_url, "Chat-completions base URL");
  run_cmd->add_option("--model", flags.endpoint.model, "Model identifier");
  run_cmd->add_option("--credential-env", flags.endpoint.credential_env,
                      "Environment variable holding the bearer token");
  run_cmd->add_option("--timeout-seconds", flags.endpoint.timeout_seconds, "Request timeout");
  run_cmd->add_option("--max-retries", flags.endpoint.max_retries, "Retries after first attempt");
  run_cmd->add_option("--temperature", flags.decoding.temperature, "Sampling temperature");
  run_cmd->add_option("--max-output-tokens", flags.decoding.max_output_tokens,
                      "Response token cap");
  run_cmd->add_option("--sample-per-class", flag_per_class, "Balanced sample size per class");
  run_cmd->add_option("--sample-seed", flag_seed, "Balanced sample seed");
  run_cmd->add_option("--concurrency", flags.concurrency, "Concurrent in-flight requests");
  run_cmd->add_option("--output-dir", flags.output_dir, "Directory for persisted runs");
  run_cmd->add_option("--backend", flags.backend_kind, "Transport: live or replay");
  run_cmd->add_option("--replay-fixture", flags.replay_fixture, "Replay fixture file");
  run_cmd->add_option("--cache-file", flags.cache_file, "Response cache file");

  // compare
  auto* compare_cmd = app.add_subcommand("compare", "Compare two persisted runs");
  std::string baseline_spec, treated_spec;
  fs::path runs_dir = "runs";
  compare_cmd->add_option("baseline", baseline_spec, "Baseline run id or directory")->required();
  compare_cmd->add_option("treated", treated_spec, "Treated run id or directory")->required();
  compare_cmd->add_option("--runs-dir", runs_dir, "Directory holding persisted runs")
      ->capture_default_str();

  // sample
  auto* sample_cmd = app.add_subcommand("sample", "Materialize a balanced sample");
  fs::path sample_input, sample_output;
  std::int64_t sample_per_class = 0;
  std::uint64_t sample_seed = 0;
  sample_cmd->add_option("--input", sample_input, "Canonical dataset file")->required();
  sample_cmd->add_option("--output", sample_output, "Output canonical file")->required();
  sample_cmd->add_option("--per-class", sample_per_class, "Items per gold class")->required();
  sample_cmd->add_option("--seed", sample_seed, "Shuffle seed")->required();

  // metrics
  auto* metrics_cmd = app.add_subcommand("metrics", "Compute metrics from run records");
  std::string metrics_input;
  metrics_cmd->add_option("records", metrics_input, "records.jsonl file or run directory")
      ->required();

  // verify-paper
  auto* verify_cmd = app.add_subcommand(
      "verify-paper", "Re-derive published reference rows and report per-cell agreement");
  fs::path tables_file;
  verify_cmd->add_option("--tables", tables_file, "Reference tables file (default: bundled)");

  // adapt
  auto* adapt_cmd = app.add_subcommand("adapt", "Convert a source benchmark file to canonical form");
  fs::path adapt_source, adapt_spec, adapt_output;
  adapt_cmd->add_option("--source", adapt_source, "Source JSONL file")->required();
  adapt_cmd->add_option("--spec", adapt_spec, "Field-mapping spec file")->required();
  adapt_cmd->add_option("--output", adapt_output, "Output canonical file")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    const mageval::TableFormat format = mageval::parse_table_format(format_name);
    if (!data_dir_flag.empty()) {
#ifdef _WIN32
      _putenv_s("MAGEVAL_DATA_DIR", data_dir_flag.c_str());
#else
      setenv("MAGEVAL_DATA_DIR", data_dir_flag.c_str(), 1);
#endif
    }

    if (run_cmd->parsed()) {
      mageval::RunConfig config;
      if (!run_config_file.empty()) apply_config_file(config, run_config_file);
      // Flags override config-file fields.
      auto set_if = [&](const char* name, auto& dst, const auto& src) {
        if (run_cmd->count(name) > 0) dst = src;
      };
      set_if("--dataset", config.dataset_path, flags.dataset_path);
      set_if("--filter-dataset", config.dataset_filter, flags.dataset_filter);
      set_if("--filter-split", config.split_filter, flags.split_filter);
      set_if("--filter-subtask", config.subtask_filter, flags.subtask_filter);
      set_if("--filter-mode", config.mode_filter, flags.mode_filter);
      set_if("--template", config.template_id, flags.template_id);
      set_if("--template-file", config.template_file, flags.template_file);
      set_if("--base-url", config.endpoint.base_url, flags.endpoint.base_url);
      set_if("--model", config.endpoint.model, flags.endpoint.model);
      set_if("--credential-env", config.endpoint.credential_env, flags.endpoint.credential_env);
      set_if("--timeout-seconds", config.endpoint.timeout_seconds,
             flags.endpoint.timeout_seconds);
      set_if("--max-retries", config.endpoint.max_retries, flags.endpoint.max_retries);
      set_if("--temperature", config.decoding.temperature, flags.decoding.temperature);
      set_if("--max-output-tokens", config.decoding.max_output_tokens,
             flags.decoding.max_output_tokens);
      set_if("--concurrency", config.concurrency, flags.concurrency);
      set_if("--output-dir", config.output_dir, flags.output_dir);
      set_if("--backend", config.backend_kind, flags.backend_kind);
      set_if("--replay-fixture", config.replay_fixture, flags.replay_fixture);
      set_if("--cache-file", config.cache_file, flags.cache_file);
      if (run_cmd->count("--sample-per-class") || run_cmd->count("--sample-seed")) {
        if (!(run_cmd->count("--sample-per-class") && run_cmd->count("--sample-seed"))) {
          throw mageval::ConfigError(
              "--sample-per-class and --sample-seed must be given together");
        }
        config.sample = mageval::SampleSpec{flag_per_class, flag_seed};
      }
      const mageval::RunExecution exec = mageval::run_eval(config);
      print_run_summary(exec, format, std::cout);
      return 0;
    }

    if (compare_cmd->parsed()) {
      const mageval::RunComparison cmp = mageval::compare_runs(
          resolve_run_dir(baseline_spec, runs_dir), resolve_run_dir(treated_spec, runs_dir));
      std::cout << "baseline " << cmp.baseline_run_id << "  treated " << cmp.treated_run_id
                << "\n\n"
                << comparison_table(cmp, format);
      return 0;
    }

    if (sample_cmd->parsed()) {
      const mageval::LoadedDataset loaded = mageval::load_canonical(sample_input);
      const std::vector<mageval::EvalItem> picked =
          mageval::balanced_sample(loaded.items, sample_per_class, sample_seed);
      const mageval::DatasetManifest manifest = mageval::write_canonical(sample_output, picked);
      std::cout << "wrote " << manifest.items << " items (" << manifest.gold_yes << " yes, "
                << manifest.gold_no << " no) to " << sample_output.string() << "\n"
                << "sha256 " << manifest.sha256 << "\n";
      return 0;
    }

    if (metrics_cmd->parsed()) {
      fs::path records_path(metrics_input);
      if (fs::is_directory(records_path)) records_path /= "records.jsonl";
      const std::vector<mageval::RunRecord> records = mageval::load_records_file(records_path);
      std::vector<std::pair<mageval::Label, mageval::Answer>> outcomes;
      std::int64_t failed = 0;
      for (const auto& rec : records) {
        if (rec.failed) ++failed;
        else outcomes.emplace_back(rec.gold, rec.label);
      }
      if (outcomes.empty()) throw mageval::ValidationError("no scorable records");
      const mageval::MetricsReport report =
          mageval::compute_metrics(mageval::tally(outcomes));
      std::cout << "records " << records.size() << "  scored " << outcomes.size() << "  failed "
                << failed << "\n\n"
                << mageval::emit_table({result_row(records_path.filename().string(), "", report)},
                                       format);
      return 0;
    }

    if (verify_cmd->parsed()) {
      const fs::path file = tables_file.empty()
                                ? mageval::default_data_dir() / "reference" / "tables.json"
                                : tables_file;
      const mageval::VerificationReport report =
          mageval::verify_tables(mageval::load_reference_rows(file));
      std::cout << mageval::format_verification(report);
      return report.failed_unexpected > 0 ? 4 : 0;
    }

    if (adapt_cmd->parsed()) {
      const mageval::MappingSpec spec = mageval::load_mapping_spec(adapt_spec);
      const mageval::AdaptStats stats = mageval::adapt(adapt_source, spec, adapt_output);
      std::cout << "read " << stats.read << "  kept " << stats.kept << "  rejected "
                << stats.rejected << "\n";
      const std::size_t shown = std::min<std::size_t>(stats.errors.size(), 5);
      for (std::size_t i = 0; i < shown; ++i) std::cout << "  " << stats.errors[i] << "\n";
      if (stats.errors.size() > shown) {
        std::cout << "  ... " << (stats.errors.size() - shown) << " more\n";
      }
      std::cout << "wrote " << stats.manifest.items << " items to " << adapt_output.string()
                << "\nsha256 " << stats.manifest.sha256 << "\n";
      return 0;
    }
  } catch (const mageval::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const mageval::TransportError& e) {
    std::cerr << "transport error: " << e.what() << "\n";
    return 3;
  } catch (const mageval::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

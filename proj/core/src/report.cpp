#include "mageval/report.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <sstream>

#include "mageval/digest.hpp"
#include "mageval/errors.hpp"

namespace mageval {

namespace {

using nlohmann::json;

constexpr const char* kColumns[] = {"Accuracy", "Precision", "Recall", "F1_P",
                                    "F1_N",     "macro F1",  "PhD score"};

std::string fmt1(double display_value) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", display_value);
  return buf;
}

std::vector<std::string> row_cells(const MetricsReport& r) {
  return {fmt1(round_display(r.accuracy)), fmt1(round_display(r.precision)),
          fmt1(round_display(r.recall_yes)), fmt1(round_display(r.f1_pos)),
          fmt1(round_display(r.f1_neg)), fmt1(round_display(r.macro_f1)),
          fmt1(round_display(r.phd_score))};
}

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += "\"\"";
    else out += c;
  }
  out += "\"";
  return out;
}

std::string delimited(const std::vector<TableRow>& rows, char sep, bool escape) {
  std::string out;
  auto append_row = [&](const std::string& a, const std::string& b,
                        const std::vector<std::string>& cells) {
    out += escape ? csv_escape(a) : a;
    out += sep;
    out += escape ? csv_escape(b) : b;
    for (const auto& c : cells) {
      out += sep;
      out += c;
    }
    out += '\n';
  };
  std::vector<std::string> header(std::begin(kColumns), std::end(kColumns));
  append_row("Model", "Method", header);
  for (const auto& row : rows) append_row(row.label, row.sublabel, row_cells(row.report));
  return out;
}

std::string aligned(const std::vector<TableRow>& rows) {
  std::vector<std::vector<std::string>> grid;
  std::vector<std::string> header = {"Model", "Method"};
  header.insert(header.end(), std::begin(kColumns), std::end(kColumns));
  grid.push_back(header);
  for (const auto& row : rows) {
    std::vector<std::string> cells = {row.label, row.sublabel};
    const auto values = row_cells(row.report);
    cells.insert(cells.end(), values.begin(), values.end());
    grid.push_back(std::move(cells));
  }
  std::vector<size_t> widths(grid[0].size(), 0);
  for (const auto& row : grid) {
    for (size_t i = 0; i < row.size(); ++i) widths[i] = std::max(widths[i], row[i].size());
  }
  std::string out;
  for (const auto& row : grid) {
    for (size_t i = 0; i < row.size(); ++i) {
      if (i) out += "  ";
      // Left-align the two label columns, right-align numbers.
      const bool left = i < 2;
      const size_t pad = widths[i] - row[i].size();
      if (!left) out.append(pad, ' ');
      out += row[i];
      if (left && i + 1 < row.size()) out.append(pad, ' ');
    }
    out += '\n';
  }
  return out;
}

std::string json_rows(const std::vector<TableRow>& rows) {
  json arr = json::array();
  for (const auto& row : rows) {
    json j;
    j["model"] = row.label;
    j["method"] = row.sublabel;
    j["accuracy"] = round_display(row.report.accuracy);
    j["precision"] = round_display(row.report.precision);
    j["recall"] = round_display(row.report.recall_yes);
    j["f1_pos"] = round_display(row.report.f1_pos);
    j["f1_neg"] = round_display(row.report.f1_neg);
    j["macro_f1"] = round_display(row.report.macro_f1);
    j["phd_score"] = round_display(row.report.phd_score);
    arr.push_back(std::move(j));
  }
  return arr.dump(2) + "\n";
}

double get_cell(const ReferenceRow& row, const std::string& cell) {
  if (cell == "f1_pos") return row.f1_pos;
  if (cell == "f1_neg") return row.f1_neg;
  if (cell == "macro_f1") return row.macro_f1;
  if (cell == "phd") return row.phd;
  if (cell == "delta") return row.delta_percent;
  throw ValidationError("unknown verification cell: " + cell);
}

}  // namespace

std::vector<ReferenceRow> load_reference_rows(const std::filesystem::path& file) {
  json doc;
  try {
    doc = json::parse(read_file(file));
  } catch (const json::exception& e) {
    throw ValidationError("reference table file " + file.string() + ": " + e.what());
  }
  if (!doc.is_object() || !doc.contains("rows") || !doc["rows"].is_array()) {
    throw ValidationError("reference table file " + file.string() +
                          ": expected an object with a \"rows\" array");
  }
  std::vector<ReferenceRow> rows;
  for (const auto& j : doc["rows"]) {
    ReferenceRow r;
    r.table = j.at("table").get<std::string>();
    r.model = j.at("model").get<std::string>();
    r.method = j.at("method").get<std::string>();
    r.accuracy = j.value("accuracy", -1.0);
    r.precision = j.value("precision", -1.0);
    r.recall = j.value("recall", -1.0);
    r.f1_pos = j.value("f1_pos", -1.0);
    r.f1_neg = j.value("f1_neg", -1.0);
    r.macro_f1 = j.value("macro_f1", -1.0);
    r.phd = j.value("phd", -1.0);
    r.n_yes = j.value("n_yes", std::int64_t{0});
    r.n_no = j.value("n_no", std::int64_t{0});
    r.baseline_macro = j.value("baseline_macro", -1.0);
    r.delta_percent = j.value("delta_percent", -1.0);
    if (j.contains("expected_fail")) {
      for (const auto& cell : j["expected_fail"]) {
        r.expected_fail.push_back(cell.get<std::string>());
      }
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

std::filesystem::path default_data_dir() {
  if (const char* env = std::getenv("MAGEVAL_DATA_DIR"); env && *env) return env;
#ifdef MAGEVAL_SOURCE_DATA_DIR
  return MAGEVAL_SOURCE_DATA_DIR;
#else
  return "data";
#endif
}

TableFormat parse_table_format(const std::string& name) {
  if (name == "text") return TableFormat::text;
  if (name == "tsv") return TableFormat::tsv;
  if (name == "csv") return TableFormat::csv;
  if (name == "json") return TableFormat::json;
  throw ConfigError("unknown table format \"" + name + "\" (expected text, tsv, csv or json)");
}

std::string emit_table(const std::vector<TableRow>& rows, TableFormat format) {
  if (rows.empty()) throw ValidationError("emit_table: no rows");
  switch (format) {
    case TableFormat::tsv: return delimited(rows, '\t', false);
    case TableFormat::csv: return delimited(rows, ',', true);
    case TableFormat::json: return json_rows(rows);
    default: return aligned(rows);
  }
}

TableRow reference_table_row(const ReferenceRow& row) {
  TableRow out;
  out.label = row.model;
  out.sublabel = row.method;
  auto ratio = [](double display) { return display < 0 ? 0.0 : display / 100.0; };
  out.report.accuracy = ratio(row.accuracy);
  out.report.precision = ratio(row.precision);
  out.report.recall_yes = ratio(row.recall);
  out.report.f1_pos = ratio(row.f1_pos);
  out.report.f1_neg = ratio(row.f1_neg);
  out.report.macro_f1 = ratio(row.macro_f1);
  out.report.phd_score = ratio(row.phd);
  return out;
}

VerificationReport verify_tables(const std::vector<ReferenceRow>& rows) {
  VerificationReport report;
  constexpr double tol = 0.1 + 1e-9;
  auto add = [&](const ReferenceRow& row, const std::string& cell, double derived,
                 double published, bool pass, const std::string& note = "") {
    CellVerdict v;
    v.table = row.table;
    v.model = row.model;
    v.method = row.method;
    v.cell = cell;
    v.derived = derived;
    v.published = published;
    v.pass = pass;
    v.expected_fail = std::find(row.expected_fail.begin(), row.expected_fail.end(), cell) !=
                      row.expected_fail.end();
    v.note = note;
    if (pass) ++report.passed;
    else if (v.expected_fail) ++report.failed_expected;
    else ++report.failed_unexpected;
    report.cells.push_back(std::move(v));
  };

  for (const auto& row : rows) {
    const bool verified_table =
        row.table == "table1" || row.table == "table10" || row.table == "table11";
    if (!verified_table) continue;

    if (row.table == "table11") {
      if (row.delta_percent < 0.0) continue;  // baseline row, nothing to derive
      if (row.baseline_macro <= 0.0 || row.macro_f1 < 0.0) {
        add(row, "delta", 0.0, row.delta_percent, false, "missing macro-F1 pair");
        continue;
      }
      MetricsReport baseline, treated;
      baseline.macro_f1 = row.baseline_macro / 100.0;
      treated.macro_f1 = row.macro_f1 / 100.0;
      const double derived = relative_improvement(baseline, treated).delta_percent;
      add(row, "delta", derived, row.delta_percent,
          std::fabs(derived - row.delta_percent) <= tol);
      continue;
    }

    if (row.accuracy < 0.0 || row.precision < 0.0 || row.recall < 0.0) continue;
    if (row.n_yes <= 0 || row.n_no <= 0) {
      add(row, "f1_pos", 0.0, row.f1_pos, false, "missing class totals");
      continue;
    }
    MetricsReport derived;
    std::string note;
    bool reconstructed = true;
    try {
      const ConfusionMatrix cm = reconstruct_confusion(
          row.accuracy / 100.0, row.precision / 100.0, row.recall / 100.0, row.n_yes, row.n_no);
      derived = compute_metrics(cm);
    } catch (const ValidationError& e) {
      reconstructed = false;
      note = e.what();
    }
    const std::pair<std::string, double> cells[] = {{"f1_pos", row.f1_pos},
                                                    {"f1_neg", row.f1_neg},
                                                    {"macro_f1", row.macro_f1},
                                                    {"phd", row.phd}};
    for (const auto& [cell, published] : cells) {
      if (published < 0.0) continue;
      double value = 0.0;
      bool pass = false;
      if (reconstructed) {
        if (cell == "f1_pos") value = round_display(derived.f1_pos);
        else if (cell == "f1_neg") value = round_display(derived.f1_neg);
        else if (cell == "macro_f1") value = round_display(derived.macro_f1);
        else value = round_display(derived.phd_score);
        pass = std::fabs(value - published) <= tol;
      }
      add(row, cell, value, published, pass, note);
    }
  }
  return report;
}

std::string format_verification(const VerificationReport& report) {
  std::ostringstream out;
  for (const auto& v : report.cells) {
    const char* status = v.pass ? "pass" : (v.expected_fail ? "FAIL (expected)" : "FAIL");
    out << v.table << "  " << v.model << "/" << v.method << "  " << v.cell << ": derived "
        << fmt1(v.derived) << " vs published " << fmt1(v.published) << "  " << status;
    if (!v.note.empty()) out << "  [" << v.note << "]";
    out << '\n';
  }
  out << report.passed << " passed, " << report.failed_expected << " expected failure(s), "
      << report.failed_unexpected << " unexpected failure(s)\n";
  return out.str();
}

}  // namespace mageval

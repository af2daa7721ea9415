#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mageval/metrics.hpp"

namespace mageval {

// One published result row, bundled as data so reference numbers stay out of
// code. Score fields hold display-scale percentages; < 0 marks an absent cell.
struct ReferenceRow {
  std::string table;   // e.g. "table1", "table2", "table10", "table11"
  std::string model;
  std::string method;  // e.g. "original", "magprompt", "vcd", "rule2_only"
  double accuracy = -1.0;
  double precision = -1.0;
  double recall = -1.0;
  double f1_pos = -1.0;
  double f1_neg = -1.0;
  double macro_f1 = -1.0;
  double phd = -1.0;
  std::int64_t n_yes = 0;  // per-class totals assumed for reconstruction
  std::int64_t n_no = 0;
  // Improvement rows (table11): published baseline macro F1 and delta.
  double baseline_macro = -1.0;
  double delta_percent = -1.0;
  // Cells (f1_pos/f1_neg/macro_f1/phd/delta) known to disagree with their own
  // row; reported as expected failures by verify_tables.
  std::vector<std::string> expected_fail;
};

std::vector<ReferenceRow> load_reference_rows(const std::filesystem::path& file);

// Data directory resolution: $MAGEVAL_DATA_DIR when set, else the bundled
// source-tree data directory this build was configured with.
std::filesystem::path default_data_dir();

enum class TableFormat { text, tsv, csv, json };

TableFormat parse_table_format(const std::string& name);  // throws ConfigError

struct TableRow {
  std::string label;     // model or run name
  std::string sublabel;  // method / template / group
  MetricsReport report;
};

// Renders rows in the published column order:
//   Accuracy Precision Recall F1_P F1_N macro F1 PhD score
// Values go through round_display. Throws ValidationError on empty input.
std::string emit_table(const std::vector<TableRow>& rows, TableFormat format);

TableRow reference_table_row(const ReferenceRow& row);

struct CellVerdict {
  std::string table, model, method;
  std::string cell;        // f1_pos | f1_neg | macro_f1 | phd | delta
  double derived = 0.0;    // display scale
  double published = 0.0;  // display scale
  bool pass = false;
  bool expected_fail = false;
  std::string note;        // reconstruction errors etc.
};

struct VerificationReport {
  std::vector<CellVerdict> cells;
  std::int64_t passed = 0;
  std::int64_t failed_expected = 0;
  std::int64_t failed_unexpected = 0;
};

// Re-derives every verifiable cell of the bundled reference rows (tables 1,
// 10 and 11): score rows are reconstructed from (accuracy, precision, recall)
// under the recorded class totals and recomputed; improvement rows are
// recomputed from their macro-F1 pair. A cell passes when the derived display
// value is within +-0.1 of the published one.
VerificationReport verify_tables(const std::vector<ReferenceRow>& rows);

std::string format_verification(const VerificationReport& report);

}  // namespace mageval

#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "fleet/model.h"

namespace fleet {

/// Numeric feature matrix plus an optional string label column.
struct Table {
  std::vector<std::string> features;
  std::optional<std::string> label;
  std::vector<std::vector<double>> rows;
  std::vector<std::string> labels;  // parallel to rows when label is set

  std::size_t size() const { return rows.size(); }
  Table subset(std::span<const std::size_t> indices) const;
};

struct CsvDocument {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> cells;
};

// Header row, comma separated, no quoting. Throws SchemaMismatch on ragged
// rows and DataSourceMissing when the file cannot be read.
CsvDocument parse_csv(std::string_view text);
CsvDocument read_csv(const std::string& path);
std::vector<std::string> read_csv_header(const std::string& path);

// Converts a document into a Table. `label` (if present among the columns)
// stays textual; every other column must parse as a decimal number.
Table to_table(const CsvDocument& doc, const std::optional<std::string>& label);

// Row-wise concatenation of every local source tagged with the project code,
// in data_source_id order. Throws NoLocalData or SchemaMismatch.
Table extract(std::string_view project_code, std::span<const DataSource> sources,
              const std::optional<std::string>& label);

// ceil(n * fraction), robust to binary rounding of decimal fractions.
std::size_t test_count(std::size_t n, double fraction);

// Fisher-Yates over row indices driven by SplitMix64(random_state); the first
// test_count rows of the shuffle form the test set.
std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t random_state);

// Throws LabelMissing or EmptyTable.
std::pair<Table, Table> split(const Table& table, const FederatedSplitter& splitter);

}  // namespace fleet

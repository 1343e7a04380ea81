#include "fleet/table.h"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "fleet/error.h"
#include "fleet/rng.h"

namespace fleet {
namespace {

std::vector<std::string> split_line(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      out.emplace_back(line.substr(start));
      break;
    }
    out.emplace_back(line.substr(start, comma - start));
    start = comma + 1;
  }
  return out;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == ' ')) s.remove_suffix(1);
  while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
  return s;
}

std::optional<double> parse_number(std::string_view s) {
  s = trim(s);
  if (s.empty()) return std::nullopt;
  if (s.front() == '+') s.remove_prefix(1);
  double v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) {
    return std::nullopt;
  }
  return v;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::DataSourceMissing, "cannot read " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

Table Table::subset(std::span<const std::size_t> indices) const {
  Table t;
  t.features = features;
  t.label = label;
  t.rows.reserve(indices.size());
  for (std::size_t i : indices) {
    t.rows.push_back(rows.at(i));
    if (label) t.labels.push_back(labels.at(i));
  }
  return t;
}

CsvDocument parse_csv(std::string_view text) {
  CsvDocument doc;
  bool have_header = false;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const std::size_t nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (trim(line).empty()) continue;
    auto fields = split_line(line);
    for (auto& f : fields) f = std::string(trim(f));
    if (!have_header) {
      doc.header = std::move(fields);
      have_header = true;
      continue;
    }
    if (fields.size() != doc.header.size()) {
      throw Error(ErrorCode::SchemaMismatch,
                  "line " + std::to_string(line_no) + " has " + std::to_string(fields.size()) +
                      " fields, header has " + std::to_string(doc.header.size()));
    }
    doc.cells.push_back(std::move(fields));
  }
  if (!have_header) throw Error(ErrorCode::SchemaMismatch, "csv has no header row");
  return doc;
}

CsvDocument read_csv(const std::string& path) { return parse_csv(read_file(path)); }

std::vector<std::string> read_csv_header(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::DataSourceMissing, "cannot read " + path);
  std::string line;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    auto fields = split_line(trim(line));
    for (auto& f : fields) f = std::string(trim(f));
    return fields;
  }
  throw Error(ErrorCode::SchemaMismatch, path + " has no header row");
}

Table to_table(const CsvDocument& doc, const std::optional<std::string>& label) {
  Table t;
  std::optional<std::size_t> label_col;
  for (std::size_t c = 0; c < doc.header.size(); ++c) {
    if (label && doc.header[c] == *label) {
      label_col = c;
    } else {
      t.features.push_back(doc.header[c]);
    }
  }
  if (label_col) t.label = label;
  for (const auto& row : doc.cells) {
    std::vector<double> values;
    values.reserve(t.features.size());
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (label_col && c == *label_col) {
        t.labels.push_back(row[c]);
        continue;
      }
      auto v = parse_number(row[c]);
      if (!v) {
        throw Error(ErrorCode::SchemaMismatch,
                    "column '" + doc.header[c] + "' is not numeric");
      }
      values.push_back(*v);
    }
    t.rows.push_back(std::move(values));
  }
  return t;
}

Table extract(std::string_view project_code, std::span<const DataSource> sources,
              const std::optional<std::string>& label) {
  std::vector<const DataSource*> tagged;
  for (const auto& ds : sources) {
    if (ds.project_codes.contains(std::string(project_code))) tagged.push_back(&ds);
  }
  if (tagged.empty()) {
    throw Error(ErrorCode::NoLocalData,
                "no local source for project '" + std::string(project_code) + "'");
  }
  std::sort(tagged.begin(), tagged.end(), [](const DataSource* a, const DataSource* b) {
    return a->data_source_id < b->data_source_id;
  });

  Table out;
  bool first = true;
  std::vector<std::string> header;
  for (const DataSource* ds : tagged) {
    CsvDocument doc = read_csv(ds->path);
    if (first) {
      header = doc.header;
    } else if (doc.header != header) {
      throw Error(ErrorCode::SchemaMismatch,
                  "source '" + ds->data_source_id + "' has a different header");
    }
    Table part = to_table(doc, label);
    if (first) {
      out = std::move(part);
      first = false;
      continue;
    }
    out.rows.insert(out.rows.end(), std::make_move_iterator(part.rows.begin()),
                    std::make_move_iterator(part.rows.end()));
    out.labels.insert(out.labels.end(), std::make_move_iterator(part.labels.begin()),
                      std::make_move_iterator(part.labels.end()));
  }
  return out;
}

std::size_t test_count(std::size_t n, double fraction) {
  const double x = static_cast<double>(n) * fraction;
  const double nearest = std::round(x);
  if (std::fabs(x - nearest) < 1e-9 * std::max(1.0, x)) {
    return static_cast<std::size_t>(nearest);
  }
  return static_cast<std::size_t>(std::ceil(x));
}

std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t random_state) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  Rng rng(random_state);
  for (std::size_t i = n; i-- > 1;) {
    const std::size_t j = static_cast<std::size_t>(rng.below(i + 1));
    std::swap(idx[i], idx[j]);
  }
  return idx;
}

std::pair<Table, Table> split(const Table& table, const FederatedSplitter& splitter) {
  if (!table.label || *table.label != splitter.label) {
    throw Error(ErrorCode::LabelMissing, "label column '" + splitter.label + "' not found");
  }
  if (table.size() == 0) throw Error(ErrorCode::EmptyTable, "nothing to split");
  const auto order = shuffled_indices(table.size(), splitter.random_state);
  const std::size_t k = test_count(table.size(), splitter.test_percentage);
  std::span<const std::size_t> all(order);
  return {table.subset(all.subspan(k)), table.subset(all.first(k))};
}

}  // namespace fleet

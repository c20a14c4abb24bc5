#include "trialkit/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <numeric>
#include <sstream>

#include "trialkit/errors.hpp"

namespace trialkit {

int Factor::level_index(std::string_view label) const {
  auto it = std::find(levels.begin(), levels.end(), label);
  return it == levels.end() ? -1 : static_cast<int>(it - levels.begin());
}

Dataset::Dataset(std::vector<Factor> factors,
                 std::vector<std::vector<int>> codes,
                 std::vector<double> response, std::string response_name)
    : factors_(std::move(factors)),
      codes_(std::move(codes)),
      response_(std::move(response)),
      response_name_(std::move(response_name)) {
  if (response_.empty()) {
    throw DataError("dataset has no data rows");
  }
  if (codes_.size() != factors_.size()) {
    throw DataError("factor/code column count mismatch");
  }
  for (std::size_t f = 0; f < factors_.size(); ++f) {
    if (codes_[f].size() != response_.size()) {
      throw DataError("ragged code column for factor '" + factors_[f].name +
                      "'");
    }
    for (int c : codes_[f]) {
      if (c < 0 || c >= static_cast<int>(factors_[f].levels.size())) {
        throw DataError("level code out of range for factor '" +
                        factors_[f].name + "'");
      }
    }
  }
  for (double v : response_) {
    if (!std::isfinite(v)) {
      throw DataError("non-finite response value");
    }
  }
  for (std::size_t i = 0; i < factors_.size(); ++i) {
    if (factors_[i].name.empty()) throw DataError("empty factor name");
    for (std::size_t j = i + 1; j < factors_.size(); ++j) {
      if (factors_[i].name == factors_[j].name) {
        throw DataError("duplicate factor name '" + factors_[i].name + "'");
      }
    }
  }
}

int Dataset::factor_index(std::string_view name) const {
  for (std::size_t i = 0; i < factors_.size(); ++i) {
    if (factors_[i].name == name) return static_cast<int>(i);
  }
  return -1;
}

const Factor& Dataset::factor(std::string_view name) const {
  int i = factor_index(name);
  if (i < 0) {
    throw DataError("unknown factor '" + std::string(name) + "'");
  }
  return factors_[static_cast<std::size_t>(i)];
}

Observation Dataset::row(std::size_t i) const {
  Observation obs;
  obs.response = response_.at(i);
  for (std::size_t f = 0; f < factors_.size(); ++f) {
    obs.levels[factors_[f].name] = factors_[f].levels[codes_[f][i]];
  }
  return obs;
}

Dataset Dataset::derive_factor(
    const std::string& name, const std::string& source,
    const std::map<std::string, std::string>& mapping) const {
  if (factor_index(name) >= 0) {
    throw DataError("factor '" + name + "' already exists");
  }
  const Factor& src = factor(source);
  for (const std::string& lvl : src.levels) {
    if (!mapping.count(lvl)) {
      throw DataError("mapping for derived factor '" + name +
                      "' misses level '" + lvl + "' of '" + source + "'");
    }
  }
  Factor derived{name, {}};
  std::vector<int> srclevel_to_new(src.levels.size());
  // New levels ordered by first appearance over rows.
  const std::vector<int>& src_codes = codes_[factor_index(source)];
  std::vector<int> col(n_rows());
  for (std::size_t r = 0; r < n_rows(); ++r) {
    const std::string& lab = mapping.at(src.levels[src_codes[r]]);
    int idx = derived.level_index(lab);
    if (idx < 0) {
      idx = static_cast<int>(derived.levels.size());
      derived.levels.push_back(lab);
    }
    col[r] = idx;
  }
  auto factors = factors_;
  auto codes = codes_;
  factors.push_back(std::move(derived));
  codes.push_back(std::move(col));
  Dataset out(std::move(factors), std::move(codes), response_,
              response_name_);
  out.scale_ = scale_;
  out.skipped_rows_ = skipped_rows_;
  return out;
}

Dataset Dataset::relevel(std::string_view factor_name,
                         std::string_view ref_level) const {
  int fi = factor_index(factor_name);
  if (fi < 0) {
    throw DataError("unknown factor '" + std::string(factor_name) + "'");
  }
  const Factor& f = factors_[fi];
  int li = f.level_index(ref_level);
  if (li < 0) {
    throw DataError("factor '" + f.name + "' has no level '" +
                    std::string(ref_level) + "'");
  }
  std::vector<int> newpos(f.levels.size());
  Factor moved{f.name, {}};
  for (std::size_t i = 0; i < f.levels.size(); ++i) {
    if (static_cast<int>(i) != li) {
      newpos[i] = static_cast<int>(moved.levels.size());
      moved.levels.push_back(f.levels[i]);
    }
  }
  newpos[li] = static_cast<int>(moved.levels.size());
  moved.levels.push_back(f.levels[li]);

  auto factors = factors_;
  auto codes = codes_;
  factors[fi] = std::move(moved);
  for (int& c : codes[fi]) c = newpos[c];
  Dataset out(std::move(factors), std::move(codes), response_,
              response_name_);
  out.scale_ = scale_;
  out.skipped_rows_ = skipped_rows_;
  return out;
}

Dataset Dataset::permute_rows(const std::vector<std::size_t>& order) const {
  if (order.size() != n_rows()) {
    throw DataError("permutation length does not match row count");
  }
  std::vector<std::vector<int>> codes(factors_.size());
  std::vector<double> resp(n_rows());
  for (std::size_t f = 0; f < factors_.size(); ++f) {
    codes[f].resize(n_rows());
    for (std::size_t r = 0; r < n_rows(); ++r) {
      codes[f][r] = codes_[f][order[r]];
    }
  }
  for (std::size_t r = 0; r < n_rows(); ++r) resp[r] = response_[order[r]];
  Dataset out(factors_, std::move(codes), std::move(resp), response_name_);
  out.scale_ = scale_;
  out.skipped_rows_ = skipped_rows_;
  return out;
}

DatasetBuilder::DatasetBuilder(std::vector<std::string> factor_names,
                               std::string response_name)
    : response_name_(std::move(response_name)) {
  for (auto& n : factor_names) {
    factors_.push_back(Factor{std::move(n), {}});
  }
  codes_.resize(factors_.size());
}

void DatasetBuilder::add_row(const std::vector<std::string>& levels,
                             double response) {
  if (levels.size() != factors_.size()) {
    throw DataError("row has " + std::to_string(levels.size()) +
                    " levels, expected " + std::to_string(factors_.size()));
  }
  for (std::size_t f = 0; f < factors_.size(); ++f) {
    int idx = factors_[f].level_index(levels[f]);
    if (idx < 0) {
      idx = static_cast<int>(factors_[f].levels.size());
      factors_[f].levels.push_back(levels[f]);
    }
    codes_[f].push_back(idx);
  }
  response_.push_back(response);
}

Dataset DatasetBuilder::build() && {
  return Dataset(std::move(factors_), std::move(codes_),
                 std::move(response_), std::move(response_name_));
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::stringstream ss(line);
  while (std::getline(ss, field, ',')) {
    // Trim surrounding whitespace.
    auto b = field.find_first_not_of(" \t\r");
    auto e = field.find_last_not_of(" \t\r");
    out.push_back(b == std::string::npos ? ""
                                         : field.substr(b, e - b + 1));
  }
  if (!line.empty() && line.back() == ',') out.push_back("");
  return out;
}

}  // namespace

Dataset load_table(std::istream& in, const std::string& response_column) {
  std::string line;
  if (!std::getline(in, line)) {
    throw DataError("missing header line");
  }
  auto header = split_csv_line(line);
  if (header.empty()) {
    throw DataError("missing header line");
  }
  int resp_col = -1;
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == response_column) {
      resp_col = static_cast<int>(i);
      break;
    }
  }
  if (resp_col < 0) {
    throw DataError("response column '" + response_column +
                    "' not found in header");
  }
  std::vector<std::string> factor_names;
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (static_cast<int>(i) != resp_col) {
      if (header[i].empty()) {
        throw DataError("empty factor name in header");
      }
      factor_names.push_back(header[i]);
    }
  }
  DatasetBuilder builder(factor_names, response_column);

  std::size_t skipped = 0;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() ||
        line.find_first_not_of(" \t\r") == std::string::npos) {
      continue;
    }
    auto fields = split_csv_line(line);
    if (fields.size() != header.size()) {
      throw DataError("line " + std::to_string(lineno) + ": expected " +
                      std::to_string(header.size()) + " fields, found " +
                      std::to_string(fields.size()));
    }
    const std::string& raw = fields[resp_col];
    if (raw.empty()) {
      ++skipped;
      continue;
    }
    double value = 0;
    auto [ptr, ec] =
        std::from_chars(raw.data(), raw.data() + raw.size(), value);
    if (ec != std::errc() || ptr != raw.data() + raw.size()) {
      throw DataError("line " + std::to_string(lineno) +
                      ": response value '" + raw + "' is not numeric");
    }
    std::vector<std::string> levels;
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (static_cast<int>(i) != resp_col) levels.push_back(fields[i]);
    }
    builder.add_row(levels, value);
  }
  Dataset ds = std::move(builder).build();
  ds.set_skipped_rows(skipped);
  return ds;
}

Dataset load_table(const std::string& path_or_builtin,
                   const std::string& response_column) {
  if (path_or_builtin == "builtin:toy") {
    return builtin_toy();
  }
  std::ifstream in(path_or_builtin);
  if (!in) {
    throw DataError("cannot open '" + path_or_builtin + "'");
  }
  return load_table(in, response_column);
}

Dataset builtin_toy() {
  // Six cropping systems tested in five years; systems 1 and 4 end after
  // 2023, systems 5 and 6 start in 2024, systems 2 and 3 run throughout.
  struct Row {
    const char* s;
    const char* y;
    double v;
  };
  static const Row rows[] = {
      {"1", "2020", 51}, {"1", "2021", 49}, {"1", "2022", 50},
      {"1", "2023", 52}, {"2", "2020", 93}, {"2", "2021", 91},
      {"2", "2022", 88}, {"2", "2023", 87}, {"2", "2024", 98},
      {"3", "2020", 57}, {"3", "2021", 53}, {"3", "2022", 56},
      {"3", "2023", 52}, {"3", "2024", 63}, {"4", "2020", 54},
      {"4", "2021", 51}, {"4", "2022", 56}, {"4", "2023", 54},
      {"5", "2024", 67}, {"6", "2024", 63},
  };
  DatasetBuilder builder({"S", "Y"}, "value");
  for (const Row& r : rows) {
    builder.add_row({r.s, r.y}, r.v);
  }
  return std::move(builder).build();
}

long IncidenceTable::total() const {
  long t = 0;
  for (const auto& row : counts) {
    t = std::accumulate(row.begin(), row.end(), t);
  }
  return t;
}

std::string IncidenceTable::render() const {
  std::size_t w = 0;
  for (const auto& l : row_levels) w = std::max(w, l.size());
  w = std::max(w, row_factor.size());
  std::ostringstream out;
  out << row_factor;
  out << std::string(w >= row_factor.size() ? w - row_factor.size() : 0, ' ');
  for (const auto& c : col_levels) out << "  " << c;
  out << '\n';
  for (std::size_t r = 0; r < row_levels.size(); ++r) {
    out << row_levels[r]
        << std::string(w - row_levels[r].size(), ' ');
    for (std::size_t c = 0; c < col_levels.size(); ++c) {
      std::string mark = counts[r][c] > 0 ? "x" : " ";
      out << "  " << mark
          << std::string(col_levels[c].size() > 1 ? col_levels[c].size() - 1
                                                  : 0,
                         ' ');
    }
    out << '\n';
  }
  return out.str();
}

IncidenceTable incidence(const Dataset& ds, std::string_view row_factor,
                         std::string_view col_factor) {
  const Factor& rf = ds.factor(row_factor);
  const Factor& cf = ds.factor(col_factor);
  IncidenceTable t;
  t.row_factor = rf.name;
  t.col_factor = cf.name;
  t.row_levels = rf.levels;
  t.col_levels = cf.levels;
  t.counts.assign(rf.levels.size(),
                  std::vector<long>(cf.levels.size(), 0));
  int ri = ds.factor_index(row_factor);
  int ci = ds.factor_index(col_factor);
  for (std::size_t r = 0; r < ds.n_rows(); ++r) {
    ++t.counts[ds.code(ri, r)][ds.code(ci, r)];
  }
  return t;
}

}  // namespace trialkit

#ifndef TRIALKIT_DATASET_HPP
#define TRIALKIT_DATASET_HPP

#include <cstddef>
#include <iosfwd>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace trialkit {

// Scale the response currently lives on.
enum class TransformKind { none, sqrt };

// A categorical factor with its declared levels in order. The last level
// is the reference level under corner-point coding.
struct Factor {
  std::string name;
  std::vector<std::string> levels;

  int level_index(std::string_view label) const;  // -1 if absent
};

// One row in map form, for inspection and bindings.
struct Observation {
  std::map<std::string, std::string> levels;
  double response = 0.0;
};

// Immutable table of factor-labelled observations with one numeric
// response per row. Stored column-wise as level codes.
class Dataset {
 public:
  // Empty placeholder; every real dataset comes from the validating
  // constructor below, a builder, or load_table.
  Dataset() = default;

  Dataset(std::vector<Factor> factors, std::vector<std::vector<int>> codes,
          std::vector<double> response, std::string response_name);

  std::size_t n_rows() const { return response_.size(); }
  std::size_t n_factors() const { return factors_.size(); }
  const std::vector<Factor>& factors() const { return factors_; }
  const std::string& response_name() const { return response_name_; }
  const std::vector<double>& response() const { return response_; }
  TransformKind scale() const { return scale_; }
  std::size_t skipped_rows() const { return skipped_rows_; }

  // Index of a factor by name, -1 if absent.
  int factor_index(std::string_view name) const;
  // Factor by name; throws DataError if absent.
  const Factor& factor(std::string_view name) const;
  // Level code of `row` for factor `f` (indices into factors()).
  int code(std::size_t f, std::size_t row) const { return codes_[f][row]; }
  const std::vector<int>& codes(std::size_t f) const { return codes_[f]; }

  Observation row(std::size_t i) const;

  // New dataset with an added factor derived from an existing one by a
  // level-label mapping. The mapping must cover every source level.
  Dataset derive_factor(const std::string& name, const std::string& source,
                        const std::map<std::string, std::string>& mapping)
      const;

  // New dataset with `ref_level` moved to the end of the factor's level
  // list, making it the reference level; data are unchanged.
  Dataset relevel(std::string_view factor_name,
                  std::string_view ref_level) const;

  // New dataset with row order permuted; factor declarations unchanged.
  Dataset permute_rows(const std::vector<std::size_t>& order) const;

  // Used by load_table and transform_response.
  void set_skipped_rows(std::size_t n) { skipped_rows_ = n; }
  void set_scale(TransformKind k) { scale_ = k; }

 private:
  std::vector<Factor> factors_;
  std::vector<std::vector<int>> codes_;  // codes_[factor][row]
  std::vector<double> response_;
  std::string response_name_;
  TransformKind scale_ = TransformKind::none;
  std::size_t skipped_rows_ = 0;
};

// Incremental construction with level order = first appearance.
class DatasetBuilder {
 public:
  explicit DatasetBuilder(std::vector<std::string> factor_names,
                          std::string response_name = "value");

  // levels must match the factor_names order.
  void add_row(const std::vector<std::string>& levels, double response);
  Dataset build() &&;

 private:
  std::vector<Factor> factors_;
  std::vector<std::vector<int>> codes_;
  std::vector<double> response_;
  std::string response_name_;
};

// Parses comma-separated text with a header row. The named response
// column must be numeric; every other column becomes a factor with level
// order = first appearance. Rows with an empty response field are
// skipped and counted in Dataset::skipped_rows().
//
// Throws DataError on missing header, no data rows, ragged rows, or a
// non-numeric response value (the message names the offending line).
Dataset load_table(std::istream& in, const std::string& response_column);
Dataset load_table(const std::string& path_or_builtin,
                   const std::string& response_column);

// The six-systems-by-five-years toy dataset: factors S and Y, 20 rows.
Dataset builtin_toy();

// Counts of observations per level pair of two factors.
struct IncidenceTable {
  std::string row_factor, col_factor;
  std::vector<std::string> row_levels, col_levels;
  std::vector<std::vector<long>> counts;  // counts[row][col]

  long total() const;
  // "x" for count >= 1, blank for 0, per row.
  std::string render() const;
};

IncidenceTable incidence(const Dataset& ds, std::string_view row_factor,
                         std::string_view col_factor);

}  // namespace trialkit

#endif  // TRIALKIT_DATASET_HPP

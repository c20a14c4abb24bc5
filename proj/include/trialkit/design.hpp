#ifndef TRIALKIT_DESIGN_HPP
#define TRIALKIT_DESIGN_HPP

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

#include "trialkit/dataset.hpp"
#include "trialkit/formula.hpp"

namespace trialkit {

// How one model term is mapped onto indicator columns.
//
// Factorial coding (fixed terms whose constituent main effects are all in
// the model, and single-factor terms): one column per combination of
// non-reference levels, reference = last declared level of each factor.
// Composite coding (standalone compound fixed terms): the term acts as a
// single factor whose levels are the observed combinations in first-
// appearance order, with the last observed combination as reference.
// Random-term codings drop no level.
struct TermCoding {
  Term term;
  std::vector<int> factor_indices;  // into Dataset::factors()
  bool composite = false;
  // Per column, the level code of each constituent factor.
  std::vector<std::vector<int>> combos;
  // Reference combination of a composite-coded fixed term (the last
  // observed one); empty for factorial codings.
  std::vector<int> composite_reference;
  int start_col = 0;  // first column in X (or Z)

  // Column offset (relative to start_col) encoding `cell`, or nullopt if
  // the cell is the reference combination (contributes no column) for
  // factorial coding. Throws ModelError if a composite-coded cell was
  // never observed.
  std::optional<int> column_for(const std::vector<int>& cell) const;
};

struct DesignMatrices {
  Eigen::MatrixXd X;  // n x p, first column all ones (intercept)
  Eigen::MatrixXd Z;  // n x q, q = 0 when no fittable random term
  std::vector<std::string> x_labels, z_labels;
  std::vector<TermCoding> fixed_codings;   // aligned with spec.fixed_terms
  std::vector<TermCoding> random_codings;  // non-aliased random terms only
  std::vector<bool> residual_alias;        // aligned with spec.random_terms
  Eigen::Index rank_x = 0;

  bool has_random() const { return Z.cols() > 0; }
};

// Builds fixed and random design matrices under corner-point constraints.
// A random term whose observed level combinations uniquely index the
// observations is flagged residual-aliased and contributes no Z columns.
// Throws ModelError if more than one non-aliased random term remains
// (unsupported random structure) or a spec factor is absent from the
// dataset.
DesignMatrices build_design(const Dataset& ds, const ModelSpec& spec);

// Partition of treatment levels into components connected through shared
// environment levels.
struct ConnectivityReport {
  std::vector<std::vector<std::string>> components;

  bool connected() const { return components.size() <= 1; }
};

ConnectivityReport connectivity(const Dataset& ds,
                                std::string_view treatment,
                                std::string_view environment);

// Writes X and Z with column labels as comma-separated text.
void dump_design(const DesignMatrices& dm, std::ostream& out);

}  // namespace trialkit

#endif  // TRIALKIT_DESIGN_HPP

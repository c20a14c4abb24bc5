#ifndef TRIALKIT_INFERENCE_HPP
#define TRIALKIT_INFERENCE_HPP

#include <optional>
#include <string>
#include <vector>

#include "trialkit/solver.hpp"

namespace trialkit {

// One reported mean: `label` identifies the treatment-level combination,
// `group` is an optional stratum or range tag, `letters` an optional
// letter code attached after mean comparison.
struct MeanRow {
  std::string label;
  double estimate = 0.0;
  std::string group;
  std::string letters;
};

struct MeansTable {
  std::vector<MeanRow> rows;
  Term margin_over;              // averaged-over term, may be empty
  TransformKind transform = TransformKind::none;  // analysis scale
  bool back_transformed = false;

  std::string scale() const {
    return back_transformed ? "back-transformed" : "analysis";
  }
};

// Model predictions for treatment x margin cells, including cells with
// no data; the per-treatment mean over its complete margin set equals
// the adjusted mean.
struct PredictedCell {
  std::string treatment;
  std::string margin;
  double prediction = 0.0;
  bool observed = false;
};

struct CellTable {
  Term treatment, margin;
  std::vector<std::string> treatment_labels;
  std::vector<std::string> margin_labels;
  std::vector<PredictedCell> cells;
  std::vector<double> treatment_means;  // aligned with treatment_labels

  std::optional<double> cell(std::string_view treatment_label,
                             std::string_view margin_label) const;
};

struct SedEntry {
  int i = 0, j = 0;  // indices into SedMatrix::labels
  double diff = 0.0;
  double sed = 0.0;
  int df = 0;
  double t = 0.0;
  double p = 1.0;
  bool significant = false;
};

struct SedMatrix {
  std::vector<std::string> labels;
  std::vector<double> estimates;
  std::vector<SedEntry> pairs;  // all unordered pairs, i < j
  double alpha = 0.05;
  int df = 0;

  const SedEntry& pair(std::string_view a, std::string_view b) const;
  // Pairs restricted to a subset of levels (order preserved).
  SedMatrix subset(const std::vector<std::string>& keep) const;
};

// Cell predictions from the fixed part of the model: intercept plus the
// treatment- and margin-term effects for the cell; random terms
// contribute zero; any other fixed term enters at its data-average
// value. Cells involving unobserved composite-term combinations or
// disconnected designs raise ModelError (inestimable).
CellTable predicted_cells(const FittedModel& fm, const Term& treatment,
                          const Term& margin);

// Equal-weight average of the predicted cells over the complete margin
// set, per treatment level.
MeansTable adjusted_means(const FittedModel& fm, const Term& treatment,
                          const Term& margin);

// Standard errors of differences between adjusted means, with t tests on
// the containment degrees of freedom. SEDs use the small-sample adjusted
// covariance of the fit.
SedMatrix sed_matrix(const FittedModel& fm, const Term& treatment,
                     const Term& margin, double alpha = 0.05);

// Arithmetic mean of the SEDs over all unordered pairs, optionally
// restricted to a subset of at least two levels.
double mean_sed(const SedMatrix& sm,
                const std::vector<std::string>& subset = {});

// A named set of factor levels, e.g. range "2020-2023" or pooled
// treatment group "2 & 3".
struct LevelSet {
  std::string label;
  std::vector<std::string> levels;
};

// Plain arithmetic means of observations per treatment group within each
// environment range; combinations without data produce no row.
MeansTable range_means(const Dataset& ds, std::string_view treatment,
                       std::string_view environment,
                       const std::vector<LevelSet>& ranges,
                       const std::vector<LevelSet>& groups = {});

struct YearStatusRecommendation {
  double mean_sed_fixed = 0.0;
  double mean_sed_random = 0.0;
  bool recommend_fixed = true;
  FittedModel fixed_fit, random_fit;
};

// Fits both candidate models and recommends the one with the smaller
// mean SED among treatment means; ties within 1e-6 favor the fixed one.
YearStatusRecommendation select_year_status(const Dataset& ds,
                                            const ModelSpec& fixed_spec,
                                            const ModelSpec& random_spec,
                                            const Term& treatment,
                                            const Term& margin,
                                            double alpha = 0.05);

// Difference of pooled arithmetic means of two treatment sets within the
// listed shared environments. Every treatment in either set must be
// observed in every listed environment.
double direct_difference(const Dataset& ds, std::string_view treatment,
                         std::string_view environment,
                         const std::vector<std::string>& set_a,
                         const std::vector<std::string>& set_b,
                         const std::vector<std::string>& environments);

// Indirect comparison of two treatment sets through a common reference
// set: the difference of the two direct differences, each taken in the
// environments the side shares with the reference.
double indirect_difference(const Dataset& ds, std::string_view treatment,
                           std::string_view environment,
                           const std::vector<std::string>& set_a,
                           const std::vector<std::string>& set_b,
                           const std::vector<std::string>& reference);

// Environment levels in which every listed treatment has data.
std::vector<std::string> shared_environments(
    const Dataset& ds, std::string_view treatment,
    std::string_view environment,
    const std::vector<std::string>& treatments);

// Elementwise response transform; sqrt requires non-negative responses.
Dataset transform_response(const Dataset& ds, TransformKind kind);

// Maps analysis-scale means back to the original scale (sqrt-scale mean
// m becomes m^2, interpreted as a median). SEDs and letters are not
// back-transformed; letters attached to the table are kept as computed
// on the analysis scale.
MeansTable back_transform(const MeansTable& mt, TransformKind kind);

// Treatment levels whose observations all carry `level` of `factor`;
// used to stratify comparisons (the fit itself is unchanged).
std::vector<std::string> levels_in_stratum(const Dataset& ds,
                                           const Term& treatment,
                                           std::string_view factor,
                                           std::string_view level);

}  // namespace trialkit

#endif  // TRIALKIT_INFERENCE_HPP

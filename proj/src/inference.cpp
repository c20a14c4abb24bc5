#include "trialkit/inference.hpp"

#include <algorithm>
#include <boost/math/distributions/students_t.hpp>
#include <cmath>
#include <map>
#include <set>

#include "trialkit/errors.hpp"

namespace trialkit {

namespace {

std::vector<int> term_factor_indices(const Dataset& ds, const Term& term) {
  std::vector<int> idx;
  for (const std::string& f : term.factors) {
    int i = ds.factor_index(f);
    if (i < 0) {
      throw ModelError("factor '" + f + "' is absent from the data");
    }
    idx.push_back(i);
  }
  return idx;
}

std::string combo_level_label(const Dataset& ds,
                              const std::vector<int>& fidx,
                              const std::vector<int>& cell) {
  std::string s;
  for (std::size_t k = 0; k < cell.size(); ++k) {
    if (k) s += '/';
    s += ds.factors()[fidx[k]].levels[cell[k]];
  }
  return s;
}

std::vector<std::vector<int>> observed_term_combos(
    const Dataset& ds, const std::vector<int>& fidx) {
  std::vector<std::vector<int>> combos;
  std::set<std::vector<int>> seen;
  for (std::size_t r = 0; r < ds.n_rows(); ++r) {
    std::vector<int> cell(fidx.size());
    for (std::size_t k = 0; k < fidx.size(); ++k) {
      cell[k] = ds.code(fidx[k], r);
    }
    if (seen.insert(cell).second) combos.push_back(cell);
  }
  return combos;
}

// Assignment of level codes to dataset factors describing one cell.
using CellAssignment = std::map<int, int>;

// Coefficient vector c such that c'beta is the fixed-part prediction for
// the cell: indicator blocks for terms fully determined by the
// assignment, data-average columns for any other fixed term.
Eigen::VectorXd cell_coefficients(const FittedModel& fm,
                                  const CellAssignment& assignment) {
  const Dataset& ds = fm.data;
  Eigen::VectorXd coef = Eigen::VectorXd::Zero(fm.design.X.cols());
  coef(0) = 1.0;
  for (const TermCoding& coding : fm.design.fixed_codings) {
    bool determined = true;
    std::vector<int> cell(coding.factor_indices.size());
    for (std::size_t k = 0; k < coding.factor_indices.size(); ++k) {
      auto it = assignment.find(coding.factor_indices[k]);
      if (it == assignment.end()) {
        determined = false;
        break;
      }
      cell[k] = it->second;
    }
    const auto ncols = static_cast<Eigen::Index>(coding.combos.size());
    if (determined) {
      if (auto col = coding.column_for(cell)) {
        coef(coding.start_col + *col) = 1.0;
      }
    } else if (ncols > 0) {
      coef.segment(coding.start_col, ncols) =
          fm.design.X.middleCols(coding.start_col, ncols)
              .colwise()
              .mean();
    }
  }
  return coef;
}

void require_estimable(const FittedModel& fm, const Eigen::VectorXd& coef,
                       const std::string& what) {
  if (!fm.estimable(coef)) {
    throw ModelError(what +
                     " is inestimable: the design is disconnected for "
                     "this combination");
  }
}

// Shared layout of treatment rows and their compatible margin cells.
struct CellLayout {
  std::vector<int> treatment_fidx, margin_fidx;
  std::vector<std::vector<int>> treatment_combos;
  // margin factors not already fixed by the treatment combination
  std::vector<int> free_margin_fidx;
  std::vector<std::string> treatment_labels;

  // All margin cells compatible with a treatment combo: shared factors
  // pinned to the treatment levels, free factors over their full
  // declared level sets.
  std::vector<CellAssignment> margin_cells(const Dataset& ds,
                                           const std::vector<int>& tcell)
      const {
    CellAssignment base;
    for (std::size_t k = 0; k < treatment_fidx.size(); ++k) {
      base[treatment_fidx[k]] = tcell[k];
    }
    std::vector<CellAssignment> out;
    std::vector<int> sizes;
    for (int fi : free_margin_fidx) {
      sizes.push_back(static_cast<int>(ds.factors()[fi].levels.size()));
    }
    std::vector<int> cur(sizes.size(), 0);
    while (true) {
      CellAssignment cell = base;
      for (std::size_t k = 0; k < free_margin_fidx.size(); ++k) {
        cell[free_margin_fidx[k]] = cur[k];
      }
      out.push_back(std::move(cell));
      int k = static_cast<int>(sizes.size()) - 1;
      while (k >= 0 && ++cur[k] == sizes[k]) {
        cur[k] = 0;
        --k;
      }
      if (k < 0) break;
    }
    return out;
  }

  std::string margin_label(const Dataset& ds,
                           const CellAssignment& cell) const {
    std::string s;
    for (std::size_t k = 0; k < margin_fidx.size(); ++k) {
      if (k) s += '/';
      s += ds.factors()[margin_fidx[k]]
               .levels[cell.at(margin_fidx[k])];
    }
    return s;
  }
};

CellLayout make_layout(const Dataset& ds, const Term& treatment,
                       const Term& margin) {
  CellLayout layout;
  layout.treatment_fidx = term_factor_indices(ds, treatment);
  if (!margin.factors.empty()) {
    layout.margin_fidx = term_factor_indices(ds, margin);
  }
  layout.treatment_combos = observed_term_combos(ds, layout.treatment_fidx);
  for (int fi : layout.margin_fidx) {
    if (std::find(layout.treatment_fidx.begin(), layout.treatment_fidx.end(),
                  fi) == layout.treatment_fidx.end()) {
      layout.free_margin_fidx.push_back(fi);
    }
  }
  for (const auto& cell : layout.treatment_combos) {
    layout.treatment_labels.push_back(
        combo_level_label(ds, layout.treatment_fidx, cell));
  }
  return layout;
}

bool cell_has_data(const Dataset& ds, const CellAssignment& cell) {
  for (std::size_t r = 0; r < ds.n_rows(); ++r) {
    bool match = true;
    for (const auto& [fi, code] : cell) {
      if (ds.code(fi, r) != code) {
        match = false;
        break;
      }
    }
    if (match) return true;
  }
  return false;
}

// Per-treatment coefficient vectors of the adjusted means.
std::vector<Eigen::VectorXd> mean_coefficients(const FittedModel& fm,
                                               const CellLayout& layout) {
  std::vector<Eigen::VectorXd> coefs;
  for (const auto& tcell : layout.treatment_combos) {
    auto cells = layout.margin_cells(fm.data, tcell);
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(fm.design.X.cols());
    for (const CellAssignment& cell : cells) {
      acc += cell_coefficients(fm, cell);
    }
    acc /= static_cast<double>(cells.size());
    require_estimable(
        fm, acc,
        "adjusted mean of '" +
            combo_level_label(fm.data, layout.treatment_fidx, tcell) + "'");
    coefs.push_back(std::move(acc));
  }
  return coefs;
}

double pooled_mean(const Dataset& ds, int ti, int ei,
                   const std::vector<int>& treatment_codes,
                   const std::vector<int>& env_codes,
                   std::string_view context) {
  // Observed-in-every-environment precondition, checked per treatment.
  for (int tc : treatment_codes) {
    for (int ec : env_codes) {
      bool found = false;
      for (std::size_t r = 0; r < ds.n_rows(); ++r) {
        if (ds.code(ti, r) == tc && ds.code(ei, r) == ec) {
          found = true;
          break;
        }
      }
      if (!found) {
        throw DataError("treatment '" +
                        ds.factors()[ti].levels[tc] + "' has no data in "
                        "environment '" + ds.factors()[ei].levels[ec] +
                        "' (" + std::string(context) + ")");
      }
    }
  }
  double sum = 0.0;
  long count = 0;
  for (std::size_t r = 0; r < ds.n_rows(); ++r) {
    if (std::find(treatment_codes.begin(), treatment_codes.end(),
                  ds.code(ti, r)) != treatment_codes.end() &&
        std::find(env_codes.begin(), env_codes.end(), ds.code(ei, r)) !=
            env_codes.end()) {
      sum += ds.response()[r];
      ++count;
    }
  }
  return sum / static_cast<double>(count);
}

std::vector<int> level_codes(const Factor& f,
                             const std::vector<std::string>& labels) {
  std::vector<int> codes;
  for (const std::string& l : labels) {
    int c = f.level_index(l);
    if (c < 0) {
      throw DataError("factor '" + f.name + "' has no level '" + l + "'");
    }
    codes.push_back(c);
  }
  return codes;
}

}  // namespace

std::optional<double> CellTable::cell(std::string_view treatment_label,
                                      std::string_view margin_label) const {
  for (const PredictedCell& c : cells) {
    if (c.treatment == treatment_label && c.margin == margin_label) {
      return c.prediction;
    }
  }
  return std::nullopt;
}

const SedEntry& SedMatrix::pair(std::string_view a,
                                std::string_view b) const {
  for (const SedEntry& e : pairs) {
    if ((labels[e.i] == a && labels[e.j] == b) ||
        (labels[e.i] == b && labels[e.j] == a)) {
      return e;
    }
  }
  throw DataError("no such pair in SED matrix");
}

SedMatrix SedMatrix::subset(const std::vector<std::string>& keep) const {
  SedMatrix out;
  out.alpha = alpha;
  out.df = df;
  std::map<int, int> remap;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (std::find(keep.begin(), keep.end(), labels[i]) != keep.end()) {
      remap[static_cast<int>(i)] = static_cast<int>(out.labels.size());
      out.labels.push_back(labels[i]);
      out.estimates.push_back(estimates[i]);
    }
  }
  for (const SedEntry& e : pairs) {
    auto a = remap.find(e.i);
    auto b = remap.find(e.j);
    if (a != remap.end() && b != remap.end()) {
      SedEntry copy = e;
      copy.i = a->second;
      copy.j = b->second;
      out.pairs.push_back(copy);
    }
  }
  return out;
}

CellTable predicted_cells(const FittedModel& fm, const Term& treatment,
                          const Term& margin) {
  const Dataset& ds = fm.data;
  CellLayout layout = make_layout(ds, treatment, margin);
  CellTable table;
  table.treatment = treatment;
  table.margin = margin;
  table.treatment_labels = layout.treatment_labels;

  std::set<std::string> margin_seen;
  for (std::size_t t = 0; t < layout.treatment_combos.size(); ++t) {
    const auto& tcell = layout.treatment_combos[t];
    auto cells = layout.margin_cells(ds, tcell);
    double acc = 0.0;
    for (const CellAssignment& cell : cells) {
      Eigen::VectorXd coef = cell_coefficients(fm, cell);
      std::string mlabel = layout.margin_label(ds, cell);
      require_estimable(fm, coef,
                        "cell (" + layout.treatment_labels[t] +
                            (mlabel.empty() ? "" : ", " + mlabel) + ")");
      PredictedCell pc;
      pc.treatment = layout.treatment_labels[t];
      pc.margin = mlabel;
      pc.prediction = coef.dot(fm.beta);
      pc.observed = cell_has_data(ds, cell);
      acc += pc.prediction;
      if (margin_seen.insert(mlabel).second) {
        table.margin_labels.push_back(mlabel);
      }
      table.cells.push_back(std::move(pc));
    }
    table.treatment_means.push_back(acc /
                                    static_cast<double>(cells.size()));
  }
  return table;
}

MeansTable adjusted_means(const FittedModel& fm, const Term& treatment,
                          const Term& margin) {
  CellLayout layout = make_layout(fm.data, treatment, margin);
  auto coefs = mean_coefficients(fm, layout);
  MeansTable mt;
  mt.margin_over = margin;
  mt.transform = fm.data.scale();
  for (std::size_t t = 0; t < coefs.size(); ++t) {
    mt.rows.push_back(
        MeanRow{layout.treatment_labels[t], coefs[t].dot(fm.beta), "", ""});
  }
  return mt;
}

SedMatrix sed_matrix(const FittedModel& fm, const Term& treatment,
                     const Term& margin, double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) {
    throw ModelError("alpha must lie strictly between 0 and 1");
  }
  CellLayout layout = make_layout(fm.data, treatment, margin);
  auto coefs = mean_coefficients(fm, layout);
  SedMatrix sm;
  sm.labels = layout.treatment_labels;
  sm.alpha = alpha;
  sm.df = fm.df_policy;
  for (const auto& c : coefs) {
    sm.estimates.push_back(c.dot(fm.beta));
  }
  boost::math::students_t_distribution<double> tdist(
      static_cast<double>(fm.df_policy));
  for (std::size_t i = 0; i < coefs.size(); ++i) {
    for (std::size_t j = i + 1; j < coefs.size(); ++j) {
      Eigen::VectorXd c = coefs[i] - coefs[j];
      double var = c.dot(fm.vcov_beta_adjusted * c);
      SedEntry e;
      e.i = static_cast<int>(i);
      e.j = static_cast<int>(j);
      e.df = fm.df_policy;
      e.diff = sm.estimates[i] - sm.estimates[j];
      e.sed = std::sqrt(std::max(var, 0.0));
      if (e.sed > 0.0) {
        e.t = e.diff / e.sed;
        e.p = 2.0 * boost::math::cdf(boost::math::complement(
                        tdist, std::abs(e.t)));
      } else {
        // Degenerate zero-variance difference.
        e.t = e.diff == 0.0 ? 0.0
                            : std::copysign(
                                  std::numeric_limits<double>::infinity(),
                                  e.diff);
        e.p = e.diff == 0.0 ? 1.0 : 0.0;
      }
      e.significant = e.p < alpha;
      sm.pairs.push_back(e);
    }
  }
  return sm;
}

double mean_sed(const SedMatrix& sm, const std::vector<std::string>& subset) {
  const SedMatrix* use = &sm;
  SedMatrix reduced;
  if (!subset.empty()) {
    reduced = sm.subset(subset);
    use = &reduced;
  }
  if (use->labels.size() < 2) {
    throw ModelError("mean SED requires at least two levels");
  }
  double sum = 0.0;
  for (const SedEntry& e : use->pairs) sum += e.sed;
  return sum / static_cast<double>(use->pairs.size());
}

MeansTable range_means(const Dataset& ds, std::string_view treatment,
                       std::string_view environment,
                       const std::vector<LevelSet>& ranges,
                       const std::vector<LevelSet>& groups) {
  const Factor& trt = ds.factor(treatment);
  const Factor& env = ds.factor(environment);
  int ti = ds.factor_index(treatment);
  int ei = ds.factor_index(environment);

  std::vector<LevelSet> use_groups = groups;
  if (use_groups.empty()) {
    for (const std::string& l : trt.levels) {
      use_groups.push_back(LevelSet{l, {l}});
    }
  }
  MeansTable mt;
  mt.transform = ds.scale();
  for (const LevelSet& range : ranges) {
    if (range.levels.empty()) {
      throw DataError("empty environment range '" + range.label + "'");
    }
    auto env_codes = level_codes(env, range.levels);
    for (const LevelSet& group : use_groups) {
      auto trt_codes = level_codes(trt, group.levels);
      double sum = 0.0;
      long count = 0;
      for (std::size_t r = 0; r < ds.n_rows(); ++r) {
        if (std::find(trt_codes.begin(), trt_codes.end(),
                      ds.code(ti, r)) != trt_codes.end() &&
            std::find(env_codes.begin(), env_codes.end(),
                      ds.code(ei, r)) != env_codes.end()) {
          sum += ds.response()[r];
          ++count;
        }
      }
      if (count > 0) {
        mt.rows.push_back(MeanRow{group.label,
                                  sum / static_cast<double>(count),
                                  range.label, ""});
      }
    }
  }
  return mt;
}

YearStatusRecommendation select_year_status(const Dataset& ds,
                                            const ModelSpec& fixed_spec,
                                            const ModelSpec& random_spec,
                                            const Term& treatment,
                                            const Term& margin,
                                            double alpha) {
  YearStatusRecommendation rec;
  rec.fixed_fit = fit_model(ds, fixed_spec);
  rec.random_fit = fit_model(ds, random_spec);
  rec.mean_sed_fixed =
      mean_sed(sed_matrix(rec.fixed_fit, treatment, margin, alpha));
  rec.mean_sed_random =
      mean_sed(sed_matrix(rec.random_fit, treatment, margin, alpha));
  rec.recommend_fixed = rec.mean_sed_fixed <= rec.mean_sed_random + 1e-6;
  return rec;
}

double direct_difference(const Dataset& ds, std::string_view treatment,
                         std::string_view environment,
                         const std::vector<std::string>& set_a,
                         const std::vector<std::string>& set_b,
                         const std::vector<std::string>& environments) {
  const Factor& trt = ds.factor(treatment);
  const Factor& env = ds.factor(environment);
  int ti = ds.factor_index(treatment);
  int ei = ds.factor_index(environment);
  if (environments.empty()) {
    throw DataError("no environments listed for the direct comparison");
  }
  auto env_codes = level_codes(env, environments);
  auto a_codes = level_codes(trt, set_a);
  auto b_codes = level_codes(trt, set_b);
  double mean_a =
      pooled_mean(ds, ti, ei, a_codes, env_codes, "direct comparison");
  double mean_b =
      pooled_mean(ds, ti, ei, b_codes, env_codes, "direct comparison");
  return mean_a - mean_b;
}

namespace {

std::vector<std::string> shared_environments_impl(
    const Dataset& ds, int ti, int ei, const std::vector<int>& trt_codes) {
  const Factor& env = ds.factors()[ei];
  std::vector<std::string> out;
  for (std::size_t ec = 0; ec < env.levels.size(); ++ec) {
    bool all = true;
    for (int tc : trt_codes) {
      bool found = false;
      for (std::size_t r = 0; r < ds.n_rows(); ++r) {
        if (ds.code(ti, r) == tc &&
            ds.code(ei, r) == static_cast<int>(ec)) {
          found = true;
          break;
        }
      }
      if (!found) {
        all = false;
        break;
      }
    }
    if (all) out.push_back(env.levels[ec]);
  }
  return out;
}

}  // namespace

std::vector<std::string> shared_environments(
    const Dataset& ds, std::string_view treatment,
    std::string_view environment,
    const std::vector<std::string>& treatments) {
  const Factor& trt = ds.factor(treatment);
  ds.factor(environment);
  return shared_environments_impl(ds, ds.factor_index(treatment),
                                  ds.factor_index(environment),
                                  level_codes(trt, treatments));
}

double indirect_difference(const Dataset& ds, std::string_view treatment,
                           std::string_view environment,
                           const std::vector<std::string>& set_a,
                           const std::vector<std::string>& set_b,
                           const std::vector<std::string>& reference) {
  const Factor& trt = ds.factor(treatment);
  int ti = ds.factor_index(treatment);
  int ei = ds.factor_index(environment);

  auto ref_codes = level_codes(trt, reference);
  auto a_codes = level_codes(trt, set_a);
  auto b_codes = level_codes(trt, set_b);

  auto joint = [&](const std::vector<int>& side) {
    std::vector<int> all = side;
    all.insert(all.end(), ref_codes.begin(), ref_codes.end());
    return shared_environments_impl(ds, ti, ei, all);
  };
  auto envs_a = joint(a_codes);
  auto envs_b = joint(b_codes);
  if (envs_a.empty()) {
    throw DataError(
        "first treatment set shares no environment with the reference");
  }
  if (envs_b.empty()) {
    throw DataError(
        "second treatment set shares no environment with the reference");
  }
  double da =
      direct_difference(ds, treatment, environment, set_a, reference,
                        envs_a);
  double db =
      direct_difference(ds, treatment, environment, set_b, reference,
                        envs_b);
  return da - db;
}

Dataset transform_response(const Dataset& ds, TransformKind kind) {
  if (kind == TransformKind::none) {
    return ds;
  }
  if (ds.scale() != TransformKind::none) {
    throw DataError("response is already transformed");
  }
  std::vector<double> resp = ds.response();
  for (std::size_t i = 0; i < resp.size(); ++i) {
    if (resp[i] < 0.0) {
      throw DataError("negative response in row " + std::to_string(i + 1) +
                      "; square-root transform is undefined");
    }
    resp[i] = std::sqrt(resp[i]);
  }
  std::vector<std::vector<int>> codes;
  for (std::size_t f = 0; f < ds.n_factors(); ++f) {
    codes.push_back(ds.codes(f));
  }
  Dataset out(ds.factors(), std::move(codes), std::move(resp),
              ds.response_name());
  out.set_scale(TransformKind::sqrt);
  out.set_skipped_rows(ds.skipped_rows());
  return out;
}

MeansTable back_transform(const MeansTable& mt, TransformKind kind) {
  if (kind == TransformKind::none) {
    return mt;
  }
  if (mt.transform != kind) {
    throw DataError(
        "scale mismatch: means table is not on the requested analysis "
        "scale");
  }
  if (mt.back_transformed) {
    throw DataError("means table is already back-transformed");
  }
  MeansTable out = mt;
  for (MeanRow& row : out.rows) {
    row.estimate = row.estimate * row.estimate;
  }
  out.back_transformed = true;
  return out;
}

std::vector<std::string> levels_in_stratum(const Dataset& ds,
                                           const Term& treatment,
                                           std::string_view factor,
                                           std::string_view level) {
  auto fidx = term_factor_indices(ds, treatment);
  const Factor& strat = ds.factor(factor);
  int si = ds.factor_index(factor);
  int target = strat.level_index(level);
  if (target < 0) {
    throw DataError("factor '" + strat.name + "' has no level '" +
                    std::string(level) + "'");
  }
  auto combos = observed_term_combos(ds, fidx);
  std::vector<std::string> out;
  for (const auto& combo : combos) {
    int found = -1;
    bool mixed = false;
    for (std::size_t r = 0; r < ds.n_rows(); ++r) {
      bool match = true;
      for (std::size_t k = 0; k < fidx.size(); ++k) {
        if (ds.code(fidx[k], r) != combo[k]) {
          match = false;
          break;
        }
      }
      if (!match) continue;
      int s = ds.code(si, r);
      if (found < 0) {
        found = s;
      } else if (found != s) {
        mixed = true;
        break;
      }
    }
    if (mixed) {
      throw DataError("treatment level '" +
                      combo_level_label(ds, fidx, combo) +
                      "' spans several levels of '" + strat.name +
                      "'; it cannot be stratified by that factor");
    }
    if (found == target) {
      out.push_back(combo_level_label(ds, fidx, combo));
    }
  }
  return out;
}

}  // namespace trialkit

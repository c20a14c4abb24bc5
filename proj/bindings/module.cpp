#include <pybind11/eigen.h>
#include <pybind11/operators.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "trialkit/dataset.hpp"
#include "trialkit/errors.hpp"
#include "trialkit/formula.hpp"
#include "trialkit/inference.hpp"
#include "trialkit/letters.hpp"
#include "trialkit/simulator.hpp"
#include "trialkit/solver.hpp"

namespace py = pybind11;
using namespace trialkit;

namespace {

Dataset dataset_from_rows(
    const std::vector<std::string>& factor_names,
    const std::vector<std::pair<std::vector<std::string>, double>>& rows,
    const std::string& response_name) {
  DatasetBuilder builder(factor_names, response_name);
  for (const auto& [levels, value] : rows) {
    builder.add_row(levels, value);
  }
  return std::move(builder).build();
}

Dataset dataset_from_csv(const std::string& text,
                         const std::string& response_column) {
  std::istringstream in(text);
  return load_table(in, response_column);
}

}  // namespace

PYBIND11_MODULE(_trialkit, m) {
  m.doc() = "analysis of multi-year trials with treatment turnover";

  py::register_exception<FormulaError>(m, "FormulaError", PyExc_ValueError);
  py::register_exception<DataError>(m, "DataError", PyExc_ValueError);
  py::register_exception<ModelError>(m, "ModelError", PyExc_RuntimeError);

  py::enum_<TransformKind>(m, "TransformKind")
      .value("none", TransformKind::none)
      .value("sqrt", TransformKind::sqrt);

  py::class_<Term>(m, "Term")
      .def(py::init([](const std::vector<std::string>& factors) {
             return Term{factors};
           }),
           py::arg("factors"))
      .def_readonly("factors", &Term::factors)
      .def("label", &Term::label)
      .def("__repr__",
           [](const Term& t) { return "Term(" + t.label() + ")"; })
      .def(py::self == py::self);

  py::class_<ModelSpec>(m, "ModelSpec")
      .def_readonly("fixed_terms", &ModelSpec::fixed_terms)
      .def_readonly("random_terms", &ModelSpec::random_terms)
      .def("__repr__",
           [](const ModelSpec& s) {
             return "ModelSpec(" + render_formula(s) + ")";
           })
      .def(py::self == py::self);

  m.def("parse_formula", &parse_formula, py::arg("text"),
        py::arg("known_factors"));
  m.def("parse_term", &parse_term, py::arg("text"),
        py::arg("known_factors"));
  m.def("render_formula", &render_formula, py::arg("spec"));

  py::class_<Factor>(m, "Factor")
      .def_readonly("name", &Factor::name)
      .def_readonly("levels", &Factor::levels);

  py::class_<Observation>(m, "Observation")
      .def_readonly("levels", &Observation::levels)
      .def_readonly("response", &Observation::response);

  py::class_<Dataset>(m, "Dataset")
      .def_property_readonly("n_rows", &Dataset::n_rows)
      .def_property_readonly("factors", &Dataset::factors)
      .def_property_readonly("response_name", &Dataset::response_name)
      .def_property_readonly("response", &Dataset::response)
      .def_property_readonly("scale", &Dataset::scale)
      .def_property_readonly("skipped_rows", &Dataset::skipped_rows)
      .def("row", &Dataset::row, py::arg("i"))
      .def("derive_factor", &Dataset::derive_factor, py::arg("name"),
           py::arg("source"), py::arg("mapping"))
      .def("relevel", &Dataset::relevel, py::arg("factor"),
           py::arg("ref_level"));

  m.def("dataset_from_rows", &dataset_from_rows, py::arg("factor_names"),
        py::arg("rows"), py::arg("response_name") = "value");
  m.def("load_csv", &dataset_from_csv, py::arg("text"),
        py::arg("response_column") = "value");
  m.def("load_file",
        [](const std::string& path, const std::string& response) {
          return load_table(path, response);
        },
        py::arg("path"), py::arg("response_column") = "value");
  m.def("builtin_toy", &builtin_toy);

  py::class_<IncidenceTable>(m, "IncidenceTable")
      .def_readonly("row_factor", &IncidenceTable::row_factor)
      .def_readonly("col_factor", &IncidenceTable::col_factor)
      .def_readonly("row_levels", &IncidenceTable::row_levels)
      .def_readonly("col_levels", &IncidenceTable::col_levels)
      .def_readonly("counts", &IncidenceTable::counts)
      .def("total", &IncidenceTable::total)
      .def("render", &IncidenceTable::render);

  m.def("incidence", &incidence, py::arg("dataset"), py::arg("row_factor"),
        py::arg("col_factor"));

  py::class_<ConnectivityReport>(m, "ConnectivityReport")
      .def_readonly("components", &ConnectivityReport::components)
      .def("connected", &ConnectivityReport::connected);

  m.def("connectivity", &connectivity, py::arg("dataset"),
        py::arg("treatment"), py::arg("environment"));

  py::class_<VarianceComponents>(m, "VarianceComponents")
      .def_readonly("sigma2_residual", &VarianceComponents::sigma2_residual)
      .def_readonly("sigma2_random", &VarianceComponents::sigma2_random)
      .def_readonly("gamma", &VarianceComponents::gamma)
      .def_readonly("at_boundary", &VarianceComponents::at_boundary);

  py::class_<FittedModel>(m, "FittedModel")
      .def_readonly("spec", &FittedModel::spec)
      .def_readonly("beta", &FittedModel::beta)
      .def_readonly("vcov_beta", &FittedModel::vcov_beta)
      .def_readonly("vcov_beta_adjusted", &FittedModel::vcov_beta_adjusted)
      .def_readonly("vc", &FittedModel::vc)
      .def_readonly("df", &FittedModel::df_policy)
      .def_readonly("reml_loglik", &FittedModel::reml_loglik)
      .def_readonly("converged", &FittedModel::converged)
      .def_readonly("mixed", &FittedModel::mixed)
      .def_property_readonly("effect_labels",
                             [](const FittedModel& fm) {
                               return fm.design.x_labels;
                             })
      .def_property_readonly("rank", [](const FittedModel& fm) {
        return static_cast<long>(fm.design.rank_x);
      });

  m.def("fit_ols", &fit_ols, py::arg("dataset"), py::arg("spec"));
  m.def("fit_reml", &fit_reml, py::arg("dataset"), py::arg("spec"));
  m.def("fit_model", &fit_model, py::arg("dataset"), py::arg("spec"));
  m.def("loglik_reml", &loglik_reml, py::arg("dataset"), py::arg("spec"),
        py::arg("gamma"));

  py::class_<MeanRow>(m, "MeanRow")
      .def_readonly("label", &MeanRow::label)
      .def_readonly("estimate", &MeanRow::estimate)
      .def_readonly("group", &MeanRow::group)
      .def_readonly("letters", &MeanRow::letters);

  py::class_<MeansTable>(m, "MeansTable")
      .def_readonly("rows", &MeansTable::rows)
      .def_property_readonly("scale", &MeansTable::scale)
      .def("estimate",
           [](const MeansTable& mt, const std::string& label) {
             for (const MeanRow& r : mt.rows) {
               if (r.label == label) return r.estimate;
             }
             throw DataError("no row labelled '" + label + "'");
           })
      .def("__len__",
           [](const MeansTable& mt) { return mt.rows.size(); });

  py::class_<PredictedCell>(m, "PredictedCell")
      .def_readonly("treatment", &PredictedCell::treatment)
      .def_readonly("margin", &PredictedCell::margin)
      .def_readonly("prediction", &PredictedCell::prediction)
      .def_readonly("observed", &PredictedCell::observed);

  py::class_<CellTable>(m, "CellTable")
      .def_readonly("treatment_labels", &CellTable::treatment_labels)
      .def_readonly("margin_labels", &CellTable::margin_labels)
      .def_readonly("cells", &CellTable::cells)
      .def_readonly("treatment_means", &CellTable::treatment_means)
      .def("cell", &CellTable::cell, py::arg("treatment"),
           py::arg("margin"));

  py::class_<SedEntry>(m, "SedEntry")
      .def_readonly("i", &SedEntry::i)
      .def_readonly("j", &SedEntry::j)
      .def_readonly("diff", &SedEntry::diff)
      .def_readonly("sed", &SedEntry::sed)
      .def_readonly("df", &SedEntry::df)
      .def_readonly("t", &SedEntry::t)
      .def_readonly("p", &SedEntry::p)
      .def_readonly("significant", &SedEntry::significant);

  py::class_<SedMatrix>(m, "SedMatrix")
      .def_readonly("labels", &SedMatrix::labels)
      .def_readonly("estimates", &SedMatrix::estimates)
      .def_readonly("pairs", &SedMatrix::pairs)
      .def_readonly("alpha", &SedMatrix::alpha)
      .def_readonly("df", &SedMatrix::df)
      .def("pair", &SedMatrix::pair, py::arg("a"), py::arg("b"),
           py::return_value_policy::reference_internal)
      .def("subset", &SedMatrix::subset, py::arg("keep"));

  m.def("predicted_cells", &predicted_cells, py::arg("fit"),
        py::arg("treatment"), py::arg("margin"));
  m.def("adjusted_means", &adjusted_means, py::arg("fit"),
        py::arg("treatment"), py::arg("margin"));
  m.def("sed_matrix", &sed_matrix, py::arg("fit"), py::arg("treatment"),
        py::arg("margin"), py::arg("alpha") = 0.05);
  m.def("mean_sed", &mean_sed, py::arg("sed_matrix"),
        py::arg("subset") = std::vector<std::string>{});

  py::class_<LevelSet>(m, "LevelSet")
      .def(py::init([](const std::string& label,
                       const std::vector<std::string>& levels) {
             return LevelSet{label, levels};
           }),
           py::arg("label"), py::arg("levels"))
      .def_readonly("label", &LevelSet::label)
      .def_readonly("levels", &LevelSet::levels);

  m.def("range_means", &range_means, py::arg("dataset"),
        py::arg("treatment"), py::arg("environment"), py::arg("ranges"),
        py::arg("groups") = std::vector<LevelSet>{});

  py::class_<YearStatusRecommendation>(m, "YearStatusRecommendation")
      .def_readonly("mean_sed_fixed",
                    &YearStatusRecommendation::mean_sed_fixed)
      .def_readonly("mean_sed_random",
                    &YearStatusRecommendation::mean_sed_random)
      .def_readonly("recommend_fixed",
                    &YearStatusRecommendation::recommend_fixed);

  m.def("select_year_status", &select_year_status, py::arg("dataset"),
        py::arg("fixed_spec"), py::arg("random_spec"), py::arg("treatment"),
        py::arg("margin"), py::arg("alpha") = 0.05);

  m.def("direct_difference", &direct_difference, py::arg("dataset"),
        py::arg("treatment"), py::arg("environment"), py::arg("set_a"),
        py::arg("set_b"), py::arg("environments"));
  m.def("indirect_difference", &indirect_difference, py::arg("dataset"),
        py::arg("treatment"), py::arg("environment"), py::arg("set_a"),
        py::arg("set_b"), py::arg("reference"));
  m.def("shared_environments", &shared_environments, py::arg("dataset"),
        py::arg("treatment"), py::arg("environment"), py::arg("treatments"));

  m.def("transform_response", &transform_response, py::arg("dataset"),
        py::arg("kind"));
  m.def("back_transform", &back_transform, py::arg("means"),
        py::arg("kind"));
  m.def("levels_in_stratum", &levels_in_stratum, py::arg("dataset"),
        py::arg("treatment"), py::arg("factor"), py::arg("level"));

  py::class_<SignificanceMatrix>(m, "SignificanceMatrix")
      .def(py::init([](const std::vector<std::string>& levels,
                       const std::vector<double>& estimates,
                       const std::vector<std::vector<bool>>& significant) {
             return SignificanceMatrix{levels, estimates, significant};
           }),
           py::arg("levels"), py::arg("estimates"), py::arg("significant"))
      .def_static("from_sed", &SignificanceMatrix::from_sed)
      .def_readonly("levels", &SignificanceMatrix::levels)
      .def_readonly("estimates", &SignificanceMatrix::estimates)
      .def_readonly("significant", &SignificanceMatrix::significant);

  py::class_<LetterDisplay>(m, "LetterDisplay")
      .def_readonly("levels", &LetterDisplay::levels)
      .def_readonly("letters", &LetterDisplay::letters)
      .def_readonly("groups", &LetterDisplay::groups)
      .def("letters_for", &LetterDisplay::letters_for, py::arg("level"));

  py::class_<DisplayViolation>(m, "DisplayViolation")
      .def_readonly("kind", &DisplayViolation::kind)
      .def_readonly("i", &DisplayViolation::i)
      .def_readonly("j", &DisplayViolation::j)
      .def_readonly("detail", &DisplayViolation::detail);

  py::class_<VerifyReport>(m, "VerifyReport")
      .def_readonly("violations", &VerifyReport::violations)
      .def("ok", &VerifyReport::ok);

  m.def("letter_display", &letter_display, py::arg("significance"));
  m.def("verify_display", &verify_display, py::arg("significance"),
        py::arg("display"));

  py::class_<SimConfig>(m, "SimConfig")
      .def(py::init<>())
      .def_readwrite("n_systems_old", &SimConfig::n_systems_old)
      .def_readwrite("n_systems_new", &SimConfig::n_systems_new)
      .def_readwrite("n_bridge", &SimConfig::n_bridge)
      .def_readwrite("n_years_pre", &SimConfig::n_years_pre)
      .def_readwrite("n_years_post", &SimConfig::n_years_post)
      .def_readwrite("grand_mean", &SimConfig::grand_mean)
      .def_readwrite("true_system_effects", &SimConfig::true_system_effects)
      .def_readwrite("true_year_effects", &SimConfig::true_year_effects)
      .def_readwrite("sigma_e", &SimConfig::sigma_e)
      .def_readwrite("sigma_year", &SimConfig::sigma_year)
      .def_readwrite("replicates", &SimConfig::replicates)
      .def_readwrite("seed", &SimConfig::seed);

  py::class_<BiasPair>(m, "BiasPair")
      .def_readonly("old_system", &BiasPair::old_system)
      .def_readonly("new_system", &BiasPair::new_system)
      .def_readonly("mean_estimate", &BiasPair::mean_estimate)
      .def_readonly("true_difference", &BiasPair::true_difference)
      .def_readonly("bias", &BiasPair::bias)
      .def_readonly("mc_se", &BiasPair::mc_se);

  py::class_<BiasModelReport>(m, "BiasModelReport")
      .def_readonly("model", &BiasModelReport::model)
      .def_readonly("pairs", &BiasModelReport::pairs)
      .def_readonly("fit_failures", &BiasModelReport::fit_failures);

  py::class_<BiasReport>(m, "BiasReport")
      .def_readonly("n_reps", &BiasReport::n_reps)
      .def_readonly("models", &BiasReport::models);

  m.def("simulate_trial", &simulate_trial, py::arg("config"),
        py::arg("replicate_index") = 0);
  m.def("bias_study", &bias_study, py::arg("config"), py::arg("n_reps"),
        py::arg("threads") = 1,
        py::call_guard<py::gil_scoped_release>());
}

#include "trialkit/cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <fstream>
#include <iomanip>
#include <json.hpp>
#include <ostream>
#include <sstream>

#include "trialkit/dataset.hpp"
#include "trialkit/errors.hpp"
#include "trialkit/formula.hpp"
#include "trialkit/inference.hpp"
#include "trialkit/letters.hpp"
#include "trialkit/simulator.hpp"
#include "trialkit/solver.hpp"

namespace trialkit {

namespace {

using nlohmann::json;

struct CommonOpts {
  std::string data;
  std::string response = "value";
  std::string model;
  std::string treatment;
  std::string margin;
  std::string transform = "none";
  double alpha = 0.05;
  std::vector<std::string> relevels;
  std::vector<std::string> derives;
  std::string within;
  std::string format = "text";
  int precision = 4;
  std::string dump_design;
};

std::string fmt(double v, int precision) {
  std::ostringstream ss;
  ss << std::fixed << std::setprecision(precision) << v;
  return ss.str();
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::stringstream ss(s);
  while (std::getline(ss, item, sep)) out.push_back(item);
  return out;
}

std::pair<std::string, std::string> split_kv(const std::string& s,
                                             const std::string& what) {
  auto eq = s.find('=');
  if (eq == std::string::npos || eq == 0 || eq + 1 == s.size()) {
    throw DataError("malformed " + what + " '" + s +
                    "' (expected FACTOR=LEVEL)");
  }
  return {s.substr(0, eq), s.substr(eq + 1)};
}

void add_data_flags(CLI::App* sub, CommonOpts& o) {
  sub->add_option("--data", o.data,
                  "input CSV file, or builtin:toy")->required();
  sub->add_option("--response", o.response,
                  "name of the response column (default: value)");
  sub->add_option("--transform", o.transform,
                  "response transform: none|sqrt")
      ->check(CLI::IsMember({"none", "sqrt"}));
  sub->add_option("--relevel", o.relevels,
                  "FACTOR=LEVEL, make LEVEL the reference (repeatable)");
  sub->add_option("--derive", o.derives,
                  "NEW=SRC:a=x,b=y derive factor NEW from SRC levels "
                  "(repeatable)");
}

void add_output_flags(CLI::App* sub, CommonOpts& o) {
  sub->add_option("--format", o.format, "output format")
      ->check(CLI::IsMember({"text", "csv", "json"}));
  sub->add_option("--precision", o.precision,
                  "decimal places for numeric text output")
      ->check(CLI::Range(0, 15));
}

void add_model_flags(CLI::App* sub, CommonOpts& o) {
  sub->add_option("--model", o.model,
                  "model formula, e.g. \"S + Y : S.Y\"")->required();
  sub->add_option("--dump-design", o.dump_design,
                  "write design matrices as CSV to this file");
}

Dataset prepare_dataset(const CommonOpts& o) {
  Dataset ds = load_table(o.data, o.response);
  for (const std::string& d : o.derives) {
    auto colon = d.find(':');
    auto eq = d.find('=');
    if (eq == std::string::npos || colon == std::string::npos ||
        colon < eq) {
      throw DataError("malformed --derive '" + d +
                      "' (expected NEW=SRC:a=x,b=y)");
    }
    std::string name = d.substr(0, eq);
    std::string source = d.substr(eq + 1, colon - eq - 1);
    std::map<std::string, std::string> mapping;
    for (const std::string& pair : split(d.substr(colon + 1), ',')) {
      auto [from, to] = split_kv(pair, "--derive entry");
      mapping[from] = to;
    }
    ds = ds.derive_factor(name, source, mapping);
  }
  for (const std::string& r : o.relevels) {
    auto [factor, level] = split_kv(r, "--relevel");
    ds = ds.relevel(factor, level);
  }
  if (o.transform == "sqrt") {
    ds = transform_response(ds, TransformKind::sqrt);
  }
  return ds;
}

std::vector<std::string> factor_names(const Dataset& ds) {
  std::vector<std::string> names;
  for (const Factor& f : ds.factors()) names.push_back(f.name);
  return names;
}

FittedModel fit_from_opts(const Dataset& ds, const CommonOpts& o) {
  ModelSpec spec = parse_formula(o.model, factor_names(ds));
  FittedModel fm = fit_model(ds, spec);
  if (!o.dump_design.empty()) {
    std::ofstream f(o.dump_design);
    if (!f) {
      throw DataError("cannot write '" + o.dump_design + "'");
    }
    dump_design(fm.design, f);
  }
  return fm;
}

Term term_from(const std::string& text, const Dataset& ds,
               const std::string& flag) {
  if (text.empty()) {
    throw DataError("missing required " + flag + " term");
  }
  return parse_term(text, factor_names(ds));
}

json vc_json(const FittedModel& fm) {
  json j{{"sigma2_residual", fm.vc.sigma2_residual},
         {"sigma2_random", fm.vc.sigma2_random},
         {"gamma", fm.vc.gamma},
         {"at_boundary", fm.vc.at_boundary}};
  return j;
}

json means_json(const MeansTable& mt) {
  json rows = json::array();
  for (const MeanRow& r : mt.rows) {
    json row{{"level", r.label}, {"estimate", r.estimate}};
    if (!r.group.empty()) row["group"] = r.group;
    if (!r.letters.empty()) row["letters"] = r.letters;
    rows.push_back(row);
  }
  return json{{"scale", mt.scale()},
              {"margin", mt.margin_over.label()},
              {"rows", rows}};
}

void print_means_text(const MeansTable& mt, const std::string& label_header,
                      int precision, std::ostream& out) {
  bool groups = std::any_of(mt.rows.begin(), mt.rows.end(),
                            [](const MeanRow& r) { return !r.group.empty(); });
  bool letters = std::any_of(
      mt.rows.begin(), mt.rows.end(),
      [](const MeanRow& r) { return !r.letters.empty(); });
  std::size_t w = label_header.size();
  for (const MeanRow& r : mt.rows) w = std::max(w, r.label.size());
  out << label_header << std::string(w - label_header.size(), ' ')
      << "  Estimate";
  if (letters) out << "  Letters";
  if (groups) out << "  Group";
  out << '\n';
  for (const MeanRow& r : mt.rows) {
    out << r.label << std::string(w - r.label.size(), ' ') << "  "
        << fmt(r.estimate, precision);
    if (letters) out << "  " << r.letters;
    if (groups) out << "  " << r.group;
    out << '\n';
  }
}

void print_means_csv(const MeansTable& mt, std::ostream& out) {
  out << "level,estimate,letters,group,scale\n";
  for (const MeanRow& r : mt.rows) {
    out << r.label << ',' << r.estimate << ',' << r.letters << ','
        << r.group << ',' << mt.scale() << '\n';
  }
}

int cmd_fit(const CommonOpts& o, std::ostream& out) {
  Dataset ds = prepare_dataset(o);
  FittedModel fm = fit_from_opts(ds, o);
  if (o.format == "json") {
    json effects = json::array();
    for (Eigen::Index i = 0; i < fm.beta.size(); ++i) {
      effects.push_back({{"effect", fm.design.x_labels[i]},
                         {"estimate", fm.beta(i)}});
    }
    json vcov = json::array();
    for (Eigen::Index i = 0; i < fm.vcov_beta.rows(); ++i) {
      json row = json::array();
      for (Eigen::Index j = 0; j < fm.vcov_beta.cols(); ++j) {
        row.push_back(fm.vcov_beta(i, j));
      }
      vcov.push_back(row);
    }
    json j{{"command", "fit"},
           {"model", render_formula(fm.spec)},
           {"effects", effects},
           {"variance_components", vc_json(fm)},
           {"df", fm.df_policy},
           {"converged", fm.converged},
           {"rank", static_cast<long>(fm.design.rank_x)},
           {"vcov", vcov}};
    if (fm.mixed) j["reml_loglik"] = fm.reml_loglik;
    out << j.dump(2) << '\n';
    return 0;
  }
  if (o.format == "csv") {
    out << "effect,estimate\n";
    for (Eigen::Index i = 0; i < fm.beta.size(); ++i) {
      out << fm.design.x_labels[i] << ',' << fm.beta(i) << '\n';
    }
    return 0;
  }
  out << "Model: " << render_formula(fm.spec) << '\n';
  std::size_t w = 6;
  for (const auto& l : fm.design.x_labels) w = std::max(w, l.size());
  out << "Effect" << std::string(w - 6, ' ') << "  Estimate\n";
  for (Eigen::Index i = 0; i < fm.beta.size(); ++i) {
    out << fm.design.x_labels[i]
        << std::string(w - fm.design.x_labels[i].size(), ' ') << "  "
        << fmt(fm.beta(i), o.precision) << '\n';
  }
  out << "Residual variance: " << fmt(fm.vc.sigma2_residual, o.precision)
      << "  (df " << fm.df_policy << ")\n";
  if (fm.mixed) {
    out << "Random-term variance: " << fmt(fm.vc.sigma2_random, o.precision)
        << " (gamma " << fmt(fm.vc.gamma, o.precision)
        << (fm.vc.at_boundary ? ", boundary" : "") << ")\n"
        << "REML log-likelihood: " << fmt(fm.reml_loglik, o.precision)
        << '\n';
  }
  return 0;
}

// Ranges like "2020-2023" (span in declared level order) or "2020,2024".
LevelSet parse_range(const std::string& text, const Factor& env) {
  LevelSet ls;
  ls.label = text;
  auto dash = text.find('-');
  if (dash != std::string::npos && env.level_index(text) < 0) {
    std::string from = text.substr(0, dash);
    std::string to = text.substr(dash + 1);
    int a = env.level_index(from);
    int b = env.level_index(to);
    if (a < 0 || b < 0 || b < a) {
      throw DataError("bad range '" + text + "' for factor " + env.name);
    }
    for (int i = a; i <= b; ++i) ls.levels.push_back(env.levels[i]);
    return ls;
  }
  for (const std::string& l : split(text, ',')) ls.levels.push_back(l);
  return ls;
}

int cmd_means(const CommonOpts& o, const std::string& ranges_text,
              const std::vector<std::string>& pools, bool cells,
              bool back, std::ostream& out) {
  Dataset ds = prepare_dataset(o);
  if (!ranges_text.empty()) {
    // Arithmetic means per year range (no model involved).
    if (o.margin.empty()) {
      throw DataError("--ranges needs --margin (the environment factor)");
    }
    const Factor& env = ds.factor(o.margin);
    std::vector<LevelSet> ranges;
    for (const std::string& r : split(ranges_text, ';')) {
      ranges.push_back(parse_range(r, env));
    }
    Term trt = term_from(o.treatment, ds, "--treatment");
    if (trt.factors.size() != 1) {
      throw DataError("--ranges expects a single-factor treatment");
    }
    std::vector<LevelSet> groups;
    for (const std::string& l : ds.factor(trt.factors[0]).levels) {
      groups.push_back(LevelSet{l, {l}});
    }
    for (const std::string& pool : pools) {
      LevelSet g;
      g.levels = split(pool, ',');
      for (std::size_t i = 0; i < g.levels.size(); ++i) {
        if (i) g.label += " & ";
        g.label += g.levels[i];
      }
      groups.push_back(g);
    }
    MeansTable mt =
        range_means(ds, trt.factors[0], o.margin, ranges, groups);
    if (back) mt = back_transform(mt, ds.scale());
    if (o.format == "json") {
      json j = means_json(mt);
      j["command"] = "means";
      j["kind"] = "arithmetic";
      out << j.dump(2) << '\n';
    } else if (o.format == "csv") {
      print_means_csv(mt, out);
    } else {
      print_means_text(mt, trt.label(), o.precision, out);
    }
    return 0;
  }

  FittedModel fm = fit_from_opts(ds, o);
  Term trt = term_from(o.treatment, ds, "--treatment");
  Term margin =
      o.margin.empty() ? Term{} : parse_term(o.margin, factor_names(ds));
  MeansTable mt = adjusted_means(fm, trt, margin);
  CellTable ct;
  if (cells) ct = predicted_cells(fm, trt, margin);
  if (back) mt = back_transform(mt, ds.scale());

  if (o.format == "json") {
    json j = means_json(mt);
    j["command"] = "means";
    j["kind"] = "adjusted";
    j["model"] = render_formula(fm.spec);
    if (cells) {
      json jc = json::array();
      for (const PredictedCell& c : ct.cells) {
        jc.push_back({{"treatment", c.treatment},
                      {"margin", c.margin},
                      {"prediction", c.prediction},
                      {"observed", c.observed}});
      }
      j["cells"] = jc;
    }
    out << j.dump(2) << '\n';
    return 0;
  }
  if (o.format == "csv") {
    print_means_csv(mt, out);
    return 0;
  }
  if (cells) {
    std::size_t w = trt.label().size();
    for (const auto& l : ct.treatment_labels) w = std::max(w, l.size());
    out << trt.label() << std::string(w - trt.label().size(), ' ');
    for (const auto& m : ct.margin_labels) out << "  " << m;
    out << "  | Mean\n";
    for (std::size_t t = 0; t < ct.treatment_labels.size(); ++t) {
      out << ct.treatment_labels[t]
          << std::string(w - ct.treatment_labels[t].size(), ' ');
      for (const auto& m : ct.margin_labels) {
        auto v = ct.cell(ct.treatment_labels[t], m);
        out << "  " << (v ? fmt(*v, o.precision) : std::string("-"));
      }
      out << "  | " << fmt(ct.treatment_means[t], o.precision) << '\n';
    }
    out << '\n';
  }
  print_means_text(mt, trt.label(), o.precision, out);
  return 0;
}

json sed_json(const SedMatrix& sm) {
  json pairs = json::array();
  for (const SedEntry& e : sm.pairs) {
    pairs.push_back({{"a", sm.labels[e.i]},
                     {"b", sm.labels[e.j]},
                     {"difference", e.diff},
                     {"sed", e.sed},
                     {"df", e.df},
                     {"t", e.t},
                     {"p", e.p},
                     {"significant", e.significant}});
  }
  return json{{"levels", sm.labels},
              {"alpha", sm.alpha},
              {"df", sm.df},
              {"pairs", pairs},
              {"mean_sed", mean_sed(sm)}};
}

int cmd_sed(const CommonOpts& o, std::ostream& out) {
  Dataset ds = prepare_dataset(o);
  FittedModel fm = fit_from_opts(ds, o);
  Term trt = term_from(o.treatment, ds, "--treatment");
  Term margin =
      o.margin.empty() ? Term{} : parse_term(o.margin, factor_names(ds));
  SedMatrix sm = sed_matrix(fm, trt, margin, o.alpha);
  if (o.format == "json") {
    json j = sed_json(sm);
    j["command"] = "sed";
    j["model"] = render_formula(fm.spec);
    out << j.dump(2) << '\n';
    return 0;
  }
  if (o.format == "csv") {
    out << "a,b,difference,sed,df,t,p,significant\n";
    for (const SedEntry& e : sm.pairs) {
      out << sm.labels[e.i] << ',' << sm.labels[e.j] << ',' << e.diff << ','
          << e.sed << ',' << e.df << ',' << e.t << ',' << e.p << ','
          << (e.significant ? 1 : 0) << '\n';
    }
    return 0;
  }
  std::size_t w = 0;
  for (const auto& l : sm.labels) w = std::max(w, l.size());
  out << "Comparison" << std::string(2 * w + 3 > 10 ? 2 * w + 3 - 10 : 0,
                                     ' ')
      << "  Diff      SED       t         p\n";
  for (const SedEntry& e : sm.pairs) {
    std::string pair = sm.labels[e.i] + " - " + sm.labels[e.j];
    out << pair << std::string(std::max<std::size_t>(2 * w + 3, 10) -
                                   pair.size(),
                               ' ')
        << "  " << fmt(e.diff, o.precision) << "  " << fmt(e.sed, o.precision)
        << "  " << fmt(e.t, o.precision) << "  " << fmt(e.p, o.precision)
        << (e.significant ? " *" : "") << '\n';
  }
  out << "Mean SED: " << fmt(mean_sed(sm), o.precision) << '\n';
  return 0;
}

int cmd_letters(const CommonOpts& o, bool back, std::ostream& out) {
  Dataset ds = prepare_dataset(o);
  FittedModel fm = fit_from_opts(ds, o);
  Term trt = term_from(o.treatment, ds, "--treatment");
  Term margin =
      o.margin.empty() ? Term{} : parse_term(o.margin, factor_names(ds));
  SedMatrix sm = sed_matrix(fm, trt, margin, o.alpha);
  MeansTable mt = adjusted_means(fm, trt, margin);

  if (!o.within.empty()) {
    auto [factor, level] = split_kv(o.within, "--within");
    auto keep = levels_in_stratum(ds, trt, factor, level);
    sm = sm.subset(keep);
    std::vector<MeanRow> rows;
    for (const MeanRow& r : mt.rows) {
      if (std::find(keep.begin(), keep.end(), r.label) != keep.end()) {
        rows.push_back(r);
      }
    }
    mt.rows = std::move(rows);
  }
  LetterDisplay ld = letter_display(SignificanceMatrix::from_sed(sm));
  apply_letters(mt, ld);
  if (back) mt = back_transform(mt, ds.scale());

  if (o.format == "json") {
    json j = means_json(mt);
    j["command"] = "letters";
    j["model"] = render_formula(fm.spec);
    j["alpha"] = o.alpha;
    j["df"] = sm.df;
    j["mean_sed"] = mean_sed(sm);
    out << j.dump(2) << '\n';
    return 0;
  }
  if (o.format == "csv") {
    print_means_csv(mt, out);
    return 0;
  }
  print_means_text(mt, trt.label(), o.precision, out);
  out << "Mean SED: " << fmt(mean_sed(sm), o.precision) << '\n';
  std::ostringstream pct;
  pct << o.alpha * 100.0;
  out << "Means followed by a common letter are not significantly "
         "different according to a t-test at the "
      << pct.str() << "% level of significance.\n";
  return 0;
}

int cmd_indirect(const CommonOpts& o, const std::string& a,
                 const std::string& b, const std::string& ref,
                 const std::string& env, std::ostream& out) {
  Dataset ds = prepare_dataset(o);
  std::string treatment = o.treatment;
  if (treatment.empty()) {
    // With exactly two factors the treatment is the non-environment one.
    if (ds.n_factors() == 2) {
      for (const Factor& f : ds.factors()) {
        if (f.name != env) treatment = f.name;
      }
    } else {
      throw DataError("--treatment is required with more than two factors");
    }
  }
  auto set_a = split(a, ',');
  auto set_b = split(b, ',');
  auto set_ref = split(ref, ',');

  auto with_ref = [&](const std::vector<std::string>& side) {
    std::vector<std::string> all = side;
    all.insert(all.end(), set_ref.begin(), set_ref.end());
    return shared_environments(ds, treatment, env, all);
  };
  auto envs_a = with_ref(set_a);
  auto envs_b = with_ref(set_b);
  double value =
      indirect_difference(ds, treatment, env, set_a, set_b, set_ref);
  double da = direct_difference(ds, treatment, env, set_a, set_ref, envs_a);
  double db = direct_difference(ds, treatment, env, set_b, set_ref, envs_b);

  auto joinstr = [](const std::vector<std::string>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (i) s += ",";
      s += v[i];
    }
    return s;
  };
  if (o.format == "json") {
    json j{{"command", "indirect"},
           {"a", set_a},
           {"b", set_b},
           {"reference", set_ref},
           {"direct_a", da},
           {"direct_b", db},
           {"environments_a", envs_a},
           {"environments_b", envs_b},
           {"indirect_difference", value}};
    out << j.dump(2) << '\n';
    return 0;
  }
  if (o.format == "csv") {
    out << "quantity,value\n"
        << "direct_a," << da << '\n'
        << "direct_b," << db << '\n'
        << "indirect," << value << '\n';
    return 0;
  }
  out << "Direct " << joinstr(set_a) << " vs " << joinstr(set_ref) << " in {"
      << joinstr(envs_a) << "}: " << fmt(da, o.precision) << '\n';
  out << "Direct " << joinstr(set_b) << " vs " << joinstr(set_ref) << " in {"
      << joinstr(envs_b) << "}: " << fmt(db, o.precision) << '\n';
  out << "Indirect " << joinstr(set_a) << " vs " << joinstr(set_b) << ": "
      << fmt(value, o.precision) << '\n';
  return 0;
}

int cmd_incidence(const CommonOpts& o, std::string row, std::string col,
                  std::ostream& out) {
  Dataset ds = prepare_dataset(o);
  if (row.empty() || col.empty()) {
    if (ds.n_factors() < 2) {
      throw DataError("incidence needs two factors");
    }
    if (row.empty()) row = ds.factors()[0].name;
    if (col.empty()) col = ds.factors()[1].name;
  }
  IncidenceTable t = incidence(ds, row, col);
  if (o.format == "json") {
    json counts = json::array();
    for (const auto& r : t.counts) counts.push_back(r);
    json j{{"command", "incidence"}, {"row_factor", t.row_factor},
           {"col_factor", t.col_factor}, {"row_levels", t.row_levels},
           {"col_levels", t.col_levels}, {"counts", counts},
           {"total", t.total()}};
    out << j.dump(2) << '\n';
    return 0;
  }
  if (o.format == "csv") {
    out << t.row_factor;
    for (const auto& c : t.col_levels) out << ',' << c;
    out << '\n';
    for (std::size_t r = 0; r < t.row_levels.size(); ++r) {
      out << t.row_levels[r];
      for (std::size_t c = 0; c < t.col_levels.size(); ++c) {
        out << ',' << t.counts[r][c];
      }
      out << '\n';
    }
    return 0;
  }
  out << t.render();
  return 0;
}

int cmd_select_year(const CommonOpts& o, const std::string& fixed_model,
                    const std::string& random_model, std::ostream& out) {
  Dataset ds = prepare_dataset(o);
  auto names = factor_names(ds);
  ModelSpec fixed_spec = parse_formula(fixed_model, names);
  ModelSpec random_spec = parse_formula(random_model, names);
  Term trt = term_from(o.treatment, ds, "--treatment");
  Term margin =
      o.margin.empty() ? Term{} : parse_term(o.margin, factor_names(ds));
  YearStatusRecommendation rec = select_year_status(
      ds, fixed_spec, random_spec, trt, margin, o.alpha);
  if (o.format == "json") {
    json j{{"command", "select-year"},
           {"fixed_model", render_formula(fixed_spec)},
           {"random_model", render_formula(random_spec)},
           {"mean_sed_fixed", rec.mean_sed_fixed},
           {"mean_sed_random", rec.mean_sed_random},
           {"recommendation", rec.recommend_fixed ? "fixed" : "random"}};
    out << j.dump(2) << '\n';
    return 0;
  }
  if (o.format == "csv") {
    out << "model,mean_sed,recommended\n"
        << "fixed," << rec.mean_sed_fixed << ','
        << (rec.recommend_fixed ? 1 : 0) << '\n'
        << "random," << rec.mean_sed_random << ','
        << (rec.recommend_fixed ? 0 : 1) << '\n';
    return 0;
  }
  out << "Mean SED, fixed year effect (" << render_formula(fixed_spec)
      << "): " << fmt(rec.mean_sed_fixed, o.precision) << '\n';
  out << "Mean SED, random year effect (" << render_formula(random_spec)
      << "): " << fmt(rec.mean_sed_random, o.precision) << '\n';
  out << "Recommendation: "
      << (rec.recommend_fixed ? "fixed" : "random")
      << " year main effect\n";
  return 0;
}

struct SimulateOpts {
  SimConfig cfg;
  std::string system_effects, year_effects;
  std::uint64_t rep_index = 0;
  std::string out_file;
  std::string study;
  int reps = 1000;
  int threads = 1;
};

int cmd_simulate(const CommonOpts& o, SimulateOpts& s, std::ostream& out) {
  if (!s.system_effects.empty()) {
    for (const std::string& v : split(s.system_effects, ',')) {
      s.cfg.true_system_effects.push_back(std::stod(v));
    }
  }
  if (!s.year_effects.empty()) {
    for (const std::string& v : split(s.year_effects, ',')) {
      s.cfg.true_year_effects.push_back(std::stod(v));
    }
  }
  s.cfg.validate();

  if (s.study == "bias") {
    BiasReport report = bias_study(s.cfg, s.reps, s.threads);
    if (o.format == "json") {
      json models = json::array();
      for (const BiasModelReport& m : report.models) {
        json pairs = json::array();
        for (const BiasPair& p : m.pairs) {
          pairs.push_back({{"old", p.old_system},
                           {"new", p.new_system},
                           {"mean_estimate", p.mean_estimate},
                           {"true_difference", p.true_difference},
                           {"bias", p.bias},
                           {"mc_se", p.mc_se}});
        }
        models.push_back({{"model", m.model},
                          {"fit_failures", m.fit_failures},
                          {"pairs", pairs}});
      }
      out << json{{"command", "simulate"},
                  {"study", "bias"},
                  {"n_reps", report.n_reps},
                  {"models", models}}
                 .dump(2)
          << '\n';
      return 0;
    }
    if (o.format == "csv") {
      out << "model,old,new,mean_estimate,true_difference,bias,mc_se\n";
      for (const BiasModelReport& m : report.models) {
        for (const BiasPair& p : m.pairs) {
          out << m.model << ',' << p.old_system << ',' << p.new_system
              << ',' << p.mean_estimate << ',' << p.true_difference << ','
              << p.bias << ',' << p.mc_se << '\n';
        }
      }
      return 0;
    }
    out << "Bias study, " << report.n_reps << " replicates\n";
    for (const BiasModelReport& m : report.models) {
      out << "Model " << m.model;
      if (m.fit_failures > 0) out << "  (failures: " << m.fit_failures << ")";
      out << '\n';
      for (const BiasPair& p : m.pairs) {
        out << "  " << p.old_system << " - " << p.new_system << ": mean "
            << fmt(p.mean_estimate, o.precision) << ", true "
            << fmt(p.true_difference, o.precision) << ", bias "
            << fmt(p.bias, o.precision) << " (MC SE "
            << fmt(p.mc_se, o.precision) << ")\n";
      }
    }
    return 0;
  }

  Dataset ds = simulate_trial(s.cfg, s.rep_index);
  std::ostream* target = &out;
  std::ofstream file;
  if (!s.out_file.empty()) {
    file.open(s.out_file);
    if (!file) {
      throw DataError("cannot write '" + s.out_file + "'");
    }
    target = &file;
  }
  *target << "S,Y," << ds.response_name() << '\n';
  for (std::size_t r = 0; r < ds.n_rows(); ++r) {
    Observation obs = ds.row(r);
    *target << obs.levels.at("S") << ',' << obs.levels.at("Y") << ','
            << obs.response << '\n';
  }
  if (!s.out_file.empty()) {
    out << "wrote " << ds.n_rows() << " rows to " << s.out_file << '\n';
  }
  return 0;
}

}  // namespace

int run_cli(std::vector<std::string> args, std::ostream& out,
            std::ostream& err) {
  CLI::App app{"analysis of multi-year trials with treatment turnover"};
  app.require_subcommand(1);

  CommonOpts o;
  SimulateOpts s;
  std::string ranges_text, within, row, col, a, b, ref, env;
  std::string fixed_model, random_model;
  std::vector<std::string> pools;
  bool cells = false, back = false;

  CLI::App* fit = app.add_subcommand("fit", "fit a model, print effects");
  add_data_flags(fit, o);
  add_model_flags(fit, o);
  add_output_flags(fit, o);

  CLI::App* means =
      app.add_subcommand("means", "adjusted or arithmetic means");
  add_data_flags(means, o);
  add_output_flags(means, o);
  means->add_option("--model", o.model, "model formula");
  means->add_option("--dump-design", o.dump_design,
                    "write design matrices as CSV to this file");
  means->add_option("--treatment", o.treatment, "treatment term")
      ->required();
  means->add_option("--margin", o.margin, "margin term averaged over");
  means->add_option("--ranges", ranges_text,
                    "semicolon-separated year ranges for arithmetic means "
                    "(e.g. \"2020-2023;2024\")");
  means->add_option("--pool", pools,
                    "pooled treatment group for --ranges, e.g. 2,3 "
                    "(repeatable)");
  means->add_flag("--cells", cells, "print the predicted cell table");
  means->add_flag("--back-transform", back,
                  "report means on the original scale");

  CLI::App* sed = app.add_subcommand("sed", "standard errors of differences");
  add_data_flags(sed, o);
  add_model_flags(sed, o);
  add_output_flags(sed, o);
  sed->add_option("--treatment", o.treatment, "treatment term")->required();
  sed->add_option("--margin", o.margin, "margin term averaged over");
  sed->add_option("--alpha", o.alpha, "significance level");

  CLI::App* letters =
      app.add_subcommand("letters", "means with a compact letter display");
  add_data_flags(letters, o);
  add_model_flags(letters, o);
  add_output_flags(letters, o);
  letters->add_option("--treatment", o.treatment, "treatment term")
      ->required();
  letters->add_option("--margin", o.margin, "margin term averaged over");
  letters->add_option("--alpha", o.alpha, "significance level");
  letters->add_option("--within", o.within,
                      "FACTOR=LEVEL, letter only treatments in this stratum");
  letters->add_flag("--back-transform", back,
                    "report means on the original scale");

  CLI::App* indirect = app.add_subcommand(
      "indirect", "indirect comparison through a reference set");
  add_data_flags(indirect, o);
  add_output_flags(indirect, o);
  indirect->add_option("--treatment", o.treatment, "treatment factor");
  indirect->add_option("--a", a, "first treatment set, e.g. 1")->required();
  indirect->add_option("--b", b, "second treatment set, e.g. 6")->required();
  indirect->add_option("--ref", ref, "reference set, e.g. 2,3")->required();
  indirect->add_option("--env", env, "environment factor")->required();

  CLI::App* inc = app.add_subcommand("incidence", "factor incidence table");
  add_data_flags(inc, o);
  add_output_flags(inc, o);
  inc->add_option("--row", row, "row factor (default: first)");
  inc->add_option("--col", col, "column factor (default: second)");

  CLI::App* sel = app.add_subcommand(
      "select-year", "compare fixed vs random year effect by mean SED");
  add_data_flags(sel, o);
  add_output_flags(sel, o);
  sel->add_option("--fixed-model", fixed_model,
                  "formula with fixed year effect")->required();
  sel->add_option("--random-model", random_model,
                  "formula with random year effect")->required();
  sel->add_option("--treatment", o.treatment, "treatment term")->required();
  sel->add_option("--margin", o.margin, "margin term averaged over");
  sel->add_option("--alpha", o.alpha, "significance level");

  CLI::App* sim = app.add_subcommand(
      "simulate", "generate a synthetic turnover trial or run a study");
  add_output_flags(sim, o);
  sim->add_option("--systems-old", s.cfg.n_systems_old, "old system count");
  sim->add_option("--systems-new", s.cfg.n_systems_new, "new system count");
  sim->add_option("--bridge", s.cfg.n_bridge,
                  "bridge systems (old systems kept after the change)");
  sim->add_option("--years-pre", s.cfg.n_years_pre, "pre-change years");
  sim->add_option("--years-post", s.cfg.n_years_post, "post-change years");
  sim->add_option("--grand-mean", s.cfg.grand_mean, "grand mean");
  sim->add_option("--system-effects", s.system_effects,
                  "comma-separated true system effects");
  sim->add_option("--year-effects", s.year_effects,
                  "comma-separated true year effects");
  sim->add_option("--sigma-e", s.cfg.sigma_e, "residual sd");
  sim->add_option("--sigma-year", s.cfg.sigma_year,
                  "random year effect sd (drawn per replicate)");
  sim->add_option("--replicates", s.cfg.replicates, "replicates per cell");
  sim->add_option("--seed", s.cfg.seed, "RNG seed");
  sim->add_option("--rep-index", s.rep_index, "replicate stream index");
  sim->add_option("--out", s.out_file, "write the dataset CSV here");
  sim->add_option("--study", s.study, "run a study: bias")
      ->check(CLI::IsMember({"bias"}));
  sim->add_option("--reps", s.reps, "study replicates");
  sim->add_option("--threads", s.threads, "worker threads for studies");

  try {
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << e.what() << '\n';
    return 1;
  }

  try {
    if (app.got_subcommand(fit)) return cmd_fit(o, out);
    if (app.got_subcommand(means)) {
      return cmd_means(o, ranges_text, pools, cells, back, out);
    }
    if (app.got_subcommand(sed)) return cmd_sed(o, out);
    if (app.got_subcommand(letters)) return cmd_letters(o, back, out);
    if (app.got_subcommand(indirect)) {
      return cmd_indirect(o, a, b, ref, env, out);
    }
    if (app.got_subcommand(inc)) return cmd_incidence(o, row, col, out);
    if (app.got_subcommand(sel)) {
      return cmd_select_year(o, fixed_model, random_model, out);
    }
    if (app.got_subcommand(sim)) return cmd_simulate(o, s, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }
  err << "no subcommand given\n";
  return 1;
}

}  // namespace trialkit

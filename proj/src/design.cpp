#include "trialkit/design.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <ostream>

#include "trialkit/errors.hpp"

namespace trialkit {

namespace {

std::vector<int> lookup_factors(const Dataset& ds, const Term& term) {
  std::vector<int> idx;
  for (const std::string& f : term.factors) {
    int i = ds.factor_index(f);
    if (i < 0) {
      throw ModelError("model factor '" + f + "' is absent from the data");
    }
    idx.push_back(i);
  }
  return idx;
}

std::vector<int> observed_cell(const Dataset& ds,
                               const std::vector<int>& factor_indices,
                               std::size_t row) {
  std::vector<int> cell(factor_indices.size());
  for (std::size_t k = 0; k < factor_indices.size(); ++k) {
    cell[k] = ds.code(factor_indices[k], row);
  }
  return cell;
}

// Observed level combinations in first-appearance order.
std::vector<std::vector<int>> observed_combos(
    const Dataset& ds, const std::vector<int>& factor_indices) {
  std::vector<std::vector<int>> combos;
  std::map<std::vector<int>, int> seen;
  for (std::size_t r = 0; r < ds.n_rows(); ++r) {
    auto cell = observed_cell(ds, factor_indices, r);
    if (seen.emplace(cell, 1).second) {
      combos.push_back(cell);
    }
  }
  return combos;
}

// Cartesian product of non-reference levels (all but the last level of
// each factor), first factor slowest.
std::vector<std::vector<int>> nonref_product(
    const Dataset& ds, const std::vector<int>& factor_indices) {
  std::vector<int> sizes;
  for (int fi : factor_indices) {
    int n = static_cast<int>(ds.factors()[fi].levels.size()) - 1;
    if (n <= 0) return {};  // single-level factor contributes nothing
    sizes.push_back(n);
  }
  std::vector<std::vector<int>> combos;
  std::vector<int> cur(sizes.size(), 0);
  while (true) {
    combos.push_back(cur);
    int k = static_cast<int>(sizes.size()) - 1;
    while (k >= 0 && ++cur[k] == sizes[k]) {
      cur[k] = 0;
      --k;
    }
    if (k < 0) break;
  }
  return combos;
}

std::string combo_label(const Dataset& ds, const TermCoding& coding,
                        const std::vector<int>& cell) {
  std::string s = coding.term.label() + "=";
  for (std::size_t k = 0; k < cell.size(); ++k) {
    if (k) s += '/';
    s += ds.factors()[coding.factor_indices[k]].levels[cell[k]];
  }
  return s;
}

bool all_mains_present(const ModelSpec& spec, const Term& term) {
  for (const std::string& f : term.factors) {
    Term main{{f}};
    if (std::find(spec.fixed_terms.begin(), spec.fixed_terms.end(), main) ==
        spec.fixed_terms.end()) {
      return false;
    }
  }
  return true;
}

struct DisjointSet {
  std::vector<int> parent;
  explicit DisjointSet(std::size_t n) : parent(n) {
    std::iota(parent.begin(), parent.end(), 0);
  }
  int find(int a) {
    while (parent[a] != a) a = parent[a] = parent[parent[a]];
    return a;
  }
  void unite(int a, int b) { parent[find(a)] = find(b); }
};

}  // namespace

std::optional<int> TermCoding::column_for(const std::vector<int>& cell) const {
  for (std::size_t c = 0; c < combos.size(); ++c) {
    if (combos[c] == cell) return static_cast<int>(c);
  }
  if (composite && cell != composite_reference) {
    throw ModelError("cell of composite term '" + term.label() +
                     "' was never observed; prediction is inestimable");
  }
  return std::nullopt;  // reference combination
}

DesignMatrices build_design(const Dataset& ds, const ModelSpec& spec) {
  DesignMatrices dm;
  const auto n = static_cast<Eigen::Index>(ds.n_rows());

  // Fixed side: intercept, then one indicator block per term.
  int p = 1;
  dm.x_labels.push_back("Intercept");
  for (const Term& term : spec.fixed_terms) {
    TermCoding coding;
    coding.term = term;
    coding.factor_indices = lookup_factors(ds, term);
    coding.start_col = p;
    if (term.factors.size() == 1 || all_mains_present(spec, term)) {
      coding.composite = false;
      coding.combos = nonref_product(ds, coding.factor_indices);
    } else {
      coding.composite = true;
      coding.combos = observed_combos(ds, coding.factor_indices);
      coding.composite_reference = coding.combos.back();
      coding.combos.pop_back();  // last observed combination is reference
    }
    for (const auto& cell : coding.combos) {
      dm.x_labels.push_back(combo_label(ds, coding, cell));
    }
    p += static_cast<int>(coding.combos.size());
    dm.fixed_codings.push_back(std::move(coding));
  }
  dm.X = Eigen::MatrixXd::Zero(n, p);
  dm.X.col(0).setOnes();
  for (const TermCoding& coding : dm.fixed_codings) {
    for (Eigen::Index r = 0; r < n; ++r) {
      auto cell = observed_cell(ds, coding.factor_indices,
                                static_cast<std::size_t>(r));
      if (auto c = coding.column_for(cell)) {
        dm.X(r, coding.start_col + *c) = 1.0;
      }
    }
  }

  // Random side: full indicator blocks; a term whose combinations uniquely
  // index observations is aliased with the residual and dropped from Z.
  int q = 0;
  for (const Term& term : spec.random_terms) {
    auto factor_indices = lookup_factors(ds, term);
    std::map<std::vector<int>, long> counts;
    for (std::size_t r = 0; r < ds.n_rows(); ++r) {
      ++counts[observed_cell(ds, factor_indices, r)];
    }
    bool aliased = true;
    for (const auto& [cell, count] : counts) {
      if (count > 1) {
        aliased = false;
        break;
      }
    }
    dm.residual_alias.push_back(aliased);
    if (aliased) continue;

    TermCoding coding;
    coding.term = term;
    coding.factor_indices = factor_indices;
    coding.composite = term.factors.size() > 1;
    coding.start_col = q;
    if (term.factors.size() == 1) {
      // All declared levels, no reference dropped.
      int fi = factor_indices[0];
      for (int l = 0; l < static_cast<int>(ds.factors()[fi].levels.size());
           ++l) {
        coding.combos.push_back({l});
      }
    } else {
      coding.combos = observed_combos(ds, factor_indices);
    }
    for (const auto& cell : coding.combos) {
      dm.z_labels.push_back(combo_label(ds, coding, cell));
    }
    q += static_cast<int>(coding.combos.size());
    dm.random_codings.push_back(std::move(coding));
  }
  if (dm.random_codings.size() > 1) {
    std::string terms;
    for (const auto& c : dm.random_codings) {
      if (!terms.empty()) terms += ", ";
      terms += c.term.label();
    }
    throw ModelError(
        "unsupported random structure: more than one non-residual random "
        "term (" +
        terms + "); at most one variance component can be fitted");
  }
  dm.Z = Eigen::MatrixXd::Zero(n, q);
  for (const TermCoding& coding : dm.random_codings) {
    for (Eigen::Index r = 0; r < n; ++r) {
      auto cell = observed_cell(ds, coding.factor_indices,
                                static_cast<std::size_t>(r));
      for (std::size_t c = 0; c < coding.combos.size(); ++c) {
        if (coding.combos[c] == cell) {
          dm.Z(r, coding.start_col + static_cast<int>(c)) = 1.0;
          break;
        }
      }
    }
  }

  // Rank by pivoted QR, tolerance relative to the largest column norm.
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(dm.X);
  double max_norm = dm.X.colwise().norm().maxCoeff();
  qr.setThreshold(1e-8 * max_norm);
  dm.rank_x = qr.rank();
  return dm;
}

ConnectivityReport connectivity(const Dataset& ds,
                                std::string_view treatment,
                                std::string_view environment) {
  const Factor& trt = ds.factor(treatment);
  const Factor& env = ds.factor(environment);
  int ti = ds.factor_index(treatment);
  int ei = ds.factor_index(environment);
  const auto nt = trt.levels.size();
  const auto ne = env.levels.size();

  // Union-find over treatment and environment nodes of the bipartite
  // incidence graph.
  DisjointSet uf(nt + ne);
  for (std::size_t r = 0; r < ds.n_rows(); ++r) {
    uf.unite(ds.code(ti, r), static_cast<int>(nt) + ds.code(ei, r));
  }
  std::map<int, std::vector<std::string>> comps;
  for (std::size_t l = 0; l < nt; ++l) {
    comps[uf.find(static_cast<int>(l))].push_back(trt.levels[l]);
  }
  ConnectivityReport report;
  for (auto& [root, members] : comps) {
    report.components.push_back(std::move(members));
  }
  // Order components by their first treatment level.
  std::sort(report.components.begin(), report.components.end(),
            [&](const auto& a, const auto& b) {
              return trt.level_index(a.front()) < trt.level_index(b.front());
            });
  return report;
}

void dump_design(const DesignMatrices& dm, std::ostream& out) {
  out << "matrix,row";
  for (const auto& l : dm.x_labels) out << ',' << l;
  out << '\n';
  for (Eigen::Index r = 0; r < dm.X.rows(); ++r) {
    out << "X," << r;
    for (Eigen::Index c = 0; c < dm.X.cols(); ++c) out << ',' << dm.X(r, c);
    out << '\n';
  }
  if (dm.Z.cols() > 0) {
    out << "matrix,row";
    for (const auto& l : dm.z_labels) out << ',' << l;
    out << '\n';
    for (Eigen::Index r = 0; r < dm.Z.rows(); ++r) {
      out << "Z," << r;
      for (Eigen::Index c = 0; c < dm.Z.cols(); ++c) out << ',' << dm.Z(r, c);
      out << '\n';
    }
  }
}

}  // namespace trialkit

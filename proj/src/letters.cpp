#include "trialkit/letters.hpp"

#include <algorithm>
#include <numeric>
#include <set>

#include "trialkit/errors.hpp"

namespace trialkit {

namespace {

void check_matrix(const SignificanceMatrix& sm) {
  const std::size_t n = sm.levels.size();
  if (sm.significant.size() != n) {
    throw DataError("significance matrix size does not match level count");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (sm.significant[i].size() != n) {
      throw DataError("significance matrix is not square");
    }
    if (sm.significant[i][i]) {
      throw DataError("significance matrix must be irreflexive");
    }
    for (std::size_t j = 0; j < i; ++j) {
      if (sm.significant[i][j] != sm.significant[j][i]) {
        throw DataError("significance matrix must be symmetric");
      }
    }
  }
  if (!sm.estimates.empty() && sm.estimates.size() != n) {
    throw DataError("estimate count does not match level count");
  }
}

// Level positions in canonical order: descending estimate, ties by index.
std::vector<int> canonical_positions(const SignificanceMatrix& sm) {
  const int n = static_cast<int>(sm.levels.size());
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  if (!sm.estimates.empty()) {
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      return sm.estimates[a] > sm.estimates[b];
    });
  }
  std::vector<int> position(n);
  for (int p = 0; p < n; ++p) position[order[p]] = p;
  return position;
}

std::string letter_code(int index) {
  // a..z, then aa, ab, ... for pathological group counts.
  std::string code;
  ++index;
  while (index > 0) {
    --index;
    code.insert(code.begin(), static_cast<char>('a' + index % 26));
    index /= 26;
  }
  return code;
}

}  // namespace

SignificanceMatrix SignificanceMatrix::from_sed(const SedMatrix& sm) {
  SignificanceMatrix out;
  out.levels = sm.labels;
  out.estimates = sm.estimates;
  out.significant.assign(sm.labels.size(),
                         std::vector<bool>(sm.labels.size(), false));
  for (const SedEntry& e : sm.pairs) {
    out.significant[e.i][e.j] = e.significant;
    out.significant[e.j][e.i] = e.significant;
  }
  return out;
}

std::string LetterDisplay::letters_for(std::string_view level) const {
  for (std::size_t i = 0; i < levels.size(); ++i) {
    if (levels[i] == level) return letters[i];
  }
  throw DataError("no such level in letter display");
}

LetterDisplay letter_display(const SignificanceMatrix& sm) {
  check_matrix(sm);
  const int n = static_cast<int>(sm.levels.size());

  // Insert step: split every group containing a significant pair, then
  // sweep (absorb duplicates and contained groups) so the working set
  // stays small.
  auto absorb = [](std::vector<std::set<int>>& gs) {
    std::sort(gs.begin(), gs.end());
    gs.erase(std::unique(gs.begin(), gs.end()), gs.end());
    std::vector<std::set<int>> kept;
    for (std::size_t a = 0; a < gs.size(); ++a) {
      bool contained = false;
      for (std::size_t b = 0; b < gs.size() && !contained; ++b) {
        if (a == b) continue;
        if (gs[a] != gs[b] &&
            std::includes(gs[b].begin(), gs[b].end(), gs[a].begin(),
                          gs[a].end())) {
          contained = true;
        }
      }
      if (!contained && !gs[a].empty()) kept.push_back(gs[a]);
    }
    gs = std::move(kept);
  };

  std::vector<std::set<int>> groups;
  std::set<int> all;
  for (int i = 0; i < n; ++i) all.insert(i);
  groups.push_back(all);
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      if (!sm.significant[i][j]) continue;
      std::vector<std::set<int>> next;
      for (const auto& g : groups) {
        if (g.count(i) && g.count(j)) {
          std::set<int> without_i = g, without_j = g;
          without_i.erase(i);
          without_j.erase(j);
          next.push_back(std::move(without_i));
          next.push_back(std::move(without_j));
        } else {
          next.push_back(g);
        }
      }
      groups = std::move(next);
      absorb(groups);
    }
  }
  const std::vector<std::set<int>>& kept = groups;

  // Canonical labeling: order groups by the positions of their members
  // under the estimate ordering; letter index = group rank.
  std::vector<int> position = canonical_positions(sm);
  std::vector<std::vector<int>> ranked;
  for (const auto& g : kept) {
    std::vector<int> pos;
    for (int lvl : g) pos.push_back(position[lvl]);
    std::sort(pos.begin(), pos.end());
    ranked.push_back(std::move(pos));
  }
  std::vector<std::size_t> group_order(kept.size());
  std::iota(group_order.begin(), group_order.end(), 0);
  std::sort(group_order.begin(), group_order.end(),
            [&](std::size_t a, std::size_t b) { return ranked[a] < ranked[b]; });

  LetterDisplay ld;
  ld.levels = sm.levels;
  ld.letters.assign(n, "");
  std::vector<int> inv_position(n);
  for (int l = 0; l < n; ++l) inv_position[position[l]] = l;
  for (std::size_t k = 0; k < group_order.size(); ++k) {
    const auto& g = kept[group_order[k]];
    std::vector<int> members;
    // Emit members in canonical order.
    for (int p = 0; p < n; ++p) {
      int lvl = inv_position[p];
      if (g.count(lvl)) members.push_back(lvl);
    }
    for (int lvl : members) {
      ld.letters[lvl] += letter_code(static_cast<int>(k));
    }
    ld.groups.push_back(std::move(members));
  }
  return ld;
}

VerifyReport verify_display(const SignificanceMatrix& sm,
                            const LetterDisplay& ld) {
  check_matrix(sm);
  VerifyReport report;
  const int n = static_cast<int>(sm.levels.size());
  if (static_cast<int>(ld.letters.size()) != n) {
    report.violations.push_back(
        {"shape", -1, -1, "display level count differs from matrix"});
    return report;
  }
  auto share = [&](int i, int j) {
    for (char c : ld.letters[i]) {
      if (ld.letters[j].find(c) != std::string::npos) return true;
    }
    return false;
  };
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      bool shared = share(i, j);
      if (sm.significant[i][j] && shared) {
        report.violations.push_back(
            {"masked-significant", i, j,
             "significant pair (" + sm.levels[i] + ", " + sm.levels[j] +
                 ") shares a letter"});
      }
      if (!sm.significant[i][j] && !shared) {
        report.violations.push_back(
            {"missing-link", i, j,
             "non-significant pair (" + sm.levels[i] + ", " +
                 sm.levels[j] + ") shares no letter"});
      }
    }
  }
  // Irredundancy: no letter's level set contained in another's.
  std::set<char> alphabet;
  for (const auto& s : ld.letters) {
    for (char c : s) alphabet.insert(c);
  }
  std::vector<std::set<int>> columns;
  std::vector<char> column_letter;
  for (char c : alphabet) {
    std::set<int> col;
    for (int i = 0; i < n; ++i) {
      if (ld.letters[i].find(c) != std::string::npos) col.insert(i);
    }
    columns.push_back(std::move(col));
    column_letter.push_back(c);
  }
  for (std::size_t a = 0; a < columns.size(); ++a) {
    for (std::size_t b = 0; b < columns.size(); ++b) {
      if (a == b) continue;
      if (std::includes(columns[b].begin(), columns[b].end(),
                        columns[a].begin(), columns[a].end())) {
        report.violations.push_back(
            {"redundant", -1, -1,
             std::string("letter '") + column_letter[a] +
                 "' marks a subset of letter '" + column_letter[b] + "'"});
      }
    }
  }
  return report;
}

void apply_letters(MeansTable& mt, const LetterDisplay& ld) {
  for (MeanRow& row : mt.rows) {
    for (std::size_t i = 0; i < ld.levels.size(); ++i) {
      if (ld.levels[i] == row.label) {
        row.letters = ld.letters[i];
        break;
      }
    }
  }
}

}  // namespace trialkit

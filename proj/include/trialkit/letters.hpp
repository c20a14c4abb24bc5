#ifndef TRIALKIT_LETTERS_HPP
#define TRIALKIT_LETTERS_HPP

#include <string>
#include <vector>

#include "trialkit/inference.hpp"

namespace trialkit {

// Which pairs of levels differ significantly; symmetric and irreflexive.
struct SignificanceMatrix {
  std::vector<std::string> levels;
  // Estimates drive the canonical letter order (descending, ties by
  // level position); may be empty, which orders by level position.
  std::vector<double> estimates;
  std::vector<std::vector<bool>> significant;

  static SignificanceMatrix from_sed(const SedMatrix& sm);

  bool sig(std::size_t i, std::size_t j) const {
    return significant[i][j];
  }
};

// Letters per level plus the letter groups as level-index sets, in
// letter order.
struct LetterDisplay {
  std::vector<std::string> levels;
  std::vector<std::string> letters;          // aligned with levels
  std::vector<std::vector<int>> groups;      // groups[k] = levels holding letter k

  std::string letters_for(std::string_view level) const;
};

// Truthful, irredundant compact letter display by insert-and-absorb:
// start from one group holding every level; for each significant pair,
// split the groups containing both; absorb groups contained in another;
// label canonically (levels sorted by descending estimate, letters
// indexed by first containing level). Two levels share a letter exactly
// when they are not significantly different.
LetterDisplay letter_display(const SignificanceMatrix& sm);

struct DisplayViolation {
  std::string kind;  // "masked-significant" | "missing-link" | "redundant"
  int i = -1, j = -1;
  std::string detail;
};

struct VerifyReport {
  std::vector<DisplayViolation> violations;

  bool ok() const { return violations.empty(); }
};

// Exhaustive check of both truthfulness directions and irredundancy of
// an arbitrary display against a significance matrix.
VerifyReport verify_display(const SignificanceMatrix& sm,
                            const LetterDisplay& ld);

// Attaches letters to matching rows of a means table.
void apply_letters(MeansTable& mt, const LetterDisplay& ld);

}  // namespace trialkit

#endif  // TRIALKIT_LETTERS_HPP

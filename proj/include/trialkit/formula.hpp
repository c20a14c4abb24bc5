#ifndef TRIALKIT_FORMULA_HPP
#define TRIALKIT_FORMULA_HPP

#include <string>
#include <string_view>
#include <vector>

namespace trialkit {

// A crossed combination of factors, e.g. "S.Y". Factor order inside a term
// carries no meaning; parsing canonicalizes it to declaration order, so
// Term equality is plain field equality.
struct Term {
  std::vector<std::string> factors;

  bool operator==(const Term&) const = default;

  // Dotted label, e.g. "S.P.C.V".
  std::string label() const;

  bool contains(std::string_view factor_name) const;
};

// A parsed model: ordered fixed terms, ordered random terms, implicit
// intercept. "S + Y : S.Y" has fixed = [S, Y], random = [S.Y].
struct ModelSpec {
  std::vector<Term> fixed_terms;
  std::vector<Term> random_terms;

  bool operator==(const ModelSpec&) const = default;
};

// Parses symbolic model notation. Grammar:
//
//   formula  := termlist [":" termlist]
//   termlist := term ("+" term)*
//   term     := factor (("." | "/") factor)*
//
// The colon separates fixed terms (before) from random terms (after);
// whitespace is insignificant. "A/B" is nesting shorthand and expands in
// place to "A + A.B" (left-to-right, so "A/B/C" gives "A + A.B + A.B.C").
// The fixed side may be the literal "1" for an intercept-only model.
// Every factor must appear in known_factors; terms are canonicalized to
// declaration order (parse("S.Y") == parse("Y.S")).
//
// Throws FormulaError on: unknown factor, repeated factor inside a term,
// empty term, duplicate term, a term on both sides of the colon, or a
// missing fixed side.
ModelSpec parse_formula(std::string_view text,
                        const std::vector<std::string>& known_factors);

// Single term without nesting shorthand, for flags like --treatment "S.P".
Term parse_term(std::string_view text,
                const std::vector<std::string>& known_factors);

// Canonical string form; parse_formula(render_formula(m)) == m for any
// ModelSpec whose terms are in declaration order.
std::string render_formula(const ModelSpec& spec);

}  // namespace trialkit

#endif  // TRIALKIT_FORMULA_HPP

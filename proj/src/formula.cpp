#include "trialkit/formula.hpp"

#include <algorithm>
#include <cctype>
#include <map>
#include <sstream>

#include "trialkit/errors.hpp"

namespace trialkit {

std::string Term::label() const {
  std::string out;
  for (std::size_t i = 0; i < factors.size(); ++i) {
    if (i) out += '.';
    out += factors[i];
  }
  return out;
}

bool Term::contains(std::string_view factor_name) const {
  return std::find(factors.begin(), factors.end(), factor_name) !=
         factors.end();
}

namespace {

struct Token {
  enum Kind { kName, kPlus, kDot, kSlash, kColon, kOne } kind;
  std::string text;
};

std::vector<Token> lex(std::string_view text) {
  std::vector<Token> out;
  std::size_t i = 0;
  while (i < text.size()) {
    char c = text[i];
    if (std::isspace(static_cast<unsigned char>(c))) {
      ++i;
      continue;
    }
    switch (c) {
      case '+': out.push_back({Token::kPlus, "+"}); ++i; continue;
      case '.': out.push_back({Token::kDot, "."}); ++i; continue;
      case '/': out.push_back({Token::kSlash, "/"}); ++i; continue;
      case ':': out.push_back({Token::kColon, ":"}); ++i; continue;
      default: break;
    }
    if (c == '1' &&
        (i + 1 == text.size() ||
         !std::isalnum(static_cast<unsigned char>(text[i + 1])))) {
      out.push_back({Token::kOne, "1"});
      ++i;
      continue;
    }
    if (std::isalnum(static_cast<unsigned char>(c)) || c == '_') {
      std::size_t j = i;
      while (j < text.size() &&
             (std::isalnum(static_cast<unsigned char>(text[j])) ||
              text[j] == '_')) {
        ++j;
      }
      out.push_back({Token::kName, std::string(text.substr(i, j - i))});
      i = j;
      continue;
    }
    throw FormulaError("unexpected character '" + std::string(1, c) +
                       "' in formula");
  }
  return out;
}

int declaration_index(const std::string& name,
                      const std::vector<std::string>& known_factors) {
  auto it = std::find(known_factors.begin(), known_factors.end(), name);
  if (it == known_factors.end()) {
    throw FormulaError("unknown factor '" + name + "' in formula");
  }
  return static_cast<int>(it - known_factors.begin());
}

Term canonicalize(std::vector<std::string> factors,
                  const std::vector<std::string>& known_factors) {
  std::stable_sort(factors.begin(), factors.end(),
                   [&](const std::string& a, const std::string& b) {
                     return declaration_index(a, known_factors) <
                            declaration_index(b, known_factors);
                   });
  for (std::size_t i = 1; i < factors.size(); ++i) {
    if (factors[i] == factors[i - 1]) {
      throw FormulaError("factor '" + factors[i] +
                         "' repeated within one term");
    }
  }
  return Term{std::move(factors)};
}

void append_unique(std::vector<Term>& list, Term term,
                   const std::string& side) {
  if (std::find(list.begin(), list.end(), term) != list.end()) {
    throw FormulaError("duplicate " + side + " term '" + term.label() + "'");
  }
  list.push_back(std::move(term));
}

// Parses one termlist entry starting at pos, appending expanded terms
// (nesting shorthand may yield several). pos is left on the first token
// after the entry.
void parse_term_expr(const std::vector<Token>& toks, std::size_t& pos,
                     const std::vector<std::string>& known_factors,
                     std::vector<Term>& out, const std::string& side) {
  if (pos >= toks.size() || toks[pos].kind != Token::kName) {
    throw FormulaError("empty " + side + " term in formula");
  }
  std::vector<std::string> combo{toks[pos].text};
  declaration_index(toks[pos].text, known_factors);
  ++pos;
  while (pos < toks.size() &&
         (toks[pos].kind == Token::kDot || toks[pos].kind == Token::kSlash)) {
    bool nest = toks[pos].kind == Token::kSlash;
    ++pos;
    if (pos >= toks.size() || toks[pos].kind != Token::kName) {
      throw FormulaError("dangling '" + std::string(nest ? "/" : ".") +
                         "' in formula");
    }
    if (nest) {
      append_unique(out, canonicalize(combo, known_factors), side);
    }
    combo.push_back(toks[pos].text);
    declaration_index(toks[pos].text, known_factors);
    ++pos;
  }
  append_unique(out, canonicalize(std::move(combo), known_factors), side);
}

std::vector<Term> parse_termlist(const std::vector<Token>& toks,
                                 std::size_t begin, std::size_t end,
                                 const std::vector<std::string>& known_factors,
                                 const std::string& side) {
  std::vector<Term> out;
  std::size_t pos = begin;
  if (pos >= end) {
    throw FormulaError("empty " + side + " term list");
  }
  while (true) {
    parse_term_expr(toks, pos, known_factors, out, side);
    if (pos == end) break;
    if (toks[pos].kind != Token::kPlus) {
      throw FormulaError("expected '+' between " + side + " terms, found '" +
                         toks[pos].text + "'");
    }
    ++pos;
    if (pos == end) {
      throw FormulaError("empty " + side + " term after '+'");
    }
  }
  return out;
}

}  // namespace

ModelSpec parse_formula(std::string_view text,
                        const std::vector<std::string>& known_factors) {
  auto toks = lex(text);
  if (toks.empty()) {
    throw FormulaError("empty formula");
  }
  std::size_t colon = toks.size();
  for (std::size_t i = 0; i < toks.size(); ++i) {
    if (toks[i].kind == Token::kColon) {
      if (colon != toks.size()) {
        throw FormulaError("more than one ':' in formula");
      }
      colon = i;
    }
  }

  ModelSpec spec;
  if (colon == 0) {
    throw FormulaError("missing fixed side before ':'");
  }
  // Intercept-only fixed side: the literal "1" stands alone.
  if (toks[0].kind == Token::kOne) {
    if (colon != 1) {
      throw FormulaError("'1' must stand alone on the fixed side");
    }
  } else {
    spec.fixed_terms =
        parse_termlist(toks, 0, colon, known_factors, "fixed");
  }
  if (colon < toks.size()) {
    if (colon + 1 == toks.size()) {
      throw FormulaError("empty random term list after ':'");
    }
    spec.random_terms = parse_termlist(toks, colon + 1, toks.size(),
                                       known_factors, "random");
  }
  for (const Term& t : spec.random_terms) {
    if (std::find(spec.fixed_terms.begin(), spec.fixed_terms.end(), t) !=
        spec.fixed_terms.end()) {
      throw FormulaError("term '" + t.label() +
                         "' appears as both fixed and random");
    }
  }
  return spec;
}

Term parse_term(std::string_view text,
                const std::vector<std::string>& known_factors) {
  auto toks = lex(text);
  if (toks.empty()) {
    throw FormulaError("empty term");
  }
  std::vector<std::string> combo;
  for (std::size_t i = 0; i < toks.size(); ++i) {
    if (i % 2 == 0) {
      if (toks[i].kind != Token::kName) {
        throw FormulaError("expected factor name in term '" +
                           std::string(text) + "'");
      }
      combo.push_back(toks[i].text);
      declaration_index(toks[i].text, known_factors);
    } else if (toks[i].kind != Token::kDot) {
      throw FormulaError("expected '.' between factors in term '" +
                         std::string(text) + "'");
    }
  }
  if (toks.back().kind == Token::kDot) {
    throw FormulaError("dangling '.' in term '" + std::string(text) + "'");
  }
  return canonicalize(std::move(combo), known_factors);
}

std::string render_formula(const ModelSpec& spec) {
  std::ostringstream out;
  if (spec.fixed_terms.empty()) {
    out << "1";
  } else {
    for (std::size_t i = 0; i < spec.fixed_terms.size(); ++i) {
      if (i) out << " + ";
      out << spec.fixed_terms[i].label();
    }
  }
  if (!spec.random_terms.empty()) {
    out << " : ";
    for (std::size_t i = 0; i < spec.random_terms.size(); ++i) {
      if (i) out << " + ";
      out << spec.random_terms[i].label();
    }
  }
  return out.str();
}

}  // namespace trialkit

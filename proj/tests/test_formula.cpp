#include <doctest.h>

#include <random>

#include "trialkit/errors.hpp"
#include "trialkit/formula.hpp"

using namespace trialkit;

namespace {
const std::vector<std::string> kToyFactors = {"S", "Y"};
const std::vector<std::string> kTrialFactors = {"S", "P", "C", "V", "Y",
                                                "G", "REP", "ROW", "COL"};
}  // namespace

TEST_CASE("three toy models parse as published") {
  ModelSpec m1 = parse_formula("S : S.Y", kToyFactors);
  CHECK(m1.fixed_terms == std::vector<Term>{Term{{"S"}}});
  CHECK(m1.random_terms == std::vector<Term>{Term{{"S", "Y"}}});

  ModelSpec m2 = parse_formula("S : Y + S.Y", kToyFactors);
  CHECK(m2.fixed_terms == std::vector<Term>{Term{{"S"}}});
  CHECK(m2.random_terms ==
        std::vector<Term>{Term{{"Y"}}, Term{{"S", "Y"}}});

  ModelSpec m3 = parse_formula("S + Y : S.Y", kToyFactors);
  CHECK(m3.fixed_terms == std::vector<Term>{Term{{"S"}}, Term{{"Y"}}});
  CHECK(m3.random_terms == std::vector<Term>{Term{{"S", "Y"}}});
}

TEST_CASE("compound field-trial formula parses") {
  ModelSpec m5 =
      parse_formula("S.P.C.V + C.Y : S.P.C.V.Y", kTrialFactors);
  REQUIRE(m5.fixed_terms.size() == 2);
  CHECK(m5.fixed_terms[0] == Term{{"S", "P", "C", "V"}});
  CHECK(m5.fixed_terms[1] == Term{{"C", "Y"}});
  CHECK(m5.random_terms ==
        std::vector<Term>{Term{{"S", "P", "C", "V", "Y"}}});
}

TEST_CASE("block structure formula parses even if never fitted") {
  ModelSpec blocks = parse_formula(
      "REP.Y + REP.ROW.Y + REP.COL.Y + REP.ROW.COL.Y", kTrialFactors);
  CHECK(blocks.fixed_terms.size() == 4);
  CHECK(blocks.random_terms.empty());
}

TEST_CASE("nesting shorthand expands in place") {
  ModelSpec g = parse_formula("G/S", kTrialFactors);
  CHECK(g.fixed_terms ==
        std::vector<Term>{Term{{"G"}}, Term{{"S", "G"}}});
  CHECK(g.random_terms.empty());

  SUBCASE("expansion equals the explicit form") {
    CHECK(parse_formula("G/S", kTrialFactors) ==
          parse_formula("G + G.S", kTrialFactors));
  }
  SUBCASE("left-to-right over three factors") {
    CHECK(parse_formula("S/P/C", kTrialFactors) ==
          parse_formula("S + S.P + S.P.C", kTrialFactors));
  }
  SUBCASE("dot binds inside nesting steps") {
    CHECK(parse_formula("S.P/C", kTrialFactors) ==
          parse_formula("S.P + S.P.C", kTrialFactors));
  }
}

TEST_CASE("term identity ignores factor order") {
  CHECK(parse_formula("S.Y", kToyFactors) ==
        parse_formula("Y.S", kToyFactors));
}

TEST_CASE("intercept-only fixed side via literal 1") {
  ModelSpec m = parse_formula("1 : Y", kToyFactors);
  CHECK(m.fixed_terms.empty());
  CHECK(m.random_terms == std::vector<Term>{Term{{"Y"}}});
  CHECK(render_formula(m) == "1 : Y");
}

TEST_CASE("malformed formulas are rejected") {
  CHECK_THROWS_AS(parse_formula("S :", kToyFactors), FormulaError);
  CHECK_THROWS_AS(parse_formula(": Y", kToyFactors), FormulaError);
  CHECK_THROWS_AS(parse_formula("", kToyFactors), FormulaError);
  CHECK_THROWS_AS(parse_formula("S + + Y", kToyFactors), FormulaError);
  CHECK_THROWS_AS(parse_formula("S..Y", kToyFactors), FormulaError);
  CHECK_THROWS_AS(parse_formula("S.", kToyFactors), FormulaError);
  CHECK_THROWS_AS(parse_formula("Q : Y", kToyFactors), FormulaError);
  CHECK_THROWS_AS(parse_formula("S.S", kToyFactors), FormulaError);
  CHECK_THROWS_AS(parse_formula("S/S", kToyFactors), FormulaError);
  CHECK_THROWS_AS(parse_formula("S + S", kToyFactors), FormulaError);
  CHECK_THROWS_AS(parse_formula("S + Y.S.Y", kToyFactors), FormulaError);
  CHECK_THROWS_AS(parse_formula("S : Y : S.Y", kToyFactors), FormulaError);
  CHECK_THROWS_AS(parse_formula("S : S", kToyFactors), FormulaError);
  CHECK_THROWS_AS(parse_formula("1 + S", kToyFactors), FormulaError);
}

TEST_CASE("rendering matches the published notation") {
  ModelSpec m1{{Term{{"S"}}}, {Term{{"S", "Y"}}}};
  CHECK(render_formula(m1) == "S : S.Y");
  ModelSpec m3{{Term{{"S"}}, Term{{"Y"}}}, {Term{{"S", "Y"}}}};
  CHECK(render_formula(m3) == "S + Y : S.Y");
}

TEST_CASE("parse-render round trip on random formulas") {
  std::mt19937 rng(20240711u);
  auto rand_int = [&](int lo, int hi) {
    return std::uniform_int_distribution<int>(lo, hi)(rng);
  };
  for (int trial = 0; trial < 200; ++trial) {
    // Random spec over the trial factors, terms in declaration order.
    std::vector<Term> pool;
    int n_terms = rand_int(1, 6);
    for (int t = 0; t < n_terms; ++t) {
      std::vector<int> picks;
      int size = rand_int(1, 4);
      while (static_cast<int>(picks.size()) < size) {
        int k = rand_int(0, static_cast<int>(kTrialFactors.size()) - 1);
        if (std::find(picks.begin(), picks.end(), k) == picks.end()) {
          picks.push_back(k);
        }
      }
      std::sort(picks.begin(), picks.end());
      Term term;
      for (int k : picks) term.factors.push_back(kTrialFactors[k]);
      if (std::find(pool.begin(), pool.end(), term) == pool.end()) {
        pool.push_back(term);
      }
    }
    ModelSpec spec;
    int n_fixed = rand_int(1, static_cast<int>(pool.size()));
    for (int i = 0; i < static_cast<int>(pool.size()); ++i) {
      (i < n_fixed ? spec.fixed_terms : spec.random_terms)
          .push_back(pool[i]);
    }
    ModelSpec back = parse_formula(render_formula(spec), kTrialFactors);
    CHECK(back == spec);
  }
}

#include "trialkit/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <thread>

#include "trialkit/errors.hpp"
#include "trialkit/inference.hpp"
#include "trialkit/solver.hpp"

namespace trialkit {

namespace {

// splitmix64; stirs (seed, replicate) into an independent stream seed.
std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::mt19937_64 replicate_rng(std::uint64_t seed, std::uint64_t replicate) {
  return std::mt19937_64(mix64(mix64(seed) ^ mix64(replicate + 1)));
}

std::string system_label(int s) { return std::to_string(s + 1); }

std::string year_label(int y, int n_years) {
  int width = n_years >= 100 ? 3 : 2;
  std::string num = std::to_string(y + 1);
  return "Y" + std::string(width - std::min<int>(width, num.size()), '0') +
         num;
}

bool system_runs_in_year(const SimConfig& cfg, int s, int y) {
  bool pre = y < cfg.n_years_pre;
  if (cfg.is_bridge(s)) return true;
  if (cfg.is_old(s)) return pre;
  return !pre;
}

// Kahan-compensated accumulator; summation order is fixed by replicate
// index, so aggregation is reproducible regardless of thread count.
struct CompensatedSum {
  double sum = 0.0, carry = 0.0;

  void add(double v) {
    double t = v - carry;
    double next = sum + t;
    carry = (next - sum) - t;
    sum = next;
  }
};

}  // namespace

void SimConfig::validate() const {
  if (n_systems_old < 1 || n_systems_new < 1 || n_years_pre < 1 ||
      n_years_post < 1 || replicates < 1) {
    throw DataError("simulation counts must all be at least 1");
  }
  if (n_bridge < 1 || n_bridge > n_systems_old) {
    throw DataError(
        "bridge system count must lie between 1 and the old system count");
  }
  if (sigma_e < 0.0 || sigma_year < 0.0) {
    throw DataError("standard deviations must be non-negative");
  }
  if (!true_system_effects.empty() &&
      static_cast<int>(true_system_effects.size()) != n_systems()) {
    throw DataError("true_system_effects must have one entry per system");
  }
  if (!true_year_effects.empty() &&
      static_cast<int>(true_year_effects.size()) != n_years()) {
    throw DataError("true_year_effects must have one entry per year");
  }
  if (sigma_year > 0.0 && !true_year_effects.empty()) {
    throw DataError(
        "supply either explicit year effects or sigma_year, not both");
  }
}

Dataset simulate_trial(const SimConfig& cfg, std::uint64_t replicate_index) {
  cfg.validate();
  std::mt19937_64 rng = replicate_rng(cfg.seed, replicate_index);
  std::normal_distribution<double> gauss(0.0, 1.0);

  std::vector<double> year_eff(cfg.n_years(), 0.0);
  if (cfg.sigma_year > 0.0) {
    for (double& e : year_eff) e = cfg.sigma_year * gauss(rng);
  } else if (!cfg.true_year_effects.empty()) {
    year_eff = cfg.true_year_effects;
  }
  std::vector<double> sys_eff(cfg.n_systems(), 0.0);
  if (!cfg.true_system_effects.empty()) sys_eff = cfg.true_system_effects;

  DatasetBuilder builder({"S", "Y"}, "value");
  for (int s = 0; s < cfg.n_systems(); ++s) {
    for (int y = 0; y < cfg.n_years(); ++y) {
      if (!system_runs_in_year(cfg, s, y)) continue;
      for (int r = 0; r < cfg.replicates; ++r) {
        double noise = cfg.sigma_e > 0.0 ? cfg.sigma_e * gauss(rng) : 0.0;
        builder.add_row({system_label(s), year_label(y, cfg.n_years())},
                        cfg.grand_mean + sys_eff[s] + year_eff[y] + noise);
      }
    }
  }
  return std::move(builder).build();
}

BiasReport bias_study(const SimConfig& cfg, int n_reps, int threads) {
  cfg.validate();
  if (n_reps < 100) {
    throw DataError("bias study needs at least 100 replicates");
  }
  const std::vector<std::string> factors = {"S", "Y"};
  std::vector<ModelSpec> specs = {
      parse_formula("S : S.Y", factors),
      parse_formula("S + Y : S.Y", factors),
  };
  if (cfg.sigma_year > 0.0) {
    specs.insert(specs.begin() + 1, parse_formula("S : Y + S.Y", factors));
  }

  std::vector<std::pair<int, int>> pairs;  // ended old x new
  for (int o = 0; o < cfg.n_systems_old - cfg.n_bridge; ++o) {
    for (int nw = cfg.n_systems_old; nw < cfg.n_systems(); ++nw) {
      pairs.emplace_back(o, nw);
    }
  }
  std::vector<double> sys_eff(cfg.n_systems(), 0.0);
  if (!cfg.true_system_effects.empty()) sys_eff = cfg.true_system_effects;

  const Term treatment{{"S"}};
  const Term margin{{"Y"}};
  const std::size_t cells = specs.size() * pairs.size();
  // estimates[rep * cells + slot]; NaN marks a failed fit.
  std::vector<double> estimates(
      static_cast<std::size_t>(n_reps) * cells,
      std::numeric_limits<double>::quiet_NaN());
  std::vector<int> failures(specs.size() * static_cast<std::size_t>(n_reps),
                            0);

  auto run_range = [&](int begin, int end) {
    for (int rep = begin; rep < end; ++rep) {
      Dataset ds = simulate_trial(cfg, static_cast<std::uint64_t>(rep));
      for (std::size_t m = 0; m < specs.size(); ++m) {
        try {
          FittedModel fm = fit_model(ds, specs[m]);
          MeansTable mt = adjusted_means(fm, treatment, margin);
          for (std::size_t pi = 0; pi < pairs.size(); ++pi) {
            auto [o, nw] = pairs[pi];
            double mo = 0.0, mn = 0.0;
            for (const MeanRow& row : mt.rows) {
              if (row.label == system_label(o)) mo = row.estimate;
              if (row.label == system_label(nw)) mn = row.estimate;
            }
            estimates[static_cast<std::size_t>(rep) * cells +
                      m * pairs.size() + pi] = mo - mn;
          }
        } catch (const Error&) {
          failures[m * static_cast<std::size_t>(n_reps) + rep] = 1;
        }
      }
    }
  };

  threads = std::max(1, threads);
  if (threads == 1) {
    run_range(0, n_reps);
  } else {
    std::vector<std::thread> pool;
    int chunk = (n_reps + threads - 1) / threads;
    for (int t = 0; t < threads; ++t) {
      int begin = t * chunk;
      int end = std::min(n_reps, begin + chunk);
      if (begin < end) pool.emplace_back(run_range, begin, end);
    }
    for (auto& th : pool) th.join();
  }

  BiasReport report;
  report.n_reps = n_reps;
  for (std::size_t m = 0; m < specs.size(); ++m) {
    BiasModelReport mr;
    mr.model = render_formula(specs[m]);
    for (int rep = 0; rep < n_reps; ++rep) {
      mr.fit_failures += failures[m * static_cast<std::size_t>(n_reps) + rep];
    }
    for (std::size_t pi = 0; pi < pairs.size(); ++pi) {
      auto [o, nw] = pairs[pi];
      CompensatedSum sum;
      long count = 0;
      for (int rep = 0; rep < n_reps; ++rep) {
        double v = estimates[static_cast<std::size_t>(rep) * cells +
                             m * pairs.size() + pi];
        if (std::isnan(v)) continue;
        sum.add(v);
        ++count;
      }
      if (count == 0) continue;
      double mean = sum.sum / static_cast<double>(count);
      CompensatedSum sq;
      for (int rep = 0; rep < n_reps; ++rep) {
        double v = estimates[static_cast<std::size_t>(rep) * cells +
                             m * pairs.size() + pi];
        if (std::isnan(v)) continue;
        sq.add((v - mean) * (v - mean));
      }
      BiasPair bp;
      bp.old_system = system_label(o);
      bp.new_system = system_label(nw);
      bp.mean_estimate = mean;
      bp.true_difference = sys_eff[o] - sys_eff[nw];
      bp.bias = mean - bp.true_difference;
      bp.mc_se = count > 1 ? std::sqrt(sq.sum / (static_cast<double>(count) *
                                                 (count - 1)))
                           : 0.0;
      mr.pairs.push_back(bp);
    }
    report.models.push_back(std::move(mr));
  }
  return report;
}

}  // namespace trialkit

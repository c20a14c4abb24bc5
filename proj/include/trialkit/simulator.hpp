#ifndef TRIALKIT_SIMULATOR_HPP
#define TRIALKIT_SIMULATOR_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "trialkit/dataset.hpp"

namespace trialkit {

// Ground truth and layout for a synthetic multi-year trial with system
// turnover: old systems run in the pre-period, bridge systems (a subset
// of the old ones) run throughout, new systems start in the post-period.
//
// System labels are "1".."k" in the order: old non-bridge systems first,
// then the bridge systems, then the new systems. Year labels are
// "Y01".."Ynn", pre-period first.
struct SimConfig {
  int n_systems_old = 4;
  int n_systems_new = 2;
  int n_bridge = 2;
  int n_years_pre = 4;
  int n_years_post = 1;
  double grand_mean = 0.0;
  // Aligned with system label order; empty means all zero.
  std::vector<double> true_system_effects;
  // Aligned with year order; empty means all zero. Must be empty when
  // sigma_year > 0 (year effects are then drawn per replicate).
  std::vector<double> true_year_effects;
  double sigma_e = 1.0;
  double sigma_year = 0.0;
  int replicates = 1;  // observations per system-year cell
  std::uint64_t seed = 0;

  int n_systems() const { return n_systems_old + n_systems_new; }
  int n_years() const { return n_years_pre + n_years_post; }
  bool is_old(int system) const { return system < n_systems_old; }
  bool is_bridge(int system) const {
    return system >= n_systems_old - n_bridge && system < n_systems_old;
  }
  bool is_new(int system) const { return system >= n_systems_old; }

  void validate() const;  // throws DataError on inconsistent settings
};

// One synthetic trial: y = grand mean + system effect + year effect +
// noise, with the turnover incidence pattern above. Deterministic given
// (seed, replicate_index); replicate streams are independent of
// execution order.
Dataset simulate_trial(const SimConfig& cfg,
                       std::uint64_t replicate_index = 0);

// Bias of old-vs-new system comparisons per model.
struct BiasPair {
  std::string old_system, new_system;
  double mean_estimate = 0.0;  // Monte Carlo mean of the estimated difference
  double true_difference = 0.0;
  double bias = 0.0;
  double mc_se = 0.0;
};

struct BiasModelReport {
  std::string model;  // formula string
  std::vector<BiasPair> pairs;
  int fit_failures = 0;
};

struct BiasReport {
  int n_reps = 0;
  std::vector<BiasModelReport> models;
};

// Monte Carlo study of estimator bias for every (ended old, new) system
// pair: fits the no-year-effect and fixed-year-effect models per
// replicate (plus the random-year-effect model when sigma_year > 0) and
// aggregates the estimated differences of adjusted means. Fit failures
// are counted, not fatal.
BiasReport bias_study(const SimConfig& cfg, int n_reps, int threads = 1);

}  // namespace trialkit

#endif  // TRIALKIT_SIMULATOR_HPP

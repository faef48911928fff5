#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace snr::app {

struct GradCheckSuiteOptions {
  int seeds = 20;
  std::uint64_t base_seed = 0;
  double eps = 1e-6;
  // Step for the end-to-end network case; differences through the whole
  // network carry more rounding noise, so a 1e-6 step loses small entries.
  double network_eps = 1e-5;
  double tolerance = 1e-3;
  // Scales the gradient entering every tape node with this op name during the
  // analytic pass, to confirm that a broken backward rule is caught.
  std::optional<std::string> fault_op;
  double fault_scale = 1.1;
};

struct GradCheckRow {
  std::string name;
  double max_relative_error = 0.0;
  int seeds = 0;
  bool passed = true;
};

// Names of the cases in run order: one per op plus the tiny end-to-end network.
std::vector<std::string> gradcheck_case_names();

// Central-difference checks in double precision. Each case reduces its output
// to a scalar with a fixed random weighting and is run once per seed; a row
// reports the worst relative error over its seeds.
std::vector<GradCheckRow> run_gradcheck_suite(const GradCheckSuiteOptions& options = {});

// Only the named cases.
std::vector<GradCheckRow> run_gradcheck_suite(const GradCheckSuiteOptions& options,
                                              const std::vector<std::string>& cases);

}  // namespace snr::app

#pragma once

// Post-hoc error analysis: relevance-gap statistics split by round outcome,
// and accuracy per theme.

#include <map>
#include <span>
#include <string>
#include <vector>

#include "pbl/features.hpp"
#include "pbl/trainer.hpp"

namespace pbl {

// Highest minus second-highest entry of a relevance row.
double top2_gap(const RelevanceRow& row);

struct WelchResult {
  double t = 0.0;
  double dof = 0.0;
  double p_value = 1.0;
  bool degenerate = false;  // a group has fewer than two samples
};

// Two-sample unequal-variance t-test, two-sided.
WelchResult welch_t_test(std::span<const double> a, std::span<const double> b);

struct GroupStats {
  int rounds = 0;
  int samples = 0;
  double mean = 0.0;
  double stdev = 0.0;
};

struct RoundGaps {
  std::string instance_id;
  bool all_correct = false;
  std::vector<double> gaps;  // the largest gaps of the round, descending
  bool short_round = false;  // fewer utterances than requested rows
};

struct GapReport {
  GroupStats all_correct;
  GroupStats with_mistakes;
  WelchResult test;
  std::vector<RoundGaps> rounds;
  int short_rounds = 0;
};

// `relevance` maps instance ids to their relevance matrices. Per round the
// `rows_per_round` largest gaps are kept.
GapReport top2_gap_stats(std::span<const RoundOutcome> outcomes,
                         const std::map<std::string, RelevanceMatrix>& relevance, int rows_per_round = 3);

struct ThemeAccuracy {
  std::string theme;
  int correct = 0;
  int total = 0;
  double accuracy() const { return total ? static_cast<double>(correct) / total : 0.0; }
};

struct ThemeReport {
  std::vector<ThemeAccuracy> themes;         // best first
  std::vector<std::string> all_wrong_rounds;  // instance ids
};

ThemeReport error_by_theme(std::span<const RoundOutcome> outcomes);

std::string format_gap_report(const GapReport& report);
std::string format_theme_report(const ThemeReport& report);
// Overlaid histograms of the two groups' gaps.
std::string gap_histogram_svg(const GapReport& report, int bins = 20);

}  // namespace pbl

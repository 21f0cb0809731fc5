#pragma once

// Statistics that turn "group A shows higher RWC than group B" into numbers:
// window means, strict dominance fractions, mean gaps and an ascending order.

#include <algorithm>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "rwc/error.hpp"

namespace rwc {

/// Transitions [skip_initial, skip_initial + length). No length means "all
/// remaining"; a length past the end is cut at the end.
struct Window {
  std::size_t skip_initial = 0;
  std::optional<std::size_t> length;

  friend bool operator==(const Window&, const Window&) = default;
};

inline double mean_over_window(std::span<const double> series, const Window& window = {}) {
  if (window.length && *window.length == 0) throw Error(ErrorCode::EmptyWindow, "window length must be >= 1");
  if (window.skip_initial >= series.size()) {
    throw Error(ErrorCode::EmptyWindow, "skipping " + std::to_string(window.skip_initial) + " of " +
                                            std::to_string(series.size()) + " values leaves nothing");
  }
  const auto remaining = series.size() - window.skip_initial;
  const auto count = window.length ? std::min(*window.length, remaining) : remaining;
  double sum = 0.0;
  for (std::size_t i = 0; i < count; ++i) sum += series[window.skip_initial + i];
  return sum / static_cast<double>(count);
}

/// Fraction of indices where a[i] > b[i] strictly.
inline double dominance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.empty()) {
    throw Error(ErrorCode::LengthMismatch, "dominance needs equal non-empty lengths, got " + std::to_string(a.size()) +
                                               " and " + std::to_string(b.size()));
  }
  std::size_t wins = 0;
  for (std::size_t i = 0; i < a.size(); ++i) wins += a[i] > b[i] ? 1 : 0;
  return static_cast<double>(wins) / static_cast<double>(a.size());
}

struct PairwiseStat {
  std::string a;
  std::string b;
  double dominance = 0.0;  // over the window
  double mean_gap = 0.0;   // mean(a) - mean(b)

  friend bool operator==(const PairwiseStat&, const PairwiseStat&) = default;
};

struct TrendReport {
  std::vector<std::string> groups;
  Window window;
  std::vector<std::pair<std::string, double>> means;  // in groups order
  std::vector<PairwiseStat> pairwise;                 // every ordered pair (a != b), a-major
  std::vector<std::string> ordering;                  // ascending by mean, ties by name

  double mean_of(const std::string& group) const {
    for (const auto& [g, m] : means) {
      if (g == group) return m;
    }
    throw Error(ErrorCode::LabelMismatch, "no group '" + group + "' in report");
  }

  friend bool operator==(const TrendReport&, const TrendReport&) = default;
};

using LabeledCurve = std::pair<std::string, std::vector<double>>;

inline TrendReport trend_report(const std::vector<LabeledCurve>& group_series, const Window& window = {}) {
  if (group_series.size() < 2) {
    throw Error(ErrorCode::TooFewGroups, "need at least 2 groups, got " + std::to_string(group_series.size()));
  }
  for (std::size_t i = 0; i < group_series.size(); ++i) {
    if (group_series[i].second.size() != group_series[0].second.size()) {
      throw Error(ErrorCode::LengthMismatch, "group '" + group_series[i].first + "' has a different length");
    }
    for (std::size_t j = 0; j < i; ++j) {
      if (group_series[j].first == group_series[i].first) {
        throw Error(ErrorCode::InvalidField, "group '" + group_series[i].first + "' appears twice");
      }
    }
  }

  TrendReport report;
  report.window = window;
  // Dominance is evaluated over the same transitions as the means.
  std::vector<std::span<const double>> windowed;
  for (const auto& [name, values] : group_series) {
    report.groups.push_back(name);
    report.means.emplace_back(name, mean_over_window(values, window));
    const auto remaining = values.size() - window.skip_initial;
    const auto count = window.length ? std::min(*window.length, remaining) : remaining;
    windowed.emplace_back(values.data() + window.skip_initial, count);
  }
  for (std::size_t i = 0; i < group_series.size(); ++i) {
    for (std::size_t j = 0; j < group_series.size(); ++j) {
      if (i == j) continue;
      report.pairwise.push_back({report.groups[i], report.groups[j], dominance(windowed[i], windowed[j]),
                                 report.means[i].second - report.means[j].second});
    }
  }
  auto ranked = report.means;
  std::sort(ranked.begin(), ranked.end(), [](const auto& x, const auto& y) {
    if (x.second != y.second) return x.second < y.second;
    return x.first < y.first;
  });
  for (const auto& [name, _] : ranked) report.ordering.push_back(name);
  return report;
}

}  // namespace rwc

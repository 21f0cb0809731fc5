#pragma once

// Run-level analysis (per-layer or per-group series for one run) and
// averaging of aligned series across runs that differ only in seed.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "rwc/error.hpp"
#include "rwc/grouping.hpp"
#include "rwc/rwc.hpp"
#include "rwc/snapshot.hpp"
#include "rwc/util.hpp"

namespace rwc {

struct AggregateSeries {
  std::string label;
  RwcMode mode = RwcMode::NormRatio;
  std::size_t n = 0;
  std::vector<double> mean;
  std::vector<double> std;  // sample (n - 1) deviation; zeros when n == 1
  std::vector<std::string> source_run_ids;  // sorted

  friend bool operator==(const AggregateSeries&, const AggregateSeries&) = default;
};

inline AggregateSeries aggregate_seeds(const std::vector<RwcSeries>& series_per_seed,
                                       const std::vector<std::string>& run_ids) {
  if (series_per_seed.empty()) throw Error(ErrorCode::EmptyInput, "no series to aggregate");
  if (run_ids.size() != series_per_seed.size()) {
    throw Error(ErrorCode::LengthMismatch, std::to_string(series_per_seed.size()) + " series but " +
                                               std::to_string(run_ids.size()) + " run ids");
  }
  const auto& first = series_per_seed.front();
  for (const auto& s : series_per_seed) {
    if (s.label != first.label) {
      throw Error(ErrorCode::LabelMismatch, "label '" + s.label + "' differs from '" + first.label + "'");
    }
    if (s.mode != first.mode) throw Error(ErrorCode::ModeMismatch, "series '" + s.label + "' mixes RWC modes");
    if (s.values.size() != first.values.size()) {
      throw Error(ErrorCode::LengthMismatch, "series '" + s.label + "' lengths " + std::to_string(first.values.size()) +
                                                 " and " + std::to_string(s.values.size()) + " differ");
    }
  }

  // Reduce in run-id order so the output does not depend on input order.
  std::vector<std::size_t> order(series_per_seed.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return run_ids[a] < run_ids[b]; });

  AggregateSeries out;
  out.label = first.label;
  out.mode = first.mode;
  out.n = series_per_seed.size();
  out.mean.resize(first.values.size());
  out.std.resize(first.values.size());
  for (auto i : order) out.source_run_ids.push_back(run_ids[i]);

  for (std::size_t t = 0; t < first.values.size(); ++t) {
    // Welford: identical inputs give exactly that mean and zero spread.
    double mean = 0.0;
    double m2 = 0.0;
    double lo = 0.0;
    double hi = 0.0;
    std::size_t k = 0;
    for (auto i : order) {
      const double x = series_per_seed[i].values[t];
      ++k;
      const double delta = x - mean;
      mean += delta / static_cast<double>(k);
      m2 += delta * (x - mean);
      lo = k == 1 ? x : std::min(lo, x);
      hi = k == 1 ? x : std::max(hi, x);
    }
    out.mean[t] = std::clamp(mean, lo, hi);
    out.std[t] = k > 1 ? std::sqrt(std::max(m2, 0.0) / static_cast<double>(k - 1)) : 0.0;
  }
  return out;
}

/// How one run is reduced to labelled series. Without rules the labels are
/// the selected layer names; with rules they are group names.
struct AnalysisOptions {
  RwcMode mode = RwcMode::NormRatio;
  std::string filter = std::string(kDefaultLayerFilter);
  std::optional<std::vector<GroupRule>> rules;
  Weighting weighting = Weighting::Unweighted;
};

inline std::vector<RwcSeries> analyze_run(const std::filesystem::path& run_directory, const RunManifest& manifest,
                                          const AnalysisOptions& options, unsigned workers = 1) {
  RunSeries per_layer = rwc_run(run_directory, manifest, options.filter, options.mode, workers);
  if (!options.rules) return std::move(per_layer.series);

  std::vector<std::string> names;
  for (const auto& s : per_layer.series) names.push_back(s.label);
  const LayerGroupMap map = compile_group_map(*options.rules, names);
  if (map.resolved.empty()) {
    throw Error(ErrorCode::EmptySelection, "no grouping rule matched any selected layer of run '" + manifest.run_id + "'");
  }
  return group_series(per_layer.series, map, options.weighting, per_layer.param_counts);
}

/// Analyzes every run and averages matching labels across them. Runs must
/// agree on epoch count and architecture and carry distinct run ids. Output
/// follows the label order of the run with the smallest run id.
inline std::vector<AggregateSeries> aggregate_runs(const std::vector<std::filesystem::path>& run_directories,
                                                   const AnalysisOptions& options, unsigned workers = 1) {
  if (run_directories.empty()) throw Error(ErrorCode::EmptyInput, "no run directories given");

  std::vector<RunManifest> manifests;
  for (const auto& dir : run_directories) manifests.push_back(load_run_manifest(dir));

  std::set<std::string> ids;
  for (std::size_t i = 0; i < manifests.size(); ++i) {
    const auto& m = manifests[i];
    if (!ids.insert(m.run_id).second) {
      throw Error(ErrorCode::DuplicateRunId, "run id '" + m.run_id + "' appears twice (" + run_directories[i].string() + ")");
    }
    if (m.epochs != manifests[0].epochs) {
      throw Error(ErrorCode::EpochCountMismatch, "run '" + m.run_id + "' has " + std::to_string(m.epochs) +
                                                     " epochs but run '" + manifests[0].run_id + "' has " +
                                                     std::to_string(manifests[0].epochs));
    }
    if (m.architecture != manifests[0].architecture) {
      throw Error(ErrorCode::ArchitectureMismatch, "run '" + m.run_id + "' architecture '" + m.architecture +
                                                       "' differs from '" + manifests[0].architecture + "'");
    }
  }

  // Runs in parallel, layers sequentially within each run.
  std::vector<std::vector<RwcSeries>> per_run(run_directories.size());
  parallel_for(run_directories.size(), workers, [&](std::size_t i) {
    try {
      per_run[i] = analyze_run(run_directories[i], manifests[i], options, 1);
    } catch (const Error& e) {
      throw Error(e.code(), "run '" + manifests[i].run_id + "': " + e.message());
    }
  });

  std::vector<std::size_t> order(run_directories.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return manifests[a].run_id < manifests[b].run_id; });

  const auto& reference = per_run[order.front()];
  std::vector<AggregateSeries> out;
  for (const auto& ref_series : reference) {
    std::vector<RwcSeries> across;
    std::vector<std::string> run_ids;
    for (auto i : order) {
      auto it = std::find_if(per_run[i].begin(), per_run[i].end(),
                             [&](const RwcSeries& s) { return s.label == ref_series.label; });
      if (it == per_run[i].end()) {
        throw Error(ErrorCode::LabelMismatch, "run '" + manifests[i].run_id + "' has no series '" + ref_series.label + "'");
      }
      across.push_back(*it);
      run_ids.push_back(manifests[i].run_id);
    }
    out.push_back(aggregate_seeds(across, run_ids));
  }
  for (auto i : order) {
    if (per_run[i].size() != reference.size()) {
      throw Error(ErrorCode::LabelMismatch, "run '" + manifests[i].run_id + "' yields " +
                                                std::to_string(per_run[i].size()) + " series, expected " +
                                                std::to_string(reference.size()));
    }
  }
  return out;
}

}  // namespace rwc

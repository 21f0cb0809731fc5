#pragma once

// Relative weight change between consecutive epoch snapshots of a layer:
//
//   NormRatio    sum|w_t - w_{t-1}| / sum|w_{t-1}|
//   ElementMean  mean over i with |w_{t-1,i}| >= eps of |w_t,i - w_{t-1,i}| / |w_{t-1,i}|
//
// All arithmetic is double precision with sequential row-major summation.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "rwc/error.hpp"
#include "rwc/snapshot.hpp"
#include "rwc/util.hpp"

namespace rwc {

enum class RwcMode { NormRatio, ElementMean };

/// Below this the baseline is treated as zero (L1 norm for NormRatio,
/// per-element magnitude for ElementMean).
inline constexpr double kDegenerateEpsilon = 1e-12;

inline constexpr std::string_view kDefaultLayerFilter = "*.weight";

constexpr std::string_view to_string(RwcMode mode) {
  return mode == RwcMode::NormRatio ? "norm" : "element";
}

inline std::optional<RwcMode> parse_rwc_mode(std::string_view text) {
  if (text == "norm") return RwcMode::NormRatio;
  if (text == "element") return RwcMode::ElementMean;
  return std::nullopt;
}

/// values[t-1] is the change from snapshot t-1 to snapshot t.
struct RwcSeries {
  std::string label;
  RwcMode mode = RwcMode::NormRatio;
  std::vector<double> values;

  friend bool operator==(const RwcSeries&, const RwcSeries&) = default;
};

inline double rwc_pair(std::span<const double> previous, std::span<const double> current, RwcMode mode) {
  if (previous.size() != current.size()) {
    throw Error(ErrorCode::ShapeMismatch, "element counts differ: " + std::to_string(previous.size()) + " vs " +
                                              std::to_string(current.size()));
  }
  if (mode == RwcMode::NormRatio) {
    double diff = 0.0;
    double base = 0.0;
    for (std::size_t i = 0; i < previous.size(); ++i) {
      diff += std::abs(current[i] - previous[i]);
      base += std::abs(previous[i]);
    }
    if (!(base >= kDegenerateEpsilon)) {
      throw Error(ErrorCode::DegenerateBaseline, "L1 norm of the previous weights is below 1e-12");
    }
    return diff / base;
  }

  double sum = 0.0;
  std::size_t used = 0;
  for (std::size_t i = 0; i < previous.size(); ++i) {
    const double base = std::abs(previous[i]);
    if (base < kDegenerateEpsilon) continue;
    sum += std::abs(current[i] - previous[i]) / base;
    ++used;
  }
  if (used == 0) {
    throw Error(ErrorCode::DegenerateBaseline, "every previous weight has magnitude below 1e-12");
  }
  return sum / static_cast<double>(used);
}

inline double rwc_pair(const TensorData& previous, const TensorData& current, RwcMode mode) {
  if (previous.shape != current.shape) {
    throw Error(ErrorCode::ShapeMismatch, "tensor shapes differ");
  }
  return rwc_pair(std::span<const double>(previous.values), std::span<const double>(current.values), mode);
}

namespace detail {

inline std::string shape_text(const std::vector<std::uint64_t>& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) out += (i ? "," : "") + std::to_string(shape[i]);
  return out + "]";
}

inline const TensorData& require_parameter(const TensorSnapshot& snap, const std::string& name, int epoch,
                                           const std::vector<std::uint64_t>* reference_shape) {
  const TensorData* t = snap.find(name);
  if (t == nullptr) {
    throw Error(ErrorCode::ParameterMissing, "parameter '" + name + "' missing at epoch " + std::to_string(epoch));
  }
  if (reference_shape != nullptr && t->shape != *reference_shape) {
    throw Error(ErrorCode::ShapeDrift, "parameter '" + name + "' has shape " + shape_text(t->shape) + " at epoch " +
                                           std::to_string(epoch) + ", expected " + shape_text(*reference_shape));
  }
  return *t;
}

inline double annotated_pair(const TensorData& prev, const TensorData& curr, RwcMode mode, const std::string& name,
                             std::size_t transition) {
  try {
    return rwc_pair(prev, curr, mode);
  } catch (const Error& e) {
    throw Error(e.code(), "parameter '" + name + "' transition " + std::to_string(transition) + ": " + e.message());
  }
}

}  // namespace detail

/// Series for one parameter across an ordered run. At most two snapshots are
/// resident at any time.
inline RwcSeries rwc_layer_series(std::span<const EpochPath> epoch_paths, const std::string& parameter_name,
                                  RwcMode mode) {
  if (epoch_paths.size() < 2) {
    throw Error(ErrorCode::InsufficientSnapshots,
                "need at least 2 snapshots, got " + std::to_string(epoch_paths.size()));
  }
  RwcSeries series{parameter_name, mode, {}};
  series.values.reserve(epoch_paths.size() - 1);

  TensorSnapshot previous = read_snapshot_file(epoch_paths[0].path);
  const auto shape = detail::require_parameter(previous, parameter_name, epoch_paths[0].epoch, nullptr).shape;
  for (std::size_t t = 1; t < epoch_paths.size(); ++t) {
    TensorSnapshot current = read_snapshot_file(epoch_paths[t].path);
    const auto& prev = detail::require_parameter(previous, parameter_name, epoch_paths[t - 1].epoch, &shape);
    const auto& curr = detail::require_parameter(current, parameter_name, epoch_paths[t].epoch, &shape);
    series.values.push_back(detail::annotated_pair(prev, curr, mode, parameter_name, t));
    previous = std::move(current);
  }
  return series;
}

/// Convenience overload numbering the paths 0, 1, 2, ...
inline RwcSeries rwc_layer_series(std::span<const std::filesystem::path> paths, const std::string& parameter_name,
                                  RwcMode mode) {
  std::vector<EpochPath> numbered;
  numbered.reserve(paths.size());
  for (std::size_t i = 0; i < paths.size(); ++i) numbered.push_back({static_cast<int>(i), paths[i]});
  return rwc_layer_series(std::span<const EpochPath>(numbered), parameter_name, mode);
}

/// Per-layer series for one run, in snapshot header order, plus the element
/// count of every selected parameter (used for parameter-count weighting).
struct RunSeries {
  std::vector<RwcSeries> series;
  std::map<std::string, std::uint64_t> param_counts;

  const RwcSeries* find(const std::string& label) const {
    for (const auto& s : series) {
      if (s.label == label) return &s;
    }
    return nullptr;
  }
};

/// Every parameter of the first snapshot whose name matches `name_filter`,
/// measured over the whole run. Snapshots are streamed once; each transition
/// holds only the two snapshots it compares. Layers within a transition are
/// spread over `workers` threads; results do not depend on the worker count.
inline RunSeries rwc_run(const std::filesystem::path& run_directory, const RunManifest& manifest,
                         const std::string& name_filter = std::string(kDefaultLayerFilter),
                         RwcMode mode = RwcMode::NormRatio, unsigned workers = 1) {
  const auto paths = list_epoch_paths(run_directory, manifest);
  if (paths.size() < 2) {
    throw Error(ErrorCode::InsufficientSnapshots,
                "run '" + manifest.run_id + "' has " + std::to_string(paths.size()) + " snapshot(s), need at least 2");
  }

  TensorSnapshot previous = read_snapshot_file(paths[0].path);
  RunSeries out;
  std::vector<std::vector<std::uint64_t>> shapes;
  for (const auto& [name, tensor] : previous.entries()) {
    if (!glob_match(name_filter, name)) continue;
    out.series.push_back({name, mode, {}});
    out.series.back().values.resize(paths.size() - 1);
    out.param_counts[name] = tensor.size();
    shapes.push_back(tensor.shape);
  }
  if (out.series.empty()) {
    throw Error(ErrorCode::EmptySelection, "no parameter in '" + paths[0].path.string() + "' matches filter '" +
                                               name_filter + "'");
  }

  for (std::size_t t = 1; t < paths.size(); ++t) {
    TensorSnapshot current = read_snapshot_file(paths[t].path);
    parallel_for(out.series.size(), workers, [&](std::size_t i) {
      auto& s = out.series[i];
      const auto& prev = detail::require_parameter(previous, s.label, paths[t - 1].epoch, &shapes[i]);
      const auto& curr = detail::require_parameter(current, s.label, paths[t].epoch, &shapes[i]);
      s.values[t - 1] = detail::annotated_pair(prev, curr, mode, s.label, t);
    });
    previous = std::move(current);
  }
  return out;
}

}  // namespace rwc

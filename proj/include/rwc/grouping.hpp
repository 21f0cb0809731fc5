#pragma once

// Layer groups: ordered rules that assign parameter names to named groups,
// presets for the ResNet-18 / VGG-19 / AlexNet groupings, and reduction of
// per-layer series to per-group series.

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "rwc/error.hpp"
#include "rwc/rwc.hpp"
#include "rwc/util.hpp"

namespace rwc {

enum class RuleKind { NamePattern, OrdinalRange };

struct GroupRule {
  RuleKind kind = RuleKind::NamePattern;
  std::string pattern;        // NamePattern: glob over parameter names
  std::string member_filter;  // OrdinalRange: glob selecting the ordered members
  int lo = 1;                 // OrdinalRange: inclusive, 1-based
  int hi = 1;
  std::string group;

  static GroupRule by_name(std::string pattern, std::string group) {
    GroupRule r;
    r.kind = RuleKind::NamePattern;
    r.pattern = std::move(pattern);
    r.group = std::move(group);
    return r;
  }

  static GroupRule by_ordinal(std::string member_filter, int lo, int hi, std::string group) {
    if (lo < 1 || lo > hi) {
      throw Error(ErrorCode::MalformedRules, "ordinal range [" + std::to_string(lo) + ", " + std::to_string(hi) +
                                                 "] must satisfy 1 <= lo <= hi");
    }
    GroupRule r;
    r.kind = RuleKind::OrdinalRange;
    r.member_filter = std::move(member_filter);
    r.lo = lo;
    r.hi = hi;
    r.group = std::move(group);
    return r;
  }

  friend bool operator==(const GroupRule&, const GroupRule&) = default;
};

enum class Architecture { Resnet18Blocks, Vgg19Eml, AlexnetEml };

inline std::optional<Architecture> parse_architecture(std::string_view name) {
  if (name == "resnet18") return Architecture::Resnet18Blocks;
  if (name == "vgg19") return Architecture::Vgg19Eml;
  if (name == "alexnet") return Architecture::AlexnetEml;
  return std::nullopt;
}

/// Convolution weight tensors, counted in order for the ordinal presets.
inline constexpr std::string_view kConvWeightFilter = "*conv*weight*";

inline std::vector<GroupRule> preset(Architecture architecture) {
  const std::string conv(kConvWeightFilter);
  switch (architecture) {
    case Architecture::Resnet18Blocks:
      // Stem convolution and classifier stay ungrouped.
      return {GroupRule::by_name("layer1.*", "block1"), GroupRule::by_name("layer2.*", "block2"),
              GroupRule::by_name("layer3.*", "block3"), GroupRule::by_name("layer4.*", "block4")};
    case Architecture::Vgg19Eml:
      // The source grouping says both "5 through 11" (middle) and "11
      // onwards" (later); 11 is kept in middle.
      return {GroupRule::by_ordinal(conv, 1, 4, "early"), GroupRule::by_ordinal(conv, 5, 11, "middle"),
              GroupRule::by_ordinal(conv, 12, 16, "later")};
    case Architecture::AlexnetEml:
      return {GroupRule::by_ordinal(conv, 1, 1, "early"), GroupRule::by_ordinal(conv, 2, 3, "middle"),
              GroupRule::by_ordinal(conv, 4, 5, "later")};
  }
  return {};
}

/// Rules compiled against a concrete, ordered layer list.
struct LayerGroupMap {
  std::vector<GroupRule> rules;
  std::map<std::string, std::string> resolved;  // parameter name -> group
  std::vector<std::string> group_order;         // groups with members, in first-rule order

  std::optional<std::string> group_of(const std::string& name) const {
    auto it = resolved.find(name);
    if (it == resolved.end()) return std::nullopt;
    return it->second;
  }

  friend bool operator==(const LayerGroupMap&, const LayerGroupMap&) = default;
};

/// First matching rule wins; unmatched names stay ungrouped.
inline LayerGroupMap compile_group_map(const std::vector<GroupRule>& rules, const std::vector<std::string>& layer_names) {
  if (layer_names.empty()) throw Error(ErrorCode::EmptySelection, "no layer names to group");
  {
    std::vector<std::string> sorted = layer_names;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
      throw Error(ErrorCode::InvalidField, "layer names must be unique");
    }
  }

  // ordinals[r][name] = 1-based position of name among rule r's members.
  std::vector<std::map<std::string, int>> ordinals(rules.size());
  for (std::size_t r = 0; r < rules.size(); ++r) {
    const auto& rule = rules[r];
    if (rule.kind != RuleKind::OrdinalRange) continue;
    int position = 0;
    for (const auto& name : layer_names) {
      if (glob_match(rule.member_filter, name)) ordinals[r][name] = ++position;
    }
    if (rule.hi > position) {
      throw Error(ErrorCode::RangeOutOfBounds, "rule for group '" + rule.group + "' needs ordinal " +
                                                   std::to_string(rule.hi) + " but only " + std::to_string(position) +
                                                   " layer(s) match '" + rule.member_filter + "'");
    }
  }

  LayerGroupMap map;
  map.rules = rules;
  std::vector<bool> rule_used(rules.size(), false);
  for (const auto& name : layer_names) {
    for (std::size_t r = 0; r < rules.size(); ++r) {
      const auto& rule = rules[r];
      bool hit = false;
      if (rule.kind == RuleKind::NamePattern) {
        hit = glob_match(rule.pattern, name);
      } else {
        auto it = ordinals[r].find(name);
        hit = it != ordinals[r].end() && it->second >= rule.lo && it->second <= rule.hi;
      }
      if (hit) {
        map.resolved.emplace(name, rule.group);
        rule_used[r] = true;
        break;
      }
    }
  }
  for (std::size_t r = 0; r < rules.size(); ++r) {
    if (rule_used[r] &&
        std::find(map.group_order.begin(), map.group_order.end(), rules[r].group) == map.group_order.end()) {
      map.group_order.push_back(rules[r].group);
    }
  }
  return map;
}

enum class Weighting { Unweighted, ParamCount };

inline std::optional<Weighting> parse_weighting(std::string_view text) {
  if (text == "unweighted") return Weighting::Unweighted;
  if (text == "paramcount") return Weighting::ParamCount;
  return std::nullopt;
}

/// Per transition, the (optionally parameter-count weighted) mean of the
/// member layers' values. Groups without members are omitted.
inline std::vector<RwcSeries> group_series(const std::vector<RwcSeries>& per_layer, const LayerGroupMap& map,
                                           Weighting weighting = Weighting::Unweighted,
                                           const std::map<std::string, std::uint64_t>& param_counts = {}) {
  std::optional<std::size_t> length;
  for (const auto& s : per_layer) {
    if (length && s.values.size() != *length) {
      throw Error(ErrorCode::LengthMismatch, "series '" + s.label + "' has length " + std::to_string(s.values.size()) +
                                                 ", expected " + std::to_string(*length));
    }
    length = s.values.size();
  }
  for (const auto& [name, group] : map.resolved) {
    const bool present =
        std::any_of(per_layer.begin(), per_layer.end(), [&](const RwcSeries& s) { return s.label == name; });
    if (!present) throw Error(ErrorCode::ParameterMissing, "grouped layer '" + name + "' has no series");
  }

  std::vector<RwcSeries> out;
  for (const auto& group : map.group_order) {
    std::vector<const RwcSeries*> members;
    for (const auto& s : per_layer) {
      auto g = map.group_of(s.label);
      if (g && *g == group) members.push_back(&s);
    }
    if (members.empty()) continue;

    RwcSeries result{group, members.front()->mode, std::vector<double>(members.front()->values.size())};
    if (weighting == Weighting::Unweighted) {
      for (std::size_t t = 0; t < result.values.size(); ++t) {
        RunningMean mean;
        for (const auto* m : members) mean.add(m->values[t]);
        result.values[t] = mean.value();
      }
    } else {
      std::vector<double> weights;
      double total = 0.0;
      for (const auto* m : members) {
        auto it = param_counts.find(m->label);
        if (it == param_counts.end() || it->second == 0) {
          throw Error(ErrorCode::MissingParamCount, "no positive parameter count for '" + m->label + "'");
        }
        weights.push_back(static_cast<double>(it->second));
        total += weights.back();
      }
      for (std::size_t t = 0; t < result.values.size(); ++t) {
        double acc = 0.0;
        double lo = members[0]->values[t];
        double hi = lo;
        for (std::size_t i = 0; i < members.size(); ++i) {
          const double v = members[i]->values[t];
          acc += weights[i] * v;
          lo = std::min(lo, v);
          hi = std::max(hi, v);
        }
        result.values[t] = std::clamp(acc / total, lo, hi);
      }
    }
    out.push_back(std::move(result));
  }
  return out;
}

/// Parses a rules document: a JSON list of
///   {"kind": "name", "pattern": GLOB, "group": NAME}
///   {"kind": "ordinal", "member_filter": GLOB, "range": [lo, hi], "group": NAME}
inline std::vector<GroupRule> parse_rules(std::string_view text) {
  using json = nlohmann::json;
  json doc;
  try {
    doc = json::parse(text.begin(), text.end());
  } catch (const json::exception& e) {
    throw Error(ErrorCode::MalformedRules, std::string("not valid JSON: ") + e.what());
  }
  if (!doc.is_array()) throw Error(ErrorCode::MalformedRules, "rules document must be a JSON list");

  std::vector<GroupRule> rules;
  for (std::size_t i = 0; i < doc.size(); ++i) {
    const auto& node = doc[i];
    const std::string where = "rule " + std::to_string(i);
    auto string_field = [&](const char* key) {
      if (!node.contains(key) || !node[key].is_string()) {
        throw Error(ErrorCode::MalformedRules, where + ": field '" + key + "' must be a string");
      }
      return node[key].get<std::string>();
    };
    if (!node.is_object()) throw Error(ErrorCode::MalformedRules, where + " is not an object");
    const auto kind = string_field("kind");
    const auto group = string_field("group");
    if (group.empty()) throw Error(ErrorCode::MalformedRules, where + ": group must be non-empty");
    if (kind == "name") {
      for (const auto& [key, _] : node.items()) {
        if (key != "kind" && key != "pattern" && key != "group") {
          throw Error(ErrorCode::MalformedRules, where + ": unknown field '" + key + "'");
        }
      }
      rules.push_back(GroupRule::by_name(string_field("pattern"), group));
    } else if (kind == "ordinal") {
      for (const auto& [key, _] : node.items()) {
        if (key != "kind" && key != "member_filter" && key != "range" && key != "group") {
          throw Error(ErrorCode::MalformedRules, where + ": unknown field '" + key + "'");
        }
      }
      const auto filter = node.contains("member_filter") ? string_field("member_filter") : std::string(kConvWeightFilter);
      if (!node.contains("range") || !node["range"].is_array() || node["range"].size() != 2 ||
          !node["range"][0].is_number_integer() || !node["range"][1].is_number_integer()) {
        throw Error(ErrorCode::MalformedRules, where + ": range must be [lo, hi] integers");
      }
      const auto lo = node["range"][0].get<std::int64_t>();
      const auto hi = node["range"][1].get<std::int64_t>();
      if (lo < 1 || lo > hi || hi > std::numeric_limits<int>::max()) {
        throw Error(ErrorCode::MalformedRules, where + ": range must satisfy 1 <= lo <= hi");
      }
      rules.push_back(GroupRule::by_ordinal(filter, static_cast<int>(lo), static_cast<int>(hi), group));
    } else {
      throw Error(ErrorCode::MalformedRules, where + ": kind must be \"name\" or \"ordinal\", got \"" + kind + "\"");
    }
  }
  return rules;
}

}  // namespace rwc

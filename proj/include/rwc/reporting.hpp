#pragma once

// Long-format CSV for series and aggregates, the trend document, and
// standalone SVG line plots. Every writer is a byte-deterministic function
// of its input; text is UTF-8 with LF line endings.

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"
#include "rwc/aggregation.hpp"
#include "rwc/error.hpp"
#include "rwc/rwc.hpp"
#include "rwc/trends.hpp"
#include "rwc/util.hpp"

namespace rwc {

inline constexpr std::string_view kSeriesCsvHeader = "run_id,label,epoch,value";
inline constexpr std::string_view kAggregateCsvHeader = "label,epoch,mean,std,n";

namespace detail {

inline void check_csv_field(const std::string& field) {
  if (field.find_first_of(",\"\r\n") != std::string::npos) {
    throw Error(ErrorCode::MalformedCsv, "field '" + field + "' contains a comma, quote or line break");
  }
}

template <typename T>
std::vector<std::size_t> label_order(const std::vector<T>& items, auto&& label_of) {
  std::vector<std::size_t> order(items.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return label_of(items[a]) < label_of(items[b]); });
  return order;
}

}  // namespace detail

struct RunSeriesRows {
  std::string run_id;
  std::vector<RwcSeries> series;
};

/// run_id,label,epoch,value; rows ordered by label, then epoch.
inline std::string series_to_csv(const std::vector<RunSeriesRows>& runs) {
  struct Item {
    const std::string* run_id;
    const RwcSeries* series;
  };
  std::vector<Item> items;
  for (const auto& run : runs) {
    detail::check_csv_field(run.run_id);
    for (const auto& s : run.series) {
      detail::check_csv_field(s.label);
      items.push_back({&run.run_id, &s});
    }
  }
  std::string out(kSeriesCsvHeader);
  out += '\n';
  for (auto i : detail::label_order(items, [](const Item& it) -> const std::string& { return it.series->label; })) {
    const auto& s = *items[i].series;
    for (std::size_t t = 0; t < s.values.size(); ++t) {
      out += *items[i].run_id + ',' + s.label + ',' + std::to_string(t + 1) + ',' + format_g17(s.values[t]) + '\n';
    }
  }
  return out;
}

inline std::string series_to_csv(const std::string& run_id, const std::vector<RwcSeries>& series) {
  return series_to_csv(std::vector<RunSeriesRows>{{run_id, series}});
}

/// label,epoch,mean,std,n; rows ordered by label, then epoch.
inline std::string aggregate_to_csv(const std::vector<AggregateSeries>& aggregates) {
  std::string out(kAggregateCsvHeader);
  out += '\n';
  for (auto i : detail::label_order(aggregates, [](const AggregateSeries& a) -> const std::string& { return a.label; })) {
    const auto& a = aggregates[i];
    detail::check_csv_field(a.label);
    for (std::size_t t = 0; t < a.mean.size(); ++t) {
      out += a.label + ',' + std::to_string(t + 1) + ',' + format_g17(a.mean[t]) + ',' + format_g17(a.std[t]) + ',' +
             std::to_string(a.n) + '\n';
    }
  }
  return out;
}

enum class CsvKind { Series, Aggregate };

struct CurveTable {
  CsvKind kind = CsvKind::Series;
  std::vector<LabeledCurve> curves;  // value (series) or mean (aggregate), by label in file order
};

/// Reads either CSV flavour back into one curve per label. Epochs of each
/// label must run 1, 2, ... without gaps or repeats.
inline CurveTable read_curves_csv(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    auto line = text.substr(pos, end - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (!line.empty()) lines.push_back(line);
    pos = end + 1;
  }
  if (lines.empty()) throw Error(ErrorCode::MalformedCsv, "empty CSV");

  CurveTable table;
  std::size_t columns = 0;
  std::size_t label_col = 0;
  std::size_t value_col = 0;
  if (lines[0] == kSeriesCsvHeader) {
    table.kind = CsvKind::Series;
    columns = 4;
    label_col = 1;
    value_col = 3;
  } else if (lines[0] == kAggregateCsvHeader) {
    table.kind = CsvKind::Aggregate;
    columns = 5;
    label_col = 0;
    value_col = 2;
  } else {
    throw Error(ErrorCode::MalformedCsv, "unrecognized header '" + std::string(lines[0]) + "'");
  }

  std::map<std::string, std::size_t> index;
  std::map<std::string, std::string> run_of_label;
  for (std::size_t ln = 1; ln < lines.size(); ++ln) {
    std::vector<std::string_view> fields;
    std::string_view rest = lines[ln];
    while (true) {
      const auto comma = rest.find(',');
      fields.push_back(rest.substr(0, comma));
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
    const std::string where = "line " + std::to_string(ln + 1);
    if (fields.size() != columns) {
      throw Error(ErrorCode::MalformedCsv, where + ": expected " + std::to_string(columns) + " fields, got " +
                                               std::to_string(fields.size()));
    }
    const std::string label(fields[label_col]);
    if (label.empty()) throw Error(ErrorCode::MalformedCsv, where + ": empty label");
    std::size_t epoch = 0;
    double value = 0.0;
    if (!parse_int(fields[label_col + 1], epoch) || epoch < 1) {
      throw Error(ErrorCode::MalformedCsv, where + ": epoch must be a positive integer");
    }
    if (!parse_double(fields[value_col], value) || !std::isfinite(value)) {
      throw Error(ErrorCode::MalformedCsv, where + ": value is not a finite number");
    }
    if (table.kind == CsvKind::Series) {
      const std::string run(fields[0]);
      auto [it, inserted] = run_of_label.emplace(label, run);
      if (!inserted && it->second != run) {
        throw Error(ErrorCode::MalformedCsv, where + ": label '" + label + "' appears for several runs; aggregate first");
      }
    }
    auto [it, inserted] = index.emplace(label, table.curves.size());
    if (inserted) table.curves.push_back({label, {}});
    auto& values = table.curves[it->second].second;
    if (epoch != values.size() + 1) {
      throw Error(ErrorCode::MalformedCsv, where + ": label '" + label + "' epoch " + std::to_string(epoch) +
                                               " out of sequence (expected " + std::to_string(values.size() + 1) + ")");
    }
    values.push_back(value);
  }
  return table;
}

/// Keys in fixed order: groups, window, means, pairwise, ordering.
inline std::string trend_to_json(const TrendReport& report) {
  nlohmann::ordered_json doc;
  doc["groups"] = report.groups;
  nlohmann::ordered_json window;
  window["skip_initial"] = report.window.skip_initial;
  if (report.window.length) {
    window["length"] = *report.window.length;
  } else {
    window["length"] = "all";
  }
  doc["window"] = std::move(window);
  nlohmann::ordered_json means = nlohmann::ordered_json::object();
  for (const auto& [group, mean] : report.means) means[group] = mean;
  doc["means"] = std::move(means);
  nlohmann::ordered_json pairwise = nlohmann::ordered_json::array();
  for (const auto& p : report.pairwise) {
    nlohmann::ordered_json entry;
    entry["a"] = p.a;
    entry["b"] = p.b;
    entry["dominance"] = p.dominance;
    entry["mean_gap"] = p.mean_gap;
    pairwise.push_back(std::move(entry));
  }
  doc["pairwise"] = std::move(pairwise);
  doc["ordering"] = report.ordering;
  return doc.dump(2) + "\n";
}

// ---------------------------------------------------------------------------
// SVG

enum class YScale { Linear, Log10 };

struct PlotSpec {
  std::string title;
  std::vector<LabeledCurve> curves;
  YScale y_scale = YScale::Linear;
  int width = 960;
  int height = 540;
  std::string x_label = "epoch";
  std::string y_label = "relative weight change";
};

inline constexpr std::array<std::string_view, 8> kPalette = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728",
                                                             "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};

namespace detail {

inline std::string xml_escape(std::string_view text) {
  std::string out;
  for (char c : text) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      case '\'': out += "&apos;"; break;
      default: out += c;
    }
  }
  return out;
}

inline std::string fixed2(double v) {
  if (std::abs(v) < 0.005) v = 0.0;  // no "-0.00"
  std::array<char, 64> buf{};
  auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v, std::chars_format::fixed, 2);
  return ec == std::errc{} ? std::string(buf.data(), end) : std::string("0");
}

inline std::string tick_text(double v) {
  if (std::abs(v) < 1e-300) return "0";
  std::array<char, 64> buf{};
  auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v, std::chars_format::general, 3);
  return ec == std::errc{} ? std::string(buf.data(), end) : std::string("?");
}

}  // namespace detail

inline std::string render_svg(const PlotSpec& spec) {
  if (spec.curves.empty()) throw Error(ErrorCode::EmptyCurves, "plot needs at least one curve");
  const std::size_t length = spec.curves.front().second.size();
  if (length == 0) throw Error(ErrorCode::EmptyCurves, "curves must have at least one point");
  for (const auto& [label, values] : spec.curves) {
    if (values.size() != length) {
      throw Error(ErrorCode::LengthMismatch, "curve '" + label + "' has " + std::to_string(values.size()) +
                                                 " points, expected " + std::to_string(length));
    }
    for (double v : values) {
      if (!std::isfinite(v)) throw Error(ErrorCode::InvalidField, "curve '" + label + "' has a non-finite value");
      if (spec.y_scale == YScale::Log10 && !(v > 0)) {
        throw Error(ErrorCode::NonPositiveOnLogScale, "curve '" + label + "' has value " + format_g17(v) +
                                                          " which cannot be shown on a log scale");
      }
    }
  }
  if (spec.width < 320 || spec.height < 200) {
    throw Error(ErrorCode::InvalidField, "plot must be at least 320x200");
  }

  auto transform = [&](double v) { return spec.y_scale == YScale::Log10 ? std::log10(v) : v; };
  double lo = transform(spec.curves.front().second.front());
  double hi = lo;
  for (const auto& [_, values] : spec.curves) {
    for (double v : values) {
      lo = std::min(lo, transform(v));
      hi = std::max(hi, transform(v));
    }
  }
  if (spec.y_scale == YScale::Linear) lo = std::min(lo, 0.0);
  if (hi - lo < 1e-300) {
    const double pad = std::abs(hi) > 0 ? std::abs(hi) * 0.1 : 1.0;
    lo -= pad;
    hi += pad;
  }

  const double left = 80, right = 200, top = 50, bottom = 60;
  const double plot_w = spec.width - left - right;
  const double plot_h = spec.height - top - bottom;
  auto px = [&](std::size_t i) {
    return length == 1 ? left + plot_w / 2 : left + plot_w * static_cast<double>(i) / static_cast<double>(length - 1);
  };
  auto py = [&](double y) { return top + plot_h * (1.0 - (y - lo) / (hi - lo)); };

  std::ostringstream svg;
  svg << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" << spec.width << "\" height=\""
      << spec.height << "\" viewBox=\"0 0 " << spec.width << ' ' << spec.height << "\">\n";
  svg << "<rect x=\"0\" y=\"0\" width=\"" << spec.width << "\" height=\"" << spec.height << "\" fill=\"white\"/>\n";
  svg << "<text x=\"" << detail::fixed2(left + plot_w / 2) << "\" y=\"30\" text-anchor=\"middle\" "
      << "font-family=\"sans-serif\" font-size=\"18\">" << detail::xml_escape(spec.title) << "</text>\n";

  // Axes.
  svg << "<g stroke=\"black\" stroke-width=\"1\">\n";
  svg << "<line x1=\"" << detail::fixed2(left) << "\" y1=\"" << detail::fixed2(top + plot_h) << "\" x2=\""
      << detail::fixed2(left + plot_w) << "\" y2=\"" << detail::fixed2(top + plot_h) << "\"/>\n";
  svg << "<line x1=\"" << detail::fixed2(left) << "\" y1=\"" << detail::fixed2(top) << "\" x2=\""
      << detail::fixed2(left) << "\" y2=\"" << detail::fixed2(top + plot_h) << "\"/>\n";
  svg << "</g>\n";

  svg << "<g font-family=\"sans-serif\" font-size=\"12\">\n";
  constexpr int kYTicks = 5;
  for (int k = 0; k <= kYTicks; ++k) {
    const double y = lo + (hi - lo) * k / kYTicks;
    const double yy = py(y);
    const double shown = spec.y_scale == YScale::Log10 ? std::pow(10.0, y) : y;
    svg << "<line x1=\"" << detail::fixed2(left - 5) << "\" y1=\"" << detail::fixed2(yy) << "\" x2=\""
        << detail::fixed2(left) << "\" y2=\"" << detail::fixed2(yy) << "\" stroke=\"black\"/>\n";
    svg << "<text x=\"" << detail::fixed2(left - 8) << "\" y=\"" << detail::fixed2(yy + 4)
        << "\" text-anchor=\"end\">" << detail::tick_text(shown) << "</text>\n";
  }
  const std::size_t x_step = std::max<std::size_t>(1, (length + 9) / 10);
  for (std::size_t i = 0; i < length; i += x_step) {
    const double xx = px(i);
    svg << "<line x1=\"" << detail::fixed2(xx) << "\" y1=\"" << detail::fixed2(top + plot_h) << "\" x2=\""
        << detail::fixed2(xx) << "\" y2=\"" << detail::fixed2(top + plot_h + 5) << "\" stroke=\"black\"/>\n";
    svg << "<text x=\"" << detail::fixed2(xx) << "\" y=\"" << detail::fixed2(top + plot_h + 20)
        << "\" text-anchor=\"middle\">" << (i + 1) << "</text>\n";
  }
  svg << "<text x=\"" << detail::fixed2(left + plot_w / 2) << "\" y=\"" << detail::fixed2(spec.height - 15.0)
      << "\" text-anchor=\"middle\">" << detail::xml_escape(spec.x_label) << "</text>\n";
  const std::string y_axis_label =
      spec.y_scale == YScale::Log10 ? spec.y_label + " (log10)" : spec.y_label;
  svg << "<text x=\"20\" y=\"" << detail::fixed2(top + plot_h / 2) << "\" text-anchor=\"middle\" transform=\"rotate(-90 20 "
      << detail::fixed2(top + plot_h / 2) << ")\">" << detail::xml_escape(y_axis_label) << "</text>\n";
  svg << "</g>\n";

  for (std::size_t c = 0; c < spec.curves.size(); ++c) {
    const auto& values = spec.curves[c].second;
    svg << "<polyline fill=\"none\" stroke=\"" << kPalette[c % kPalette.size()] << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < values.size(); ++i) {
      svg << (i ? " " : "") << detail::fixed2(px(i)) << ',' << detail::fixed2(py(transform(values[i])));
    }
    svg << "\"/>\n";
  }

  svg << "<g font-family=\"sans-serif\" font-size=\"12\">\n";
  for (std::size_t c = 0; c < spec.curves.size(); ++c) {
    const double ly = top + 10 + 20.0 * static_cast<double>(c);
    const double lx = left + plot_w + 20;
    svg << "<g class=\"legend-entry\"><line x1=\"" << detail::fixed2(lx) << "\" y1=\"" << detail::fixed2(ly)
        << "\" x2=\"" << detail::fixed2(lx + 24) << "\" y2=\"" << detail::fixed2(ly) << "\" stroke=\""
        << kPalette[c % kPalette.size()] << "\" stroke-width=\"2\"/><text x=\"" << detail::fixed2(lx + 30)
        << "\" y=\"" << detail::fixed2(ly + 4) << "\">" << detail::xml_escape(spec.curves[c].first)
        << "</text></g>\n";
  }
  svg << "</g>\n";
  svg << "</svg>\n";
  return svg.str();
}

}  // namespace rwc

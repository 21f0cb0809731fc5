// rwc: train desk-scale runs, measure layer-wise relative weight change,
// average across seeds, summarize trends and plot.
//
//   rwc train-demo --seed 0 --epochs 60 --out runs/s0
//   rwc analyze    --run runs/s0 --out s0.csv
//   rwc aggregate  --runs runs/s0 runs/s1 ... --out agg.csv
//   rwc trends     --input agg.csv --out trends.json
//   rwc plot       --input agg.csv --out agg.svg
//
// Exit status: 0 success, 1 user/input error, 2 internal error.

#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <iterator>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "rwc/aggregation.hpp"
#include "rwc/error.hpp"
#include "rwc/grouping.hpp"
#include "rwc/reporting.hpp"
#include "rwc/rwc.hpp"
#include "rwc/snapshot.hpp"
#include "rwc/trainer.hpp"
#include "rwc/trends.hpp"
#include "rwc/util.hpp"

namespace fs = std::filesystem;

namespace {

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw rwc::Error(rwc::ErrorCode::IoFailure, "cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_text(const fs::path& path, const std::string& text) {
  std::error_code ec;
  if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw rwc::Error(rwc::ErrorCode::IoFailure, "cannot write '" + path.string() + "'");
  out << text;
  out.close();
  if (!out) throw rwc::Error(rwc::ErrorCode::IoFailure, "failed writing '" + path.string() + "'");
}

struct AnalysisFlags {
  std::string mode = "norm";
  std::string filter = std::string(rwc::kDefaultLayerFilter);
  std::string preset;
  std::string rules_file;
  std::string weighting = "unweighted";

  void attach(CLI::App& cmd) {
    cmd.add_option("--mode", mode, "RWC reading: norm (L1 norm ratio) or element (mean per-element change)")
        ->check(CLI::IsMember({"norm", "element"}))
        ->capture_default_str();
    cmd.add_option("--filter", filter, "glob selecting parameters to measure")->capture_default_str();
    auto* p = cmd.add_option("--preset", preset, "grouping preset: resnet18, vgg19 or alexnet")
                  ->check(CLI::IsMember({"resnet18", "vgg19", "alexnet"}));
    auto* r = cmd.add_option("--rules", rules_file, "grouping rules document (JSON list)")->check(CLI::ExistingFile);
    p->excludes(r);
    cmd.add_option("--weighting", weighting, "group reduction: unweighted or paramcount")
        ->check(CLI::IsMember({"unweighted", "paramcount"}))
        ->capture_default_str();
  }

  rwc::AnalysisOptions options() const {
    rwc::AnalysisOptions o;
    o.mode = *rwc::parse_rwc_mode(mode);
    o.filter = filter;
    o.weighting = *rwc::parse_weighting(weighting);
    if (!preset.empty()) {
      o.rules = rwc::preset(*rwc::parse_architecture(preset));
    } else if (!rules_file.empty()) {
      o.rules = rwc::parse_rules(read_text(rules_file));
    }
    return o;
  }
};

int run(int argc, char** argv) {
  CLI::App app{"Layer-wise relative weight change (RWC) analysis"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "show help for every subcommand");

  // train-demo
  auto* train_cmd = app.add_subcommand("train-demo", "train the desk-scale MLP and write per-epoch snapshots");
  std::uint64_t seed = 0;
  int epochs = rwc::TrainerConfig{}.epochs;
  std::string train_out;
  std::string config_file;
  auto* seed_opt = train_cmd->add_option("--seed", seed, "random seed (data, initialization, batch order)")
                       ->capture_default_str();
  auto* epochs_opt = train_cmd->add_option("--epochs", epochs, "number of training epochs (>= 1)")->capture_default_str();
  train_cmd->add_option("--out", train_out, "run directory to create")->required();
  train_cmd->add_option("--config", config_file, "trainer config document (JSON)")->check(CLI::ExistingFile);

  // analyze
  auto* analyze_cmd = app.add_subcommand("analyze", "per-layer (or per-group) RWC series of one run as CSV");
  std::string run_dir;
  std::string analyze_out;
  AnalysisFlags analyze_flags;
  analyze_cmd->add_option("--run", run_dir, "run directory holding manifest.json")->required();
  analyze_flags.attach(*analyze_cmd);
  analyze_cmd->add_option("--out", analyze_out, "output CSV")->required();

  // aggregate
  auto* aggregate_cmd = app.add_subcommand("aggregate", "mean/std of RWC series across seed runs as CSV");
  std::vector<std::string> run_dirs;
  std::string aggregate_out;
  AnalysisFlags aggregate_flags;
  aggregate_cmd->add_option("--runs", run_dirs, "run directories (one per seed)")->required()->expected(1, -1);
  aggregate_flags.attach(*aggregate_cmd);
  aggregate_cmd->add_option("--out", aggregate_out, "output CSV")->required();

  // trends
  auto* trends_cmd = app.add_subcommand("trends", "window means, pairwise dominance and ordering as JSON");
  std::string trends_in;
  std::string trends_out;
  std::size_t skip = 0;
  std::string window = "all";
  trends_cmd->add_option("--input", trends_in, "series or aggregate CSV")->required()->check(CLI::ExistingFile);
  trends_cmd->add_option("--skip", skip, "initial transitions to skip")->capture_default_str();
  trends_cmd->add_option("--window", window, "transitions to use after skipping: N or all")->capture_default_str();
  trends_cmd->add_option("--out", trends_out, "output JSON")->required();

  // plot
  auto* plot_cmd = app.add_subcommand("plot", "render curves from a series or aggregate CSV as SVG");
  std::string plot_in;
  std::string plot_out;
  std::string title = "Relative weight change";
  bool log_y = false;
  plot_cmd->add_option("--input", plot_in, "series or aggregate CSV")->required()->check(CLI::ExistingFile);
  plot_cmd->add_flag("--log-y", log_y, "log10 y axis (values must be > 0)");
  plot_cmd->add_option("--title", title, "plot title")->capture_default_str();
  plot_cmd->add_option("--out", plot_out, "output SVG")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  const unsigned workers = rwc::thread_count();

  if (*train_cmd) {
    rwc::TrainerConfig config;
    if (!config_file.empty()) config = rwc::parse_trainer_config(read_text(config_file));
    if (seed_opt->count() > 0) config.seed = seed;
    if (epochs_opt->count() > 0 || config_file.empty()) config.epochs = epochs;
    const auto result = rwc::train(config, train_out);
    std::cout << (fs::path(train_out) / rwc::RunManifest::kFileName).string() << "\n";
    std::cerr << "run " << result.manifest.run_id << ": " << config.epochs << " epochs, final train accuracy "
              << result.final_epoch.accuracy << ", loss " << result.final_epoch.loss << "\n";
  } else if (*analyze_cmd) {
    const auto manifest = rwc::load_run_manifest(run_dir);
    const auto series = rwc::analyze_run(run_dir, manifest, analyze_flags.options(), workers);
    write_text(analyze_out, rwc::series_to_csv(manifest.run_id, series));
  } else if (*aggregate_cmd) {
    std::vector<fs::path> dirs(run_dirs.begin(), run_dirs.end());
    const auto aggregates = rwc::aggregate_runs(dirs, aggregate_flags.options(), workers);
    write_text(aggregate_out, rwc::aggregate_to_csv(aggregates));
  } else if (*trends_cmd) {
    rwc::Window w;
    w.skip_initial = skip;
    if (window != "all") {
      std::size_t length = 0;
      if (!rwc::parse_int(std::string_view(window), length) || length == 0) {
        throw rwc::Error(rwc::ErrorCode::InvalidField, "--window must be a positive integer or 'all', got '" + window + "'");
      }
      w.length = length;
    }
    const auto table = rwc::read_curves_csv(read_text(trends_in));
    write_text(trends_out, rwc::trend_to_json(rwc::trend_report(table.curves, w)));
  } else if (*plot_cmd) {
    rwc::PlotSpec spec;
    spec.title = title;
    spec.curves = rwc::read_curves_csv(read_text(plot_in)).curves;
    spec.y_scale = log_y ? rwc::YScale::Log10 : rwc::YScale::Linear;
    write_text(plot_out, rwc::render_svg(spec));
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const rwc::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 2;
  } catch (...) {
    std::cerr << "internal error\n";
    return 2;
  }
}

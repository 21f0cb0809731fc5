// Acceptance suite: one PASS/FAIL line per criterion, tolerances pinned
// below. Exit status is 0 only when every criterion passes.
//
//   acceptance [work-directory]

#include <sys/wait.h>

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "rwc/grouping.hpp"
#include "rwc/reporting.hpp"
#include "rwc/rwc.hpp"
#include "rwc/snapshot.hpp"
#include "rwc/trainer.hpp"
#include "rwc/trends.hpp"

namespace fs = std::filesystem;
using namespace rwc;

namespace {

constexpr double kFixtureTol = 1e-12;
constexpr double kInvarianceTol = 1e-12;
constexpr double kOracleTol = 1e-12;
constexpr double kGradTol = 1e-4;
constexpr double kFdStep = 1e-5;
constexpr double kLogKTol = 1e-12;
constexpr double kSgdTol = 1e-15;
constexpr double kPipelineSeconds = 60.0;
constexpr double kMinFinalAccuracy = 0.95;
constexpr double kEdgeFraction = 0.10;

struct Verdict {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok && pass) {
      pass = false;
      detail = what;
    } else if (!ok) {
      detail += "; " + what;
    }
  }
};

std::string g(double v) {
  std::ostringstream s;
  s.precision(3);
  s << v;
  return s.str();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + p.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

double relative(double got, double want) { return std::abs(got - want) / std::max(std::abs(want), 1e-300); }

std::vector<double> random_values(std::mt19937_64& gen, std::size_t n) {
  std::uniform_real_distribution<double> mag(-3, 3);
  std::uniform_int_distribution<int> sign(0, 1);
  std::vector<double> v(n);
  for (auto& x : v) x = (sign(gen) ? 1 : -1) * std::pow(10.0, mag(gen));
  return v;
}

std::size_t random_size(std::mt19937_64& gen) { return std::uniform_int_distribution<std::size_t>(1, 2000)(gen); }

// ---------------------------------------------------------------------------

Verdict rwc_fixtures() {
  Verdict v;
  const std::vector<double> a0 = {1, -2, 3}, a1 = {1.5, -1, 3};
  const std::vector<double> b0 = {1, 4}, b1 = {2, 2};
  const double r1 = rwc_pair(a0, a1, RwcMode::NormRatio);
  const double r2 = rwc_pair(b0, b1, RwcMode::NormRatio);
  const double r3 = rwc_pair(b0, b1, RwcMode::ElementMean);
  v.require(std::abs(r1 - 0.25) <= kFixtureTol, "norm fixture 1 gave " + format_g17(r1));
  v.require(std::abs(r2 - 0.6) <= kFixtureTol, "norm fixture 2 gave " + format_g17(r2));
  v.require(std::abs(r3 - 0.75) <= kFixtureTol, "element fixture gave " + format_g17(r3));
  for (auto mode : {RwcMode::NormRatio, RwcMode::ElementMean}) {
    v.require(rwc_pair(a0, a0, mode) == 0.0, "identical input not exactly 0");
  }
  if (v.pass) v.detail = "0.25, 0.6, 0.75 and identical -> 0";
  return v;
}

Verdict invariance() {
  Verdict v;
  std::mt19937_64 gen(1001);
  std::uniform_real_distribution<double> scale_exp(-6, 6);
  double worst_scale = 0, worst_perm = 0;
  for (int trial = 0; trial < 500; ++trial) {
    const auto n = random_size(gen);
    const auto prev = random_values(gen, n);
    const auto curr = random_values(gen, n);
    const double c = std::pow(10.0, scale_exp(gen));
    std::vector<double> sp(prev), sc(curr);
    for (auto& x : sp) x *= c;
    for (auto& x : sc) x *= c;
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), gen);
    std::vector<double> pp(n), pc(n);
    for (std::size_t i = 0; i < n; ++i) {
      pp[i] = prev[perm[i]];
      pc[i] = curr[perm[i]];
    }
    for (auto mode : {RwcMode::NormRatio, RwcMode::ElementMean}) {
      const double base = rwc_pair(prev, curr, mode);
      worst_scale = std::max(worst_scale, relative(rwc_pair(sp, sc, mode), base));
      worst_perm = std::max(worst_perm, relative(rwc_pair(pp, pc, mode), base));
    }
  }
  v.require(worst_scale <= kInvarianceTol, "scale deviation " + g(worst_scale));
  v.require(worst_perm <= kInvarianceTol, "permutation deviation " + g(worst_perm));
  v.detail = "500 trials each, max rel dev scale " + g(worst_scale) + ", permutation " + g(worst_perm) +
             (v.pass ? "" : " | " + v.detail);
  return v;
}

Verdict oracle() {
  Verdict v;
  std::mt19937_64 gen(2002);
  double worst = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const auto n = random_size(gen);
    const auto prev = random_values(gen, n);
    const auto curr = random_values(gen, n);
    // Two passes, extended precision.
    long double base = 0, diff = 0;
    for (double p : prev) base += std::fabs(static_cast<long double>(p));
    for (std::size_t i = 0; i < n; ++i) {
      diff += std::fabs(static_cast<long double>(curr[i]) - static_cast<long double>(prev[i]));
    }
    worst = std::max(worst, relative(rwc_pair(prev, curr, RwcMode::NormRatio), static_cast<double>(diff / base)));
  }
  v.require(worst <= kOracleTol, "max rel deviation " + g(worst));
  v.detail = "1000 pairs, max rel deviation " + g(worst);
  return v;
}

TensorSnapshot random_snapshot(std::mt19937_64& gen) {
  std::uniform_int_distribution<int> count(0, 5), rank(0, 4), dim(0, 6), coin(0, 1);
  std::uniform_int_distribution<std::uint64_t> bits;
  TensorSnapshot snap;
  const int n = count(gen);
  for (int t = 0; t < n; ++t) {
    std::vector<std::uint64_t> shape(rank(gen));
    for (auto& d : shape) d = static_cast<std::uint64_t>(dim(gen));
    const auto dtype = coin(gen) ? Dtype::F32 : Dtype::F64;
    std::vector<double> values(element_count(shape));
    for (auto& x : values) {
      do {
        x = dtype == Dtype::F32 ? static_cast<double>(std::bit_cast<float>(static_cast<std::uint32_t>(bits(gen))))
                                : std::bit_cast<double>(bits(gen));
      } while (!std::isfinite(x));
    }
    snap.add("t" + std::to_string(t) + ".weight", TensorData(dtype, std::move(shape), std::move(values)));
  }
  if (coin(gen)) snap.metadata["epoch"] = std::to_string(n);
  return snap;
}

ErrorCode decode_error(const std::string& bytes) {
  try {
    decode_snapshot(bytes);
  } catch (const Error& e) {
    return e.code();
  }
  throw std::runtime_error("fixture decoded without error");
}

std::string with_header(const std::string& header, const std::string& data) {
  std::string out;
  std::uint64_t n = header.size();
  for (int i = 0; i < 8; ++i) out += static_cast<char>((n >> (8 * i)) & 0xff);
  return out + header + data;
}

Verdict format_round_trip() {
  Verdict v;
  std::mt19937_64 gen(3003);
  int exact = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const auto snap = random_snapshot(gen);
    const auto bytes = encode_snapshot(snap);
    const auto back = decode_snapshot(bytes);
    exact += encode_snapshot(back) == bytes && back.names() == snap.names() && back.metadata == snap.metadata;
  }
  v.require(exact == 200, std::to_string(200 - exact) + " snapshots changed on round trip");

  const std::string good = R"({"a":{"dtype":"F32","shape":[2],"data_offsets":[0,8]}})";
  v.require(decode_error(with_header("{not json", "")) == ErrorCode::MalformedHeader, "malformed header");
  v.require(decode_error(with_header(R"({"a":{"dtype":"F32","shape":[2],"data_offsets":[0,4]}})",
                                     std::string(4, '\0'))) == ErrorCode::MalformedHeader,
            "offset/shape disagreement");
  v.require(decode_error(with_header(good, std::string(4, '\0'))) == ErrorCode::TruncatedFile, "truncated data");
  v.require(decode_error(std::string("\x05\x00", 2)) == ErrorCode::TruncatedFile, "truncated prefix");
  v.require(decode_error(with_header(R"({"a":{"dtype":"I64","shape":[1],"data_offsets":[0,8]}})",
                                     std::string(8, '\0'))) == ErrorCode::UnsupportedDtype,
            "unsupported dtype");
  if (v.pass) v.detail = "200 bit-exact round trips; malformed, truncated and dtype fixtures raise their errors";
  return v;
}

ModelState random_model(const std::vector<int>& widths, std::mt19937_64& gen) {
  ModelState m = ModelState::zeros(widths);
  std::normal_distribution<double> w(0.0, 0.8);
  for (auto& layer : m.layers) {
    for (auto& x : layer.weight.data) x = w(gen);
    for (auto& x : layer.bias) x = w(gen);
  }
  return m;
}

Verdict gradient_check() {
  Verdict v;
  std::mt19937_64 gen(4004);
  std::uniform_int_distribution<int> width(1, 6), classes(2, 4), rows(1, 6), depth(1, 2);
  std::normal_distribution<double> feature(0.0, 1.0);
  double worst = 0;
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<int> widths{width(gen)};
    for (int h = depth(gen); h > 0; --h) widths.push_back(width(gen) + 1);
    widths.push_back(classes(gen));
    ModelState model = random_model(widths, gen);
    Matrix batch(static_cast<std::size_t>(rows(gen)), static_cast<std::size_t>(widths.front()));
    for (auto& x : batch.data) x = feature(gen);
    std::vector<int> labels(batch.rows);
    for (auto& y : labels) y = std::uniform_int_distribution<int>(0, widths.back() - 1)(gen);

    const auto analytic = loss_and_grads(model, batch, labels).grads;
    auto check = [&](double& param, double grad) {
      const double saved = param;
      param = saved + kFdStep;
      const double up = loss_and_grads(model, batch, labels).loss;
      param = saved - kFdStep;
      const double down = loss_and_grads(model, batch, labels).loss;
      param = saved;
      const double numeric = (up - down) / (2 * kFdStep);
      worst = std::max(worst, std::abs(numeric - grad) / std::max({std::abs(numeric), std::abs(grad), 1e-8}));
    };
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
      for (std::size_t i = 0; i < model.layers[l].weight.data.size(); ++i) {
        check(model.layers[l].weight.data[i], analytic.layers[l].weight.data[i]);
      }
      for (std::size_t i = 0; i < model.layers[l].bias.size(); ++i) {
        check(model.layers[l].bias[i], analytic.layers[l].bias[i]);
      }
    }
  }
  v.require(worst <= kGradTol, "max rel error " + g(worst));
  v.detail = "20 instances, max rel error " + g(worst);
  return v;
}

Verdict loss_and_sgd_fixtures() {
  Verdict v;
  std::mt19937_64 gen(5005);
  std::normal_distribution<double> feature(0.0, 1.0);
  for (int k : {2, 3, 7}) {
    Matrix batch(4, 3);
    for (auto& x : batch.data) x = feature(gen);
    const std::vector<int> labels = {0, 1 % k, 0, k - 1};
    const double loss = loss_and_grads(ModelState::zeros({3, 5, k}), batch, labels).loss;
    v.require(std::abs(loss - std::log(static_cast<double>(k))) <= kLogKTol,
              "zero model k=" + std::to_string(k) + " loss " + format_g17(loss));
  }

  ModelState m = ModelState::zeros({1, 1, 1});
  m.layers[0].weight(0, 0) = 1.0;
  auto opt = OptimizerState::for_model(m);
  Gradients grad = ModelState::zeros({1, 1, 1});
  grad.layers[0].weight(0, 0) = 1.0;
  const SgdHyperparameters hp{0.1, 0.9, 0.0};
  sgd_step(m, opt, grad, hp);
  const double w1 = m.layers[0].weight(0, 0);
  sgd_step(m, opt, grad, hp);
  const double w2 = m.layers[0].weight(0, 0);
  v.require(std::abs(w1 - 0.9) <= kSgdTol, "w after one step " + format_g17(w1));
  v.require(std::abs(w2 - 0.71) <= kSgdTol, "w after two steps " + format_g17(w2));
  if (v.pass) v.detail = "ln(k) for k=2,3,7; w = 0.9 then 0.71";
  return v;
}

// ---------------------------------------------------------------------------
// Pipeline through the command-line tool.

int shell(const std::string& command) {
  const int raw = std::system(command.c_str());
  return WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
}

struct PipelineRun {
  fs::path root;
  bool ok = true;
  std::string failure;
  double seconds = 0;
};

PipelineRun run_pipeline(const fs::path& root, const std::string& threads) {
  PipelineRun run;
  run.root = root;
  fs::remove_all(root);
  fs::create_directories(root);
  const std::string env = "RWC_THREADS=" + threads + " ";
  const std::string quiet = " >" + (root / "log.txt").string() + " 2>&1";
  auto step = [&](const std::string& args) {
    if (!run.ok) return;
    const int status = shell(env + RWC_CLI_PATH + " " + args + quiet);
    if (status != 0) {
      run.ok = false;
      run.failure = "'" + args.substr(0, args.find(' ')) + "' exited " + std::to_string(status) + ": " +
                    slurp(root / "log.txt");
    }
  };
  const auto start = std::chrono::steady_clock::now();
  std::string runs;
  for (int seed = 0; seed < 5; ++seed) {
    const auto dir = root / ("seed" + std::to_string(seed));
    step("train-demo --seed " + std::to_string(seed) + " --out " + dir.string());
    step("analyze --run " + dir.string() + " --out " + (root / ("seed" + std::to_string(seed) + ".csv")).string());
    runs += " " + dir.string();
  }
  step("aggregate --runs" + runs + " --out " + (root / "aggregate.csv").string());
  step("trends --input " + (root / "aggregate.csv").string() + " --out " + (root / "trends.json").string());
  step("plot --input " + (root / "aggregate.csv").string() + " --out " + (root / "aggregate.svg").string());
  step("plot --log-y --input " + (root / "seed0.csv").string() + " --out " + (root / "seed0.svg").string());
  run.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return run;
}

struct PipelineResults {
  PipelineRun first;
  PipelineRun second;
};

Verdict end_to_end(const PipelineRun& run) {
  Verdict v;
  v.require(run.ok, run.failure);
  if (!run.ok) return v;
  v.require(run.seconds < kPipelineSeconds, "took " + g(run.seconds) + " s");

  // Decay: every weight layer, in every seed and in the seed mean.
  std::vector<std::pair<std::string, std::vector<LabeledCurve>>> tables;
  for (int seed = 0; seed < 5; ++seed) {
    tables.push_back({"seed " + std::to_string(seed),
                      read_curves_csv(slurp(run.root / ("seed" + std::to_string(seed) + ".csv"))).curves});
  }
  tables.push_back({"mean", read_curves_csv(slurp(run.root / "aggregate.csv")).curves});
  double worst_ratio = 0;
  for (const auto& [where, curves] : tables) {
    v.require(curves.size() == 3, where + ": expected 3 weight layers, got " + std::to_string(curves.size()));
    for (const auto& [label, values] : curves) {
      const auto edge = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(kEdgeFraction * values.size())));
      const double first = mean_over_window(values, {0, edge});
      const double last = mean_over_window(values, {values.size() - edge, std::nullopt});
      worst_ratio = std::max(worst_ratio, last / first);
      v.require(last < first, where + " " + label + ": last-10% mean " + g(last) + " >= first-10% mean " + g(first));
    }
  }

  // Final training accuracy from the last snapshot's metadata.
  double min_acc = 1.0;
  std::string accs;
  for (int seed = 0; seed < 5; ++seed) {
    const auto dir = run.root / ("seed" + std::to_string(seed));
    const auto manifest = load_run_manifest(dir);
    const auto snap = read_snapshot_file(dir / manifest.checkpoint_name(manifest.epochs));
    double acc = 0;
    parse_double(snap.metadata.at("train_accuracy"), acc);
    min_acc = std::min(min_acc, acc);
    accs += (seed ? "/" : "") + g(acc);
  }
  v.require(min_acc >= kMinFinalAccuracy,
            "final train accuracy " + accs + " below " + g(kMinFinalAccuracy));
  const std::string summary = g(run.seconds) + " s, worst last/first RWC ratio " + g(worst_ratio) + ", accuracy " + accs;
  v.detail = v.pass ? summary : summary + " | " + v.detail;
  return v;
}

Verdict determinism(const PipelineResults& p) {
  Verdict v;
  v.require(p.first.ok && p.second.ok, "pipeline failed: " + p.first.failure + p.second.failure);
  if (!v.pass) return v;
  std::size_t compared = 0;
  for (const auto& entry : fs::recursive_directory_iterator(p.first.root)) {
    if (!entry.is_regular_file() || entry.path().filename() == "log.txt") continue;
    const auto rel = fs::relative(entry.path(), p.first.root);
    const auto other = p.second.root / rel;
    ++compared;
    v.require(fs::exists(other) && slurp(entry.path()) == slurp(other), rel.string() + " differs");
  }
  v.require(compared >= 5 * 62 + 8, "only " + std::to_string(compared) + " files compared");
  v.detail = std::to_string(compared) + " files byte-identical across RWC_THREADS=1 and RWC_THREADS=4" +
             (v.pass ? "" : " | " + v.detail);
  return v;
}

Verdict grouping_presets() {
  Verdict v;
  std::vector<std::string> resnet = {"conv1.weight", "bn1.weight"};
  for (int b = 1; b <= 4; ++b) {
    for (int u = 0; u < 2; ++u) {
      const auto prefix = "layer" + std::to_string(b) + "." + std::to_string(u) + ".";
      for (const char* leaf : {"conv1.weight", "bn1.weight", "conv2.weight", "bn2.weight"}) resnet.push_back(prefix + leaf);
    }
  }
  resnet.push_back("fc.weight");
  const auto rmap = compile_group_map(preset(Architecture::Resnet18Blocks), resnet);
  v.require(rmap.group_order == std::vector<std::string>{"block1", "block2", "block3", "block4"}, "resnet groups");
  v.require(rmap.resolved.size() == 32, "resnet members " + std::to_string(rmap.resolved.size()));

  auto convs = [](int n) {
    std::vector<std::string> names;
    for (int i = 1; i <= n; ++i) {
      names.push_back("features." + std::to_string(i) + ".conv.weight");
      names.push_back("features." + std::to_string(i) + ".bn.weight");
    }
    names.push_back("classifier.weight");
    return names;
  };
  auto check_ranges = [&](Architecture arch, int n, std::vector<std::pair<int, int>> want) {
    const auto rules = preset(arch);
    std::vector<std::pair<int, int>> got;
    for (const auto& r : rules) got.emplace_back(r.lo, r.hi);
    v.require(got == want, "preset ranges differ");
    const auto names = convs(n);
    const auto map = compile_group_map(rules, names);
    v.require(map.group_order == std::vector<std::string>{"early", "middle", "later"}, "group names");
    const std::vector<std::string> groups = {"early", "middle", "later"};
    for (int i = 1; i <= n; ++i) {
      const auto group = map.group_of(names[2 * (i - 1)]);
      std::size_t gi = 0;
      while (gi < want.size() && !(want[gi].first <= i && i <= want[gi].second)) ++gi;
      v.require(group && gi < groups.size() && *group == groups[gi], "conv " + std::to_string(i) + " misgrouped");
    }
    v.require(map.resolved.size() == static_cast<std::size_t>(n), "non-conv layers grouped");
  };
  check_ranges(Architecture::Vgg19Eml, 16, {{1, 4}, {5, 11}, {12, 16}});
  check_ranges(Architecture::AlexnetEml, 5, {{1, 1}, {2, 3}, {4, 5}});
  if (v.pass) v.detail = "ResNet-18 4 blocks; VGG-19 [1,4]/[5,11]/[12,16]; AlexNet [1,1]/[2,3]/[4,5]";
  return v;
}

Verdict trend_statistics() {
  Verdict v;
  const double d = dominance(std::vector<double>{0.1, 0.2, 0.3}, std::vector<double>{0.2, 0.1, 0.1});
  v.require(d == 2.0 / 3.0, "dominance " + format_g17(d));
  const double m = mean_over_window(std::vector<double>{9, 1, 3}, {1, std::nullopt});
  v.require(m == 2.0, "window mean " + format_g17(m));

  std::mt19937_64 gen(6006);
  std::uniform_real_distribution<double> value(0.0, 1.0), scale_exp(-6, 6);
  int stable = 0;
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<LabeledCurve> curves;
    for (int c = 0; c < 4; ++c) {
      std::vector<double> vals(20);
      for (auto& x : vals) x = value(gen);
      curves.push_back({"g" + std::to_string(c), vals});
    }
    const double c = std::pow(10.0, scale_exp(gen));
    auto scaled = curves;
    for (auto& [_, vals] : scaled) {
      for (auto& x : vals) x *= c;
    }
    stable += trend_report(curves).ordering == trend_report(scaled).ordering;
  }
  v.require(stable == 200, std::to_string(200 - stable) + " orderings changed under scaling");
  if (v.pass) v.detail = "dominance 2/3, window mean 2.0, ordering stable over 200 scalings";
  return v;
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path work = argc > 1 ? fs::path(argv[1]) : fs::temp_directory_path() / "rwc_acceptance";

  PipelineResults pipeline;
  bool pipeline_ready = false;
  auto pipelines = [&]() -> const PipelineResults& {
    if (!pipeline_ready) {
      pipeline.first = run_pipeline(work / "threads1", "1");
      pipeline.second = run_pipeline(work / "threads4", "4");
      pipeline_ready = true;
    }
    return pipeline;
  };

  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria = {
      {"rwc-fixtures", rwc_fixtures},
      {"scale-permutation-invariance", invariance},
      {"oracle-equivalence", oracle},
      {"format-round-trip", format_round_trip},
      {"gradient-check", gradient_check},
      {"loss-and-sgd-fixtures", loss_and_sgd_fixtures},
      {"end-to-end-pipeline", [&] { return end_to_end(pipelines().first); }},
      {"determinism", [&] { return determinism(pipelines()); }},
      {"grouping-presets", grouping_presets},
      {"trend-statistics", trend_statistics},
  };

  int failures = 0;
  for (const auto& [name, check] : criteria) {
    Verdict verdict;
    const auto start = std::chrono::steady_clock::now();
    try {
      verdict = check();
    } catch (const std::exception& e) {
      verdict = {false, std::string("exception: ") + e.what()};
    }
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    failures += !verdict.pass;
    std::cout << (verdict.pass ? "PASS " : "FAIL ") << name << " [" << g(ms) << " ms] " << verdict.detail << std::endl;
  }
  std::cout << (criteria.size() - failures) << "/" << criteria.size() << " criteria passed" << std::endl;
  return failures == 0 ? 0 : 1;
}

// pbdr: train, evaluate, compare and plot.

#include "pbdr/trainer.hpp"

#include <optional>

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

namespace fs = std::filesystem;
using namespace pbdr;

namespace {

constexpr int kOk = 0;
constexpr int kRuntime = 1;
constexpr int kUsage = 2;

/// Usage-level failure: bad arguments, bad config, missing inputs.
struct CliError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string out_root() {
  const char* env = std::getenv("PBDR_OUT_DIR");
  return env != nullptr && *env != '\0' ? env : "runs";
}

void require_fresh(const std::string& path) {
  if (fs::exists(path)) throw CliError("output path already exists: " + path);
}

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

void write_manifest(const TrainConfig& config, const std::string& dir, const std::string& config_path) {
  std::ofstream out(fs::path(dir) / "manifest.txt");
  out << "version = " << PBDR_VERSION << "\n";
  out << "start_time = " << utc_now() << "\n";
  out << "seed = " << config.seed << "\n";
  out << "config_file = " << config_path << "\n";
  out << "metrics = metrics.csv\n";
  out << "timing = timing.csv\n";
  out << "checkpoints = checkpoints/\n";
  out << "final_checkpoint = final.pbdr\n";
  out << "eval_returns = eval_returns.csv\n";
  for (const auto& [key, value] : config_entries(config)) out << "config." << key << " = " << value << "\n";
}

TrainConfig load_with_seed(const std::string& path, std::optional<std::uint64_t> seed) {
  if (!fs::exists(path)) throw CliError("config file not found: " + path);
  TrainConfig c = load_config(path);
  if (seed) c.seed = *seed;
  return c;
}

void print_row(const MetricsRow& r) {
  std::printf("iter %3d  env %7ld  imag %8ld  wm %.4f  kl %.3f  actor %.4f  critic %.4f  dis %.3g  return %.2f (+/- %.2f)\n",
              r.iteration, r.env_steps, r.imagined_steps, r.loss_total, r.kl, r.loss_actor, r.loss_critic,
              r.disagreement_mean, r.eval_return_mean, r.eval_return_std);
  std::fflush(stdout);
}

int cmd_train(const std::string& config_path, std::optional<std::uint64_t> seed, std::string out) {
  const TrainConfig config = load_with_seed(config_path, seed);
  if (out.empty()) out = (fs::path(out_root()) / (config.name + "_seed" + std::to_string(config.seed))).string();
  require_fresh(out);
  std::printf("training %s (K=%d N=%d T=%d) seed %llu -> %s\n", config.name.c_str(), config.imagination.particles,
              config.imagination.branches, config.imagination.horizon,
              static_cast<unsigned long long>(config.seed), out.c_str());
  const EvalResult r = run_training(config, out, print_row, [&](const TrainConfig& c, const std::string& dir) {
    write_manifest(c, dir, config_path);
  });
  std::printf("final evaluation over %zu episodes: %.2f ± %.2f\n", r.returns.size(), r.mean, r.std);
  return kOk;
}

int cmd_eval(const std::string& checkpoint, int episodes, std::string out) {
  if (episodes < 1) throw CliError("--episodes must be >= 1");
  if (!fs::exists(checkpoint)) throw CliError("checkpoint not found: " + checkpoint);
  LoadedAgent loaded = load_agent(checkpoint);
  if (out.empty()) out = (fs::path(out_root()) / ("eval_" + fs::path(checkpoint).stem().string())).string();
  require_fresh(out);
  const EvalResult r = evaluate(*loaded.agent, evaluation_seeds(episodes));
  fs::create_directories(out);
  std::ofstream csv(fs::path(out) / "returns.csv");
  csv << "episode,seed,return\n";
  for (std::size_t i = 0; i < r.returns.size(); ++i) csv << i << ',' << r.seeds[i] << ',' << fmt(r.returns[i]) << '\n';
  char line[128];
  std::snprintf(line, sizeof line, "%.2f ± %.2f", r.mean, r.std);
  std::ofstream(fs::path(out) / "summary.txt") << line << "\n";
  std::printf("%s (%s, %d episodes)\n", line, loaded.config.name.c_str(), episodes);
  return kOk;
}

std::vector<std::uint64_t> parse_seeds(const std::vector<std::string>& items) {
  std::vector<std::uint64_t> out;
  for (const auto& item : items) {
    std::stringstream ss(item);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      if (tok.empty()) continue;
      try {
        std::size_t used = 0;
        const auto v = std::stoull(tok, &used);
        if (used != tok.size() || tok.front() == '-') throw std::invalid_argument(tok);
        out.push_back(v);
      } catch (const std::exception&) {
        throw CliError("--seeds: not a seed: '" + tok + "'");
      }
    }
  }
  if (out.empty()) throw CliError("--seeds: at least one seed is required");
  return out;
}

int cmd_compare(const std::vector<std::string>& config_paths, const std::vector<std::string>& seed_args,
                std::string out) {
  const std::vector<std::uint64_t> seeds = parse_seeds(seed_args);
  std::vector<TrainConfig> configs;
  std::map<std::string, std::string> source;
  for (const auto& path : config_paths) {
    configs.push_back(load_with_seed(path, std::nullopt));
    if (source.count(configs.back().name) != 0) throw CliError("two configs share the name " + configs.back().name);
    source[configs.back().name] = path;
  }
  if (out.empty()) out = (fs::path(out_root()) / "compare").string();
  require_fresh(out);
  const auto rows = run_experiment(
      configs, seeds, out, [](const std::string& msg) { std::printf("%s\n", msg.c_str()), std::fflush(stdout); },
      [&](const TrainConfig& c, const std::string& dir) { write_manifest(c, dir, source[c.name]); });
  std::ofstream csv(fs::path(out) / "comparison.csv");
  write_comparison_csv(csv, rows);
  std::ofstream txt(fs::path(out) / "comparison.txt");
  write_comparison_text(txt, rows, static_cast<int>(seeds.size()));
  write_comparison_text(std::cout, rows, static_cast<int>(seeds.size()));
  return kOk;
}

// ---------------------------------------------------------------------------
// plot

struct Series {
  std::string label;
  std::vector<double> y;
};

struct Panel {
  std::string title;
  std::vector<double> x;
  std::vector<Series> lines;
  std::vector<double> band_lo, band_hi;  // optional shaded range
};

const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd"};

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '&') out += "&amp;";
    else if (c == '<') out += "&lt;";
    else if (c == '>') out += "&gt;";
    else out += c;
  }
  return out;
}

void write_svg(const std::string& path, const std::string& title, const std::vector<Panel>& panels) {
  const int cols = panels.size() > 1 ? 3 : 1;
  const int rows = static_cast<int>((panels.size() + cols - 1) / cols);
  const double pw = 320, ph = 220, ml = 60, mr = 15, mt = 30, mb = 35;
  const double W = cols * pw, H = rows * ph + 40;
  std::ofstream out(path);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
      << "\" font-family=\"sans-serif\" font-size=\"11\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << escape(title)
      << "</text>\n";
  for (std::size_t p = 0; p < panels.size(); ++p) {
    const Panel& panel = panels[p];
    const double ox = static_cast<double>(p % cols) * pw, oy = 40 + static_cast<double>(p / cols) * ph;
    double xlo = 1e300, xhi = -1e300, ylo = 1e300, yhi = -1e300;
    for (double v : panel.x) xlo = std::min(xlo, v), xhi = std::max(xhi, v);
    auto grow = [&](const std::vector<double>& ys) {
      for (double v : ys)
        if (std::isfinite(v)) ylo = std::min(ylo, v), yhi = std::max(yhi, v);
    };
    for (const auto& s : panel.lines) grow(s.y);
    grow(panel.band_lo);
    grow(panel.band_hi);
    if (panel.x.empty() || ylo > yhi) continue;
    if (xhi == xlo) xlo -= 1, xhi += 1;
    if (yhi == ylo) ylo -= 1, yhi += 1;
    const double pad = 0.05 * (yhi - ylo);
    ylo -= pad, yhi += pad;
    auto X = [&](double v) { return ox + ml + (v - xlo) / (xhi - xlo) * (pw - ml - mr); };
    auto Y = [&](double v) { return oy + mt + (yhi - v) / (yhi - ylo) * (ph - mt - mb); };
    out << "<rect x=\"" << ox + ml << "\" y=\"" << oy + mt << "\" width=\"" << pw - ml - mr << "\" height=\""
        << ph - mt - mb << "\" fill=\"none\" stroke=\"#888\"/>\n";
    out << "<text x=\"" << ox + pw / 2 << "\" y=\"" << oy + mt - 8 << "\" text-anchor=\"middle\">"
        << escape(panel.title) << "</text>\n";
    for (int k = 0; k <= 4; ++k) {
      const double v = ylo + (yhi - ylo) * k / 4.0;
      out << "<text x=\"" << ox + ml - 4 << "\" y=\"" << Y(v) + 4 << "\" text-anchor=\"end\">" << fmt(std::round(v * 1e4) / 1e4)
          << "</text>\n";
    }
    out << "<text x=\"" << X(xlo) << "\" y=\"" << oy + ph - mb + 14 << "\" text-anchor=\"middle\">" << fmt(xlo)
        << "</text><text x=\"" << X(xhi) << "\" y=\"" << oy + ph - mb + 14 << "\" text-anchor=\"middle\">"
        << fmt(xhi) << "</text>\n";
    if (!panel.band_lo.empty()) {
      out << "<polygon fill=\"#1f77b4\" fill-opacity=\"0.15\" stroke=\"none\" points=\"";
      for (std::size_t i = 0; i < panel.x.size(); ++i) out << X(panel.x[i]) << ',' << Y(panel.band_hi[i]) << ' ';
      for (std::size_t i = panel.x.size(); i-- > 0;) out << X(panel.x[i]) << ',' << Y(panel.band_lo[i]) << ' ';
      out << "\"/>\n";
    }
    for (std::size_t s = 0; s < panel.lines.size(); ++s) {
      const char* color = kColors[s % 5];
      out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
      for (std::size_t i = 0; i < panel.x.size(); ++i) {
        if (std::isfinite(panel.lines[s].y[i])) out << X(panel.x[i]) << ',' << Y(panel.lines[s].y[i]) << ' ';
      }
      out << "\"/>\n";
      if (panel.x.size() == 1) {
        out << "<circle cx=\"" << X(panel.x[0]) << "\" cy=\"" << Y(panel.lines[s].y[0]) << "\" r=\"3\" fill=\""
            << color << "\"/>\n";
      }
      if (panel.lines.size() > 1) {
        out << "<text x=\"" << ox + ml + 6 << "\" y=\"" << oy + mt + 14 + 13 * s << "\" fill=\"" << color << "\">"
            << escape(panel.lines[s].label) << "</text>\n";
      }
    }
  }
  out << "</svg>\n";
}

void write_slice(const std::string& path, const std::string& xname, const std::vector<double>& x,
                 const std::vector<Series>& cols) {
  std::ofstream out(path);
  out << xname;
  for (const auto& c : cols) out << ',' << c.label;
  out << '\n';
  for (std::size_t i = 0; i < x.size(); ++i) {
    out << fmt(x[i]);
    for (const auto& c : cols) out << ',' << fmt(c.y[i]);
    out << '\n';
  }
}

const std::vector<std::string> kPlotKinds = {"losses", "disagreement", "returns"};

std::vector<double> column(const std::vector<MetricsRow>& rows, double MetricsRow::*field) {
  std::vector<double> out;
  for (const auto& r : rows) out.push_back(r.*field);
  return out;
}

void plot_metrics(const std::vector<MetricsRow>& rows, const std::string& what, const std::string& out,
                  const std::string& run_name) {
  std::vector<double> x;
  for (const auto& r : rows) x.push_back(r.iteration);
  std::vector<Series> slice;
  std::vector<Panel> panels;
  if (what == "losses") {
    const std::vector<std::pair<const char*, double MetricsRow::*>> fields = {
        {"loss_total", &MetricsRow::loss_total},       {"loss_recon", &MetricsRow::loss_recon},
        {"loss_dynamics", &MetricsRow::loss_dynamics}, {"loss_representation", &MetricsRow::loss_representation},
        {"loss_reward", &MetricsRow::loss_reward},     {"loss_continue", &MetricsRow::loss_continue},
        {"loss_ensemble", &MetricsRow::loss_ensemble}, {"kl", &MetricsRow::kl},
        {"loss_actor", &MetricsRow::loss_actor},       {"loss_critic", &MetricsRow::loss_critic}};
    for (const auto& [name, field] : fields) {
      slice.push_back({name, column(rows, field)});
      panels.push_back({name, x, {slice.back()}, {}, {}});
    }
  } else if (what == "disagreement") {
    slice = {{"disagreement_mean", column(rows, &MetricsRow::disagreement_mean)},
             {"disagreement_min", column(rows, &MetricsRow::disagreement_min)},
             {"disagreement_max", column(rows, &MetricsRow::disagreement_max)},
             {"disagreement_ma100", column(rows, &MetricsRow::disagreement_ma100)}};
    panels.push_back({"ensemble disagreement per iteration (band: min..max)", x, {slice[0], slice[3]}, slice[1].y,
                      slice[2].y});
    panels[0].lines[0].label = "mean";
    panels[0].lines[1].label = "moving average (100 updates)";
  } else {
    slice = {{"eval_return_mean", column(rows, &MetricsRow::eval_return_mean)},
             {"eval_return_std", column(rows, &MetricsRow::eval_return_std)}};
    std::vector<double> lo, hi;
    for (std::size_t i = 0; i < x.size(); ++i) {
      lo.push_back(slice[0].y[i] - slice[1].y[i]);
      hi.push_back(slice[0].y[i] + slice[1].y[i]);
    }
    panels.push_back({"evaluation return (band: +/- std)", x, {slice[0]}, lo, hi});
  }
  write_slice((fs::path(out) / (what + ".csv")).string(), "iteration", x, slice);
  write_svg((fs::path(out) / (what + ".svg")).string(), run_name + ": " + what, panels);
}

/// Per-episode returns written by `eval`.
void plot_returns_file(const std::string& path, const std::string& out, const std::string& run_name) {
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  if (line != "episode,seed,return") throw CliError(path + ": unexpected header '" + line + "'");
  std::vector<double> x, y;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string ep, seed, ret;
    std::getline(ss, ep, ',');
    std::getline(ss, seed, ',');
    std::getline(ss, ret, ',');
    x.push_back(std::stod(ep));
    y.push_back(std::stod(ret));
  }
  const std::vector<Series> slice = {{"return", y}};
  write_slice((fs::path(out) / "returns.csv").string(), "episode", x, slice);
  write_svg((fs::path(out) / "returns.svg").string(), run_name + ": returns per evaluation episode",
            {{"episode return", x, slice, {}, {}}});
}

int cmd_plot(const std::string& run, const std::vector<std::string>& what, std::string out) {
  for (const auto& w : what) {
    if (std::find(kPlotKinds.begin(), kPlotKinds.end(), w) == kPlotKinds.end()) {
      throw CliError("unknown --what '" + w + "' (valid: losses, disagreement, returns)");
    }
  }
  const fs::path metrics = fs::path(run) / "metrics.csv", returns = fs::path(run) / "returns.csv";
  const bool have_metrics = fs::exists(metrics);
  if (!have_metrics && !fs::exists(returns)) throw CliError("no metrics.csv in " + run);
  if (!have_metrics && (what.size() != 1 || what[0] != "returns")) {
    throw CliError("no metrics.csv in " + run + " (only --what returns is available for eval output)");
  }
  if (out.empty()) {
    out = (fs::path(run) / "plots").string();
    for (const auto& w : what) {
      for (const char* ext : {".svg", ".csv"}) require_fresh((fs::path(out) / (w + ext)).string());
    }
  } else {
    require_fresh(out);
  }
  std::vector<MetricsRow> rows;
  if (have_metrics) {
    std::ifstream in(metrics);
    try {
      rows = read_metrics(in);
    } catch (const std::exception& e) {
      throw CliError(metrics.string() + ": " + e.what());
    }
    if (rows.empty()) throw CliError(metrics.string() + " has no rows");
  }
  fs::create_directories(out);
  const std::string name = fs::path(run).lexically_normal().filename().string();
  for (const auto& w : what) {
    if (have_metrics) plot_metrics(rows, w, out, name);
    else plot_returns_file(returns.string(), out, name);
    std::printf("wrote %s\n", (fs::path(out) / (w + ".svg")).string().c_str());
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Particle-based latent imagination agents on a predator-prey tag task."};
  app.require_subcommand(1);
  app.set_version_flag("--version", PBDR_VERSION);

  std::string config_path, out, checkpoint, run;
  std::optional<std::uint64_t> seed;
  int episodes = 100;
  std::vector<std::string> configs, seeds, what;

  CLI::App* train = app.add_subcommand("train", "Train one agent.");
  train->add_option("--config", config_path, "Config file")->required();
  train->add_option("--seed", seed, "Overrides the config seed");
  train->add_option("--out", out, "Run directory (must not exist; default $PBDR_OUT_DIR/<name>_seed<seed>)");

  CLI::App* eval = app.add_subcommand("eval", "Evaluate a checkpoint on the fixed test episodes.");
  eval->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  eval->add_option("--episodes", episodes, "Number of test episodes")->capture_default_str();
  eval->add_option("--out", out, "Output directory (must not exist)");

  CLI::App* compare = app.add_subcommand("compare", "Train every config over every seed and tabulate.");
  compare->add_option("--configs", configs, "Config files")->required();
  compare->add_option("--seeds", seeds, "Seeds, space or comma separated")->required();
  compare->add_option("--out", out, "Output directory (must not exist)");

  CLI::App* plot = app.add_subcommand("plot", "Plot a run's metrics as SVG plus the CSV slice.");
  plot->add_option("--run", run, "Run directory (train output, or eval output for returns)")->required();
  plot->add_option("--what", what, "losses, disagreement and/or returns")->required();
  plot->add_option("--out", out, "Output directory (must not exist; default <run>/plots)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    if (*train) return cmd_train(config_path, seed, out);
    if (*eval) return cmd_eval(checkpoint, episodes, out);
    if (*compare) return cmd_compare(configs, seeds, out);
    if (*plot) return cmd_plot(run, what, out);
  } catch (const CliError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kUsage;
  } catch (const CheckpointError& e) {
    std::cerr << "checkpoint error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntime;
  }
  return kUsage;
}

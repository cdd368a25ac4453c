#pragma once

// Command-line front end. Needs CLI11 and nlohmann/json on the include path.

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "otpf/experiments.hpp"
#include "otpf/transport.hpp"

namespace otpf::cli {

using nlohmann::json;

/// Thrown for bad flags, bad config files and out-of-range settings; maps to exit code 2.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/**
 * Every default, per subcommand. A config file may set any of these keys and
 * nothing else; flags override the file.
 *
 *   key              scalar-*        lorenz-sweep                       transport-solve
 *   M                [10, 40, 100]   [10, 20, 40, 60, 80, 100]          -
 *   steps            -               500                                -
 *   seed             -               0 (seeds seed .. seed+seeds-1)     -
 *   seeds            -               3                                  -
 *   inflation_grid   -               [1.0 .. 1.5], 8 values             -
 *   method           -               "both" | "ETPF" | "ESRF"           -
 *   threads          -               0 (OTPF_THREADS or all cores)      -
 *   rejuvenation     -               0.2 (ETPF only)                    -
 *   dt, obs_interval, obs_variance, spin_up, initial_spread
 *                    -               0.01, 0.12, 8, 1000, 1             -
 *   cost, row, col   -               -                                  CSV file paths
 *   init             -               -                                  "northwest" | "mincost"
 *   out_dir          "."             "."                                "."
 */
inline json defaults(const std::string& command) {
  if (command == "scalar-gaussian" || command == "scalar-uniform")
    return {{"M", {10, 40, 100}}, {"out_dir", "."}};
  if (command == "lorenz-sweep") {
    const LorenzSetup setup;
    const SweepConfig sweep;
    return {{"M", {10, 20, 40, 60, 80, 100}},
            {"steps", setup.steps},
            {"seed", 0},
            {"seeds", 3},
            {"inflation_grid", sweep.inflation_grid},
            {"method", "both"},
            {"threads", 0},
            {"rejuvenation", setup.etpf_rejuvenation},
            {"dt", setup.dt},
            {"obs_interval", setup.obs_interval},
            {"obs_variance", setup.obs_variance},
            {"spin_up", setup.spin_up},
            {"initial_spread", setup.initial_spread},
            {"out_dir", "."}};
  }
  if (command == "transport-solve")
    return {{"cost", ""}, {"row", ""}, {"col", ""}, {"init", "northwest"}, {"out_dir", "."}};
  throw UsageError("unknown command '" + command + "'");
}

namespace detail {

inline json read_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config file '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw UsageError("config file '" + path + "': " + e.what());
  }
  if (!j.is_object()) throw UsageError("config file '" + path + "' must hold a JSON object");
  return j;
}

/// Defaults, then config file, then flags. Type mismatches surface as UsageError.
inline json resolve(const std::string& command, const std::optional<std::string>& config_path, const json& flags) {
  json resolved = defaults(command);
  if (config_path) {
    const json file = read_config(*config_path);
    for (const auto& [key, value] : file.items()) {
      if (key == "command") {
        if (value != command) throw UsageError("config file was written for '" + value.dump() + "'");
        continue;
      }
      if (!resolved.contains(key)) throw UsageError("unknown config key '" + key + "' for " + command);
      if (resolved[key].is_number() != value.is_number() || resolved[key].is_string() != value.is_string() ||
          resolved[key].is_array() != value.is_array())
        throw UsageError("config key '" + key + "' has the wrong type");
      resolved[key] = value;
    }
  }
  for (const auto& [key, value] : flags.items()) resolved[key] = value;
  return resolved;
}

template <typename T>
T get(const json& config, const char* key) {
  try {
    return config.at(key).get<T>();
  } catch (const json::exception& e) {
    throw UsageError(std::string("config key '") + key + "': " + e.what());
  }
}

inline std::vector<Eigen::Index> ensemble_sizes(const json& config, Eigen::Index minimum) {
  const auto sizes = get<std::vector<long long>>(config, "M");
  if (sizes.empty()) throw UsageError("M: need at least one ensemble size");
  std::vector<Eigen::Index> out;
  for (const auto m : sizes) {
    if (m < minimum) throw UsageError("M: ensemble sizes must be at least " + std::to_string(minimum));
    out.push_back(static_cast<Eigen::Index>(m));
  }
  return out;
}

inline std::ofstream open_output(const std::filesystem::path& dir, const std::string& name) {
  std::filesystem::create_directories(dir);
  std::ofstream out(dir / name, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + (dir / name).string());
  return out;
}

inline void write_config_echo(const std::filesystem::path& dir, const std::string& command, json resolved) {
  resolved["command"] = command;
  auto out = open_output(dir, command + "_config.json");
  out << resolved.dump(2) << '\n';
}

/// Comma- or whitespace-separated numbers, one matrix row per nonblank line.
inline std::vector<std::vector<double>> read_numeric_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open '" + path + "'");
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    for (auto& ch : line)
      if (ch == ',' || ch == ';' || ch == '\t' || ch == '\r') ch = ' ';
    std::istringstream fields(line);
    std::vector<double> row;
    std::string token;
    while (fields >> token) {
      try {
        std::size_t used = 0;
        row.push_back(std::stod(token, &used));
        if (used != token.size()) throw std::invalid_argument(token);
      } catch (const std::exception&) {
        throw UsageError("'" + path + "': not a number: '" + token + "'");
      }
    }
    if (!row.empty()) rows.push_back(std::move(row));
  }
  return rows;
}

inline Eigen::VectorXd read_vector(const std::string& path) {
  std::vector<double> values;
  for (const auto& row : read_numeric_csv(path)) values.insert(values.end(), row.begin(), row.end());
  return Eigen::Map<const Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
}

inline Eigen::MatrixXd read_matrix(const std::string& path) {
  const auto rows = read_numeric_csv(path);
  if (rows.empty()) throw UsageError("'" + path + "' holds no numbers");
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != rows.front().size()) throw UsageError("'" + path + "': ragged rows");
    for (std::size_t j = 0; j < rows[i].size(); ++j)
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  }
  return m;
}

}  // namespace detail

inline void run_scalar(const std::string& command, const json& config, std::ostream& out) {
  const bool gaussian = command == "scalar-gaussian";
  const auto sizes = detail::ensemble_sizes(config, 2);
  const std::filesystem::path dir = detail::get<std::string>(config, "out_dir");

  std::vector<MomentRow> rows;
  for (const auto m : sizes) rows.push_back((gaussian ? scalar_gaussian_experiment(m) : scalar_uniform_experiment(m)).row);
  {
    auto table = detail::open_output(dir, gaussian ? "table1.csv" : "table2.csv");
    write_moment_table(table, rows);
  }
  write_moment_table(out, rows);
  if (gaussian) {
    auto map = detail::open_output(dir, "fig1b_map.csv");
    auto support = detail::open_output(dir, "fig2_support.csv");
    bool first = true;
    for (const auto m : sizes) {
      std::ostringstream map_rows, support_rows;
      write_map_csv(map_rows, m, transform_map_export(m));
      write_support_csv(support_rows, m, support_pattern_export(m));
      // Keep a single header per file.
      auto body = [&](const std::ostringstream& os) {
        const std::string s = os.str();
        return first ? s : s.substr(s.find('\n') + 1);
      };
      map << body(map_rows);
      support << body(support_rows);
      first = false;
    }
  }
  detail::write_config_echo(dir, command, config);
}

inline void run_sweep(const json& config, std::ostream& out) {
  SweepConfig sweep;
  sweep.ensemble_sizes = detail::ensemble_sizes(config, 2);
  sweep.inflation_grid = detail::get<std::vector<double>>(config, "inflation_grid");
  if (sweep.inflation_grid.empty()) throw UsageError("inflation_grid: need at least one value");
  for (const double lambda : sweep.inflation_grid)
    if (!(lambda >= 1.0)) throw UsageError("inflation_grid: values must be at least 1");

  const auto seed = detail::get<std::uint64_t>(config, "seed");
  const auto seeds = detail::get<long long>(config, "seeds");
  if (seeds < 1) throw UsageError("seeds: need at least one");
  sweep.seeds.clear();
  for (long long s = 0; s < seeds; ++s) sweep.seeds.push_back(seed + static_cast<std::uint64_t>(s));

  const auto method = detail::get<std::string>(config, "method");
  if (method == "both")
    sweep.methods = {FilterMethod::ETPF, FilterMethod::ESRF};
  else
    try {
      sweep.methods = {parse_filter_method(method)};
    } catch (const InvalidInput& e) {
      throw UsageError(e.what());
    }

  const auto threads = detail::get<long long>(config, "threads");
  if (threads < 0) throw UsageError("threads: must be nonnegative");
  sweep.threads = static_cast<unsigned>(threads);

  auto& s = sweep.setup;
  s.steps = detail::get<Eigen::Index>(config, "steps");
  s.etpf_rejuvenation = detail::get<double>(config, "rejuvenation");
  s.dt = detail::get<double>(config, "dt");
  s.obs_interval = detail::get<double>(config, "obs_interval");
  s.obs_variance = detail::get<double>(config, "obs_variance");
  s.spin_up = detail::get<double>(config, "spin_up");
  s.initial_spread = detail::get<double>(config, "initial_spread");
  if (s.steps < 1) throw UsageError("steps: need at least one assimilation step");
  if (!(s.etpf_rejuvenation >= 0.0)) throw UsageError("rejuvenation: must be nonnegative");
  if (!(s.dt > 0.0) || !(s.obs_interval > 0.0) || !(s.obs_variance > 0.0) || !(s.spin_up >= 0.0) ||
      !(s.initial_spread >= 0.0))
    throw UsageError("dt, obs_interval and obs_variance must be positive; spin_up and initial_spread nonnegative");

  const auto result = lorenz_sweep(sweep);
  const std::filesystem::path dir = detail::get<std::string>(config, "out_dir");
  {
    auto csv = detail::open_output(dir, "fig3_sweep.csv");
    write_sweep_csv(csv, result);
  }
  write_sweep_csv(out, result);
  detail::write_config_echo(dir, "lorenz-sweep", config);
}

inline void run_transport(const json& config, std::ostream& out) {
  const auto cost_path = detail::get<std::string>(config, "cost");
  const auto row_path = detail::get<std::string>(config, "row");
  const auto col_path = detail::get<std::string>(config, "col");
  if (cost_path.empty() || row_path.empty() || col_path.empty())
    throw UsageError("transport-solve needs --cost, --row and --col");
  TransportOptions options;
  const auto init = detail::get<std::string>(config, "init");
  if (init == "mincost")
    options.initialization = Initialization::MinimumCost;
  else if (init != "northwest")
    throw UsageError("init: expected 'northwest' or 'mincost'");

  const CostMatrix cost{detail::read_matrix(cost_path)};
  const MarginalPair marginals{detail::read_vector(row_path), detail::read_vector(col_path)};
  Coupling coupling;
  try {
    coupling = solve_transport(cost, marginals, options);
  } catch (const InvalidInput& e) {
    throw UsageError(e.what());
  }

  std::ostringstream os;
  os << "i,j,t\n";
  os.precision(17);
  for (const auto& [i, j] : coupling.support) os << (i + 1) << ',' << (j + 1) << ',' << coupling.t(i, j) << '\n';
  os << "objective," << coupling.objective << ",pivots=" << coupling.pivots << '\n';
  const std::filesystem::path dir = detail::get<std::string>(config, "out_dir");
  {
    auto csv = detail::open_output(dir, "transport.csv");
    csv << os.str();
  }
  out << os.str();
  detail::write_config_echo(dir, "transport-solve", config);
}

/// Parses argv, runs one subcommand and returns the process exit status:
/// 0 success, 1 runtime failure, 2 usage error.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Optimal-transport particle filtering experiments", "otpf"};
  app.require_subcommand(1);

  struct Flags {
    std::vector<long long> m;
    long long steps = 0;
    std::uint64_t seed = 0;
    std::vector<double> grid;
    std::string method, out_dir, config, cost, row, col, init;
  } f;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--M", f.m, "Ensemble sizes")->delimiter(',');
    sub->add_option("--out-dir", f.out_dir, "Output directory");
    sub->add_option("--config", f.config, "JSON config file");
  };
  auto* gaussian = app.add_subcommand("scalar-gaussian", "Gaussian-prior scalar example: table1, fig1b_map, fig2_support");
  auto* uniform = app.add_subcommand("scalar-uniform", "Uniform-prior scalar example: table2");
  auto* sweep = app.add_subcommand("lorenz-sweep", "Lorenz-63 ETPF/ESRF RMSE sweep: fig3_sweep");
  auto* transport = app.add_subcommand("transport-solve", "Solve a transport problem from CSV files");
  for (auto* sub : {gaussian, uniform, sweep}) common(sub);
  sweep->add_option("--steps", f.steps, "Assimilation steps");
  sweep->add_option("--seed", f.seed, "First seed");
  sweep->add_option("--inflation-grid", f.grid, "Inflation factors")->delimiter(',');
  sweep->add_option("--method", f.method, "ETPF, ESRF or both");
  transport->add_option("--cost", f.cost, "Square cost matrix CSV");
  transport->add_option("--row", f.row, "Row marginal CSV");
  transport->add_option("--col", f.col, "Column marginal CSV");
  transport->add_option("--init", f.init, "northwest or mincost");
  transport->add_option("--out-dir", f.out_dir, "Output directory");
  transport->add_option("--config", f.config, "JSON config file");

  if (argc <= 1) {
    err << app.help();
    return 2;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "otpf: " << e.what() << "\n" << app.help();
    return 2;
  }

  CLI::App* chosen = app.get_subcommands().front();
  const std::string command = chosen->get_name();
  json flags = json::object();
  auto given = [&](const char* name) {
    const auto* opt = chosen->get_option_no_throw(name);
    return opt != nullptr && opt->count() > 0;
  };
  if (given("--M")) flags["M"] = f.m;
  if (given("--out-dir")) flags["out_dir"] = f.out_dir;
  if (command == "lorenz-sweep") {
    if (given("--steps")) flags["steps"] = f.steps;
    if (given("--seed")) flags["seed"] = f.seed;
    if (given("--inflation-grid")) flags["inflation_grid"] = f.grid;
    if (given("--method")) flags["method"] = f.method;
  }
  if (command == "transport-solve") {
    if (given("--cost")) flags["cost"] = f.cost;
    if (given("--row")) flags["row"] = f.row;
    if (given("--col")) flags["col"] = f.col;
    if (given("--init")) flags["init"] = f.init;
  }

  try {
    const std::optional<std::string> config_path = given("--config") ? std::optional{f.config} : std::nullopt;
    const json config = detail::resolve(command, config_path, flags);
    if (command == "lorenz-sweep")
      run_sweep(config, out);
    else if (command == "transport-solve")
      run_transport(config, out);
    else
      run_scalar(command, config, out);
  } catch (const UsageError& e) {
    err << "otpf " << command << ": " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "otpf " << command << ": " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace otpf::cli

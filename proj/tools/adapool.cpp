#include "adapool/errors.hpp"
#include "adapool/pipeline.hpp"
#include "adapool/synthetic.hpp"

#include "CLI11.hpp"

#include <fstream>
#include <iostream>

using namespace adapool;
namespace fs = std::filesystem;

namespace {

std::string key_table() {
  const RunConfig defaults;
  std::string s = "Config keys (key = value file via --config, or --set key=value):\n";
  for (const auto& k : config_keys()) {
    std::string line = "  " + k.name;
    line.resize(std::max<std::size_t>(line.size() + 1, 20), ' ');
    s += line + k.help + " [default: " + k.get(defaults) + "]\n";
  }
  return s;
}

void print_rows(const std::vector<MetricRow>& rows) {
  std::printf("%-16s %3s %4s %12s %12s %9s %7s %7s\n", "method", "h", "K", "mse", "mae", "delta%", "ben%", "fb%");
  for (const auto& r : rows)
    std::printf("%-16s %3lld %4lld %12.6f %12.6f %9.3f %7.2f %7.2f\n", r.method.c_str(),
                static_cast<long long>(r.horizon), static_cast<long long>(r.k), r.mse, r.mae, r.delta_pct,
                r.ben_pct, r.fb_pct);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adaptive pooling for multivariate time series forecasting"};
  app.footer(key_table() + "\nExit codes: 0 ok, 2 config, 3 data, 4 divergence, 5 protocol (repeated TEST).\n"
                           "ADAPOOL_THREADS overrides the worker thread count.");
  app.require_subcommand(1);

  std::string config_file;
  std::vector<std::string> overrides;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("-c,--config", config_file, "key = value config file");
    sub->add_option("--set", overrides, "override one key (key=value), repeatable");
  };

  auto* prepare = app.add_subcommand("prepare", "split, impute and standardize; persist the Standardizer");
  auto* train = app.add_subcommand("train", "fit GLOBAL and every method at the fixed K (key 'k')");
  auto* select = app.add_subcommand("select-k", "fit GLOBAL and sweep candidates x seeds on VAL");
  auto* evaluate = app.add_subcommand("evaluate", "refit on TRAIN+VAL and run the single TEST pass");
  auto* run = app.add_subcommand("run", "prepare, select-k and evaluate in one go");
  for (auto* s : {prepare, train, select, evaluate, run}) add_common(s);

  auto* fnew = app.add_subcommand("forecast-new", "route a new series from its initial segment");
  add_common(fnew);
  std::string segment_file;
  bool segment_header = false;
  fnew->add_option("--segment", segment_file, "CSV segment (rows = time, raw scale)")->required();
  fnew->add_flag("--header", segment_header, "segment file has a header row");

  auto* synth = app.add_subcommand("synth", "write a synthetic heterogeneous dataset plus labels");
  SyntheticSpec spec;
  std::string synth_out, synth_format = "csv";
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->add_option("--format", synth_format, "csv | packed")->check(CLI::IsMember({"csv", "packed"}));
  synth->add_option("--n", spec.num_series, "number of series")->capture_default_str();
  synth->add_option("--t", spec.length, "series length")->capture_default_str();
  synth->add_option("--p", spec.components, "components")->capture_default_str();
  synth->add_option("--k", spec.regimes, "true regimes")->capture_default_str();
  synth->add_option("--alpha", spec.alpha, "heterogeneity strength in [0, 1]")->capture_default_str();
  synth->add_option("--noise", spec.noise, "noise scale")->capture_default_str();
  synth->add_option("--seed", spec.seed, "generator seed")->capture_default_str();

  auto* report = app.add_subcommand("report", "merge evaluated runs into one comparison table");
  std::vector<std::string> report_dirs;
  bool paper_scale = false;
  std::string report_out;
  report->add_option("runs", report_dirs, "run directories")->required();
  report->add_flag("--paper-scale", paper_scale, "multiply losses by 100");
  report->add_option("--out", report_out, "CSV output file (default: stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    auto load = [&] {
      RunConfig cfg = config_file.empty() ? RunConfig{} : load_config(config_file);
      for (const auto& o : overrides) apply_setting(cfg, o);
      return cfg;
    };

    if (*synth) {
      const SyntheticData syn = generate(spec);
      fs::create_directories(synth_out);
      if (synth_format == "csv")
        write_csv_dir(syn.dataset, fs::path(synth_out) / "series");
      else
        write_packed(syn.dataset, fs::path(synth_out) / "data.mts");
      std::ofstream labels(fs::path(synth_out) / "labels.csv");
      labels << "name,label\n";
      for (std::size_t i = 0; i < syn.labels.size(); ++i) labels << syn.dataset.names[i] << ',' << syn.labels[i] << '\n';
      std::cout << "wrote " << spec.num_series << " series to " << synth_out << "\n";
      return 0;
    }
    if (*report) {
      std::vector<fs::path> dirs(report_dirs.begin(), report_dirs.end());
      bool quantile = false;
      auto rows = merge_reports(dirs, &quantile);
      if (paper_scale)
        for (auto& [id, r] : rows) r = paper_scaled(r);
      if (report_out.empty()) {
        write_report_csv(std::cout, rows, quantile);
      } else {
        std::ofstream out(report_out);
        if (!out) throw DataError("cannot write " + report_out);
        write_report_csv(out, rows, quantile);
      }
      return 0;
    }

    Run r(load());
    if (*prepare || *run) r.prepare();
    if (*train) r.select(false);
    if (*select || *run) r.select(true);
    if (*evaluate || *run) print_rows(r.evaluate());
    if (*fnew) {
      CsvOptions opts;
      opts.header = segment_header;
      const auto routes = r.forecast_new(read_series_csv(segment_file, opts));
      nlohmann::json out = nlohmann::json::array();
      for (const auto& x : routes)
        out.push_back({{"method", x.method}, {"route", x.route}, {"losses", x.losses}});
      std::cout << out.dump(2) << "\n";
    }
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const DivergenceError& e) {
    std::cerr << "divergence: " << e.what() << " (last finite epoch " << e.last_finite_epoch() << ")\n";
    return 4;
  } catch (const ProtocolError& e) {
    std::cerr << "protocol violation: " << e.what() << "\n";
    return 5;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

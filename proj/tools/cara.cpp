// cara: simulate, analyse and verify covariate-adjusted response-adaptive designs.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "cara/asymptotics.hpp"
#include "cara/engine.hpp"
#include "cara/errors.hpp"
#include "cara/harness.hpp"
#include "cara/random.hpp"
#include "cara/serialization.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitFailed = 1;
constexpr int kExitConfig = 2;
constexpr int kExitError = 3;

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
  std::string out;
  std::vector<std::string> criteria;
};

cara::ExperimentConfig load(const Common& c) {
  auto config = cara::load_config(c.config);
  if (c.seed) config.seed = *c.seed;
  if (c.workers) config.workers = *c.workers;
  if (!c.criteria.empty()) {
    // re-validate through the parser so names are checked in one place
    auto doc = config.document;
    doc["criteria"] = c.criteria;
    doc["seed"] = config.seed;
    doc["workers"] = config.workers;
    config = cara::parse_config(doc);
  } else {
    config.document["seed"] = config.seed;
    config.document["workers"] = config.workers;
  }
  return config;
}

fs::path output_dir(const Common& c, const cara::ExperimentConfig& config) {
  if (!c.out.empty()) return c.out;
  if (!config.output.dir.empty()) return config.output.dir;
  return "out";
}

std::string fmt(double x) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.6g", x);
  return buf;
}

void print_verification(const cara::VerificationReport& report) {
  for (const auto& r : report.results) {
    std::cout << (r.passed ? "PASS " : "FAIL ") << r.criterion << ": " << r.check
              << "  observed=" << fmt(r.observed) << " target=" << fmt(r.target) << " band=["
              << fmt(r.lower) << ", " << fmt(r.upper) << "]\n";
  }
  std::cout << (report.passed ? "verdict: PASS" : "verdict: FAIL") << " (" << report.results.size()
            << " checks)\n";
}

void print_summary(const cara::ReplicationSummary& s) {
  std::cout << "replicates=" << s.replicates << " failures=" << s.failures << " n=" << s.n << '\n';
  for (Eigen::Index k = 0; k < s.v.size(); ++k) {
    std::cout << "arm " << k + 1 << ": v=" << fmt(s.v(k)) << " mean=" << fmt(s.allocation_mean(k))
              << " var=" << fmt(s.allocation_covariance(k, k))
              << " ratio=" << fmt(s.allocation_ratio(k)) << '\n';
  }
  for (Eigen::Index j = 0; j < s.estimator_ratio.size(); ++j) {
    std::cout << "theta[" << j << "]: var=" << fmt(s.estimator_covariance(j, j))
              << " ratio=" << fmt(s.estimator_ratio(j)) << '\n';
  }
  for (const auto& c : s.conditional) {
    std::cout << "x=";
    for (Eigen::Index i = 0; i < c.x.size(); ++i) std::cout << (i ? "," : "") << c.x(i);
    std::cout << " used=" << c.replicates_used;
    for (Eigen::Index k = 0; k < c.ratio.size(); ++k) std::cout << " ratio" << k + 1 << '=' << fmt(c.ratio(k));
    std::cout << '\n';
  }
  std::cout << "median ||theta_hat - theta|| = " << fmt(s.median_estimation_error) << '\n';
  if (s.has_plugin) {
    std::cout << "median plug-in Sigma error = " << fmt(s.median_plugin_sigma_error) << '\n';
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw cara::IoError("cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) throw cara::IoError("failed writing '" + path.string() + "'");
}

int cmd_simulate(const Common& c) {
  const auto config = load(c);
  const auto dir = output_dir(c, config);
  fs::create_directories(dir);
  const auto trial_seed = cara::derive_seed(config.seed, 0);
  const auto history = cara::run_trial(config.model, config.rule, config.trial_options(), trial_seed);

  const auto csv = dir / "patients.csv";
  std::ofstream out(csv, std::ios::binary);
  if (!out) throw cara::IoError("cannot open '" + csv.string() + "' for writing");
  cara::write_patient_csv(out, history);

  auto summary = cara::history_summary(history);
  try {
    summary["plugin"] = cara::plugin_estimates(history, config.model, config.rule, config.x_list,
                                               config.plugin);
  } catch (const cara::Error& e) {
    summary["plugin_error"] = e.what();
  }
  write_text(dir / "trial.json", summary.dump(2) + "\n");

  std::cout << "n=" << history.size() << " seed=" << trial_seed << '\n';
  for (int k = 0; k < history.arm_count; ++k) {
    std::cout << "arm " << k + 1 << ": N=" << history.counts[static_cast<std::size_t>(k)]
              << " share=" << fmt(static_cast<double>(history.counts[static_cast<std::size_t>(k)]) /
                                  static_cast<double>(history.size()))
              << '\n';
  }
  std::cout << "wrote " << csv.string() << '\n';
  return 0;
}

int cmd_theory(const Common& c) {
  const auto config = load(c);
  const auto theory =
      cara::theory_report(config.model, config.rule, config.x_list, config.expectation);
  const std::string text = cara::Json(theory).dump(2) + "\n";
  if (c.out.empty()) {
    std::cout << text;
  } else {
    fs::create_directories(c.out);
    write_text(fs::path(c.out) / "theory.json", text);
  }
  return 0;
}

int cmd_replicate(const Common& c) {
  const auto config = load(c);
  const auto theory =
      cara::theory_report(config.model, config.rule, config.x_list, config.expectation);
  const auto summary = cara::run_replications(config, theory);
  const auto dir = output_dir(c, config);
  cara::emit_reports(dir, config, theory, &summary, nullptr);
  if (config.output.per_patient_csv) {
    // replicate 0 replayed from its seed
    const auto history =
        cara::run_trial(config.model, config.rule, config.trial_options(), cara::derive_seed(config.seed, 0));
    const auto csv = dir / "patients_r0.csv";
    std::ofstream out(csv, std::ios::binary);
    if (!out) throw cara::IoError("cannot open '" + csv.string() + "' for writing");
    cara::write_patient_csv(out, history);
  }
  print_summary(summary);
  std::cout << "wrote " << (dir / "report.json").string() << '\n';
  return 0;
}

int cmd_verify(const Common& c) {
  const auto config = load(c);
  const auto run = cara::verify(config);
  const auto dir = output_dir(c, config);
  cara::emit_reports(dir, config, run.theory, run.inputs.summary ? &*run.inputs.summary : nullptr,
                     &run.report, run.inputs.consistency);
  print_verification(run.report);
  return run.report.passed ? 0 : kExitFailed;
}

int cmd_report(const std::string& in) {
  fs::path path = in;
  if (fs::is_directory(path)) path /= "report.json";
  std::ifstream file(path, std::ios::binary);
  if (!file) throw cara::IoError("cannot open '" + path.string() + "'");
  const auto doc = cara::Json::parse(file);
  std::cout << "tool " << doc.at("tool").at("version").get<std::string>() << ", config '"
            << doc.at("config").value("name", "") << "'\n";
  const auto theory = doc.at("theory").get<cara::TheoryReport>();
  std::cout << "v =";
  for (Eigen::Index k = 0; k < theory.v.size(); ++k) std::cout << ' ' << fmt(theory.v(k));
  std::cout << "\nSigma diag =";
  for (Eigen::Index k = 0; k < theory.sigma.rows(); ++k) std::cout << ' ' << fmt(theory.sigma(k, k));
  std::cout << '\n';
  if (!doc.at("summary").is_null()) print_summary(doc.at("summary").get<cara::ReplicationSummary>());
  if (!doc.at("verification").is_null()) {
    const auto report = doc.at("verification").get<cara::VerificationReport>();
    print_verification(report);
    return report.passed ? 0 : kExitFailed;
  }
  return 0;
}

void add_common(CLI::App* app, Common& c, bool criteria) {
  app->add_option("--config", c.config, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
  app->add_option("--seed", c.seed, "master seed (overrides the config)");
  app->add_option("--workers", c.workers, "worker threads, 0 = all cores")->check(CLI::NonNegativeNumber);
  app->add_option("--out", c.out, "output directory");
  if (criteria) {
    app->add_option("--criteria", c.criteria, "criteria to check (overrides the config)")->delimiter(',');
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cara: covariate-adjusted response-adaptive design simulator"};
  app.set_version_flag("--version", std::string(cara::tool_version()));
  app.require_subcommand(1);

  Common sim, theo, rep, ver;
  std::string report_in;
  auto* simulate = app.add_subcommand("simulate", "run one trial and write the per-patient CSV");
  add_common(simulate, sim, false);
  auto* theory = app.add_subcommand("theory", "print the asymptotic theory report as JSON");
  add_common(theory, theo, false);
  auto* replicate = app.add_subcommand("replicate", "Monte Carlo replications with summary outputs");
  add_common(replicate, rep, false);
  auto* verify = app.add_subcommand("verify", "run the configured criteria; exit 1 on failure");
  add_common(verify, ver, true);
  auto* report = app.add_subcommand("report", "re-render a stored report.json");
  report->add_option("--out", report_in, "directory holding report.json, or the file itself")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*simulate) return cmd_simulate(sim);
    if (*theory) return cmd_theory(theo);
    if (*replicate) return cmd_replicate(rep);
    if (*verify) return cmd_verify(ver);
    if (*report) return cmd_report(report_in);
  } catch (const cara::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitError;
  }
  return 0;
}

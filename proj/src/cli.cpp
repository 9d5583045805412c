#include "emprate/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>

#include "emprate/error.hpp"
#include "emprate/harness.hpp"
#include "emprate/meta.hpp"

namespace emprate {

namespace {

const char* to_string(MethodChoice m) {
  switch (m) {
    case MethodChoice::Empirical: return "empirical";
    case MethodChoice::NB: return "nb";
    case MethodChoice::Both: return "both";
  }
  return "both";
}

const char* to_string(PearsonScaling s) { return s == PearsonScaling::Model ? "model" : "sandwich"; }

const char* class_name(ErrorClass c) {
  switch (c) {
    case ErrorClass::Usage: return "usage";
    case ErrorClass::Data: return "data";
    case ErrorClass::Numerical: return "numerical";
  }
  return "data";
}

int exit_status(ErrorClass c) {
  switch (c) {
    case ErrorClass::Usage: return 2;
    case ErrorClass::Data: return 3;
    case ErrorClass::Numerical: return 4;
  }
  return 3;
}

void write_error(std::ostream& err, const std::string& code, const std::string& cls, const std::string& message) {
  nlohmann::json j;
  j["error"] = {{"code", code}, {"class", cls}, {"message", message}};
  err << j.dump() << '\n';
}

nlohmann::json optional_json(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

std::string fmt(const char* format, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, format, v);
  return buf;
}

std::string fmt_opt(const std::optional<double>& v, const char* format = "%.4f") {
  return v ? fmt(format, *v) : std::string("-");
}

std::string pad(const std::string& s, std::size_t width) {
  return s.size() >= width ? s + " " : s + std::string(width - s.size(), ' ');
}

std::string rr_cell(const std::optional<RateRatioResult>& rr) {
  if (!rr) return "-";
  char buf[128];
  std::snprintf(buf, sizeof buf, "%.3f (%.3f, %.3f) p=%.4g", rr->lambda_hat, rr->ci_low, rr->ci_high, rr->p);
  return buf;
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream f(path);
  if (!f) throw Error(ErrorCode::InvalidArgument, "cannot write '" + path + "'");
  f << content;
}

}  // namespace

// ---------------------------------------------------------------------------
// Analysis
// ---------------------------------------------------------------------------

AnalysisReport analyze(const TrialData& input, const AnalyzeOptions& options) {
  AnalysisReport report;
  report.options = options;
  report.arm_labels = input.arm_labels;
  const bool run_empirical = options.method != MethodChoice::NB;
  const bool run_nb = options.method != MethodChoice::Empirical;
  const bool nb_adjusted = !options.covariates.empty();

  for (std::size_t p = 0; p < input.datasets.size(); ++p) {
    const Dataset& data = input.datasets[p];
    PeriodReport period;
    period.label = input.periods[p];
    const int arms = data.arm_count();
    for (int a = 0; a < arms; ++a) {
      ArmReport arm;
      arm.label = input.arm_labels[a];
      arm.events = data.arm_events(a);
      arm.exposure = data.arm_exposure(a);
      arm.subjects = data.arm_size(a);
      arm.observed_rate = static_cast<double>(arm.events) / arm.exposure;
      period.arms.push_back(arm);
    }
    for (int a = 1; a < arms; ++a) {
      ComparisonReport c;
      c.numerator = input.arm_labels[a];
      c.denominator = input.arm_labels[0];
      c.raw_rr = period.arms[a].observed_rate / period.arms[0].observed_rate;
      period.comparisons.push_back(c);
    }

    if (run_empirical) {
      try {
        InferenceConfig cfg;
        cfg.alpha = options.alpha;
        cfg.adjustment = options.adjustment;
        cfg.hc_flavor = options.hc_flavor;
        const RateEstimate est = estimate_rates(data, cfg);
        for (int a = 0; a < arms; ++a) {
          period.arms[a].empirical_rate = est.rates(a);
          period.arms[a].empirical_se = std::sqrt(std::max(est.cov(a, a), 0.0));
        }
        const LogRateEstimate lr = log_rates(est);
        for (int a = 1; a < arms; ++a) period.comparisons[a - 1].empirical = rate_ratio(lr, a, 0, options.alpha);
      } catch (const Error& e) {
        period.errors["empirical"] = e.what();
      }
    }

    if (run_nb) {
      try {
        NBOptions nb_options;
        nb_options.scaling = options.nb_scaling;
        const NBFit fit = fit_nb(data, nb_adjusted, {}, nb_options);
        period.nb_status = to_string(fit.status);
        if (fit.status == FitStatus::NonConvergence) {
          throw Error(ErrorCode::NonConvergence, fit.diagnostics.message);
        }
        const MarginalRates gcomp = marginal_rates_gcomp(fit, data);
        for (int a = 0; a < arms; ++a) period.arms[a].nb_gcomp_rate = gcomp.rates(a);
        try {
          const MarginalRates aipw = marginal_rates_aipw(fit, data);
          for (int a = 0; a < arms; ++a) period.arms[a].nb_aipw_rate = aipw.rates(a);
        } catch (const Error& e) {
          period.errors["nb_aipw"] = e.what();
        }
        for (int a = 1; a < arms; ++a) period.comparisons[a - 1].nb = nb_rate_ratio(gcomp, a, 0, options.alpha);
      } catch (const Error& e) {
        period.errors["nb"] = e.what();
      }
    }
    report.periods.push_back(std::move(period));
  }
  return report;
}

nlohmann::json to_json(const RateRatioResult& rr) {
  return {{"lambda", rr.lambda_hat}, {"log_lambda", rr.log_lambda}, {"se_log", rr.se_log},
          {"ci_low", rr.ci_low},     {"ci_high", rr.ci_high},       {"z", rr.z},
          {"p", rr.p},               {"alpha", rr.alpha}};
}

nlohmann::json to_json(const AnalysisReport& report) {
  const AnalyzeOptions& o = report.options;
  nlohmann::json j;
  j["schema_version"] = report.schema_version;
  j["config"] = {{"method", to_string(o.method)},
                 {"adjustment", to_string(o.adjustment)},
                 {"covariates", o.covariates},
                 {"strata", o.strata},
                 {"alpha", o.alpha},
                 {"hc", o.hc_flavor ? nlohmann::json(to_string(*o.hc_flavor)) : nlohmann::json("auto")},
                 {"nb_scale", to_string(o.nb_scaling)},
                 {"exposure_divisor", o.exposure_divisor}};
  j["arms"] = report.arm_labels;
  auto& periods = j["periods"] = nlohmann::json::array();
  for (const auto& p : report.periods) {
    nlohmann::json pj;
    pj["period"] = p.label;
    auto& arms = pj["arms"] = nlohmann::json::array();
    for (const auto& a : p.arms) {
      arms.push_back({{"arm", a.label},
                      {"subjects", a.subjects},
                      {"events", a.events},
                      {"exposure", a.exposure},
                      {"observed_rate", a.observed_rate},
                      {"empirical_rate", optional_json(a.empirical_rate)},
                      {"empirical_se", optional_json(a.empirical_se)},
                      {"nb_gcomp_rate", optional_json(a.nb_gcomp_rate)},
                      {"nb_aipw_rate", optional_json(a.nb_aipw_rate)}});
    }
    auto& comps = pj["comparisons"] = nlohmann::json::array();
    for (const auto& c : p.comparisons) {
      comps.push_back({{"numerator", c.numerator},
                       {"denominator", c.denominator},
                       {"raw_rr", c.raw_rr},
                       {"empirical", c.empirical ? to_json(*c.empirical) : nlohmann::json(nullptr)},
                       {"nb", c.nb ? to_json(*c.nb) : nlohmann::json(nullptr)}});
    }
    pj["nb_status"] = p.nb_status ? nlohmann::json(*p.nb_status) : nlohmann::json(nullptr);
    pj["errors"] = p.errors;
    periods.push_back(std::move(pj));
  }
  return j;
}

std::string to_text(const AnalysisReport& report) {
  std::ostringstream out;
  for (const auto& p : report.periods) {
    if (!p.label.empty()) out << "Period " << p.label << '\n';
    out << pad("arm", 14) << pad("n", 8) << pad("events", 8) << pad("exposure", 12) << pad("observed", 10)
        << pad("empirical", 10) << pad("nb_gcomp", 10) << "nb_aipw\n";
    for (const auto& a : p.arms) {
      out << pad(a.label, 14) << pad(std::to_string(a.subjects), 8) << pad(std::to_string(a.events), 8)
          << pad(fmt("%.2f", a.exposure), 12) << pad(fmt("%.4f", a.observed_rate), 10)
          << pad(fmt_opt(a.empirical_rate), 10) << pad(fmt_opt(a.nb_gcomp_rate), 10) << fmt_opt(a.nb_aipw_rate)
          << '\n';
    }
    for (const auto& c : p.comparisons) {
      out << c.numerator << " vs " << c.denominator << ": raw " << fmt("%.3f", c.raw_rr) << "; empirical "
          << rr_cell(c.empirical) << "; nb " << rr_cell(c.nb) << '\n';
    }
    for (const auto& [method, message] : p.errors) out << "  " << method << " failed: " << message << '\n';
    out << '\n';
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

namespace {

std::string simulation_text(const SimulationSummary& s) {
  std::ostringstream out;
  out << "case " << s.spec.case_id << ", n per arm " << s.spec.n_per_arm << ", replicates " << s.replicates
      << ", true rate ratio " << fmt("%.4f", s.true_rate_ratio) << '\n';
  out << pad("method", 22) << pad("reject", 9) << pad("mc_se", 9) << pad("mean_rr", 9) << pad("sd_log", 9)
      << pad("mean_se", 9) << pad("coverage", 10) << "failures\n";
  for (const auto& m : s.methods) {
    out << pad(m.name, 22) << pad(fmt("%.4f", m.rejection_rate), 9) << pad(fmt("%.4f", m.mc_se), 9)
        << pad(fmt("%.4f", m.mean_lambda), 9) << pad(fmt("%.4f", m.sd_theta), 9) << pad(fmt("%.4f", m.mean_se), 9)
        << pad(fmt("%.4f", m.coverage), 10) << (m.nonconvergence + m.other_failures) << '\n';
  }
  return out.str();
}

struct SimulateArgs {
  std::string config;
  std::vector<std::string> settings;
  std::optional<int> reps;
  std::optional<std::uint64_t> seed;
  std::optional<int> jobs;
  std::string out_prefix;
  std::string cache_dir = ".emprate-cache";
  bool no_cache = false;
  std::string format = "text";
};

SimulationConfig load_simulation_config(const std::string& path, const std::vector<std::string>& settings) {
  ConfigMap config = path.empty() ? ConfigMap{} : parse_config_file(path);
  for (const auto& s : settings) apply_setting(config, s);
  return simulation_config(config);
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Event rates and rate ratios for count outcomes in randomized trials", "emprate"};
  app.require_subcommand(1);

  // analyze
  auto* analyze_cmd = app.add_subcommand("analyze", "Analyze a subject-level CSV file");
  std::string input;
  std::string method = "both";
  std::vector<std::string> adjust;
  bool adjust_given = false;
  std::vector<std::string> strata;
  std::string adjustment;
  std::string control;
  double alpha = 0.05;
  std::string hc = "auto";
  std::string nb_scale = "sandwich";
  double divisor = 1.0;
  std::string json_out;
  std::string format = "text";
  analyze_cmd->add_option("input", input, "CSV with subject_id, arm, events, exposure")->required();
  analyze_cmd->add_option("--method", method, "empirical, nb or both")
      ->check(CLI::IsMember({"empirical", "nb", "both"}));
  auto* adjust_opt = analyze_cmd->add_option("--adjust", adjust, "Covariate columns, comma separated")
                         ->delimiter(',')
                         ->expected(0, -1);
  analyze_cmd->add_option("--strata", strata, "Stratum columns, comma separated")->delimiter(',');
  analyze_cmd->add_option("--adjustment", adjustment, "none, ancova or anhecova")
      ->check(CLI::IsMember({"none", "ancova", "anhecova"}));
  analyze_cmd->add_option("--control", control, "Label of the reference arm");
  analyze_cmd->add_option("--alpha", alpha, "Two-sided significance level");
  analyze_cmd->add_option("--hc", hc, "auto, HC0, HC1 or HC3");
  analyze_cmd->add_option("--nb-scale", nb_scale, "sandwich or model")
      ->check(CLI::IsMember({"sandwich", "model"}));
  analyze_cmd->add_option("--exposure-divisor", divisor, "Divide exposures by this value");
  analyze_cmd->add_option("--json-out", json_out, "Write the JSON report here");
  analyze_cmd->add_option("--format", format, "Standard output format")->check(CLI::IsMember({"text", "json"}));

  // simulate
  auto* simulate_cmd = app.add_subcommand("simulate", "Run a replicated simulation study");
  SimulateArgs sim;
  simulate_cmd->add_option("config", sim.config, "key=value scenario file");
  simulate_cmd->add_option("--set", sim.settings, "Override a config key (key=value)");
  simulate_cmd->add_option("--reps", sim.reps, "Number of replicates");
  simulate_cmd->add_option("--seed", sim.seed, "Master seed");
  simulate_cmd->add_option("--jobs", sim.jobs, "Worker threads");
  simulate_cmd->add_option("--out-prefix", sim.out_prefix, "Write <prefix>.json and <prefix>.csv");
  simulate_cmd->add_option("--cache-dir", sim.cache_dir, "Calibration cache directory");
  simulate_cmd->add_flag("--no-cache", sim.no_cache, "Recalibrate without the cache");
  simulate_cmd->add_option("--format", sim.format, "Standard output format")
      ->check(CLI::IsMember({"text", "json"}));

  // meta
  auto* meta_cmd = app.add_subcommand("meta", "Pool per-stratum rate ratios");
  std::string meta_input;
  std::string scale = "natural";
  double meta_alpha = 0.05;
  meta_cmd->add_option("input", meta_input, "CSV of per-stratum estimates")->required();
  meta_cmd->add_option("--scale", scale, "natural or log")->check(CLI::IsMember({"natural", "log"}));
  meta_cmd->add_option("--alpha", meta_alpha, "Two-sided significance level");

  // calibrate
  auto* calibrate_cmd = app.add_subcommand("calibrate", "Calibrate the latent copula correlation");
  std::string cal_config;
  std::string cal_case;
  std::optional<double> cal_rho;
  std::vector<std::string> cal_settings;
  std::size_t verify = 0;
  std::uint64_t verify_seed = 1;
  std::string cal_cache = ".emprate-cache";
  bool cal_no_cache = false;
  calibrate_cmd->add_option("config", cal_config, "key=value scenario file");
  calibrate_cmd->add_option("--case", cal_case, "Preset case A-F");
  calibrate_cmd->add_option("--rho", cal_rho, "Target correlation");
  calibrate_cmd->add_option("--set", cal_settings, "Override a config key (key=value)");
  calibrate_cmd->add_option("--verify", verify, "Fresh draws used to check the realized correlation");
  calibrate_cmd->add_option("--verify-seed", verify_seed, "Seed of the verification draw");
  calibrate_cmd->add_option("--cache-dir", cal_cache, "Calibration cache directory");
  calibrate_cmd->add_flag("--no-cache", cal_no_cache, "Recalibrate without the cache");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    write_error(err, "Usage", "usage", e.what());
    return 2;
  }
  adjust_given = adjust_opt->count() > 0;

  try {
    if (analyze_cmd->parsed()) {
      if (adjust_given && adjust.empty()) throw Error(ErrorCode::InvalidArgument, "--adjust needs at least one column");
      if (std::any_of(adjust.begin(), adjust.end(), [](const std::string& s) { return s.empty(); })) {
        throw Error(ErrorCode::InvalidArgument, "--adjust has an empty column name");
      }
      if (!(alpha > 0.0 && alpha < 1.0)) throw Error(ErrorCode::InvalidArgument, "--alpha must be in (0, 1)");
      AnalyzeOptions opts;
      opts.method = method == "empirical" ? MethodChoice::Empirical
                    : method == "nb"      ? MethodChoice::NB
                                          : MethodChoice::Both;
      opts.covariates = adjust;
      opts.strata = strata;
      opts.alpha = alpha;
      if (hc != "auto") opts.hc_flavor = parse_hc_flavor(hc);
      opts.nb_scaling = nb_scale == "model" ? PearsonScaling::Model : PearsonScaling::Sandwich;
      opts.exposure_divisor = divisor;
      if (!adjustment.empty()) {
        opts.adjustment = parse_adjustment(adjustment);
      } else if (!strata.empty()) {
        opts.adjustment = Adjustment::Anhecova;
      } else if (!adjust.empty()) {
        opts.adjustment = Adjustment::Ancova;
      }
      if (opts.adjustment == Adjustment::Anhecova && strata.empty()) {
        throw Error(ErrorCode::InvalidArgument, "anhecova needs --strata");
      }
      if (opts.adjustment == Adjustment::Ancova && adjust.empty()) {
        throw Error(ErrorCode::InvalidArgument, "ancova needs --adjust");
      }
      CsvReadOptions read;
      read.adjust = adjust;
      read.strata = strata;
      if (!control.empty()) read.control = control;
      read.exposure_divisor = divisor;
      const AnalysisReport report = analyze(read_trial_csv_file(input, read), opts);
      const nlohmann::json j = to_json(report);
      if (!json_out.empty()) write_file(json_out, j.dump(2) + "\n");
      if (format == "json") {
        out << j.dump(2) << '\n';
      } else {
        out << to_text(report);
      }
      return 0;
    }

    if (simulate_cmd->parsed()) {
      SimulationConfig cfg = load_simulation_config(sim.config, sim.settings);
      if (sim.reps) {
        if (*sim.reps < 1) throw Error(ErrorCode::InvalidArgument, "--reps must be at least 1");
        cfg.replicates = *sim.reps;
      }
      if (sim.seed) cfg.seed = *sim.seed;
      if (sim.jobs) {
        if (*sim.jobs < 1) throw Error(ErrorCode::InvalidArgument, "--jobs must be at least 1");
        cfg.jobs = *sim.jobs;
      }
      std::optional<CalibrationCache> cache;
      if (!sim.no_cache) cache.emplace(sim.cache_dir);
      const StudyPlan plan = prepare_study(cfg.spec, cfg.alpha, cache ? &*cache : nullptr);
      const SimulationSummary summary = run_study(plan, paper_methods(), cfg.replicates, cfg.seed, cfg.jobs);
      const nlohmann::json j = to_json(summary);
      if (!sim.out_prefix.empty()) {
        write_file(sim.out_prefix + ".json", j.dump(2) + "\n");
        write_file(sim.out_prefix + ".csv", to_csv(summary));
      }
      if (sim.format == "json") {
        out << j.dump(2) << '\n';
      } else {
        out << simulation_text(summary);
      }
      return 0;
    }

    if (meta_cmd->parsed()) {
      if (!(meta_alpha > 0.0 && meta_alpha < 1.0)) throw Error(ErrorCode::InvalidArgument, "--alpha must be in (0, 1)");
      const auto strata_rows = read_meta_csv_file(meta_input);
      const RateRatioResult rr = scale == "log" ? pool_log(strata_rows, meta_alpha) : pool_natural(strata_rows, meta_alpha);
      nlohmann::json j = to_json(rr);
      j["schema_version"] = kReportSchemaVersion;
      j["scale"] = scale;
      j["strata"] = strata_rows.size();
      out << j.dump(2) << '\n';
      return 0;
    }

    if (calibrate_cmd->parsed()) {
      ConfigMap config = cal_config.empty() ? ConfigMap{} : parse_config_file(cal_config);
      for (const auto& s : cal_settings) apply_setting(config, s);
      if (!cal_case.empty()) config["case"] = cal_case;
      double target = 0.0;
      if (cal_rho) {
        target = *cal_rho;
      } else if (auto it = config.find("rho"); it != config.end()) {
        target = std::stod(it->second);
      }
      config.erase("rho");
      if (!(target >= 0.0 && target < 1.0)) throw Error(ErrorCode::InvalidArgument, "--rho must be in [0, 1)");
      SimulationConfig cfg = simulation_config(config);
      cfg.spec.rho = target;
      if (cfg.spec.kind != StudyKind::CorrelatedNB) {
        throw Error(ErrorCode::InvalidArgument, "calibration applies to correlated-NB scenarios only");
      }
      std::optional<CalibrationCache> cache;
      if (!cal_no_cache) cache.emplace(cal_cache);
      nlohmann::json j;
      j["schema_version"] = kReportSchemaVersion;
      j["scenario"] = to_json(cfg.spec);
      j["target_rho"] = target;
      auto& arms = j["arms"] = nlohmann::json::array();
      for (int a = 0; a < 2; ++a) {
        const CopulaMargins margins = arm_margins(cfg.spec, a);
        const double latent = target == 0.0 ? 0.0
                              : cache       ? cache->get_or_compute(margins, target, CalibrationOptions{})
                                            : calibrate_latent_correlation(margins, target);
        nlohmann::json aj = {{"arm", a}, {"latent_rho", latent}};
        if (verify > 0) {
          aj["realized_rho"] = copula_correlation(margins, latent, verify, verify_seed);
          aj["verify_draws"] = verify;
        }
        arms.push_back(std::move(aj));
      }
      out << j.dump(2) << '\n';
      return 0;
    }
  } catch (const Error& e) {
    const ErrorClass cls = classify(e.code());
    write_error(err, to_string(e.code()), class_name(cls), e.what());
    return exit_status(cls);
  } catch (const std::exception& e) {
    write_error(err, "Internal", "numerical", e.what());
    return 4;
  }
  return 2;
}

}  // namespace emprate

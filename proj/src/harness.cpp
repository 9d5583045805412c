#include "emprate/harness.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <thread>

#include "emprate/error.hpp"

namespace emprate {

std::vector<MethodSpec> paper_methods() {
  return {
      {"nb_unadjusted", Estimator::NB, false, std::nullopt, PearsonScaling::Sandwich},
      {"nb_adjusted", Estimator::NB, true, std::nullopt, PearsonScaling::Sandwich},
      {"empirical_unadjusted", Estimator::Empirical, false, std::nullopt, PearsonScaling::Sandwich},
      {"empirical_adjusted", Estimator::Empirical, true, std::nullopt, PearsonScaling::Sandwich},
  };
}

// ---------------------------------------------------------------------------
// Calibration cache
// ---------------------------------------------------------------------------

CalibrationCache::CalibrationCache(std::filesystem::path dir) : dir_(std::move(dir)) {}

std::string CalibrationCache::key(const CopulaMargins& m, double target, const CalibrationOptions& o) {
  char text[512];
  std::snprintf(text, sizeof text,
                "x_mean=%.17g;x_k=%.17g;y_rate=%.17g;y_k=%.17g;mix=%.17g,%.17g,%.17g,%.17g,%.17g;"
                "target=%.17g;tol=%.17g;pairs=%zu;seed=%llu",
                m.x_mean, m.x_k, m.y_rate, m.y_k, m.exposure.lo1, m.exposure.hi1, m.exposure.lo2,
                m.exposure.hi2, m.exposure.p_first, target, o.tol, o.pairs,
                static_cast<unsigned long long>(o.seed));
  // FNV-1a, 64 bit
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const char* c = text; *c; ++c) {
    h ^= static_cast<unsigned char>(*c);
    h *= 0x100000001b3ULL;
  }
  char hex[17];
  std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(h));
  return hex;
}

double CalibrationCache::get_or_compute(const CopulaMargins& margins, double target, const CalibrationOptions& options) {
  const auto path = dir_ / (key(margins, target, options) + ".latent");
  if (std::ifstream in(path); in) {
    double value;
    if (in >> value) return value;
  }
  const double value = calibrate_latent_correlation(margins, target, options);
  std::error_code ec;
  std::filesystem::create_directories(dir_, ec);
  if (!ec) {
    std::ofstream out(path);
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g\n", value);
    out << buf;
  }
  return value;
}

// ---------------------------------------------------------------------------
// Replicates
// ---------------------------------------------------------------------------

StudyPlan prepare_study(const ScenarioSpec& spec, double alpha, CalibrationCache* cache,
                        const CalibrationOptions& options) {
  spec.validate();
  StudyPlan plan;
  plan.spec = spec;
  plan.alpha = alpha;
  if (spec.kind == StudyKind::CorrelatedNB) {
    for (int arm = 0; arm < 2; ++arm) {
      const CopulaMargins m = arm_margins(spec, arm);
      if (arm == 1 && m.y_rate == spec.r0 && m.y_k == spec.k0) {
        plan.latent_rho.push_back(plan.latent_rho.front());
        continue;
      }
      plan.latent_rho.push_back(cache ? cache->get_or_compute(m, spec.rho, options)
                                      : calibrate_latent_correlation(m, spec.rho, options));
    }
  }
  return plan;
}

Dataset generate_dataset(const StudyPlan& plan, RngStream& rng) {
  return plan.spec.kind == StudyKind::CorrelatedNB ? gen_correlated_dataset(plan.spec, plan.latent_rho, rng)
                                                   : gen_zinb_dataset(plan.spec, rng);
}

namespace {

MethodOutcome apply_method(const Dataset& data, const MethodSpec& method, double alpha) {
  MethodOutcome out;
  try {
    if (method.estimator == Estimator::NB) {
      NBOptions opts;
      opts.scaling = method.scaling;
      const NBFit fit = fit_nb(data, method.adjusted, {}, opts);
      out.nb_status = fit.status;
      if (fit.status == FitStatus::NonConvergence) {
        out.error = fit.diagnostics.message;
        return out;
      }
      out.rr = nb_rate_ratio(marginal_rates_gcomp(fit, data), 1, 0, alpha);
    } else {
      InferenceConfig cfg;
      cfg.alpha = alpha;
      cfg.adjustment = method.adjusted ? Adjustment::Ancova : Adjustment::None;
      cfg.hc_flavor = method.hc_flavor;
      out.rr = rate_ratio(log_rates(estimate_rates(data, cfg)), 1, 0, alpha);
    }
    out.ok = true;
  } catch (const Error& e) {
    out.ok = false;
    out.error = e.what();
  }
  return out;
}

double column_corr(const Dataset& data, std::size_t c) {
  const auto n = static_cast<double>(data.size());
  double mx = 0.0, my = 0.0;
  for (const auto& r : data.records()) {
    mx += r.covariates[c];
    my += static_cast<double>(r.count);
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (const auto& r : data.records()) {
    const double dx = r.covariates[c] - mx, dy = static_cast<double>(r.count) - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  return (sxx > 0.0 && syy > 0.0) ? sxy / std::sqrt(sxx * syy) : 0.0;
}

}  // namespace

ReplicateResult analyze_replicate(const Dataset& data, const std::vector<MethodSpec>& methods, double alpha) {
  ReplicateResult result;
  result.outcomes.reserve(methods.size());
  for (const auto& m : methods) result.outcomes.push_back(apply_method(data, m, alpha));
  for (std::size_t c = 0; c < data.covariate_count(); ++c) {
    result.covariate_outcome_corr.push_back(column_corr(data, c));
  }
  return result;
}

ReplicateResult run_replicate(const StudyPlan& plan, const std::vector<MethodSpec>& methods, RngStream& rng) {
  const Dataset data = generate_dataset(plan, rng);
  ReplicateResult result = analyze_replicate(data, methods, plan.alpha);
  result.stream_id = rng.stream_id();
  return result;
}

// ---------------------------------------------------------------------------
// Studies
// ---------------------------------------------------------------------------

SimulationSummary summarize(const StudyPlan& plan, const std::vector<MethodSpec>& methods,
                            const std::vector<ReplicateResult>& results, std::uint64_t seed) {
  SimulationSummary s;
  s.spec = plan.spec;
  s.latent_rho = plan.latent_rho;
  s.replicates = static_cast<int>(results.size());
  s.seed = seed;
  s.alpha = plan.alpha;
  s.true_rate_ratio = plan.spec.true_rate_ratio();
  const double true_lambda = s.true_rate_ratio;
  const double reps = static_cast<double>(results.size());

  for (std::size_t m = 0; m < methods.size(); ++m) {
    MethodSummary ms;
    ms.name = methods[m].name;
    int rejections = 0, covered = 0;
    double sum_lambda = 0.0, sum_theta = 0.0, sum_theta2 = 0.0, sum_se = 0.0;
    for (const auto& r : results) {
      const MethodOutcome& o = r.outcomes[m];
      if (!o.ok) {
        if (o.nb_status == FitStatus::NonConvergence) ++ms.nonconvergence; else ++ms.other_failures;
        continue;
      }
      ++ms.successes;
      if (o.rr.p < plan.alpha) ++rejections;
      if (o.rr.ci_low <= true_lambda && true_lambda <= o.rr.ci_high) ++covered;
      sum_lambda += o.rr.lambda_hat;
      sum_theta += o.rr.log_lambda;
      sum_theta2 += o.rr.log_lambda * o.rr.log_lambda;
      sum_se += o.rr.se_log;
    }
    ms.rejection_rate = reps > 0 ? rejections / reps : 0.0;
    ms.mc_se = reps > 0 ? std::sqrt(ms.rejection_rate * (1.0 - ms.rejection_rate) / reps) : 0.0;
    if (ms.successes > 0) {
      const double ok = ms.successes;
      ms.mean_lambda = sum_lambda / ok;
      ms.mean_theta = sum_theta / ok;
      ms.mean_se = sum_se / ok;
      ms.coverage = covered / ok;
      if (ms.successes > 1) {
        const double var = (sum_theta2 - ok * ms.mean_theta * ms.mean_theta) / (ok - 1.0);
        ms.sd_theta = std::sqrt(std::max(var, 0.0));
      }
    }
    s.methods.push_back(ms);
  }

  if (!results.empty()) {
    s.mean_covariate_outcome_corr.assign(results.front().covariate_outcome_corr.size(), 0.0);
    for (const auto& r : results) {
      for (std::size_t c = 0; c < r.covariate_outcome_corr.size(); ++c) {
        s.mean_covariate_outcome_corr[c] += r.covariate_outcome_corr[c] / reps;
      }
    }
  }
  return s;
}

SimulationSummary run_study(const StudyPlan& plan, const std::vector<MethodSpec>& methods, int replicates,
                            std::uint64_t seed, int jobs) {
  if (replicates < 1) throw Error(ErrorCode::InvalidArgument, "at least one replicate is required");
  std::vector<ReplicateResult> results(static_cast<std::size_t>(replicates));
  std::atomic<int> next{0};
  auto worker = [&] {
    for (int r = next++; r < replicates; r = next++) {
      RngStream rng(seed, static_cast<std::uint64_t>(r));
      results[static_cast<std::size_t>(r)] = run_replicate(plan, methods, rng);
    }
  };
  const int threads = std::max(1, std::min(jobs, replicates));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  return summarize(plan, methods, results, seed);
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

nlohmann::json to_json(const ScenarioSpec& s) {
  nlohmann::json j;
  j["case"] = s.case_id;
  j["kind"] = s.kind == StudyKind::CorrelatedNB ? "correlated_nb" : "zinb";
  j["n_per_arm"] = s.n_per_arm;
  j["exposure"] = {{"lo1", s.exposure.lo1}, {"hi1", s.exposure.hi1}, {"lo2", s.exposure.lo2},
                   {"hi2", s.exposure.hi2}, {"p_first", s.exposure.p_first}};
  j["k0"] = s.k0;
  j["k1"] = s.k1;
  if (s.kind == StudyKind::CorrelatedNB) {
    j["r_x"] = s.r_x;
    j["k_x"] = s.k_x;
    j["r0"] = s.r0;
    j["r1"] = s.r1;
    j["rho"] = s.rho;
  } else {
    j["x_mean"] = s.x_mean;
    j["beta0"] = s.beta0;
    j["beta_trt"] = s.beta_trt;
    j["beta1"] = s.beta1;
    j["beta2"] = s.beta2;
    j["pi"] = s.pi;
  }
  return j;
}

ScenarioSpec scenario_from_json(const nlohmann::json& j) {
  ScenarioSpec s;
  s.case_id = j.value("case", std::string("custom"));
  s.kind = j.value("kind", std::string("correlated_nb")) == "zinb" ? StudyKind::ZeroInflatedNB
                                                                   : StudyKind::CorrelatedNB;
  s.n_per_arm = j.value("n_per_arm", s.n_per_arm);
  if (j.contains("exposure")) {
    const auto& e = j["exposure"];
    s.exposure.lo1 = e.value("lo1", s.exposure.lo1);
    s.exposure.hi1 = e.value("hi1", s.exposure.hi1);
    s.exposure.lo2 = e.value("lo2", s.exposure.lo2);
    s.exposure.hi2 = e.value("hi2", s.exposure.hi2);
    s.exposure.p_first = e.value("p_first", s.exposure.p_first);
  }
  s.k0 = j.value("k0", s.k0);
  s.k1 = j.value("k1", s.k1);
  s.r_x = j.value("r_x", s.r_x);
  s.k_x = j.value("k_x", s.k_x);
  s.r0 = j.value("r0", s.r0);
  s.r1 = j.value("r1", s.r1);
  s.rho = j.value("rho", s.rho);
  s.x_mean = j.value("x_mean", s.x_mean);
  s.beta0 = j.value("beta0", s.beta0);
  s.beta_trt = j.value("beta_trt", s.beta_trt);
  s.beta1 = j.value("beta1", s.beta1);
  s.beta2 = j.value("beta2", s.beta2);
  s.pi = j.value("pi", s.pi);
  s.validate();
  return s;
}

nlohmann::json to_json(const SimulationSummary& s) {
  nlohmann::json j;
  j["schema_version"] = 1;
  j["scenario"] = to_json(s.spec);
  j["latent_rho"] = s.latent_rho;
  j["replicates"] = s.replicates;
  j["seed"] = s.seed;
  j["alpha"] = s.alpha;
  j["true_rate_ratio"] = s.true_rate_ratio;
  j["mean_covariate_outcome_corr"] = s.mean_covariate_outcome_corr;
  auto& methods = j["methods"] = nlohmann::json::array();
  for (const auto& m : s.methods) {
    methods.push_back({{"name", m.name},
                       {"rejection_rate", m.rejection_rate},
                       {"mc_se", m.mc_se},
                       {"mean_lambda", m.mean_lambda},
                       {"mean_theta", m.mean_theta},
                       {"sd_theta", m.sd_theta},
                       {"mean_se", m.mean_se},
                       {"coverage", m.coverage},
                       {"successes", m.successes},
                       {"nonconvergence", m.nonconvergence},
                       {"other_failures", m.other_failures}});
  }
  return j;
}

std::string to_csv(const SimulationSummary& s) {
  std::ostringstream out;
  out << "case,n_per_arm,rho,pi,true_rate_ratio,method,replicates,rejection_rate,mc_se,mean_lambda,"
         "mean_theta,sd_theta,mean_se,coverage,successes,nonconvergence,other_failures\n";
  char buf[512];
  for (const auto& m : s.methods) {
    std::snprintf(buf, sizeof buf, "%s,%d,%.6g,%.6g,%.10g,%s,%d,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%d,%d,%d\n",
                  s.spec.case_id.c_str(), s.spec.n_per_arm, s.spec.rho, s.spec.pi, s.true_rate_ratio,
                  m.name.c_str(), s.replicates, m.rejection_rate, m.mc_se, m.mean_lambda, m.mean_theta,
                  m.sd_theta, m.mean_se, m.coverage, m.successes, m.nonconvergence, m.other_failures);
    out << buf;
  }
  return out.str();
}

}  // namespace emprate

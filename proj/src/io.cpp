#include "emprate/io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <unordered_map>

#include "emprate/error.hpp"

namespace emprate {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

// Splits one CSV record; handles quoted fields with doubled quotes.
std::vector<std::string> split_csv_line(const std::string& line, std::size_t row) {
  std::vector<std::string> fields;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(trim(field));
      field.clear();
    } else {
      field += c;
    }
  }
  if (quoted) throw Error(ErrorCode::Schema, "row " + std::to_string(row) + ": unterminated quoted field");
  fields.push_back(trim(field));
  return fields;
}

std::string quote_csv(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> line_numbers;

  std::optional<std::size_t> column(const std::string& name) const {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) return std::nullopt;
    return static_cast<std::size_t>(it - header.begin());
  }
  std::size_t require(const std::string& name) const {
    const auto c = column(name);
    if (!c) throw Error(ErrorCode::Schema, "missing required column '" + name + "'");
    return *c;
  }
};

CsvTable read_table(std::istream& in) {
  CsvTable t;
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no == 1 && line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
    if (trim(line).empty()) continue;
    auto fields = split_csv_line(line, line_no);
    if (!have_header) {
      t.header = std::move(fields);
      have_header = true;
      for (std::size_t i = 0; i < t.header.size(); ++i) {
        for (std::size_t j = 0; j < i; ++j) {
          if (t.header[i] == t.header[j]) throw Error(ErrorCode::Schema, "duplicate column '" + t.header[i] + "'");
        }
      }
      continue;
    }
    if (fields.size() != t.header.size()) {
      throw Error(ErrorCode::Schema, "row " + std::to_string(line_no) + ": expected " +
                                         std::to_string(t.header.size()) + " fields, found " +
                                         std::to_string(fields.size()));
    }
    t.rows.push_back(std::move(fields));
    t.line_numbers.push_back(line_no);
  }
  if (!have_header) throw Error(ErrorCode::EmptyInput, "input has no header row");
  return t;
}

[[noreturn]] void bad_cell(const CsvTable& t, std::size_t r, std::size_t c, const std::string& what) {
  throw Error(ErrorCode::Schema, "row " + std::to_string(t.line_numbers[r]) + ", column '" + t.header[c] +
                                     "': " + what + " ('" + t.rows[r][c] + "')");
}

double parse_double_cell(const CsvTable& t, std::size_t r, std::size_t c) {
  const std::string& s = t.rows[r][c];
  if (s.empty() || s == "NA" || s == "NaN" || s == "nan") return std::nan("");
  double v = 0.0;
  const char* first = s.data();
  if (*first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) bad_cell(t, r, c, "not a number");
  return v;
}

std::int64_t parse_count_cell(const CsvTable& t, std::size_t r, std::size_t c) {
  const std::string& s = t.rows[r][c];
  std::int64_t v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec == std::errc() && ptr == s.data() + s.size()) return v;
  // Accept integral values written with a decimal point, e.g. "3.0".
  const double d = parse_double_cell(t, r, c);
  if (!std::isfinite(d) || d != std::floor(d)) bad_cell(t, r, c, "not an integer count");
  return static_cast<std::int64_t>(d);
}

double parse_number(const std::string& key, const std::string& value) {
  double v = 0.0;
  const char* first = value.data();
  if (*first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, value.data() + value.size(), v);
  if (value.empty() || ec != std::errc() || ptr != value.data() + value.size()) {
    throw Error(ErrorCode::InvalidArgument, "setting '" + key + "': not a number ('" + value + "')");
  }
  return v;
}

long long parse_integer(const std::string& key, const std::string& value) {
  long long v = 0;
  const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
  if (value.empty() || ec != std::errc() || ptr != value.data() + value.size()) {
    throw Error(ErrorCode::InvalidArgument, "setting '" + key + "': not an integer ('" + value + "')");
  }
  return v;
}

std::ifstream open_input(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::InvalidArgument, "cannot open '" + path + "'");
  return in;
}

}  // namespace

// ---------------------------------------------------------------------------
// Subject-level CSV
// ---------------------------------------------------------------------------

TrialData read_trial_csv(std::istream& in, const CsvReadOptions& options) {
  if (!(options.exposure_divisor > 0.0) || !std::isfinite(options.exposure_divisor)) {
    throw Error(ErrorCode::InvalidArgument, "exposure divisor must be positive");
  }
  const CsvTable t = read_table(in);
  const std::size_t c_id = t.require("subject_id");
  const std::size_t c_arm = t.require("arm");
  const std::size_t c_events = t.require("events");
  const std::size_t c_exposure = t.require("exposure");
  const auto c_period = t.column("period");
  std::vector<std::size_t> c_cov;
  for (const auto& name : options.adjust) c_cov.push_back(t.require(name));
  std::vector<std::size_t> c_strata;
  for (const auto& name : options.strata) c_strata.push_back(t.require(name));
  if (t.rows.empty()) throw Error(ErrorCode::EmptyInput, "input has no data rows");

  TrialData out;
  std::unordered_map<std::string, int> arm_index;
  if (options.control) {
    arm_index[*options.control] = 0;
    out.arm_labels.push_back(*options.control);
  }
  std::unordered_map<std::string, std::size_t> period_index;
  std::vector<std::vector<SubjectRecord>> by_period;

  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    SubjectRecord rec;
    rec.subject_id = row[c_id];
    if (rec.subject_id.empty()) bad_cell(t, r, c_id, "empty subject id");
    const std::string& arm = row[c_arm];
    if (arm.empty()) bad_cell(t, r, c_arm, "empty arm label");
    auto [it, inserted] = arm_index.emplace(arm, static_cast<int>(out.arm_labels.size()));
    if (inserted) out.arm_labels.push_back(arm);
    rec.arm = it->second;
    rec.count = parse_count_cell(t, r, c_events);
    if (rec.count < 0) bad_cell(t, r, c_events, "negative event count");
    const double d = parse_double_cell(t, r, c_exposure);
    if (!(d > 0.0) || !std::isfinite(d)) bad_cell(t, r, c_exposure, "exposure must be positive");
    rec.exposure = d / options.exposure_divisor;
    for (std::size_t c : c_cov) {
      const double x = parse_double_cell(t, r, c);
      if (!std::isfinite(x)) bad_cell(t, r, c, "missing covariate value");
      rec.covariates.push_back(x);
    }
    if (!c_strata.empty()) {
      std::string label;
      for (std::size_t i = 0; i < c_strata.size(); ++i) {
        if (row[c_strata[i]].empty()) bad_cell(t, r, c_strata[i], "missing stratum label");
        if (i) label += '|';
        label += row[c_strata[i]];
      }
      rec.stratum = label;
    }
    const std::string period = c_period ? row[*c_period] : std::string();
    auto [pit, pnew] = period_index.emplace(period, by_period.size());
    if (pnew) {
      out.periods.push_back(period);
      by_period.emplace_back();
    }
    by_period[pit->second].push_back(std::move(rec));
  }
  if (options.control && out.arm_labels.size() > 0 &&
      std::none_of(by_period.begin(), by_period.end(), [](const auto& recs) {
        return std::any_of(recs.begin(), recs.end(), [](const SubjectRecord& s) { return s.arm == 0; });
      })) {
    throw Error(ErrorCode::Schema, "control arm '" + *options.control + "' does not occur in the input");
  }
  const int arms = static_cast<int>(out.arm_labels.size());
  for (std::size_t p = 0; p < by_period.size(); ++p) {
    try {
      out.datasets.push_back(validate_dataset(std::move(by_period[p]), options.adjust, arms));
    } catch (const Error& e) {
      if (out.periods[p].empty()) throw;
      throw Error(e.code(), "period '" + out.periods[p] + "': " + e.what());
    }
  }
  return out;
}

TrialData read_trial_csv_file(const std::string& path, const CsvReadOptions& options) {
  auto in = open_input(path);
  return read_trial_csv(in, options);
}

void write_trial_csv(std::ostream& out, const Dataset& data, const std::vector<std::string>& arm_labels) {
  out << "subject_id,arm,events,exposure";
  for (const auto& name : data.covariate_names()) out << ',' << quote_csv(name);
  if (data.has_strata()) out << ",stratum";
  out << '\n';
  char buf[40];
  for (const auto& r : data.records()) {
    const std::string arm = r.arm < static_cast<int>(arm_labels.size()) ? arm_labels[r.arm] : std::to_string(r.arm);
    out << quote_csv(r.subject_id) << ',' << quote_csv(arm) << ',' << r.count;
    std::snprintf(buf, sizeof buf, ",%.17g", r.exposure);
    out << buf;
    for (double x : r.covariates) {
      std::snprintf(buf, sizeof buf, ",%.17g", x);
      out << buf;
    }
    if (data.has_strata()) out << ',' << quote_csv(*r.stratum);
    out << '\n';
  }
}

// ---------------------------------------------------------------------------
// Meta-analysis CSV
// ---------------------------------------------------------------------------

std::vector<StratumResult> read_meta_csv(std::istream& in) {
  const CsvTable t = read_table(in);
  const auto c_stratum = t.column("stratum");
  const auto c_lambda = t.column("lambda");
  const auto c_var = t.column("var_lambda");
  const auto c_log = t.column("log_lambda");
  const auto c_var_log = t.column("var_log_lambda");
  const std::size_t c_weight = t.require("weight");
  const bool natural = c_lambda && c_var;
  const bool log_scale = c_log && c_var_log;
  if (!natural && !log_scale) {
    throw Error(ErrorCode::Schema, "need columns lambda,var_lambda or log_lambda,var_log_lambda");
  }
  if (t.rows.empty()) throw Error(ErrorCode::EmptyInput, "input has no data rows");
  std::vector<StratumResult> out;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    StratumResult s;
    s.stratum = c_stratum ? t.rows[r][*c_stratum] : std::to_string(r + 1);
    s.weight = parse_double_cell(t, r, c_weight);
    if (log_scale) {
      s.log_lambda = parse_double_cell(t, r, *c_log);
      s.var_log_lambda = parse_double_cell(t, r, *c_var_log);
    }
    if (natural) {
      s.lambda_hat = parse_double_cell(t, r, *c_lambda);
      s.var_lambda = parse_double_cell(t, r, *c_var);
    } else {
      s.lambda_hat = std::exp(*s.log_lambda);
      s.var_lambda = s.lambda_hat * s.lambda_hat * *s.var_log_lambda;
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<StratumResult> read_meta_csv_file(const std::string& path) {
  auto in = open_input(path);
  return read_meta_csv(in);
}

// ---------------------------------------------------------------------------
// Simulation config
// ---------------------------------------------------------------------------

void apply_setting(ConfigMap& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) {
    throw Error(ErrorCode::InvalidArgument, "expected key=value, got '" + assignment + "'");
  }
  const std::string key = trim(assignment.substr(0, eq));
  if (key.empty()) throw Error(ErrorCode::InvalidArgument, "empty key in '" + assignment + "'");
  config[key] = trim(assignment.substr(eq + 1));
}

ConfigMap parse_config(std::istream& in) {
  ConfigMap config;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    try {
      apply_setting(config, line);
    } catch (const Error& e) {
      throw Error(ErrorCode::Schema, "config line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return config;
}

ConfigMap parse_config_file(const std::string& path) {
  auto in = open_input(path);
  return parse_config(in);
}

SimulationConfig simulation_config(const ConfigMap& config) {
  static const std::vector<std::string> known = {
      "case", "kind", "n", "rho", "pi", "r_x", "k_x", "r0", "r1", "k0", "k1", "k", "x_mean",
      "beta0", "beta_trt", "beta1", "beta2", "reps", "seed", "jobs", "alpha"};
  for (const auto& [key, value] : config) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw Error(ErrorCode::InvalidArgument, "unknown setting '" + key + "'");
    }
  }
  auto get = [&](const std::string& key) -> std::optional<std::string> {
    const auto it = config.find(key);
    if (it == config.end()) return std::nullopt;
    return it->second;
  };

  SimulationConfig out;
  int n = 400;
  if (auto v = get("n")) {
    const long long n_raw = parse_integer("n", *v);
    if (n_raw < 2 || n_raw > 100000000) throw Error(ErrorCode::InvalidArgument, "n must be at least 2");
    n = static_cast<int>(n_raw);
  }
  if (auto c = get("case"); c && *c != "custom") {
    out.spec = scenario(*c, n);
  } else {
    out.spec.case_id = "custom";
    out.spec.n_per_arm = n;
    if (auto kind = get("kind")) {
      if (*kind == "zinb") {
        out.spec.kind = StudyKind::ZeroInflatedNB;
      } else if (*kind == "correlated_nb") {
        out.spec.kind = StudyKind::CorrelatedNB;
      } else {
        throw Error(ErrorCode::InvalidArgument, "kind must be correlated_nb or zinb");
      }
    }
  }
  auto number = [&](const std::string& key, double& field) {
    if (auto v = get(key)) field = parse_number(key, *v);
  };
  if (auto v = get("k")) out.spec.k0 = out.spec.k1 = parse_number("k", *v);
  number("rho", out.spec.rho);
  number("pi", out.spec.pi);
  number("r_x", out.spec.r_x);
  number("k_x", out.spec.k_x);
  number("r0", out.spec.r0);
  number("r1", out.spec.r1);
  number("k0", out.spec.k0);
  number("k1", out.spec.k1);
  number("x_mean", out.spec.x_mean);
  number("beta0", out.spec.beta0);
  number("beta_trt", out.spec.beta_trt);
  number("beta1", out.spec.beta1);
  number("beta2", out.spec.beta2);
  number("alpha", out.alpha);
  if (auto v = get("reps")) {
    const long long reps = parse_integer("reps", *v);
    if (reps < 1 || reps > 100000000) throw Error(ErrorCode::InvalidArgument, "reps must be at least 1");
    out.replicates = static_cast<int>(reps);
  }
  if (auto v = get("seed")) {
    const long long seed = parse_integer("seed", *v);
    if (seed < 0) throw Error(ErrorCode::InvalidArgument, "seed must be non-negative");
    out.seed = static_cast<std::uint64_t>(seed);
  }
  if (auto v = get("jobs")) {
    const long long jobs = parse_integer("jobs", *v);
    if (jobs < 1 || jobs > 1024) throw Error(ErrorCode::InvalidArgument, "jobs must be in [1, 1024]");
    out.jobs = static_cast<int>(jobs);
  }
  if (!(out.alpha > 0.0 && out.alpha < 1.0)) throw Error(ErrorCode::InvalidArgument, "alpha must be in (0, 1)");
  out.spec.validate();
  return out;
}

// ---------------------------------------------------------------------------
// Aggregates
// ---------------------------------------------------------------------------

Dataset synthesize_from_aggregates(const std::vector<ArmAggregate>& arms, int subjects_per_arm) {
  if (subjects_per_arm < 2) throw Error(ErrorCode::InvalidArgument, "need at least two subjects per arm");
  std::vector<SubjectRecord> records;
  for (std::size_t a = 0; a < arms.size(); ++a) {
    if (arms[a].events < 0) throw Error(ErrorCode::NegativeCount, "negative event total");
    if (!(arms[a].exposure > 0.0)) throw Error(ErrorCode::NonPositiveExposure, "non-positive exposure total");
    const std::int64_t base = arms[a].events / subjects_per_arm;
    const std::int64_t extra = arms[a].events % subjects_per_arm;
    for (int j = 0; j < subjects_per_arm; ++j) {
      SubjectRecord r;
      char id[32];
      std::snprintf(id, sizeof id, "s%zu-%05d", a, j);
      r.subject_id = id;
      r.arm = static_cast<int>(a);
      r.count = base + (j < extra ? 1 : 0);
      r.exposure = arms[a].exposure / subjects_per_arm;
      records.push_back(std::move(r));
    }
  }
  return validate_dataset(std::move(records), {}, static_cast<int>(arms.size()));
}

}  // namespace emprate

#include "gridfl/experiment.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "gridfl/data.hpp"
#include "gridfl/hfl.hpp"
#include "gridfl/secureboost.hpp"
#include "gridfl/vflr.hpp"

namespace gridfl::exp {

namespace fs = std::filesystem;
using nlohmann::json;

uint64_t config_hash(const json& config) { return fnv1a64(config.dump()); }

json load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config: " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
}

void apply_override(json& config, const std::string& assignment) {
  auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ConfigError("override must look like key.path=value: " + assignment);
  std::string path = assignment.substr(0, eq);
  std::string value = assignment.substr(eq + 1);

  json* node = &config;
  size_t start = 0;
  for (;;) {
    auto dot = path.find('.', start);
    std::string key = path.substr(start, dot == std::string::npos ? dot : dot - start);
    if (key.empty()) throw ConfigError("override has an empty path segment: " + assignment);
    if (dot == std::string::npos) {
      json parsed = json::parse(value, nullptr, /*allow_exceptions=*/false);
      (*node)[key] = parsed.is_discarded() ? json(value) : parsed;
      return;
    }
    node = &(*node)[key];
    start = dot + 1;
  }
}

// ---------------------------------------------------------------------------
// Validation

namespace {

struct Field {
  const char* name;
  bool required;
};

void check_keys(const json& obj, const std::string& path, std::initializer_list<Field> fields) {
  if (!obj.is_object()) throw ConfigError(path + ": expected an object");
  for (const auto& [key, _] : obj.items()) {
    bool known = false;
    for (const auto& f : fields)
      if (key == f.name) known = true;
    if (!known) throw ConfigError(path + "." + key + ": unknown key");
  }
  for (const auto& f : fields)
    if (f.required && !obj.contains(f.name))
      throw ConfigError(path + "." + f.name + ": missing required key");
}

double num(const json& obj, const std::string& path, const char* key, double fallback,
           double lo, double hi, bool lo_strict = false) {
  double v = fallback;
  if (obj.contains(key)) {
    if (!obj.at(key).is_number()) throw ConfigError(path + "." + key + ": expected a number");
    v = obj.at(key).get<double>();
  }
  if (v < lo || v > hi || (lo_strict && v <= lo))
    throw ConfigError(path + "." + key + ": value " + format_double(v) + " out of range");
  return v;
}

int integer(const json& obj, const std::string& path, const char* key, int fallback, int lo,
            int hi) {
  int v = fallback;
  if (obj.contains(key)) {
    if (!obj.at(key).is_number_integer())
      throw ConfigError(path + "." + key + ": expected an integer");
    v = obj.at(key).get<int>();
  }
  if (v < lo || v > hi)
    throw ConfigError(path + "." + key + ": value " + std::to_string(v) + " out of range");
  return v;
}

std::string protocol_of(const json& config) {
  if (!config.contains("protocol") || !config.at("protocol").is_string())
    throw ConfigError("protocol: missing or not a string");
  auto p = config.at("protocol").get<std::string>();
  if (p != "hfl" && p != "vflr" && p != "secureboost")
    throw ConfigError("protocol: must be hfl, vflr or secureboost");
  return p;
}

void validate_data_section(const json& data, const std::string& protocol) {
  bool vertical = protocol != "hfl";
  if (!data.contains("source")) throw ConfigError("data.source: missing required key");
  auto source = data.at("source").get<std::string>();
  if (source == "synthetic") {
    if (vertical) {
      check_keys(data, "data",
                 {{"source", true},
                  {"samples", false},
                  {"features_a", false},
                  {"features_b", false},
                  {"signal_a", false},
                  {"signal_b", false},
                  {"nonlinear", false},
                  {"noise_sigma", false}});
      integer(data, "data", "samples", 200, 4, 1000000);
      integer(data, "data", "features_a", 5, 0, 10000);
      integer(data, "data", "features_b", 5, 0, 10000);
      num(data, "data", "noise_sigma", 0.2, 0.0, 1e9);
    } else {
      check_keys(data, "data",
                 {{"source", true},
                  {"stations", false},
                  {"length", false},
                  {"daily_amplitude", false},
                  {"weekly_amplitude", false},
                  {"noise_sigma", false},
                  {"offset", false}});
      integer(data, "data", "stations", 3, 1, 1000);
      integer(data, "data", "length", 24 * 14, 30, 10000000);
      num(data, "data", "noise_sigma", 0.05, 0.0, 1e9);
    }
  } else if (source == "csv") {
    if (vertical) {
      check_keys(data, "data", {{"source", true}, {"table_a", true}, {"table_b", true}});
    } else {
      check_keys(data, "data", {{"source", true}, {"series", true}});
      if (!data.at("series").is_array() || data.at("series").empty())
        throw ConfigError("data.series: expected a non-empty array of paths");
    }
  } else {
    throw ConfigError("data.source: must be synthetic or csv");
  }
}

void validate_encryption(const json& config) {
  if (!config.contains("encryption")) return;
  const auto& e = config.at("encryption");
  check_keys(e, "encryption", {{"key_bits", false}, {"fraction_bits", false}});
  integer(e, "encryption", "key_bits", 512, 128, 8192);
  integer(e, "encryption", "fraction_bits", 40, 8, 128);
}

}  // namespace

void validate_config(const json& config) {
  auto protocol = protocol_of(config);
  check_keys(config, "config",
             {{"protocol", true},
              {"seed", true},
              {"data", true},
              {"model", false},
              {"train", true},
              {"encryption", false},
              {"fault_injection", false}});
  const auto& seed = config.at("seed");
  if (!seed.is_number_integer() || (seed.is_number_integer() && !seed.is_number_unsigned() &&
                                    seed.get<int64_t>() < 0))
    throw ConfigError("seed: expected a non-negative integer");
  validate_data_section(config.at("data"), protocol);
  validate_encryption(config);

  const auto& train = config.at("train");
  if (protocol == "hfl") {
    if (config.contains("model")) {
      const auto& m = config.at("model");
      check_keys(m, "model",
                 {{"input_window", false}, {"horizon", false}, {"hidden_size", false},
                  {"fc_hidden", false}});
      integer(m, "model", "input_window", 16, 1, 4096);
      integer(m, "model", "horizon", 7, 1, 4096);
      integer(m, "model", "hidden_size", 32, 1, 4096);
      integer(m, "model", "fc_hidden", 32, 1, 4096);
    }
    check_keys(train, "train",
               {{"learning_rate", false}, {"max_epochs", false}, {"tol", false},
                {"patience", false}, {"drop_probability", false}, {"weighted_average", false}});
    num(train, "train", "learning_rate", 0.05, 0.0, 1e6, /*lo_strict=*/true);
    integer(train, "train", "max_epochs", 10, 1, 100000);
    num(train, "train", "tol", 1e-3, 0.0, 1.0, /*lo_strict=*/true);
    integer(train, "train", "patience", 3, 1, 1000);
    double p = num(train, "train", "drop_probability", 0.0, 0.0, 1.0);
    if (p >= 1.0) throw ConfigError("train.drop_probability: must be < 1");
    if (train.contains("weighted_average") && !train.at("weighted_average").is_boolean())
      throw ConfigError("train.weighted_average: expected a boolean");
  } else if (protocol == "vflr") {
    check_keys(train, "train",
               {{"learning_rate", false}, {"max_epochs", false}, {"tol", false},
                {"lambda", false}, {"grad_scale_bound", false}});
    num(train, "train", "learning_rate", 1e-3, 0.0, 1e6, /*lo_strict=*/true);
    integer(train, "train", "max_epochs", 200, 1, 1000000);
    num(train, "train", "tol", 1e-6, 0.0, 1.0, /*lo_strict=*/true);
    num(train, "train", "lambda", 0.1, 0.0, 1e9);
    num(train, "train", "grad_scale_bound", 1e4, 0.0, 1e12, /*lo_strict=*/true);
  } else {
    check_keys(train, "train",
               {{"n_trees", false}, {"max_depth", false}, {"n_bins", false}, {"lambda", false},
                {"gamma", false}, {"shrinkage", false}, {"base_score", false},
                {"min_leaf", false}});
    integer(train, "train", "n_trees", 10, 1, 10000);
    integer(train, "train", "max_depth", 4, 0, 64);
    integer(train, "train", "n_bins", 32, 2, 100000);
    num(train, "train", "lambda", 1.0, 0.0, 1e9);
    num(train, "train", "gamma", 0.0, 0.0, 1e9);
    double s = num(train, "train", "shrinkage", 1.0, 0.0, 1.0, /*lo_strict=*/true);
    (void)s;
    num(train, "train", "base_score", 0.0, -1e12, 1e12);
    integer(train, "train", "min_leaf", 1, 1, 1000000);
  }

  if (config.contains("fault_injection")) {
    const auto& fi = config.at("fault_injection");
    check_keys(fi, "fault_injection", {{"leak_plaintext_params", false}});
    if (protocol != "hfl" && fi.contains("leak_plaintext_params"))
      throw ConfigError("fault_injection.leak_plaintext_params: only meaningful for hfl");
    if (fi.contains("leak_plaintext_params") && !fi.at("leak_plaintext_params").is_boolean())
      throw ConfigError("fault_injection.leak_plaintext_params: expected a boolean");
  }
}

// ---------------------------------------------------------------------------
// Metrics files

namespace {

std::string run_id_of(const json& config) {
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(config_hash(config)));
  return buf;
}

class MetricsWriter {
 public:
  MetricsWriter(const std::string& path, const std::string& protocol, const std::string& run_id,
                const std::vector<std::string>& columns)
      : out_(path) {
    if (!out_) throw DataError("cannot write metrics: " + path);
    out_ << "# protocol=" << protocol << " run_id=" << run_id << "\n";
    for (size_t i = 0; i < columns.size(); ++i) out_ << (i ? "," : "") << columns[i];
    out_ << "\n";
  }

  void row(const std::vector<std::string>& cells) {
    for (size_t i = 0; i < cells.size(); ++i) out_ << (i ? "," : "") << cells[i];
    out_ << "\n";
  }

 private:
  std::ofstream out_;
};

void maybe_write_trace(const OutputPaths& out, const sim::Bus& bus) {
  if (out.trace.empty()) return;
  sim::export_trace_jsonl(out.trace, bus.protocol(), bus.roles(), bus.trace(), out.trace_full);
}

void audit_or_throw(const sim::Bus& bus) {
  auto report = sim::audit(bus.protocol(), bus.trace(), bus.roles());
  if (!report.passed) {
    std::string msg = "transport audit failed: " +
                      std::to_string(report.violations.size()) + " violation(s); first at seq " +
                      std::to_string(report.violations.front().seq) + ": " +
                      report.violations.front().reason;
    throw AuditFailure(msg, report.violations);
  }
}

void write_report(const OutputPaths& out, const RunSummary& s) {
  if (out.report.empty()) return;
  json j = {{"run_id", s.run_id},          {"protocol", s.protocol},
            {"config_hash", s.run_id},     {"epochs", s.epochs},
            {"final_metric", s.final_metric}, {"wall_seconds", s.wall_seconds},
            {"converged", s.converged}};
  std::ofstream o(out.report);
  if (!o) throw DataError("cannot write report: " + out.report);
  o << j.dump(2) << "\n";
}

struct Timer {
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }
};

// --- data assembly ---------------------------------------------------------

std::vector<nn::Batch> hfl_party_data(const json& config) {
  const auto& data = config.at("data");
  const auto& model = config.contains("model") ? config.at("model") : json::object();
  int input_window = model.value("input_window", 16);
  int horizon = model.value("horizon", 7);

  std::vector<data::PowerSeries> series;
  if (data.at("source") == "synthetic") {
    uint64_t seed = config.at("seed").get<uint64_t>();
    int stations = data.value("stations", 3);
    data::SeriesProfile profile;
    profile.length = data.value("length", 24 * 14);
    profile.daily_amplitude = data.value("daily_amplitude", 1.0);
    profile.weekly_amplitude = data.value("weekly_amplitude", 0.3);
    profile.noise_sigma = data.value("noise_sigma", 0.05);
    profile.offset = data.value("offset", 5.0);
    for (int i = 0; i < stations; ++i) {
      data::SeriesProfile p = profile;
      p.offset = profile.offset * (1.0 + 0.1 * i);  // station-specific level
      series.push_back(
          data::gen_power_series(p, derive_seed(seed, "station-" + std::to_string(i))));
    }
  } else {
    for (const auto& path : data.at("series"))
      series.push_back(data::load_power_csv(path.get<std::string>()));
  }

  std::vector<nn::Batch> parties;
  for (auto& s : series) {
    data::standardize_series(s.values);
    auto ws = data::window(s, input_window, horizon);
    parties.push_back({std::move(ws.inputs), std::move(ws.labels)});
  }
  return parties;
}

struct VerticalData {
  Eigen::MatrixXd x_a, x_b;
  Eigen::VectorXd y;
  std::vector<std::string> columns_a, columns_b;
};

VerticalData vertical_data(const json& config, bool standardize_features) {
  const auto& data = config.at("data");
  data::FeatureTable ta, tb;
  if (data.at("source") == "synthetic") {
    data::VerticalCaseSpec spec;
    spec.n_samples = data.value("samples", 200);
    spec.n_features_a = data.value("features_a", 5);
    spec.n_features_b = data.value("features_b", 5);
    spec.signal_a = data.value("signal_a", 1.0);
    spec.signal_b = data.value("signal_b", 1.0);
    spec.nonlinear = data.value("nonlinear", 0.3);
    spec.noise_sigma = data.value("noise_sigma", 0.2);
    std::tie(ta, tb) = data::gen_vertical_case(spec, config.at("seed").get<uint64_t>());
  } else {
    ta = data::load_table_csv(data.at("table_a").get<std::string>());
    tb = data::load_table_csv(data.at("table_b").get<std::string>());
    if (ta.ids != tb.ids) throw DataError("vertical tables: sample ids do not align");
    if (!tb.labels) throw DataError("vertical tables: B's table must carry the label column");
  }

  VerticalData v;
  v.x_a = std::move(ta.features);
  v.x_b = std::move(tb.features);
  v.y = *tb.labels;
  v.columns_a = std::move(ta.columns);
  v.columns_b = std::move(tb.columns);
  if (standardize_features) {
    data::standardize(v.x_a);
    data::standardize(v.x_b);
  }
  std::vector<double> yv(v.y.data(), v.y.data() + v.y.size());
  data::standardize_series(yv);
  for (Eigen::Index i = 0; i < v.y.size(); ++i) v.y(i) = yv[static_cast<size_t>(i)];
  return v;
}

// --- runners ----------------------------------------------------------------

RunSummary run_hfl(const json& config, const OutputPaths& out) {
  Timer timer;
  hfl::Config cfg;
  const auto& model = config.contains("model") ? config.at("model") : json::object();
  cfg.model.input_window = model.value("input_window", 16);
  cfg.model.horizon = model.value("horizon", 7);
  cfg.model.hidden_size = model.value("hidden_size", 32);
  cfg.model.fc_hidden = model.value("fc_hidden", 32);
  const auto& train = config.at("train");
  cfg.learning_rate = train.value("learning_rate", 0.05);
  cfg.max_epochs = train.value("max_epochs", 10);
  cfg.tol = train.value("tol", 1e-3);
  cfg.patience = train.value("patience", 3);
  cfg.drop_probability = train.value("drop_probability", 0.0);
  cfg.weighted_average = train.value("weighted_average", false);
  const auto& enc = config.contains("encryption") ? config.at("encryption") : json::object();
  cfg.key_bits = enc.value("key_bits", 512);
  cfg.fraction_bits = enc.value("fraction_bits", 40);
  cfg.seed = config.at("seed").get<uint64_t>();
  if (config.contains("fault_injection"))
    cfg.leak_plaintext_params =
        config.at("fault_injection").value("leak_plaintext_params", false);

  hfl::Engine engine(cfg, hfl_party_data(config));
  auto result = engine.run();

  RunSummary s;
  s.protocol = "hfl";
  s.run_id = run_id_of(config);
  s.config_hash = config_hash(config);
  s.epochs = result.epochs_run;
  s.converged = result.converged;
  for (auto it = result.rounds.rbegin(); it != result.rounds.rend(); ++it)
    if (std::isfinite(it->avg_loss)) {
      s.final_metric = it->avg_loss;
      break;
    }

  if (!out.metrics.empty()) {
    std::vector<std::string> cols{"epoch"};
    for (int i = 0; i < engine.n_parties(); ++i) cols.push_back("loss_party" + std::to_string(i));
    cols.push_back("avg_loss");
    cols.push_back("arrivals");
    MetricsWriter w(out.metrics, "hfl", s.run_id, cols);
    for (const auto& r : result.rounds) {
      std::vector<std::string> row{std::to_string(r.epoch)};
      for (double l : r.party_losses) row.push_back(format_double(l));
      row.push_back(format_double(r.avg_loss));
      std::string arr;
      for (size_t i = 0; i < r.arrivals.size(); ++i)
        arr += (i ? "|" : "") + std::to_string(r.arrivals[i]);
      row.push_back(arr);
      w.row(row);
    }
  }
  maybe_write_trace(out, engine.bus());
  audit_or_throw(engine.bus());
  s.wall_seconds = timer.seconds();
  write_report(out, s);
  return s;
}

RunSummary run_vflr(const json& config, const OutputPaths& out) {
  Timer timer;
  auto v = vertical_data(config, /*standardize_features=*/true);

  vflr::Config cfg;
  const auto& train = config.at("train");
  cfg.lambda = train.value("lambda", 0.1);
  cfg.learning_rate = train.value("learning_rate", 1e-3);
  cfg.max_epochs = train.value("max_epochs", 200);
  cfg.tol = train.value("tol", 1e-6);
  cfg.grad_scale_bound = train.value("grad_scale_bound", 1e4);
  const auto& enc = config.contains("encryption") ? config.at("encryption") : json::object();
  cfg.key_bits = enc.value("key_bits", 512);
  cfg.fraction_bits = enc.value("fraction_bits", 40);
  cfg.seed = config.at("seed").get<uint64_t>();

  vflr::Engine engine(cfg, v.x_a, v.x_b, v.y);
  auto result = engine.run();

  RunSummary s;
  s.protocol = "vflr";
  s.run_id = run_id_of(config);
  s.config_hash = config_hash(config);
  s.epochs = result.epochs_run;
  s.converged = result.converged;
  if (!result.history.empty())
    s.final_metric =
        std::max(result.history.back().delta_a_inf, result.history.back().delta_b_inf);

  if (!out.metrics.empty()) {
    MetricsWriter w(out.metrics, "vflr", s.run_id, {"epoch", "delta_theta_A", "delta_theta_B"});
    for (const auto& st : result.history)
      w.row({std::to_string(st.epoch), format_double(st.delta_a_inf),
             format_double(st.delta_b_inf)});
  }
  // Coefficients stay with their owners: two files, never merged.
  auto write_theta = [&](const std::string& path, const Eigen::VectorXd& theta) {
    if (path.empty()) return;
    json j = {{"run_id", s.run_id},
              {"coefficients", std::vector<double>(theta.data(), theta.data() + theta.size())}};
    std::ofstream o(path);
    if (!o) throw DataError("cannot write coefficients: " + path);
    o << j.dump(2) << "\n";
  };
  write_theta(out.theta_a, result.theta_a);
  write_theta(out.theta_b, result.theta_b);

  maybe_write_trace(out, engine.bus());
  audit_or_throw(engine.bus());
  s.wall_seconds = timer.seconds();
  write_report(out, s);
  return s;
}

RunSummary run_secureboost(const json& config, const OutputPaths& out) {
  Timer timer;
  auto v = vertical_data(config, /*standardize_features=*/false);

  sboost::Config cfg;
  const auto& train = config.at("train");
  cfg.n_trees = train.value("n_trees", 10);
  cfg.max_depth = train.value("max_depth", 4);
  cfg.n_bins = train.value("n_bins", 32);
  cfg.lambda = train.value("lambda", 1.0);
  cfg.gamma = train.value("gamma", 0.0);
  cfg.shrinkage = train.value("shrinkage", 1.0);
  cfg.base_score = train.value("base_score", 0.0);
  cfg.min_leaf = train.value("min_leaf", 1);
  const auto& enc = config.contains("encryption") ? config.at("encryption") : json::object();
  cfg.key_bits = enc.value("key_bits", 512);
  cfg.fraction_bits = enc.value("fraction_bits", 40);
  cfg.seed = config.at("seed").get<uint64_t>();

  sboost::Engine engine(cfg, v.x_a, v.x_b, v.y);
  auto result = engine.train();

  RunSummary s;
  s.protocol = "secureboost";
  s.run_id = run_id_of(config);
  s.config_hash = config_hash(config);
  s.epochs = static_cast<int>(result.mse_history.size());
  s.converged = result.trained;
  if (!result.mse_history.empty()) s.final_metric = result.mse_history.back();

  if (!out.metrics.empty()) {
    MetricsWriter w(out.metrics, "secureboost", s.run_id, {"tree", "train_mse"});
    for (size_t t = 0; t < result.mse_history.size(); ++t)
      w.row({std::to_string(t + 1), format_double(result.mse_history[t])});
  }
  if (!out.model_dir.empty()) {
    fs::create_directories(out.model_dir);
    sboost::ModelB model = engine.model_b();
    model.columns = v.columns_b;
    model.run_id = s.run_id;
    sboost::TableA table = engine.table_a();
    table.columns = v.columns_a;
    table.run_id = s.run_id;
    sboost::save_model_b((fs::path(out.model_dir) / "model_b.json").string(), model);
    sboost::save_table_a((fs::path(out.model_dir) / "table_a.json").string(), table);
  }
  maybe_write_trace(out, engine.bus());
  audit_or_throw(engine.bus());
  s.wall_seconds = timer.seconds();
  write_report(out, s);
  return s;
}

}  // namespace

RunSummary run_experiment(const json& config, const OutputPaths& out) {
  validate_config(config);
  auto protocol = config.at("protocol").get<std::string>();
  if (protocol == "hfl") return run_hfl(config, out);
  if (protocol == "vflr") return run_vflr(config, out);
  return run_secureboost(config, out);
}

MetricsFile read_metrics_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read metrics: " + path);
  MetricsFile m;
  std::string line;
  if (!std::getline(in, line) || line.rfind("# protocol=", 0) != 0)
    throw DataError("metrics: missing protocol header in " + path);
  std::istringstream hdr(line.substr(2));
  std::string tok;
  while (hdr >> tok) {
    auto eq = tok.find('=');
    if (eq == std::string::npos) continue;
    auto key = tok.substr(0, eq), val = tok.substr(eq + 1);
    if (key == "protocol") m.protocol = val;
    if (key == "run_id") m.run_id = val;
  }
  if (!std::getline(in, line)) throw DataError("metrics: missing column header");
  std::istringstream cols(line);
  std::string cell;
  while (std::getline(cols, cell, ',')) m.columns.push_back(cell);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> row;
    std::istringstream ss(line);
    while (std::getline(ss, cell, ',')) row.push_back(cell);
    while (row.size() < m.columns.size()) row.emplace_back();
    m.rows.push_back(std::move(row));
  }
  return m;
}

nlohmann::json compare_runs(const std::string& metrics_a_path,
                            const std::string& metrics_b_path) {
  MetricsFile a = read_metrics_csv(metrics_a_path);
  MetricsFile b = read_metrics_csv(metrics_b_path);
  if (a.protocol != b.protocol)
    throw ConfigError("compare: protocols differ (" + a.protocol + " vs " + b.protocol + ")");
  if (a.rows.empty() || b.rows.empty()) throw DataError("compare: empty metrics file");

  auto final_metric = [](const MetricsFile& m) {
    const char* column = m.protocol == "secureboost" ? "train_mse"
                         : m.protocol == "hfl"       ? "avg_loss"
                                                     : "delta_theta_A";
    size_t idx = 0;
    for (; idx < m.columns.size(); ++idx)
      if (m.columns[idx] == column) break;
    if (idx == m.columns.size()) throw DataError("compare: missing column " + std::string(column));
    // Last finite value; HFL epochs with no arrivals log nan.
    for (auto it = m.rows.rbegin(); it != m.rows.rend(); ++it) {
      double v = std::strtod((*it)[idx].c_str(), nullptr);
      if (std::isfinite(v)) return v;
    }
    throw DataError("compare: no finite values in column " + std::string(column));
  };

  double fa = final_metric(a), fb = final_metric(b);
  return {{"protocol", a.protocol},
          {"run_a", {{"run_id", a.run_id}, {"final", fa}, {"epochs", a.rows.size()}}},
          {"run_b", {{"run_id", b.run_id}, {"final", fb}, {"epochs", b.rows.size()}}},
          {"ratio", fb != 0 ? fa / fb : std::numeric_limits<double>::infinity()}};
}

}  // namespace gridfl::exp

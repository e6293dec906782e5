#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "gridfl/experiment.hpp"
#include "json.hpp"

using namespace gridfl;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  REQUIRE(in);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("gridfl_test_" + std::to_string(::getpid()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

json tiny_hfl_config() {
  return json{{"protocol", "hfl"},
              {"seed", 7},
              {"data",
               {{"source", "synthetic"}, {"stations", 2}, {"length", 40}, {"noise_sigma", 0.05}}},
              {"model",
               {{"input_window", 6}, {"horizon", 2}, {"hidden_size", 3}, {"fc_hidden", 3}}},
              {"train",
               {{"learning_rate", 0.1}, {"max_epochs", 2}, {"tol", 1e-9}, {"patience", 2}}},
              {"encryption", {{"key_bits", 256}}}};
}

json tiny_vflr_config() {
  return json{
      {"protocol", "vflr"},
      {"seed", 11},
      {"data",
       {{"source", "synthetic"}, {"samples", 40}, {"features_a", 2}, {"features_b", 2}}},
      {"train",
       {{"learning_rate", 0.002}, {"max_epochs", 30}, {"tol", 1e-7}, {"lambda", 0.1}}},
      {"encryption", {{"key_bits", 256}}}};
}

json tiny_sb_config() {
  return json{
      {"protocol", "secureboost"},
      {"seed", 13},
      {"data",
       {{"source", "synthetic"}, {"samples", 60}, {"features_a", 2}, {"features_b", 2}}},
      {"train", {{"n_trees", 2}, {"max_depth", 2}, {"n_bins", 6}}},
      {"encryption", {{"key_bits", 256}}}};
}

int run_cli(const std::string& args) {
  std::string cmd = std::string(GRIDFL_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  int rc = std::system(cmd.c_str());
  return WEXITSTATUS(rc);
}

}  // namespace

TEST_CASE("config validation rejects unknown keys with their path") {
  auto cfg = tiny_hfl_config();
  cfg["train"]["typo_key"] = 1;
  try {
    exp::validate_config(cfg);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("train.typo_key") != std::string::npos);
  }
}

TEST_CASE("config validation rejects out-of-range values") {
  auto bad_eta = tiny_hfl_config();
  bad_eta["train"]["learning_rate"] = -0.5;
  CHECK_THROWS_AS(exp::validate_config(bad_eta), ConfigError);

  auto bad_p = tiny_hfl_config();
  bad_p["train"]["drop_probability"] = 1.0;
  CHECK_THROWS_AS(exp::validate_config(bad_p), ConfigError);

  auto bad_proto = tiny_hfl_config();
  bad_proto["protocol"] = "federated";
  CHECK_THROWS_AS(exp::validate_config(bad_proto), ConfigError);

  auto leak_on_vflr = tiny_vflr_config();
  leak_on_vflr["fault_injection"] = {{"leak_plaintext_params", true}};
  CHECK_THROWS_AS(exp::validate_config(leak_on_vflr), ConfigError);

  CHECK_NOTHROW(exp::validate_config(tiny_hfl_config()));
  CHECK_NOTHROW(exp::validate_config(tiny_vflr_config()));
  CHECK_NOTHROW(exp::validate_config(tiny_sb_config()));
}

TEST_CASE("config hash is stable and order-independent") {
  auto a = tiny_hfl_config();
  json b;  // same content, different insertion order
  b["train"] = a["train"];
  b["seed"] = a["seed"];
  b["protocol"] = a["protocol"];
  b["model"] = a["model"];
  b["encryption"] = a["encryption"];
  b["data"] = a["data"];
  CHECK(exp::config_hash(a) == exp::config_hash(b));
  b["seed"] = 8;
  CHECK(exp::config_hash(a) != exp::config_hash(b));
}

TEST_CASE("hfl run writes metrics with one row per epoch and passes its audit") {
  TempDir tmp;
  exp::OutputPaths out;
  out.metrics = (tmp.path / "m.csv").string();
  auto summary = exp::run_experiment(tiny_hfl_config(), out);
  CHECK(summary.protocol == "hfl");
  CHECK(summary.epochs == 2);

  auto m = exp::read_metrics_csv(out.metrics);
  CHECK(m.protocol == "hfl");
  CHECK(m.run_id == summary.run_id);
  CHECK(m.rows.size() == 2);
  CHECK(m.columns == std::vector<std::string>{"epoch", "loss_party0", "loss_party1", "avg_loss",
                                              "arrivals"});
}

TEST_CASE("runs are byte-identical under a fixed seed") {
  TempDir tmp;
  for (const json& cfg : {tiny_hfl_config(), tiny_vflr_config(), tiny_sb_config()}) {
    exp::OutputPaths out1, out2;
    out1.metrics = (tmp.path / "a.csv").string();
    out2.metrics = (tmp.path / "b.csv").string();
    if (cfg.at("protocol") == "secureboost") {
      out1.model_dir = (tmp.path / "ma").string();
      out2.model_dir = (tmp.path / "mb").string();
    }
    exp::run_experiment(cfg, out1);
    exp::run_experiment(cfg, out2);
    CHECK(slurp(out1.metrics) == slurp(out2.metrics));
  }
}

TEST_CASE("instrumented plaintext leak fails the run audit") {
  TempDir tmp;
  auto cfg = tiny_hfl_config();
  cfg["fault_injection"] = {{"leak_plaintext_params", true}};
  exp::OutputPaths out;
  out.metrics = (tmp.path / "m.csv").string();
  out.trace = (tmp.path / "t.jsonl").string();
  out.trace_full = true;
  bool caught = false;
  try {
    exp::run_experiment(cfg, out);
  } catch (const exp::AuditFailure& e) {
    caught = true;
    CHECK_FALSE(e.violations.empty());
  }
  CHECK(caught);
  // The trace was still written and identifies the offending envelope.
  auto loaded = sim::load_trace_jsonl(out.trace);
  auto report = sim::audit(loaded.protocol, loaded.trace, loaded.roles);
  CHECK_FALSE(report.passed);
}

TEST_CASE("vflr run writes per-party coefficient files separately") {
  TempDir tmp;
  exp::OutputPaths out;
  out.metrics = (tmp.path / "m.csv").string();
  out.theta_a = (tmp.path / "theta_a.json").string();
  out.theta_b = (tmp.path / "theta_b.json").string();
  auto summary = exp::run_experiment(tiny_vflr_config(), out);
  CHECK(summary.epochs >= 1);

  auto ja = json::parse(slurp(out.theta_a));
  auto jb = json::parse(slurp(out.theta_b));
  CHECK(ja.at("coefficients").size() == 2);
  CHECK(jb.at("coefficients").size() == 3);  // two features + bias
  auto m = exp::read_metrics_csv(out.metrics);
  CHECK(m.columns == std::vector<std::string>{"epoch", "delta_theta_A", "delta_theta_B"});
}

TEST_CASE("secureboost run persists the split model") {
  TempDir tmp;
  exp::OutputPaths out;
  out.metrics = (tmp.path / "m.csv").string();
  out.model_dir = (tmp.path / "model").string();
  auto summary = exp::run_experiment(tiny_sb_config(), out);
  CHECK(summary.epochs == 2);
  CHECK(fs::exists(fs::path(out.model_dir) / "model_b.json"));
  CHECK(fs::exists(fs::path(out.model_dir) / "table_a.json"));
  CHECK_FALSE(slurp(fs::path(out.model_dir) / "model_b.json").find("threshold") ==
              std::string::npos);
}

TEST_CASE("compare: identical runs give ratio one, protocols must match") {
  TempDir tmp;
  exp::OutputPaths out;
  out.metrics = (tmp.path / "m1.csv").string();
  exp::run_experiment(tiny_hfl_config(), out);
  auto report = exp::compare_runs(out.metrics, out.metrics);
  CHECK(report.at("ratio").get<double>() == 1.0);

  exp::OutputPaths out2;
  out2.metrics = (tmp.path / "m2.csv").string();
  exp::run_experiment(tiny_vflr_config(), out2);
  CHECK_THROWS_AS(exp::compare_runs(out.metrics, out2.metrics), ConfigError);
}

// --- CLI end-to-end ---------------------------------------------------------

TEST_CASE("cli: negative learning rate exits with the config code") {
  TempDir tmp;
  auto cfg = tiny_hfl_config();
  cfg["train"]["learning_rate"] = -1.0;
  auto cfg_path = tmp.path / "bad.json";
  std::ofstream(cfg_path) << cfg.dump();
  int rc = run_cli("hfl-train --config " + cfg_path.string() + " --metrics-out " +
                   (tmp.path / "m.csv").string());
  CHECK(rc == 2);
}

TEST_CASE("cli: minimal hfl run exits cleanly and writes metrics") {
  TempDir tmp;
  auto cfg_path = tmp.path / "cfg.json";
  std::ofstream(cfg_path) << tiny_hfl_config().dump();
  auto metrics = tmp.path / "m.csv";
  int rc = run_cli("hfl-train --config " + cfg_path.string() + " --metrics-out " +
                   metrics.string());
  CHECK(rc == 0);
  auto m = exp::read_metrics_csv(metrics.string());
  CHECK(m.rows.size() == 2);
}

TEST_CASE("cli: instrumented leak exits with the audit code") {
  TempDir tmp;
  auto cfg = tiny_hfl_config();
  cfg["fault_injection"] = {{"leak_plaintext_params", true}};
  auto cfg_path = tmp.path / "leak.json";
  std::ofstream(cfg_path) << cfg.dump();
  int rc = run_cli("hfl-train --config " + cfg_path.string() + " --metrics-out " +
                   (tmp.path / "m.csv").string());
  CHECK(rc == 5);
}

TEST_CASE("cli: keygen writes a loadable keypair") {
  TempDir tmp;
  auto out = tmp.path / "key.json";
  int rc = run_cli("keygen --bits 256 --seed 5 --out " + out.string());
  CHECK(rc == 0);
  auto j = json::parse(slurp(out));
  CHECK(j.at("bits") == 256);
  CHECK(j.at("public_key").contains("n"));
  CHECK(j.at("private_key").contains("lambda"));
  CHECK(run_cli("keygen --bits 64 --out " + out.string()) == 2);
}

TEST_CASE("cli: gen-data, csv-backed training, audit and sb-predict round trip") {
  TempDir tmp;
  auto a_csv = (tmp.path / "a.csv").string();
  auto b_csv = (tmp.path / "b.csv").string();
  CHECK(run_cli("gen-data --kind vertical --seed 3 --samples 50 --features-a 2 --features-b 2 "
                "--out-a " + a_csv + " --out-b " + b_csv) == 0);

  json cfg = tiny_sb_config();
  cfg["data"] = {{"source", "csv"}, {"table_a", a_csv}, {"table_b", b_csv}};
  auto cfg_path = tmp.path / "sb.json";
  std::ofstream(cfg_path) << cfg.dump();
  auto model_dir = (tmp.path / "model").string();
  auto trace = (tmp.path / "t.jsonl").string();
  int rc = run_cli("sb-train --config " + cfg_path.string() + " --metrics-out " +
                   (tmp.path / "m.csv").string() + " --model-out " + model_dir +
                   " --trace-out " + trace + " --trace-payloads");
  CHECK(rc == 0);
  CHECK(run_cli("audit --trace " + trace) == 0);

  // Prediction input: both parties' columns in one harness-side csv.
  std::ifstream ina(a_csv), inb(b_csv);
  std::string ha, hb, ra, rb;
  std::getline(ina, ha);
  std::getline(inb, hb);
  auto joined = (tmp.path / "joined.csv").string();
  {
    std::ofstream out(joined);
    hb = hb.substr(hb.find(',') + 1);          // drop "id"
    hb = hb.substr(0, hb.rfind(",label"));     // drop the label column
    out << ha << "," << hb << "\n";
    while (std::getline(ina, ra) && std::getline(inb, rb)) {
      rb = rb.substr(rb.find(',') + 1);
      rb = rb.substr(0, rb.rfind(','));
      out << ra << "," << rb << "\n";
    }
  }
  auto pred_csv = (tmp.path / "pred.csv").string();
  CHECK(run_cli("sb-predict --model " + model_dir + " --input " + joined + " --out " +
                pred_csv) == 0);
  auto pred = slurp(pred_csv);
  CHECK(pred.find("id,prediction") == 0);

  // Missing data file maps to the data exit code.
  json missing = cfg;
  missing["data"]["table_a"] = (tmp.path / "nope.csv").string();
  auto missing_path = tmp.path / "missing.json";
  std::ofstream(missing_path) << missing.dump();
  CHECK(run_cli("sb-train --config " + missing_path.string() + " --metrics-out " +
                (tmp.path / "m2.csv").string() + " --model-out " + model_dir) == 3);
}

TEST_CASE("cli: compare emits a machine-readable report") {
  TempDir tmp;
  auto cfg_path = tmp.path / "cfg.json";
  std::ofstream(cfg_path) << tiny_hfl_config().dump();
  auto m1 = (tmp.path / "m1.csv").string();
  CHECK(run_cli("hfl-train --config " + cfg_path.string() + " --metrics-out " + m1) == 0);
  auto report_path = (tmp.path / "cmp.json").string();
  CHECK(run_cli("compare --a " + m1 + " --b " + m1 + " --out " + report_path) == 0);
  auto report = json::parse(slurp(report_path));
  CHECK(report.at("ratio").get<double>() == 1.0);
  CHECK(report.at("protocol") == "hfl");
}

TEST_CASE("config overrides: dotted paths, JSON values and validation order") {
  auto cfg = tiny_hfl_config();
  exp::apply_override(cfg, "train.max_epochs=5");
  CHECK(cfg["train"]["max_epochs"] == 5);
  exp::apply_override(cfg, "data.noise_sigma=0.25");
  CHECK(cfg["data"]["noise_sigma"].get<double>() == 0.25);
  exp::apply_override(cfg, "protocol=vflr");
  CHECK(cfg["protocol"] == "vflr");
  CHECK_THROWS_AS(exp::apply_override(cfg, "no_equals_sign"), ConfigError);
}

TEST_CASE("cli: --set overrides config fields before validation") {
  TempDir tmp;
  auto cfg_path = tmp.path / "cfg.json";
  std::ofstream(cfg_path) << tiny_hfl_config().dump();
  auto metrics = (tmp.path / "m.csv").string();
  int rc = run_cli("hfl-train --config " + cfg_path.string() + " --metrics-out " + metrics +
                   " --set train.max_epochs=4");
  CHECK(rc == 0);
  CHECK(exp::read_metrics_csv(metrics).rows.size() == 4);
  // An override that violates validation still exits with the config code.
  CHECK(run_cli("hfl-train --config " + cfg_path.string() + " --metrics-out " + metrics +
                " --set train.learning_rate=-1") == 2);
}

TEST_CASE("artifacts carry the run id that produced them") {
  TempDir tmp;
  exp::OutputPaths out;
  out.metrics = (tmp.path / "m.csv").string();
  out.model_dir = (tmp.path / "model").string();
  auto summary = exp::run_experiment(tiny_sb_config(), out);
  auto jb = json::parse(slurp(fs::path(out.model_dir) / "model_b.json"));
  auto ja = json::parse(slurp(fs::path(out.model_dir) / "table_a.json"));
  CHECK(jb.at("run_id") == summary.run_id);
  CHECK(ja.at("run_id") == summary.run_id);

  exp::OutputPaths out2;
  out2.metrics = (tmp.path / "m2.csv").string();
  out2.theta_a = (tmp.path / "ta.json").string();
  out2.theta_b = (tmp.path / "tb.json").string();
  auto s2 = exp::run_experiment(tiny_vflr_config(), out2);
  CHECK(json::parse(slurp(out2.theta_a)).at("run_id") == s2.run_id);
}

TEST_CASE("cli: a diverging run exits with the protocol code") {
  TempDir tmp;
  auto cfg = tiny_vflr_config();
  cfg["train"]["learning_rate"] = 10.0;  // far beyond stable for this Hessian
  cfg["train"]["max_epochs"] = 200;
  auto cfg_path = tmp.path / "diverge.json";
  std::ofstream(cfg_path) << cfg.dump();
  int rc = run_cli("vflr-train --config " + cfg_path.string() + " --metrics-out " +
                   (tmp.path / "m.csv").string());
  CHECK(rc == 4);
}

// gridfl: reproducible multi-party federated learning experiments over a
// simulated, audited transport.

#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "gridfl/data.hpp"
#include "gridfl/experiment.hpp"
#include "gridfl/paillier.hpp"
#include "gridfl/secureboost.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitProtocol = 4;
constexpr int kExitAudit = 5;

struct TrainArgs {
  std::string config;
  std::string metrics_out;
  std::string trace_out;
  bool trace_payloads = false;
  std::string report_out;
  std::vector<std::string> overrides;
};

void add_train_flags(CLI::App* cmd, TrainArgs& args) {
  cmd->add_option("--config", args.config, "experiment config (JSON)")->required();
  cmd->add_option("--metrics-out", args.metrics_out, "metrics CSV path")->required();
  cmd->add_option("--trace-out", args.trace_out, "envelope trace (JSONL)");
  cmd->add_flag("--trace-payloads", args.trace_payloads,
                "embed full payloads in the trace (needed to re-audit from disk)");
  cmd->add_option("--report-out", args.report_out, "run summary JSON (includes wall clock)");
  cmd->add_option("--set", args.overrides,
                  "override a config field, e.g. --set train.max_epochs=20");
}

int run_train(const TrainArgs& args, const std::string& expected_protocol,
              gridfl::exp::OutputPaths extra) {
  json config = gridfl::exp::load_config_file(args.config);
  for (const auto& assignment : args.overrides) gridfl::exp::apply_override(config, assignment);
  if (config.value("protocol", "") != expected_protocol)
    throw gridfl::ConfigError("config protocol is '" + config.value("protocol", "") +
                              "', expected '" + expected_protocol + "'");
  extra.metrics = args.metrics_out;
  extra.trace = args.trace_out;
  extra.trace_full = args.trace_payloads;
  extra.report = args.report_out;
  auto summary = gridfl::exp::run_experiment(config, extra);
  std::cout << "run " << summary.run_id << ": " << summary.epochs << " epochs, final metric "
            << gridfl::format_double(summary.final_metric) << ", wall "
            << gridfl::format_double(summary.wall_seconds) << "s\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"federated learning protocol engine (simulated multi-party network)"};
  app.require_subcommand(1);

  // keygen
  auto* keygen = app.add_subcommand("keygen", "generate a Paillier keypair");
  int key_bits = 2048;
  std::string key_out;
  uint64_t key_seed = 0;
  bool key_seeded = false;
  keygen->add_option("--bits", key_bits, "modulus length in bits (>= 128)");
  keygen->add_option("--out", key_out, "output JSON path")->required();
  keygen->add_option("--seed", key_seed, "deterministic key generation seed")
      ->each([&](const std::string&) { key_seeded = true; });

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate synthetic datasets");
  std::string gen_kind = "power";
  uint64_t gen_seed = 1;
  std::string gen_out, gen_out_a, gen_out_b;
  gridfl::data::SeriesProfile profile;
  gridfl::data::VerticalCaseSpec vspec;
  gen->add_option("--kind", gen_kind, "power | vertical")->required();
  gen->add_option("--seed", gen_seed, "generator seed");
  gen->add_option("--out", gen_out, "output CSV (power series)");
  gen->add_option("--out-a", gen_out_a, "party A table CSV (vertical)");
  gen->add_option("--out-b", gen_out_b, "party B table CSV with labels (vertical)");
  gen->add_option("--length", profile.length, "series length in hours");
  gen->add_option("--daily", profile.daily_amplitude, "daily sinusoid amplitude");
  gen->add_option("--weekly", profile.weekly_amplitude, "weekly sinusoid amplitude");
  gen->add_option("--noise", profile.noise_sigma, "Gaussian noise sigma");
  gen->add_option("--offset", profile.offset, "series offset");
  gen->add_option("--samples", vspec.n_samples, "vertical: sample count");
  gen->add_option("--features-a", vspec.n_features_a, "vertical: A's feature count");
  gen->add_option("--features-b", vspec.n_features_b, "vertical: B's feature count");
  gen->add_option("--signal-a", vspec.signal_a, "vertical: label weight on A's block");
  gen->add_option("--signal-b", vspec.signal_b, "vertical: label weight on B's block");
  gen->add_option("--nonlinear", vspec.nonlinear, "vertical: cross-block nonlinearity");
  gen->add_option("--noise-sigma", vspec.noise_sigma, "vertical: label noise sigma");

  // training commands
  TrainArgs hfl_args, vflr_args, sb_args;
  auto* hfl_cmd = app.add_subcommand("hfl-train", "encrypted federated averaging (LSTM)");
  add_train_flags(hfl_cmd, hfl_args);
  auto* vflr_cmd = app.add_subcommand("vflr-train", "vertical linear regression with a third party");
  add_train_flags(vflr_cmd, vflr_args);
  std::string theta_a_out, theta_b_out;
  vflr_cmd->add_option("--theta-a-out", theta_a_out, "A's coefficient file");
  vflr_cmd->add_option("--theta-b-out", theta_b_out, "B's coefficient file");
  auto* sb_cmd = app.add_subcommand("sb-train", "vertically federated boosted trees");
  add_train_flags(sb_cmd, sb_args);
  std::string model_out;
  sb_cmd->add_option("--model-out", model_out, "directory for the split model files")->required();

  // sb-predict
  auto* sbp = app.add_subcommand("sb-predict", "collaborative prediction from split model files");
  std::string sbp_model, sbp_input, sbp_out, sbp_trace;
  bool sbp_trace_payloads = false;
  sbp->add_option("--model", sbp_model, "model directory (model_b.json + table_a.json)")
      ->required();
  sbp->add_option("--input", sbp_input, "input CSV with all named feature columns")->required();
  sbp->add_option("--out", sbp_out, "predictions CSV")->required();
  sbp->add_option("--trace-out", sbp_trace, "envelope trace (JSONL)");
  sbp->add_flag("--trace-payloads", sbp_trace_payloads, "embed payloads in the trace");

  // compare
  auto* cmp = app.add_subcommand("compare", "compare two metrics files of one protocol");
  std::string cmp_a, cmp_b, cmp_out;
  cmp->add_option("--a", cmp_a, "metrics CSV A")->required();
  cmp->add_option("--b", cmp_b, "metrics CSV B")->required();
  cmp->add_option("--out", cmp_out, "report JSON path");

  // audit
  auto* aud = app.add_subcommand("audit", "re-audit a full-payload trace file");
  std::string aud_trace;
  aud->add_option("--trace", aud_trace, "trace JSONL written with --trace-payloads")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }

  try {
    if (keygen->parsed()) {
      if (key_bits < gridfl::paillier::kMinKeyBits)
        throw gridfl::ConfigError("keygen: --bits must be >= 128");
      gridfl::RandomSource rng(key_seeded ? key_seed : std::random_device{}());
      auto kp = gridfl::paillier::keygen(key_bits, rng);
      json j = {{"bits", key_bits},
                {"public_key", gridfl::paillier::public_key_to_json(kp.pub)},
                {"private_key", gridfl::paillier::private_key_to_json(kp.priv)}};
      std::ofstream out(key_out);
      if (!out) throw gridfl::DataError("cannot write " + key_out);
      out << j.dump(2) << "\n";
      std::cout << "wrote " << key_out << "\n";
      return 0;
    }

    if (gen->parsed()) {
      if (gen_kind == "power") {
        if (gen_out.empty()) throw gridfl::ConfigError("gen-data power: --out required");
        gridfl::data::save_power_csv(gen_out, gridfl::data::gen_power_series(profile, gen_seed));
        std::cout << "wrote " << gen_out << "\n";
      } else if (gen_kind == "vertical") {
        if (gen_out_a.empty() || gen_out_b.empty())
          throw gridfl::ConfigError("gen-data vertical: --out-a and --out-b required");
        auto [ta, tb] = gridfl::data::gen_vertical_case(vspec, gen_seed);
        gridfl::data::save_table_csv(gen_out_a, ta);
        gridfl::data::save_table_csv(gen_out_b, tb);
        std::cout << "wrote " << gen_out_a << " and " << gen_out_b << "\n";
      } else {
        throw gridfl::ConfigError("gen-data: --kind must be power or vertical");
      }
      return 0;
    }

    if (hfl_cmd->parsed()) return run_train(hfl_args, "hfl", {});
    if (vflr_cmd->parsed()) {
      gridfl::exp::OutputPaths extra;
      extra.theta_a = theta_a_out;
      extra.theta_b = theta_b_out;
      return run_train(vflr_args, "vflr", extra);
    }
    if (sb_cmd->parsed()) {
      gridfl::exp::OutputPaths extra;
      extra.model_dir = model_out;
      return run_train(sb_args, "secureboost", extra);
    }

    if (sbp->parsed()) {
      auto model = gridfl::sboost::load_model_b((fs::path(sbp_model) / "model_b.json").string());
      auto table = gridfl::sboost::load_table_a((fs::path(sbp_model) / "table_a.json").string());
      auto input = gridfl::data::load_table_csv(sbp_input);
      auto pick = [&](const std::vector<std::string>& wanted) {
        Eigen::MatrixXd m(input.features.rows(), static_cast<Eigen::Index>(wanted.size()));
        for (size_t j = 0; j < wanted.size(); ++j) {
          auto it = std::find(input.columns.begin(), input.columns.end(), wanted[j]);
          if (it == input.columns.end())
            throw gridfl::DataError("input csv: missing column " + wanted[j]);
          m.col(static_cast<Eigen::Index>(j)) =
              input.features.col(it - input.columns.begin());
        }
        return m;
      };
      Eigen::MatrixXd xa = pick(table.columns);
      Eigen::MatrixXd xb = pick(model.columns);
      gridfl::sim::Bus bus(gridfl::sim::Protocol::SecureBoost);
      bus.register_participant("mobile_a", gridfl::sim::Role::SbA);
      bus.register_participant("power_b", gridfl::sim::Role::SbB);
      auto pred = gridfl::sboost::predict_collaborative(model, table, xa, xb, bus, "mobile_a",
                                                        "power_b");
      std::ofstream out(sbp_out);
      if (!out) throw gridfl::DataError("cannot write " + sbp_out);
      out << "id,prediction\n";
      for (Eigen::Index i = 0; i < pred.size(); ++i)
        out << input.ids[static_cast<size_t>(i)] << "," << gridfl::format_double(pred(i)) << "\n";
      if (!sbp_trace.empty())
        gridfl::sim::export_trace_jsonl(sbp_trace, bus.protocol(), bus.roles(), bus.trace(),
                                        sbp_trace_payloads);
      auto report = gridfl::sim::audit(bus.protocol(), bus.trace(), bus.roles());
      if (!report.passed)
        throw gridfl::exp::AuditFailure("prediction trace failed the audit", report.violations);
      std::cout << "wrote " << sbp_out << "\n";
      return 0;
    }

    if (cmp->parsed()) {
      json report = gridfl::exp::compare_runs(cmp_a, cmp_b);
      std::string text = report.dump(2);
      if (!cmp_out.empty()) {
        std::ofstream out(cmp_out);
        if (!out) throw gridfl::DataError("cannot write " + cmp_out);
        out << text << "\n";
      }
      std::cout << text << "\n";
      return 0;
    }

    if (aud->parsed()) {
      auto loaded = gridfl::sim::load_trace_jsonl(aud_trace);
      if (!loaded.has_payloads)
        throw gridfl::ConfigError(
            "audit: trace has no payloads; re-run with --trace-payloads to audit from disk");
      auto report = gridfl::sim::audit(loaded.protocol, loaded.trace, loaded.roles);
      std::cout << "audited " << report.checked << " envelope(s): "
                << (report.passed ? "PASS" : "FAIL") << "\n";
      for (const auto& v : report.violations)
        std::cout << "  seq " << v.seq << ": " << v.reason << "\n";
      return report.passed ? 0 : kExitAudit;
    }
  } catch (const gridfl::exp::AuditFailure& e) {
    std::cerr << "audit failure: " << e.what() << "\n";
    for (const auto& v : e.violations) std::cerr << "  seq " << v.seq << ": " << v.reason << "\n";
    return kExitAudit;
  } catch (const gridfl::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const gridfl::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const gridfl::ProtocolError& e) {
    std::cerr << "protocol error: " << e.what() << "\n";
    return kExitProtocol;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  }
  return 0;
}

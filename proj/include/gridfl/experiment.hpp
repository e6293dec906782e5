#pragma once

#include <string>
#include <vector>

#include "gridfl/transport.hpp"
#include "json.hpp"

namespace gridfl::exp {

/// Raised after a completed run whose transport audit found violations.
struct AuditFailure : std::runtime_error {
  explicit AuditFailure(std::string msg, std::vector<sim::AuditViolation> v)
      : std::runtime_error(std::move(msg)), violations(std::move(v)) {}
  std::vector<sim::AuditViolation> violations;
};

struct OutputPaths {
  std::string metrics;
  std::string trace;        // JSONL trace, written when non-empty
  bool trace_full = false;  // include payloads (required to re-audit from disk)
  std::string model_dir;    // secureboost artifacts
  std::string theta_a;      // vflr per-party coefficient files
  std::string theta_b;
  std::string report;       // run summary JSON (carries wall clock; not byte-stable)
};

struct RunSummary {
  std::string run_id;
  std::string protocol;
  uint64_t config_hash = 0;
  int epochs = 0;
  double final_metric = 0;
  double wall_seconds = 0;  // excluded from reproducibility guarantees
  bool converged = false;
};

/// FNV-1a over the canonical (sorted-key) dump; binds artifacts to the exact
/// configuration that produced them.
uint64_t config_hash(const nlohmann::json& config);

nlohmann::json load_config_file(const std::string& path);

/// Applies one "dotted.path=value" override to a loaded config; values parse
/// as JSON when they can (numbers, booleans) and fall back to strings.
void apply_override(nlohmann::json& config, const std::string& assignment);

/// Full validation: unknown keys anywhere are rejected with their path, and
/// every numeric bound is checked before any work starts.
void validate_config(const nlohmann::json& config);

RunSummary run_experiment(const nlohmann::json& config, const OutputPaths& out);

/// Tabulates two metrics files of the same protocol: final losses, epochs,
/// and the a/b ratio.
nlohmann::json compare_runs(const std::string& metrics_a_path, const std::string& metrics_b_path);

// Shared by tests and the CLI.
struct MetricsFile {
  std::string protocol;
  std::string run_id;
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;
};
MetricsFile read_metrics_csv(const std::string& path);

}  // namespace gridfl::exp

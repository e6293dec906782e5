#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "gridfl/util.hpp"

namespace gridfl::data {

/// Hourly consumption trace; timestamps are start + k*step.
struct PowerSeries {
  int64_t start_epoch_seconds = 1577836800;  // 2020-01-01T00:00:00
  int64_t step_seconds = 3600;
  std::vector<double> values;

  int64_t timestamp(size_t k) const {
    return start_epoch_seconds + static_cast<int64_t>(k) * step_seconds;
  }
};

struct SeriesProfile {
  double daily_amplitude = 1.0;
  double weekly_amplitude = 0.3;
  double noise_sigma = 0.05;
  double offset = 5.0;
  int length = 24 * 14;
};

/// offset + daily sinusoid + weekly sinusoid + Gaussian noise.
PowerSeries gen_power_series(const SeriesProfile& profile, uint64_t seed);

/// Rectangular sample-aligned table. Column names stay private to the party
/// that owns the table.
struct FeatureTable {
  std::vector<std::string> ids;
  std::vector<std::string> columns;
  Eigen::MatrixXd features;  // rows align with ids
  std::optional<Eigen::VectorXd> labels;
};

struct VerticalCaseSpec {
  int n_samples = 200;
  int n_features_a = 5;
  int n_features_b = 5;
  double signal_a = 1.0;   // scale of the label's dependence on A's block
  double signal_b = 1.0;   // same for B's block
  double nonlinear = 0.3;  // mild cross-block nonlinearity
  double noise_sigma = 0.2;
};

/// Two sample-aligned tables: features-only for A, features+labels for B.
/// The label mixes both blocks so dropping either side measurably hurts.
std::pair<FeatureTable, FeatureTable> gen_vertical_case(const VerticalCaseSpec& spec,
                                                        uint64_t seed);

/// Sliding input/label windows with stride 1; labels start strictly after
/// the input slice ends.
struct WindowedSet {
  Eigen::MatrixXd inputs;
  Eigen::MatrixXd labels;
};

WindowedSet window(const PowerSeries& series, int input_window, int horizon);

struct ColumnStats {
  std::vector<double> mean;
  std::vector<double> stddev;               // 1.0 for constant columns
  std::vector<bool> constant;
};

/// In-place standardization to mean 0 / variance 1 per column; constant
/// columns pass through unscaled and are flagged.
ColumnStats standardize(Eigen::MatrixXd& m);
void apply_stats(Eigen::MatrixXd& m, const ColumnStats& stats);
void invert_stats(Eigen::MatrixXd& m, const ColumnStats& stats);

std::vector<double> standardize_series(std::vector<double>& values);  // returns {mean, std}

// CSV formats: power series = "timestamp,value" (ISO-8601); feature table =
// "id,<col...>[,label]". Loaders reject malformed cells with row/column info.
void save_power_csv(const std::string& path, const PowerSeries& series);
PowerSeries load_power_csv(const std::string& path);
void save_table_csv(const std::string& path, const FeatureTable& table);
FeatureTable load_table_csv(const std::string& path);

}  // namespace gridfl::data

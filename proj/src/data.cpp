#include "gridfl/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <random>
#include <sstream>
#include <unordered_set>

namespace gridfl::data {

PowerSeries gen_power_series(const SeriesProfile& profile, uint64_t seed) {
  if (profile.length <= 0) throw std::invalid_argument("gen_power_series: length must be > 0");
  PowerSeries s;
  s.values.resize(static_cast<size_t>(profile.length));
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  constexpr double two_pi = 2.0 * std::numbers::pi;
  for (int t = 0; t < profile.length; ++t) {
    double v = profile.offset;
    v += profile.daily_amplitude * std::sin(two_pi * t / 24.0);
    v += profile.weekly_amplitude * std::sin(two_pi * t / 168.0);
    if (profile.noise_sigma > 0) v += profile.noise_sigma * noise(rng);
    s.values[static_cast<size_t>(t)] = v;
  }
  return s;
}

std::pair<FeatureTable, FeatureTable> gen_vertical_case(const VerticalCaseSpec& spec,
                                                        uint64_t seed) {
  if (spec.n_samples <= 0 || spec.n_features_a < 0 || spec.n_features_b < 0)
    throw std::invalid_argument("gen_vertical_case: bad dimensions");

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> mag(0.5, 1.5);
  std::uniform_real_distribution<double> coin(0.0, 1.0);

  const int n = spec.n_samples;
  FeatureTable a, b;
  a.features.resize(n, spec.n_features_a);
  b.features.resize(n, spec.n_features_b);
  for (int j = 0; j < spec.n_features_a; ++j) a.columns.push_back("a_feat" + std::to_string(j));
  for (int j = 0; j < spec.n_features_b; ++j) b.columns.push_back("b_feat" + std::to_string(j));

  for (int i = 0; i < n; ++i) {
    std::ostringstream id;
    id << "s" << std::setw(6) << std::setfill('0') << i;
    a.ids.push_back(id.str());
    b.ids.push_back(id.str());
    for (int j = 0; j < spec.n_features_a; ++j) a.features(i, j) = gauss(rng);
    for (int j = 0; j < spec.n_features_b; ++j) b.features(i, j) = gauss(rng);
  }

  Eigen::VectorXd wa(spec.n_features_a), wb(spec.n_features_b);
  for (int j = 0; j < spec.n_features_a; ++j)
    wa(j) = spec.signal_a * mag(rng) * (coin(rng) < 0.5 ? -1.0 : 1.0);
  for (int j = 0; j < spec.n_features_b; ++j)
    wb(j) = spec.signal_b * mag(rng) * (coin(rng) < 0.5 ? -1.0 : 1.0);

  Eigen::VectorXd y = Eigen::VectorXd::Zero(n);
  if (spec.n_features_a > 0) y += a.features * wa;
  if (spec.n_features_b > 0) y += b.features * wb;
  if (spec.nonlinear != 0 && spec.n_features_a > 0 && spec.n_features_b > 0)
    for (int i = 0; i < n; ++i)
      y(i) += spec.nonlinear * std::sin(a.features(i, 0) + b.features(i, 0));
  for (int i = 0; i < n; ++i) y(i) += spec.noise_sigma * gauss(rng);

  b.labels = y;
  return {std::move(a), std::move(b)};
}

WindowedSet window(const PowerSeries& series, int input_window, int horizon) {
  if (input_window < 1 || horizon < 1) throw std::invalid_argument("window: bad sizes");
  const auto len = static_cast<int>(series.values.size());
  const int rows = len - input_window - horizon + 1;
  if (rows < 1) throw DataError("window: series shorter than input_window + horizon");
  WindowedSet ws;
  ws.inputs.resize(rows, input_window);
  ws.labels.resize(rows, horizon);
  for (int r = 0; r < rows; ++r) {
    for (int t = 0; t < input_window; ++t)
      ws.inputs(r, t) = series.values[static_cast<size_t>(r + t)];
    for (int j = 0; j < horizon; ++j)
      ws.labels(r, j) = series.values[static_cast<size_t>(r + input_window + j)];
  }
  return ws;
}

ColumnStats standardize(Eigen::MatrixXd& m) {
  ColumnStats st;
  const auto n = static_cast<double>(m.rows());
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    double mean = m.col(j).mean();
    double var = (m.col(j).array() - mean).square().sum() / n;
    double sd = std::sqrt(var);
    bool constant = sd == 0.0;
    if (constant) sd = 1.0;
    m.col(j) = (m.col(j).array() - mean) / sd;
    st.mean.push_back(mean);
    st.stddev.push_back(sd);
    st.constant.push_back(constant);
  }
  return st;
}

void apply_stats(Eigen::MatrixXd& m, const ColumnStats& stats) {
  if (static_cast<size_t>(m.cols()) != stats.mean.size())
    throw std::invalid_argument("apply_stats: column count mismatch");
  for (Eigen::Index j = 0; j < m.cols(); ++j)
    m.col(j) = (m.col(j).array() - stats.mean[static_cast<size_t>(j)]) /
               stats.stddev[static_cast<size_t>(j)];
}

void invert_stats(Eigen::MatrixXd& m, const ColumnStats& stats) {
  if (static_cast<size_t>(m.cols()) != stats.mean.size())
    throw std::invalid_argument("invert_stats: column count mismatch");
  for (Eigen::Index j = 0; j < m.cols(); ++j)
    m.col(j) = m.col(j).array() * stats.stddev[static_cast<size_t>(j)] +
               stats.mean[static_cast<size_t>(j)];
}

std::vector<double> standardize_series(std::vector<double>& values) {
  const auto n = static_cast<double>(values.size());
  if (values.empty()) throw std::invalid_argument("standardize_series: empty");
  double mean = 0;
  for (double v : values) mean += v;
  mean /= n;
  double var = 0;
  for (double v : values) var += (v - mean) * (v - mean);
  var /= n;
  double sd = var > 0 ? std::sqrt(var) : 1.0;
  for (double& v : values) v = (v - mean) / sd;
  return {mean, sd};
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      cells.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  cells.push_back(cur);
  return cells;
}

double parse_cell(const std::string& cell, size_t row, const std::string& column) {
  const char* begin = cell.c_str();
  char* end = nullptr;
  errno = 0;
  double v = std::strtod(begin, &end);
  if (end == begin || *end != '\0' || errno == ERANGE)
    throw DataError("csv: unparseable value at row " + std::to_string(row) + ", column '" +
                    column + "': '" + cell + "'");
  return v;
}

}  // namespace

void save_power_csv(const std::string& path, const PowerSeries& series) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  out << "timestamp,value\n";
  for (size_t k = 0; k < series.values.size(); ++k)
    out << format_iso8601(series.timestamp(k)) << "," << format_double(series.values[k]) << "\n";
}

PowerSeries load_power_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path);
  std::string line;
  if (!std::getline(in, line)) throw DataError("csv: empty file " + path);
  auto header = split_csv_line(line);
  if (header != std::vector<std::string>{"timestamp", "value"})
    throw DataError("csv: expected header 'timestamp,value' in " + path);

  PowerSeries s;
  size_t row = 1;
  std::optional<int64_t> prev;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    auto cells = split_csv_line(line);
    if (cells.size() != 2)
      throw DataError("csv: row " + std::to_string(row) + " has " +
                      std::to_string(cells.size()) + " cells, expected 2");
    int64_t ts = parse_iso8601(cells[0]);
    if (s.values.empty()) {
      s.start_epoch_seconds = ts;
    } else if (prev) {
      int64_t step = ts - *prev;
      if (s.values.size() == 1)
        s.step_seconds = step;
      else if (step != s.step_seconds)
        throw DataError("csv: irregular timestamp step at row " + std::to_string(row));
      if (step <= 0) throw DataError("csv: non-increasing timestamp at row " + std::to_string(row));
    }
    prev = ts;
    s.values.push_back(parse_cell(cells[1], row, "value"));
  }
  if (s.values.empty()) throw DataError("csv: no data rows in " + path);
  return s;
}

void save_table_csv(const std::string& path, const FeatureTable& table) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  out << "id";
  for (const auto& c : table.columns) out << "," << c;
  if (table.labels) out << ",label";
  out << "\n";
  for (size_t i = 0; i < table.ids.size(); ++i) {
    out << table.ids[i];
    for (Eigen::Index j = 0; j < table.features.cols(); ++j)
      out << "," << format_double(table.features(static_cast<Eigen::Index>(i), j));
    if (table.labels) out << "," << format_double((*table.labels)(static_cast<Eigen::Index>(i)));
    out << "\n";
  }
}

FeatureTable load_table_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path);
  std::string line;
  if (!std::getline(in, line)) throw DataError("csv: empty file " + path);
  auto header = split_csv_line(line);
  if (header.empty() || header[0] != "id")
    throw DataError("csv: first column must be 'id' in " + path);

  FeatureTable t;
  bool has_label = !header.empty() && header.back() == "label";
  const size_t n_feats = header.size() - 1 - (has_label ? 1 : 0);
  t.columns.assign(header.begin() + 1, header.end() - (has_label ? 1 : 0));

  std::vector<std::vector<double>> rows;
  std::vector<double> labels;
  std::unordered_set<std::string> seen;
  size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    auto cells = split_csv_line(line);
    if (cells.size() != header.size())
      throw DataError("csv: row " + std::to_string(row) + " has " +
                      std::to_string(cells.size()) + " cells, expected " +
                      std::to_string(header.size()));
    if (!seen.insert(cells[0]).second)
      throw DataError("csv: duplicate id '" + cells[0] + "' at row " + std::to_string(row));
    t.ids.push_back(cells[0]);
    std::vector<double> vals;
    for (size_t j = 0; j < n_feats; ++j)
      vals.push_back(parse_cell(cells[j + 1], row, header[j + 1]));
    rows.push_back(std::move(vals));
    if (has_label) labels.push_back(parse_cell(cells.back(), row, "label"));
  }

  t.features.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(n_feats));
  for (size_t i = 0; i < rows.size(); ++i)
    for (size_t j = 0; j < n_feats; ++j)
      t.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  if (has_label) {
    t.labels = Eigen::VectorXd(static_cast<Eigen::Index>(labels.size()));
    for (size_t i = 0; i < labels.size(); ++i) (*t.labels)(static_cast<Eigen::Index>(i)) = labels[i];
  }
  return t;
}

}  // namespace gridfl::data

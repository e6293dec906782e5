#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gridfl/util.hpp"

namespace gridfl::nn {

/// One named block of a flat parameter vector. Matrices are stored
/// column-major inside [offset, offset + rows*cols).
struct Segment {
  std::string name;
  int offset = 0;
  int rows = 0;
  int cols = 0;
  int size() const { return rows * cols; }
  bool operator==(const Segment&) const = default;
};

struct ParamLayout {
  std::vector<Segment> segments;
  int total = 0;
  const Segment& find(std::string_view name) const;
  bool operator==(const ParamLayout&) const = default;
};

/// Flat parameter vector plus its layout; the unit that crosses party
/// boundaries (encrypted) during federated averaging.
struct ModelParams {
  ParamLayout layout;
  std::vector<double> values;
};

/// Same flat shape as the params it differentiates.
using Gradient = ModelParams;

struct LstmConfig {
  int input_window = 16;
  int horizon = 7;
  int hidden_size = 32;
  int fc_hidden = 32;
};

struct TrainConfig {
  double learning_rate = 0.05;
  int max_epochs = 1;
  bool full_batch = true;  // mini-batch shuffling sits behind shuffle_seed
  int batch_size = 32;
  uint64_t shuffle_seed = 0;
};

/// Sample-major training batch: one row per sample.
struct Batch {
  Eigen::MatrixXd inputs;
  Eigen::MatrixXd labels;
};

ParamLayout lstm_layout(const LstmConfig& cfg);
ParamLayout linear_layout(int n_features);

/// Uniform [-0.1, 0.1] init from a named seed; every party must start from
/// the same draw for averaged training to mean anything.
ModelParams init_params(const ParamLayout& layout, uint64_t seed);

Eigen::Map<const Eigen::MatrixXd> segment_view(const ModelParams& p, std::string_view name);
Eigen::Map<Eigen::MatrixXd> segment_view(ModelParams& p, std::string_view name);

/// One window in, `horizon` forecasts out: LSTM over the input steps, final
/// hidden state through a ReLU layer and a linear head.
std::vector<double> lstm_forward(const ModelParams& params, const LstmConfig& cfg,
                                 std::span<const double> x);

double mse_loss(std::span<const double> pred, std::span<const double> label);

struct LossGrad {
  double loss = 0;
  Gradient grad;
};

/// Full-batch loss and exact gradient by backpropagation through time.
/// Loss is the MSE over every sample and every horizon step.
LossGrad lstm_gradient(const ModelParams& params, const LstmConfig& cfg, const Batch& batch);

/// theta . x; callers append a constant-1 feature when they want a bias.
double linear_forward(std::span<const double> theta, std::span<const double> x);

/// Mean-squared-error loss and gradient of the linear model over a batch
/// (labels are one column).
LossGrad linear_gradient(const ModelParams& params, const Batch& batch);

ModelParams gd_step(const ModelParams& params, const Gradient& grad, double learning_rate);

struct EpochResult {
  ModelParams params;
  double loss = 0;  // measured at the parameters the epoch started from
};

/// One local training epoch. Full batch takes a single descent step;
/// mini-batch shuffles sample indices with the configured seed (advanced by
/// `epoch_index` so successive epochs reshuffle reproducibly) and steps once
/// per batch.
EpochResult train_epoch(const ModelParams& params, const LstmConfig& model,
                        const TrainConfig& train, const Batch& data, int epoch_index = 0);

// Checkpoint file: versioned JSON with the layout and flat values.
void save_checkpoint(const std::string& path, const ModelParams& params);
ModelParams load_checkpoint(const std::string& path);

}  // namespace gridfl::nn

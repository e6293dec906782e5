#include "gridfl/learners.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include "json.hpp"

namespace gridfl::nn {

const Segment& ParamLayout::find(std::string_view name) const {
  for (const auto& s : segments)
    if (s.name == name) return s;
  throw std::invalid_argument("layout: no segment named " + std::string(name));
}

namespace {

void push_segment(ParamLayout& l, const std::string& name, int rows, int cols) {
  l.segments.push_back({name, l.total, rows, cols});
  l.total += rows * cols;
}

constexpr const char* kGates[] = {"i", "f", "o", "c"};

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

ParamLayout lstm_layout(const LstmConfig& cfg) {
  if (cfg.input_window < 1 || cfg.horizon < 1 || cfg.hidden_size < 1 || cfg.fc_hidden < 1)
    throw std::invalid_argument("lstm config: all sizes must be positive");
  ParamLayout l;
  for (const char* g : kGates) {
    push_segment(l, std::string("lstm.W_") + g, cfg.hidden_size, 1);
    push_segment(l, std::string("lstm.U_") + g, cfg.hidden_size, cfg.hidden_size);
    push_segment(l, std::string("lstm.b_") + g, cfg.hidden_size, 1);
  }
  push_segment(l, "fc1.W", cfg.fc_hidden, cfg.hidden_size);
  push_segment(l, "fc1.b", cfg.fc_hidden, 1);
  push_segment(l, "fc2.W", cfg.horizon, cfg.fc_hidden);
  push_segment(l, "fc2.b", cfg.horizon, 1);
  return l;
}

ParamLayout linear_layout(int n_features) {
  if (n_features < 1) throw std::invalid_argument("linear layout: need >= 1 feature");
  ParamLayout l;
  push_segment(l, "linear.theta", n_features, 1);
  return l;
}

ModelParams init_params(const ParamLayout& layout, uint64_t seed) {
  ModelParams p;
  p.layout = layout;
  p.values.resize(static_cast<size_t>(layout.total));
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-0.1, 0.1);
  for (double& v : p.values) v = dist(rng);
  return p;
}

Eigen::Map<const Eigen::MatrixXd> segment_view(const ModelParams& p, std::string_view name) {
  const Segment& s = p.layout.find(name);
  return {p.values.data() + s.offset, s.rows, s.cols};
}

Eigen::Map<Eigen::MatrixXd> segment_view(ModelParams& p, std::string_view name) {
  const Segment& s = p.layout.find(name);
  return {p.values.data() + s.offset, s.rows, s.cols};
}

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

struct LstmWeights {
  MatrixXd W[4], U[4];
  VectorXd b[4];
  MatrixXd W1, W2;
  VectorXd b1, b2;
};

LstmWeights load_weights(const ModelParams& p) {
  LstmWeights w;
  for (int g = 0; g < 4; ++g) {
    w.W[g] = segment_view(p, std::string("lstm.W_") + kGates[g]);
    w.U[g] = segment_view(p, std::string("lstm.U_") + kGates[g]);
    w.b[g] = segment_view(p, std::string("lstm.b_") + kGates[g]);
  }
  w.W1 = segment_view(p, "fc1.W");
  w.b1 = segment_view(p, "fc1.b");
  w.W2 = segment_view(p, "fc2.W");
  w.b2 = segment_view(p, "fc2.b");
  return w;
}

// Per-timestep activations cached for the backward pass.
struct CellTrace {
  MatrixXd gate[4];  // post-activation i, f, o, c~ (H x T)
  MatrixXd c, h;     // states after each step (H x T)
  VectorXd z1, a1, yhat;
};

void forward_sample(const LstmWeights& w, const LstmConfig& cfg, std::span<const double> x,
                    CellTrace& tr) {
  const int H = cfg.hidden_size;
  const int T = cfg.input_window;
  for (auto& g : tr.gate) g.resize(H, T);
  tr.c.resize(H, T);
  tr.h.resize(H, T);

  VectorXd h_prev = VectorXd::Zero(H);
  VectorXd c_prev = VectorXd::Zero(H);
  for (int t = 0; t < T; ++t) {
    for (int g = 0; g < 4; ++g) {
      VectorXd z = w.W[g] * x[t] + w.U[g] * h_prev + w.b[g];
      if (g == 3)
        tr.gate[g].col(t) = z.array().tanh();
      else
        tr.gate[g].col(t) = z.unaryExpr([](double v) { return sigmoid(v); });
    }
    tr.c.col(t) = tr.gate[1].col(t).cwiseProduct(c_prev) +
                  tr.gate[0].col(t).cwiseProduct(tr.gate[3].col(t));
    tr.h.col(t) = tr.gate[2].col(t).cwiseProduct(tr.c.col(t).array().tanh().matrix());
    h_prev = tr.h.col(t);
    c_prev = tr.c.col(t);
  }
  tr.z1 = w.W1 * h_prev + w.b1;
  tr.a1 = tr.z1.cwiseMax(0.0);
  tr.yhat = w.W2 * tr.a1 + w.b2;
}

}  // namespace

std::vector<double> lstm_forward(const ModelParams& params, const LstmConfig& cfg,
                                 std::span<const double> x) {
  if (static_cast<int>(x.size()) != cfg.input_window)
    throw std::invalid_argument("lstm_forward: input length != input_window");
  if (params.layout != lstm_layout(cfg))
    throw std::invalid_argument("lstm_forward: params do not match config layout");
  LstmWeights w = load_weights(params);
  CellTrace tr;
  forward_sample(w, cfg, x, tr);
  return {tr.yhat.data(), tr.yhat.data() + tr.yhat.size()};
}

double mse_loss(std::span<const double> pred, std::span<const double> label) {
  if (pred.size() != label.size() || pred.empty())
    throw std::invalid_argument("mse_loss: length mismatch");
  double acc = 0;
  for (size_t i = 0; i < pred.size(); ++i) {
    double d = pred[i] - label[i];
    acc += d * d;
  }
  return acc / static_cast<double>(pred.size());
}

LossGrad lstm_gradient(const ModelParams& params, const LstmConfig& cfg, const Batch& batch) {
  const int H = cfg.hidden_size;
  const int T = cfg.input_window;
  if (batch.inputs.rows() == 0) throw std::invalid_argument("lstm_gradient: empty batch");
  if (batch.inputs.cols() != T || batch.labels.cols() != cfg.horizon ||
      batch.inputs.rows() != batch.labels.rows())
    throw std::invalid_argument("lstm_gradient: batch shape mismatch");
  if (params.layout != lstm_layout(cfg))
    throw std::invalid_argument("lstm_gradient: params do not match config layout");

  LstmWeights w = load_weights(params);

  LossGrad out;
  out.grad.layout = params.layout;
  out.grad.values.assign(params.values.size(), 0.0);

  MatrixXd dW[4], dU[4];
  VectorXd db[4];
  for (int g = 0; g < 4; ++g) {
    dW[g] = MatrixXd::Zero(H, 1);
    dU[g] = MatrixXd::Zero(H, H);
    db[g] = VectorXd::Zero(H);
  }
  MatrixXd dW1 = MatrixXd::Zero(w.W1.rows(), w.W1.cols());
  VectorXd db1 = VectorXd::Zero(w.b1.size());
  MatrixXd dW2 = MatrixXd::Zero(w.W2.rows(), w.W2.cols());
  VectorXd db2 = VectorXd::Zero(w.b2.size());

  const auto n = static_cast<double>(batch.inputs.rows() * batch.labels.cols());
  double loss = 0;

  CellTrace tr;
  for (Eigen::Index s = 0; s < batch.inputs.rows(); ++s) {
    std::vector<double> x(static_cast<size_t>(T));
    for (int t = 0; t < T; ++t) x[static_cast<size_t>(t)] = batch.inputs(s, t);
    forward_sample(w, cfg, x, tr);

    VectorXd err = tr.yhat - batch.labels.row(s).transpose();
    loss += err.squaredNorm();

    // Head.
    VectorXd dy = 2.0 * err / n;
    dW2 += dy * tr.a1.transpose();
    db2 += dy;
    VectorXd da1 = w.W2.transpose() * dy;
    VectorXd dz1 =
        da1.cwiseProduct(tr.z1.unaryExpr([](double v) { return v > 0.0 ? 1.0 : 0.0; }));
    dW1 += dz1 * tr.h.col(T - 1).transpose();
    db1 += dz1;

    // Through time.
    VectorXd dh = w.W1.transpose() * dz1;
    VectorXd dc = VectorXd::Zero(H);
    for (int t = T - 1; t >= 0; --t) {
      VectorXd i_t = tr.gate[0].col(t), f_t = tr.gate[1].col(t), o_t = tr.gate[2].col(t),
               g_t = tr.gate[3].col(t);
      VectorXd tanh_c = tr.c.col(t).array().tanh();
      VectorXd do_t = dh.cwiseProduct(tanh_c);
      dc += dh.cwiseProduct(o_t).cwiseProduct(
          (1.0 - tanh_c.array().square()).matrix());

      VectorXd c_prev = t > 0 ? VectorXd(tr.c.col(t - 1)) : VectorXd::Zero(H);
      VectorXd h_prev = t > 0 ? VectorXd(tr.h.col(t - 1)) : VectorXd::Zero(H);

      VectorXd di = dc.cwiseProduct(g_t);
      VectorXd df = dc.cwiseProduct(c_prev);
      VectorXd dg = dc.cwiseProduct(i_t);

      VectorXd dz[4];
      dz[0] = di.cwiseProduct(i_t).cwiseProduct((1.0 - i_t.array()).matrix());
      dz[1] = df.cwiseProduct(f_t).cwiseProduct((1.0 - f_t.array()).matrix());
      dz[2] = do_t.cwiseProduct(o_t).cwiseProduct((1.0 - o_t.array()).matrix());
      dz[3] = dg.cwiseProduct((1.0 - g_t.array().square()).matrix());

      VectorXd dh_prev = VectorXd::Zero(H);
      for (int g = 0; g < 4; ++g) {
        dW[g] += dz[g] * x[static_cast<size_t>(t)];
        dU[g] += dz[g] * h_prev.transpose();
        db[g] += dz[g];
        dh_prev += w.U[g].transpose() * dz[g];
      }
      dh = dh_prev;
      dc = dc.cwiseProduct(f_t);
    }
  }

  out.loss = loss / n;
  for (int g = 0; g < 4; ++g) {
    segment_view(out.grad, std::string("lstm.W_") + kGates[g]) = dW[g];
    segment_view(out.grad, std::string("lstm.U_") + kGates[g]) = dU[g];
    segment_view(out.grad, std::string("lstm.b_") + kGates[g]) = db[g];
  }
  segment_view(out.grad, "fc1.W") = dW1;
  segment_view(out.grad, "fc1.b") = db1;
  segment_view(out.grad, "fc2.W") = dW2;
  segment_view(out.grad, "fc2.b") = db2;
  return out;
}

double linear_forward(std::span<const double> theta, std::span<const double> x) {
  if (theta.size() != x.size()) throw std::invalid_argument("linear_forward: length mismatch");
  double acc = 0;
  for (size_t i = 0; i < theta.size(); ++i) acc += theta[i] * x[i];
  return acc;
}

LossGrad linear_gradient(const ModelParams& params, const Batch& batch) {
  if (batch.inputs.rows() == 0) throw std::invalid_argument("linear_gradient: empty batch");
  if (batch.labels.cols() != 1 || batch.inputs.rows() != batch.labels.rows())
    throw std::invalid_argument("linear_gradient: batch shape mismatch");
  if (params.layout.total != batch.inputs.cols())
    throw std::invalid_argument("linear_gradient: feature count mismatch");

  Eigen::Map<const VectorXd> theta(params.values.data(), params.layout.total);
  VectorXd resid = batch.inputs * theta - batch.labels.col(0);
  const auto n = static_cast<double>(batch.inputs.rows());

  LossGrad out;
  out.loss = resid.squaredNorm() / n;
  out.grad.layout = params.layout;
  out.grad.values.resize(params.values.size());
  Eigen::Map<VectorXd>(out.grad.values.data(), params.layout.total) =
      2.0 / n * (batch.inputs.transpose() * resid);
  return out;
}

ModelParams gd_step(const ModelParams& params, const Gradient& grad, double learning_rate) {
  if (params.layout != grad.layout) throw std::invalid_argument("gd_step: layout mismatch");
  ModelParams next = params;
  for (size_t i = 0; i < next.values.size(); ++i)
    next.values[i] -= learning_rate * grad.values[i];
  return next;
}

EpochResult train_epoch(const ModelParams& params, const LstmConfig& model,
                        const TrainConfig& train, const Batch& data, int epoch_index) {
  if (train.learning_rate < 0) throw std::invalid_argument("train_epoch: learning rate < 0");
  if (train.full_batch) {
    auto lg = lstm_gradient(params, model, data);
    return {gd_step(params, lg.grad, train.learning_rate), lg.loss};
  }
  if (train.batch_size < 1) throw std::invalid_argument("train_epoch: batch_size < 1");

  const auto rows = data.inputs.rows();
  std::vector<Eigen::Index> order(static_cast<size_t>(rows));
  for (Eigen::Index i = 0; i < rows; ++i) order[static_cast<size_t>(i)] = i;
  std::mt19937_64 rng(train.shuffle_seed + static_cast<uint64_t>(epoch_index));
  std::shuffle(order.begin(), order.end(), rng);

  double epoch_loss = lstm_gradient(params, model, data).loss;
  ModelParams current = params;
  for (Eigen::Index start = 0; start < rows; start += train.batch_size) {
    const auto count = std::min<Eigen::Index>(train.batch_size, rows - start);
    Batch mini;
    mini.inputs.resize(count, data.inputs.cols());
    mini.labels.resize(count, data.labels.cols());
    for (Eigen::Index k = 0; k < count; ++k) {
      mini.inputs.row(k) = data.inputs.row(order[static_cast<size_t>(start + k)]);
      mini.labels.row(k) = data.labels.row(order[static_cast<size_t>(start + k)]);
    }
    auto lg = lstm_gradient(current, model, mini);
    current = gd_step(current, lg.grad, train.learning_rate);
  }
  return {std::move(current), epoch_loss};
}

void save_checkpoint(const std::string& path, const ModelParams& params) {
  nlohmann::json j;
  j["format"] = "gridfl-params-v1";
  j["segments"] = nlohmann::json::array();
  for (const auto& s : params.layout.segments)
    j["segments"].push_back({{"name", s.name}, {"rows", s.rows}, {"cols", s.cols}});
  j["values"] = params.values;
  std::ofstream out(path);
  if (!out) throw DataError("cannot write checkpoint: " + path);
  out << j.dump(2) << "\n";
}

ModelParams load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read checkpoint: " + path);
  nlohmann::json j = nlohmann::json::parse(in, nullptr, true);
  if (j.value("format", "") != "gridfl-params-v1") throw DataError("checkpoint: unknown format");
  ModelParams p;
  for (const auto& s : j.at("segments")) {
    Segment seg{s.at("name").get<std::string>(), p.layout.total, s.at("rows").get<int>(),
                s.at("cols").get<int>()};
    p.layout.total += seg.size();
    p.layout.segments.push_back(std::move(seg));
  }
  p.values = j.at("values").get<std::vector<double>>();
  if (static_cast<int>(p.values.size()) != p.layout.total)
    throw DataError("checkpoint: value count does not match layout");
  return p;
}

}  // namespace gridfl::nn

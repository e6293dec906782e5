#include "gridfl/secureboost.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "gridfl/hfl.hpp"  // ct vector json helpers

namespace gridfl::sboost {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using paillier::Ciphertext;

namespace {
constexpr const char* kA = "mobile_a";
constexpr const char* kB = "power_b";
}  // namespace

std::vector<double> quantile_edges(std::vector<double> values, int n_bins) {
  if (values.empty()) throw std::invalid_argument("quantile_edges: no samples");
  if (n_bins < 2) throw std::invalid_argument("quantile_edges: need >= 2 bins");
  std::sort(values.begin(), values.end());
  const auto n = values.size();
  std::vector<double> edges;
  for (int b = 1; b < n_bins; ++b) {
    size_t rank = (n * static_cast<size_t>(b) + static_cast<size_t>(n_bins) - 1) /
                  static_cast<size_t>(n_bins);  // ceil(n*b/n_bins)
    if (rank == 0) rank = 1;
    double e = values[rank - 1];
    if (e >= values.back()) continue;  // keeps every candidate's right child non-empty
    if (edges.empty() || e > edges.back()) edges.push_back(e);
  }
  return edges;
}

int bin_index(const std::vector<double>& edges, double x) {
  auto it = std::lower_bound(edges.begin(), edges.end(), x);
  return static_cast<int>(it - edges.begin());
}

std::pair<VectorXd, VectorXd> grad_hess(const VectorXd& yhat, const VectorXd& y) {
  if (yhat.size() != y.size()) throw std::invalid_argument("grad_hess: size mismatch");
  VectorXd g = 2.0 * (yhat - y);
  VectorXd h = VectorXd::Constant(y.size(), 2.0);
  return {std::move(g), std::move(h)};
}

double leaf_weight(double g, double h, double lambda) {
  if (h + lambda <= 0) throw std::invalid_argument("leaf_weight: h + lambda must be positive");
  return -g / (h + lambda);
}

std::optional<SplitCandidate> find_best_split(const std::vector<FeatureBinStats>& stats,
                                              double g_total, double h_total, double lambda,
                                              double gamma, double min_child_h) {
  std::optional<SplitCandidate> best;
  double parent = g_total * g_total / (h_total + lambda);
  for (const auto& fs : stats) {
    const int n_edges = static_cast<int>(fs.g.size()) - 1;
    double g_l = 0, h_l = 0;
    for (int b = 0; b < n_edges; ++b) {
      g_l += fs.g[static_cast<size_t>(b)];
      h_l += fs.h[static_cast<size_t>(b)];
      double g_r = g_total - g_l, h_r = h_total - h_l;
      if (h_l < min_child_h || h_r < min_child_h) continue;
      double score = g_l * g_l / (h_l + lambda) + g_r * g_r / (h_r + lambda) - parent;
      if (score > gamma + kScoreTieEpsilon &&
          (!best || score > best->score + kScoreTieEpsilon))
        best = SplitCandidate{fs.feature, b, score, g_l, h_l, g_r, h_r};
    }
  }
  return best;
}

// --- persistence ---------------------------------------------------------

void save_model_b(const std::string& path, const ModelB& model) {
  nlohmann::json j;
  j["format"] = "gridfl-sb-model-b-v1";
  j["run_id"] = model.run_id;
  j["base_score"] = model.base_score;
  j["shrinkage"] = model.shrinkage;
  j["lambda"] = model.lambda;
  j["columns"] = model.columns;
  j["trees"] = nlohmann::json::array();
  for (const auto& t : model.trees) {
    nlohmann::json jt = nlohmann::json::array();
    for (const auto& nd : t.nodes) {
      nlohmann::json jn;
      switch (nd.kind) {
        case BNode::Kind::Leaf:
          jn = {{"kind", "leaf"}, {"weight", nd.weight}};
          break;
        case BNode::Kind::SplitA:
          jn = {{"kind", "split_a"}, {"record", nd.record}, {"left", nd.left},
                {"right", nd.right}};
          break;
        case BNode::Kind::SplitB:
          jn = {{"kind", "split_b"}, {"feature", nd.feature_local},
                {"threshold", nd.threshold}, {"left", nd.left}, {"right", nd.right}};
          break;
      }
      jt.push_back(std::move(jn));
    }
    j["trees"].push_back(std::move(jt));
  }
  std::ofstream out(path);
  if (!out) throw DataError("cannot write model: " + path);
  out << j.dump(2) << "\n";
}

ModelB load_model_b(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read model: " + path);
  nlohmann::json j = nlohmann::json::parse(in);
  if (j.value("format", "") != "gridfl-sb-model-b-v1") throw DataError("model: unknown format");
  ModelB m;
  m.base_score = j.at("base_score").get<double>();
  m.shrinkage = j.at("shrinkage").get<double>();
  m.lambda = j.at("lambda").get<double>();
  m.columns = j.value("columns", std::vector<std::string>{});
  m.run_id = j.value("run_id", "");
  for (const auto& jt : j.at("trees")) {
    Tree t;
    for (const auto& jn : jt) {
      BNode nd;
      auto kind = jn.at("kind").get<std::string>();
      if (kind == "leaf") {
        nd.kind = BNode::Kind::Leaf;
        nd.weight = jn.at("weight").get<double>();
      } else if (kind == "split_a") {
        nd.kind = BNode::Kind::SplitA;
        nd.record = jn.at("record").get<std::string>();
        nd.left = jn.at("left").get<int>();
        nd.right = jn.at("right").get<int>();
      } else if (kind == "split_b") {
        nd.kind = BNode::Kind::SplitB;
        nd.feature_local = jn.at("feature").get<int>();
        nd.threshold = jn.at("threshold").get<double>();
        nd.left = jn.at("left").get<int>();
        nd.right = jn.at("right").get<int>();
      } else {
        throw DataError("model: unknown node kind " + kind);
      }
      t.nodes.push_back(std::move(nd));
    }
    m.trees.push_back(std::move(t));
  }
  return m;
}

void save_table_a(const std::string& path, const TableA& table) {
  nlohmann::json j;
  j["format"] = "gridfl-sb-table-a-v1";
  j["run_id"] = table.run_id;
  j["columns"] = table.columns;
  nlohmann::json jr = nlohmann::json::object();
  for (const auto& [rec, entry] : table.records)
    jr[rec] = {{"feature", entry.feature_local}, {"threshold", entry.threshold}};
  j["records"] = std::move(jr);
  std::ofstream out(path);
  if (!out) throw DataError("cannot write lookup table: " + path);
  out << j.dump(2) << "\n";
}

TableA load_table_a(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read lookup table: " + path);
  nlohmann::json j = nlohmann::json::parse(in);
  if (j.value("format", "") != "gridfl-sb-table-a-v1")
    throw DataError("lookup table: unknown format");
  TableA t;
  t.columns = j.value("columns", std::vector<std::string>{});
  t.run_id = j.value("run_id", "");
  for (const auto& [rec, entry] : j.at("records").items())
    t.records[rec] = {entry.at("feature").get<int>(), entry.at("threshold").get<double>()};
  return t;
}

std::vector<MergedTree> merge_views(const ModelB& model, const TableA& table, int n_features_a) {
  std::vector<MergedTree> out;
  for (const auto& t : model.trees) {
    MergedTree mt;
    for (const auto& nd : t.nodes) {
      MergedNode mn;
      mn.left = nd.left;
      mn.right = nd.right;
      switch (nd.kind) {
        case BNode::Kind::Leaf:
          mn.leaf = true;
          mn.weight = nd.weight;
          break;
        case BNode::Kind::SplitA: {
          auto it = table.records.find(nd.record);
          if (it == table.records.end())
            throw ProtocolError("merge_views: record " + nd.record + " missing from A's table");
          mn.leaf = false;
          mn.owner = 0;
          mn.feature_global = it->second.feature_local;
          mn.threshold = it->second.threshold;
          break;
        }
        case BNode::Kind::SplitB:
          mn.leaf = false;
          mn.owner = 1;
          mn.feature_global = n_features_a + nd.feature_local;
          mn.threshold = nd.threshold;
          break;
      }
      mt.nodes.push_back(mn);
    }
    out.push_back(std::move(mt));
  }
  return out;
}

// --- engine ---------------------------------------------------------------

Engine::Engine(Config cfg, MatrixXd x_a, MatrixXd x_b, VectorXd y)
    : cfg_(std::move(cfg)), x_a_(std::move(x_a)), x_b_(std::move(x_b)), y_(std::move(y)) {
  if (x_a_.rows() != x_b_.rows() || x_a_.rows() != y_.rows())
    throw std::invalid_argument("secureboost: sample counts do not align");
  if (y_.rows() == 0) throw std::invalid_argument("secureboost: empty dataset");
  if (x_b_.cols() == 0) throw std::invalid_argument("secureboost: B must hold features");
  if (cfg_.n_trees < 1 || cfg_.max_depth < 0 || cfg_.n_bins < 2 || cfg_.min_leaf < 1)
    throw std::invalid_argument("secureboost: bad tree parameters");
  if (cfg_.lambda < 0 || cfg_.shrinkage <= 0 || cfg_.shrinkage > 1)
    throw std::invalid_argument("secureboost: bad lambda/shrinkage");

  bus_ = std::make_unique<sim::Bus>(sim::Protocol::SecureBoost);
  bus_->register_participant(kA, sim::Role::SbA);
  bus_->register_participant(kB, sim::Role::SbB);

  RandomSource keyrng(derive_seed(cfg_.seed, "sb-keygen"));
  keys_ = paillier::keygen(cfg_.key_bits, keyrng);
  a_rng_ = std::make_unique<RandomSource>(derive_seed(cfg_.seed, "sb-enc-a"));
  b_rng_ = std::make_unique<RandomSource>(derive_seed(cfg_.seed, "sb-enc-b"));

  const auto n = x_a_.rows();
  for (Eigen::Index v = 0; v < x_a_.cols(); ++v) {
    std::vector<double> col(x_a_.col(v).data(), x_a_.col(v).data() + n);
    edges_a_.push_back(quantile_edges(col, cfg_.n_bins));
    std::vector<int> b(static_cast<size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i)
      b[static_cast<size_t>(i)] = bin_index(edges_a_.back(), x_a_(i, v));
    bins_a_.push_back(std::move(b));
  }
  for (Eigen::Index v = 0; v < x_b_.cols(); ++v) {
    std::vector<double> col(x_b_.col(v).data(), x_b_.col(v).data() + n);
    edges_b_.push_back(quantile_edges(col, cfg_.n_bins));
    std::vector<int> b(static_cast<size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i)
      b[static_cast<size_t>(i)] = bin_index(edges_b_.back(), x_b_(i, v));
    bins_b_.push_back(std::move(b));
  }

  model_.base_score = cfg_.base_score;
  model_.shrinkage = cfg_.shrinkage;
  model_.lambda = cfg_.lambda;
  yhat_ = VectorXd::Constant(n, cfg_.base_score);

  // B owns the keypair; A receives the public half.
  bus_->send({kB, kA, 0, sim::Kind::PubKey,
              {{"n", paillier::bigint_to_hex(keys_.pub.n)},
               {"g", paillier::bigint_to_hex(keys_.pub.g)},
               {"bits", static_cast<unsigned>(keys_.pub.bits)}}});
  (void)bus_->receive(kA);
}

void Engine::a_serve_stats(int epoch) {
  auto env = bus_->receive(kA);
  if (!env || env->kind != sim::Kind::StatsRequest)
    throw ProtocolError("secureboost: A expected a stats request");
  int node = env->payload.at("node").get<int>();
  auto it = a_node_ids_.find(node);
  if (it == a_node_ids_.end())
    throw ProtocolError("secureboost: stats request for unknown node");
  const auto& ids = it->second;

  nlohmann::json features = nlohmann::json::array();
  const auto& pk = keys_.pub;
  for (size_t v = 0; v < edges_a_.size(); ++v) {
    const size_t n_bins = edges_a_[v].size() + 1;
    std::vector<std::optional<Ciphertext>> g_acc(n_bins), h_acc(n_bins);
    for (int i : ids) {
      int b = bins_a_[v][static_cast<size_t>(i)];
      const auto& gi = a_enc_g_[static_cast<size_t>(i)];
      const auto& hi = a_enc_h_[static_cast<size_t>(i)];
      auto& ga = g_acc[static_cast<size_t>(b)];
      auto& ha = h_acc[static_cast<size_t>(b)];
      ga = ga ? paillier::ct_add(pk, *ga, gi) : gi;
      ha = ha ? paillier::ct_add(pk, *ha, hi) : hi;
    }
    nlohmann::json g_arr = nlohmann::json::array(), h_arr = nlohmann::json::array();
    for (size_t b = 0; b < n_bins; ++b) {
      // Empty bins still travel as encryptions of zero.
      Ciphertext gz = g_acc[b] ? *g_acc[b]
                               : paillier::encrypt(pk, paillier::encode(pk, 0.0,
                                                                        cfg_.fraction_bits, 1),
                                                   *a_rng_);
      Ciphertext hz = h_acc[b] ? *h_acc[b]
                               : paillier::encrypt(pk, paillier::encode(pk, 0.0,
                                                                        cfg_.fraction_bits, 1),
                                                   *a_rng_);
      g_arr.push_back(paillier::bigint_to_hex(gz.value));
      h_arr.push_back(paillier::bigint_to_hex(hz.value));
    }
    features.push_back({{"feature", static_cast<unsigned>(v)},
                        {"g", std::move(g_arr)},
                        {"h", std::move(h_arr)}});
  }
  bus_->send({kA, kB, epoch, sim::Kind::EncBinStats,
              {{"node", static_cast<unsigned>(node)}, {"exponent", 1},
               {"features", std::move(features)}}});
}

void Engine::a_handle_split(int epoch) {
  auto env = bus_->receive(kA);
  if (!env || env->kind != sim::Kind::SplitNotify)
    throw ProtocolError("secureboost: A expected a split notification");
  int node = env->payload.at("node").get<int>();
  int feature = env->payload.at("feature").get<int>();
  int edge = env->payload.at("edge").get<int>();
  int left_node = env->payload.at("left_node").get<int>();
  int right_node = env->payload.at("right_node").get<int>();
  if (feature < 0 || feature >= static_cast<int>(edges_a_.size()))
    throw ProtocolError("secureboost: split notify names a feature A does not hold");
  double thr = edges_a_[static_cast<size_t>(feature)][static_cast<size_t>(edge)];

  std::string rec = "rec-" + std::to_string(record_counter_++);
  table_.records[rec] = {feature, thr};

  const auto& ids = a_node_ids_.at(node);
  std::vector<int> left, right;
  for (int i : ids)
    (x_a_(i, feature) <= thr ? left : right).push_back(i);
  a_node_ids_[left_node] = left;
  a_node_ids_[right_node] = right;

  bus_->send({kA, kB, epoch, sim::Kind::SplitRecord,
              {{"node", static_cast<unsigned>(node)}, {"record", rec}}});
  nlohmann::json jl = nlohmann::json::array(), jr = nlohmann::json::array();
  for (int i : left) jl.push_back(static_cast<unsigned>(i));
  for (int i : right) jr.push_back(static_cast<unsigned>(i));
  bus_->send({kA, kB, epoch, sim::Kind::NodeSplit,
              {{"node", static_cast<unsigned>(node)},
               {"left_node", static_cast<unsigned>(left_node)},
               {"right_node", static_cast<unsigned>(right_node)},
               {"left_ids", std::move(jl)},
               {"right_ids", std::move(jr)}}});
}

int Engine::build_node(std::vector<int> ids, int depth, Tree& tree,
                       const VectorXd& g, const VectorXd& h,
                       std::vector<std::pair<std::vector<int>, double>>& leaf_updates,
                       int& next_node, int node_id, int epoch) {
  if (static_cast<int>(tree.nodes.size()) <= node_id)
    tree.nodes.resize(static_cast<size_t>(node_id) + 1);

  double g_tot = 0, h_tot = 0;
  for (int i : ids) {
    g_tot += g(i);
    h_tot += h(i);
  }

  std::optional<SplitCandidate> best;
  if (depth < cfg_.max_depth && static_cast<int>(ids.size()) >= 2 * cfg_.min_leaf) {
    // B's own features in plaintext.
    std::vector<FeatureBinStats> stats;
    const int va = static_cast<int>(edges_a_.size());
    // A's features arrive encrypted and B decrypts them.
    bus_->send({kB, kA, epoch, sim::Kind::StatsRequest,
                {{"node", static_cast<unsigned>(node_id)}}});
    a_serve_stats(epoch);
    auto env = bus_->receive(kB);
    for (const auto& fj : env->payload.at("features")) {
      FeatureBinStats fs;
      fs.feature = fj.at("feature").get<int>();
      for (const auto& hexv : fj.at("g")) {
        Ciphertext c{paillier::bigint_from_hex(hexv.get<std::string>()), 1,
                     keys_.pub.fingerprint()};
        fs.g.push_back(paillier::decrypt_to_double(keys_.pub, keys_.priv, c, cfg_.fraction_bits));
      }
      for (const auto& hexv : fj.at("h")) {
        Ciphertext c{paillier::bigint_from_hex(hexv.get<std::string>()), 1,
                     keys_.pub.fingerprint()};
        fs.h.push_back(paillier::decrypt_to_double(keys_.pub, keys_.priv, c, cfg_.fraction_bits));
      }
      stats.push_back(std::move(fs));
    }
    for (size_t v = 0; v < edges_b_.size(); ++v) {
      FeatureBinStats fs;
      fs.feature = va + static_cast<int>(v);
      fs.g.assign(edges_b_[v].size() + 1, 0.0);
      fs.h.assign(edges_b_[v].size() + 1, 0.0);
      for (int i : ids) {
        int b = bins_b_[v][static_cast<size_t>(i)];
        fs.g[static_cast<size_t>(b)] += g(i);
        fs.h[static_cast<size_t>(b)] += h(i);
      }
      stats.push_back(std::move(fs));
    }
    std::sort(stats.begin(), stats.end(),
              [](const FeatureBinStats& x, const FeatureBinStats& y) {
                return x.feature < y.feature;
              });
    best = find_best_split(stats, g_tot, h_tot, cfg_.lambda, cfg_.gamma,
                           2.0 * cfg_.min_leaf - 0.5);
  }

  if (!best) {
    BNode leaf;
    leaf.kind = BNode::Kind::Leaf;
    leaf.weight = leaf_weight(g_tot, h_tot, cfg_.lambda);
    tree.nodes[static_cast<size_t>(node_id)] = leaf;
    leaf_updates.emplace_back(std::move(ids), leaf.weight);
    return node_id;
  }

  const int va = static_cast<int>(edges_a_.size());
  int left_node = next_node++;
  int right_node = next_node++;
  std::vector<int> left_ids, right_ids;

  if (best->feature < va) {
    bus_->send({kB, kA, epoch, sim::Kind::SplitNotify,
                {{"node", static_cast<unsigned>(node_id)},
                 {"feature", static_cast<unsigned>(best->feature)},
                 {"edge", static_cast<unsigned>(best->edge)},
                 {"left_node", static_cast<unsigned>(left_node)},
                 {"right_node", static_cast<unsigned>(right_node)}}});
    a_handle_split(epoch);
    auto rec_env = bus_->receive(kB);
    if (!rec_env || rec_env->kind != sim::Kind::SplitRecord)
      throw ProtocolError("secureboost: expected a split record from A");
    auto split_env = bus_->receive(kB);
    if (!split_env || split_env->kind != sim::Kind::NodeSplit)
      throw ProtocolError("secureboost: expected the partition from A");
    for (const auto& i : split_env->payload.at("left_ids")) left_ids.push_back(i.get<int>());
    for (const auto& i : split_env->payload.at("right_ids")) right_ids.push_back(i.get<int>());

    BNode nd;
    nd.kind = BNode::Kind::SplitA;
    nd.record = rec_env->payload.at("record").get<std::string>();
    nd.left = left_node;
    nd.right = right_node;
    tree.nodes[static_cast<size_t>(node_id)] = nd;
  } else {
    int vb = best->feature - va;
    double thr = edges_b_[static_cast<size_t>(vb)][static_cast<size_t>(best->edge)];
    for (int i : ids) (x_b_(i, vb) <= thr ? left_ids : right_ids).push_back(i);

    nlohmann::json jl = nlohmann::json::array(), jr = nlohmann::json::array();
    for (int i : left_ids) jl.push_back(static_cast<unsigned>(i));
    for (int i : right_ids) jr.push_back(static_cast<unsigned>(i));
    bus_->send({kB, kA, epoch, sim::Kind::NodeSplit,
                {{"node", static_cast<unsigned>(node_id)},
                 {"left_node", static_cast<unsigned>(left_node)},
                 {"right_node", static_cast<unsigned>(right_node)},
                 {"left_ids", std::move(jl)},
                 {"right_ids", std::move(jr)}}});
    auto env = bus_->receive(kA);
    int ln = env->payload.at("left_node").get<int>();
    int rn = env->payload.at("right_node").get<int>();
    a_node_ids_[ln] = left_ids;
    a_node_ids_[rn] = right_ids;

    BNode nd;
    nd.kind = BNode::Kind::SplitB;
    nd.feature_local = vb;
    nd.threshold = thr;
    nd.left = left_node;
    nd.right = right_node;
    tree.nodes[static_cast<size_t>(node_id)] = nd;
  }

  build_node(std::move(left_ids), depth + 1, tree, g, h, leaf_updates, next_node, left_node,
             epoch);
  build_node(std::move(right_ids), depth + 1, tree, g, h, leaf_updates, next_node, right_node,
             epoch);
  return node_id;
}

TrainResult Engine::train() {
  TrainResult result;
  const auto n = y_.rows();

  std::vector<int> all_ids(static_cast<size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) all_ids[static_cast<size_t>(i)] = static_cast<int>(i);

  for (int t = 0; t < cfg_.n_trees; ++t) {
    const int epoch = t + 1;
    auto [g, h] = grad_hess(yhat_, y_);

    // Per-sample gradients cross to A once per tree, encrypted elementwise.
    nlohmann::json g_arr = nlohmann::json::array(), h_arr = nlohmann::json::array();
    std::vector<Ciphertext> enc_g, enc_h;
    enc_g.reserve(static_cast<size_t>(n));
    enc_h.reserve(static_cast<size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
      enc_g.push_back(paillier::encrypt(
          keys_.pub, paillier::encode(keys_.pub, g(i), cfg_.fraction_bits, 1), *b_rng_));
      enc_h.push_back(paillier::encrypt(
          keys_.pub, paillier::encode(keys_.pub, h(i), cfg_.fraction_bits, 1), *b_rng_));
      g_arr.push_back(paillier::bigint_to_hex(enc_g.back().value));
      h_arr.push_back(paillier::bigint_to_hex(enc_h.back().value));
    }
    bus_->send({kB, kA, epoch, sim::Kind::EncGradHess,
                {{"g", std::move(g_arr)}, {"h", std::move(h_arr)}, {"exponent", 1}}});
    {
      auto env = bus_->receive(kA);
      a_enc_g_.clear();
      a_enc_h_.clear();
      int exp = env->payload.at("exponent").get<int>();
      for (const auto& hexv : env->payload.at("g"))
        a_enc_g_.push_back({paillier::bigint_from_hex(hexv.get<std::string>()), exp,
                            keys_.pub.fingerprint()});
      for (const auto& hexv : env->payload.at("h"))
        a_enc_h_.push_back({paillier::bigint_from_hex(hexv.get<std::string>()), exp,
                            keys_.pub.fingerprint()});
      a_node_ids_.clear();
      a_node_ids_[0] = all_ids;
    }

    Tree tree;
    std::vector<std::pair<std::vector<int>, double>> leaf_updates;
    int next_node = 1;
    build_node(all_ids, 0, tree, g, h, leaf_updates, next_node, 0, epoch);
    model_.trees.push_back(std::move(tree));

    for (const auto& [ids, w] : leaf_updates)
      for (int i : ids) yhat_(i) += cfg_.shrinkage * w;

    result.mse_history.push_back((yhat_ - y_).squaredNorm() / static_cast<double>(n));
  }
  result.trained = true;
  return result;
}

namespace {

double walk_tree_collaborative(const Tree& tree, const TableA& table, const MatrixXd& xa,
                               const MatrixXd& xb, Eigen::Index sample, sim::Bus& bus,
                               const std::string& a_name, const std::string& b_name,
                               int epoch) {
  int node = 0;
  for (;;) {
    const BNode& nd = tree.nodes[static_cast<size_t>(node)];
    if (nd.kind == BNode::Kind::Leaf) return nd.weight;
    if (nd.kind == BNode::Kind::SplitB) {
      node = xb(sample, nd.feature_local) <= nd.threshold ? nd.left : nd.right;
      continue;
    }
    // A-owned split: only the record id and the resulting direction cross.
    bus.send({b_name, a_name, epoch, sim::Kind::SplitQuery,
              {{"record", nd.record}, {"sample", static_cast<unsigned>(sample)}}});
    auto q = bus.receive(a_name);
    auto rec = q->payload.at("record").get<std::string>();
    auto it = table.records.find(rec);
    if (it == table.records.end())
      throw ProtocolError("secureboost: unknown record id " + rec);
    bool left = xa(q->payload.at("sample").get<Eigen::Index>(), it->second.feature_local) <=
                it->second.threshold;
    bus.send({a_name, b_name, epoch, sim::Kind::DirectionBit,
              {{"record", rec}, {"sample", q->payload.at("sample")}, {"left", left}}});
    auto d = bus.receive(b_name);
    node = d->payload.at("left").get<bool>() ? nd.left : nd.right;
  }
}

}  // namespace

VectorXd predict_collaborative(const ModelB& model, const TableA& table, const MatrixXd& xa,
                               const MatrixXd& xb, sim::Bus& bus, const std::string& a_name,
                               const std::string& b_name) {
  if (xa.rows() != xb.rows()) throw std::invalid_argument("predict: sample counts do not align");
  VectorXd out(xa.rows());
  for (Eigen::Index s = 0; s < xa.rows(); ++s) {
    double acc = model.base_score;
    for (const auto& tree : model.trees)
      acc += model.shrinkage *
             walk_tree_collaborative(tree, table, xa, xb, s, bus, a_name, b_name, 0);
    out(s) = acc;
  }
  return out;
}

VectorXd Engine::predict(const MatrixXd& xa_test, const MatrixXd& xb_test) {
  a_test_ = xa_test;
  return predict_collaborative(model_, table_, a_test_, xb_test, *bus_, kA, kB);
}

}  // namespace gridfl::sboost

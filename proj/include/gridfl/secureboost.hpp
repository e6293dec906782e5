#pragma once

#include <Eigen/Dense>

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "gridfl/paillier.hpp"
#include "gridfl/transport.hpp"

namespace gridfl::sboost {

struct Config {
  int n_trees = 10;
  int max_depth = 4;
  int n_bins = 32;
  double lambda = 1.0;
  double gamma = 0.0;     // minimum split gain, strict
  double shrinkage = 1.0;
  double base_score = 0.0;  // sensible on standardized labels
  int min_leaf = 1;
  int key_bits = 512;
  int fraction_bits = paillier::kDefaultFractionBits;
  uint64_t seed = 1;
};

/// Interior quantile edges for histogram split finding: nearest-rank
/// quantiles at b/n_bins, deduplicated, and strictly below the column max so
/// no candidate has a structurally empty right child.
std::vector<double> quantile_edges(std::vector<double> values, int n_bins);

/// Half-open membership: bin b covers (edge[b-1], edge[b]], the last bin is
/// open above. Ties on an edge go left, at train and predict time alike.
int bin_index(const std::vector<double>& edges, double x);

/// g_i = 2(yhat_i - y_i), h_i = 2 for squared-error loss.
std::pair<Eigen::VectorXd, Eigen::VectorXd> grad_hess(const Eigen::VectorXd& yhat,
                                                      const Eigen::VectorXd& y);

double leaf_weight(double g, double h, double lambda);

/// Deterministic tie margin for split scores. A-side bin sums travel through
/// 2^-40 fixed point, so structurally tied candidates (same induced
/// partition) can decrypt a few 1e-9 apart; a challenger must beat the
/// incumbent by this much or the earlier (lower feature, lower edge)
/// candidate stands. The same margin gates the gamma threshold.
constexpr double kScoreTieEpsilon = 1e-7;

struct SplitCandidate {
  int feature = -1;  // global index: A's features first, then B's
  int edge = -1;
  double score = 0;
  double g_l = 0, h_l = 0, g_r = 0, h_r = 0;
};

struct FeatureBinStats {
  int feature = -1;            // global index
  std::vector<double> g, h;    // one entry per bin (= edges + 1)
};

/// Left-to-right prefix scan of every feature's bins; candidates with a
/// child lighter than min_child_h are skipped; ties break to the lowest
/// feature index then lowest edge index; returns nothing when the best
/// score does not exceed gamma.
std::optional<SplitCandidate> find_best_split(const std::vector<FeatureBinStats>& stats,
                                              double g_total, double h_total, double lambda,
                                              double gamma, double min_child_h);

// --- model storage -----------------------------------------------------

/// B's copy of a node. For splits owned by A it holds only the opaque record
/// id; feature index and threshold live in A's private lookup table.
struct BNode {
  enum class Kind { Leaf, SplitA, SplitB };
  Kind kind = Kind::Leaf;
  double weight = 0;         // Leaf
  std::string record;        // SplitA
  int feature_local = -1;    // SplitB
  double threshold = 0;      // SplitB
  int left = -1, right = -1;
};

struct Tree {
  std::vector<BNode> nodes;  // node 0 is the root
};

struct ModelB {
  double base_score = 0;
  double shrinkage = 1.0;
  double lambda = 1.0;
  std::vector<Tree> trees;
  std::vector<std::string> columns;  // B's column names, optional
  std::string run_id;                // binds the file to its config
};

struct RecordEntry {
  int feature_local = -1;
  double threshold = 0;
};

struct TableA {
  std::map<std::string, RecordEntry> records;
  std::vector<std::string> columns;
  std::string run_id;
};

// The two files are written separately and never merged.
void save_model_b(const std::string& path, const ModelB& model);
ModelB load_model_b(const std::string& path);
void save_table_a(const std::string& path, const TableA& table);
TableA load_table_a(const std::string& path);

/// Full tree view reassembled from both parties; exists only so tests can
/// compare against a centralized oracle.
struct MergedNode {
  bool leaf = true;
  double weight = 0;
  int owner = -1;  // 0 = A, 1 = B
  int feature_global = -1;
  double threshold = 0;
  int left = -1, right = -1;
};

struct MergedTree {
  std::vector<MergedNode> nodes;
};

std::vector<MergedTree> merge_views(const ModelB& model, const TableA& table, int n_features_a);

struct TrainResult {
  std::vector<double> mse_history;  // training MSE after each tree
  bool trained = false;
};

/// Offline scoring from the two persisted files; still runs the collaborative
/// walk over a bus so the prediction traffic stays auditable.
Eigen::VectorXd predict_collaborative(const ModelB& model, const TableA& table,
                                      const Eigen::MatrixXd& xa, const Eigen::MatrixXd& xb,
                                      sim::Bus& bus, const std::string& a_name,
                                      const std::string& b_name);

/// Vertically federated boosted regression trees. B holds the labels and the
/// private key and drives split finding; A only ever sees encrypted per-sample
/// gradients and answers direction queries at prediction time.
class Engine {
 public:
  Engine(Config cfg, Eigen::MatrixXd x_a, Eigen::MatrixXd x_b, Eigen::VectorXd y);

  TrainResult train();

  /// Collaborative prediction walk over the bus: B walks its skeleton and
  /// asks A for a direction bit at A-owned splits.
  Eigen::VectorXd predict(const Eigen::MatrixXd& xa_test, const Eigen::MatrixXd& xb_test);

  const sim::Bus& bus() const { return *bus_; }
  const ModelB& model_b() const { return model_; }
  const TableA& table_a() const { return table_; }
  int n_features_a() const { return static_cast<int>(x_a_.cols()); }
  std::vector<MergedTree> merged_view() const {
    return merge_views(model_, table_, n_features_a());
  }

 private:
  void a_serve_stats(int epoch);
  void a_handle_split(int epoch);
  int build_node(std::vector<int> ids, int depth, Tree& tree, const Eigen::VectorXd& g,
                 const Eigen::VectorXd& h,
                 std::vector<std::pair<std::vector<int>, double>>& leaf_updates, int& next_node,
                 int node_id, int epoch);

  Config cfg_;
  Eigen::MatrixXd x_a_, x_b_;
  Eigen::VectorXd y_;
  paillier::Keypair keys_;  // generated and held by B
  std::unique_ptr<sim::Bus> bus_;

  // A-side private state.
  std::vector<std::vector<double>> edges_a_;
  std::vector<std::vector<int>> bins_a_;  // [feature][sample] -> bin
  std::map<int, std::vector<int>> a_node_ids_;
  std::vector<paillier::Ciphertext> a_enc_g_, a_enc_h_;
  TableA table_;
  int record_counter_ = 0;
  std::unique_ptr<RandomSource> a_rng_;
  Eigen::MatrixXd a_test_;  // A's half of the samples being predicted

  // B-side private state.
  std::vector<std::vector<double>> edges_b_;
  std::vector<std::vector<int>> bins_b_;
  ModelB model_;
  std::unique_ptr<RandomSource> b_rng_;
  Eigen::VectorXd yhat_;
};

}  // namespace gridfl::sboost

#pragma once

#include <Eigen/Dense>

#include <memory>
#include <vector>

#include "gridfl/paillier.hpp"
#include "gridfl/transport.hpp"

namespace gridfl::vflr {

struct Config {
  double lambda = 0.1;          // ridge weight on both coefficient blocks
  double learning_rate = 1e-3;  // applied to the unnormalized summed gradient
  int max_epochs = 200;
  double tol = 1e-6;  // per-party convergence threshold on ||dtheta||_inf
  int key_bits = 512;
  int fraction_bits = paillier::kDefaultFractionBits;
  // Public bound on the gradient scale; masks are drawn from
  // [-1e3 * grad_scale_bound, 1e3 * grad_scale_bound].
  double grad_scale_bound = 1e4;
  uint64_t seed = 1;
  bool record_private_history = false;  // test introspection, never transported
};

struct EpochStats {
  int epoch = 0;
  double delta_a_inf = 0;
  double delta_b_inf = 0;
};

/// Party-internal values captured per epoch when record_private_history is
/// on. Test oracles compare these against the centralized gradient; nothing
/// here ever reaches the bus.
struct PrivateSnapshot {
  int epoch = 0;
  Eigen::VectorXd theta_a, theta_b;  // values entering the epoch
  Eigen::VectorXd grad_a, grad_b;    // unmasked gradients at those thetas
  Eigen::VectorXd mask_a, mask_b;
};

struct Result {
  Eigen::VectorXd theta_a;
  Eigen::VectorXd theta_b;  // last entry is the bias coefficient
  std::vector<EpochStats> history;
  bool converged = false;
  int epochs_run = 0;
  std::vector<PrivateSnapshot> private_history;
};

// Protocol steps, exposed for direct testing. The engine composes these.

/// Elementwise encryption of one party's partial predictions X * theta.
std::vector<paillier::Ciphertext> encrypted_partial(const paillier::PublicKey& pk,
                                                    const Eigen::MatrixXd& x,
                                                    const Eigen::VectorXd& theta,
                                                    int fraction_bits, RandomSource& rng);

/// B's residual: [[d]] = [[X_A theta_A]] (+) [[X_B theta_B - y]], one
/// ciphertext per sample.
std::vector<paillier::Ciphertext> encrypted_residual(
    const paillier::PublicKey& pk, const std::vector<paillier::Ciphertext>& partial_a,
    const Eigen::VectorXd& own_block_minus_y, int fraction_bits, RandomSource& rng);

/// One block's masked encrypted gradient:
///   [[dL/dtheta_j]] = sum_i [[d_i]] (*) (2 x_ij)  (+)  [[theta_j]] (*) lambda  (+)  [[R_j]].
/// The unmasked gradient never exists in ciphertext or plaintext on this side.
std::vector<paillier::Ciphertext> encrypted_masked_gradient(
    const paillier::PublicKey& pk, const std::vector<paillier::Ciphertext>& d_ct,
    const Eigen::MatrixXd& x, const Eigen::VectorXd& theta, const Eigen::VectorXd& mask,
    double lambda, int fraction_bits, RandomSource& rng);

/// Vertically federated ridge regression between feature-holder A and
/// label-holder B, with a third party C that holds the only private key and
/// decrypts masked gradients. Every message leaving A or B is ciphertext;
/// everything leaving C is a masked plaintext vector.
class Engine {
 public:
  /// X_B gets a constant-1 bias column appended internally. Features are
  /// expected standardized per party.
  Engine(Config cfg, Eigen::MatrixXd x_a, Eigen::MatrixXd x_b, Eigen::VectorXd y);

  Result run();

  const sim::Bus& bus() const { return *bus_; }
  double mask_bound() const { return 1e3 * cfg_.grad_scale_bound; }

 private:
  Config cfg_;
  Eigen::MatrixXd x_a_, x_b_;
  Eigen::VectorXd y_;
  paillier::Keypair keys_;  // held by C
  std::unique_ptr<sim::Bus> bus_;
};

}  // namespace gridfl::vflr

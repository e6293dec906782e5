#pragma once

#include <memory>
#include <span>
#include <vector>

#include "gridfl/learners.hpp"
#include "gridfl/paillier.hpp"
#include "gridfl/transport.hpp"

namespace gridfl::hfl {

struct Config {
  nn::LstmConfig model;
  double learning_rate = 0.05;
  int max_epochs = 10;
  double drop_probability = 0.0;  // upload-leg failure rate
  double tol = 1e-3;
  int patience = 3;
  int key_bits = 512;
  int fraction_bits = paillier::kDefaultFractionBits;
  uint64_t seed = 1;
  bool weighted_average = false;  // sample-count weights; plain mean by default
  bool record_param_history = false;
  bool leak_plaintext_params = false;  // audit negative control
};

/// Server view of one epoch: losses as received, their mean, and exactly the
/// set of parties whose upload arrived.
struct RoundReport {
  int epoch = 0;
  std::vector<double> party_losses;  // NaN where the upload was dropped
  double avg_loss = 0;
  std::vector<int> arrivals;
};

struct Result {
  nn::ModelParams params;
  std::vector<RoundReport> rounds;
  bool converged = false;
  int epochs_run = 0;
  // Decrypted aggregate after each epoch; filled when record_param_history.
  std::vector<std::vector<double>> param_history;
};

/// True iff every relative loss change inside the last `patience` reported
/// epochs stays below tol. NaN entries (epochs with no arrivals) never count
/// as progress-free, so they reset the window.
bool convergence_agreed(std::span<const double> losses, double tol, int patience);

/// Encrypted federated averaging over N homogeneous parties and one
/// honest-but-curious aggregation server. Parties share one keypair (the
/// private half never touches the bus); the server only ever holds the
/// public key, ciphertext parameter vectors and scalar losses.
class Engine {
 public:
  Engine(Config cfg, std::vector<nn::Batch> party_data);

  Result run();

  const sim::Bus& bus() const { return *bus_; }
  const paillier::PublicKey& public_key() const { return keys_.pub; }
  int n_parties() const { return static_cast<int>(parties_.size()); }

 private:
  struct Party {
    std::string name;
    nn::Batch data;
    nn::ModelParams params;
    std::unique_ptr<RandomSource> rng;
  };

  struct Server {
    std::string name = "server";
    paillier::PublicKey pk;
    std::vector<paillier::Ciphertext> current;  // last aggregated [[w]]
  };

  void broadcast_current(int epoch);

  Config cfg_;
  paillier::Keypair keys_;
  std::vector<Party> parties_;
  Server server_;
  std::unique_ptr<sim::Bus> bus_;
};

// Payload helpers shared by the engines.
nlohmann::json ct_vector_to_json(std::span<const paillier::Ciphertext> cts);
std::vector<paillier::Ciphertext> ct_vector_from_json(const nlohmann::json& j,
                                                      const paillier::PublicKey& pk);

}  // namespace gridfl::hfl

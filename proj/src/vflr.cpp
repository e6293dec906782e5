#include "gridfl/vflr.hpp"

#include <cmath>

#include "gridfl/hfl.hpp"  // ct_vector_to_json / from_json

namespace gridfl::vflr {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using paillier::Ciphertext;

namespace {

constexpr const char* kA = "party_a";
constexpr const char* kB = "party_b";
constexpr const char* kC = "third_party";

VectorXd draw_mask(RandomSource& rng, Eigen::Index n, double bound) {
  VectorXd m(n);
  for (Eigen::Index i = 0; i < n; ++i) m(i) = rng.uniform(-bound, bound);
  return m;
}

}  // namespace

std::vector<Ciphertext> encrypted_partial(const paillier::PublicKey& pk, const MatrixXd& x,
                                          const VectorXd& theta, int fraction_bits,
                                          RandomSource& rng) {
  VectorXd partial = x * theta;
  return paillier::encrypt_vector(
      pk, std::span<const double>(partial.data(), static_cast<size_t>(partial.size())),
      fraction_bits, rng);
}

std::vector<Ciphertext> encrypted_residual(const paillier::PublicKey& pk,
                                           const std::vector<Ciphertext>& partial_a,
                                           const VectorXd& own_block_minus_y, int fraction_bits,
                                           RandomSource& rng) {
  if (static_cast<Eigen::Index>(partial_a.size()) != own_block_minus_y.size())
    throw std::invalid_argument("residual: sample counts do not align");
  std::vector<Ciphertext> d(partial_a.size());
  for (size_t i = 0; i < partial_a.size(); ++i) {
    Ciphertext own = paillier::encrypt(
        pk, paillier::encode(pk, own_block_minus_y(static_cast<Eigen::Index>(i)), fraction_bits, 1),
        rng);
    d[i] = paillier::ct_add(pk, partial_a[i], own);
  }
  return d;
}

std::vector<Ciphertext> encrypted_masked_gradient(const paillier::PublicKey& pk,
                                                  const std::vector<Ciphertext>& d_ct,
                                                  const MatrixXd& x, const VectorXd& theta,
                                                  const VectorXd& mask, double lambda,
                                                  int fraction_bits, RandomSource& rng) {
  if (static_cast<Eigen::Index>(d_ct.size()) != x.rows() || theta.size() != x.cols() ||
      mask.size() != x.cols())
    throw std::invalid_argument("masked gradient: shape mismatch");
  std::vector<Ciphertext> out;
  out.reserve(static_cast<size_t>(x.cols()));
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    std::optional<Ciphertext> acc;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      Ciphertext term =
          paillier::ct_scalar_mul(pk, d_ct[static_cast<size_t>(i)], 2.0 * x(i, j), fraction_bits);
      acc = acc ? paillier::ct_add(pk, *acc, term) : term;
    }
    if (lambda != 0) {
      Ciphertext th = paillier::encrypt(pk, paillier::encode(pk, theta(j), fraction_bits, 1), rng);
      acc = paillier::ct_add(pk, *acc, paillier::ct_scalar_mul(pk, th, lambda, fraction_bits));
    }
    Ciphertext mk = paillier::encrypt(pk, paillier::encode(pk, mask(j), fraction_bits, 2), rng);
    out.push_back(paillier::ct_add(pk, *acc, mk));
  }
  return out;
}

Engine::Engine(Config cfg, MatrixXd x_a, MatrixXd x_b, VectorXd y)
    : cfg_(std::move(cfg)), x_a_(std::move(x_a)), y_(std::move(y)) {
  if (cfg_.lambda < 0) throw std::invalid_argument("vflr: lambda must be >= 0");
  if (cfg_.learning_rate < 0) throw std::invalid_argument("vflr: learning rate must be >= 0");
  if (cfg_.max_epochs < 1) throw std::invalid_argument("vflr: max_epochs must be >= 1");
  if (cfg_.tol <= 0) throw std::invalid_argument("vflr: tol must be > 0");
  if (x_a_.rows() != x_b.rows() || x_a_.rows() != y_.rows())
    throw std::invalid_argument("vflr: sample counts do not align");
  if (x_a_.rows() == 0) throw std::invalid_argument("vflr: empty dataset");
  if (x_a_.cols() == 0) throw std::invalid_argument("vflr: A must hold at least one feature");

  // Single intercept, hosted by the label holder.
  x_b_.resize(x_b.rows(), x_b.cols() + 1);
  if (x_b.cols() > 0) x_b_.leftCols(x_b.cols()) = x_b;
  x_b_.col(x_b.cols()).setOnes();

  bus_ = std::make_unique<sim::Bus>(sim::Protocol::Vflr);
  bus_->register_participant(kA, sim::Role::VflrA);
  bus_->register_participant(kB, sim::Role::VflrB);
  bus_->register_participant(kC, sim::Role::VflrC);

  RandomSource keyrng(derive_seed(cfg_.seed, "vflr-keygen"));
  keys_ = paillier::keygen(cfg_.key_bits, keyrng);
}

Result Engine::run() {
  const auto& pk = keys_.pub;
  const int f = cfg_.fraction_bits;
  const Eigen::Index da = x_a_.cols(), db = x_b_.cols();

  // C publishes the public key.
  nlohmann::json pk_payload = {{"n", paillier::bigint_to_hex(pk.n)},
                               {"g", paillier::bigint_to_hex(pk.g)},
                               {"bits", static_cast<unsigned>(pk.bits)}};
  bus_->send({kC, kA, 0, sim::Kind::PubKey, pk_payload});
  bus_->send({kC, kB, 0, sim::Kind::PubKey, pk_payload});
  (void)bus_->receive(kA);
  (void)bus_->receive(kB);

  // Secret initializations.
  RandomSource init_a(derive_seed(cfg_.seed, "vflr-theta-a"));
  RandomSource init_b(derive_seed(cfg_.seed, "vflr-theta-b"));
  VectorXd theta_a(da), theta_b(db);
  for (Eigen::Index i = 0; i < da; ++i) theta_a(i) = init_a.uniform(-0.1, 0.1);
  for (Eigen::Index i = 0; i < db; ++i) theta_b(i) = init_b.uniform(-0.1, 0.1);

  RandomSource enc_a(derive_seed(cfg_.seed, "vflr-enc-a"));
  RandomSource enc_b(derive_seed(cfg_.seed, "vflr-enc-b"));
  RandomSource mask_a_rng(derive_seed(cfg_.seed, "vflr-mask-a"));
  RandomSource mask_b_rng(derive_seed(cfg_.seed, "vflr-mask-b"));

  Result result;
  result.epochs_run = 0;

  for (int epoch = 1; epoch <= cfg_.max_epochs; ++epoch) {
    // A -> B: encrypted partial predictions.
    auto partial_ct = encrypted_partial(pk, x_a_, theta_a, f, enc_a);
    bus_->send({kA, kB, epoch, sim::Kind::EncPartial, hfl::ct_vector_to_json(partial_ct)});

    // B: residual d = X_A theta_A + X_B theta_B - y, encrypted elementwise.
    auto env = bus_->receive(kB);
    auto a_ct = hfl::ct_vector_from_json(env->payload, pk);
    auto d_ct = encrypted_residual(pk, a_ct, x_b_ * theta_b - y_, f, enc_b);
    bus_->send({kB, kA, epoch, sim::Kind::EncResidual, hfl::ct_vector_to_json(d_ct)});

    // Fresh masks, then both parties ship masked encrypted gradients to C.
    VectorXd mask_a = draw_mask(mask_a_rng, da, mask_bound());
    VectorXd mask_b = draw_mask(mask_b_rng, db, mask_bound());

    auto env_a = bus_->receive(kA);
    auto d_ct_a = hfl::ct_vector_from_json(env_a->payload, pk);
    auto grad_a_ct =
        encrypted_masked_gradient(pk, d_ct_a, x_a_, theta_a, mask_a, cfg_.lambda, f, enc_a);
    bus_->send({kA, kC, epoch, sim::Kind::EncMaskedGrad, hfl::ct_vector_to_json(grad_a_ct)});

    auto grad_b_ct =
        encrypted_masked_gradient(pk, d_ct, x_b_, theta_b, mask_b, cfg_.lambda, f, enc_b);
    bus_->send({kB, kC, epoch, sim::Kind::EncMaskedGrad, hfl::ct_vector_to_json(grad_b_ct)});

    // C decrypts the masked gradients and returns plaintext vectors.
    for (const char* target : {kA, kB}) {
      auto env_c = bus_->receive(kC);
      auto cts = hfl::ct_vector_from_json(env_c->payload, pk);
      auto plain = paillier::decrypt_vector(pk, keys_.priv, cts, f);
      bus_->send({kC, target, epoch, sim::Kind::PlainMaskedGrad, {{"values", plain}}});
    }

    // Unmask and update, each side secretly.
    auto recv_masked = [&](const char* who) {
      auto e = bus_->receive(who);
      return e->payload.at("values").get<std::vector<double>>();
    };
    std::vector<double> masked_a = recv_masked(kA);
    std::vector<double> masked_b = recv_masked(kB);

    VectorXd grad_a(da), grad_b(db);
    for (Eigen::Index j = 0; j < da; ++j) grad_a(j) = masked_a[static_cast<size_t>(j)] - mask_a(j);
    for (Eigen::Index j = 0; j < db; ++j) grad_b(j) = masked_b[static_cast<size_t>(j)] - mask_b(j);

    if (cfg_.record_private_history) {
      PrivateSnapshot snap;
      snap.epoch = epoch;
      snap.theta_a = theta_a;
      snap.theta_b = theta_b;
      snap.grad_a = grad_a;
      snap.grad_b = grad_b;
      snap.mask_a = mask_a;
      snap.mask_b = mask_b;
      result.private_history.push_back(std::move(snap));
    }

    VectorXd next_a = theta_a - cfg_.learning_rate * grad_a;
    VectorXd next_b = theta_b - cfg_.learning_rate * grad_b;
    EpochStats st;
    st.epoch = epoch;
    st.delta_a_inf = (next_a - theta_a).cwiseAbs().maxCoeff();
    st.delta_b_inf = (next_b - theta_b).cwiseAbs().maxCoeff();
    theta_a = std::move(next_a);
    theta_b = std::move(next_b);
    result.history.push_back(st);
    result.epochs_run = epoch;

    if (theta_a.cwiseAbs().maxCoeff() > 1e6 || theta_b.cwiseAbs().maxCoeff() > 1e6)
      throw ProtocolError("vflr: parameters diverged (norm > 1e6); lower the learning rate");

    if (st.delta_a_inf < cfg_.tol && st.delta_b_inf < cfg_.tol) {
      result.converged = true;
      break;
    }
  }

  result.theta_a = std::move(theta_a);
  result.theta_b = std::move(theta_b);
  return result;
}

}  // namespace gridfl::vflr

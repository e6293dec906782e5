#include "gridfl/hfl.hpp"

#include <cmath>
#include <limits>

namespace gridfl::hfl {

using paillier::Ciphertext;

nlohmann::json ct_vector_to_json(std::span<const Ciphertext> cts) {
  nlohmann::json values = nlohmann::json::array();
  for (const auto& c : cts) values.push_back(paillier::bigint_to_hex(c.value));
  return {{"values", std::move(values)}, {"exponent", cts.empty() ? 1 : cts.front().exponent}};
}

std::vector<Ciphertext> ct_vector_from_json(const nlohmann::json& j,
                                            const paillier::PublicKey& pk) {
  std::vector<Ciphertext> cts;
  int exponent = j.at("exponent").get<int>();
  for (const auto& v : j.at("values")) {
    Ciphertext c;
    c.value = paillier::bigint_from_hex(v.get<std::string>());
    c.exponent = exponent;
    c.key_fp = pk.fingerprint();
    cts.push_back(std::move(c));
  }
  return cts;
}

bool convergence_agreed(std::span<const double> losses, double tol, int patience) {
  if (tol <= 0 || patience < 1) throw std::invalid_argument("convergence: tol > 0, patience >= 1");
  if (static_cast<int>(losses.size()) < patience) return false;
  for (size_t i = losses.size() - static_cast<size_t>(patience) + 1; i < losses.size(); ++i) {
    double prev = losses[i - 1], cur = losses[i];
    if (!std::isfinite(prev) || !std::isfinite(cur)) return false;
    double rel = std::abs(prev - cur) / std::max(std::abs(prev), 1e-12);
    if (rel >= tol) return false;
  }
  return true;
}

Engine::Engine(Config cfg, std::vector<nn::Batch> party_data) : cfg_(std::move(cfg)) {
  if (party_data.empty()) throw std::invalid_argument("hfl: need at least one party");
  if (cfg_.drop_probability < 0 || cfg_.drop_probability >= 1)
    throw std::invalid_argument("hfl: drop probability must be in [0, 1)");
  if (cfg_.learning_rate < 0) throw std::invalid_argument("hfl: learning rate must be >= 0");
  if (cfg_.max_epochs < 1) throw std::invalid_argument("hfl: max_epochs must be >= 1");

  const auto in_cols = party_data.front().inputs.cols();
  const auto lab_cols = party_data.front().labels.cols();
  for (const auto& d : party_data) {
    if (d.inputs.rows() == 0) throw std::invalid_argument("hfl: party with empty dataset");
    if (d.inputs.cols() != in_cols || d.labels.cols() != lab_cols ||
        d.inputs.rows() != d.labels.rows())
      throw std::invalid_argument("hfl: inconsistent feature/label shapes across parties");
  }
  if (in_cols != cfg_.model.input_window || lab_cols != cfg_.model.horizon)
    throw std::invalid_argument("hfl: data shapes do not match the model config");

  std::optional<sim::FailurePolicy> policy;
  if (cfg_.drop_probability > 0)
    policy = sim::FailurePolicy{cfg_.drop_probability, derive_seed(cfg_.seed, "hfl-drops")};
  bus_ = std::make_unique<sim::Bus>(sim::Protocol::Hfl, policy);

  // Party 0 generates the keypair; the private key is shared with the other
  // parties out of band and never crosses the bus. The server learns only
  // the public half.
  RandomSource keyrng(derive_seed(cfg_.seed, "hfl-keygen"));
  keys_ = paillier::keygen(cfg_.key_bits, keyrng);
  server_.pk = keys_.pub;

  nn::ModelParams w0 = nn::init_params(nn::lstm_layout(cfg_.model), derive_seed(cfg_.seed, "hfl-init"));
  for (size_t i = 0; i < party_data.size(); ++i) {
    Party p;
    p.name = "party" + std::to_string(i);
    p.data = std::move(party_data[i]);
    p.params = w0;
    p.rng = std::make_unique<RandomSource>(derive_seed(cfg_.seed, "hfl-enc-" + p.name));
    bus_->register_participant(p.name, sim::Role::HflParty);
    parties_.push_back(std::move(p));
  }
  bus_->register_participant(server_.name, sim::Role::AggServer);

  // Setup round: public key to the server, then the encrypted initial
  // parameters, which the server redistributes.
  bus_->send({parties_[0].name, server_.name, 0, sim::Kind::PubKey,
              {{"n", paillier::bigint_to_hex(keys_.pub.n)},
               {"g", paillier::bigint_to_hex(keys_.pub.g)},
               {"bits", static_cast<unsigned>(keys_.pub.bits)}}});
  auto enc_w0 = paillier::encrypt_vector(keys_.pub, parties_[0].params.values,
                                         cfg_.fraction_bits, *parties_[0].rng);
  bus_->send({parties_[0].name, server_.name, 0, sim::Kind::EncParams,
              ct_vector_to_json(enc_w0)});
  (void)bus_->receive(server_.name);  // PubKey
  if (auto env = bus_->receive(server_.name))
    server_.current = ct_vector_from_json(env->payload, server_.pk);
  if (server_.current.size() != w0.values.size())
    throw ProtocolError("hfl: initial parameter distribution incomplete");
  broadcast_current(0);
  for (auto& p : parties_) {
    auto env = bus_->receive(p.name);
    auto cts = ct_vector_from_json(env->payload, keys_.pub);
    if (cts.size() != w0.values.size())
      throw ProtocolError("hfl: broadcast length does not match the layout");
    p.params.values = paillier::decrypt_vector(keys_.pub, keys_.priv, cts, cfg_.fraction_bits);
  }
}

void Engine::broadcast_current(int epoch) {
  auto payload = ct_vector_to_json(server_.current);
  for (const auto& p : parties_)
    bus_->send({server_.name, p.name, epoch, sim::Kind::EncParams, payload});
}

Result Engine::run() {
  Result result;
  std::vector<double> loss_history;
  constexpr double nan = std::numeric_limits<double>::quiet_NaN();

  for (int epoch = 1; epoch <= cfg_.max_epochs; ++epoch) {
    // Local epochs: decrypt the broadcast, report the loss at those
    // parameters, take one full-batch step and upload the re-encrypted
    // result. Upload legs may be dropped by the failure policy.
    for (auto& p : parties_) {
      auto [loss, grad] = nn::lstm_gradient(p.params, cfg_.model, p.data);
      p.params = nn::gd_step(p.params, grad, cfg_.learning_rate);
      auto cts =
          paillier::encrypt_vector(keys_.pub, p.params.values, cfg_.fraction_bits, *p.rng);
      bus_->send({p.name, server_.name, epoch, sim::Kind::EncParams, ct_vector_to_json(cts)});
      bus_->send({p.name, server_.name, epoch, sim::Kind::PlainLoss, {{"loss", loss}}});
      if (cfg_.leak_plaintext_params && epoch == 1 && &p == &parties_[0]) {
        // Deliberate leak used by the audit's negative control.
        bus_->send({p.name, server_.name, epoch, sim::Kind::PlainLoss,
                    {{"loss", p.params.values}}});
      }
    }

    // Server side: collect whatever arrived this epoch.
    std::vector<std::vector<Ciphertext>> received;
    RoundReport report;
    report.epoch = epoch;
    report.party_losses.assign(parties_.size(), nan);
    while (auto env = bus_->receive(server_.name)) {
      size_t idx = 0;
      for (; idx < parties_.size(); ++idx)
        if (parties_[idx].name == env->from) break;
      if (idx == parties_.size()) continue;
      if (env->kind == sim::Kind::EncParams) {
        received.push_back(ct_vector_from_json(env->payload, server_.pk));
        report.arrivals.push_back(static_cast<int>(idx));
      } else if (env->kind == sim::Kind::PlainLoss && env->payload.at("loss").is_number()) {
        report.party_losses[idx] = env->payload.at("loss").get<double>();
      }
    }

    if (!received.empty()) {
      // Elementwise ciphertext mean; the server never decrypts anything.
      const size_t len = received.front().size();
      std::optional<std::vector<double>> weights;
      if (cfg_.weighted_average) {
        double total = 0;
        for (int idx : report.arrivals)
          total += static_cast<double>(parties_[static_cast<size_t>(idx)].data.inputs.rows());
        weights.emplace();
        for (int idx : report.arrivals)
          weights->push_back(
              static_cast<double>(parties_[static_cast<size_t>(idx)].data.inputs.rows()) / total);
      }
      std::vector<Ciphertext> aggregated(len);
      std::vector<Ciphertext> column(received.size());
      for (size_t j = 0; j < len; ++j) {
        for (size_t r = 0; r < received.size(); ++r) column[r] = received[r][j];
        aggregated[j] = paillier::ct_average(server_.pk, column, weights, cfg_.fraction_bits);
      }
      server_.current = std::move(aggregated);

      double sum = 0;
      int cnt = 0;
      for (double l : report.party_losses)
        if (std::isfinite(l)) {
          sum += l;
          ++cnt;
        }
      report.avg_loss = cnt > 0 ? sum / cnt : nan;
    } else {
      // Everyone dropped: keep the previous aggregate and rebroadcast it.
      report.avg_loss = nan;
    }

    broadcast_current(epoch);
    if (std::isfinite(report.avg_loss))
      for (const auto& p : parties_)
        bus_->send({server_.name, p.name, epoch, sim::Kind::AvgLoss, {{"loss", report.avg_loss}}});

    for (auto& p : parties_) {
      while (auto env = bus_->receive(p.name)) {
        if (env->kind != sim::Kind::EncParams) continue;
        auto cts = ct_vector_from_json(env->payload, keys_.pub);
        if (cts.size() != p.params.values.size())
          throw ProtocolError("hfl: broadcast length does not match the layout");
        p.params.values =
            paillier::decrypt_vector(keys_.pub, keys_.priv, cts, cfg_.fraction_bits);
      }
    }

    if (cfg_.record_param_history) result.param_history.push_back(parties_[0].params.values);

    loss_history.push_back(report.avg_loss);
    result.rounds.push_back(std::move(report));
    result.epochs_run = epoch;
    if (convergence_agreed(loss_history, cfg_.tol, cfg_.patience)) {
      result.converged = true;
      break;
    }
  }

  result.params = parties_[0].params;
  return result;
}

}  // namespace gridfl::hfl

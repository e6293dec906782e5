#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "gridfl/util.hpp"
#include "json.hpp"

namespace gridfl::sim {

/// Closed set of message kinds. Anything not listed here cannot travel on the
/// bus, and the audit fails closed on unknown kind strings in a trace file.
enum class Kind {
  PubKey,
  EncParams,
  PlainLoss,
  AvgLoss,
  EncPartial,
  EncResidual,
  EncMaskedGrad,
  PlainMaskedGrad,
  EncGradHess,
  StatsRequest,
  EncBinStats,
  SplitNotify,
  SplitRecord,
  NodeSplit,
  SplitQuery,
  DirectionBit,
};

const char* to_string(Kind k);
std::optional<Kind> kind_from_string(const std::string& s);

enum class Role { HflParty, AggServer, VflrA, VflrB, VflrC, SbA, SbB };

const char* to_string(Role r);
std::optional<Role> role_from_string(const std::string& s);

enum class Protocol { Hfl, Vflr, SecureBoost };

const char* to_string(Protocol p);
std::optional<Protocol> protocol_from_string(const std::string& s);

struct Envelope {
  std::string from;
  std::string to;
  int epoch = 0;
  Kind kind = Kind::PubKey;
  nlohmann::json payload;
};

/// Upload-leg Bernoulli drop, one draw per (sender, epoch) so every envelope
/// a party uploads in an epoch shares the same fate.
struct FailurePolicy {
  double drop_probability = 0.0;
  uint64_t seed = 0;
};

struct TraceEntry {
  uint64_t seq = 0;
  Envelope env;
  bool delivered = true;
};

using RoleMap = std::map<std::string, Role>;

/// In-process bus: typed envelopes, per-recipient FIFO delivery, an
/// append-only trace of everything (delivered or dropped), and hard failure
/// on any (from, to, kind) outside the active protocol's whitelist.
class Bus {
 public:
  explicit Bus(Protocol protocol, std::optional<FailurePolicy> policy = std::nullopt);

  void register_participant(const std::string& name, Role role);

  /// Returns false when the failure policy dropped the envelope.
  bool send(Envelope env);

  std::optional<Envelope> receive(const std::string& recipient);

  Protocol protocol() const { return protocol_; }
  const RoleMap& roles() const { return roles_; }
  const std::vector<TraceEntry>& trace() const { return trace_; }
  uint64_t send_count() const { return next_seq_; }

 private:
  Protocol protocol_;
  std::optional<FailurePolicy> policy_;
  RoleMap roles_;
  std::map<std::string, std::deque<Envelope>> queues_;
  std::vector<TraceEntry> trace_;
  uint64_t next_seq_ = 0;
  std::mutex mu_;
};

bool leg_allowed(Protocol p, Role from, Role to, Kind k);

struct AuditViolation {
  uint64_t seq = 0;
  std::string reason;
};

struct AuditReport {
  bool passed = true;
  size_t checked = 0;
  std::vector<AuditViolation> violations;
};

/// Verifies every traced envelope against the protocol's leg whitelist and
/// each kind's closed payload schema. Model numbers may only appear as
/// ciphertext hex; the only plaintext vectors allowed through are masked
/// gradients; everything else is ids, bits and scalar losses.
AuditReport audit(Protocol protocol, const std::vector<TraceEntry>& trace, const RoleMap& roles);

/// One JSON object per line; header line carries protocol and roles. Payloads
/// are summarized (size + hash) unless full_payload is set, and only a
/// full-payload trace can be re-audited from disk.
void export_trace_jsonl(const std::string& path, Protocol protocol, const RoleMap& roles,
                        const std::vector<TraceEntry>& trace, bool full_payload);

struct LoadedTrace {
  Protocol protocol = Protocol::Hfl;
  RoleMap roles;
  std::vector<TraceEntry> trace;
  bool has_payloads = false;
};

LoadedTrace load_trace_jsonl(const std::string& path);

}  // namespace gridfl::sim

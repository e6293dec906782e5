#include "gridfl/transport.hpp"

#include <fstream>
#include <set>
#include <tuple>

namespace gridfl::sim {

namespace {

struct KindName {
  Kind kind;
  const char* name;
};

constexpr KindName kKindNames[] = {
    {Kind::PubKey, "PubKey"},
    {Kind::EncParams, "EncParams"},
    {Kind::PlainLoss, "PlainLoss"},
    {Kind::AvgLoss, "AvgLoss"},
    {Kind::EncPartial, "EncPartial"},
    {Kind::EncResidual, "EncResidual"},
    {Kind::EncMaskedGrad, "EncMaskedGrad"},
    {Kind::PlainMaskedGrad, "PlainMaskedGrad"},
    {Kind::EncGradHess, "EncGradHess"},
    {Kind::StatsRequest, "StatsRequest"},
    {Kind::EncBinStats, "EncBinStats"},
    {Kind::SplitNotify, "SplitNotify"},
    {Kind::SplitRecord, "SplitRecord"},
    {Kind::NodeSplit, "NodeSplit"},
    {Kind::SplitQuery, "SplitQuery"},
    {Kind::DirectionBit, "DirectionBit"},
};

struct RoleName {
  Role role;
  const char* name;
};

constexpr RoleName kRoleNames[] = {
    {Role::HflParty, "hfl_party"}, {Role::AggServer, "agg_server"}, {Role::VflrA, "vflr_a"},
    {Role::VflrB, "vflr_b"},       {Role::VflrC, "vflr_c"},         {Role::SbA, "sb_a"},
    {Role::SbB, "sb_b"},
};

}  // namespace

const char* to_string(Kind k) {
  for (const auto& kn : kKindNames)
    if (kn.kind == k) return kn.name;
  return "?";
}

std::optional<Kind> kind_from_string(const std::string& s) {
  for (const auto& kn : kKindNames)
    if (s == kn.name) return kn.kind;
  return std::nullopt;
}

const char* to_string(Role r) {
  for (const auto& rn : kRoleNames)
    if (rn.role == r) return rn.name;
  return "?";
}

std::optional<Role> role_from_string(const std::string& s) {
  for (const auto& rn : kRoleNames)
    if (s == rn.name) return rn.role;
  return std::nullopt;
}

const char* to_string(Protocol p) {
  switch (p) {
    case Protocol::Hfl: return "hfl";
    case Protocol::Vflr: return "vflr";
    case Protocol::SecureBoost: return "secureboost";
  }
  return "?";
}

std::optional<Protocol> protocol_from_string(const std::string& s) {
  if (s == "hfl") return Protocol::Hfl;
  if (s == "vflr") return Protocol::Vflr;
  if (s == "secureboost") return Protocol::SecureBoost;
  return std::nullopt;
}

bool leg_allowed(Protocol p, Role from, Role to, Kind k) {
  using enum Role;
  using enum Kind;
  switch (p) {
    case Protocol::Hfl:
      if (from == HflParty && to == AggServer)
        return k == PubKey || k == EncParams || k == PlainLoss;
      if (from == AggServer && to == HflParty) return k == EncParams || k == AvgLoss;
      return false;
    case Protocol::Vflr:
      if (from == VflrC && (to == VflrA || to == VflrB))
        return k == PubKey || k == PlainMaskedGrad;
      if (from == VflrA && to == VflrB) return k == EncPartial;
      if (from == VflrB && to == VflrA) return k == EncResidual;
      if ((from == VflrA || from == VflrB) && to == VflrC) return k == EncMaskedGrad;
      return false;
    case Protocol::SecureBoost:
      if (from == SbB && to == SbA)
        return k == PubKey || k == EncGradHess || k == StatsRequest || k == SplitNotify ||
               k == NodeSplit || k == SplitQuery;
      if (from == SbA && to == SbB)
        return k == EncBinStats || k == SplitRecord || k == NodeSplit || k == DirectionBit;
      return false;
  }
  return false;
}

Bus::Bus(Protocol protocol, std::optional<FailurePolicy> policy)
    : protocol_(protocol), policy_(std::move(policy)) {
  if (policy_ && (policy_->drop_probability < 0 || policy_->drop_probability >= 1))
    throw std::invalid_argument("failure policy: drop probability must be in [0, 1)");
  if (policy_ && protocol_ != Protocol::Hfl && policy_->drop_probability > 0)
    throw std::invalid_argument("failure policy: drops are an HFL-only experiment");
}

void Bus::register_participant(const std::string& name, Role role) {
  std::lock_guard lock(mu_);
  roles_[name] = role;
  queues_.emplace(name, std::deque<Envelope>{});
}

bool Bus::send(Envelope env) {
  std::lock_guard lock(mu_);
  auto from_it = roles_.find(env.from);
  auto to_it = roles_.find(env.to);
  if (from_it == roles_.end() || to_it == roles_.end())
    throw ProtocolError("bus: unregistered participant on envelope " + env.from + "->" + env.to);
  if (!leg_allowed(protocol_, from_it->second, to_it->second, env.kind))
    throw ProtocolError(std::string("bus: kind ") + to_string(env.kind) +
                        " not allowed on leg " + env.from + "->" + env.to);

  bool delivered = true;
  // Setup traffic (epoch 0) always lands; the failure model covers the
  // per-epoch upload legs only.
  if (policy_ && policy_->drop_probability > 0 && env.epoch >= 1 &&
      from_it->second == Role::HflParty && to_it->second == Role::AggServer) {
    // One deterministic draw per (sender, epoch).
    uint64_t h = splitmix64(policy_->seed ^ fnv1a64(env.from) ^
                            (0x9e3779b97f4a7c15ULL * static_cast<uint64_t>(env.epoch + 1)));
    delivered = unit_from_hash(h) >= policy_->drop_probability;
  }

  trace_.push_back({next_seq_++, env, delivered});
  if (delivered) queues_[env.to].push_back(std::move(env));
  return delivered;
}

std::optional<Envelope> Bus::receive(const std::string& recipient) {
  std::lock_guard lock(mu_);
  auto it = queues_.find(recipient);
  if (it == queues_.end()) throw ProtocolError("bus: unknown recipient " + recipient);
  if (it->second.empty()) return std::nullopt;
  Envelope env = std::move(it->second.front());
  it->second.pop_front();
  return env;
}

// ---------------------------------------------------------------------------
// Payload schemas. Each kind has a closed key set; extra keys, wrong types or
// non-ciphertext numerics where ciphertext is required all count as leaks.

namespace {

bool is_hex(const nlohmann::json& v) {
  if (!v.is_string()) return false;
  const auto& s = v.get_ref<const std::string&>();
  if (s.empty()) return false;
  for (char c : s)
    if (!((c >= '0' && c <= '9') || (c >= 'a' && c <= 'f'))) return false;
  return true;
}

bool is_hex_array(const nlohmann::json& v) {
  if (!v.is_array() || v.empty()) return false;
  for (const auto& e : v)
    if (!is_hex(e)) return false;
  return true;
}

bool is_number_array(const nlohmann::json& v) {
  if (!v.is_array() || v.empty()) return false;
  for (const auto& e : v)
    if (!e.is_number()) return false;
  return true;
}

bool is_index_array(const nlohmann::json& v) {
  if (!v.is_array()) return false;
  for (const auto& e : v)
    if (!e.is_number_unsigned()) return false;
  return true;
}

bool is_record_id(const nlohmann::json& v) {
  if (!v.is_string()) return false;
  const auto& s = v.get_ref<const std::string&>();
  if (s.empty()) return false;
  for (char c : s)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_')) return false;
  return true;
}

using Check = bool (*)(const nlohmann::json&);

bool check_keys(const nlohmann::json& p, const std::vector<std::pair<const char*, Check>>& fields,
                std::string& why) {
  if (!p.is_object()) {
    why = "payload is not an object";
    return false;
  }
  for (const auto& [key, _] : p.items()) {
    bool known = false;
    for (const auto& f : fields)
      if (key == f.first) known = true;
    if (!known) {
      why = "unexpected field '" + key + "'";
      return false;
    }
  }
  for (const auto& f : fields) {
    auto it = p.find(f.first);
    if (it == p.end()) {
      why = std::string("missing field '") + f.first + "'";
      return false;
    }
    if (!f.second(*it)) {
      why = std::string("field '") + f.first + "' has a disallowed shape";
      return false;
    }
  }
  return true;
}

bool is_uint(const nlohmann::json& v) { return v.is_number_unsigned(); }
bool is_int(const nlohmann::json& v) { return v.is_number_integer(); }
bool is_finite_number(const nlohmann::json& v) {
  return v.is_number() && std::isfinite(v.get<double>());
}
bool is_bool(const nlohmann::json& v) { return v.is_boolean(); }

bool validate_payload(Kind k, const nlohmann::json& p, std::string& why) {
  using enum Kind;
  switch (k) {
    case PubKey:
      return check_keys(p, {{"n", is_hex}, {"g", is_hex}, {"bits", is_uint}}, why);
    case EncParams:
    case EncPartial:
    case EncResidual:
    case EncMaskedGrad:
      return check_keys(p, {{"values", is_hex_array}, {"exponent", is_int}}, why);
    case PlainLoss:
    case AvgLoss:
      return check_keys(p, {{"loss", is_finite_number}}, why);
    case PlainMaskedGrad:
      return check_keys(p, {{"values", is_number_array}}, why);
    case EncGradHess: {
      if (!check_keys(p, {{"g", is_hex_array}, {"h", is_hex_array}, {"exponent", is_int}}, why))
        return false;
      if (p["g"].size() != p["h"].size()) {
        why = "g/h length mismatch";
        return false;
      }
      return true;
    }
    case StatsRequest:
      return check_keys(p, {{"node", is_uint}}, why);
    case EncBinStats: {
      if (!p.is_object() || !p.contains("node") || !p.contains("exponent") ||
          !p.contains("features") || p.size() != 3 || !is_uint(p["node"]) ||
          !is_int(p["exponent"]) || !p["features"].is_array()) {
        why = "EncBinStats: expected {node, exponent, features[]}";
        return false;
      }
      for (const auto& f : p["features"]) {
        std::string inner;
        if (!check_keys(f, {{"feature", is_uint}, {"g", is_hex_array}, {"h", is_hex_array}},
                        inner)) {
          why = "EncBinStats feature entry: " + inner;
          return false;
        }
        if (f["g"].size() != f["h"].size()) {
          why = "EncBinStats feature entry: g/h length mismatch";
          return false;
        }
      }
      return true;
    }
    case SplitNotify:
      return check_keys(p,
                        {{"node", is_uint},
                         {"feature", is_uint},
                         {"edge", is_uint},
                         {"left_node", is_uint},
                         {"right_node", is_uint}},
                        why);
    case SplitRecord:
      return check_keys(p, {{"node", is_uint}, {"record", is_record_id}}, why);
    case NodeSplit:
      return check_keys(p,
                        {{"node", is_uint},
                         {"left_node", is_uint},
                         {"right_node", is_uint},
                         {"left_ids", is_index_array},
                         {"right_ids", is_index_array}},
                        why);
    case SplitQuery:
      return check_keys(p, {{"record", is_record_id}, {"sample", is_uint}}, why);
    case DirectionBit:
      return check_keys(p, {{"record", is_record_id}, {"sample", is_uint}, {"left", is_bool}},
                        why);
  }
  why = "unknown kind";
  return false;
}

}  // namespace

AuditReport audit(Protocol protocol, const std::vector<TraceEntry>& trace, const RoleMap& roles) {
  AuditReport report;
  for (const auto& entry : trace) {
    ++report.checked;
    auto from_it = roles.find(entry.env.from);
    auto to_it = roles.find(entry.env.to);
    if (from_it == roles.end() || to_it == roles.end()) {
      report.violations.push_back({entry.seq, "unregistered participant"});
      continue;
    }
    if (!leg_allowed(protocol, from_it->second, to_it->second, entry.env.kind)) {
      report.violations.push_back(
          {entry.seq, std::string("kind ") + to_string(entry.env.kind) + " not allowed on leg " +
                          entry.env.from + "->" + entry.env.to});
      continue;
    }
    std::string why;
    if (!validate_payload(entry.env.kind, entry.env.payload, why)) {
      report.violations.push_back({entry.seq, std::string(to_string(entry.env.kind)) + ": " + why});
    }
  }
  report.passed = report.violations.empty();
  return report;
}

void export_trace_jsonl(const std::string& path, Protocol protocol, const RoleMap& roles,
                        const std::vector<TraceEntry>& trace, bool full_payload) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write trace: " + path);
  nlohmann::json header;
  header["type"] = "header";
  header["protocol"] = to_string(protocol);
  header["full_payload"] = full_payload;
  nlohmann::json jr = nlohmann::json::object();
  for (const auto& [name, role] : roles) jr[name] = to_string(role);
  header["participants"] = jr;
  out << header.dump() << "\n";

  for (const auto& e : trace) {
    nlohmann::json j;
    j["seq"] = e.seq;
    j["epoch"] = e.env.epoch;
    j["from"] = e.env.from;
    j["to"] = e.env.to;
    j["kind"] = to_string(e.env.kind);
    j["delivered"] = e.delivered;
    std::string dump = e.env.payload.dump();
    j["payload_bytes"] = dump.size();
    char hash[20];
    std::snprintf(hash, sizeof(hash), "%016llx",
                  static_cast<unsigned long long>(fnv1a64(dump)));
    j["payload_hash"] = hash;
    if (full_payload) j["payload"] = e.env.payload;
    out << j.dump() << "\n";
  }
}

LoadedTrace load_trace_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read trace: " + path);
  std::string line;
  if (!std::getline(in, line)) throw DataError("trace: empty file");
  nlohmann::json header = nlohmann::json::parse(line);
  if (header.value("type", "") != "header") throw DataError("trace: missing header line");

  LoadedTrace lt;
  auto proto = protocol_from_string(header.at("protocol").get<std::string>());
  if (!proto) throw DataError("trace: unknown protocol");
  lt.protocol = *proto;
  lt.has_payloads = header.value("full_payload", false);
  for (const auto& [name, role] : header.at("participants").items()) {
    auto r = role_from_string(role.get<std::string>());
    if (!r) throw DataError("trace: unknown role for " + name);
    lt.roles[name] = *r;
  }

  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line);
    TraceEntry e;
    e.seq = j.at("seq").get<uint64_t>();
    e.env.epoch = j.at("epoch").get<int>();
    e.env.from = j.at("from").get<std::string>();
    e.env.to = j.at("to").get<std::string>();
    auto k = kind_from_string(j.at("kind").get<std::string>());
    if (!k) throw DataError("trace: unknown kind at seq " + std::to_string(e.seq));
    e.env.kind = *k;
    e.delivered = j.at("delivered").get<bool>();
    if (lt.has_payloads) e.env.payload = j.at("payload");
    lt.trace.push_back(std::move(e));
  }
  return lt;
}

}  // namespace gridfl::sim

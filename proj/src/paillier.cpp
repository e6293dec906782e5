#include "gridfl/paillier.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

namespace gridfl::paillier {

uint64_t PublicKey::fingerprint() const { return fnv1a64(n.get_str(16)); }

namespace {

Keypair make_keypair(const BigInt& p, const BigInt& q) {
  if (p == q) throw std::invalid_argument("paillier: primes must be distinct");
  Keypair kp;
  kp.pub.n = p * q;
  kp.pub.n_squared = kp.pub.n * kp.pub.n;
  kp.pub.g = kp.pub.n + 1;
  kp.pub.bits = static_cast<int>(mpz_sizeinbase(kp.pub.n.get_mpz_t(), 2));

  BigInt pm1 = p - 1, qm1 = q - 1;
  mpz_lcm(kp.priv.lambda.get_mpz_t(), pm1.get_mpz_t(), qm1.get_mpz_t());

  // With g = n+1, L(g^lambda mod n^2) = lambda mod n, so mu = lambda^-1 mod n.
  if (mpz_invert(kp.priv.mu.get_mpz_t(), kp.priv.lambda.get_mpz_t(), kp.pub.n.get_mpz_t()) == 0)
    throw std::invalid_argument("paillier: lambda not invertible mod n");
  return kp;
}

void check_same_key(const PublicKey& pk, const Ciphertext& c) {
  if (c.key_fp != pk.fingerprint()) throw ProtocolError("paillier: ciphertext key mismatch");
}

}  // namespace

Keypair keygen(int bits, RandomSource& rng) {
  if (bits < kMinKeyBits) throw std::invalid_argument("paillier: key length below 128 bits");
  for (;;) {
    BigInt p = rng.random_prime(bits / 2);
    BigInt q = rng.random_prime(bits / 2);
    if (p == q) continue;
    try {
      Keypair kp = make_keypair(p, q);
      if (kp.pub.bits == bits) return kp;
    } catch (const std::invalid_argument&) {
      // lambda shared a factor with n; draw again
    }
  }
}

Keypair keygen_from_primes(const BigInt& p, const BigInt& q) { return make_keypair(p, q); }

FixedPoint encode(const PublicKey& pk, double v, int fraction_bits, int exponent) {
  if (!std::isfinite(v)) throw std::invalid_argument("encode: value not finite");
  if (fraction_bits <= 0 || exponent < 1) throw std::invalid_argument("encode: bad scale");

  // Decompose v exactly: v = vm * 2^(e2-53) with |vm| < 2^53 integral.
  int e2 = 0;
  double frac = std::frexp(v, &e2);
  auto vm = static_cast<int64_t>(std::ldexp(frac, 53));

  BigInt m(vm);
  long shift = static_cast<long>(fraction_bits) * exponent + e2 - 53;
  if (shift >= 0) {
    m <<= static_cast<unsigned long>(shift);
  } else {
    // Round half away from zero.
    BigInt half = BigInt(1) << static_cast<unsigned long>(-shift - 1);
    if (m >= 0)
      m = (m + half) >> static_cast<unsigned long>(-shift);
    else
      m = -((-m + half) >> static_cast<unsigned long>(-shift));
  }

  BigInt mag = abs(m);
  if (2 * mag >= pk.n)
    throw std::overflow_error("encode: value exceeds fixed-point headroom (|v|*2^(f*e) >= n/2)");

  FixedPoint fp;
  fp.mantissa = m >= 0 ? m : pk.n + m;
  fp.exponent = exponent;
  return fp;
}

namespace {

BigInt signed_mantissa(const PublicKey& pk, const FixedPoint& x) {
  if (x.mantissa < 0 || x.mantissa >= pk.n)
    throw std::invalid_argument("fixed point: mantissa out of [0, n)");
  return 2 * x.mantissa > pk.n ? BigInt(x.mantissa - pk.n) : x.mantissa;
}

}  // namespace

double decode(const PublicKey& pk, const FixedPoint& x, int fraction_bits) {
  BigInt m = signed_mantissa(pk, x);
  signed long e = 0;
  double d = mpz_get_d_2exp(&e, m.get_mpz_t());
  return std::ldexp(d, static_cast<int>(e) - fraction_bits * x.exponent);
}

mpq_class decode_exact(const PublicKey& pk, const FixedPoint& x, int fraction_bits) {
  BigInt m = signed_mantissa(pk, x);
  BigInt den = BigInt(1) << static_cast<unsigned long>(fraction_bits * x.exponent);
  mpq_class q(m, den);
  q.canonicalize();
  return q;
}

Ciphertext encrypt_with_nonce(const PublicKey& pk, const FixedPoint& x, const BigInt& r) {
  if (x.mantissa < 0 || x.mantissa >= pk.n)
    throw std::invalid_argument("encrypt: mantissa out of [0, n)");
  // g = n+1 shortcut: g^m = 1 + m*n (mod n^2)
  BigInt gm = (1 + x.mantissa * pk.n) % pk.n_squared;
  BigInt rn;
  mpz_powm(rn.get_mpz_t(), r.get_mpz_t(), pk.n.get_mpz_t(), pk.n_squared.get_mpz_t());
  Ciphertext c;
  c.value = gm * rn % pk.n_squared;
  c.exponent = x.exponent;
  c.key_fp = pk.fingerprint();
  return c;
}

Ciphertext encrypt(const PublicKey& pk, const FixedPoint& x, RandomSource& rng) {
  return encrypt_with_nonce(pk, x, rng.unit_coprime(pk.n));
}

FixedPoint decrypt(const PublicKey& pk, const PrivateKey& sk, const Ciphertext& c) {
  check_same_key(pk, c);
  BigInt u;
  mpz_powm(u.get_mpz_t(), c.value.get_mpz_t(), sk.lambda.get_mpz_t(), pk.n_squared.get_mpz_t());
  BigInt ell = (u - 1) / pk.n;
  FixedPoint fp;
  fp.mantissa = ell * sk.mu % pk.n;
  fp.exponent = c.exponent;
  return fp;
}

Ciphertext ct_add(const PublicKey& pk, const Ciphertext& a, const Ciphertext& b) {
  check_same_key(pk, a);
  check_same_key(pk, b);
  if (a.key_fp != b.key_fp) throw ProtocolError("ct_add: key mismatch");
  if (a.exponent != b.exponent) throw ProtocolError("ct_add: exponent mismatch, align first");
  Ciphertext c;
  c.value = a.value * b.value % pk.n_squared;
  c.exponent = a.exponent;
  c.key_fp = a.key_fp;
  return c;
}

Ciphertext ct_scalar_mul(const PublicKey& pk, const Ciphertext& a, double s, int fraction_bits) {
  check_same_key(pk, a);
  FixedPoint enc_s = encode(pk, s, fraction_bits, 1);
  BigInt e = signed_mantissa(pk, enc_s);
  Ciphertext c;
  // Negative exponents go through the modular inverse; ciphertexts are units.
  mpz_powm(c.value.get_mpz_t(), a.value.get_mpz_t(), e.get_mpz_t(), pk.n_squared.get_mpz_t());
  c.exponent = a.exponent + 1;
  c.key_fp = a.key_fp;
  return c;
}

Ciphertext ct_align(const PublicKey& pk, const Ciphertext& a, int target_exponent,
                    int fraction_bits) {
  check_same_key(pk, a);
  if (target_exponent < a.exponent) throw ProtocolError("ct_align: cannot lower an exponent");
  if (target_exponent == a.exponent) return a;
  // Multiply the plaintext mantissa by 2^(f*delta): same value, higher exponent.
  unsigned long delta_bits =
      static_cast<unsigned long>(fraction_bits) * static_cast<unsigned long>(target_exponent - a.exponent);
  BigInt e = BigInt(1) << delta_bits;
  Ciphertext c;
  mpz_powm(c.value.get_mpz_t(), a.value.get_mpz_t(), e.get_mpz_t(), pk.n_squared.get_mpz_t());
  c.exponent = target_exponent;
  c.key_fp = a.key_fp;
  return c;
}

Ciphertext ct_average(const PublicKey& pk, std::span<const Ciphertext> cts,
                      const std::optional<std::vector<double>>& weights, int fraction_bits) {
  if (cts.empty()) throw std::invalid_argument("ct_average: empty ciphertext list");
  for (const auto& c : cts) {
    check_same_key(pk, c);
    if (c.exponent != cts.front().exponent)
      throw ProtocolError("ct_average: exponent mismatch across inputs");
  }
  if (weights) {
    if (weights->size() != cts.size())
      throw std::invalid_argument("ct_average: weight count mismatch");
    double sum = 0;
    for (double w : *weights) sum += w;
    if (std::abs(sum - 1.0) > 1e-9)
      throw std::invalid_argument("ct_average: weights must sum to 1");
    Ciphertext acc = ct_scalar_mul(pk, cts[0], (*weights)[0], fraction_bits);
    for (size_t i = 1; i < cts.size(); ++i)
      acc = ct_add(pk, acc, ct_scalar_mul(pk, cts[i], (*weights)[i], fraction_bits));
    return acc;
  }
  Ciphertext acc = cts[0];
  for (size_t i = 1; i < cts.size(); ++i) acc = ct_add(pk, acc, cts[i]);
  return ct_scalar_mul(pk, acc, 1.0 / static_cast<double>(cts.size()), fraction_bits);
}

std::vector<Ciphertext> encrypt_vector(const PublicKey& pk, std::span<const double> values,
                                       int fraction_bits, RandomSource& rng, int exponent) {
  std::vector<Ciphertext> out;
  out.reserve(values.size());
  for (double v : values) out.push_back(encrypt(pk, encode(pk, v, fraction_bits, exponent), rng));
  return out;
}

std::vector<double> decrypt_vector(const PublicKey& pk, const PrivateKey& sk,
                                   std::span<const Ciphertext> cts, int fraction_bits) {
  std::vector<double> out;
  out.reserve(cts.size());
  for (const auto& c : cts) out.push_back(decode(pk, decrypt(pk, sk, c), fraction_bits));
  return out;
}

double decrypt_to_double(const PublicKey& pk, const PrivateKey& sk, const Ciphertext& c,
                         int fraction_bits) {
  return decode(pk, decrypt(pk, sk, c), fraction_bits);
}

std::string bigint_to_hex(const BigInt& v) { return v.get_str(16); }

BigInt bigint_from_hex(const std::string& s) {
  BigInt v;
  if (s.empty() || mpz_set_str(v.get_mpz_t(), s.c_str(), 16) != 0)
    throw DataError("bad hex big-integer");
  return v;
}

std::string bigint_to_base64(const BigInt& v) {
  if (v < 0) throw std::invalid_argument("bigint_to_base64: negative");
  size_t count = 0;
  std::vector<uint8_t> bytes((mpz_sizeinbase(v.get_mpz_t(), 2) + 7) / 8);
  if (bytes.empty()) bytes.resize(1);
  mpz_export(bytes.data(), &count, 1, 1, 0, 0, v.get_mpz_t());
  if (count == 0) bytes.assign(1, 0);
  return base64_encode(bytes);
}

BigInt bigint_from_base64(const std::string& s) {
  std::vector<uint8_t> bytes = base64_decode(s);
  BigInt v;
  mpz_import(v.get_mpz_t(), bytes.size(), 1, 1, 0, 0, bytes.data());
  return v;
}

nlohmann::json public_key_to_json(const PublicKey& pk) {
  return {{"n", bigint_to_base64(pk.n)}, {"g", bigint_to_base64(pk.g)}};
}

PublicKey public_key_from_json(const nlohmann::json& j) {
  PublicKey pk;
  pk.n = bigint_from_base64(j.at("n").get<std::string>());
  pk.n_squared = pk.n * pk.n;
  pk.g = bigint_from_base64(j.at("g").get<std::string>());
  if (pk.g != pk.n + 1) throw DataError("public key: unsupported generator");
  pk.bits = static_cast<int>(mpz_sizeinbase(pk.n.get_mpz_t(), 2));
  return pk;
}

nlohmann::json private_key_to_json(const PrivateKey& sk) {
  return {{"lambda", bigint_to_base64(sk.lambda)}, {"mu", bigint_to_base64(sk.mu)}};
}

PrivateKey private_key_from_json(const nlohmann::json& j) {
  PrivateKey sk;
  sk.lambda = bigint_from_base64(j.at("lambda").get<std::string>());
  sk.mu = bigint_from_base64(j.at("mu").get<std::string>());
  return sk;
}

}  // namespace gridfl::paillier

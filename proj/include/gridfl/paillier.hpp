#pragma once

#include <gmpxx.h>

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gridfl/random.hpp"
#include "json.hpp"

namespace gridfl::paillier {

constexpr int kDefaultFractionBits = 40;
constexpr int kMinKeyBits = 128;

struct PublicKey {
  BigInt n;          // modulus, product of two primes
  BigInt n_squared;  // cached n*n
  BigInt g;          // generator, fixed to n+1
  int bits = 0;

  bool operator==(const PublicKey& o) const { return n == o.n; }
  uint64_t fingerprint() const;
};

struct PrivateKey {
  BigInt lambda;  // lcm(p-1, q-1)
  BigInt mu;      // lambda^-1 mod n
};

struct Keypair {
  PublicKey pub;
  PrivateKey priv;
};

/// Generates a fresh keypair; primes are bits/2 each. Rejects bits < 128.
Keypair keygen(int bits, RandomSource& rng);

/// Test hook: build a keypair from forced primes (hand-checkable examples).
Keypair keygen_from_primes(const BigInt& p, const BigInt& q);

/// Signed fixed-point encoding of a real into Z_n. `exponent` counts how many
/// 2^-f scalings apply: the represented value is signed(mantissa) * 2^(-f*exponent),
/// with negatives stored as n - |m| and read back by the m > n/2 threshold rule.
struct FixedPoint {
  BigInt mantissa;  // in [0, n)
  int exponent = 1;
};

/// Exact encode: the mantissa is round(v * 2^(f*exponent)) computed without
/// double rounding (the double is decomposed exactly first). Throws
/// std::overflow_error when |v| * 2^(f*exponent) >= n/2.
FixedPoint encode(const PublicKey& pk, double v, int fraction_bits = kDefaultFractionBits,
                  int exponent = 1);

double decode(const PublicKey& pk, const FixedPoint& x, int fraction_bits = kDefaultFractionBits);

/// Exact rational value of an encoding; test oracles compare in this space.
mpq_class decode_exact(const PublicKey& pk, const FixedPoint& x,
                       int fraction_bits = kDefaultFractionBits);

struct Ciphertext {
  BigInt value;  // in [0, n^2), coprime to n^2
  int exponent = 1;
  uint64_t key_fp = 0;  // fingerprint of the encrypting key
};

/// Randomized encryption; two calls on the same plaintext give different
/// ciphertexts. With g = n+1 this is (1 + m*n) * r^n mod n^2.
Ciphertext encrypt(const PublicKey& pk, const FixedPoint& x, RandomSource& rng);

/// Deterministic variant with a caller-supplied nonce; for tests only.
Ciphertext encrypt_with_nonce(const PublicKey& pk, const FixedPoint& x, const BigInt& r);

FixedPoint decrypt(const PublicKey& pk, const PrivateKey& sk, const Ciphertext& c);

/// Dec(a (+) b) = Dec(a) + Dec(b). Requires equal exponents and keys.
Ciphertext ct_add(const PublicKey& pk, const Ciphertext& a, const Ciphertext& b);

/// Dec(a (*) s) = Dec(a) * s. The result's exponent is a.exponent + 1 because
/// the plaintext picked up one more 2^-f scale from the encoded scalar.
Ciphertext ct_scalar_mul(const PublicKey& pk, const Ciphertext& a, double s,
                         int fraction_bits = kDefaultFractionBits);

/// Raises a ciphertext's exponent without changing its value (multiplies the
/// mantissa by 2^f per step). Needed before ct_add of mixed-exponent inputs.
Ciphertext ct_align(const PublicKey& pk, const Ciphertext& a, int target_exponent,
                    int fraction_bits = kDefaultFractionBits);

/// Server-side ciphertext mean, optionally weighted (weights must sum to 1).
Ciphertext ct_average(const PublicKey& pk, std::span<const Ciphertext> cts,
                      const std::optional<std::vector<double>>& weights = std::nullopt,
                      int fraction_bits = kDefaultFractionBits);

// Vector conveniences used by the protocol engines.
std::vector<Ciphertext> encrypt_vector(const PublicKey& pk, std::span<const double> values,
                                       int fraction_bits, RandomSource& rng, int exponent = 1);
std::vector<double> decrypt_vector(const PublicKey& pk, const PrivateKey& sk,
                                   std::span<const Ciphertext> cts, int fraction_bits);

double decrypt_to_double(const PublicKey& pk, const PrivateKey& sk, const Ciphertext& c,
                         int fraction_bits = kDefaultFractionBits);

// Wire/file formats: hex for ciphertext values, base64 for key material.
std::string bigint_to_hex(const BigInt& v);
BigInt bigint_from_hex(const std::string& s);
std::string bigint_to_base64(const BigInt& v);
BigInt bigint_from_base64(const std::string& s);

nlohmann::json public_key_to_json(const PublicKey& pk);
PublicKey public_key_from_json(const nlohmann::json& j);
nlohmann::json private_key_to_json(const PrivateKey& sk);
PrivateKey private_key_from_json(const nlohmann::json& j);

}  // namespace gridfl::paillier

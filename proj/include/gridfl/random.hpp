#pragma once

#include <gmpxx.h>

#include <cstdint>
#include <random>

#include "gridfl/util.hpp"

namespace gridfl {

using BigInt = mpz_class;

/// Deterministic randomness for one logical actor. Double draws come from a
/// Mersenne Twister, big-integer draws from GMP's; both streams derive from
/// the same 64-bit seed so a run is reproducible end to end.
class RandomSource {
 public:
  explicit RandomSource(uint64_t seed) : grand_(gmp_randinit_mt), mt_(seed) {
    grand_.seed(static_cast<unsigned long>(splitmix64(seed ^ 0xa5a5a5a5a5a5a5a5ULL)));
  }

  uint64_t next_u64() { return mt_(); }

  double uniform(double lo, double hi) {
    std::uniform_real_distribution<double> d(lo, hi);
    return d(mt_);
  }

  double gaussian(double mean, double sigma) {
    std::normal_distribution<double> d(mean, sigma);
    return d(mt_);
  }

  /// Uniform in [0, bound).
  BigInt uniform_below(const BigInt& bound) { return grand_.get_z_range(bound); }

  /// Uniform unit of Z_n: in [1, n) with gcd(r, n) == 1.
  BigInt unit_coprime(const BigInt& n) {
    for (;;) {
      BigInt r = grand_.get_z_range(n - 1) + 1;
      BigInt g;
      mpz_gcd(g.get_mpz_t(), r.get_mpz_t(), n.get_mpz_t());
      if (g == 1) return r;
    }
  }

  /// Random prime of exactly `bits` bits with the top two bits set, so a
  /// product of two such primes has exactly 2*bits bits.
  BigInt random_prime(int bits) {
    if (bits < 8) throw std::invalid_argument("random_prime: bits too small");
    for (;;) {
      BigInt c = grand_.get_z_bits(bits);
      mpz_setbit(c.get_mpz_t(), static_cast<mp_bitcnt_t>(bits - 1));
      mpz_setbit(c.get_mpz_t(), static_cast<mp_bitcnt_t>(bits - 2));
      mpz_setbit(c.get_mpz_t(), 0);
      if (mpz_probab_prime_p(c.get_mpz_t(), 30) > 0) return c;
    }
  }

  std::mt19937_64& engine() { return mt_; }

 private:
  gmp_randclass grand_;
  std::mt19937_64 mt_;
};

}  // namespace gridfl

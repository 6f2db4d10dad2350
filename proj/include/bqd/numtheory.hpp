#pragma once

#include <array>
#include <utility>
#include <vector>

#include "bqd/int.hpp"

namespace bqd::numtheory {

// Prime factorization of |n|, primes strictly increasing.
struct Factorization {
  Int n;
  std::vector<std::pair<Int, unsigned>> factors;

  Int reassemble() const {
    Int p = 1;
    for (const auto& [q, e] : factors)
      for (unsigned i = 0; i < e; ++i) p *= q;
    return p;
  }
};

// Largest r with r^2 <= n. Negative input is a domain error.
Int isqrt(const Int& n);

// True iff n is a perfect square; *root receives the nonnegative root.
bool is_square(const Int& n, Int* root = nullptr);

// Deterministic Miller-Rabin below 2^64, strong BPSW above.
bool is_prime(const Int& n);

// Trial division to 10^4 followed by Pollard rho. |n| above the bound
// (default 2^128) raises ResourceError.
Factorization factorize(const Int& n, unsigned max_bits = 128);

// Modular inverse; DomainError when gcd(a, m) != 1.
Int inv_mod(const Int& a, const Int& m);

// All B in [0, m) with B^2 = D (mod m), built per prime power of fact_m
// and combined by CRT. Handles D with common factors with m.
std::vector<Int> sqrt_mod(const Int& D, const Int& m, const Factorization& fact_m);
std::vector<Int> sqrt_mod(const Int& D, const Int& m);

// Unique r in [0, prod moduli) congruent to residues[i] mod moduli[i].
// Moduli must be pairwise coprime (DomainError otherwise).
Int crt(const std::vector<Int>& residues, const std::vector<Int>& moduli);

// Splits M into six pairwise-coprime factors m_ij with product M and
// gcd(m_ij, dets[ij]) = 1 per position. CertInvalid when no prime of M
// is coprime to any det.
std::array<Int, 6> split_modulus(const Int& M, const std::array<Int, 6>& dets);

}  // namespace bqd::numtheory

#pragma once

#include <gmpxx.h>

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace bqd {

// Arbitrary-precision integers and rationals. GMP does the limb work;
// all algorithmic content lives in this project.
using Int = mpz_class;
using Rat = mpq_class;

// Thrown when an argument is outside an operation's domain.
struct DomainError : std::invalid_argument {
  explicit DomainError(const std::string& what) : std::invalid_argument(what) {}
};

// Thrown when a configured size/time bound is exceeded. Distinct from
// DomainError so callers can map it to a different exit code.
struct ResourceError : std::runtime_error {
  explicit ResourceError(const std::string& what) : std::runtime_error(what) {}
};

// Thrown on internal consistency failures (bugs, not bad input).
struct InternalError : std::logic_error {
  explicit InternalError(const std::string& what) : std::logic_error(what) {}
};

// Thrown by certificate evaluation helpers when certificate data is
// malformed in a way that makes evaluation impossible.
struct CertInvalid : std::runtime_error {
  explicit CertInvalid(const std::string& what) : std::runtime_error(what) {}
};

inline int sgn(const Int& x) { return mpz_sgn(x.get_mpz_t()); }

// Number of bits in |x|; bitlen(0) = 0.
inline size_t bitlen(const Int& x) {
  if (x == 0) return 0;
  return mpz_sizeinbase(x.get_mpz_t(), 2);
}

// log2|x| as a double (0 for x = 0), exact enough for bound checks.
inline double log2_abs(const Int& x) {
  if (x == 0) return 0.0;
  long exp2 = 0;
  double d = mpz_get_d_2exp(&exp2, x.get_mpz_t());
  return static_cast<double>(exp2) + std::log2(d < 0 ? -d : d);
}

// The operation-counting log convention used throughout the bound
// checks: log2|x| for |x| >= 4, and the constant 2 below that.
inline double plog(const Int& x) {
  Int a = abs(x);
  if (a < 4) return 2.0;
  return log2_abs(a);
}

inline double plog(double x) {
  double a = x < 0 ? -x : x;
  if (a < 4.0) return 2.0;
  return std::log2(a);
}

inline Int from_long(long v) { return Int(v); }

}  // namespace bqd

#pragma once

#include <cstdint>
#include <string>

#include "bqd/int.hpp"

namespace bqd::floatp {

// Shared precision/exponent-range configuration for a computation.
struct FpConfig {
  long p;  // fraction digits (binary)
  long N;  // exponent magnitude bound, |e| < N
};

// Normalized base-2 excess-0 floating-point number with p digits:
// value = frac * 2^(e-p), with 2^(p-1) <= |frac| < 2^p, or frac = e = 0.
// All rounding is integer arithmetic; results are platform-independent.
struct FpNum {
  Int frac;  // 2^p * f
  long e = 0;

  bool is_zero() const { return frac == 0; }
  int sign() const { return sgn(frac); }
  // Exact value as a scaled pair (frac, e-p): value = frac * 2^(e-p).
  std::string str() const;
};

// Exact dyadic input: value = mant * 2^exp2.
struct Dyadic {
  Int mant;
  long exp2 = 0;
};

struct Overflow : std::runtime_error {
  explicit Overflow(const std::string& w) : std::runtime_error(w) {}
};

// Round to p significant binary digits, half away from zero.
FpNum round_p(const Dyadic& x, const FpConfig& cfg);
FpNum from_int(const Int& x, const FpConfig& cfg);

// Exact dyadic value of a FpNum.
Dyadic to_dyadic(const FpNum& x, const FpConfig& cfg);

FpNum fadd(const FpNum& x, const FpNum& y, const FpConfig& cfg);
FpNum fmul(const FpNum& x, const FpNum& y, const FpConfig& cfg);

// Sound error interval: |true - val| < 2^err_exp, or exact when
// err_exp == kExact.
struct Enclosure {
  FpNum val;
  long err_exp;

  static constexpr long kExact = INT64_MIN / 4;
  bool exact() const { return err_exp == kExact; }
};

Enclosure enc_exact(const Int& x, const FpConfig& cfg);
Enclosure enc_add(const Enclosure& a, const Enclosure& b, const FpConfig& cfg);
Enclosure enc_mul(const Enclosure& a, const Enclosure& b, const FpConfig& cfg);

// +1 / -1 when the enclosure excludes zero, 0 for "unknown".
int sign_certified(const Enclosure& a);

}  // namespace bqd::floatp

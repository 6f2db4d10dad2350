#include "bqd/floatp.hpp"

namespace bqd::floatp {

namespace {

constexpr long kNegInf = Enclosure::kExact;  // "no contribution" sentinel

// Exponent of the union bound: 2^a + 2^b < 2^(max(a,b)+1).
long err_union(long a, long b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  return std::max(a, b) + 1;
}

long err_sum_exp(long a, long b) {  // product of two 2^-bounded factors
  if (a == kNegInf || b == kNegInf) return kNegInf;
  return a + b;
}

// Smallest t with |d| < 2^t for a nonzero dyadic d.
long ceil_exp(const Dyadic& d) {
  return long(bitlen(d.mant)) + d.exp2;
}

Dyadic dyadic_sub(const Dyadic& x, const Dyadic& y) {
  long e = std::min(x.exp2, y.exp2);
  Int m = (x.mant << (x.exp2 - e)) - (y.mant << (y.exp2 - e));
  return {m, e};
}

}  // namespace

std::string FpNum::str() const {
  return "(" + std::to_string(e) + "," + frac.get_str() + ")";
}

FpNum round_p(const Dyadic& x, const FpConfig& cfg) {
  if (x.mant == 0) return FpNum{Int(0), 0};
  long bl = long(bitlen(x.mant));
  long e = bl + x.exp2;
  Int frac;
  if (bl <= cfg.p) {
    frac = x.mant << (cfg.p - bl);
  } else {
    long k = bl - cfg.p;
    Int mag = abs(x.mant);
    mag = (mag + (Int(1) << (k - 1))) >> k;  // half away from zero
    if (bitlen(mag) > size_t(cfg.p)) {       // carried into 2^p
      mag >>= 1;
      e += 1;
    }
    frac = sgn(x.mant) < 0 ? -mag : mag;
  }
  if (e >= cfg.N || e <= -cfg.N)
    throw Overflow("round_p: exponent " + std::to_string(e) + " out of range");
  return FpNum{frac, e};
}

FpNum from_int(const Int& x, const FpConfig& cfg) { return round_p({x, 0}, cfg); }

Dyadic to_dyadic(const FpNum& x, const FpConfig& cfg) {
  if (x.is_zero()) return {Int(0), 0};
  return {x.frac, x.e - cfg.p};
}

namespace {

// Shared add/mul tail: flush-to-zero below 2^-N, overflow at 2^N.
FpNum finish(const Dyadic& exact, const FpConfig& cfg) {
  if (exact.mant == 0) return FpNum{Int(0), 0};
  long e = ceil_exp(exact);
  if (e <= -cfg.N) return FpNum{Int(0), 0};  // underflow flushes to zero
  if (e > cfg.N) throw Overflow("floating-point overflow");
  return round_p(exact, cfg);
}

}  // namespace

FpNum fadd(const FpNum& x, const FpNum& y, const FpConfig& cfg) {
  Dyadic dx = to_dyadic(x, cfg), dy = to_dyadic(y, cfg);
  long e = std::min(dx.exp2, dy.exp2);
  Dyadic sum{(dx.mant << (dx.exp2 - e)) + (dy.mant << (dy.exp2 - e)), e};
  return finish(sum, cfg);
}

FpNum fmul(const FpNum& x, const FpNum& y, const FpConfig& cfg) {
  if (x.is_zero() || y.is_zero()) return FpNum{Int(0), 0};  // exact
  Dyadic dx = to_dyadic(x, cfg), dy = to_dyadic(y, cfg);
  Dyadic prod{dx.mant * dy.mant, dx.exp2 + dy.exp2};
  return finish(prod, cfg);
}

Enclosure enc_exact(const Int& x, const FpConfig& cfg) {
  FpNum v = from_int(x, cfg);
  Dyadic diff = dyadic_sub({x, 0}, to_dyadic(v, cfg));
  long err = diff.mant == 0 ? Enclosure::kExact : ceil_exp(diff);
  return {v, err};
}

namespace {

// Exact distance between the fp result and the exact dyadic operand value.
long op_round_err(const FpNum& v, const Dyadic& exact, const FpConfig& cfg) {
  Dyadic diff = dyadic_sub(exact, to_dyadic(v, cfg));
  if (diff.mant == 0) return Enclosure::kExact;
  return ceil_exp(diff);
}

long val_exp(const Enclosure& x) {  // |val| < 2^val_exp
  return x.val.is_zero() ? kNegInf : x.val.e;
}

long bound_exp(const Enclosure& x) {  // |true| < 2^bound_exp
  if (x.exact()) return val_exp(x);
  return err_union(val_exp(x), x.err_exp);
}

}  // namespace

Enclosure enc_add(const Enclosure& a, const Enclosure& b, const FpConfig& cfg) {
  Dyadic da = to_dyadic(a.val, cfg), db = to_dyadic(b.val, cfg);
  long e = std::min(da.exp2, db.exp2);
  Dyadic exact{(da.mant << (da.exp2 - e)) + (db.mant << (db.exp2 - e)), e};
  FpNum v = finish(exact, cfg);
  long r = op_round_err(v, exact, cfg);
  long in = err_union(a.exact() ? kNegInf : a.err_exp,
                      b.exact() ? kNegInf : b.err_exp);
  return {v, err_union(in, r)};
}

Enclosure enc_mul(const Enclosure& a, const Enclosure& b, const FpConfig& cfg) {
  FpNum v = fmul(a.val, b.val, cfg);
  long r;
  if (a.val.is_zero() || b.val.is_zero()) {
    r = Enclosure::kExact;  // multiplication by an exact fp zero
  } else {
    Dyadic da = to_dyadic(a.val, cfg), db = to_dyadic(b.val, cfg);
    r = op_round_err(v, {da.mant * db.mant, da.exp2 + db.exp2}, cfg);
  }
  // ab - ab_fp = (a - a_fp) b + a_fp (b - b_fp)
  long t1 = a.exact() ? kNegInf : err_sum_exp(a.err_exp, bound_exp(b));
  long t2 = b.exact() ? kNegInf : err_sum_exp(val_exp(a), b.err_exp);
  return {v, err_union(err_union(t1, t2), r)};
}

int sign_certified(const Enclosure& a) {
  if (a.val.is_zero()) return 0;
  if (a.exact()) return a.val.sign();
  if (a.val.e - 1 > a.err_exp) return a.val.sign();
  return 0;
}

}  // namespace bqd::floatp

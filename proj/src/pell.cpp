#include "bqd/pell.hpp"

#include <algorithm>
#include <cmath>

#include "bqd/numtheory.hpp"

namespace bqd::pell {

using numtheory::factorize;
using numtheory::isqrt;
using numtheory::is_square;

CfExpansion cf_sqrt(const Int& D) {
  if (D <= 0 || is_square(D)) throw DomainError("cf_sqrt: D must be nonsquare");
  CfExpansion cf;
  Int a0 = isqrt(D);
  cf.mu0 = a0;
  // Standard PQa iteration: x_i = (P_i + sqrt D)/Q_i.
  Int P = a0, Q = D - a0 * a0;
  Int P1 = P, Q1 = Q;
  Int guard = 20 * isqrt(D) + 1000;
  for (Int it = 0; it <= guard; ++it) {
    Int a = (P + a0) / Q;
    cf.periodic.push_back(a);
    P = a * Q - P;
    Q = (D - P * P) / Q;
    if (P == P1 && Q == Q1) return cf;  // state recurred; block complete
  }
  throw InternalError("cf_sqrt: period not found");
}

PellSolution fundamental_solution(const Int& D) {
  CfExpansion cf = cf_sqrt(D);
  size_t n = cf.periodic.size();
  // Convergents p_k/q_k of sqrt(D) = [mu0; mu1, mu2, ...]. The pair
  // (p_{n-1}, q_{n-1}) solves x^2 - D y^2 = (-1)^n; square it when n odd.
  size_t steps = (n % 2 == 0) ? n : 2 * n;
  Int pm1 = 1, p0 = cf.mu0, qm1 = 0, q0 = 1;
  for (size_t i = 1; i < steps; ++i) {
    Int a = cf.periodic[(i - 1) % n];
    Int p1 = a * p0 + pm1, q1 = a * q0 + qm1;
    pm1 = p0; p0 = p1; qm1 = q0; q0 = q1;
  }
  PellSolution s{D, p0, q0};
  if (s.t1 * s.t1 - D * s.u1 * s.u1 != 1)
    throw InternalError("fundamental_solution: Pell identity failed");
  return s;
}

bool negative_pell(const Int& D, Int* x, Int* y) {
  CfExpansion cf = cf_sqrt(D);
  size_t n = cf.periodic.size();
  if (n % 2 == 0) return false;
  Int pm1 = 1, p0 = cf.mu0, qm1 = 0, q0 = 1;
  for (size_t i = 1; i < n; ++i) {
    Int a = cf.periodic[i - 1];
    Int p1 = a * p0 + pm1, q1 = a * q0 + qm1;
    pm1 = p0; p0 = p1; qm1 = q0; q0 = q1;
  }
  if (p0 * p0 - D * q0 * q0 != -1)
    throw InternalError("negative_pell: convergent identity failed");
  if (x) *x = p0;
  if (y) *y = q0;
  return true;
}

namespace {

struct Mat2 {
  Int a, b, c, d;  // [[a,b],[c,d]]
};

Mat2 mul_mod(const Mat2& x, const Mat2& y, const Int& M) {
  return {(x.a * y.a + x.b * y.c) % M, (x.a * y.b + x.b * y.d) % M,
          (x.c * y.a + x.d * y.c) % M, (x.c * y.b + x.d * y.d) % M};
}

}  // namespace

std::pair<Int, Int> power_mod(const PellSolution& sol, const Int& k, const Int& M) {
  if (M < 1) throw DomainError("power_mod: modulus must be positive");
  if (k < 0) throw DomainError("power_mod: negative exponent");
  Mat2 acc{Int(1) % M, Int(0), Int(0), Int(1) % M};
  Mat2 base{sol.t1 % M, sol.D * sol.u1 % M, sol.u1 % M, sol.t1 % M};
  Int e = k;
  while (e > 0) {
    if (mpz_odd_p(e.get_mpz_t())) acc = mul_mod(acc, base, M);
    base = mul_mod(base, base, M);
    e >>= 1;
  }
  return {acc.a, acc.c};  // (t_k, u_k) mod M
}

namespace {

bool is_one_at(const PellSolution& sol, const Int& k, const Int& m) {
  auto [t, u] = power_mod(sol, k, m);
  return t == 1 % m && u == 0;
}

// Minimal P with epsilon^P = 1 mod p, given a candidate multiple cand.
Int minimize_over_divisors(const PellSolution& sol, const Int& cand, const Int& p) {
  // Enumerate divisors of cand in increasing order.
  std::vector<Int> divs;
  auto f = factorize(cand);
  divs.push_back(1);
  for (const auto& [q, e] : f.factors) {
    size_t sz = divs.size();
    Int qe = 1;
    for (unsigned i = 0; i < e; ++i) {
      qe *= q;
      for (size_t j = 0; j < sz; ++j) divs.push_back(divs[j] * qe);
    }
  }
  std::sort(divs.begin(), divs.end());
  for (const Int& d : divs)
    if (is_one_at(sol, d, p)) return d;
  throw InternalError("period_mod: candidate period is not a period");
}

Int period_prime(const PellSolution& sol, const Int& p) {
  if (p == 2) {
    // P(2) = 1 or 2.
    return is_one_at(sol, 1, 2) ? Int(1) : Int(2);
  }
  Int cand;
  if (mpz_divisible_p(sol.D.get_mpz_t(), p.get_mpz_t())) {
    cand = 2 * p;
  } else {
    int leg = mpz_legendre(sol.D.get_mpz_t(), p.get_mpz_t());
    if (leg == 1)
      cand = p - 1;
    else
      cand = 2 * (p + 1);
  }
  return minimize_over_divisors(sol, cand, p);
}

Int period_prime_power(const PellSolution& sol, const Int& p, unsigned a) {
  Int R = period_prime(sol, p);
  Int pk = p;
  for (unsigned i = 1; i < a; ++i) {
    pk *= p;
    if (!is_one_at(sol, R, pk)) R *= p;
  }
  return R;
}

}  // namespace

RecurrencePeriod period_mod(const PellSolution& sol, const Int& m) {
  if (m < 1) throw DomainError("period_mod: modulus must be positive");
  if (m == 1) return {sol.D, m, Int(1)};
  Int P = 1;
  for (const auto& [p, e] : factorize(m).factors)
    P = lcm(P, period_prime_power(sol, p, e));
  if (!is_one_at(sol, P, m)) throw InternalError("period_mod: combined period failed");
  return {sol.D, m, P};
}

Int period_bound(const Int& m) {
  if (m < 1) throw DomainError("period_bound: modulus must be positive");
  double lg = (m < 4) ? 2.0 : std::log(m.get_d());
  double v = 2.0 * m.get_d() * (lg + 1.0);
  Int r(std::ceil(v - 1e-9));
  return r;
}

}  // namespace bqd::pell

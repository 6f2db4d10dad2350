#include "bqd/numtheory.hpp"

#include <algorithm>
#include <map>

namespace bqd::numtheory {

Int isqrt(const Int& n) {
  if (n < 0) throw DomainError("isqrt: negative input");
  Int r;
  mpz_sqrt(r.get_mpz_t(), n.get_mpz_t());
  return r;
}

bool is_square(const Int& n, Int* root) {
  if (n < 0) return false;
  if (mpz_perfect_square_p(n.get_mpz_t()) == 0) return false;
  if (root) mpz_sqrt(root->get_mpz_t(), n.get_mpz_t());
  return true;
}

namespace {

Int pow_mod(const Int& base, const Int& exp, const Int& mod) {
  Int r;
  mpz_powm(r.get_mpz_t(), base.get_mpz_t(), exp.get_mpz_t(), mod.get_mpz_t());
  return r;
}

// One strong-pseudoprime round to base a; n odd, n-1 = d*2^s.
bool sprp(const Int& n, const Int& a, const Int& d, unsigned long s) {
  Int x = pow_mod(a % n, d, n);
  if (x == 1 || x == n - 1) return true;
  for (unsigned long i = 1; i < s; ++i) {
    x = (x * x) % n;
    if (x == n - 1) return true;
  }
  return false;
}

// Strong Lucas test with Selfridge parameters. n odd, not a square.
bool strong_lucas(const Int& n) {
  // Find D = 5, -7, 9, ... with Jacobi(D, n) = -1.
  Int D = 5;
  while (true) {
    int j = mpz_jacobi(D.get_mpz_t(), n.get_mpz_t());
    if (j == -1) break;
    if (j == 0 && abs(D) != n) return false;
    if (D > 0)
      D = -(D + 2);
    else
      D = -(D - 2);
  }
  Int P = 1, Q = (1 - D) / 4;

  Int d = n + 1;
  unsigned long s = mpz_scan1(d.get_mpz_t(), 0);
  d >>= s;

  // Compute U_d, V_d mod n by binary expansion of d (MSB first).
  Int U = 1, V = P, Qk = Q % n;
  size_t bits = mpz_sizeinbase(d.get_mpz_t(), 2);
  Int inv2 = inv_mod(2, n);
  for (size_t i = bits - 1; i-- > 0;) {
    // double: U2k = U*V, V2k = V^2 - 2Q^k
    U = (U * V) % n;
    V = (V * V - 2 * Qk) % n;
    Qk = (Qk * Qk) % n;
    if (mpz_tstbit(d.get_mpz_t(), i)) {
      // increment: U' = (P*U + V)/2, V' = (D*U + P*V)/2
      Int U1 = ((P * U + V) % n * inv2) % n;
      Int V1 = ((D * U + P * V) % n * inv2) % n;
      U = U1;
      V = V1;
      Qk = (Qk * Q) % n;
    }
  }
  U = ((U % n) + n) % n;
  V = ((V % n) + n) % n;
  if (U == 0 || V == 0) return true;
  for (unsigned long i = 1; i < s; ++i) {
    V = (V * V - 2 * Qk) % n;
    Qk = (Qk * Qk) % n;
    V = ((V % n) + n) % n;
    if (V == 0) return true;
  }
  return false;
}

}  // namespace

bool is_prime(const Int& n) {
  if (n < 2) return false;
  static const unsigned long small_primes[] = {2,  3,  5,  7,  11, 13, 17, 19,
                                               23, 29, 31, 37, 41, 43, 47};
  for (unsigned long p : small_primes) {
    if (n == p) return true;
    if (mpz_divisible_ui_p(n.get_mpz_t(), p)) return false;
  }
  Int d = n - 1;
  unsigned long s = mpz_scan1(d.get_mpz_t(), 0);
  d >>= s;

  if (mpz_sizeinbase(n.get_mpz_t(), 2) <= 64) {
    // This base set is deterministic for all n < 3.3*10^24 > 2^64.
    for (unsigned long a : {2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37})
      if (!sprp(n, Int(a), d, s)) return false;
    return true;
  }
  // BPSW: base-2 strong pseudoprime + strong Lucas.
  if (!sprp(n, 2, d, s)) return false;
  if (is_square(n)) return false;
  return strong_lucas(n);
}

namespace {

// Brent's cycle variant of Pollard rho. n odd composite, not a prime power
// of a small prime. Returns a nontrivial factor.
Int pollard_rho(const Int& n) {
  if (mpz_even_p(n.get_mpz_t())) return 2;
  gmp_randclass rng(gmp_randinit_default);
  rng.seed(0xb5297a4d3f8c1247UL);
  while (true) {
    Int y = rng.get_z_range(n - 3) + 2;
    Int c = rng.get_z_range(n - 2) + 1;
    Int x = y, ys = y, q = 1, g = 1;
    const unsigned long m = 128;
    unsigned long r = 1;
    while (g == 1) {
      x = y;
      for (unsigned long i = 0; i < r; ++i) y = (y * y + c) % n;
      for (unsigned long k = 0; k < r && g == 1; k += m) {
        ys = y;
        unsigned long lim = std::min(m, r - k);
        for (unsigned long i = 0; i < lim; ++i) {
          y = (y * y + c) % n;
          q = q * abs(x - y) % n;
        }
        g = gcd(q, n);
      }
      r <<= 1;
    }
    if (g == n) {
      g = 1;
      while (g == 1) {
        ys = (ys * ys + c) % n;
        g = gcd(abs(x - ys), n);
      }
    }
    if (g != n) return g;
  }
}

void factor_rec(const Int& n, std::map<Int, unsigned>& out) {
  if (n == 1) return;
  if (is_prime(n)) {
    out[n]++;
    return;
  }
  Int f = pollard_rho(n);
  factor_rec(f, out);
  factor_rec(n / f, out);
}

}  // namespace

Factorization factorize(const Int& n, unsigned max_bits) {
  if (n == 0) throw DomainError("factorize: zero input");
  Int m = abs(n);
  if (bitlen(m) > max_bits)
    throw ResourceError("factorize: input exceeds configured bound");
  Factorization f;
  f.n = n;
  std::map<Int, unsigned> acc;
  for (unsigned long p = 2; p <= 10000 && m > 1; p += (p == 2 ? 1 : 2)) {
    if (Int(p) * p > m) break;
    while (mpz_divisible_ui_p(m.get_mpz_t(), p)) {
      acc[Int(p)]++;
      m /= p;
    }
  }
  if (m > 1) factor_rec(m, acc);
  for (auto& [p, e] : acc) f.factors.emplace_back(p, e);
  return f;
}

Int inv_mod(const Int& a, const Int& m) {
  Int r;
  if (mpz_invert(r.get_mpz_t(), a.get_mpz_t(), m.get_mpz_t()) == 0)
    throw DomainError("inv_mod: not invertible");
  return r;
}

namespace {

Int mod_pos(const Int& a, const Int& m) {
  Int r = a % m;
  if (r < 0) r += m;
  return r;
}

// Square roots of c mod odd prime p, gcd(c, p) = 1 assumed, via
// Tonelli-Shanks. Empty when c is a non-residue.
std::vector<Int> ts_sqrt(const Int& c, const Int& p) {
  if (p == 2) throw InternalError("ts_sqrt: p must be odd");
  int leg = mpz_legendre(c.get_mpz_t(), p.get_mpz_t());
  if (leg != 1) return {};
  Int x;
  if (p % 4 == 3) {
    x = pow_mod(c, (p + 1) / 4, p);
  } else {
    // Tonelli-Shanks.
    Int q = p - 1;
    unsigned long s = mpz_scan1(q.get_mpz_t(), 0);
    q >>= s;
    Int z = 2;
    while (mpz_legendre(z.get_mpz_t(), p.get_mpz_t()) != -1) z++;
    Int m(static_cast<unsigned long>(s));
    Int cc = pow_mod(z, q, p);
    Int t = pow_mod(c, q, p);
    Int r = pow_mod(c, (q + 1) / 2, p);
    while (t != 1) {
      Int t2 = t;
      unsigned long i = 0;
      while (t2 != 1) {
        t2 = (t2 * t2) % p;
        ++i;
      }
      Int b = cc;
      for (Int j = 0; j < m - Int(i) - 1; ++j) b = (b * b) % p;
      m = Int(i);
      cc = (b * b) % p;
      t = (t * cc) % p;
      r = (r * b) % p;
    }
    x = r;
  }
  std::vector<Int> roots{x, p - x};
  if (roots[0] == roots[1]) roots.pop_back();
  std::sort(roots.begin(), roots.end());
  return roots;
}

// Roots of x^2 = c (mod p^a) with gcd(c, p) = 1, odd p: Hensel lift.
std::vector<Int> sqrt_mod_odd_unit(const Int& c, const Int& p, unsigned a) {
  std::vector<Int> base = ts_sqrt(mod_pos(c, p), p);
  if (base.empty()) return {};
  Int pk = p;
  for (unsigned i = 1; i < a; ++i) {
    Int pk1 = pk * p;
    std::vector<Int> lifted;
    for (const Int& r : base) {
      // r' = r - (r^2-c) * (2r)^{-1} mod pk1
      Int num = mod_pos(r * r - c, pk1);
      Int corr = (num * inv_mod(mod_pos(2 * r, pk1), pk1)) % pk1;
      lifted.push_back(mod_pos(r - corr, pk1));
    }
    base = lifted;
    pk = pk1;
  }
  std::sort(base.begin(), base.end());
  return base;
}

// Roots of x^2 = c (mod 2^a) with c odd.
std::vector<Int> sqrt_mod_pow2_unit(const Int& c, unsigned a) {
  Int mod = Int(1) << a;
  Int cm = mod_pos(c, mod);
  if (a == 1) return {Int(1)};
  if (a == 2) {
    if (cm % 4 != 1) return {};
    return {Int(1), Int(3)};
  }
  if (cm % 8 != 1) return {};
  // Lift a root bit by bit from x = 1 (mod 8).
  Int x = 1;
  for (unsigned k = 3; k < a; ++k) {
    Int cur = Int(1) << (k + 1);
    if (mod_pos(x * x - cm, cur) != 0) x += Int(1) << (k - 1);
  }
  std::vector<Int> roots{x, mod - x, mod_pos(x + (mod >> 1), mod),
                         mod_pos(mod - x + (mod >> 1), mod)};
  std::sort(roots.begin(), roots.end());
  roots.erase(std::unique(roots.begin(), roots.end()), roots.end());
  return roots;
}

// All roots of x^2 = c (mod p^a), any c.
std::vector<Int> sqrt_mod_prime_power(const Int& c, const Int& p, unsigned a) {
  Int pa = 1;
  for (unsigned i = 0; i < a; ++i) pa *= p;
  Int cm = mod_pos(c, pa);
  if (cm == 0) {
    // x must be divisible by p^ceil(a/2).
    unsigned h = (a + 1) / 2;
    Int step = 1;
    for (unsigned i = 0; i < h; ++i) step *= p;
    if (pa / step > 1000000)
      throw ResourceError("sqrt_mod: root set too large");
    std::vector<Int> roots;
    for (Int x = 0; x < pa; x += step) roots.push_back(x);
    return roots;
  }
  // Write cm = p^e * u with p ndiv u.
  unsigned e = 0;
  Int u = cm;
  while (mpz_divisible_p(u.get_mpz_t(), p.get_mpz_t())) {
    u /= p;
    ++e;
  }
  if (e % 2 != 0) return {};
  unsigned f = e / 2;
  unsigned a1 = a - e;  // solve y^2 = u (mod p^a1), then x = p^f * y lifts
  std::vector<Int> ybase = (p == 2) ? sqrt_mod_pow2_unit(u, a1)
                                    : sqrt_mod_odd_unit(u, p, a1);
  if (ybase.empty()) return {};
  // x = p^f * (y + t*p^(a-e)) for t in [0, p^f).
  Int pf = 1;
  for (unsigned i = 0; i < f; ++i) pf *= p;
  if (pf * Int(ybase.size()) > 1000000)
    throw ResourceError("sqrt_mod: root set too large");
  Int pae = 1;
  for (unsigned i = 0; i < a1; ++i) pae *= p;
  std::vector<Int> roots;
  for (const Int& y : ybase)
    for (Int t = 0; t < pf; ++t) roots.push_back(mod_pos(pf * (y + t * pae), pa));
  std::sort(roots.begin(), roots.end());
  roots.erase(std::unique(roots.begin(), roots.end()), roots.end());
  return roots;
}

}  // namespace

std::vector<Int> sqrt_mod(const Int& D, const Int& m, const Factorization& fact_m) {
  if (m <= 0) throw DomainError("sqrt_mod: modulus must be positive");
  if (fact_m.reassemble() != m)
    throw InternalError("sqrt_mod: factorization does not match modulus");
  if (m == 1) return {Int(0)};
  std::vector<Int> acc{Int(0)};
  Int acc_mod = 1;
  for (const auto& [p, e] : fact_m.factors) {
    Int pa = 1;
    for (unsigned i = 0; i < e; ++i) pa *= p;
    std::vector<Int> local = sqrt_mod_prime_power(D, p, e);
    if (local.empty()) return {};
    std::vector<Int> next;
    for (const Int& r0 : acc)
      for (const Int& r1 : local)
        next.push_back(crt({r0, r1}, {acc_mod, pa}));
    acc = std::move(next);
    acc_mod *= pa;
  }
  std::sort(acc.begin(), acc.end());
  acc.erase(std::unique(acc.begin(), acc.end()), acc.end());
  return acc;
}

std::vector<Int> sqrt_mod(const Int& D, const Int& m) {
  return sqrt_mod(D, m, factorize(m));
}

Int crt(const std::vector<Int>& residues, const std::vector<Int>& moduli) {
  if (residues.size() != moduli.size())
    throw DomainError("crt: length mismatch");
  Int r = 0, m = 1;
  for (size_t i = 0; i < moduli.size(); ++i) {
    const Int& mi = moduli[i];
    if (mi <= 0) throw DomainError("crt: nonpositive modulus");
    if (gcd(m, mi) != 1) throw DomainError("crt: moduli not coprime");
    if (mi == 1) continue;
    // r' = r + m * ((res_i - r) * m^{-1} mod mi)
    Int t = mod_pos((mod_pos(residues[i], mi) - mod_pos(r, mi)) * inv_mod(m % mi, mi), mi);
    r = r + m * t;
    m *= mi;
  }
  return mod_pos(r, m);
}

std::array<Int, 6> split_modulus(const Int& M, const std::array<Int, 6>& dets) {
  if (M <= 0) throw DomainError("split_modulus: modulus must be positive");
  std::array<Int, 6> out{Int(1), Int(1), Int(1), Int(1), Int(1), Int(1)};
  if (M == 1) return out;
  Factorization f = factorize(M);
  for (const auto& [p, e] : f.factors) {
    Int pa = 1;
    for (unsigned i = 0; i < e; ++i) pa *= p;
    bool placed = false;
    for (size_t j = 0; j < 6; ++j) {
      if (dets[j] != 0 && gcd(dets[j], p) == 1) {
        out[j] *= pa;
        placed = true;
        break;
      }
    }
    if (!placed)
      throw CertInvalid("split_modulus: prime " + p.get_str() +
                        " divides every cofactor determinant");
  }
  return out;
}

}  // namespace bqd::numtheory

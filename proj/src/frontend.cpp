#include "bqd/frontend.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <mutex>

#include "bqd/compose.hpp"
#include "bqd/numtheory.hpp"
#include "bqd/pell.hpp"

namespace bqd::frontend {

using forms::Cycle;
using forms::QForm;
using forms::UniMat;
using numtheory::is_square;
using numtheory::isqrt;

namespace {

Int mod_pos(const Int& a, const Int& m) {
  Int r = a % m;
  if (r < 0) r += m;
  return r;
}

Int floor_div(const Int& a, const Int& b) {
  Int q, r;
  mpz_fdiv_qr(q.get_mpz_t(), r.get_mpz_t(), a.get_mpz_t(), b.get_mpz_t());
  return q;
}

Int ceil_div(const Int& a, const Int& b) {
  Int q;
  mpz_cdiv_q(q.get_mpz_t(), a.get_mpz_t(), b.get_mpz_t());
  return q;
}

}  // namespace

Int DioSystem::eval(const Int& x1, const Int& x2) const {
  return a * x1 * x1 + 2 * b * x1 * x2 + c * x2 * x2 + 2 * d * x1 + 2 * e * x2 + f;
}

bool DioSystem::admissible(const Int& x1, const Int& x2) const {
  if (x1 < 0 || x2 < 0) return false;
  if (mod_pos(x1, gamma) != alpha1 || mod_pos(x2, gamma) != alpha2) return false;
  return eval(x1, x2) == 0;
}

Int DioSystem::norm() const {
  Int n = abs(gamma);
  for (const Int* v : {&a, &b, &c, &d, &e, &f}) n = std::max(n, Int(abs(*v)));
  return n;
}

long DioSystem::length() const {
  long total = 0;
  for (const Int* v : {&a, &b, &c, &d, &e, &f})
    total += long(bitlen(*v)) + 1;
  total += 3 * (long(bitlen(gamma)) + 1);
  return total;
}

bool DioSystem::operator==(const DioSystem& o) const {
  return a == o.a && b == o.b && c == o.c && d == o.d && e == o.e && f == o.f &&
         gamma == o.gamma && alpha1 == o.alpha1 && alpha2 == o.alpha2;
}

DioSystem normalize(const Int& A, const Int& B, const Int& C, const Int& D,
                    const Int& E, const Int& F, const Int& gamma,
                    const Int& alpha1, const Int& alpha2) {
  if (gamma <= 0) throw DomainError("normalize: modulus must be positive");
  DioSystem s;
  if (B % 2 == 0 && D % 2 == 0 && E % 2 == 0) {
    s = {A, B / 2, C, D / 2, E / 2, F, gamma, 0, 0};
  } else {
    s = {2 * A, B, 2 * C, D, E, 2 * F, gamma, 0, 0};
  }
  s.alpha1 = mod_pos(alpha1, gamma);
  s.alpha2 = mod_pos(alpha2, gamma);
  return s;
}

SysClass classify(const DioSystem& sys) {
  Int D = sys.b * sys.b - sys.a * sys.c;
  if (D < 0) return SysClass::kDefinite;
  if (is_square(D)) return SysClass::kDegenerate;
  return SysClass::kIndefinite;
}

// ---------------------------------------------------------------------------
// Exact arithmetic with quadratic irrationalities A + B*sqrt(D).

namespace {

int sign_quad(const Int& A, const Int& B, const Int& D) {
  if (B == 0) return sgn(A);
  if (A == 0) return sgn(B);
  if (sgn(A) == sgn(B)) return sgn(A);
  Int a2 = A * A, b2d = B * B * D;
  if (a2 == b2d) return 0;  // only for square D
  return a2 > b2d ? sgn(A) : sgn(B);
}

// log2 |A + B sqrt(D)|; requires (A, B) != (0, 0).
double log2_quad(const Int& A, const Int& B, const Int& D) {
  if (B == 0) return log2_abs(A);
  double lb = log2_abs(B) + 0.5 * log2_abs(D);
  if (A == 0) return lb;
  double la = log2_abs(A);
  if (sgn(A) == sgn(B)) {
    double hi = std::max(la, lb), lo = std::min(la, lb);
    return hi + std::log2(1.0 + std::exp2(lo - hi));
  }
  // Opposite signs: |A + B sqrt D| = |A^2 - B^2 D| / |A - B sqrt D|, and the
  // denominator has no cancellation.
  Int num = A * A - B * B * D;
  double hi = std::max(la, lb), lo = std::min(la, lb);
  double lden = hi + std::log2(1.0 + std::exp2(lo - hi));
  return log2_abs(num) - lden;
}

}  // namespace

// ---------------------------------------------------------------------------
// to_pell

PellSystem to_pell(const DioSystem& sys) {
  if (classify(sys) != SysClass::kIndefinite)
    throw DomainError("to_pell: system is not indefinite");
  PellSystem ps;
  ps.sys = sys;
  const Int &a = sys.a, &b = sys.b, &c = sys.c, &d = sys.d, &e = sys.e, &f = sys.f;
  ps.D = b * b - a * c;
  // c != 0 here: c = 0 would force D = b^2, a square.
  if (c == 0) throw InternalError("to_pell: c = 0 on an indefinite system");
  ps.g = ps.D * c * f + (b * e - c * d) * (b * e - c * d) - ps.D * e * e;
  ps.M = abs(c) * ps.D * sys.gamma;
  ps.cong1_mod = ps.D * sys.gamma;
  ps.cong1_target = mod_pos(b * e - c * d + ps.D * sys.alpha1, ps.cong1_mod);
  ps.cong2_target = mod_pos(c * ps.D * sys.alpha2 - c * (a * e - b * d), ps.M);
  ps.case_a = sgn(c) * sign_quad(-b, 1, ps.D) > 0;
  ps.case_b = sgn(c) * sign_quad(b, 1, ps.D) < 0;
  return ps;
}

std::optional<std::pair<Int, Int>> PellSystem::map_back(const Int& y1,
                                                        const Int& y2) const {
  const Int &a = sys.a, &b = sys.b, &c = sys.c, &d = sys.d, &e = sys.e;
  Int n1 = y1 - (b * e - c * d);
  if (n1 % D != 0) return std::nullopt;
  Int x1 = n1 / D;
  Int n2 = -b * y1 + D * y2 + c * (a * e - b * d);
  Int cd = c * D;
  if (n2 % cd != 0) return std::nullopt;
  return std::make_pair(x1, n2 / cd);
}

std::pair<Int, Int> PellSystem::forward(const Int& x1, const Int& x2) const {
  const Int &b = sys.b, &c = sys.c, &d = sys.d, &e = sys.e;
  return {D * x1 + (b * e - c * d), b * x1 + c * x2 + e};
}

// ---------------------------------------------------------------------------
// Linear one-parameter families: x1 = (A1 t + B1)/d1, x2 = (A2 t + B2)/d2.

namespace {

struct Progression {
  Int r, L;  // t = r (mod L); L >= 1
};

std::optional<Progression> solve_lincong(const Int& A, const Int& C, const Int& M) {
  // A t = C (mod M), M >= 1
  Int g = gcd(A, M);
  if (g == 0) return C == 0 ? std::optional<Progression>({Int(0), Int(1)}) : std::nullopt;
  if (C % g != 0) return std::nullopt;
  Int M2 = M / g;
  if (M2 == 1) return Progression{Int(0), Int(1)};
  Int r = mod_pos((C / g) * numtheory::inv_mod(mod_pos(A / g, M2), M2), M2);
  return Progression{r, M2};
}

std::optional<Progression> intersect(const Progression& p, const Progression& q) {
  Int g = gcd(p.L, q.L);
  if ((q.r - p.r) % g != 0) return std::nullopt;
  Int L = lcm(p.L, q.L);
  Int q2 = q.L / g;
  if (q2 == 1) return Progression{p.r, L};
  Int t = mod_pos(((q.r - p.r) / g) * numtheory::inv_mod(mod_pos(p.L / g, q2), q2), q2);
  return Progression{mod_pos(p.r + p.L * t, L), L};
}

struct ParamLine {
  Int A, B, den;  // value(t) = (A t + B)/den, den > 0 after normalization
};

std::optional<std::pair<Int, Int>> solve_param_family(const DioSystem& sys,
                                                      ParamLine L1, ParamLine L2) {
  for (ParamLine* L : {&L1, &L2}) {
    if (L->den == 0) throw InternalError("solve_param_family: zero denominator");
    if (L->den < 0) {
      L->A = -L->A;
      L->B = -L->B;
      L->den = -L->den;
    }
  }
  // Congruences: A t = den*alpha - B (mod den*gamma) covers integrality and
  // the residue condition at once.
  Progression acc{Int(0), Int(1)};
  const Int* alphas[2] = {&sys.alpha1, &sys.alpha2};
  const ParamLine* lines[2] = {&L1, &L2};
  for (int i = 0; i < 2; ++i) {
    auto pr = solve_lincong(lines[i]->A, lines[i]->den * *alphas[i] - lines[i]->B,
                            lines[i]->den * sys.gamma);
    if (!pr) return std::nullopt;
    auto merged = intersect(acc, *pr);
    if (!merged) return std::nullopt;
    acc = *merged;
  }
  // Sign constraints A t + B >= 0.
  bool has_lo = false, has_hi = false;
  Int lo = 0, hi = 0;
  for (const ParamLine* L : lines) {
    if (L->A == 0) {
      if (L->B < 0) return std::nullopt;
    } else if (L->A > 0) {
      Int bound = ceil_div(-L->B, L->A);
      if (!has_lo || bound > lo) lo = bound;
      has_lo = true;
    } else {
      Int bound = floor_div(L->B, -L->A);  // t <= B / (-A)
      if (!has_hi || bound < hi) hi = bound;
      has_hi = true;
    }
  }
  Int t;
  if (has_lo) {
    t = lo + mod_pos(acc.r - lo, acc.L);
    if (has_hi && t > hi) return std::nullopt;
  } else if (has_hi) {
    t = hi - mod_pos(hi - acc.r, acc.L);
  } else {
    t = acc.r;
  }
  Int x1 = (L1.A * t + L1.B) / L1.den;
  Int x2 = (L2.A * t + L2.B) / L2.den;
  if (!sys.admissible(x1, x2))
    throw InternalError("solve_param_family: constructed point not admissible");
  return std::make_pair(x1, x2);
}

// All divisors of |n| (n != 0), ascending.
std::vector<Int> divisors(const Int& n, unsigned factor_bits) {
  auto f = numtheory::factorize(n, factor_bits);
  std::vector<Int> divs{Int(1)};
  for (const auto& [p, e] : f.factors) {
    size_t sz = divs.size();
    Int pe = 1;
    for (unsigned i = 0; i < e; ++i) {
      pe *= p;
      for (size_t j = 0; j < sz; ++j) divs.push_back(divs[j] * pe);
    }
  }
  std::sort(divs.begin(), divs.end());
  return divs;
}

}  // namespace

// ---------------------------------------------------------------------------
// Definite systems: all solutions have |y2| <= sqrt(g / |D|).

SolveOutcome solve_definite(const DioSystem& sys) {
  if (classify(sys) != SysClass::kDefinite)
    throw DomainError("solve_definite: wrong class");
  // Build the transform directly (c != 0 because ac > b^2 >= 0).
  const Int &a = sys.a, &b = sys.b, &c = sys.c, &d = sys.d, &e = sys.e, &f = sys.f;
  Int D = b * b - a * c;
  Int g = D * c * f + (b * e - c * d) * (b * e - c * d) - D * e * e;
  auto map_back = [&](const Int& y1, const Int& y2) -> std::optional<std::pair<Int, Int>> {
    Int n1 = y1 - (b * e - c * d);
    if (n1 % D != 0) return std::nullopt;
    Int n2 = -b * y1 + D * y2 + c * (a * e - b * d);
    if (n2 % (c * D) != 0) return std::nullopt;
    return std::make_pair(n1 / D, n2 / (c * D));
  };
  if (g < 0) return {false, std::nullopt, std::nullopt, "negative definite value"};
  Int ymax = isqrt(g / abs(D));
  for (Int y2 = -ymax; y2 <= ymax; ++y2) {
    Int rem = g + D * y2 * y2;
    if (rem < 0) continue;
    Int r;
    if (!is_square(rem, &r)) continue;
    std::vector<Int> ys = r == 0 ? std::vector<Int>{Int(0)} : std::vector<Int>{-r, r};
    for (const Int& y1 : ys) {
      auto x = map_back(y1, y2);
      if (x && sys.admissible(x->first, x->second))
        return {true, x, std::nullopt, "definite enumeration"};
    }
  }
  return {false, std::nullopt, std::nullopt, "definite enumeration exhausted"};
}

// ---------------------------------------------------------------------------
// Degenerate systems (D a perfect square, possibly zero).

namespace {

SolveOutcome solve_degenerate_inner(const DioSystem& sys, unsigned factor_bits);

DioSystem swap_vars(const DioSystem& s) {
  return DioSystem{s.c, s.b, s.a, s.e, s.d, s.f, s.gamma, s.alpha2, s.alpha1};
}

// Integer roots of A z^2 + B z + C = 0 (not identically zero), ascending.
std::vector<Int> int_quad_roots(const Int& A, const Int& B, const Int& C) {
  std::vector<Int> roots;
  if (A == 0) {
    if (B == 0) return roots;  // constant; caller handles C == 0
    if (C % B == 0) roots.push_back(-C / B);
    return roots;
  }
  Int disc = B * B - 4 * A * C;
  if (disc < 0) return roots;
  Int r;
  if (!is_square(disc, &r)) return roots;
  for (const Int& num : {Int(-B - r), Int(-B + r)}) {
    if (num % (2 * A) == 0) roots.push_back(num / (2 * A));
  }
  std::sort(roots.begin(), roots.end());
  roots.erase(std::unique(roots.begin(), roots.end()), roots.end());
  return roots;
}

// Smallest x >= 0 with x = alpha (mod gamma).
Int least_nonneg_residue(const Int& alpha, const Int& gamma) {
  return mod_pos(alpha, gamma);
}

SolveOutcome degenerate_linear(const DioSystem& sys) {
  // a = b = c = 0: 2d x1 + 2e x2 + f = 0.
  const Int &d = sys.d, &e = sys.e, &f = sys.f;
  if (f % 2 != 0) return {false, std::nullopt, std::nullopt, "odd constant"};
  Int rhs = -f / 2;  // d x1 + e x2 = rhs
  if (d == 0 && e == 0) {
    if (rhs != 0) return {false, std::nullopt, std::nullopt, "constant nonzero"};
    auto x = std::make_pair(least_nonneg_residue(sys.alpha1, sys.gamma),
                            least_nonneg_residue(sys.alpha2, sys.gamma));
    return {true, x, std::nullopt, "trivial equation"};
  }
  if (d == 0) {
    if (rhs % e != 0) return {false, std::nullopt, std::nullopt, "no integer solution"};
    Int x2 = rhs / e;
    if (x2 < 0 || mod_pos(x2, sys.gamma) != sys.alpha2)
      return {false, std::nullopt, std::nullopt, "fixed x2 inadmissible"};
    auto x = std::make_pair(least_nonneg_residue(sys.alpha1, sys.gamma), x2);
    return {true, x, std::nullopt, "linear"};
  }
  if (e == 0) {
    if (rhs % d != 0) return {false, std::nullopt, std::nullopt, "no integer solution"};
    Int x1 = rhs / d;
    if (x1 < 0 || mod_pos(x1, sys.gamma) != sys.alpha1)
      return {false, std::nullopt, std::nullopt, "fixed x1 inadmissible"};
    auto x = std::make_pair(x1, least_nonneg_residue(sys.alpha2, sys.gamma));
    return {true, x, std::nullopt, "linear"};
  }
  Int g = gcd(d, e);
  if (rhs % g != 0) return {false, std::nullopt, std::nullopt, "gcd obstruction"};
  // x1 = x10 + (e/g) t, x2 = x20 - (d/g) t
  Int u, v, gg;
  mpz_gcdext(gg.get_mpz_t(), u.get_mpz_t(), v.get_mpz_t(), d.get_mpz_t(), e.get_mpz_t());
  Int x10 = u * (rhs / g), x20 = v * (rhs / g);
  auto x = solve_param_family(sys, ParamLine{e / g, x10, Int(1)},
                              ParamLine{-d / g, x20, Int(1)});
  if (x) return {true, x, std::nullopt, "linear family"};
  return {false, std::nullopt, std::nullopt, "linear family empty"};
}

SolveOutcome degenerate_case3(const DioSystem& sys, unsigned factor_bits) {
  // a = c = 0, b != 0: (b x1 + e)(b x2 + d) = ed - b f / 2.
  const Int &b = sys.b, &d = sys.d, &e = sys.e, &f = sys.f;
  if (f % 2 != 0) return {false, std::nullopt, std::nullopt, "odd constant"};
  Int R = e * d - b * (f / 2);
  if (R != 0) {
    for (const Int& dv : divisors(R, factor_bits)) {
      for (const Int& r1 : {dv, Int(-dv)}) {
        Int r2 = R / r1;
        if ((r1 - e) % b != 0 || (r2 - d) % b != 0) continue;
        Int x1 = (r1 - e) / b, x2 = (r2 - d) / b;
        if (sys.admissible(x1, x2))
          return {true, std::make_pair(x1, x2), std::nullopt, "factor pair"};
      }
    }
    return {false, std::nullopt, std::nullopt, "no admissible factor pair"};
  }
  // Either factor may vanish; the other variable is then free.
  if (e % b == 0) {
    Int x1 = -e / b;
    if (x1 >= 0 && mod_pos(x1, sys.gamma) == sys.alpha1) {
      Int x2 = least_nonneg_residue(sys.alpha2, sys.gamma);
      if (sys.admissible(x1, x2))
        return {true, std::make_pair(x1, x2), std::nullopt, "vanishing factor"};
    }
  }
  if (d % b == 0) {
    Int x2 = -d / b;
    if (x2 >= 0 && mod_pos(x2, sys.gamma) == sys.alpha2) {
      Int x1 = least_nonneg_residue(sys.alpha1, sys.gamma);
      if (sys.admissible(x1, x2))
        return {true, std::make_pair(x1, x2), std::nullopt, "vanishing factor"};
    }
  }
  return {false, std::nullopt, std::nullopt, "zero product branch empty"};
}

SolveOutcome degenerate_square_positive(const DioSystem& sys, unsigned factor_bits) {
  // D = h^2 > 0, c != 0 (swap applied by caller when needed).
  const Int &a = sys.a, &b = sys.b, &c = sys.c, &d = sys.d, &e = sys.e, &f = sys.f;
  Int D = b * b - a * c;
  Int h;
  is_square(D, &h);
  Int g = D * c * f + (b * e - c * d) * (b * e - c * d) - D * e * e;
  auto map_back = [&](const Int& y1, const Int& y2) -> std::optional<std::pair<Int, Int>> {
    Int n1 = y1 - (b * e - c * d);
    if (n1 % D != 0) return std::nullopt;
    Int n2 = -b * y1 + D * y2 + c * (a * e - b * d);
    if (n2 % (c * D) != 0) return std::nullopt;
    return std::make_pair(n1 / D, n2 / (c * D));
  };
  if (g != 0) {
    // (y1 + h y2)(y1 - h y2) = g over divisor pairs.
    for (const Int& dv : divisors(g, factor_bits)) {
      for (const Int& g1 : {dv, Int(-dv)}) {
        Int g2 = g / g1;
        if ((g1 + g2) % 2 != 0) continue;
        Int y1 = (g1 + g2) / 2;
        if ((g1 - g2) % (2 * h) != 0) continue;
        Int y2 = (g1 - g2) / (2 * h);
        auto x = map_back(y1, y2);
        if (x && sys.admissible(x->first, x->second))
          return {true, x, std::nullopt, "degenerate factor pair"};
      }
    }
    return {false, std::nullopt, std::nullopt, "degenerate enumeration exhausted"};
  }
  // g = 0: y1 = +-h y2, a one-parameter family each.
  for (int s : {1, -1}) {
    Int hh = s * h;
    // x1 = (hh t - (be - cd)) / D, x2 = (-b hh t + D t + c(ae - bd)) / (cD)
    auto x = solve_param_family(
        sys, ParamLine{hh, -(b * e - c * d), D},
        ParamLine{-b * hh + D, c * (a * e - b * d), c * D});
    if (x) return {true, x, std::nullopt, "degenerate null family"};
  }
  return {false, std::nullopt, std::nullopt, "degenerate null families empty"};
}

SolveOutcome degenerate_rank1(const DioSystem& sys) {
  // D = 0, quadratic part m (al x1 + be x2)^2 nonzero.
  const Int &a = sys.a, &b = sys.b, &c = sys.c, &d = sys.d, &e = sys.e, &f = sys.f;
  Int m, al, be;
  if (a != 0) {
    Int k0 = gcd(a, b);
    al = a / k0;
    be = b / k0;
    if (k0 % al != 0) throw InternalError("degenerate_rank1: decomposition failed");
    m = k0 / al;
  } else {
    // a = 0 and D = 0 force b = 0; quadratic part is c x2^2.
    m = c;
    al = 0;
    be = 1;
  }
  if (m * al * al != a || m * al * be != b || m * be * be != c)
    throw InternalError("degenerate_rank1: decomposition check failed");
  Int E = e * al - d * be;
  if (E != 0) {
    Int zb = 6 * sys.norm() * sys.norm() + 2 * abs(E) * sys.gamma + 4;
    for (Int z = -zb; z <= zb; ++z) {
      Int n1 = m * be * z * z + 2 * e * z + f * be;
      Int d1 = 2 * E;
      if (n1 % d1 != 0) continue;
      Int x1 = n1 / d1;
      Int n2 = -(m * al * z * z + 2 * d * z + f * al);
      if (n2 % d1 != 0) continue;
      Int x2 = n2 / d1;
      if (sys.admissible(x1, x2))
        return {true, std::make_pair(x1, x2), std::nullopt, "rank-1 scan"};
    }
    return {false, std::nullopt, std::nullopt, "rank-1 scan exhausted"};
  }
  // E = 0.
  if (be != 0) {
    // m be z^2 + 2 e z + f be = 0; each root gives the family
    // x1 = t, x2 = (z - al t)/be.
    for (const Int& z : int_quad_roots(m * be, 2 * e, f * be)) {
      auto x = solve_param_family(sys, ParamLine{Int(1), Int(0), Int(1)},
                                  ParamLine{-al, z, be});
      if (x) return {true, x, std::nullopt, "rank-1 family"};
    }
    if (m * be == 0 && e == 0 && f * be == 0)
      throw InternalError("degenerate_rank1: identically zero quadratic");
    return {false, std::nullopt, std::nullopt, "rank-1 roots inadmissible"};
  }
  // be = 0, al != 0, e = 0: m al^2 x1^2 + 2 d x1 + f = 0, x2 free.
  for (const Int& x1 : int_quad_roots(m * al * al, 2 * d, f)) {
    if (x1 < 0 || mod_pos(x1, sys.gamma) != sys.alpha1) continue;
    Int x2 = least_nonneg_residue(sys.alpha2, sys.gamma);
    if (sys.admissible(x1, x2))
      return {true, std::make_pair(x1, x2), std::nullopt, "rank-1 fixed x1"};
  }
  return {false, std::nullopt, std::nullopt, "rank-1 fixed-x1 empty"};
}

SolveOutcome solve_degenerate_inner(const DioSystem& sys, unsigned factor_bits) {
  const Int &a = sys.a, &b = sys.b, &c = sys.c;
  Int D = b * b - a * c;
  if (a == 0 && b == 0 && c == 0) return degenerate_linear(sys);
  if (D == 0) return degenerate_rank1(sys);
  // D = h^2 > 0.
  if (c != 0) return degenerate_square_positive(sys, factor_bits);
  if (a != 0) {
    SolveOutcome r = degenerate_square_positive(swap_vars(sys), factor_bits);
    if (r.solution) std::swap(r.solution->first, r.solution->second);
    return r;
  }
  return degenerate_case3(sys, factor_bits);
}

}  // namespace

SolveOutcome solve_degenerate(const DioSystem& sys) {
  if (classify(sys) != SysClass::kDegenerate)
    throw DomainError("solve_degenerate: wrong class");
  return solve_degenerate_inner(sys, 128);
}

// ---------------------------------------------------------------------------
// Shared caches for the indefinite machinery.

namespace {

std::mutex g_cache_mu;
std::map<std::string, std::shared_ptr<const Cycle>> g_cycle_cache;
std::map<std::string, Int> g_period_cache;

std::shared_ptr<const Cycle> cycle_for(const Int& D) {
  {
    std::lock_guard<std::mutex> lk(g_cache_mu);
    auto it = g_cycle_cache.find(D.get_str());
    if (it != g_cycle_cache.end()) return it->second;
  }
  auto cy = std::make_shared<Cycle>(forms::principal_cycle(D));
  std::lock_guard<std::mutex> lk(g_cache_mu);
  if (g_cycle_cache.size() > 4096) g_cycle_cache.clear();
  g_cycle_cache.emplace(D.get_str(), cy);
  return cy;
}

Int period_for(const pell::PellSolution& sol, const Int& M) {
  std::string key = sol.D.get_str() + "|" + M.get_str();
  {
    std::lock_guard<std::mutex> lk(g_cache_mu);
    auto it = g_period_cache.find(key);
    if (it != g_period_cache.end()) return it->second;
  }
  Int p = pell::period_mod(sol, M).p_of_m;
  std::lock_guard<std::mutex> lk(g_cache_mu);
  if (g_period_cache.size() > 65536) g_period_cache.clear();
  g_period_cache[key] = p;
  return p;
}

// ---------------------------------------------------------------------------
// The two-term structure w(k) = alpha eps^k + beta conj(eps)^k of each
// entry of Z(k) = S*^-1 Uplus^k L_j S^-1, used for exact per-k sign
// decisions. Uplus is the positive fundamental automorph (eigenvalues
// eps, 1/eps with eps > 1), so the model coefficients are k-independent.

struct EntryModel {
  // alpha, beta as (A + B sqrt D) divided by the common positive factor
  // 2 u1 sqrt(D); only signs, log-magnitudes and the crossing matter.
  Int aA, aB, bA, bB;
  int sign_alpha = 0, sign_beta = 0;
  double lg_alpha = 0, lg_beta = 0;
  double kstar = 0;  // |alpha eps^k| = |beta eps^-k| crossing
};

constexpr long kBelt = 4;

}  // namespace

// ---------------------------------------------------------------------------
// Indefinite solver.

namespace {

struct Mat2z {
  Int m[2][2];
};

Mat2z mul_mod(const Mat2z& x, const Mat2z& y, const Int& M) {
  Mat2z r;
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j)
      r.m[i][j] = (x.m[i][0] * y.m[0][j] + x.m[i][1] * y.m[1][j]) % M;
  return r;
}

Mat2z from_uni(const UniMat& u) {
  return Mat2z{{{u.m[0][0], u.m[0][1]}, {u.m[1][0], u.m[1][1]}}};
}

Mat2z adj(const Mat2z& x) {
  return Mat2z{{{x.m[1][1], -x.m[0][1]}, {-x.m[1][0], x.m[0][0]}}};
}

Mat2z reduce_mod(const Mat2z& x, const Int& M) {
  Mat2z r;
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) r.m[i][j] = mod_pos(x.m[i][j], M);
  return r;
}

Mat2z pow_mod_signed(const Mat2z& base, const Int& k, const Int& M) {
  Mat2z b = k >= 0 ? base : adj(base);
  Int e = abs(k);
  Mat2z acc{{{Int(1) % M, Int(0)}, {Int(0), Int(1) % M}}};
  while (e > 0) {
    if (mpz_odd_p(e.get_mpz_t())) acc = mul_mod(acc, b, M);
    b = mul_mod(b, b, M);
    e >>= 1;
  }
  return reduce_mod(acc, M);
}

// Signed least-absolute representative mod 2^bits.
Int signed_from_pow2(const Int& v, long bits) {
  Int half = Int(1) << (bits - 1);
  if (v >= half) return v - (Int(1) << bits);
  return v;
}

}  // namespace

SolveOutcome solve_indefinite(const PellSystem& ps, const SolveOptions& opts) {
  const DioSystem& sys = ps.sys;
  const Int& D = ps.D;
  const Int& g = ps.g;
  SolveOutcome out;
  out.solvable = false;

  if (g == 0) {
    // y1^2 = D y2^2 with D nonsquare forces y = 0.
    auto x = ps.map_back(0, 0);
    if (x && sys.admissible(x->first, x->second))
      return {true, x, std::nullopt, "null transform point"};
    return {false, std::nullopt, std::nullopt, "g = 0 with inadmissible origin"};
  }

  auto cy = cycle_for(D);
  auto aut = forms::fundamental_automorph(*cy);
  pell::PellSolution eps{D, aut.t1, aut.u1};
  const Int& M = ps.M;
  Int P = period_for(eps, M);
  double lg_eps = log2_quad(eps.t1, eps.u1, D);

  Int lam = isqrt(D);
  Int mu = lam * lam - D;
  UniMat sstar_inv{{{Int(1), -lam}, {Int(0), Int(1)}}};
  UniMat sstar{{{Int(1), lam}, {Int(0), Int(1)}}};
  long two_p = long(cy->period());

  // Positive fundamental automorph (eigenvalues eps > 1 > 1/eps > 0) and
  // the sign relating it to L_2p.
  UniMat uplus{{{eps.t1 - lam * eps.u1, -mu * eps.u1},
                {eps.u1, eps.t1 + lam * eps.u1}}};
  int sigma;
  if (aut.U == uplus)
    sigma = 1;
  else if (aut.U == uplus.neg())
    sigma = -1;
  else
    throw InternalError("solve_indefinite: automorph layout mismatch");

  // Threshold below which an exact candidate is reconstructed and mapped
  // back; covers every admissible solution small enough to fall outside
  // the sign-case analysis.
  long th_bits = long(6 * bitlen(sys.norm()) + bitlen(D) + bitlen(g)) + 64;
  bool scan_truncated = false;

  // Per-class scan state; every class advances one offset per round so a
  // solvable class is found without exhausting unrelated ones first.
  struct ClassState {
    Int h, G, B, C;
    UniMat S, Lj, Sinv;
    QForm qred;
    long j = 0;
    EntryModel em[2];
    long kc = 0, win = 0, off = 0;
    bool done = false;
    Mat2z Ljm, Um, Sstarm, Sinvm;
    Mat2z StepF, StepB;  // Z-step matrices mod M (forward and inverse)
    // cursors over the first column of Z(k) mod M
    bool use_u64 = false;
    uint64_t mm = 0, u[2][2] = {}, v[2][2] = {}, ur0 = 0, ur1 = 0, ul0 = 0, ul1 = 0;
    uint64_t hm = 0, bm = 0, dm = 0, t2m = 0, m1 = 0, t1m = 0;
    Int R[2], L[2];
  };
  std::vector<ClassState> classes;

  // Enumerate h with h^2 | g, ascending.
  Int habs = 1;
  {
    auto fg = numtheory::factorize(g, opts.factor_bits);
    for (const auto& [p, e] : fg.factors)
      for (unsigned i = 1; 2 * i <= e; ++i) habs *= p;
  }

  const long kScanCap = 80000000;
  for (const Int& h : divisors(habs, opts.factor_bits)) {
    Int G = g / (h * h);
    std::vector<Int> roots = numtheory::sqrt_mod(D, abs(G));
    for (const Int& B : roots) {
      Int C = (B * B - D) / G;
      QForm q0{G, B, C};
      if (forms::determinant(q0) != D)
        throw InternalError("solve_indefinite: bad Q0 determinant");
      if (!forms::properly_primitive(q0)) continue;
      auto [qred, S] = forms::reduce(q0);
      long j0 = cy->index_of(qred);
      if (j0 < 0) continue;

      ClassState cs;
      cs.h = h;
      cs.G = G;
      cs.B = B;
      cs.C = C;
      cs.S = S;
      cs.qred = qred;
      cs.j = j0 == 0 ? two_p : j0;

      // Exact base data: Z(k) = S* Uplus^k L_j S^-1 at k = 0, 1, where
      // S* = [[1, lam],[0, 1]] carries I to the reduced identity form.
      cs.Lj = forms::simple_equiv_matrix(*cy, cs.j);
      cs.Sinv = S.adj();
      UniMat Z0 = sstar * cs.Lj * cs.Sinv;
      UniMat Z1 = sstar * (uplus * cs.Lj) * cs.Sinv;

      // Per-entry two-term models w(k) = alpha eps^k + beta eps^-k with
      // alpha = ((w1 - t1 w0) + u1 w0 sqrt D) / (2 u1 sqrt D),
      // beta  = ((t1 w0 - w1) + u1 w0 sqrt D) / (2 u1 sqrt D).
      double denom_lg = 1.0 + log2_abs(eps.u1) + 0.5 * log2_abs(D);
      for (int i = 0; i < 2; ++i) {
        EntryModel& m = cs.em[i];
        Int w0 = Z0.m[i][0], w1 = Z1.m[i][0];
        m.aA = w1 - eps.t1 * w0;
        m.aB = eps.u1 * w0;
        m.bA = eps.t1 * w0 - w1;
        m.bB = eps.u1 * w0;
        m.sign_alpha = sign_quad(m.aA, m.aB, D);
        m.sign_beta = sign_quad(m.bA, m.bB, D);
        if (m.sign_alpha == 0 || m.sign_beta == 0)
          throw InternalError("solve_indefinite: vanishing two-term component");
        m.lg_alpha = log2_quad(m.aA, m.aB, D) - denom_lg;
        m.lg_beta = log2_quad(m.bA, m.bB, D) - denom_lg;
        m.kstar = (m.lg_beta - m.lg_alpha) / (2.0 * lg_eps);
      }

      double kc_d = (cs.em[0].kstar + cs.em[1].kstar) / 2.0;
      cs.kc = std::lround(std::clamp(kc_d, -1e15, 1e15));
      long spread = long(std::ceil(std::abs(cs.em[0].kstar - cs.em[1].kstar))) + 1;
      Int window = P + spread + 2 * kBelt + 8;
      // Completeness needs the full window; cap the scan and report a
      // resource failure only when nothing was found within the cap.
      if (window > kScanCap) {
        cs.win = kScanCap;
        scan_truncated = true;
      } else {
        cs.win = long(mpz_get_ui(window.get_mpz_t()));
      }

      cs.Ljm = from_uni(cs.Lj);
      cs.Um = from_uni(uplus);
      cs.Sstarm = from_uni(sstar);
      cs.Sinvm = from_uni(cs.Sinv);

      // Initial cursors at kc and kc - 1.
      Mat2z Ut = from_uni(sstar * uplus * sstar_inv);
      Mat2z Utm = reduce_mod(Ut, M), Utm_inv = reduce_mod(adj(Ut), M);
      {
        Mat2z acc = pow_mod_signed(reduce_mod(cs.Um, M), Int(cs.kc), M);
        acc = mul_mod(acc, reduce_mod(cs.Ljm, M), M);
        acc = mul_mod(reduce_mod(cs.Sstarm, M), acc, M);
        acc = mul_mod(acc, reduce_mod(cs.Sinvm, M), M);
        acc = reduce_mod(acc, M);
        cs.R[0] = acc.m[0][0];
        cs.R[1] = acc.m[1][0];
        cs.L[0] = mod_pos(Utm_inv.m[0][0] * cs.R[0] + Utm_inv.m[0][1] * cs.R[1], M);
        cs.L[1] = mod_pos(Utm_inv.m[1][0] * cs.R[0] + Utm_inv.m[1][1] * cs.R[1], M);
      }
      cs.StepF = Utm;
      cs.StepB = Utm_inv;
      cs.use_u64 = mpz_fits_slong_p(M.get_mpz_t()) && M < (Int(1) << 31);
      if (cs.use_u64) {
        auto to_u = [&](const Int& x) {
          return mpz_get_ui(Int(mod_pos(x, M)).get_mpz_t());
        };
        cs.mm = mpz_get_ui(M.get_mpz_t());
        for (int i = 0; i < 2; ++i)
          for (int jx = 0; jx < 2; ++jx) {
            cs.u[i][jx] = to_u(Utm.m[i][jx]);
            cs.v[i][jx] = to_u(Utm_inv.m[i][jx]);
          }
        cs.ur0 = to_u(cs.R[0]);
        cs.ur1 = to_u(cs.R[1]);
        cs.ul0 = to_u(cs.L[0]);
        cs.ul1 = to_u(cs.L[1]);
        cs.hm = to_u(h);
        cs.bm = to_u(sys.b);
        cs.dm = to_u(D);
        cs.t2m = to_u(ps.cong2_target);
        cs.m1 = mpz_get_ui(Int(ps.cong1_mod).get_mpz_t());
        cs.t1m = mpz_get_ui(Int(ps.cong1_target % ps.cong1_mod).get_mpz_t());
      }
      classes.push_back(std::move(cs));
    }
  }

  // model helpers shared across classes
  auto zsize_est = [&](const ClassState& cs, long k) {
    double est = 0;
    for (int i = 0; i < 2; ++i) {
      double ta = cs.em[i].lg_alpha + double(k) * lg_eps;
      double tb = cs.em[i].lg_beta - double(k) * lg_eps;
      est = std::max(est, std::max(ta, tb));
    }
    return est;
  };
  auto recon_z = [&](const ClassState& cs, long k, long bits) {
    Int mod = Int(1) << bits;
    Mat2z acc = pow_mod_signed(reduce_mod(cs.Um, mod), Int(k), mod);
    acc = mul_mod(acc, reduce_mod(cs.Ljm, mod), mod);
    acc = mul_mod(reduce_mod(cs.Sstarm, mod), acc, mod);
    acc = mul_mod(acc, reduce_mod(cs.Sinvm, mod), mod);
    Int z1 = signed_from_pow2(mod_pos(acc.m[0][0], mod), bits);
    Int z2 = signed_from_pow2(mod_pos(acc.m[1][0], mod), bits);
    return std::make_pair(z1, z2);
  };
  auto exact_z = [&](const ClassState& cs, long k) {
    long bits = long(std::max(zsize_est(cs, k), 8.0)) + 66;
    for (int attempt = 0; attempt < 6; ++attempt) {
      auto z = recon_z(cs, k, bits);
      if (z.first * z.first - D * z.second * z.second == cs.G) return z;
      bits *= 2;
    }
    throw InternalError("solve_indefinite: reconstruction failed");
  };
  auto sign_z = [&](const ClassState& cs, long k, int i) -> int {
    double rel = double(k) - cs.em[i].kstar;
    if (rel > kBelt) return cs.em[i].sign_alpha;
    if (rel < -kBelt) return cs.em[i].sign_beta;
    auto z = exact_z(cs, k);
    return sgn(i == 0 ? z.first : z.second);
  };
  auto make_witness = [&](const ClassState& cs, long k, int m, SignCase sc) {
    // Convert from the Uplus convention to W = (-1)^m L_2p^k L_j.
    int m_cert = m;
    if (sigma < 0 && (k % 2 != 0)) m_cert ^= 1;
    return InfraWitness{cs.h, cs.G, cs.B, cs.C, cs.S, cs.qred, cs.j, Int(k),
                        m_cert, sc};
  };

  // try_candidate returns true when the search can stop entirely.
  auto try_candidate = [&](const ClassState& cs, long k, const Int& z1m,
                           const Int& z2m) -> bool {
    for (int m = 0; m < 2; ++m) {
      Int y1m = mod_pos((m ? -cs.h : cs.h) * z1m, M);
      Int y2m = mod_pos((m ? -cs.h : cs.h) * z2m, M);
      if (mod_pos(y1m - ps.cong1_target, ps.cong1_mod) != 0) continue;
      if (mod_pos(-sys.b * y1m + D * y2m - ps.cong2_target, M) != 0) continue;
      if (zsize_est(cs, k) <= double(th_bits)) {
        auto z = exact_z(cs, k);
        Int y1 = (m ? -cs.h : cs.h) * z.first;
        Int y2 = (m ? -cs.h : cs.h) * z.second;
        auto x = ps.map_back(y1, y2);
        if (x && sys.admissible(x->first, x->second)) {
          if (!out.solution) {
            out.solvable = true;
            out.solution = x;
            out.detail = "indefinite exact candidate";
          }
          if (!out.infra && y1 > 0) {
            bool ca = ps.case_a && y2 > 0;
            bool cb = ps.case_b && y2 < 0;
            if (ca || cb)
              out.infra =
                  make_witness(cs, k, m, ca ? SignCase::k315a : SignCase::k315b);
          }
          if (out.infra || !opts.want_infra) return true;
        }
        continue;
      }
      int s1 = sign_z(cs, k, 0) * (m ? -1 : 1);
      int s2 = sign_z(cs, k, 1) * (m ? -1 : 1);
      if (s1 <= 0) continue;  // y1 > 0 required (h > 0)
      bool ca = ps.case_a && s2 > 0;
      bool cb = ps.case_b && s2 < 0;
      if (!ca && !cb) continue;
      out.solvable = true;
      if (!out.infra)
        out.infra = make_witness(cs, k, m, ca ? SignCase::k315a : SignCase::k315b);
      if (out.detail.empty()) out.detail = "indefinite tail candidate";
      if (out.infra) return true;
    }
    return false;
  };

  // Round-robin over the classes, one offset per class per round.
  size_t remaining = classes.size();
  while (remaining > 0) {
    for (ClassState& cs : classes) {
      if (cs.done) continue;
      if (cs.off > cs.win) {
        cs.done = true;
        --remaining;
        continue;
      }
      long kr = cs.kc + cs.off, kl = cs.kc - 1 - cs.off;
      if (cs.use_u64) {
        auto cong_hit = [&](uint64_t z1, uint64_t z2) -> bool {
          for (int m = 0; m < 2; ++m) {
            uint64_t y1 = cs.hm * z1 % cs.mm, y2 = cs.hm * z2 % cs.mm;
            if (m) {
              y1 = (cs.mm - y1) % cs.mm;
              y2 = (cs.mm - y2) % cs.mm;
            }
            if (y1 % cs.m1 != cs.t1m) continue;
            uint64_t lhs = ((cs.mm - cs.bm) * y1 + cs.dm * y2) % cs.mm;
            if (lhs == cs.t2m) return true;
          }
          return false;
        };
        if (cong_hit(cs.ur0, cs.ur1) &&
            try_candidate(cs, kr, Int(cs.ur0), Int(cs.ur1)))
          return out;
        if (cong_hit(cs.ul0, cs.ul1) &&
            try_candidate(cs, kl, Int(cs.ul0), Int(cs.ul1)))
          return out;
        uint64_t nr0 = (cs.u[0][0] * cs.ur0 + cs.u[0][1] * cs.ur1) % cs.mm;
        uint64_t nr1 = (cs.u[1][0] * cs.ur0 + cs.u[1][1] * cs.ur1) % cs.mm;
        uint64_t nl0 = (cs.v[0][0] * cs.ul0 + cs.v[0][1] * cs.ul1) % cs.mm;
        uint64_t nl1 = (cs.v[1][0] * cs.ul0 + cs.v[1][1] * cs.ul1) % cs.mm;
        cs.ur0 = nr0;
        cs.ur1 = nr1;
        cs.ul0 = nl0;
        cs.ul1 = nl1;
      } else {
        if (try_candidate(cs, kr, cs.R[0], cs.R[1])) return out;
        if (try_candidate(cs, kl, cs.L[0], cs.L[1])) return out;
        Int nr0 = mod_pos(cs.StepF.m[0][0] * cs.R[0] + cs.StepF.m[0][1] * cs.R[1], M);
        Int nr1 = mod_pos(cs.StepF.m[1][0] * cs.R[0] + cs.StepF.m[1][1] * cs.R[1], M);
        Int nl0 = mod_pos(cs.StepB.m[0][0] * cs.L[0] + cs.StepB.m[0][1] * cs.L[1], M);
        Int nl1 = mod_pos(cs.StepB.m[1][0] * cs.L[0] + cs.StepB.m[1][1] * cs.L[1], M);
        cs.R[0] = nr0;
        cs.R[1] = nr1;
        cs.L[0] = nl0;
        cs.L[1] = nl1;
      }
      ++cs.off;
    }
  }
  if (out.solvable) return out;
  if (scan_truncated)
    throw ResourceError("solve_indefinite: scan window exceeds the resource cap");
  return {false, std::nullopt, std::nullopt, "indefinite search exhausted"};
}

SolveOutcome solve(const DioSystem& sys, const SolveOptions& opts) {
  switch (classify(sys)) {
    case SysClass::kDefinite:
      return solve_definite(sys);
    case SysClass::kDegenerate:
      return solve_degenerate(sys);
    case SysClass::kIndefinite:
      return solve_indefinite(to_pell(sys), opts);
  }
  throw InternalError("solve: unreachable");
}

std::optional<std::pair<Int, Int>> brute_force_oracle(const DioSystem& sys,
                                                      const Int& bound) {
  for (Int x1 = mod_pos(sys.alpha1, sys.gamma); x1 <= bound; x1 += sys.gamma) {
    // c x2^2 + (2b x1 + 2e) x2 + (a x1^2 + 2d x1 + f) = 0
    Int A = sys.c, B = 2 * sys.b * x1 + 2 * sys.e,
        C = sys.a * x1 * x1 + 2 * sys.d * x1 + sys.f;
    if (A == 0 && B == 0) {
      if (C != 0) continue;
      Int x2 = mod_pos(sys.alpha2, sys.gamma);
      if (x2 <= bound) return std::make_pair(x1, x2);
      continue;
    }
    std::vector<Int> roots = int_quad_roots(A, B, C);
    for (const Int& x2 : roots) {
      if (x2 < 0 || x2 > bound) continue;
      if (sys.admissible(x1, x2)) return std::make_pair(x1, x2);
    }
  }
  return std::nullopt;
}

}  // namespace bqd::frontend

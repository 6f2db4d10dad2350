#include "bqd/compose.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "bqd/numtheory.hpp"

namespace bqd::compose {

using forms::apply_transform;
using forms::is_reduced;
using forms::properly_primitive;
using forms::reduce;
using forms::reduced_identity;
using numtheory::isqrt;

std::array<Int, 6> BiMat::cofactors() const {
  std::array<Int, 6> c;
  for (int k = 0; k < 6; ++k) c[k] = cofactor(kCofCols[k][0], kCofCols[k][1]);
  return c;
}

Int BiMat::norm() const {
  Int n = 0;
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 4; ++j) n = std::max(n, Int(abs(m[i][j])));
  return n;
}

BiMat BiMat::neg() const {
  BiMat r;
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 4; ++j) r.m[i][j] = -m[i][j];
  return r;
}

bool BiMat::operator==(const BiMat& o) const {
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 4; ++j)
      if (m[i][j] != o.m[i][j]) return false;
  return true;
}

std::string BiMat::str() const {
  std::string s = "[";
  for (int i = 0; i < 2; ++i) {
    s += "[";
    for (int j = 0; j < 4; ++j) s += m[i][j].get_str() + (j < 3 ? "," : "");
    s += std::string("]") + (i == 0 ? "," : "");
  }
  return s + "]";
}

BiMat b0_matrix(const Int& D) {
  Int lam = isqrt(D);
  BiMat b;
  b.m[0][0] = 1; b.m[0][1] = 0; b.m[0][2] = 0; b.m[0][3] = D - lam * lam;
  b.m[1][0] = 0; b.m[1][1] = 1; b.m[1][2] = 1; b.m[1][3] = 2 * lam;
  return b;
}

namespace {

// Coefficient grid of Q1(x) * Q2(y) over the x-monomials (x1^2, x1x2, x2^2)
// and y-monomials (y1^2, y1y2, y2^2).
void lhs_grid(const QForm& q1, const QForm& q2, Int g[3][3]) {
  Int u[3] = {q1.a, 2 * q1.b, q1.c};
  Int v[3] = {q2.a, 2 * q2.b, q2.c};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) g[i][j] = u[i] * v[j];
}

// M = B^t Q3 B, 4x4 symmetric (upper triangle filled).
void gram(const QForm& q3, const BiMat& b, Int M[4][4]) {
  for (int i = 0; i < 4; ++i)
    for (int j = i; j < 4; ++j) {
      Int r = q3.a * b.m[0][i] * b.m[0][j] + q3.c * b.m[1][i] * b.m[1][j] +
              q3.b * (b.m[0][i] * b.m[1][j] + b.m[1][i] * b.m[0][j]);
      M[i][j] = r;
      M[j][i] = r;
    }
}

}  // namespace

ComposeCheck verify_composition(const QForm& q1, const QForm& q2, const QForm& q3,
                                const BiMat& b) {
  Int D = forms::determinant(q1);
  if (forms::determinant(q2) != D || forms::determinant(q3) != D)
    return {false, ComposeFail::kDeterminantMismatch};
  Int lhs[3][3];
  lhs_grid(q1, q2, lhs);
  Int M[4][4];
  gram(q3, b, M);
  // z = (x1y1, x1y2, x2y1, x2y2); z^t M z collected on the same grid.
  Int rhs[3][3];
  rhs[0][0] = M[0][0];
  rhs[0][1] = 2 * M[0][1];
  rhs[0][2] = M[1][1];
  rhs[1][0] = 2 * M[0][2];
  rhs[1][1] = 2 * M[0][3] + 2 * M[1][2];
  rhs[1][2] = 2 * M[1][3];
  rhs[2][0] = M[2][2];
  rhs[2][1] = 2 * M[2][3];
  rhs[2][2] = M[3][3];
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      if (lhs[i][j] != rhs[i][j]) return {false, ComposeFail::kIdentityMismatch};

  auto cofs = b.cofactors();
  Int g = 0;
  for (const Int& c : cofs) g = gcd(g, c);
  if (g != 1) return {false, ComposeFail::kNotUnimodular};
  if (!(q1.a * b.cofactor(0, 1) > 0 && q2.a * b.cofactor(0, 2) > 0))
    return {false, ComposeFail::kNotOriented};
  return {true, ComposeFail::kNone};
}

namespace {

BiMat left_mul(const UniMat& s, const BiMat& b) {
  BiMat r;
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 4; ++j)
      r.m[i][j] = s.m[i][0] * b.m[0][j] + s.m[i][1] * b.m[1][j];
  return r;
}

// B * (P tensor Q) with z-basis (x1y1, x1y2, x2y1, x2y2).
BiMat kron_mul(const BiMat& b, const UniMat& P, const UniMat& Q) {
  BiMat r;
  for (int row = 0; row < 2; ++row)
    for (int k = 0; k < 2; ++k)
      for (int l = 0; l < 2; ++l) {
        Int acc = 0;
        for (int i = 0; i < 2; ++i)
          for (int j = 0; j < 2; ++j)
            acc += b.m[row][2 * i + j] * P.m[i][k] * Q.m[j][l];
        r.m[row][2 * k + l] = acc;
      }
  return r;
}

Int eval_form(const QForm& q, const Int& x, const Int& y) {
  return q.a * x * x + 2 * q.b * x * y + q.c * y * y;
}

// det-1 transform T with gcd(Q2(T e1), a1) = 1, built per prime of a1.
UniMat unite_transform(const QForm& q2, const Int& a1) {
  if (gcd(q2.a, a1) == 1) return UniMat::identity();
  auto fact = numtheory::factorize(a1);
  std::vector<Int> rs, ss, mods;
  Int m = 1;
  for (const auto& [p, e] : fact.factors) {
    Int r, s;
    if (q2.a % p != 0) {
      r = 1; s = 0;
    } else if (q2.c % p != 0) {
      r = 0; s = 1;
    } else {
      // gcd(a,2b,c) = 1 forces p odd here and p ndiv 2b.
      r = 1; s = 1;
    }
    rs.push_back(r);
    ss.push_back(s);
    mods.push_back(p);
    m *= p;
  }
  Int r0 = numtheory::crt(rs, mods), s0 = numtheory::crt(ss, mods);
  Int r = (r0 == 0) ? m : r0;
  Int s = s0;
  for (Int k = 0; gcd(r, s) != 1; ++k) {
    if (k > 1000000) throw InternalError("unite_transform: no coprime representative");
    s = s0 + (k + 1) * m;
  }
  // Complete the column (r, s) to a det-1 matrix.
  Int g, v, w;
  mpz_gcdext(g.get_mpz_t(), v.get_mpz_t(), w.get_mpz_t(), r.get_mpz_t(), s.get_mpz_t());
  if (g != 1) throw InternalError("unite_transform: gcd sanity");
  // r*v + s*w = 1  ->  T = [[r, -w],[s, v]] has det r*v + s*w = 1.
  UniMat T{{{r, -w}, {s, v}}};
  if (T.det() != 1) throw InternalError("unite_transform: det");
  if (gcd(eval_form(q2, r, s), a1) != 1)
    throw InternalError("unite_transform: construction failed");
  return T;
}

Int mod_pos(const Int& a, const Int& m) {
  Int r = a % m;
  if (r < 0) r += m;
  return r;
}

}  // namespace

std::pair<QForm, BiMat> compose_reduced(const QForm& q1, const QForm& q2) {
  Int D = forms::determinant(q1);
  if (forms::determinant(q2) != D)
    throw DomainError("compose_reduced: determinant mismatch");
  if (!properly_primitive(q1) || !properly_primitive(q2))
    throw DomainError("compose_reduced: inputs must be properly primitive");
  if (!is_reduced(q1) || !is_reduced(q2))
    throw DomainError("compose_reduced: inputs must be reduced");

  // Bring the pair to concordant position: coprime leading coefficients,
  // then a shared middle coefficient via CRT.
  UniMat T = unite_transform(q2, q1.a);
  QForm q2u = apply_transform(q2, T);
  const Int &a1 = q1.a, &a2 = q2u.a;

  Int mod = abs(a1 * a2);
  Int bc = numtheory::crt({mod_pos(q1.b, abs(a1)), mod_pos(q2u.b, abs(a2))},
                          {abs(a1), abs(a2)});
  if (2 * bc > mod) bc -= mod;  // minimal absolute residue

  Int t1 = (bc - q1.b) / a1;
  Int t2 = (bc - q2u.b) / a2;
  if (q1.b + t1 * a1 != bc || q2u.b + t2 * a2 != bc)
    throw InternalError("compose_reduced: translation not integral");
  UniMat T1{{{Int(1), t1}, {Int(0), Int(1)}}};
  UniMat T2{{{Int(1), t2}, {Int(0), Int(1)}}};

  Int c3 = (bc * bc - D) / (a1 * a2);
  if (c3 * a1 * a2 != bc * bc - D)
    throw InternalError("compose_reduced: concordance failed");
  QForm q3p{a1 * a2, bc, c3};

  // Bilinear matrix for the concordant pair, then transported back to
  // (q1, q2) and through the final reduction.
  BiMat bp;
  bp.m[0][0] = 1;  bp.m[0][1] = 0;  bp.m[0][2] = 0;  bp.m[0][3] = -c3;
  bp.m[1][0] = 0;  bp.m[1][1] = a1; bp.m[1][2] = a2; bp.m[1][3] = 2 * bc;

  UniMat t2tot = T * T2;
  BiMat bpp = kron_mul(bp, T1.adj(), t2tot.adj());

  auto [q3, S] = reduce(q3p);
  BiMat b = left_mul(S.adj(), bpp);

  auto chk = verify_composition(q1, q2, q3, b);
  if (!chk.ok) throw InternalError("compose_reduced: self-check failed");
  return {q3, b};
}

UniMat solve_s3(const BiMat& b, const BiMat& b0, const UniMat& s1, const UniMat& s2) {
  BiMat rhs = kron_mul(b0, s1, s2);
  int pi = -1, pj = -1;
  Int det;
  for (int k = 0; k < 6; ++k) {
    det = b.cofactor(kCofCols[k][0], kCofCols[k][1]);
    if (det != 0) {
      pi = kCofCols[k][0];
      pj = kCofCols[k][1];
      break;
    }
  }
  if (pi < 0) throw InternalError("solve_s3: no invertible column pair");
  // S3 = rhs_ij * adj(B_ij) / det
  UniMat bij{{{b.m[0][pi], b.m[0][pj]}, {b.m[1][pi], b.m[1][pj]}}};
  UniMat rij{{{rhs.m[0][pi], rhs.m[0][pj]}, {rhs.m[1][pi], rhs.m[1][pj]}}};
  UniMat num = rij * bij.adj();
  UniMat s3;
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) {
      if (num.m[i][j] % det != 0)
        throw CertInvalid("solve_s3: non-integer solution");
      s3.m[i][j] = num.m[i][j] / det;
    }
  if (!(left_mul(s3, b) == rhs)) throw CertInvalid("solve_s3: equation not satisfied");
  if (s3.det() != 1) throw CertInvalid("solve_s3: determinant not 1");
  return s3;
}

QForm derive_composed_form(const QForm& q1, const QForm& q2, const BiMat& b) {
  Int lhs[3][3];
  lhs_grid(q1, q2, lhs);
  // Clean column pairs and the grid cells giving their Gram blocks:
  // (0,1): M00 = lhs00, M01 = lhs01/2, M11 = lhs02
  // (0,2): M00 = lhs00, M02 = lhs10/2, M22 = lhs20
  // (1,3): M11 = lhs02, M13 = lhs12/2, M33 = lhs22
  // (2,3): M22 = lhs20, M23 = lhs21/2, M33 = lhs22
  struct Pick {
    int i, j;
    Int mii, mij2, mjj;  // mij2 = 2*Mij
  };
  Pick picks[4] = {
      {0, 1, lhs[0][0], lhs[0][1], lhs[0][2]},
      {0, 2, lhs[0][0], lhs[1][0], lhs[2][0]},
      {1, 3, lhs[0][2], lhs[1][2], lhs[2][2]},
      {2, 3, lhs[2][0], lhs[2][1], lhs[2][2]},
  };
  for (const Pick& pk : picks) {
    Int det = b.cofactor(pk.i, pk.j);
    if (det == 0) continue;
    if (pk.mij2 % 2 != 0) throw CertInvalid("derive_composed_form: odd cross term");
    Int mij = pk.mij2 / 2;
    // Q3 = adj(Bij)^t Msub adj(Bij) / det^2
    UniMat bij{{{b.m[0][pk.i], b.m[0][pk.j]}, {b.m[1][pk.i], b.m[1][pk.j]}}};
    UniMat adj = bij.adj();
    // N = adj^t * [[mii, mij],[mij, mjj]] * adj
    Int n00 = adj.m[0][0] * (pk.mii * adj.m[0][0] + mij * adj.m[1][0]) +
              adj.m[1][0] * (mij * adj.m[0][0] + pk.mjj * adj.m[1][0]);
    Int n01 = adj.m[0][0] * (pk.mii * adj.m[0][1] + mij * adj.m[1][1]) +
              adj.m[1][0] * (mij * adj.m[0][1] + pk.mjj * adj.m[1][1]);
    Int n11 = adj.m[0][1] * (pk.mii * adj.m[0][1] + mij * adj.m[1][1]) +
              adj.m[1][1] * (mij * adj.m[0][1] + pk.mjj * adj.m[1][1]);
    Int d2 = det * det;
    if (n00 % d2 != 0 || n01 % d2 != 0 || n11 % d2 != 0)
      throw CertInvalid("derive_composed_form: non-integral form");
    return QForm{n00 / d2, n01 / d2, n11 / d2};
  }
  throw CertInvalid("derive_composed_form: no invertible clean column pair");
}

// ---------------------------------------------------------------------------
// Doubling chains.

namespace {

// 2x2 matrices modulo a fixed word-sized prime, for cheap sign/winding
// resolution during chain construction.
struct ModMat {
  uint64_t m[2][2];
};

uint64_t mulmod(uint64_t a, uint64_t b, uint64_t p) {
  return uint64_t((unsigned __int128)a * b % p);
}

ModMat mod_mul(const ModMat& x, const ModMat& y, uint64_t p) {
  ModMat r;
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) {
      unsigned __int128 acc = (unsigned __int128)x.m[i][0] * y.m[0][j] +
                              (unsigned __int128)x.m[i][1] * y.m[1][j];
      r.m[i][j] = uint64_t(acc % p);
    }
  return r;
}

uint64_t int_mod(const Int& v, uint64_t p) {
  Int r = v % Int(p);
  if (r < 0) r += Int(p);
  return mpz_get_ui(r.get_mpz_t());
}

ModMat to_mod(const UniMat& s, uint64_t p) {
  ModMat r;
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) r.m[i][j] = int_mod(s.m[i][j], p);
  return r;
}

bool mod_eq(const ModMat& a, const ModMat& b) {
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j)
      if (a.m[i][j] != b.m[i][j]) return false;
  return true;
}

ModMat mod_neg(const ModMat& a, uint64_t p) {
  ModMat r;
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) r.m[i][j] = a.m[i][j] == 0 ? 0 : p - a.m[i][j];
  return r;
}

uint64_t pow_mod_u64(uint64_t b, uint64_t e, uint64_t p) {
  uint64_t r = 1 % p;
  while (e) {
    if (e & 1) r = mulmod(r, b, p);
    b = mulmod(b, b, p);
    e >>= 1;
  }
  return r;
}

constexpr uint64_t kSignPrimes[] = {2305843009213693951ULL,   // 2^61 - 1
                                    4611686018427387847ULL,   // prime < 2^62
                                    9223372036854775783ULL};  // prime < 2^63

// Solve V B = B0 (V1 tensor V2) modulo p; fails (returns false) when no
// cofactor of B is invertible mod p.
bool solve_mod(const BiMat& b, const BiMat& b0, const ModMat& v1, const ModMat& v2,
               uint64_t p, ModMat* out) {
  int pi = -1, pj = -1;
  uint64_t det = 0;
  int sign = 1;
  for (int k = 0; k < 6; ++k) {
    Int d = b.cofactor(kCofCols[k][0], kCofCols[k][1]);
    if (d == 0) continue;
    uint64_t dm = int_mod(d, p);
    if (dm != 0) {
      pi = kCofCols[k][0];
      pj = kCofCols[k][1];
      det = dm;
      break;
    }
  }
  (void)sign;
  if (pi < 0) return false;
  // rhs = B0 (V1 tensor V2) mod p, columns pi and pj only.
  uint64_t rhs[2][2];
  for (int row = 0; row < 2; ++row)
    for (int colsel = 0; colsel < 2; ++colsel) {
      int col = colsel == 0 ? pi : pj;
      int k = col / 2, l = col % 2;
      unsigned __int128 acc = 0;
      for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) {
          uint64_t bij = int_mod(b0.m[row][2 * i + j], p);
          acc += (unsigned __int128)mulmod(bij, mulmod(v1.m[i][k], v2.m[j][l], p), p);
        }
      rhs[row][colsel] = uint64_t(acc % p);
    }
  // V = rhs * adj(Bij) * det^{-1}
  uint64_t b00 = int_mod(b.m[0][pi], p), b01 = int_mod(b.m[0][pj], p);
  uint64_t b10 = int_mod(b.m[1][pi], p), b11 = int_mod(b.m[1][pj], p);
  uint64_t adj[2][2] = {{b11, p - b01 == p ? 0 : p - b01},
                        {p - b10 == p ? 0 : p - b10, b00}};
  uint64_t dinv = pow_mod_u64(det, p - 2, p);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) {
      unsigned __int128 acc = (unsigned __int128)mulmod(rhs[i][0], adj[0][j], p) +
                              mulmod(rhs[i][1], adj[1][j], p);
      out->m[i][j] = mulmod(uint64_t(acc % p), dinv, p);
    }
  return true;
}

// Shared per-cycle data for chain construction.
struct ChainContext {
  const Cycle& cy;
  long n;                  // 2p
  std::vector<double> lg;  // lg[l] = approx log2 ||L_l||, l in [0, n]
  struct ModTrack {
    uint64_t p;
    std::vector<ModMat> lmod;  // L_l mod p, l in [0, n]
    ModMat umod;
  };
  std::vector<ModTrack> tracks;

  explicit ChainContext(const Cycle& cycle) : cy(cycle), n(long(cycle.period())) {
    // ||L_l|| follows the continued-fraction convergent recurrence in the
    // |lambda| values; track log2 with a ratio accumulator.
    lg.assign(size_t(n) + 1, 0.0);
    double prev = 0.0, cur = 0.0;  // log2 q_{l-1}, log2 q_l
    for (long l = 1; l <= n; ++l) {
      double lam = std::abs(cy.lambdas[size_t(l - 1)].get_d());
      double next = cur + std::log2(lam + std::exp2(prev - cur));
      prev = cur;
      cur = next;
      lg[size_t(l)] = std::max(cur, 0.0);
    }
    for (uint64_t p : kSignPrimes) {
      ModTrack t;
      t.p = p;
      t.lmod.resize(size_t(n) + 1);
      t.lmod[0] = ModMat{{{1 % p, 0}, {0, 1 % p}}};
      for (long l = 1; l <= n; ++l)
        t.lmod[size_t(l)] =
            mod_mul(t.lmod[size_t(l - 1)], to_mod(cy.steps[size_t(l - 1)], p), p);
      t.umod = t.lmod[size_t(n)];
      tracks.push_back(std::move(t));
    }
  }

  // L_v mod p for v >= 0 (winding through U powers).
  ModMat lmod_ext(const ModTrack& t, long v) const {
    long w = v / n, r = v % n;
    ModMat acc = t.lmod[size_t(r)];
    for (long i = 0; i < w; ++i) acc = mod_mul(t.umod, acc, t.p);
    return acc;
  }

  // Largest l in [1, t) with lg[l] <= lg[t]/2 - margin; -1 when none.
  long pick_window(long t, double margin) const {
    double target = lg[size_t(t)] / 2.0 - margin;
    long lo = 1, hi = t - 1, best = -1;
    while (lo <= hi) {
      long mid = (lo + hi) / 2;
      if (lg[size_t(mid)] <= target) {
        best = mid;
        lo = mid + 1;
      } else {
        hi = mid - 1;
      }
    }
    return best;
  }
};

// One construction attempt with a fixed window margin. The chain is a
// ladder: Type I steps always extend the tip; each Type II squares the
// tip. Returns false on overshoot (retry with a larger margin).
struct ChainAttempt {
  const ChainContext& ctx;
  Chain chain;
  std::vector<long> vidx;  // per entry
  std::vector<int> sign;   // per entry: V = sign * L_vidx
  long last_type2 = -1;    // entry index of the most recent Type II

  explicit ChainAttempt(const ChainContext& c) : ctx(c) {
    chain.D = ctx.cy.D;
    chain.forms.push_back(ctx.cy.forms[0]);
    vidx.push_back(0);
    sign.push_back(1);
  }

  long tip() const { return vidx.back(); }

  void step_type1() {
    long v = tip();
    chain.steps.push_back(TypeIStep{ctx.cy.steps[size_t(v % ctx.n)]});
    chain.forms.push_back(ctx.cy.forms[size_t((v + 1) % ctx.n)]);
    vidx.push_back(v + 1);
    sign.push_back(sign.back());
  }

  // Square the tip; false when the landing index exceeds target.
  bool step_type2(long target) {
    size_t e = chain.forms.size() - 1;
    long l = vidx[e];
    const QForm& q = chain.forms[e];
    auto [q3, b] = compose_reduced(q, q);
    long pos = ctx.cy.index_of(q3);
    if (pos < 0) throw InternalError("doubling_chain: composed form not in cycle");

    long vmax = 2 * l + ctx.n +
                long(16.0 * (kCompositionLogBound + 6.0) * plog(ctx.cy.D)) + 16;
    // Identify the true landing index v = pos + n*w and the sign by
    // comparing the modular solve against L_v mod p.
    for (const auto& t : ctx.tracks) {
      ModMat vmod;
      if (!solve_mod(b, b0_matrix(ctx.cy.D), ctx.lmod_ext(t, l), ctx.lmod_ext(t, l),
                     t.p, &vmod))
        continue;
      bool ambiguous = false;
      for (long v = pos; v <= vmax; v += ctx.n) {
        ModMat lv = ctx.lmod_ext(t, v);
        bool plus = mod_eq(vmod, lv);
        bool minus = mod_eq(vmod, mod_neg(lv, t.p));
        if (plus && minus) {
          ambiguous = true;  // degenerate mod p; try the next prime
          break;
        }
        if (plus || minus) {
          if (v > target) return false;  // overshoot
          chain.steps.push_back(TypeIIStep{e, e, b});
          chain.forms.push_back(q3);
          vidx.push_back(v);
          sign.push_back(plus ? 1 : -1);
          last_type2 = long(chain.forms.size() - 1);
          return true;
        }
      }
      if (!ambiguous)
        throw InternalError("doubling_chain: landing index not identified");
    }
    throw InternalError("doubling_chain: all sign primes degenerate");
  }

  // Build the full ladder for target j; false on overshoot.
  bool run(long j, double margin) {
    // Descend through the squaring windows.
    std::vector<long> targets{j};
    while (targets.back() > 16) {
      long l = ctx.pick_window(targets.back(), margin);
      if (l < 1) break;
      targets.push_back(l);
    }
    // Base segment: Type I from the identity.
    for (long s = 0; s < targets.back(); ++s) step_type1();
    // Ascend: square, then pad.
    for (size_t i = targets.size() - 1; i-- > 0;) {
      if (!step_type2(targets[i])) return false;
      while (tip() < targets[i]) step_type1();
    }
    return true;
  }

  Chain finish(long j) {
    if (tip() != j) throw InternalError("doubling_chain: wrong endpoint");
    if (sign.back() < 0) {
      // Negating the bilinear matrix of the last Type II step flips the
      // implicit matrix of that entry and of every later (Type I) entry.
      if (last_type2 < 0)
        throw InternalError("doubling_chain: sign fix without Type II step");
      auto& st = std::get<TypeIIStep>(chain.steps[size_t(last_type2) - 1]);
      st.b = st.b.neg();
      for (size_t i = size_t(last_type2); i < sign.size(); ++i) sign[i] = -sign[i];
      if (sign.back() != 1) throw InternalError("doubling_chain: sign fix failed");
    }
    chain.target = j;
    double cap = kChainLengthBound * std::pow(1.0 + plog(ctx.cy.D), 2);
    if (double(chain.steps.size()) > cap)
      throw InternalError("doubling_chain: length bound exceeded");
    return std::move(chain);
  }
};

}  // namespace

Chain doubling_chain(const Cycle& cycle, long j) {
  if (j < 1 || j > long(cycle.period()))
    throw DomainError("doubling_chain: target outside [1, 2p]");
  ChainContext ctx(cycle);
  const double margins[] = {3.0, 8.0, 16.0,
                            (kCompositionLogBound + 5.0) * plog(cycle.D) + 2.0};
  for (double margin : margins) {
    ChainAttempt attempt(ctx);
    if (attempt.run(j, margin)) return attempt.finish(j);
  }
  throw InternalError("doubling_chain: all window margins overshoot");
}

UniMat chain_matrix_exact(const Chain& chain) {
  std::vector<UniMat> vs;
  vs.push_back(UniMat::identity());
  BiMat b0 = b0_matrix(chain.D);
  for (size_t i = 0; i < chain.steps.size(); ++i) {
    if (std::holds_alternative<TypeIStep>(chain.steps[i])) {
      vs.push_back(vs[i] * std::get<TypeIStep>(chain.steps[i]).s);
    } else {
      const auto& st = std::get<TypeIIStep>(chain.steps[i]);
      vs.push_back(solve_s3(st.b, b0, vs[st.k1], vs[st.k2]));
    }
  }
  return vs.back();
}

}  // namespace bqd::compose

#include "bqd/certify.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "bqd/numtheory.hpp"
#include "bqd/pell.hpp"

namespace bqd::certify {

using compose::b0_matrix;
using compose::derive_composed_form;
using compose::kChainLengthBound;
using compose::kCompositionLogBound;
using compose::TypeIStep;
using compose::TypeIIStep;
using floatp::Enclosure;
using floatp::FpConfig;
using forms::apply_transform;
using forms::is_reduced;
using forms::properly_primitive;
using forms::reduced_identity;
using frontend::PellSystem;
using frontend::SysClass;
using numtheory::isqrt;

namespace {

thread_local long t_peak_bits = 0;

void note_bits(const Int& v) {
  long b = long(bitlen(v));
  if (b > t_peak_bits) t_peak_bits = b;
}

void note_mat(const UniMat& u) {
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) note_bits(u.m[i][j]);
}

Int mod_pos(const Int& a, const Int& m) {
  Int r = a % m;
  if (r < 0) r += m;
  return r;
}

struct Mat2 {
  Int m[2][2];
  static Mat2 ident(const Int& M) {
    return Mat2{{{Int(1) % M, Int(0)}, {Int(0), Int(1) % M}}};
  }
};

Mat2 mul_mod(const Mat2& x, const Mat2& y, const Int& M) {
  Mat2 r;
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j)
      r.m[i][j] = mod_pos(x.m[i][0] * y.m[0][j] + x.m[i][1] * y.m[1][j], M);
  return r;
}

Mat2 adj2(const Mat2& x, const Int& M) {
  return Mat2{{{x.m[1][1], mod_pos(-x.m[0][1], M)},
               {mod_pos(-x.m[1][0], M), x.m[0][0]}}};
}

Mat2 from_uni_mod(const UniMat& u, const Int& M) {
  Mat2 r;
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) r.m[i][j] = mod_pos(u.m[i][j], M);
  return r;
}

}  // namespace

long last_verify_peak_bits() { return t_peak_bits; }

// ---------------------------------------------------------------------------
// Chain materialization: rebuilds the form sequence from the steps with
// every short-formula check, in small integers only.

namespace {

VerifyResult materialize_chain(Chain& chain, const Int& D, const char* tag) {
  auto fail = [&](size_t i, const std::string& what) {
    return VerifyResult{false, std::string(tag) + "-step-" + std::to_string(i) + "-" + what};
  };
  double cap = kChainLengthBound * std::pow(1.0 + plog(D), 2.0);
  if (double(chain.steps.size()) > cap)
    return {false, std::string(tag) + "-too-long"};
  chain.D = D;
  chain.forms.clear();
  chain.forms.push_back(reduced_identity(D).first);
  Int lam_cap = 4 * isqrt(D) + 4;
  double bit_cap = kCompositionLogBound * (1.0 + plog(D)) + 1.0;
  for (size_t i = 0; i < chain.steps.size(); ++i) {
    const QForm& prev = chain.forms.back();
    if (std::holds_alternative<TypeIStep>(chain.steps[i])) {
      const UniMat& s = std::get<TypeIStep>(chain.steps[i]).s;
      note_mat(s);
      if (s.m[0][0] != 0 || s.m[0][1] != 1 || s.m[1][0] != -1)
        return fail(i, "shape");
      if (abs(s.m[1][1]) > lam_cap) return fail(i, "lambda-bound");
      QForm next = apply_transform(prev, s);
      if (!is_reduced(next)) return fail(i, "not-reduced");
      chain.forms.push_back(next);
    } else {
      const auto& st = std::get<TypeIIStep>(chain.steps[i]);
      if (st.k1 >= chain.forms.size() || st.k2 >= chain.forms.size())
        return fail(i, "bad-index");
      if (double(bitlen(st.b.norm())) > bit_cap) return fail(i, "bilinear-size");
      for (int r = 0; r < 2; ++r)
        for (int c = 0; c < 4; ++c) note_bits(st.b.m[r][c]);
      QForm next;
      try {
        next = derive_composed_form(chain.forms[st.k1], chain.forms[st.k2], st.b);
      } catch (const CertInvalid& e) {
        return fail(i, std::string("derive:") + e.what());
      }
      auto chk = compose::verify_composition(chain.forms[st.k1], chain.forms[st.k2],
                                             next, st.b);
      if (!chk.ok) return fail(i, "composition");
      if (!is_reduced(next)) return fail(i, "not-reduced");
      if (!properly_primitive(next)) return fail(i, "not-primitive");
      chain.forms.push_back(next);
    }
  }
  return {true, ""};
}

}  // namespace

// ---------------------------------------------------------------------------
// Modular evaluation of W.

namespace {

// Final V (mod M) of a chain, via the modulus split for Type II steps.
Mat2 eval_chain_V_mod(const Chain& chain, const Int& D, const Int& M) {
  compose::BiMat b0 = b0_matrix(D);
  std::vector<Mat2> vs;
  vs.push_back(Mat2::ident(M));
  for (size_t i = 0; i < chain.steps.size(); ++i) {
    if (std::holds_alternative<TypeIStep>(chain.steps[i])) {
      Mat2 s = from_uni_mod(std::get<TypeIStep>(chain.steps[i]).s, M);
      vs.push_back(mul_mod(vs.back(), s, M));
      continue;
    }
    const auto& st = std::get<TypeIIStep>(chain.steps[i]);
    auto cofs = st.b.cofactors();
    std::array<Int, 6> dets;
    for (int t = 0; t < 6; ++t) dets[t] = cofs[t];
    std::array<Int, 6> split = numtheory::split_modulus(M, dets);
    const Mat2 &v1 = vs[st.k1], &v2 = vs[st.k2];
    Int res[2][2] = {{Int(0), Int(0)}, {Int(0), Int(0)}};
    Int mod_acc = 1;
    for (int t = 0; t < 6; ++t) {
      const Int& mij = split[t];
      if (mij == 1) continue;
      int ci = compose::kCofCols[t][0], cj = compose::kCofCols[t][1];
      Int det = mod_pos(dets[t], mij);
      Int dinv = numtheory::inv_mod(det, mij);
      // columns ci, cj of B0 (V1 tensor V2) mod mij
      Int rhs[2][2];
      for (int row = 0; row < 2; ++row)
        for (int sel = 0; sel < 2; ++sel) {
          int col = sel == 0 ? ci : cj;
          int kk = col / 2, ll = col % 2;
          Int acc = 0;
          for (int a = 0; a < 2; ++a)
            for (int b = 0; b < 2; ++b)
              acc += b0.m[row][2 * a + b] * v1.m[a][kk] * v2.m[b][ll];
          rhs[row][sel] = mod_pos(acc, mij);
        }
      // V = rhs * adj(Bij) * det^-1 (mod mij)
      Int b00 = mod_pos(st.b.m[0][ci], mij), b01 = mod_pos(st.b.m[0][cj], mij);
      Int b10 = mod_pos(st.b.m[1][ci], mij), b11 = mod_pos(st.b.m[1][cj], mij);
      Int adjm[2][2] = {{b11, mod_pos(-b01, mij)}, {mod_pos(-b10, mij), b00}};
      Int part[2][2];
      for (int r = 0; r < 2; ++r)
        for (int c = 0; c < 2; ++c)
          part[r][c] =
              mod_pos((rhs[r][0] * adjm[0][c] + rhs[r][1] * adjm[1][c]) * dinv, mij);
      // CRT-combine into res
      for (int r = 0; r < 2; ++r)
        for (int c = 0; c < 2; ++c)
          res[r][c] = numtheory::crt({res[r][c], part[r][c]}, {mod_acc, mij});
      mod_acc *= mij;
    }
    if (mod_acc != M)
      throw CertInvalid("eval_chain_mod: split does not cover modulus");
    Mat2 v;
    for (int r = 0; r < 2; ++r)
      for (int c = 0; c < 2; ++c) {
        v.m[r][c] = M == 1 ? Int(0) : res[r][c];
        note_bits(v.m[r][c]);
      }
    vs.push_back(v);
  }
  return vs.back();
}

Mat2 pow_mod_mat(const Mat2& base, const Int& e, const Int& M) {
  Mat2 acc = Mat2::ident(M);
  Mat2 b = base;
  Int k = e;
  while (k > 0) {
    if (mpz_odd_p(k.get_mpz_t())) acc = mul_mod(acc, b, M);
    b = mul_mod(b, b, M);
    k >>= 1;
  }
  return acc;
}

}  // namespace

std::array<std::array<Int, 2>, 2> eval_chain_mod(const Chain& chain_j,
                                                 const Chain& chain_2p, const Int& k,
                                                 int m, const Int& M) {
  if (M < 1) throw DomainError("eval_chain_mod: modulus must be positive");
  const Int& D = chain_j.D;
  Mat2 vj = eval_chain_V_mod(chain_j, D, M);
  Mat2 v2p = eval_chain_V_mod(chain_2p, D, M);
  Mat2 base = k >= 0 ? v2p : adj2(v2p, M);
  Mat2 w = mul_mod(pow_mod_mat(base, abs(k), M), vj, M);
  if (m) {
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j) w.m[i][j] = mod_pos(-w.m[i][j], M);
  }
  std::array<std::array<Int, 2>, 2> out;
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) out[i][j] = w.m[i][j];
  return out;
}

// ---------------------------------------------------------------------------
// Floating-point evaluation of the long formulas.

namespace {

struct EncMat {
  Enclosure m[2][2];
};

struct ScaledMat {
  EncMat r;
  int scale_sign = 1;
};

EncMat enc_identity(const FpConfig& cfg) {
  EncMat e;
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) e.m[i][j] = floatp::enc_exact(i == j ? 1 : 0, cfg);
  return e;
}

Enclosure enc_of_int(const Int& v, const FpConfig& cfg) {
  Enclosure e = floatp::enc_exact(v, cfg);
  if (!e.exact())
    throw CertInvalid("eval_chain_fp: exact constant exceeds precision");
  return e;
}

// Products first, then sums.
EncMat mul_enc(const EncMat& x, const EncMat& y, const FpConfig& cfg) {
  EncMat r;
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) {
      Enclosure p0 = floatp::enc_mul(x.m[i][0], y.m[0][j], cfg);
      Enclosure p1 = floatp::enc_mul(x.m[i][1], y.m[1][j], cfg);
      r.m[i][j] = floatp::enc_add(p0, p1, cfg);
    }
  return r;
}

EncMat mul_enc_exact_left(const UniMat& s, const EncMat& y, const FpConfig& cfg) {
  EncMat x;
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) x.m[i][j] = enc_of_int(s.m[i][j], cfg);
  return mul_enc(x, y, cfg);
}

EncMat mul_enc_exact_right(const EncMat& x, const UniMat& s, const FpConfig& cfg) {
  EncMat y;
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) y.m[i][j] = enc_of_int(s.m[i][j], cfg);
  return mul_enc(x, y, cfg);
}

EncMat adj_enc(const EncMat& x) {
  auto neg = [](const Enclosure& e) {
    Enclosure r = e;
    r.val.frac = -r.val.frac;
    return r;
  };
  EncMat r;
  r.m[0][0] = x.m[1][1];
  r.m[0][1] = neg(x.m[0][1]);
  r.m[1][0] = neg(x.m[1][0]);
  r.m[1][1] = x.m[0][0];
  return r;
}

// Final V of a chain as a scaled enclosure matrix.
ScaledMat eval_chain_V_fp(const Chain& chain, const Int& D, const FpConfig& cfg) {
  compose::BiMat b0 = b0_matrix(D);
  std::vector<ScaledMat> vs;
  vs.push_back({enc_identity(cfg), 1});
  for (size_t i = 0; i < chain.steps.size(); ++i) {
    if (std::holds_alternative<TypeIStep>(chain.steps[i])) {
      const UniMat& s = std::get<TypeIStep>(chain.steps[i]).s;
      ScaledMat nv{mul_enc_exact_right(vs.back().r, s, cfg), vs.back().scale_sign};
      vs.push_back(nv);
      continue;
    }
    const auto& st = std::get<TypeIIStep>(chain.steps[i]);
    const ScaledMat &v1 = vs[st.k1], &v2 = vs[st.k2];
    // P = B0 (V1 tensor V2): all multiplications first, then additions.
    Enclosure P[2][4];
    for (int row = 0; row < 2; ++row)
      for (int kk = 0; kk < 2; ++kk)
        for (int ll = 0; ll < 2; ++ll) {
          std::vector<Enclosure> terms;
          for (int a2 = 0; a2 < 2; ++a2)
            for (int b2 = 0; b2 < 2; ++b2) {
              const Int& coef = b0.m[row][2 * a2 + b2];
              if (coef == 0) continue;
              Enclosure t = floatp::enc_mul(v1.r.m[a2][kk], v2.r.m[b2][ll], cfg);
              if (coef != 1) t = floatp::enc_mul(enc_of_int(coef, cfg), t, cfg);
              terms.push_back(t);
            }
          Enclosure acc = terms.empty() ? floatp::enc_exact(0, cfg) : terms[0];
          for (size_t t = 1; t < terms.size(); ++t)
            acc = floatp::enc_add(acc, terms[t], cfg);
          P[row][2 * kk + ll] = acc;
        }
    // Pick the invertible column pair with the largest |det|.
    int best = -1;
    Int best_det = 0;
    for (int t = 0; t < 6; ++t) {
      Int det = st.b.cofactor(compose::kCofCols[t][0], compose::kCofCols[t][1]);
      if (abs(det) > abs(best_det)) {
        best_det = det;
        best = t;
      }
    }
    if (best < 0 || best_det == 0)
      throw CertInvalid("eval_chain_fp: degenerate bilinear matrix");
    int ci = compose::kCofCols[best][0], cj = compose::kCofCols[best][1];
    // V' (up to the positive scale |det|) = [P]_{ci,cj} * adj(B_{ci,cj}).
    UniMat bij{{{st.b.m[0][ci], st.b.m[0][cj]}, {st.b.m[1][ci], st.b.m[1][cj]}}};
    UniMat adjb = bij.adj();
    EncMat nv;
    for (int r = 0; r < 2; ++r)
      for (int c = 0; c < 2; ++c) {
        Enclosure t0 = floatp::enc_mul(P[r][ci], enc_of_int(adjb.m[0][c], cfg), cfg);
        Enclosure t1 = floatp::enc_mul(P[r][cj], enc_of_int(adjb.m[1][c], cfg), cfg);
        nv.m[r][c] = floatp::enc_add(t0, t1, cfg);
      }
    int ssign = v1.scale_sign * v2.scale_sign * (sgn(best_det) < 0 ? -1 : 1);
    vs.push_back({nv, ssign});
  }
  return vs.back();
}

}  // namespace

FpEval eval_chain_fp(const Chain& chain_j, const Chain& chain_2p, const Int& k, int m,
                     const Int& D, const UniMat& S, long p) {
  FpConfig cfg{p, (long(1) << 60)};
  ScaledMat vj = eval_chain_V_fp(chain_j, D, cfg);
  ScaledMat v2p = eval_chain_V_fp(chain_2p, D, cfg);
  // T^|k| with T = V_2p or its inverse; adj(R) carries the same scale.
  EncMat base = k >= 0 ? v2p.r : adj_enc(v2p.r);
  EncMat acc = enc_identity(cfg);
  Int e = abs(k);
  int pow_scale = 1;
  {
    EncMat b = base;
    int bscale = v2p.scale_sign;
    Int kk = e;
    while (kk > 0) {
      if (mpz_odd_p(kk.get_mpz_t())) {
        acc = mul_enc(acc, b, cfg);
        pow_scale *= bscale;
      }
      kk >>= 1;
      if (kk > 0) {
        b = mul_enc(b, b, cfg);
        bscale = 1;  // squared sign
      }
    }
  }
  EncMat w = mul_enc(acc, vj.r, cfg);
  int scale = pow_scale * vj.scale_sign * (m ? -1 : 1);
  // Z = S* W S^-1 with exact integer factors.
  Int lam = isqrt(D);
  UniMat sstar{{{Int(1), lam}, {Int(0), Int(1)}}};
  EncMat z = mul_enc_exact_left(sstar, w, cfg);
  z = mul_enc_exact_right(z, S.adj(), cfg);
  return FpEval{z.m[0][0], z.m[1][0], scale};
}

long fp_budget(const Int& D, const Chain& chain_j, const Chain& chain_2p, const Int& k,
               const UniMat& S) {
  // Digit-loss prediction per step, with the Type II cancellation budget
  // taken from the step's own bilinear matrix rather than the worst-case
  // constant. Soundness comes from the enclosures at verification time;
  // the generator retries with doubled precision when this floor is shy.
  double pl = plog(D);
  double loss = 64.0;
  for (const Chain* ch : {&chain_j, &chain_2p}) {
    for (const auto& st : ch->steps) {
      if (std::holds_alternative<TypeIStep>(st)) {
        loss += 5.0;
      } else {
        const auto& t2 = std::get<TypeIIStep>(st);
        loss += 2.0 * log2_abs(t2.b.norm() + 2) + pl + 48.0;
      }
    }
  }
  loss += 8.0 * double(bitlen(k) + 1) + 16.0;
  loss += log2_abs(S.norm() + 1) + pl + 32.0;
  return long(std::ceil(loss)) + 64;
}

// ---------------------------------------------------------------------------
// Solvability certificates.

namespace {

Int pell_modulus(const PellSystem& ps) { return ps.M; }

VerifyResult verify_infra(const DioSystem& sys, const InfraCert& ic) {
  if (frontend::classify(sys) != SysClass::kIndefinite)
    return {false, "not-indefinite"};
  PellSystem ps = frontend::to_pell(sys);
  const Int& D = ps.D;
  // (i)
  if (ic.h <= 0) return {false, "h-nonpositive"};
  if (ps.g % (ic.h * ic.h) != 0) return {false, "h-square-divisor"};
  if (ic.G != ps.g / (ic.h * ic.h)) return {false, "g-mismatch"};
  // (ii)
  QForm q0{ic.G, ic.B, ic.C};
  if (forms::determinant(q0) != D) return {false, "q0-determinant"};
  if (!properly_primitive(q0)) return {false, "q0-primitivity"};
  note_mat(ic.S);
  // (iii)
  if (ic.S.det() != 1) return {false, "s-determinant"};
  if (!(apply_transform(q0, ic.S) == ic.qred)) return {false, "s-reduction"};
  if (!is_reduced(ic.qred)) return {false, "qred-not-reduced"};
  // (iv)
  Chain cj = ic.chain_j, c2p = ic.chain_2p;
  VerifyResult r = materialize_chain(cj, D, "chain-j");
  if (!r.ok) return r;
  r = materialize_chain(c2p, D, "chain-2p");
  if (!r.ok) return r;
  if (!(cj.forms.back() == ic.qred)) return {false, "chain-endpoint"};
  if (!(c2p.forms.back() == reduced_identity(D).first))
    return {false, "chain2p-endpoint"};
  if (bitlen(ic.k) > 256) return {false, "k-too-large"};
  // (v): precision budget, congruences mod cD*Gamma, then certified signs.
  long budget = fp_budget(D, cj, c2p, ic.k, ic.S);
  if (ic.fp_prec < budget) return {false, "fp-prec-too-small"};
  if (ic.fp_prec > 16 * budget + 4096) return {false, "fp-prec-too-large"};
  const Int& M = pell_modulus(ps);
  try {
    auto w = eval_chain_mod(cj, c2p, ic.k, ic.m, M);
    Int lam = isqrt(D);
    // Z = S* W S^-1 (mod M) with S* = [[1, lam],[0, 1]]
    Mat2 wm{{{w[0][0], w[0][1]}, {w[1][0], w[1][1]}}};
    Mat2 z = mul_mod(from_uni_mod(UniMat{{{Int(1), lam}, {Int(0), Int(1)}}}, M), wm, M);
    z = mul_mod(z, from_uni_mod(ic.S.adj(), M), M);
    Int y1 = mod_pos(ic.h * z.m[0][0], M);
    Int y2 = mod_pos(ic.h * z.m[1][0], M);
    if (mod_pos(y1 - ps.cong1_target, ps.cong1_mod) != 0)
      return {false, "congruence-1"};
    if (mod_pos(-sys.b * y1 + D * y2 - ps.cong2_target, M) != 0)
      return {false, "congruence-2"};
    // Sign-case availability is an exact integer predicate.
    if (ic.sign_case == SignCase::k315a && !ps.case_a)
      return {false, "sign-case-unavailable"};
    if (ic.sign_case == SignCase::k315b && !ps.case_b)
      return {false, "sign-case-unavailable"};
    FpEval ev = eval_chain_fp(cj, c2p, ic.k, ic.m, D, ic.S, ic.fp_prec);
    int s1 = floatp::sign_certified(ev.u1) * ev.scale_sign;
    int s2 = floatp::sign_certified(ev.u2) * ev.scale_sign;
    if (s1 == 0 || s2 == 0) return {false, "sign-uncertified"};
    if (s1 != 1) return {false, "sign-y1"};
    int want = ic.sign_case == SignCase::k315a ? 1 : -1;
    if (s2 != want) return {false, "sign-y2"};
  } catch (const CertInvalid& e) {
    return {false, std::string("invalid:") + e.what()};
  } catch (const floatp::Overflow& e) {
    return {false, std::string("fp-overflow:") + e.what()};
  }
  // W is never materialized: every integer this path touched stays below
  // the precision-plus-modulus budget.
  if (t_peak_bits > ic.fp_prec + 64 + long(bitlen(M)))
    return {false, "peak-bits-exceeded"};
  return {true, ""};
}

}  // namespace

VerifyResult verify_solvability_cert(const DioSystem& sys, const SolvCert& cert) {
  t_peak_bits = 0;
  if (!(cert.sys == sys)) return {false, "system-mismatch"};
  if (cert.is_direct()) {
    const DirectCert& dc = cert.direct();
    note_bits(dc.x1);
    note_bits(dc.x2);
    if (dc.x1 < 0 || dc.x2 < 0) return {false, "negative-solution"};
    if (mod_pos(dc.x1, sys.gamma) != sys.alpha1 ||
        mod_pos(dc.x2, sys.gamma) != sys.alpha2)
      return {false, "congruence-direct"};
    if (sys.eval(dc.x1, dc.x2) != 0) return {false, "equation-direct"};
    return {true, ""};
  }
  return verify_infra(sys, cert.infra());
}

std::variant<SolvCert, GenFailure> gen_solvability_cert(const DioSystem& sys,
                                                        const GenOptions& opts) {
  frontend::SolveOptions sopt;
  sopt.want_infra = opts.force_cert;
  sopt.factor_bits = opts.factor_bits;
  frontend::SolveOutcome res;
  try {
    res = frontend::solve(sys, sopt);
  } catch (const ResourceError& e) {
    return GenFailure{true, e.what()};
  }
  if (!res.solvable) return GenFailure{false, res.detail};

  auto make_direct = [&]() -> std::variant<SolvCert, GenFailure> {
    SolvCert cert{sys, DirectCert{res.solution->first, res.solution->second}};
    auto chk = verify_solvability_cert(sys, cert);
    if (!chk.ok) throw InternalError("direct certificate self-check: " + chk.reason);
    return cert;
  };

  if (!opts.force_cert && res.solution) return make_direct();
  if (!res.infra) {
    if (res.solution) return make_direct();  // force_cert fallback
    return GenFailure{false, "no encodable witness"};
  }
  const frontend::InfraWitness& wit = *res.infra;
  PellSystem ps = frontend::to_pell(sys);
  forms::Cycle cy = forms::principal_cycle(ps.D);
  InfraCert ic;
  ic.h = wit.h;
  ic.G = wit.G;
  ic.B = wit.B;
  ic.C = wit.C;
  ic.S = wit.S;
  ic.qred = wit.qred;
  ic.sign_case = wit.sign_case == frontend::SignCase::k315a ? SignCase::k315a
                                                            : SignCase::k315b;
  ic.k = wit.k;
  ic.m = wit.m;
  ic.chain_j = compose::doubling_chain(cy, wit.j);
  ic.chain_2p = compose::doubling_chain(cy, long(cy.period()));
  long budget = fp_budget(ps.D, ic.chain_j, ic.chain_2p, ic.k, ic.S);
  long p = budget;
  if (opts.fp_prec_override > p) p = opts.fp_prec_override;
  long p_cap = 16 * budget + 4096;
  for (; p <= p_cap; p *= 2) {
    ic.fp_prec = p;
    SolvCert cert{sys, ic};
    auto chk = verify_solvability_cert(sys, cert);
    if (chk.ok) return cert;
    if (chk.reason != "sign-uncertified") {
      // Not a precision problem; a generation bug.
      throw InternalError("infra certificate self-check: " + chk.reason);
    }
  }
  if (res.solution && !opts.force_cert) return make_direct();
  return GenFailure{true, "fp precision budget exhausted"};
}

std::pair<Int, Int> reconstruct_solution_mod(const SolvCert& cert, const Int& M) {
  if (M < 1) throw DomainError("reconstruct_solution_mod: bad modulus");
  const DioSystem& sys = cert.sys;
  if (cert.is_direct())
    return {mod_pos(cert.direct().x1, M), mod_pos(cert.direct().x2, M)};
  const InfraCert& ic = cert.infra();
  PellSystem ps = frontend::to_pell(sys);
  const Int& D = ps.D;
  Int big = abs(sys.c) * D * M;
  Chain cj = ic.chain_j, c2p = ic.chain_2p;
  auto r1 = materialize_chain(cj, D, "chain-j");
  auto r2 = materialize_chain(c2p, D, "chain-2p");
  if (!r1.ok || !r2.ok) throw CertInvalid("reconstruct: invalid chain");
  auto w = eval_chain_mod(cj, c2p, ic.k, ic.m, big);
  Int lam = isqrt(D);
  Mat2 wm{{{w[0][0], w[0][1]}, {w[1][0], w[1][1]}}};
  Mat2 z = mul_mod(from_uni_mod(UniMat{{{Int(1), lam}, {Int(0), Int(1)}}}, big), wm,
                   big);
  z = mul_mod(z, from_uni_mod(ic.S.adj(), big), big);
  Int y1 = mod_pos(ic.h * z.m[0][0], big);
  Int y2 = mod_pos(ic.h * z.m[1][0], big);
  const Int &b = sys.b, &c = sys.c, &d = sys.d, &e = sys.e, &a = sys.a;
  Int n1 = mod_pos(y1 - (b * e - c * d), big);
  if (n1 % D != 0) throw CertInvalid("reconstruct: x1 not integral");
  Int x1 = mod_pos(n1 / D, M);
  Int n2 = mod_pos(-b * y1 + D * y2 + c * (a * e - b * d), big);
  Int cd = c * D;
  if (n2 % abs(cd) != 0) throw CertInvalid("reconstruct: x2 not integral");
  Int q = n2 / abs(cd);
  Int x2 = mod_pos(sgn(cd) < 0 ? -q : q, M);
  return {x1, x2};
}

// ---------------------------------------------------------------------------
// Serialization.

namespace {

void put_mat(std::ostream& os, const UniMat& s) {
  os << s.m[0][0] << " " << s.m[0][1] << " " << s.m[1][0] << " " << s.m[1][1];
}

void put_chain(std::ostream& os, const std::string& label, const Chain& ch) {
  os << "CHAIN " << label << " " << ch.steps.size() << "\n";
  for (const auto& st : ch.steps) {
    if (std::holds_alternative<TypeIStep>(st)) {
      os << "  T1 ";
      put_mat(os, std::get<TypeIStep>(st).s);
      os << "\n";
    } else {
      const auto& t2 = std::get<TypeIIStep>(st);
      os << "  T2 " << t2.k1 << " " << t2.k2;
      for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 4; ++j) os << " " << t2.b.m[i][j];
      os << "\n";
    }
  }
}

struct LineReader {
  std::istringstream in;
  long lineno = 0;
  explicit LineReader(const std::string& text) : in(text) {}

  // Next nonempty line split into tokens.
  std::vector<std::string> next() {
    std::string line;
    while (std::getline(in, line)) {
      ++lineno;
      std::istringstream ls(line);
      std::vector<std::string> toks;
      std::string t;
      while (ls >> t) toks.push_back(t);
      if (!toks.empty()) return toks;
    }
    throw CertInvalid("parse error line " + std::to_string(lineno) +
                      ": unexpected end of input");
  }

  [[noreturn]] void fail(const std::string& what) {
    throw CertInvalid("parse error line " + std::to_string(lineno) + ": " + what);
  }
};

Int to_int(LineReader& lr, const std::string& tok) {
  try {
    return Int(tok);
  } catch (const std::invalid_argument&) {
    lr.fail("bad integer '" + tok + "'");
  }
}

std::vector<std::string> expect(LineReader& lr, const std::string& head,
                                size_t ntoks) {
  auto toks = lr.next();
  if (toks[0] != head) lr.fail("expected " + head);
  if (ntoks != 0 && toks.size() != ntoks)
    lr.fail(head + ": expected " + std::to_string(ntoks) + " tokens");
  return toks;
}

UniMat mat_from(LineReader& lr, const std::vector<std::string>& toks, size_t at) {
  return UniMat{{{to_int(lr, toks[at]), to_int(lr, toks[at + 1])},
                 {to_int(lr, toks[at + 2]), to_int(lr, toks[at + 3])}}};
}

Chain chain_from(LineReader& lr, const std::string& label) {
  auto head = expect(lr, "CHAIN", 3);
  if (head[1] != label) lr.fail("expected CHAIN " + label);
  long n = std::stol(head[2]);
  if (n < 0 || n > 2000000) lr.fail("bad chain length");
  Chain ch;
  for (long i = 0; i < n; ++i) {
    auto toks = lr.next();
    if (toks[0] == "T1") {
      if (toks.size() != 5) lr.fail("T1: expected 4 entries");
      ch.steps.push_back(TypeIStep{mat_from(lr, toks, 1)});
    } else if (toks[0] == "T2") {
      if (toks.size() != 11) lr.fail("T2: expected 10 entries");
      size_t k1 = std::stoul(toks[1]), k2 = std::stoul(toks[2]);
      if (k1 > size_t(i) || k2 > size_t(i)) lr.fail("T2: forward reference");
      compose::BiMat b;
      for (int r = 0; r < 2; ++r)
        for (int c = 0; c < 4; ++c) b.m[r][c] = to_int(lr, toks[3 + 4 * r + c]);
      ch.steps.push_back(TypeIIStep{k1, k2, b});
    } else {
      lr.fail("expected T1 or T2");
    }
  }
  return ch;
}

}  // namespace

std::string serialize(const SolvCert& cert) {
  std::ostringstream os;
  os << "BQD-CERT 1\n";
  os << "KIND " << (cert.is_direct() ? "direct" : "infra") << "\n";
  const DioSystem& s = cert.sys;
  os << "SYSTEM " << s.a << " " << s.b << " " << s.c << " " << s.d << " " << s.e
     << " " << s.f << " " << s.gamma << " " << s.alpha1 << " " << s.alpha2 << "\n";
  if (cert.is_direct()) {
    os << "X " << cert.direct().x1 << " " << cert.direct().x2 << "\n";
  } else {
    const InfraCert& ic = cert.infra();
    os << "H " << ic.h << "\n";
    os << "Q0 " << ic.G << " " << ic.B << " " << ic.C << "\n";
    os << "S ";
    put_mat(os, ic.S);
    os << "\n";
    os << "QRED " << ic.qred.a << " " << ic.qred.b << " " << ic.qred.c << "\n";
    os << "SIGNCASE " << (ic.sign_case == SignCase::k315a ? "3.15a" : "3.15b")
       << "\n";
    os << "K " << ic.k << "\n";
    os << "M " << ic.m << "\n";
    os << "FPPREC " << ic.fp_prec << "\n";
    put_chain(os, "J", ic.chain_j);
    put_chain(os, "2P", ic.chain_2p);
  }
  os << "END\n";
  return os.str();
}

SolvCert parse(const std::string& text) {
  LineReader lr(text);
  auto magic = expect(lr, "BQD-CERT", 2);
  if (magic[1] != "1") lr.fail("unsupported version");
  auto kind = expect(lr, "KIND", 2);
  auto sysl = expect(lr, "SYSTEM", 10);
  DioSystem sys;
  sys.a = to_int(lr, sysl[1]);
  sys.b = to_int(lr, sysl[2]);
  sys.c = to_int(lr, sysl[3]);
  sys.d = to_int(lr, sysl[4]);
  sys.e = to_int(lr, sysl[5]);
  sys.f = to_int(lr, sysl[6]);
  sys.gamma = to_int(lr, sysl[7]);
  sys.alpha1 = to_int(lr, sysl[8]);
  sys.alpha2 = to_int(lr, sysl[9]);
  if (sys.gamma <= 0) lr.fail("nonpositive modulus");
  if (kind[1] == "direct") {
    auto xl = expect(lr, "X", 3);
    DirectCert dc{to_int(lr, xl[1]), to_int(lr, xl[2])};
    expect(lr, "END", 1);
    return SolvCert{sys, dc};
  }
  if (kind[1] != "infra") lr.fail("bad KIND");
  InfraCert ic;
  auto hl = expect(lr, "H", 2);
  ic.h = to_int(lr, hl[1]);
  auto q0l = expect(lr, "Q0", 4);
  ic.G = to_int(lr, q0l[1]);
  ic.B = to_int(lr, q0l[2]);
  ic.C = to_int(lr, q0l[3]);
  auto sl = expect(lr, "S", 5);
  ic.S = mat_from(lr, sl, 1);
  auto ql = expect(lr, "QRED", 4);
  ic.qred = QForm{to_int(lr, ql[1]), to_int(lr, ql[2]), to_int(lr, ql[3])};
  auto scl = expect(lr, "SIGNCASE", 2);
  if (scl[1] == "3.15a")
    ic.sign_case = SignCase::k315a;
  else if (scl[1] == "3.15b")
    ic.sign_case = SignCase::k315b;
  else
    lr.fail("bad SIGNCASE");
  auto kl = expect(lr, "K", 2);
  ic.k = to_int(lr, kl[1]);
  auto ml = expect(lr, "M", 2);
  ic.m = int(std::stol(ml[1]));
  if (ic.m != 0 && ic.m != 1) lr.fail("bad sign bit");
  auto fl = expect(lr, "FPPREC", 2);
  ic.fp_prec = std::stol(fl[1]);
  if (ic.fp_prec < 1 || ic.fp_prec > (1L << 26)) lr.fail("bad precision");
  ic.chain_j = chain_from(lr, "J");
  ic.chain_2p = chain_from(lr, "2P");
  expect(lr, "END", 1);
  return SolvCert{sys, ic};
}

// ---------------------------------------------------------------------------
// Equivalence certificates.

namespace {

Int content3(const QForm& q) { return gcd(gcd(q.a, q.b), q.c); }
Int content_proper(const QForm& q) { return gcd(gcd(q.a, 2 * q.b), q.c); }

QForm divide_form(const QForm& q, const Int& s) {
  return QForm{q.a / s, q.b / s, q.c / s};
}

QForm inverse_form(const QForm& q) { return QForm{q.a, -q.b, q.c}; }

// Properly primitive companion of an improperly primitive form, per the
// classical 2Q^(i) transforms. which in {1, 2, 3}.
QForm companion(const QForm& q, int which) {
  switch (which) {
    case 1:
      return QForm{2 * q.a, q.b, q.c / 2};
    case 2:
      return QForm{q.a / 2, q.b, 2 * q.c};
    default:
      return QForm{q.a / 2, q.a / 2 + q.b, q.a / 2 + 2 * q.b + 2 * q.c};
  }
}

bool companion_ok(const QForm& q, int which) {
  if (which == 1) return q.c % 2 == 0;
  return q.a % 2 == 0;
}

// Deterministic companion index for the right-hand form.
int pick_companion(const QForm& q) {
  for (int w : {1, 2, 3})
    if (companion_ok(q, w) && properly_primitive(companion(q, w))) return w;
  return 0;
}

}  // namespace

std::variant<EquivCert, NotEquivalent> gen_equivalence_cert(const QForm& q1,
                                                            const QForm& q2) {
  Int D = forms::determinant(q1);
  if (forms::determinant(q2) != D)
    return NotEquivalent{"determinant-mismatch"};
  if (D <= 0 || numtheory::is_square(D))
    throw DomainError("gen_equivalence_cert: forms must be indefinite");
  Int s1 = content3(q1), s2 = content3(q2);
  if (s1 != s2) return NotEquivalent{"content-mismatch"};
  Int sp1 = content_proper(q1), sp2 = content_proper(q2);
  if (sp1 != sp2) return NotEquivalent{"proper-content-mismatch"};
  QForm p1 = divide_form(q1, s1), p2 = divide_form(q2, s1);
  Int Dp = forms::determinant(p1);

  bool improper = content_proper(p1) == 2;
  std::vector<int> comp1_candidates;
  int comp2 = 0;
  if (improper) {
    if (mod_pos(Dp, 4) != 1)
      throw InternalError("gen_equivalence_cert: improper with D != 1 mod 4");
    comp2 = pick_companion(p2);
    if (comp2 == 0) return NotEquivalent{"no-primitive-companion"};
    if (mod_pos(Dp, 8) == 1) {
      comp1_candidates = {pick_companion(p1)};
      if (comp1_candidates[0] == 0) return NotEquivalent{"no-primitive-companion"};
    } else {
      for (int w : {1, 2, 3})
        if (companion_ok(p1, w) && properly_primitive(companion(p1, w)))
          comp1_candidates.push_back(w);
      if (comp1_candidates.empty()) return NotEquivalent{"no-primitive-companion"};
    }
  } else {
    comp1_candidates = {0};
  }

  forms::Cycle cy = forms::principal_cycle(Dp);
  for (int w1 : comp1_candidates) {
    QForm f1 = improper ? companion(p1, w1) : p1;
    QForm f2 = improper ? companion(p2, comp2) : p2;
    auto [q1s, ms1] = forms::reduce(f1);
    auto [q2bs, ms2] = forms::reduce(inverse_form(f2));
    auto [q3s, bc] = compose::compose_reduced(q1s, q2bs);
    long idx = cy.index_of(q3s);
    if (idx < 0) continue;  // not the principal class
    EquivCert cert;
    cert.q1 = q1;
    cert.q2 = q2;
    cert.sigma1 = s1;
    cert.branch = !improper          ? EquivBranch::kProper
                  : mod_pos(Dp, 8) == 1 ? EquivBranch::kMod8Is1
                                        : EquivBranch::kMod8Is5;
    cert.companion = w1;
    cert.s1 = ms1;
    cert.s2bar = ms2;
    cert.q3star = q3s;
    cert.bc = bc;
    cert.chain = compose::doubling_chain(cy, idx == 0 ? long(cy.period()) : idx);
    auto chk = verify_equivalence_cert(q1, q2, cert);
    if (!chk.ok)
      throw InternalError("equivalence certificate self-check: " + chk.reason);
    return cert;
  }
  return NotEquivalent{"composition-not-principal"};
}

VerifyResult verify_equivalence_cert(const QForm& q1, const QForm& q2,
                                     const EquivCert& cert) {
  t_peak_bits = 0;
  if (!(cert.q1 == q1) || !(cert.q2 == q2)) return {false, "form-mismatch"};
  Int D = forms::determinant(q1);
  if (forms::determinant(q2) != D) return {false, "determinant-mismatch"};
  if (D <= 0 || numtheory::is_square(D)) return {false, "not-indefinite"};
  Int s1 = content3(q1), s2 = content3(q2);
  if (s1 != s2 || s1 != cert.sigma1) return {false, "content-mismatch"};
  if (content_proper(q1) != content_proper(q2)) return {false, "proper-content-mismatch"};
  QForm p1 = divide_form(q1, s1), p2 = divide_form(q2, s1);
  Int Dp = forms::determinant(p1);
  bool improper = content_proper(p1) == 2;
  QForm f1 = p1, f2 = p2;
  if (improper) {
    if (cert.branch == EquivBranch::kProper) return {false, "branch-mismatch"};
    if (mod_pos(Dp, 8) == 1 && cert.branch != EquivBranch::kMod8Is1)
      return {false, "branch-mismatch"};
    if (mod_pos(Dp, 8) == 5 && cert.branch != EquivBranch::kMod8Is5)
      return {false, "branch-mismatch"};
    int comp2 = pick_companion(p2);
    if (comp2 == 0) return {false, "no-primitive-companion"};
    if (cert.companion < 1 || cert.companion > 3 ||
        !companion_ok(p1, cert.companion))
      return {false, "bad-companion"};
    if (cert.branch == EquivBranch::kMod8Is1 && cert.companion != pick_companion(p1))
      return {false, "bad-companion"};
    f1 = companion(p1, cert.companion);
    f2 = companion(p2, comp2);
    if (!properly_primitive(f1) || !properly_primitive(f2))
      return {false, "companion-not-primitive"};
  } else {
    if (cert.branch != EquivBranch::kProper) return {false, "branch-mismatch"};
    if (!properly_primitive(p1) || !properly_primitive(p2))
      return {false, "not-primitive"};
  }
  note_mat(cert.s1);
  note_mat(cert.s2bar);
  if (cert.s1.det() != 1 || cert.s2bar.det() != 1) return {false, "s-determinant"};
  QForm q1s = apply_transform(f1, cert.s1);
  QForm q2bs = apply_transform(inverse_form(f2), cert.s2bar);
  if (!is_reduced(q1s) || !is_reduced(q2bs)) return {false, "reduction-not-reduced"};
  auto chk = compose::verify_composition(q1s, q2bs, cert.q3star, cert.bc);
  if (!chk.ok) return {false, "composition-check"};
  if (!is_reduced(cert.q3star)) return {false, "q3-not-reduced"};
  Chain ch = cert.chain;
  VerifyResult r = materialize_chain(ch, Dp, "chain");
  if (!r.ok) return r;
  if (!(ch.forms.back() == cert.q3star)) return {false, "chain-endpoint"};
  return {true, ""};
}

std::string serialize_equiv(const EquivCert& cert) {
  std::ostringstream os;
  os << "BQD-EQCERT 1\n";
  auto put_form = [&](const char* tag, const QForm& q) {
    os << tag << " " << q.a << " " << q.b << " " << q.c << "\n";
  };
  put_form("Q1", cert.q1);
  put_form("Q2", cert.q2);
  os << "SIGMA1 " << cert.sigma1 << "\n";
  os << "BRANCH "
     << (cert.branch == EquivBranch::kProper
             ? "pp"
             : cert.branch == EquivBranch::kMod8Is1 ? "mod8-1" : "mod8-5")
     << "\n";
  os << "COMPANION " << cert.companion << "\n";
  os << "S1 ";
  put_mat(os, cert.s1);
  os << "\nS2BAR ";
  put_mat(os, cert.s2bar);
  os << "\n";
  put_form("Q3", cert.q3star);
  os << "BC";
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 4; ++j) os << " " << cert.bc.m[i][j];
  os << "\n";
  put_chain(os, "J", cert.chain);
  os << "END\n";
  return os.str();
}

EquivCert parse_equiv(const std::string& text) {
  LineReader lr(text);
  auto magic = expect(lr, "BQD-EQCERT", 2);
  if (magic[1] != "1") lr.fail("unsupported version");
  EquivCert cert;
  auto q1l = expect(lr, "Q1", 4);
  cert.q1 = QForm{to_int(lr, q1l[1]), to_int(lr, q1l[2]), to_int(lr, q1l[3])};
  auto q2l = expect(lr, "Q2", 4);
  cert.q2 = QForm{to_int(lr, q2l[1]), to_int(lr, q2l[2]), to_int(lr, q2l[3])};
  auto sl = expect(lr, "SIGMA1", 2);
  cert.sigma1 = to_int(lr, sl[1]);
  auto bl = expect(lr, "BRANCH", 2);
  if (bl[1] == "pp")
    cert.branch = EquivBranch::kProper;
  else if (bl[1] == "mod8-1")
    cert.branch = EquivBranch::kMod8Is1;
  else if (bl[1] == "mod8-5")
    cert.branch = EquivBranch::kMod8Is5;
  else
    lr.fail("bad BRANCH");
  auto cl = expect(lr, "COMPANION", 2);
  cert.companion = int(std::stol(cl[1]));
  auto s1l = expect(lr, "S1", 5);
  cert.s1 = mat_from(lr, s1l, 1);
  auto s2l = expect(lr, "S2BAR", 5);
  cert.s2bar = mat_from(lr, s2l, 1);
  auto q3l = expect(lr, "Q3", 4);
  cert.q3star = QForm{to_int(lr, q3l[1]), to_int(lr, q3l[2]), to_int(lr, q3l[3])};
  auto bcl = expect(lr, "BC", 9);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 4; ++j) cert.bc.m[i][j] = to_int(lr, bcl[1 + 4 * i + j]);
  cert.chain = chain_from(lr, "J");
  expect(lr, "END", 1);
  return cert;
}

}  // namespace bqd::certify

#include "bqd/forms.hpp"

#include "bqd/numtheory.hpp"

namespace bqd::forms {

using numtheory::isqrt;
using numtheory::is_square;

UniMat UniMat::operator*(const UniMat& o) const {
  UniMat r;
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j)
      r.m[i][j] = m[i][0] * o.m[0][j] + m[i][1] * o.m[1][j];
  return r;
}

Int UniMat::norm() const {
  Int n = 0;
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) n = std::max(n, Int(abs(m[i][j])));
  return n;
}

std::string UniMat::str() const {
  return "[[" + m[0][0].get_str() + "," + m[0][1].get_str() + "],[" +
         m[1][0].get_str() + "," + m[1][1].get_str() + "]]";
}

Int determinant(const QForm& q) { return q.b * q.b - q.a * q.c; }

bool properly_primitive(const QForm& q) {
  return gcd(gcd(q.a, 2 * q.b), q.c) == 1;
}

QForm apply_transform(const QForm& q, const UniMat& s) {
  if (s.det() != 1) throw DomainError("apply_transform: det(S) != 1");
  // S^t Q S with Q = [[a,b],[b,c]].
  const Int &p = s.m[0][0], &r = s.m[0][1], &t = s.m[1][0], &u = s.m[1][1];
  Int a2 = q.a * p * p + 2 * q.b * p * t + q.c * t * t;
  Int b2 = q.a * p * r + q.b * (p * u + r * t) + q.c * t * u;
  Int c2 = q.a * r * r + 2 * q.b * r * u + q.c * u * u;
  return QForm{a2, b2, c2};
}

namespace {

void require_indefinite(const Int& D, const char* who) {
  if (D <= 0 || is_square(D))
    throw DomainError(std::string(who) + ": determinant must be positive nonsquare");
}

// True iff x < sqrt(D), for integer x and nonsquare D.
bool below_sqrt(const Int& x, const Int& D) {
  if (x < 0) return true;
  return x * x < D;
}

// floor((b + sqrt D) / n) for n > 0, exact.
Int floor_div_sqrt(const Int& b, const Int& D, const Int& n) {
  Int t = (b + isqrt(D)) / n;
  while (!below_sqrt(t * n - b, D)) t -= 1;          // ensure t*n <= b + sqrt D
  while (below_sqrt((t + 1) * n - b, D)) t += 1;     // maximality
  return t;
}

}  // namespace

bool is_reduced(const QForm& q) {
  Int D = determinant(q);
  require_indefinite(D, "is_reduced");
  if (q.b <= 0) return false;
  if (!below_sqrt(q.b, D)) return false;
  Int aa = abs(q.a);
  // sqrt D - b < |a| <=> D < (|a| + b)^2
  if (D >= (aa + q.b) * (aa + q.b)) return false;
  // |a| < sqrt D + b <=> |a| - b < sqrt D
  if (!below_sqrt(aa - q.b, D)) return false;
  return true;
}

std::pair<QForm, UniMat> reduced_identity(const Int& D) {
  require_indefinite(D, "reduced_identity");
  Int lam = isqrt(D);
  QForm itilde{Int(1), lam, lam * lam - D};
  UniMat s{{{Int(1), lam}, {Int(0), Int(1)}}};
  return {itilde, s};
}

std::pair<QForm, UniMat> reduce(const QForm& q) {
  Int D = determinant(q);
  require_indefinite(D, "reduce");
  QForm cur = q;
  UniMat acc = UniMat::identity();
  // Each step sends [a,2b,c] to [c,2b',c'] via [[0,1],[-1,lam]] where
  // b' = -(b + lam*c) is chosen in the normalization window.
  size_t guard = 2 * bitlen(std::max(std::max(abs(q.a), abs(q.b)), abs(q.c))) + 64;
  for (size_t it = 0; it <= guard; ++it) {
    if (is_reduced(cur)) return {cur, acc};
    Int bp;
    Int ac = abs(cur.c);
    if (ac * ac >= D) {
      // minimal absolute residue of -b mod |c|: bp in (-|c|/2, |c|/2]
      bp = -cur.b % ac;
      if (2 * bp > ac) bp -= ac;
      if (2 * bp <= -ac) bp += ac;
    } else {
      // unique bp = -b (mod |c|) in (sqrt D - |c|, sqrt D)
      Int lo = isqrt(D) - ac + 1;  // smallest candidate
      bp = lo + ((-cur.b - lo) % ac + ac) % ac;
    }
    Int lam = -(cur.b + bp) / cur.c;
    if (-(cur.b + bp) % cur.c != 0)
      throw InternalError("reduce: translation not integral");
    UniMat s{{{Int(0), Int(1)}, {Int(-1), lam}}};
    cur = apply_transform(cur, s);
    acc = acc * s;
  }
  throw InternalError("reduce: did not terminate");
}

NeighborStep right_neighbor(const QForm& q) {
  Int D = determinant(q);
  if (!is_reduced(q)) throw DomainError("right_neighbor: form not reduced");
  // lambda*c is the unique multiple of |c| in (-sqrt D - b, -sqrt D - b + |c|).
  Int t = floor_div_sqrt(q.b, D, abs(q.c));  // floor((b + sqrt D)/|c|)
  Int mu = -t * abs(q.c);
  Int lam = sgn(q.c) > 0 ? -t : t;
  if (lam * q.c != mu) throw InternalError("right_neighbor: lambda mismatch");
  UniMat s{{{Int(0), Int(1)}, {Int(-1), lam}}};
  QForm next = apply_transform(q, s);
  if (next.a != q.c) throw InternalError("right_neighbor: leading coefficient");
  if (!is_reduced(next)) throw InternalError("right_neighbor: result not reduced");
  return {next, s, lam};
}

long Cycle::index_of(const QForm& q) const {
  if (index_.empty()) build_index();
  auto it = index_.find(q.a.get_str() + "|" + q.b.get_str());
  if (it == index_.end()) return -1;
  if (forms[it->second] != q) return -1;
  return it->second;
}

void Cycle::build_index() const {
  for (size_t i = 0; i < forms.size(); ++i)
    index_.emplace(forms[i].a.get_str() + "|" + forms[i].b.get_str(), long(i));
}

Cycle principal_cycle(const Int& D) {
  require_indefinite(D, "principal_cycle");
  Cycle cy;
  cy.D = D;
  cy.lambda0 = isqrt(D);
  auto [itilde, s0] = reduced_identity(D);
  QForm cur = itilde;
  while (true) {
    NeighborStep st = right_neighbor(cur);
    cy.forms.push_back(cur);
    cy.steps.push_back(st.s);
    cy.lambdas.push_back(st.lambda);
    cur = st.next;
    if (cur == itilde) break;
    if (Int(static_cast<unsigned long>(cy.forms.size())) > 20 * isqrt(D) + 1000)
      throw InternalError("principal_cycle: cycle did not close");
  }
  if (cy.forms.size() % 2 != 0)
    throw InternalError("principal_cycle: odd period");
  return cy;
}

UniMat simple_equiv_matrix(const Cycle& cycle, long j) {
  UniMat acc = UniMat::identity();
  long n = long(cycle.period());
  if (j >= 0) {
    for (long i = 1; i <= j; ++i) {
      long idx = (i - 1) % n;  // S^(i) with periodic extension
      acc = acc * cycle.steps[idx];
    }
  } else {
    // Extend by the step recurrence L_{v-1} = L_v (S^(v))^-1 so that
    // L_{j+2kp} = U^k L_j holds for every integer j.
    for (long v = 0; v > j; --v) {
      long idx = ((v % n) + n) % n;  // S^(v) lives at steps[idx - 1], idx in [1, 2p]
      if (idx == 0) idx = n;
      acc = acc * cycle.steps[idx - 1].adj();
    }
  }
  return acc;
}

Automorph fundamental_automorph(const Cycle& cycle) {
  UniMat U = simple_equiv_matrix(cycle, long(cycle.period()));
  // The automorph of [1, 2l, mu] for the Pell pair (t, u) is
  // [[t - l*u, -mu*u], [u, t + l*u]]; read (t, u) back off U.
  Int trace = U.m[0][0] + U.m[1][1];
  if (trace % 2 != 0) throw InternalError("fundamental_automorph: odd trace");
  Int t1 = abs(trace) / 2;
  Int u1 = abs(U.m[1][0]);
  if (t1 * t1 - cycle.D * u1 * u1 != 1)
    throw InternalError("fundamental_automorph: Pell identity failed");
  if (t1 <= 0 || u1 <= 0)
    throw InternalError("fundamental_automorph: degenerate solution");
  QForm itilde = cycle.forms[0];
  if (apply_transform(itilde, U) != itilde)
    throw InternalError("fundamental_automorph: not an automorph");
  return {U, t1, u1};
}

}  // namespace bqd::forms

#pragma once

#include <unordered_map>
#include <vector>

#include "bqd/int.hpp"

namespace bqd::forms {

// Integral binary quadratic form [a, 2b, c]; b is half the middle
// coefficient, determinant D = b^2 - ac.
struct QForm {
  Int a, b, c;

  bool operator==(const QForm& o) const { return a == o.a && b == o.b && c == o.c; }
  bool operator!=(const QForm& o) const { return !(*this == o); }
  std::string str() const {
    return "[" + a.get_str() + "," + Int(2 * b).get_str() + "," + c.get_str() + "]";
  }
};

// 2x2 integer matrix. Equivalence transforms require det = +1; callers
// that need det = -1 utility transforms say so explicitly.
struct UniMat {
  Int m[2][2];

  static UniMat identity() { return UniMat{{{Int(1), Int(0)}, {Int(0), Int(1)}}}; }
  Int det() const { return m[0][0] * m[1][1] - m[0][1] * m[1][0]; }
  UniMat operator*(const UniMat& o) const;
  // Adjugate; equals the inverse when det = 1.
  UniMat adj() const {
    return UniMat{{{m[1][1], -m[0][1]}, {-m[1][0], m[0][0]}}};
  }
  bool operator==(const UniMat& o) const {
    return m[0][0] == o.m[0][0] && m[0][1] == o.m[0][1] && m[1][0] == o.m[1][0] &&
           m[1][1] == o.m[1][1];
  }
  UniMat neg() const {
    return UniMat{{{-m[0][0], -m[0][1]}, {-m[1][0], -m[1][1]}}};
  }
  Int norm() const;  // max |entry|
  std::string str() const;
};

Int determinant(const QForm& q);

bool properly_primitive(const QForm& q);

// S^t Q S; requires det S = 1.
QForm apply_transform(const QForm& q, const UniMat& s);

// Exact test of 0 < b < sqrt(D) and sqrt(D) - b < |a| < sqrt(D) + b.
// Requires D > 0 nonsquare.
bool is_reduced(const QForm& q);

// Gauss reduction for indefinite forms. Returns the reduced form and the
// det-1 matrix S with apply_transform(q, S) equal to it.
std::pair<QForm, UniMat> reduce(const QForm& q);

// Reduced identity form [1, 2*lam, lam^2 - D] with lam = floor(sqrt D)
// and the translation matrix [[1, lam], [0, 1]].
std::pair<QForm, UniMat> reduced_identity(const Int& D);

struct NeighborStep {
  QForm next;
  UniMat s;  // [[0,1],[-1,lambda]]
  Int lambda;
};

// Unique right neighbor of a reduced form.
NeighborStep right_neighbor(const QForm& q);

// The principal cycle of determinant D: forms Q^(0)..Q^(2p-1) starting at
// the reduced identity form, step matrices S^(1)..S^(2p), lambdas.
struct Cycle {
  Int D;
  Int lambda0;                 // floor(sqrt D)
  std::vector<QForm> forms;    // size 2p, forms[0] = reduced identity
  std::vector<UniMat> steps;   // size 2p, steps[j] maps Q^(j) to Q^(j+1)
  std::vector<Int> lambdas;    // size 2p
  size_t period() const { return forms.size(); }

  // Position of a reduced form in the cycle, or -1.
  long index_of(const QForm& q) const;

 private:
  mutable std::unordered_map<std::string, long> index_;
  void build_index() const;
};

Cycle principal_cycle(const Int& D);

// L_j = S^(1) ... S^(j) for j >= 0, periodic extension for j > 2p;
// L_{-j} = S^(-j) ... S^(-1) for negative arguments. Exact product,
// intended for small |j| and tests.
UniMat simple_equiv_matrix(const Cycle& cycle, long j);

// U = L_2p together with the fundamental Pell solution it encodes.
struct Automorph {
  UniMat U;
  Int t1, u1;
};

Automorph fundamental_automorph(const Cycle& cycle);

}  // namespace bqd::forms

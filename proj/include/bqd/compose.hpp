#pragma once

#include <array>
#include <optional>
#include <variant>
#include <vector>

#include "bqd/forms.hpp"
#include "bqd/int.hpp"

namespace bqd::compose {

using forms::Cycle;
using forms::QForm;
using forms::UniMat;

// 2x4 bilinear matrix witnessing a composition of forms.
struct BiMat {
  Int m[2][4];

  // det of the 2x2 submatrix on columns i < j (0-based).
  Int cofactor(int i, int j) const { return m[0][i] * m[1][j] - m[0][j] * m[1][i]; }
  // The six cofactors in position order 12,13,14,23,24,34.
  std::array<Int, 6> cofactors() const;
  Int norm() const;
  BiMat neg() const;
  bool operator==(const BiMat& o) const;
  std::string str() const;
};

// Index pairs for the six cofactor positions.
inline constexpr int kCofCols[6][2] = {{0, 1}, {0, 2}, {0, 3},
                                       {1, 2}, {1, 3}, {2, 3}};

// B0 = [[1,0,0,D-lam^2],[0,1,1,2 lam]] composing the reduced identity
// form with itself.
BiMat b0_matrix(const Int& D);

enum class ComposeFail {
  kNone,
  kDeterminantMismatch,
  kIdentityMismatch,
  kNotUnimodular,
  kNotOriented,
};

struct ComposeCheck {
  bool ok;
  ComposeFail reason;
};

// Exact check of the degree-(2,2) polynomial identity
// Q1(x) Q2(y) = Q3(B (x tensor y)) plus unimodularity and orientation.
ComposeCheck verify_composition(const QForm& q1, const QForm& q2, const QForm& q3,
                                const BiMat& b);

// Gauss composition of reduced properly primitive forms: a reduced Q3
// with verify_composition(Q1, Q2, Q3, B) true. Documented measured bound
// log2||B|| <= kCompositionLogBound * (1 + log2 D).
std::pair<QForm, BiMat> compose_reduced(const QForm& q1, const QForm& q2);

// Documented bound constant c_B for compose_reduced (measured; the
// chain construction and verifier budgets use it).
inline constexpr double kCompositionLogBound = 12.0;

// Chain length bound constant C_K: K <= C_K * (1 + log2 D)^2.
inline constexpr double kChainLengthBound = 64.0;

// Unique integer solution S3 of S3 B = B0 (S1 tensor S2); CertInvalid on a
// non-integral solve.
UniMat solve_s3(const BiMat& b, const BiMat& b0, const UniMat& s1, const UniMat& s2);

// Derive the composed form Q3 from (Q1, Q2, B) using the invertible
// column pair (1,2); CertInvalid when no integral symmetric Q3 fits.
QForm derive_composed_form(const QForm& q1, const QForm& q2, const BiMat& b);

struct TypeIStep {
  UniMat s;
};
struct TypeIIStep {
  size_t k1, k2;  // chain indices of the composed entries
  BiMat b;
};
using ChainStep = std::variant<TypeIStep, TypeIIStep>;

// A doubling chain: forms[0] is the reduced identity; forms[i] results
// from steps[i-1]; the implicit matrix of the final entry equals L_target.
struct Chain {
  Int D;
  long target = 0;
  std::vector<ChainStep> steps;
  std::vector<QForm> forms;  // size steps.size() + 1

  size_t length() const { return steps.size(); }
};

// Builds a chain reaching Q^(j) with implicit matrix exactly L_j,
// 1 <= j <= 2p. Type II squarings keep the length O((log D)^2).
Chain doubling_chain(const Cycle& cycle, long j);

// Multiplies the chain out exactly (test/oracle use; exponential-size
// entries for large D).
UniMat chain_matrix_exact(const Chain& chain);

}  // namespace bqd::compose

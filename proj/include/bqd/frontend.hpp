#pragma once

#include <optional>
#include <utility>
#include <vector>

#include "bqd/forms.hpp"
#include "bqd/int.hpp"

namespace bqd::frontend {

// A binary quadratic Diophantine system in the even-coefficient
// convention: a x1^2 + 2b x1x2 + c x2^2 + 2d x1 + 2e x2 + f = 0 with
// x_i >= 0 and x_i = alpha_i (mod gamma).
struct DioSystem {
  Int a, b, c, d, e, f;
  Int gamma;
  Int alpha1, alpha2;

  Int eval(const Int& x1, const Int& x2) const;
  bool admissible(const Int& x1, const Int& x2) const;
  Int norm() const;     // ||F||: max coefficient magnitude
  long length() const;  // L(F): total bit length
  bool operator==(const DioSystem& o) const;
};

// Raw user-convention input A x^2 + B xy + C y^2 + D x + E y + F; doubles
// the equation when any of B, D, E is odd.
DioSystem normalize(const Int& A, const Int& B, const Int& C, const Int& D,
                    const Int& E, const Int& F, const Int& gamma = 1,
                    const Int& alpha1 = 0, const Int& alpha2 = 0);

enum class SysClass { kDefinite, kDegenerate, kIndefinite };

SysClass classify(const DioSystem& sys);

// The transformed system y1^2 - D y2^2 = g with congruence targets and
// sign-case predicates.
struct PellSystem {
  DioSystem sys;  // after the c = 0 variable swap, when applied
  bool swapped = false;
  Int D, g;
  Int M;  // |c| * D * gamma

  // y1 = t1 (mod mod1) and -b y1 + D y2 = t2 (mod M)
  Int cong1_target, cong1_mod;
  Int cong2_target;

  bool case_a;  // c(-b + sqrt D) > 0
  bool case_b;  // c(b + sqrt D) < 0

  // (y1, y2) -> (x1, x2) when integral (in the swapped frame; swap back).
  std::optional<std::pair<Int, Int>> map_back(const Int& y1, const Int& y2) const;
  std::pair<Int, Int> forward(const Int& x1, const Int& x2) const;
};

PellSystem to_pell(const DioSystem& sys);

enum class SignCase { k315a, k315b };

// Everything the certificate generator needs from the indefinite search.
struct InfraWitness {
  Int h, G, B, C;
  forms::UniMat S;
  forms::QForm qred;
  long j = 0;  // chain target in [1, 2p]
  Int k;       // signed automorph exponent
  int m = 0;   // global sign bit
  SignCase sign_case = SignCase::k315a;
};

struct SolveOutcome {
  bool solvable = false;
  std::optional<std::pair<Int, Int>> solution;  // explicit admissible pair
  std::optional<InfraWitness> infra;
  std::string detail;
};

struct SolveOptions {
  bool want_infra = false;    // keep searching until an infra witness exists
  unsigned factor_bits = 128; // resource bound for factorizations
};

// Complete solvers per class (definite and degenerate searches are
// exhaustive within their proven bounds).
SolveOutcome solve_definite(const DioSystem& sys);
SolveOutcome solve_degenerate(const DioSystem& sys);
SolveOutcome solve_indefinite(const PellSystem& ps, const SolveOptions& opts = {});

// Classify and dispatch.
SolveOutcome solve(const DioSystem& sys, const SolveOptions& opts = {});

// Test oracle: scan 0 <= x1, x2 <= bound.
std::optional<std::pair<Int, Int>> brute_force_oracle(const DioSystem& sys,
                                                      const Int& bound);

}  // namespace bqd::frontend

#pragma once

#include <optional>
#include <string>
#include <variant>

#include "bqd/compose.hpp"
#include "bqd/floatp.hpp"
#include "bqd/forms.hpp"
#include "bqd/frontend.hpp"
#include "bqd/int.hpp"

namespace bqd::certify {

using compose::BiMat;
using compose::Chain;
using forms::QForm;
using forms::UniMat;
using frontend::DioSystem;
using frontend::SignCase;

struct DirectCert {
  Int x1, x2;
};

struct InfraCert {
  Int h;
  Int G, B, C;  // Q0 = [G, 2B, C]
  UniMat S;     // Q0 -> Qred
  QForm qred;
  SignCase sign_case = SignCase::k315a;
  Int k;  // signed automorph exponent in W = (-1)^m L_2p^k L_j
  int m = 0;
  long fp_prec = 0;
  Chain chain_j;
  Chain chain_2p;
};

struct SolvCert {
  DioSystem sys;
  std::variant<DirectCert, InfraCert> body;

  bool is_direct() const { return std::holds_alternative<DirectCert>(body); }
  const DirectCert& direct() const { return std::get<DirectCert>(body); }
  const InfraCert& infra() const { return std::get<InfraCert>(body); }
};

struct VerifyResult {
  bool ok = false;
  std::string reason;  // machine-readable code on failure
};

struct GenOptions {
  bool force_cert = false;   // skip the direct shortcut; emit Infra if possible
  long fp_prec_override = 0; // 0 = automatic budget
  unsigned factor_bits = 128;
};

struct GenFailure {
  bool resource = false;
  std::string reason;
};

// Certificate generation; Unsolvable is reported via GenFailure with
// resource = false.
std::variant<SolvCert, GenFailure> gen_solvability_cert(const DioSystem& sys,
                                                        const GenOptions& opts = {});

VerifyResult verify_solvability_cert(const DioSystem& sys, const SolvCert& cert);

// W mod M as a 2x2 nonnegative residue matrix, evaluated without ever
// materializing W (Type II steps go through the modulus split and CRT).
std::array<std::array<Int, 2>, 2> eval_chain_mod(const Chain& chain_j,
                                                 const Chain& chain_2p, const Int& k,
                                                 int m, const Int& M);

// Sound enclosures of u1, u2 (the first column of S*^-1 W S^-1) at
// precision p; the boolean is the sign of the dropped positive scale.
struct FpEval {
  floatp::Enclosure u1, u2;
  int scale_sign = 1;
};

FpEval eval_chain_fp(const Chain& chain_j, const Chain& chain_2p, const Int& k, int m,
                     const Int& D, const UniMat& S, long p);

// Residues of the admissible solution the certificate encodes.
std::pair<Int, Int> reconstruct_solution_mod(const SolvCert& cert, const Int& M);

// Minimal fp precision the verifier accepts for these chains (the
// generator starts from the same budget).
long fp_budget(const Int& D, const Chain& chain_j, const Chain& chain_2p, const Int& k,
               const UniMat& S);

std::string serialize(const SolvCert& cert);
SolvCert parse(const std::string& text);

// --- Equivalence certificates -------------------------------------------

enum class EquivBranch { kProper, kMod8Is1, kMod8Is5 };

struct EquivCert {
  QForm q1, q2;      // original forms
  Int sigma1;        // common content divided out
  EquivBranch branch = EquivBranch::kProper;
  int companion = 0;  // which companion pair matched (1..3) when improper
  // Data for the properly primitive pair (P1, P2) derived from the branch:
  UniMat s1;      // reduces P1
  UniMat s2bar;   // reduces the inverse form of P2
  QForm q3star;   // reduced composition of the two reductions
  BiMat bc;
  Chain chain;    // reduced identity -> q3star
};

struct NotEquivalent {
  std::string reason;
};

std::variant<EquivCert, NotEquivalent> gen_equivalence_cert(const QForm& q1,
                                                            const QForm& q2);

VerifyResult verify_equivalence_cert(const QForm& q1, const QForm& q2,
                                     const EquivCert& cert);

std::string serialize_equiv(const EquivCert& cert);
EquivCert parse_equiv(const std::string& text);

// Peak integer bit length observed by the most recent verification on
// this thread (succinctness instrumentation).
long last_verify_peak_bits();

}  // namespace bqd::certify

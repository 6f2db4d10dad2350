#pragma once

#include <utility>
#include <vector>

#include "bqd/int.hpp"

namespace bqd::pell {

// Fundamental solution of t^2 - D u^2 = 1.
struct PellSolution {
  Int D;
  Int t1, u1;
};

struct RecurrencePeriod {
  Int D, m;
  Int p_of_m;
};

// Continued fraction of sqrt(D): integer part and the minimal periodic
// quotient block.
struct CfExpansion {
  Int mu0;
  std::vector<Int> periodic;
};

CfExpansion cf_sqrt(const Int& D);

PellSolution fundamental_solution(const Int& D);

// Minimal positive solution of x^2 - D y^2 = -1, if one exists.
bool negative_pell(const Int& D, Int* x, Int* y);

// (t_k, u_k) mod M by binary powering of [[t1, D u1], [u1, t1]].
std::pair<Int, Int> power_mod(const PellSolution& sol, const Int& k, const Int& M);

// Minimal P >= 1 with (t_{j+P}, u_{j+P}) = (t_j, u_j) (mod m) for all j.
RecurrencePeriod period_mod(const PellSolution& sol, const Int& m);

// ceil(2m(log m + 1)) with the log convention floored at 2 below 4.
Int period_bound(const Int& m);

}  // namespace bqd::pell

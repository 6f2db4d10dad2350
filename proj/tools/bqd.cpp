// bqd: solve binary quadratic Diophantine systems, produce and check
// solvability and equivalence certificates, and inspect the cycle / Pell
// machinery behind them.

#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "bqd/certify.hpp"
#include "bqd/compose.hpp"
#include "bqd/forms.hpp"
#include "bqd/frontend.hpp"
#include "bqd/numtheory.hpp"
#include "bqd/pell.hpp"

using bqd::Int;
using json = nlohmann::json;

namespace {

constexpr int kExitSolvable = 0;
constexpr int kExitNegative = 1;
constexpr int kExitUsage = 2;
constexpr int kExitResource = 3;

struct CoeffArgs {
  std::vector<std::string> coeffs;
  std::string gamma = "1", alpha1 = "0", alpha2 = "0";
  bool normalized = false;

  bqd::frontend::DioSystem system() const {
    if (coeffs.size() != 6) throw CLI::ValidationError("expected 6 coefficients");
    Int v[6];
    for (int i = 0; i < 6; ++i) v[i] = Int(coeffs[i]);
    if (normalized) {
      bqd::frontend::DioSystem s{v[0], v[1], v[2], v[3], v[4], v[5], Int(gamma),
                                 Int(0),  Int(0)};
      if (s.gamma <= 0) throw CLI::ValidationError("modulus must be positive");
      Int g = s.gamma;
      s.alpha1 = ((Int(alpha1) % g) + g) % g;
      s.alpha2 = ((Int(alpha2) % g) + g) % g;
      return s;
    }
    return bqd::frontend::normalize(v[0], v[1], v[2], v[3], v[4], v[5], Int(gamma),
                                    Int(alpha1), Int(alpha2));
  }
};

void add_system_options(CLI::App* cmd, CoeffArgs& args) {
  cmd->add_option("coeffs", args.coeffs, "coefficients a b c d e f")
      ->expected(6)
      ->required();
  cmd->add_option("--mod", args.gamma, "congruence modulus");
  cmd->add_option("--alpha1", args.alpha1, "residue of x1");
  cmd->add_option("--alpha2", args.alpha2, "residue of x2");
  cmd->add_flag("--normalized", args.normalized,
                "coefficients are already in the even convention");
}

bqd::frontend::DioSystem parse_system_string(const std::string& text) {
  std::istringstream in(text);
  std::vector<Int> v;
  std::string tok;
  while (in >> tok) v.push_back(Int(tok));
  if (v.size() != 6 && v.size() != 9)
    throw CLI::ValidationError("system string needs 6 or 9 integers");
  Int gamma = v.size() == 9 ? v[6] : Int(1);
  Int a1 = v.size() == 9 ? v[7] : Int(0);
  Int a2 = v.size() == 9 ? v[8] : Int(0);
  return bqd::frontend::normalize(v[0], v[1], v[2], v[3], v[4], v[5], gamma, a1, a2);
}

void emit(bool use_json, const json& j, const std::string& text) {
  if (use_json)
    std::cout << j.dump() << std::endl;
  else
    std::cout << text << std::endl;
}

int cmd_solve(const CoeffArgs& args, const std::string& brute, bool use_json) {
  auto sys = args.system();
  if (!brute.empty()) {
    auto hit = bqd::frontend::brute_force_oracle(sys, Int(brute));
    if (hit) {
      emit(use_json,
           {{"status", "SOLVABLE"},
            {"x1", hit->first.get_str()},
            {"x2", hit->second.get_str()}},
           "SOLVABLE x1=" + hit->first.get_str() + " x2=" + hit->second.get_str());
      return kExitSolvable;
    }
    emit(use_json, {{"status", "NOT-FOUND"}}, "NOT-FOUND within bound");
    return kExitNegative;
  }
  auto res = bqd::frontend::solve(sys);
  if (!res.solvable) {
    emit(use_json, {{"status", "UNSOLVABLE"}, {"detail", res.detail}},
         "UNSOLVABLE (" + res.detail + ")");
    return kExitNegative;
  }
  if (res.solution) {
    emit(use_json,
         {{"status", "SOLVABLE"},
          {"x1", res.solution->first.get_str()},
          {"x2", res.solution->second.get_str()}},
         "SOLVABLE x1=" + res.solution->first.get_str() +
             " x2=" + res.solution->second.get_str());
  } else {
    emit(use_json, {{"status", "SOLVABLE"}, {"large", true}},
         "SOLVABLE (solution exceeds enumeration size; use certify)");
  }
  return kExitSolvable;
}

int cmd_certify(const CoeffArgs& args, bool force, long fp_prec,
                const std::string& out, bool use_json) {
  auto sys = args.system();
  bqd::certify::GenOptions gopt;
  gopt.force_cert = force;
  gopt.fp_prec_override = fp_prec;
  auto r = bqd::certify::gen_solvability_cert(sys, gopt);
  if (std::holds_alternative<bqd::certify::GenFailure>(r)) {
    const auto& gf = std::get<bqd::certify::GenFailure>(r);
    emit(use_json, {{"status", gf.resource ? "RESOURCE" : "UNSOLVABLE"},
                    {"detail", gf.reason}},
         (gf.resource ? "RESOURCE (" : "UNSOLVABLE (") + gf.reason + ")");
    return gf.resource ? kExitResource : kExitNegative;
  }
  const auto& cert = std::get<bqd::certify::SolvCert>(r);
  std::string text = bqd::certify::serialize(cert);
  if (!out.empty()) {
    std::ofstream f(out);
    if (!f) {
      std::cerr << "bqd: cannot write " << out << std::endl;
      return kExitUsage;
    }
    f << text;
  } else if (!use_json) {
    std::cout << text;
  }
  emit(use_json,
       {{"status", "CERTIFIED"},
        {"kind", cert.is_direct() ? "direct" : "infra"},
        {"file", out}},
       "CERTIFIED kind=" + std::string(cert.is_direct() ? "direct" : "infra"));
  return kExitSolvable;
}

int cmd_verify(const std::string& sys_text, const std::vector<std::string>& files,
               unsigned jobs, bool use_json) {
  auto sys = parse_system_string(sys_text);
  std::vector<std::string> texts(files.size());
  for (size_t i = 0; i < files.size(); ++i) {
    std::ifstream f(files[i]);
    if (!f) {
      std::cerr << "bqd: cannot read " << files[i] << std::endl;
      return kExitUsage;
    }
    std::stringstream ss;
    ss << f.rdbuf();
    texts[i] = ss.str();
  }
  std::vector<bqd::certify::VerifyResult> results(files.size());
  auto work = [&](size_t i) {
    try {
      auto cert = bqd::certify::parse(texts[i]);
      results[i] = bqd::certify::verify_solvability_cert(sys, cert);
    } catch (const std::exception& e) {
      results[i] = {false, e.what()};
    }
  };
  if (jobs <= 1 || files.size() <= 1) {
    for (size_t i = 0; i < files.size(); ++i) work(i);
  } else {
    std::vector<std::thread> pool;
    std::atomic<size_t> next{0};
    for (unsigned t = 0; t < std::min<size_t>(jobs, files.size()); ++t)
      pool.emplace_back([&] {
        for (size_t i = next.fetch_add(1); i < files.size(); i = next.fetch_add(1))
          work(i);
      });
    for (auto& th : pool) th.join();
  }
  bool all_ok = true;
  json ja = json::array();
  for (size_t i = 0; i < files.size(); ++i) {
    all_ok = all_ok && results[i].ok;
    ja.push_back({{"file", files[i]},
                  {"valid", results[i].ok},
                  {"reason", results[i].reason}});
    if (!use_json) {
      if (results[i].ok)
        std::cout << (files.size() > 1 ? files[i] + ": VALID" : "VALID")
                  << std::endl;
      else
        std::cout << (files.size() > 1 ? files[i] + ": INVALID " : "INVALID ")
                  << results[i].reason << std::endl;
    }
  }
  if (use_json) std::cout << ja.dump() << std::endl;
  return all_ok ? kExitSolvable : kExitNegative;
}

bqd::forms::QForm form_from(const std::vector<std::string>& v, size_t at) {
  Int a(v[at]), mid(v[at + 1]), c(v[at + 2]);
  if (mid % 2 != 0)
    throw CLI::ValidationError("middle coefficients must be even");
  return bqd::forms::QForm{a, mid / 2, c};
}

int cmd_equiv(const std::vector<std::string>& coeffs, const std::string& out,
              const std::string& check, bool use_json) {
  auto q1 = form_from(coeffs, 0);
  auto q2 = form_from(coeffs, 3);
  if (!check.empty()) {
    std::ifstream f(check);
    if (!f) {
      std::cerr << "bqd: cannot read " << check << std::endl;
      return kExitUsage;
    }
    std::stringstream ss;
    ss << f.rdbuf();
    try {
      auto cert = bqd::certify::parse_equiv(ss.str());
      auto r = bqd::certify::verify_equivalence_cert(q1, q2, cert);
      emit(use_json, {{"valid", r.ok}, {"reason", r.reason}},
           r.ok ? "VALID" : "INVALID " + r.reason);
      return r.ok ? kExitSolvable : kExitNegative;
    } catch (const std::exception& e) {
      emit(use_json, {{"valid", false}, {"reason", e.what()}},
           std::string("INVALID ") + e.what());
      return kExitNegative;
    }
  }
  auto r = bqd::certify::gen_equivalence_cert(q1, q2);
  if (std::holds_alternative<bqd::certify::NotEquivalent>(r)) {
    const auto& ne = std::get<bqd::certify::NotEquivalent>(r);
    emit(use_json, {{"status", "INEQUIVALENT"}, {"reason", ne.reason}},
         "INEQUIVALENT (" + ne.reason + ")");
    return kExitNegative;
  }
  const auto& cert = std::get<bqd::certify::EquivCert>(r);
  if (!out.empty()) {
    std::ofstream f(out);
    if (!f) {
      std::cerr << "bqd: cannot write " << out << std::endl;
      return kExitUsage;
    }
    f << bqd::certify::serialize_equiv(cert);
  }
  emit(use_json, {{"status", "EQUIVALENT"}}, "EQUIVALENT");
  return kExitSolvable;
}

int cmd_cycle(const std::string& dstr, bool list, bool use_json) {
  Int D(dstr);
  auto cy = bqd::forms::principal_cycle(D);
  json jf = json::array();
  std::ostringstream os;
  os << "D=" << D.get_str() << " period=" << cy.period();
  if (list) {
    for (const auto& q : cy.forms) {
      jf.push_back(q.str());
      os << "\n" << q.str();
    }
  }
  emit(use_json, {{"D", D.get_str()}, {"period", cy.period()}, {"forms", jf}},
       os.str());
  return kExitSolvable;
}

int cmd_pell(const std::string& dstr, const std::string& mod, bool use_json) {
  Int D(dstr);
  auto sol = bqd::pell::fundamental_solution(D);
  std::string text = "t1=" + sol.t1.get_str() + " u1=" + sol.u1.get_str();
  json j{{"D", D.get_str()}, {"t1", sol.t1.get_str()}, {"u1", sol.u1.get_str()}};
  if (!mod.empty()) {
    auto per = bqd::pell::period_mod(sol, Int(mod));
    text += " period_mod=" + per.p_of_m.get_str();
    j["period_mod"] = per.p_of_m.get_str();
  }
  emit(use_json, j, text);
  return kExitSolvable;
}

int cmd_period(const std::string& dstr, const std::string& mstr, bool use_json) {
  Int D(dstr), m(mstr);
  auto sol = bqd::pell::fundamental_solution(D);
  auto per = bqd::pell::period_mod(sol, m);
  Int bound = bqd::pell::period_bound(m);
  emit(use_json,
       {{"D", D.get_str()},
        {"m", m.get_str()},
        {"period", per.p_of_m.get_str()},
        {"bound", bound.get_str()}},
       "p(" + m.get_str() + ")=" + per.p_of_m.get_str() + " bound=" +
           bound.get_str());
  return kExitSolvable;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"binary quadratic Diophantine solvability and certificates"};
  app.require_subcommand(1);
  bool use_json = false;
  app.add_flag("--json", use_json, "machine-readable output");

  CoeffArgs solve_args, cert_args;
  std::string brute_bound, cert_out, fp_prec_s = "0";
  bool force_cert = false;

  auto* c_solve = app.add_subcommand("solve", "decide admissible solvability");
  add_system_options(c_solve, solve_args);
  c_solve->add_option("--brute-bound", brute_bound,
                      "only scan the box [0,N]^2 instead of deciding");

  auto* c_cert = app.add_subcommand("certify", "produce a solvability certificate");
  add_system_options(c_cert, cert_args);
  c_cert->add_flag("--force-cert", force_cert, "skip the direct-solution shortcut");
  c_cert->add_option("--fp-prec", fp_prec_s, "floating-point precision override");
  c_cert->add_option("-o,--output", cert_out, "certificate file");

  std::string verify_sys;
  std::vector<std::string> verify_files;
  unsigned jobs = 1;
  auto* c_verify = app.add_subcommand("verify", "check a solvability certificate");
  c_verify->add_option("-s,--system", verify_sys, "raw coefficients 'a b c d e f [gamma a1 a2]'")
      ->required();
  c_verify->add_option("-c,--cert", verify_files, "certificate file(s)")->required();
  c_verify->add_option("--jobs", jobs, "parallel verification of multiple files");

  std::vector<std::string> equiv_coeffs;
  std::string equiv_out, equiv_check;
  auto* c_equiv = app.add_subcommand("equiv", "equivalence of two indefinite forms");
  c_equiv->add_option("coeffs", equiv_coeffs, "a1 b1 c1 a2 b2 c2 (full middle)")
      ->expected(6)
      ->required();
  c_equiv->add_option("-o,--output", equiv_out, "certificate file");
  c_equiv->add_option("--check", equiv_check, "verify an existing certificate");

  std::string cycle_d;
  bool cycle_list = false;
  auto* c_cycle = app.add_subcommand("cycle", "principal cycle of determinant D");
  c_cycle->add_option("D", cycle_d)->required();
  c_cycle->add_flag("--list", cycle_list, "print every reduced form");

  std::string pell_d, pell_mod;
  auto* c_pell = app.add_subcommand("pell", "fundamental Pell solution");
  c_pell->add_option("D", pell_d)->required();
  c_pell->add_option("--mod", pell_mod, "also report the recurrence period mod m");

  std::string period_d, period_m;
  auto* c_period = app.add_subcommand("period", "recurrence period mod m");
  c_period->add_option("D", period_d)->required();
  c_period->add_option("m", period_m)->required();

  try {
    app.parse(argc, argv);
    if (*c_solve) return cmd_solve(solve_args, brute_bound, use_json);
    if (*c_cert)
      return cmd_certify(cert_args, force_cert, std::stol(fp_prec_s), cert_out,
                         use_json);
    if (*c_verify) return cmd_verify(verify_sys, verify_files, jobs, use_json);
    if (*c_equiv) return cmd_equiv(equiv_coeffs, equiv_out, equiv_check, use_json);
    if (*c_cycle) return cmd_cycle(cycle_d, cycle_list, use_json);
    if (*c_pell) return cmd_pell(pell_d, pell_mod, use_json);
    if (*c_period) return cmd_period(period_d, period_m, use_json);
    return kExitUsage;
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : kExitUsage;
  } catch (const bqd::ResourceError& e) {
    std::cerr << "bqd: resource bound exceeded: " << e.what() << std::endl;
    return kExitResource;
  } catch (const bqd::DomainError& e) {
    std::cerr << "bqd: " << e.what() << std::endl;
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "bqd: error: " << e.what() << std::endl;
    return kExitUsage;
  }
}

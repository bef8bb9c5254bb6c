// Acceptance runner: `acceptance N` checks criterion N (1-9), `acceptance`
// checks all of them. Prints one PASS/FAIL line per criterion.

#include <boost/numeric/odeint.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <unistd.h>

#include "common.hpp"
#include "oracles.hpp"

using namespace crnphase;
using testing_support::brusselator;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

void note(const std::string& s) { std::cout << "  " << s << '\n'; }

template <class... Args>
std::string fmt(const char* f, Args... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

bool check(bool ok, const std::string& what) {
  note(std::string(ok ? "ok   " : "FAIL ") + what);
  return ok;
}

// Periodic orbit and Floquet structure of the benchmark oscillator.
bool criterion_1() {
  const auto t0 = Clock::now();
  const auto net = models::brusselator(3000.0);
  const auto lc = find_limit_cycle(net, Vector::Constant(2, 2.0));
  const auto fd = floquet_decompose(lc, net);
  const double runtime = seconds_since(t0);

  const Eigen::VectorXcd mu = fd.monodromy().eigenvalues();
  double nu1 = std::numeric_limits<double>::infinity();
  for (int i = 0; i < mu.size(); ++i) nu1 = std::min(nu1, std::abs(std::log(std::abs(mu[i]))) / lc.period());
  note(fmt("period %.10f  omega0 %.10f  nu2 %.6f", lc.period(), lc.omega0(), fd.exponents()[1]));
  bool ok = check(lc.return_residual() < 1e-8, fmt("return residual %.3e < 1e-8", lc.return_residual()));
  ok &= check(nu1 < 1e-6 * lc.omega0(), fmt("|nu1| %.3e < 1e-6 omega0", nu1));
  ok &= check(fd.exponents()[1] < 0.0, "nu2 < 0");
  ok &= check(fd.periodicity_error() < 1e-6, fmt("periodicity error %.3e < 1e-6", fd.periodicity_error()));
  ok &= check(runtime < 10.0, fmt("runtime %.2f s < 10 s", runtime));
  return ok;
}

// Backward adjoint integration on the cycle, normalised once: the reference
// phase response curve. Uses a finite-difference Jacobian and its own
// integrator.
std::vector<Vector> adjoint_oracle(const LimitCycle& lc, const ReactionNetwork& net, int periods) {
  namespace ode = boost::numeric::odeint;
  using State = std::vector<double>;
  const double omega0 = lc.omega0();
  const double span = two_pi * periods;
  auto rhs = [&](const State& r, State& dr, double tau) {
    const Matrix j = oracle::fd_jacobian(net, lc.phi(std::fmod(span - tau, two_pi)));
    const Vector out = j.transpose() * Eigen::Map<const Vector>(r.data(), 2) / omega0;
    dr.assign(out.data(), out.data() + 2);
  };
  const Vector t0 = lc.dphi(0.0);
  State r{t0[0] / t0.squaredNorm(), t0[1] / t0.squaredNorm()};
  auto stepper = ode::make_controlled(1e-12, 1e-12, ode::runge_kutta_cash_karp54<State>());
  const int grid = lc.grid_size();
  std::vector<Vector> nodes(static_cast<std::size_t>(grid));
  double tau = 0.0;
  // Walk down the last period node by node, after the transient periods.
  const double settle = span - two_pi;
  ode::integrate_adaptive(stepper, rhs, r, tau, settle, 1e-3);
  tau = settle;
  nodes[0] = Eigen::Map<const Vector>(r.data(), 2);
  for (int g = grid - 1; g >= 1; --g) {
    const double next = span - lc.node_phase(g);
    ode::integrate_adaptive(stepper, rhs, r, tau, next, 1e-4);
    tau = next;
    nodes[static_cast<std::size_t>(g)] = Eigen::Map<const Vector>(r.data(), 2);
  }
  const double c = nodes[0].dot(lc.dphi(0.0));
  for (auto& v : nodes) v /= c;
  return nodes;
}

bool criterion_2() {
  const auto& b = brusselator();
  const double res = adjoint_residual(b.lc, b.prc, b.net);
  double norm_err = 0.0;
  for (int g = 0; g < b.lc.grid_size(); ++g) {
    const double th = b.lc.node_phase(g);
    norm_err = std::max(norm_err, std::abs(b.prc.R(th).dot(b.lc.dphi(th)) - 1.0));
  }
  const int periods = static_cast<int>(std::ceil(40.0 / (b.fd.decay_rate() * b.lc.period()))) + 1;
  const auto ref = adjoint_oracle(b.lc, b.net, periods);
  double gap = 0.0;
  for (int g = 0; g < b.lc.grid_size(); ++g)
    gap = std::max(gap, (b.prc.R(b.lc.node_phase(g)) - ref[static_cast<std::size_t>(g)]).cwiseAbs().maxCoeff());
  note(fmt("oracle periods %d, built-in adjoint gap %.3e", periods, b.prc.adjoint_gap()));
  bool ok = check(res < 1e-4, fmt("adjoint residual %.3e < 1e-4", res));
  ok &= check(norm_err < 1e-6, fmt("max |<R, Phi'> - 1| %.3e < 1e-6", norm_err));
  ok &= check(gap < 1e-4, fmt("gap to independent adjoint integration %.3e < 1e-4", gap));
  return ok;
}

// Birth-death stationary law against Poisson, and the two exact engines in law.
bool criterion_3() {
  const auto t0 = Clock::now();
  const double k = 2.0, gamma = 1.0, omega = 100.0;
  const auto net = models::birth_death(k, gamma, omega);
  const double mean = omega * k / gamma;
  const Counts n0{static_cast<std::int64_t>(mean)};
  const double t = 12.0;
  const int n = 10000;
  std::map<Engine, std::vector<double>> samples;
  for (Engine e : {Engine::direct, Engine::time_change}) {
    auto& v = samples[e];
    const std::uint64_t seed = e == Engine::direct ? 101 : 202;
    for (int i = 0; i < n; ++i)
      v.push_back(static_cast<double>(
          simulate_jumps(e, net, n0, t, stream_seed(seed, static_cast<std::uint64_t>(i))).counts_at(net, t)[0]));
  }
  bool ok = true;
  for (auto& [e, v] : samples) {
    const auto st = sample_stats(v);
    const double se_mean = std::sqrt(mean / n);
    const double se_var = mean * std::sqrt((2.0 + 1.0 / mean) / n);
    const char* name = e == Engine::direct ? "direct" : "time-change";
    ok &= check(std::abs(st.mean - mean) < 3.0 * se_mean,
                fmt("%s mean %.3f vs %.0f (3 SE %.3f)", name, st.mean, mean, 3.0 * se_mean));
    ok &= check(std::abs(st.variance - mean) < 3.0 * se_var,
                fmt("%s variance %.3f vs %.0f (3 SE %.3f)", name, st.variance, mean, 3.0 * se_var));
  }
  const auto ks = ks_two_sample(samples[Engine::direct], samples[Engine::time_change]);
  ok &= check(ks.p_value > 0.001, fmt("KS direct vs time-change D %.4f p %.3f > 0.001", ks.statistic, ks.p_value));
  const double runtime = seconds_since(t0);
  ok &= check(runtime < 120.0, fmt("runtime %.1f s < 120 s", runtime));
  return ok;
}

// Ensemble means of the jump process and of the CLE over one period.
bool criterion_4() {
  const auto& b = brusselator();
  const double T = b.lc.period();
  std::vector<double> times;
  for (int i = 1; i <= 10; ++i) times.push_back(T * i / 10.0);
  const auto pts = mean_path_comparison(b.net, b.lc.phi(0.0), times, 2000, T / 2000, 404, 1);
  double sup = 0.0;
  for (const auto& p : pts) {
    sup = std::max(sup, p.z);
    note(fmt("t %.3f species %d ssa %.5f +- %.5f cle %.5f +- %.5f z %.2f", p.t, p.species, p.ssa_mean, p.ssa_se,
             p.cle_mean, p.cle_se, p.z));
  }
  return check(sup < 3.0, fmt("sup z %.3f < 3", sup));
}

// Variational phase against the dense-grid oracle.
bool criterion_5() {
  const auto& b = brusselator();
  const VariationalConfig cfg{};
  bool ok = true;
  double worst_on = 0.0;
  for (int i = 0; i < 200; ++i) {
    const double th = two_pi * (i + 0.37) / 200;
    const auto r = variational_phase(b.fd, b.lc.phi(th), th + 0.05);
    worst_on = std::max({worst_on, std::abs(r.beta - th), r.normw, std::abs(r.curvature - 1.0)});
  }
  ok &= check(worst_on < 1e-8, fmt("on-cycle |beta - theta|, ||w||, |M - 1| max %.3e < 1e-8", worst_on));

  const double eta = default_eta(b.fd);
  std::mt19937_64 gen(2024);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  int agree = 0, found = 0, none = 0;
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const double th = two_pi * u(gen);
    const double rad = eta * std::sqrt(u(gen)), ang = two_pi * u(gen);
    Vector w(2);
    w << rad * std::cos(ang), rad * std::sin(ang);
    const Vector x = b.lc.phi(th) + b.fd.P(th) * w;
    const double o = oracle::dense_grid_phase(b.fd, x, th, cfg.search_halfwidth);
    try {
      const auto r = variational_phase(b.fd, x, th, cfg);
      ++found;
      if (!std::isnan(o)) {
        worst = std::max(worst, std::abs(r.beta - o));
        if (std::abs(r.beta - o) <= cfg.newton_tol) ++agree;
      }
    } catch (const Error& e) {
      if (e.code() != ErrorCode::no_local_minimum) throw;
      ++none;
      if (std::isnan(o)) ++agree;
    }
  }
  note(fmt("eta %.4f: %d states with a root, %d without, worst gap %.3e", eta, found, none, worst));
  ok &= check(agree == 1000, fmt("%d of 1000 tube states agree with the oracle within %.0e", agree, cfg.newton_tol));
  return ok;
}

// Linear and variational phases separate on the O(1)-time scale.
bool criterion_6() {
  const auto t0 = Clock::now();
  const auto& b = brusselator();
  const double T = b.lc.period();
  VariationalConfig cfg;
  cfg.eta = default_eta(b.fd);
  const auto st = phase_separation_study(b.net, b.fd, 3000.0, 0.0, 5 * T, {0.1 * T, T}, 100, 6, cfg, 1);
  double max_w = 0.0;
  for (const auto& r : st.runs) max_w = std::max(max_w, r.max_normw);
  note(fmt("eta %.4f, max ||w|| %.4f, median gap at 0.1T %.3e, at T %.3e", cfg.eta, max_w, st.median_gap[0],
           st.median_gap[1]));
  bool ok = check(st.fraction_in_tube >= 0.95, fmt("fraction in tube %.2f >= 0.95", st.fraction_in_tube));
  ok &= check(st.median_gap[1] > 10.0 * st.median_gap[0],
              fmt("median gap ratio %.2f > 10", st.median_gap[1] / st.median_gap[0]));
  const double runtime = seconds_since(t0);
  ok &= check(runtime < 900.0, fmt("runtime %.1f s < 900 s", runtime));
  return ok;
}

// Escape probabilities and the large-deviation scaling.
bool criterion_7() {
  const auto t0 = Clock::now();
  const auto& b = brusselator();
  const double T = b.lc.period(), zeta = 1.5, rate = b.fd.decay_rate();
  const std::int64_t n = 10000;
  EscapeOptions opt;
  opt.variational.eta = zeta;
  std::vector<EscapeStats> stats;
  std::vector<HorizonDoubling> doubling;
  for (double omega : {50.0, 100.0, 200.0, 400.0}) {
    const auto reps = escape_replicas(b.net, b.fd, omega, zeta, 2 * T, n, 7, opt);
    stats.push_back(summarize_escapes(reps, omega, zeta, T, rate));
    doubling.push_back(horizon_doubling(reps, T));
    const auto& s = stats.back();
    const auto& d = doubling.back();
    note(fmt("omega %4.0f  p(T) %.4f [%.4f, %.4f]  lost-phase %lld  p(2T) %.4f  p(2T)-2p(T) %+.4f +- %.4f", omega,
             s.p_hat, s.ci.lo, s.ci.hi, static_cast<long long>(s.failures), d.p_2t, d.difference, d.tolerance));
  }
  bool ok = true;
  bool monotone = true;
  for (std::size_t i = 1; i < stats.size(); ++i)
    monotone &= stats[i].p_hat < stats[i - 1].p_hat || stats[i].ci.hi >= stats[i - 1].ci.lo;
  ok &= check(monotone, "p(T) non-increasing in omega (or overlapping intervals)");
  try {
    const auto fit = fit_scaling(stats, rate);
    note(fmt("C %.5f  intercept %.4f  R2 %.4f  (prefactor T: C %.5f R2 %.4f)", fit.C, fit.intercept, fit.r2, fit.C_t,
             fit.r2_t));
    ok &= check(fit.C > 0.0 && fit.r2 > 0.9, fmt("C %.5f > 0 and R2 %.4f > 0.9", fit.C, fit.r2));
    bool envelope = true;
    for (const auto& p : fit.points) {
      note(fmt("omega %4.0f  fitted %.4f  observed %.4f", p.stats.omega, p.fitted_p, p.stats.p_hat));
      envelope &= p.within_envelope;
    }
    ok &= check(envelope, "observed p within one CI width above the fitted curve");
  } catch (const Error& e) {
    ok &= check(false, std::string("scaling fit: ") + e.what());
  }
  bool dbl = true;
  int rare = 0;
  for (const auto& d : doubling) {
    if (d.p_2t > 0.1) continue;
    ++rare;
    dbl &= d.consistent;
  }
  ok &= check(rare > 0 && dbl, fmt("p(2T) ~ 2 p(T) at the %d points with p(2T) <= 0.1", rare));
  const double runtime = seconds_since(t0);
  ok &= check(runtime < 1800.0, fmt("runtime %.0f s < 1800 s", runtime));
  return ok;
}

// Reaction counts over a short window are dominated by the Poisson bound.
bool criterion_8() {
  const auto& b = brusselator();
  const double bound = 1.25 * max_cycle_propensity(b.net, b.lc);
  const auto table = reaction_tail(b.net, b.lc, 1000.0, 0.5, bound, 2000, 8, {}, 1);
  note(fmt("rate bound %.4f, max observed %.4f, Poisson mean %.1f", table.rate_bound, table.max_observed_rate,
           table.poisson_mean));
  bool ok = true;
  int rows = 0;
  for (const auto& r : table.rows) {
    if (static_cast<double>(r.c) <= table.poisson_mean) continue;
    ++rows;
    note(fmt("channel %d c %lld empirical %.4g analytic %.4g", r.channel, static_cast<long long>(r.c), r.empirical,
             r.analytic));
    ok &= r.empirical <= r.analytic;
  }
  return check(ok && rows > 0, fmt("empirical <= analytic on all %d rows above the mean", rows));
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::map<std::string, std::string> tree(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::directory_iterator(dir)) files[e.path().filename().string()] = slurp(e.path());
  return files;
}

// Byte-identical reruns of the command-line front end.
bool criterion_9() {
  const fs::path root = fs::temp_directory_path() / ("crnphase_acceptance_" + std::to_string(::getpid()));
  fs::remove_all(root);
  fs::create_directories(root);
  auto run_in = [&](const std::string& cmd, RunConfig c, const std::string& sub) {
    c.out = (root / sub).string();
    std::ostringstream err;
    if (crnphase::run(cmd, c, err) != 0) throw std::runtime_error(cmd + ": " + err.str());
    return tree(root / sub);
  };
  const std::map<std::string, std::string> cases{
      {"simulate", "t_end = 2\nomega = 300\nseed = 5\n"},
      {"limit-cycle", "grid_size = 256\n"},
      {"floquet", "grid_size = 256\n"},
      {"prc", "grid_size = 256\n"},
      {"phase", "t_end = 3\nomega = 1000\nseed = 9\ngrid_size = 256\n"},
      {"escape", "omega_list = 50, 100\nreplicas = 200\ngrid_size = 256\nworkers = 1\n"},
      {"benchmark", "t_end = 2\nomega = 1000\nseed = 3\ngrid_size = 256\n"},
  };
  bool ok = true;
  try {
    for (const auto& [cmd, text] : cases) {
      const auto cfg = parse_config(text);
      const auto a = run_in(cmd, cfg, cmd + "_a");
      const auto b = run_in(cmd, cfg, cmd + "_b");
      const auto c = run_in(cmd, load_config(root / (cmd + "_a") / "config.txt"), cmd + "_c");
      ok &= check(a == b && a == c && !a.empty(),
                  fmt("%s: %zu files identical across reruns and a rerun from config.txt", cmd.c_str(), a.size()));
    }
    auto cfg = parse_config(cases.at("escape"));
    const auto w1 = run_in("escape", cfg, "escape_w1");
    cfg.workers = 4;
    const auto w4 = run_in("escape", cfg, "escape_w4");
    ok &= check(w1 == w4, "escape output identical with 1 and 4 workers");
  } catch (const std::exception& e) {
    ok &= check(false, e.what());
  }
  fs::remove_all(root);
  return ok;
}

const char* const titles[] = {
    "",
    "limit cycle and Floquet exponents",
    "phase response curve",
    "exact stochastic simulation",
    "diffusion approximation mean paths",
    "variational phase oracle",
    "linear vs variational phase separation",
    "escape probability scaling",
    "reaction-count tail bound",
    "reproducible command-line runs",
};

}  // namespace

int main(int argc, char** argv) {
  std::vector<int> which;
  for (int i = 1; i < argc; ++i) which.push_back(std::atoi(argv[i]));
  if (which.empty())
    for (int c = 1; c <= 9; ++c) which.push_back(c);
  bool (*const checks[])() = {nullptr,     criterion_1, criterion_2, criterion_3, criterion_4,
                              criterion_5, criterion_6, criterion_7, criterion_8, criterion_9};
  int failures = 0;
  for (int c : which) {
    if (c < 1 || c > 9) {
      std::cerr << "unknown criterion " << c << '\n';
      return 2;
    }
    bool ok = false;
    const auto t0 = Clock::now();
    try {
      ok = checks[c]();
    } catch (const std::exception& e) {
      note(std::string("exception: ") + e.what());
    }
    std::cout << (ok ? "PASS" : "FAIL") << " criterion " << c << ": " << titles[c]
              << fmt(" (%.1f s)", seconds_since(t0)) << std::endl;
    if (!ok) ++failures;
  }
  return failures == 0 ? 0 : 1;
}

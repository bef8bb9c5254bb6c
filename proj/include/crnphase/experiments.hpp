#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <vector>

#include "crnphase/floquet.hpp"
#include "crnphase/ode.hpp"
#include "crnphase/parallel.hpp"
#include "crnphase/phase.hpp"
#include "crnphase/rng.hpp"
#include "crnphase/stats.hpp"
#include "crnphase/stochastic.hpp"

namespace crnphase {

// ---------------------------------------------------------------------------
// Escape from the limit-cycle neighbourhood

struct EscapeOptions {
  Engine engine = Engine::direct;
  PropensityForm form = PropensityForm::concentration;
  VariationalConfig variational{};
  int workers = 1;
};

struct EscapeReplica {
  double theta0 = 0.0;
  std::optional<double> escape_time;  // first time ||w|| >= zeta
  double max_normw = 0.0;
  bool failed = false;  // the variational phase was lost; counted as an escape
};

struct EscapeStats {
  double omega = 0.0;
  double zeta = 0.0;
  double horizon = 0.0;
  std::int64_t replicas = 0;
  std::int64_t escapes = 0;
  std::int64_t failures = 0;
  double p_hat = 0.0;
  Interval ci;
  double b = 0.0;
};

namespace detail {

template <int N, class Eng>
EscapeReplica run_escape(Eng& engine, const ReactionNetwork& net, const FloquetData& fd, double zeta, double horizon,
                         double theta0, const EscapeOptions& opt) {
  VariationalConfig cfg = opt.variational;
  cfg.eta = zeta;
  BasicPhaseTracker<N> tracker(net, fd, cfg, Compensator::trajectory, false);
  EscapeReplica out;
  out.theta0 = theta0;
  const int k = net.num_species();
  Vector x(k);
  auto load = [&] {
    const auto& n = engine.counts();
    for (int i = 0; i < k; ++i) x[i] = static_cast<double>(n[static_cast<std::size_t>(i)]) / net.omega();
  };
  load();
  tracker.start(0.0, x, engine.propensities(), theta0);
  if (tracker.normw() > 0.5 * zeta)
    throw Error(ErrorCode::invalid_argument, "initial weighted amplitude exceeds zeta / 2; increase zeta or omega");
  out.max_normw = tracker.normw();
  try {
    while (auto a = engine.step(horizon)) {
      load();
      tracker.on_event(engine.time(), *a, x, engine.propensities());
      out.max_normw = std::max(out.max_normw, tracker.normw());
      if (tracker.normw() >= zeta) {
        out.escape_time = engine.time();
        break;
      }
    }
  } catch (const Error& e) {
    if (e.code() != ErrorCode::no_local_minimum && e.code() != ErrorCode::curvature_too_small) throw;
    out.failed = true;
    out.escape_time = engine.time();
  }
  return out;
}

template <class Eng>
EscapeReplica run_escape(Eng& engine, const ReactionNetwork& net, const FloquetData& fd, double zeta, double horizon,
                         double theta0, const EscapeOptions& opt) {
  return dispatch_dimension(net.num_species(), [&](auto nd) {
    return run_escape<decltype(nd)::value>(engine, net, fd, zeta, horizon, theta0, opt);
  });
}

}  // namespace detail

/// One replica: uniform start phase, counts rounded from omega * Phi(theta0),
/// tracked until ||w|| >= zeta or the horizon.
inline EscapeReplica simulate_escape_replica(const ReactionNetwork& net, const FloquetData& fd, double zeta,
                                             double horizon, std::uint64_t replica_seed, const EscapeOptions& opt = {}) {
  Rng rng(replica_seed);
  const double theta0 = two_pi * rng.uniform();
  const Counts n0 = counts_from(net, fd.cycle().phi(theta0));
  const std::uint64_t engine_seed = stream_seed(replica_seed, 1);
  if (opt.engine == Engine::direct) {
    DirectEngine eng(net, n0, engine_seed, opt.form);
    return detail::run_escape(eng, net, fd, zeta, horizon, theta0, opt);
  }
  TimeChangeEngine eng(net, n0, engine_seed, opt.form);
  return detail::run_escape(eng, net, fd, zeta, horizon, theta0, opt);
}

/// All replica outcomes for one (omega, zeta) design point; replica i uses
/// stream_seed(seed, i).
inline std::vector<EscapeReplica> escape_replicas(const ReactionNetwork& net, const FloquetData& fd, double omega,
                                                  double zeta, double horizon, std::int64_t replicas,
                                                  std::uint64_t seed, const EscapeOptions& opt = {}) {
  if (replicas <= 0) throw Error(ErrorCode::invalid_argument, "replicas must be positive");
  if (!(zeta > 0.0) || !(horizon >= 0.0)) throw Error(ErrorCode::invalid_argument, "zeta and horizon must be positive");
  const ReactionNetwork scaled = net.with_omega(omega);
  std::vector<EscapeReplica> out(static_cast<std::size_t>(replicas));
  parallel_for(out.size(), opt.workers, [&](std::size_t i) {
    out[i] = simulate_escape_replica(scaled, fd, zeta, horizon, stream_seed(seed, i), opt);
  });
  return out;
}

/// Escape statistics counting escapes up to `horizon` (at most the simulated horizon).
inline EscapeStats summarize_escapes(const std::vector<EscapeReplica>& reps, double omega, double zeta, double horizon,
                                     double b) {
  EscapeStats s;
  s.omega = omega;
  s.zeta = zeta;
  s.horizon = horizon;
  s.b = b;
  s.replicas = static_cast<std::int64_t>(reps.size());
  for (const auto& r : reps) {
    if (r.escape_time && *r.escape_time <= horizon) {
      ++s.escapes;
      if (r.failed) ++s.failures;
    }
  }
  if (s.replicas == 0) throw Error(ErrorCode::invalid_argument, "no replicas to summarize");
  s.p_hat = static_cast<double>(s.escapes) / static_cast<double>(s.replicas);
  s.ci = binomial_interval(s.escapes, s.replicas);
  return s;
}

inline EscapeStats escape_probability(const ReactionNetwork& net, const FloquetData& fd, double omega, double zeta,
                                      double horizon, std::int64_t replicas, std::uint64_t seed,
                                      const EscapeOptions& opt = {}) {
  const auto reps = escape_replicas(net, fd, omega, zeta, horizon, replicas, seed, opt);
  return summarize_escapes(reps, omega, zeta, horizon, fd.decay_rate());
}

struct HorizonDoubling {
  double p_t = 0.0;
  double p_2t = 0.0;
  double difference = 0.0;  // p(2T) - 2 p(T)
  double tolerance = 0.0;   // 1.96 standard errors of the difference
  bool consistent = false;
};

/// Checks p(2T) ~ 2 p(T) from one ensemble simulated to 2T. With E1 escapes
/// in [0, T] and E2 in (T, 2T], p(2T) - 2p(T) = (E2 - E1) / n, whose variance
/// follows from the multinomial counts.
inline HorizonDoubling horizon_doubling(const std::vector<EscapeReplica>& reps, double horizon) {
  if (reps.empty()) throw Error(ErrorCode::invalid_argument, "no replicas");
  const auto n = static_cast<double>(reps.size());
  double e1 = 0.0, e2 = 0.0;
  for (const auto& r : reps) {
    if (!r.escape_time) continue;
    if (*r.escape_time <= horizon)
      e1 += 1.0;
    else if (*r.escape_time <= 2.0 * horizon)
      e2 += 1.0;
  }
  const double p1 = e1 / n, p2 = e2 / n;
  HorizonDoubling h;
  h.p_t = p1;
  h.p_2t = p1 + p2;
  h.difference = p2 - p1;
  const double var = (p1 * (1 - p1) + p2 * (1 - p2) + 2 * p1 * p2) / n;
  h.tolerance = 1.96 * std::sqrt(std::max(var, 1.0 / (n * n)));
  h.consistent = std::abs(h.difference) <= h.tolerance;
  return h;
}

struct ScalingPoint {
  EscapeStats stats;
  double x = 0.0;          // omega * b * zeta^2
  double y = 0.0;          // log(p_hat / (b T))
  double fitted_p = 0.0;   // b T exp(intercept - C x)
  bool within_envelope = true;  // p_hat - fitted_p <= CI width
};

struct ScalingFit {
  std::vector<ScalingPoint> points;  // estimable points only
  double C = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
  std::vector<double> residuals;
  // Same fit with the prefactor T instead of b T.
  double C_t = 0.0;
  double intercept_t = 0.0;
  double r2_t = 0.0;
};

/// Least squares log(p_hat / (b T)) = -C omega b zeta^2 + intercept over the
/// points with at least 5 escapes.
inline ScalingFit fit_scaling(const std::vector<EscapeStats>& stats, double b) {
  if (!(b > 0.0)) throw Error(ErrorCode::invalid_argument, "decay rate must be positive");
  ScalingFit fit;
  for (const auto& s : stats)
    if (s.escapes >= 5 && s.p_hat > 0.0 && s.horizon > 0.0) fit.points.push_back({s, s.omega * b * s.zeta * s.zeta});
  if (fit.points.size() < 4)
    throw Error(ErrorCode::insufficient_points, "need at least 4 design points with 5 or more escapes");
  double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
  for (const auto& p : fit.points) {
    lo = std::min(lo, p.x);
    hi = std::max(hi, p.x);
  }
  if (hi < 4.0 * lo) throw Error(ErrorCode::insufficient_points, "design points must span a factor of 4 in omega zeta^2");
  std::vector<double> xs, ys, yt;
  for (auto& p : fit.points) {
    p.y = std::log(p.stats.p_hat / (b * p.stats.horizon));
    xs.push_back(p.x);
    ys.push_back(p.y);
    yt.push_back(std::log(p.stats.p_hat / p.stats.horizon));
  }
  const auto main = linear_regression(xs, ys);
  const auto alt = linear_regression(xs, yt);
  fit.C = -main.slope;
  fit.intercept = main.intercept;
  fit.r2 = main.r2;
  fit.residuals = main.residuals;
  fit.C_t = -alt.slope;
  fit.intercept_t = alt.intercept;
  fit.r2_t = alt.r2;
  for (auto& p : fit.points) {
    p.fitted_p = b * p.stats.horizon * std::exp(fit.intercept - fit.C * p.x);
    p.within_envelope = p.stats.p_hat - p.fitted_p <= p.stats.ci.hi - p.stats.ci.lo;
  }
  return fit;
}

// ---------------------------------------------------------------------------
// Reaction-count tail

struct TailRow {
  int channel = 0;
  std::int64_t c = 0;
  double empirical = 0.0;  // P(M^a >= c)
  double analytic = 0.0;   // P(Poisson(omega lambda_bar window) >= c)
};

struct TailTable {
  double omega = 0.0;
  double window = 0.0;
  double rate_bound = 0.0;
  double poisson_mean = 0.0;
  std::int64_t replicas = 0;
  double max_observed_rate = 0.0;
  std::vector<TailRow> rows;
};

/// Largest per-channel propensity on the limit cycle.
inline double max_cycle_propensity(const ReactionNetwork& net, const LimitCycle& lc, int samples = 4096) {
  double best = 0.0;
  Vector lam(net.num_reactions());
  for (int g = 0; g < samples; ++g) {
    propensity_into(net, lc.phi(two_pi * g / samples), lam);
    best = std::max(best, lam.maxCoeff());
  }
  return best;
}

/// Default thresholds strictly above the Poisson mean out to where its tail is negligible.
inline std::vector<std::int64_t> default_tail_thresholds(double mean) {
  std::vector<std::int64_t> cs;
  const double sd = std::sqrt(std::max(mean, 1.0));
  for (double k : {0.25, 0.5, 1.0, 1.5, 2.0, 3.0, 4.0}) cs.push_back(static_cast<std::int64_t>(std::floor(mean + k * sd)) + 1);
  cs.push_back(static_cast<std::int64_t>(std::floor(2.0 * mean)) + 1);
  std::sort(cs.begin(), cs.end());
  cs.erase(std::unique(cs.begin(), cs.end()), cs.end());
  return cs;
}

/// Per-channel reaction counts in [0, window] from on-cycle starts at uniform
/// phase, against the Poisson(omega lambda_bar window) tail. Every propensity
/// met along the way must respect rate_bound.
inline TailTable reaction_tail(const ReactionNetwork& net, const LimitCycle& lc, double omega, double window,
                               double rate_bound, std::int64_t replicas, std::uint64_t seed,
                               std::vector<std::int64_t> thresholds = {}, int workers = 1) {
  if (!(window >= 0.0) || !(rate_bound > 0.0) || replicas <= 0)
    throw Error(ErrorCode::invalid_argument, "reaction_tail needs window >= 0, rate_bound > 0, replicas > 0");
  const ReactionNetwork scaled = net.with_omega(omega);
  const int m = scaled.num_reactions();
  TailTable table;
  table.omega = omega;
  table.window = window;
  table.rate_bound = rate_bound;
  table.poisson_mean = omega * rate_bound * window;
  table.replicas = replicas;
  if (thresholds.empty()) thresholds = default_tail_thresholds(table.poisson_mean);

  std::vector<std::vector<std::int64_t>> counts(static_cast<std::size_t>(replicas));
  std::vector<double> max_rate(static_cast<std::size_t>(replicas), 0.0);
  parallel_for(counts.size(), workers, [&](std::size_t i) {
    const std::uint64_t rs = stream_seed(seed, i);
    Rng rng(rs);
    const double theta0 = two_pi * rng.uniform();
    DirectEngine eng(scaled, counts_from(scaled, lc.phi(theta0)), stream_seed(rs, 1));
    std::vector<std::int64_t> c(static_cast<std::size_t>(m), 0);
    double peak = eng.propensities().maxCoeff();
    while (auto a = eng.step(window)) {
      ++c[static_cast<std::size_t>(*a)];
      peak = std::max(peak, eng.propensities().maxCoeff());
    }
    counts[i] = std::move(c);
    max_rate[i] = peak;
  });
  table.max_observed_rate = *std::max_element(max_rate.begin(), max_rate.end());
  if (table.max_observed_rate > rate_bound)
    throw Error(ErrorCode::rate_bound_violated, "observed propensity " + std::to_string(table.max_observed_rate) +
                                                    " exceeds the rate bound " + std::to_string(rate_bound));
  for (int a = 0; a < m; ++a) {
    for (auto c : thresholds) {
      std::int64_t hits = 0;
      for (const auto& row : counts)
        if (row[static_cast<std::size_t>(a)] >= c) ++hits;
      table.rows.push_back({a, c, static_cast<double>(hits) / static_cast<double>(replicas),
                            poisson_tail(table.poisson_mean, c)});
    }
  }
  return table;
}

// ---------------------------------------------------------------------------
// Diffusion approximation and phase diffusion

struct MeanPathPoint {
  double t = 0.0;
  int species = 0;
  double ssa_mean = 0.0, ssa_se = 0.0;
  double cle_mean = 0.0, cle_se = 0.0;
  double z = 0.0;  // |difference| / combined standard error
};

/// Ensemble mean concentrations of the exact jump process and of the CLE from
/// the same on-cycle start, compared at `times`.
inline std::vector<MeanPathPoint> mean_path_comparison(const ReactionNetwork& net, const Vector& x0,
                                                       const std::vector<double>& times, std::int64_t replicas,
                                                       double h, std::uint64_t seed, int workers = 1) {
  if (times.empty() || replicas < 2) throw Error(ErrorCode::invalid_argument, "need times and at least 2 replicas");
  const int k = net.num_species();
  const std::size_t nt = times.size();
  const double t_end = *std::max_element(times.begin(), times.end());
  const Counts n0 = counts_from(net, x0);
  const Vector xc = concentrations(net, n0);
  std::vector<std::vector<double>> ssa(static_cast<std::size_t>(replicas)), cle(static_cast<std::size_t>(replicas));
  parallel_for(ssa.size(), workers, [&](std::size_t i) {
    const auto traj = ssa_direct(net, n0, t_end, stream_seed(seed, 2 * i));
    const auto path = cle_simulate(net, xc, t_end, h, stream_seed(seed, 2 * i + 1));
    std::vector<double> s(nt * static_cast<std::size_t>(k)), c(nt * static_cast<std::size_t>(k));
    for (std::size_t j = 0; j < nt; ++j) {
      const auto n = traj.counts_at(net, times[j]);
      const auto idx = static_cast<std::size_t>(std::min<double>(std::llround(times[j] / h),
                                                                  static_cast<double>(path.times.size() - 1)));
      for (int sp = 0; sp < k; ++sp) {
        s[j * k + sp] = static_cast<double>(n[static_cast<std::size_t>(sp)]) / net.omega();
        c[j * k + sp] = path.states[idx][sp];
      }
    }
    ssa[i] = std::move(s);
    cle[i] = std::move(c);
  });
  std::vector<MeanPathPoint> out;
  std::vector<double> a(ssa.size()), b(cle.size());
  for (std::size_t j = 0; j < nt; ++j) {
    for (int sp = 0; sp < k; ++sp) {
      for (std::size_t i = 0; i < ssa.size(); ++i) {
        a[i] = ssa[i][j * k + sp];
        b[i] = cle[i][j * k + sp];
      }
      const auto sa = sample_stats(a), sb = sample_stats(b);
      MeanPathPoint p{times[j], sp, sa.mean, sa.std_error(), sb.mean, sb.std_error(), 0.0};
      const double se = std::hypot(p.ssa_se, p.cle_se);
      p.z = se > 0.0 ? std::abs(p.ssa_mean - p.cle_mean) / se : 0.0;
      out.push_back(p);
    }
  }
  return out;
}

/// Phase diffusion coefficient of the isochronal phase SDE:
/// d/dt Var(theta) = (1 / (2 pi omega)) int sum_a <R, S_a>^2 lambda_a(Phi) d theta.
inline double phase_diffusion_rate(const LimitCycle& lc, const PhaseResponseCurve& prc, const ReactionNetwork& net,
                                   int samples = 2048) {
  const Matrix& s = net.stoichiometry_real();
  Vector lam(net.num_reactions()), r(net.num_species());
  double acc = 0.0;
  for (int g = 0; g < samples; ++g) {
    const double th = two_pi * g / samples;
    propensity_into(net, lc.phi(th), lam);
    prc.eval(th, r.data());
    for (int a = 0; a < net.num_reactions(); ++a) {
      const double c = r.dot(s.col(a));
      acc += c * c * lam[a];
    }
  }
  return acc / samples / net.omega();
}

struct PhaseDiffusionComparison {
  std::vector<double> times;
  std::vector<double> var_linear;  // Var(beta_lin - beta_lin(0) - omega0 t) over SSA replicas
  std::vector<double> var_sde;     // Var(theta - theta0 - omega0 t) over phase SDE replicas
  double slope_linear = 0.0;       // fitted through the origin
  double slope_sde = 0.0;
  double slope_analytic = 0.0;
  double relative_gap = 0.0;       // |slope_linear / slope_sde - 1|
};

inline double slope_through_origin(const std::vector<double>& t, const std::vector<double>& v) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    num += t[i] * v[i];
    den += t[i] * t[i];
  }
  return den > 0.0 ? num / den : 0.0;
}

/// Variance growth of the linear phase along exact jump paths versus the
/// isochronal phase SDE, both started on the cycle at uniform phases.
inline PhaseDiffusionComparison phase_diffusion_comparison(const ReactionNetwork& net, const FloquetData& fd,
                                                           const PhaseResponseCurve& prc, double omega,
                                                           double horizon, int checkpoints, std::int64_t replicas,
                                                           double h, std::uint64_t seed, int workers = 1) {
  if (checkpoints < 1 || replicas < 2) throw Error(ErrorCode::invalid_argument, "need checkpoints and replicas");
  const ReactionNetwork scaled = net.with_omega(omega);
  const auto& lc = fd.cycle();
  const double w0 = lc.omega0();
  PhaseDiffusionComparison out;
  for (int j = 1; j <= checkpoints; ++j) out.times.push_back(horizon * j / checkpoints);
  const auto nr = static_cast<std::size_t>(replicas);
  const auto nc = static_cast<std::size_t>(checkpoints);
  std::vector<double> lin(nr * nc), sde(nr * nc);
  VariationalConfig cfg;
  cfg.eta = std::numeric_limits<double>::infinity();
  parallel_for(nr, workers, [&](std::size_t i) {
    dispatch_dimension(scaled.num_species(), [&](auto nd) {
    const std::uint64_t rs = stream_seed(seed, i);
    Rng rng(rs);
    const double theta0 = two_pi * rng.uniform();
    DirectEngine eng(scaled, counts_from(scaled, lc.phi(theta0)), stream_seed(rs, 1));
    BasicPhaseTracker<decltype(nd)::value> tracker(scaled, fd, cfg);
    const int k = scaled.num_species();
    Vector x(k);
    auto load = [&] {
      for (int s = 0; s < k; ++s) x[s] = static_cast<double>(eng.counts()[static_cast<std::size_t>(s)]) / omega;
    };
    load();
    tracker.start(0.0, x, eng.propensities(), theta0);
    const double b0 = tracker.beta_lin();
    for (std::size_t j = 0; j < nc; ++j) {
      const double tj = out.times[j];
      while (auto a = eng.step(tj)) {
        load();
        tracker.on_event(eng.time(), *a, x, eng.propensities());
      }
      tracker.advance_to(tj);
      lin[i * nc + j] = tracker.beta_lin() - b0 - w0 * tj;
    }
    const auto path = isochronal_phase_sde(lc, prc, scaled, theta0, horizon, h, stream_seed(rs, 2));
    for (std::size_t j = 0; j < nc; ++j) {
      const auto idx = static_cast<std::size_t>(std::llround(out.times[j] / h));
      const auto at = std::min(idx, path.times.size() - 1);
      sde[i * nc + j] = path.theta[at] - theta0 - w0 * path.times[at];
    }
    });
  });
  std::vector<double> col(nr);
  for (std::size_t j = 0; j < nc; ++j) {
    for (std::size_t i = 0; i < nr; ++i) col[i] = lin[i * nc + j];
    out.var_linear.push_back(sample_stats(col).variance);
    for (std::size_t i = 0; i < nr; ++i) col[i] = sde[i * nc + j];
    out.var_sde.push_back(sample_stats(col).variance);
  }
  out.slope_linear = slope_through_origin(out.times, out.var_linear);
  out.slope_sde = slope_through_origin(out.times, out.var_sde);
  out.slope_analytic = phase_diffusion_rate(lc, prc, scaled);
  out.relative_gap = std::abs(out.slope_linear / out.slope_sde - 1.0);
  return out;
}

// ---------------------------------------------------------------------------
// Linear versus variational phase

struct SeparationRun {
  std::uint64_t seed = 0;
  bool stayed_in_tube = true;
  double max_normw = 0.0;
  std::vector<double> gaps;  // |beta_var - beta_lin| at the probe times
};

struct SeparationStudy {
  std::vector<double> probe_times;
  std::vector<SeparationRun> runs;
  double fraction_in_tube = 0.0;
  std::vector<double> median_gap;
};

/// Runs `seeds` independent jump paths from Phi(theta0) to `horizon`, tracking
/// both phases, and records |beta_var - beta_lin| at the probe times.
inline SeparationStudy phase_separation_study(const ReactionNetwork& net, const FloquetData& fd, double omega,
                                              double theta0, double horizon, std::vector<double> probe_times,
                                              int seeds, std::uint64_t seed, const VariationalConfig& cfg,
                                              int workers = 1) {
  if (seeds <= 0) throw Error(ErrorCode::invalid_argument, "seeds must be positive");
  std::sort(probe_times.begin(), probe_times.end());
  const ReactionNetwork scaled = net.with_omega(omega);
  const auto& lc = fd.cycle();
  SeparationStudy study;
  study.probe_times = probe_times;
  study.runs.resize(static_cast<std::size_t>(seeds));
  parallel_for(study.runs.size(), workers, [&](std::size_t i) {
    dispatch_dimension(scaled.num_species(), [&](auto nd) {
    SeparationRun run;
    run.seed = stream_seed(seed, i);
    DirectEngine eng(scaled, counts_from(scaled, lc.phi(theta0)), run.seed);
    VariationalConfig open = cfg;
    open.eta = std::numeric_limits<double>::infinity();
    BasicPhaseTracker<decltype(nd)::value> tracker(scaled, fd, open);
    const int k = scaled.num_species();
    Vector x(k);
    auto load = [&] {
      for (int s = 0; s < k; ++s) x[s] = static_cast<double>(eng.counts()[static_cast<std::size_t>(s)]) / omega;
    };
    load();
    tracker.start(0.0, x, eng.propensities(), theta0);
    run.max_normw = tracker.normw();
    std::size_t next = 0;
    auto probe = [&](double t) {
      while (next < probe_times.size() && probe_times[next] <= t) {
        run.gaps.push_back(std::abs(tracker.beta_var() - tracker.beta_lin()));
        ++next;
      }
    };
    try {
      for (;;) {
        const double target = next < probe_times.size() ? std::min(probe_times[next], horizon) : horizon;
        auto a = eng.step(target);
        if (!a) {
          tracker.advance_to(target);
          probe(target);
          if (target >= horizon) break;
          continue;
        }
        load();
        tracker.on_event(eng.time(), *a, x, eng.propensities());
        run.max_normw = std::max(run.max_normw, tracker.normw());
      }
    } catch (const Error& e) {
      if (e.code() != ErrorCode::no_local_minimum && e.code() != ErrorCode::curvature_too_small) throw;
      run.max_normw = std::numeric_limits<double>::infinity();
    }
    run.stayed_in_tube = run.max_normw <= cfg.eta;
    while (run.gaps.size() < probe_times.size()) run.gaps.push_back(std::numeric_limits<double>::quiet_NaN());
    study.runs[i] = std::move(run);
    });
  });
  std::size_t inside = 0;
  for (const auto& r : study.runs) inside += r.stayed_in_tube ? 1 : 0;
  study.fraction_in_tube = static_cast<double>(inside) / static_cast<double>(study.runs.size());
  for (std::size_t j = 0; j < probe_times.size(); ++j) {
    std::vector<double> g;
    for (const auto& r : study.runs)
      if (std::isfinite(r.gaps[j])) g.push_back(r.gaps[j]);
    if (g.empty()) {
      study.median_gap.push_back(std::numeric_limits<double>::quiet_NaN());
      continue;
    }
    std::nth_element(g.begin(), g.begin() + static_cast<std::ptrdiff_t>(g.size() / 2), g.end());
    study.median_gap.push_back(g[g.size() / 2]);
  }
  return study;
}

// ---------------------------------------------------------------------------
// Brusselator benchmark (time series, phases, phase portrait)

struct BenchmarkSample {
  double t = 0.0;
  Vector x;
  double beta_var = 0.0;
  double beta_lin = 0.0;
  double normw = 0.0;
};

struct BenchmarkResult {
  double omega = 0.0;
  double period = 0.0;
  double omega0 = 0.0;
  double decay_rate = 0.0;
  double horizon = 0.0;
  double eta = 0.0;
  std::uint64_t seed = 0;
  std::vector<BenchmarkSample> samples;
  double max_normw = 0.0;
  bool stayed_in_tube = true;
  std::int64_t events = 0;
};

/// Stochastic run from Phi(theta0), sampled on a uniform output grid.
inline BenchmarkResult phase_benchmark(const ReactionNetwork& net, const FloquetData& fd, double omega, double theta0,
                                       double horizon, double dt_out, std::uint64_t seed,
                                       const VariationalConfig& cfg) {
  if (!(dt_out > 0.0)) throw Error(ErrorCode::invalid_argument, "output interval must be positive");
  const ReactionNetwork scaled = net.with_omega(omega);
  const auto& lc = fd.cycle();
  BenchmarkResult res;
  res.omega = omega;
  res.period = lc.period();
  res.omega0 = lc.omega0();
  res.decay_rate = fd.decay_rate();
  res.horizon = horizon;
  res.eta = cfg.eta;
  res.seed = seed;
  dispatch_dimension(scaled.num_species(), [&](auto nd) {
    DirectEngine eng(scaled, counts_from(scaled, lc.phi(theta0)), seed);
    VariationalConfig open = cfg;
    open.eta = std::numeric_limits<double>::infinity();
    BasicPhaseTracker<decltype(nd)::value> tracker(scaled, fd, open);
    const int k = scaled.num_species();
    Vector x(k);
    auto load = [&] {
      for (int s = 0; s < k; ++s) x[s] = static_cast<double>(eng.counts()[static_cast<std::size_t>(s)]) / omega;
    };
    load();
    tracker.start(0.0, x, eng.propensities(), theta0);
    res.max_normw = tracker.normw();
    const auto n_out = static_cast<std::int64_t>(std::floor(horizon / dt_out + 1e-9));
    for (std::int64_t j = 0; j <= n_out; ++j) {
      const double tj = std::min(j * dt_out, horizon);
      while (auto a = eng.step(tj)) {
        load();
        tracker.on_event(eng.time(), *a, x, eng.propensities());
        res.max_normw = std::max(res.max_normw, tracker.normw());
        ++res.events;
      }
      tracker.advance_to(tj);
      res.samples.push_back({tj, tracker.state(), tracker.beta_var(), tracker.beta_lin(), tracker.normw()});
    }
  });
  res.stayed_in_tube = res.max_normw <= cfg.eta;
  return res;
}

/// Noise-free check: variational phase along the ODE flow from Phi(theta0)
/// minus theta0 + omega0 t, maximised over `samples` times in [0, horizon].
inline double deterministic_phase_drift(const ReactionNetwork& net, const FloquetData& fd, double theta0,
                                        double horizon, int samples, double ode_tol = 1e-12) {
  const auto& lc = fd.cycle();
  std::vector<double> times;
  for (int j = 1; j <= samples; ++j) times.push_back(horizon * j / samples);
  const Vector start = lc.phi(theta0);
  OdeState x(start.data(), start.data() + start.size());
  PhaseKernel kernel(fd);
  double beta = theta0, worst = 0.0;
  integrate_at_times(mass_action_rhs(net), x, 0.0, times, ode_tol, [&](const OdeState& s, double t) {
    const Vector xv = Eigen::Map<const Vector>(s.data(), lc.dim());
    beta = variational_phase(kernel, xv, beta + lc.omega0() * (horizon / samples), VariationalConfig{}).beta;
    worst = std::max(worst, std::abs(beta - theta0 - lc.omega0() * t));
  });
  return worst;
}

}  // namespace crnphase

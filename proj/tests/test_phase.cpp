#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "common.hpp"
#include "oracles.hpp"

using namespace crnphase;
using testing_support::brusselator;
using testing_support::vec;

namespace {

VariationalConfig wide_open() {
  VariationalConfig cfg;
  cfg.eta = 1e9;
  return cfg;
}

// Random transverse displacement of Phi(theta) with weighted size at most r.
Vector tube_state(const FloquetData& fd, double theta, double r, std::mt19937_64& gen) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  return fd.cycle().phi(theta) + fd.P(theta) * vec({0.0, r * u(gen)});
}

}  // namespace

TEST(VariationalPhase, OnCycleIdentities) {
  const auto& b = brusselator();
  for (int i = 0; i < 40; ++i) {
    const double th = 0.1 + two_pi * i / 40;
    const auto r = variational_phase(b.fd, b.lc.phi(th), th + 0.05);
    EXPECT_NEAR(r.beta, th, 1e-8);
    EXPECT_LT(r.normw, 1e-8);
    EXPECT_NEAR(r.curvature, 1.0, 1e-8);
  }
}

TEST(VariationalPhase, ReturnsLiftNearPrevious) {
  const auto& b = brusselator();
  const auto r = variational_phase(b.fd, b.lc.phi(1.0), 1.0 + 4 * two_pi + 0.1);
  EXPECT_NEAR(r.beta, 1.0 + 4 * two_pi, 1e-8);
}

TEST(VariationalPhase, AmplitudeDisplacementIsPhaseNeutral) {
  const auto& b = brusselator();
  for (double th : {0.7, 2.4, 5.0}) {
    for (double eps : {1e-3, -1e-3}) {
      const Vector x = b.lc.phi(th) + eps * b.fd.P(th).col(1);
      const auto r = variational_phase(b.fd, x, th);
      EXPECT_NEAR(r.beta, th, 10 * eps * eps);
      EXPECT_NEAR(r.normw, std::abs(eps), 10 * eps * eps);
      EXPECT_NEAR(r.beta, oracle::dense_grid_phase(b.fd, x, th, 0.5), 1e-9);
    }
  }
}

TEST(VariationalPhase, MatchesDenseGridOracle) {
  const auto& b = brusselator();
  std::mt19937_64 gen(17);
  std::uniform_real_distribution<double> u(0.0, two_pi), v(-1.0, 1.0);
  const double eta = default_eta(b.fd);
  const double hw = VariationalConfig{}.search_halfwidth;
  int compared = 0;
  for (int i = 0; i < 60; ++i) {
    const double th = u(gen);
    const Vector x = b.lc.phi(th) + b.fd.P(th) * vec({0.3 * eta * v(gen), eta * v(gen)});
    const double o = oracle::dense_grid_phase(b.fd, x, th, hw);
    try {
      const auto r = variational_phase(b.fd, x, th);
      ASSERT_FALSE(std::isnan(o)) << "theta " << th;
      EXPECT_NEAR(r.beta, o, 1e-9) << "theta " << th;
      ++compared;
    } catch (const Error& e) {
      ASSERT_EQ(e.code(), ErrorCode::no_local_minimum);
      EXPECT_TRUE(std::isnan(o)) << "theta " << th;
    }
  }
  EXPECT_GE(compared, 45);
}

TEST(VariationalPhase, ResidualAndCurvatureAtRoot) {
  const auto& b = brusselator();
  std::mt19937_64 gen(4);
  PhaseKernel kernel(b.fd);
  for (int i = 0; i < 30; ++i) {
    const double th = two_pi * i / 30;
    const Vector x = tube_state(b.fd, th, 0.3, gen);
    const auto r = variational_phase(kernel, x, th, VariationalConfig{});
    kernel.evaluate(x, r.beta);
    EXPECT_LT(std::abs(kernel.residual()), 1e-9);
    EXPECT_GT(r.curvature, 0.0);
    const Vector w = b.fd.Pinv(r.beta) * (x - b.lc.phi(r.beta));
    EXPECT_LE(std::abs(w[0]), 1e-8 * (x - b.lc.phi(r.beta)).norm());
    EXPECT_NEAR(r.normw, weighted_norm(b.fd, r.beta, x - b.lc.phi(r.beta)), 1e-12);
    EXPECT_NEAR(r.normw, w.norm(), 1e-12);
  }
}

TEST(VariationalPhase, FixedDimensionKernelAgrees) {
  const auto& b = brusselator();
  std::mt19937_64 gen(9);
  BasicPhaseKernel<2> k2(b.fd);
  PhaseKernel kd(b.fd);
  for (int i = 0; i < 20; ++i) {
    const double th = two_pi * i / 20;
    const Vector x = tube_state(b.fd, th, 1.0, gen);
    k2.evaluate(x, th + 0.01);
    kd.evaluate(x, th + 0.01);
    EXPECT_NEAR(k2.residual(), kd.residual(), 1e-13);
    EXPECT_NEAR(k2.curvature(), kd.curvature(), 1e-12);
  }
}

TEST(VariationalPhase, NoMinimumInWindow) {
  const auto& b = brusselator();
  VariationalConfig cfg;
  cfg.search_halfwidth = 0.05;
  try {
    variational_phase(b.fd, b.lc.phi(2.0), 1.0, cfg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::no_local_minimum);
  }
  cfg.search_halfwidth = 4.0;
  EXPECT_THROW(cfg.validate(), Error);
}

TEST(Objective, G0Properties) {
  const auto& b = brusselator();
  for (double bb : {0.3, 3.0}) {
    for (double th : {0.0, 1.0, 4.0}) EXPECT_NEAR(g0(b.fd, b.lc.phi(bb), bb, th), 0.0, 1e-14);
    const Vector x = b.lc.phi(bb) + vec({0.2, -0.1});
    const double h = 1e-5;
    const Matrix pinv = b.fd.Pinv(bb);
    auto dist2 = [&](double c) { return (pinv * (x - b.lc.phi(c))).squaredNorm(); };
    const double fd = (dist2(bb + h) - dist2(bb - h)) / (2 * h);
    EXPECT_NEAR(g0(b.fd, x, bb, bb), fd, 1e-5);
    const Vector ahead = b.lc.phi(bb) + 0.05 * b.lc.dphi(bb);
    EXPECT_LT(g0(b.fd, ahead, bb, bb), 0.0);
  }
}

TEST(Objective, CurvatureIsDerivativeOfResidual) {
  const auto& b = brusselator();
  PhaseKernel kernel(b.fd);
  std::mt19937_64 gen(2);
  for (int i = 0; i < 20; ++i) {
    const double th = two_pi * i / 20 + 0.01;
    const Vector x = tube_state(b.fd, th, 1.0, gen);
    const double h = 1e-6;
    kernel.evaluate(x, th + h);
    const double rp = kernel.residual();
    kernel.evaluate(x, th - h);
    const double rm = kernel.residual();
    kernel.evaluate(x, th);
    EXPECT_NEAR(kernel.curvature(), -(rp - rm) / (2 * h), 1e-6 * std::max(1.0, std::abs(kernel.curvature())));
    const Matrix pinv = b.fd.Pinv(th);
    auto dist2 = [&](double c) { return (pinv * (x - b.lc.phi(c))).squaredNorm(); };
    const double hh = 1e-4;
    const double fd2 = (dist2(th + hh) + dist2(th - hh) - 2 * dist2(th)) / (hh * hh);
    EXPECT_NEAR(kernel.frozen_curvature(), 0.5 * fd2, 1e-5 * std::max(1.0, std::abs(fd2)));
  }
}

TEST(LinearUpdate, ZeroJumpAndPrcForm) {
  const auto& b = brusselator();
  const double omega = b.net.omega();
  for (double th : {0.0, 1.5, 3.7}) {
    EXPECT_EQ(linear_phase_update(b.fd, th, 1.0, Vector::Zero(2)), 0.0);
    for (int a = 0; a < b.net.num_reactions(); ++a) {
      const Vector s = b.net.stoichiometry_real().col(a);
      const double expected = b.prc.R(th).dot(s) / omega;
      EXPECT_NEAR(linear_phase_update(b.fd, th, 1.0, s / omega), expected, 1e-6 * std::abs(expected) + 1e-12);
    }
  }
  try {
    linear_phase_update(b.fd, 0.0, 0.4, vec({1.0, 0.0}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::curvature_too_small);
  }
}

TEST(LinearUpdate, GapToVariationalIsSecondOrder) {
  const auto& b = brusselator();
  for (double th : {0.4, 2.2, 4.8}) {
    for (int a = 0; a < b.net.num_reactions(); ++a) {
      const Vector s = b.net.stoichiometry_real().col(a);
      std::vector<double> scaled;
      for (double omega : {3000.0, 12000.0}) {
        const Vector x = b.lc.phi(th) + s / omega;
        const double lin = th + linear_phase_update(b.fd, th, 1.0, s / omega);
        scaled.push_back((variational_phase(b.fd, x, th).beta - lin) * omega * omega);
      }
      EXPECT_NEAR(scaled[0], scaled[1], 0.05 * std::abs(scaled[1]) + 0.02) << "channel " << a << " theta " << th;
    }
  }
}

TEST(Tracker, CompensatedDriftOnCycleIsOmega0) {
  const auto& b = brusselator();
  for (Compensator comp : {Compensator::trajectory, Compensator::on_cycle}) {
    PhaseTracker tr(b.net, b.fd, wide_open(), comp);
    const Vector x = b.lc.phi(1.2);
    tr.start(0.0, x, propensity(b.net, x), 1.2);
    EXPECT_NEAR(tr.compensated_drift(), b.lc.omega0(), 1e-8);
  }
}

TEST(Tracker, TrajectoryCompensatorErrorIsQuadratic) {
  const auto& b = brusselator();
  for (double th : {0.5, 2.0, 4.0}) {
    double prev = 0.0;
    for (double eps : {1e-2, 5e-3}) {
      const Vector x = b.lc.phi(th) + eps * b.fd.P(th).col(1);
      PhaseTracker tr(b.net, b.fd, wide_open());
      tr.start(0.0, x, propensity(b.net, x), th);
      const double dev = std::abs(tr.compensated_drift() - b.lc.omega0());
      if (prev > 0.0) EXPECT_NEAR(prev / dev, 4.0, 0.5);
      prev = dev;
    }
  }
}

TEST(Tracker, NoEventsMeansConstantVariationalPhase) {
  const auto& b = brusselator();
  const Vector x = b.lc.phi(0.8) + 0.01 * b.fd.P(0.8).col(1);
  PhaseTracker tr(b.net, b.fd, wide_open());
  const Vector lam = propensity(b.net, x);
  tr.start(0.0, x, lam, 0.8);
  const double beta0 = tr.beta_var(), drift = tr.compensated_drift();
  tr.advance_to(0.5);
  EXPECT_EQ(tr.beta_var(), beta0);
  EXPECT_NEAR(tr.beta_lin(), beta0 + (b.lc.omega0() - drift) * 0.5, 1e-14);

  JumpTrajectory empty;
  empty.initial_counts = counts_from(b.net, b.lc.phi(0.8));
  empty.t_end = 1.0;
  const auto trace = track_phase(empty, b.net, b.fd, wide_open(), 0.8);
  ASSERT_EQ(trace.records.size(), 1u);
  EXPECT_FALSE(trace.escaped_at.has_value());
}

TEST(Tracker, InvariantsAlongJumpPath) {
  const auto& b = brusselator();
  const auto traj = ssa_direct(b.net, counts_from(b.net, b.lc.phi(0.0)), b.lc.period(), 5);
  VariationalConfig cfg;
  cfg.eta = default_eta(b.fd);
  BasicPhaseTracker<2> tr(b.net, b.fd, cfg);
  PhaseKernel kernel(b.fd);
  Counts n = traj.initial_counts;
  Vector lam(4);
  propensity_counts_into(b.net, n, PropensityForm::concentration, lam);
  tr.start(0.0, concentrations(b.net, n), lam, 0.0);
  double worst_res = 0.0, worst_w1 = 0.0, worst_norm = 0.0;
  for (std::size_t k = 0; k < traj.size(); ++k) {
    for (int i = 0; i < 2; ++i) n[static_cast<std::size_t>(i)] += b.net.stoichiometry()(i, traj.channels[k]);
    const Vector x = concentrations(b.net, n);
    propensity_counts_into(b.net, n, PropensityForm::concentration, lam);
    ASSERT_TRUE(tr.on_event(traj.times[k], traj.channels[k], x, lam));
    if (k % 50) continue;
    const double beta = tr.beta_var();
    kernel.evaluate(x, beta);
    worst_res = std::max(worst_res, std::abs(kernel.residual()));
    const Vector v = x - b.lc.phi(beta);
    const Vector w = b.fd.Pinv(beta) * v;
    worst_w1 = std::max(worst_w1, std::abs(w[0]) / v.norm());
    worst_norm = std::max(worst_norm, std::abs(weighted_norm(b.fd, beta, v) - w.norm()));
    EXPECT_NEAR(tr.normw(), w.norm(), 1e-12);
    EXPECT_GT(tr.curvature(), 0.0);
  }
  EXPECT_LT(worst_res, 1e-9);
  EXPECT_LT(worst_w1, 1e-8);
  EXPECT_LT(worst_norm, 1e-12);
}

TEST(Tracker, RecordsStopAtEscape) {
  const auto& b = brusselator();
  const auto net = b.net.with_omega(100.0);
  const auto traj = ssa_direct(net, counts_from(net, b.lc.phi(0.0)), 3 * b.lc.period(), 1);
  VariationalConfig cfg;
  cfg.eta = 0.05;
  const auto trace = track_phase(traj, net, b.fd, cfg, 0.0);
  ASSERT_TRUE(trace.escaped_at.has_value());
  EXPECT_EQ(trace.records.back().t, *trace.escaped_at);
  EXPECT_GT(trace.records.back().normw, cfg.eta);
  for (std::size_t i = 0; i + 1 < trace.records.size(); ++i) EXPECT_LE(trace.records[i].normw, cfg.eta);
}

TEST(Tracker, AnchorInvariance) {
  const auto& b = brusselator();
  const double shift = 1.3;
  const auto moved_lc = b.lc.reanchored(shift, b.lc.grid_size());
  const auto moved_fd = floquet_decompose(moved_lc, b.net);
  std::mt19937_64 gen(6);
  for (int i = 0; i < 20; ++i) {
    const double th = two_pi * i / 20 + 0.2;
    const Vector x = tube_state(b.fd, th, 1.0, gen);
    const double beta = variational_phase(b.fd, x, th).beta;
    const double moved = variational_phase(moved_fd, x, th - shift).beta;
    EXPECT_NEAR(beta - moved, shift, 1e-6);
  }
}

TEST(Tracker, LinearGapShrinksWithOmega) {
  // |beta_var - beta_lin| ~ m / omega^2 + t sup |w|^2, both O(1 / omega) over a fixed window.
  const auto& b = brusselator();
  const double window = 0.1 * b.lc.period();
  std::vector<double> med;
  for (double omega : {3000.0, 12000.0}) {
    const auto net = b.net.with_omega(omega);
    std::vector<double> gaps;
    for (int s = 0; s < 15; ++s) {
      const auto traj = ssa_direct(net, counts_from(net, b.lc.phi(0.0)), window, stream_seed(12, static_cast<std::uint64_t>(s)));
      const auto trace = track_phase(traj, net, b.fd, wide_open(), 0.0);
      gaps.push_back(std::abs(trace.records.back().beta_var - trace.records.back().beta_lin));
    }
    std::nth_element(gaps.begin(), gaps.begin() + 7, gaps.end());
    med.push_back(gaps[7]);
  }
  EXPECT_GT(med[0] / med[1], 2.0);
  EXPECT_LT(med[0] / med[1], 8.0);
}

TEST(PhaseSde, NoiseOffIsRigidRotation) {
  const auto& b = brusselator();
  const auto path = isochronal_phase_sde(b.lc, b.prc, b.net, 0.7, 3.0, 1e-3, 1, 0.0);
  for (std::size_t i = 0; i < path.times.size(); i += 100)
    EXPECT_NEAR(path.theta[i], 0.7 + b.lc.omega0() * path.times[i], 1e-10);
  EXPECT_THROW(isochronal_phase_sde(b.lc, b.prc, b.net, 0.0, 1.0, 0.0, 1), Error);
}

TEST(PhaseSde, VarianceGrowsLinearly) {
  const auto& b = brusselator();
  const auto net = b.net.with_omega(300.0);
  const double horizon = 2 * b.lc.period(), h = b.lc.period() / 400;
  const double rate = phase_diffusion_rate(b.lc, b.prc, net);
  std::vector<double> slopes;
  for (std::uint64_t seed : {1u, 2u}) {
    std::vector<double> half, full;
    std::mt19937_64 gen(seed);
    std::uniform_real_distribution<double> u(0.0, two_pi);
    for (int r = 0; r < 1500; ++r) {
      const double th0 = u(gen);
      const auto p = isochronal_phase_sde(b.lc, b.prc, net, th0, horizon, h, stream_seed(seed, static_cast<std::uint64_t>(r)));
      const std::size_t mid = (p.times.size() - 1) / 2;
      half.push_back(p.theta[mid] - th0 - b.lc.omega0() * p.times[mid]);
      full.push_back(p.theta.back() - th0 - b.lc.omega0() * p.times.back());
    }
    const double vh = sample_stats(half).variance, vf = sample_stats(full).variance;
    EXPECT_NEAR(vh / vf, 0.5, 0.1);
    slopes.push_back(vf / horizon);
    EXPECT_NEAR(vf / horizon, rate, 0.12 * rate);
  }
  EXPECT_NEAR(slopes[0] / slopes[1], 1.0, 0.15);
}

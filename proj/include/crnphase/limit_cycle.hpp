#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <vector>

#include "crnphase/interpolation.hpp"
#include "crnphase/network.hpp"
#include "crnphase/ode.hpp"

namespace crnphase {

struct LimitCycleOptions {
  int grid_size = 512;
  double tol = 1e-10;        // Newton target for the return-map residual
  double ode_tol = 1e-12;    // integrator tolerance
  double transient = 100.0;  // time spent relaxing before any period estimate
  double pre_periods = 50.0; // further relaxation, in estimated periods
  double max_search_time = 2000.0;
  int max_newton_iters = 40;
};

/// Stable periodic orbit Phi(theta), theta in [0, 2pi), of the mass-action
/// ODE. theta = 0 is the point where the orbit crosses the Poincare section
/// placed at the maximum of the first coordinate's velocity.
class LimitCycle {
 public:
  LimitCycle() = default;

  LimitCycle(double period, Vector anchor, Vector section_normal, std::vector<double> phi, std::vector<double> dphi,
             std::vector<double> ddphi, double return_residual)
      : period_(period),
        omega0_(two_pi / period),
        anchor_(std::move(anchor)),
        normal_(std::move(section_normal)),
        return_residual_(return_residual),
        orbit_(static_cast<int>(anchor_.size()), std::move(phi), std::move(dphi), std::move(ddphi)) {}

  double period() const { return period_; }
  double omega0() const { return omega0_; }
  int dim() const { return orbit_.dim(); }
  int grid_size() const { return orbit_.nodes(); }
  double node_phase(int g) const { return orbit_.node_phase(g); }
  const Vector& anchor() const { return anchor_; }
  const Vector& section_normal() const { return normal_; }
  double return_residual() const { return return_residual_; }

  Vector phi_node(int g) const {
    auto v = orbit_.node_value(g);
    return Eigen::Map<const Vector>(v.data(), dim());
  }
  Vector dphi_node(int g) const {
    auto v = orbit_.node_d1(g);
    return Eigen::Map<const Vector>(v.data(), dim());
  }

  /// Raw evaluation into caller buffers (any may be null).
  void eval(double theta, double* phi, double* dphi, double* ddphi) const { orbit_.eval(theta, phi, dphi, ddphi); }

  Vector phi(double theta) const {
    Vector out(dim());
    eval(theta, out.data(), nullptr, nullptr);
    return out;
  }
  Vector dphi(double theta) const {
    Vector out(dim());
    eval(theta, nullptr, out.data(), nullptr);
    return out;
  }
  Vector ddphi(double theta) const {
    Vector out(dim());
    eval(theta, nullptr, nullptr, out.data());
    return out;
  }

  /// Same orbit with theta = 0 moved to the old phase `shift`; used to check
  /// anchor invariance.
  LimitCycle reanchored(double shift, int grid_size) const {
    std::vector<double> p, d, dd;
    Vector a(dim()), b(dim()), c(dim());
    for (int g = 0; g < grid_size; ++g) {
      eval(shift + two_pi * g / grid_size, a.data(), b.data(), c.data());
      p.insert(p.end(), a.data(), a.data() + dim());
      d.insert(d.end(), b.data(), b.data() + dim());
      dd.insert(dd.end(), c.data(), c.data() + dim());
    }
    return LimitCycle(period_, phi(shift), normal_, std::move(p), std::move(d), std::move(dd), return_residual_);
  }

 private:
  double period_ = 0.0;
  double omega0_ = 0.0;
  Vector anchor_;
  Vector normal_;
  double return_residual_ = 0.0;
  PeriodicHermite orbit_;
};

struct OrbitPoint {
  Vector phi;
  Vector dphi;
};

inline OrbitPoint eval_orbit(const LimitCycle& lc, double theta) {
  OrbitPoint p{Vector(lc.dim()), Vector(lc.dim())};
  lc.eval(theta, p.phi.data(), p.dphi.data(), nullptr);
  return p;
}

/// Builds the periodic interpolant by sampling the flow from `anchor` at the
/// grid phases. Node derivatives come from F and J, so the interpolant is the
/// quintic Hermite fit of exact orbit data.
inline LimitCycle sample_cycle(const ReactionNetwork& net, const Vector& anchor, const Vector& normal, double period,
                               int grid_size, double ode_tol, double return_residual) {
  const int k = net.num_species();
  const double omega0 = two_pi / period;
  std::vector<double> times(static_cast<std::size_t>(grid_size));
  for (int g = 0; g < grid_size; ++g) times[static_cast<std::size_t>(g)] = period * g / grid_size;
  std::vector<double> phi, dphi, ddphi;
  phi.reserve(static_cast<std::size_t>(grid_size * k));
  OdeState x(anchor.data(), anchor.data() + k);
  integrate_at_times(mass_action_rhs(net), x, 0.0, times, ode_tol, [&](const OdeState& s, double) {
    const Eigen::Map<const Vector> xv(s.data(), k);
    const Vector d = drift(net, xv) / omega0;
    const Vector dd = jacobian(net, xv) * d / omega0;
    phi.insert(phi.end(), s.begin(), s.end());
    dphi.insert(dphi.end(), d.data(), d.data() + k);
    ddphi.insert(ddphi.end(), dd.data(), dd.data() + k);
  });
  return LimitCycle(period, anchor, normal, std::move(phi), std::move(dphi), std::move(ddphi), return_residual);
}

namespace detail {

inline double velocity_scale(const ReactionNetwork& net, const Vector& x) {
  return drift(net, x).norm() / (1.0 + x.norm());
}

// Integrates until the trajectory crosses {n . (x - p) = 0} upward, having
// first moved away from it. Returns the crossing time relative to t0 and
// overwrites x with the crossing state, or returns a negative value when no
// crossing happens before max_time.
inline double next_upward_crossing(const ReactionNetwork& net, OdeState& x, const Vector& p, const Vector& n,
                                   double max_time, double tol) {
  const int k = net.num_species();
  auto side = [&](const OdeState& s) {
    return n.dot(Eigen::Map<const Vector>(s.data(), k) - p);
  };
  DenseOde ode(mass_action_rhs(net), x, 0.0, tol);
  double prev = side(x);
  bool armed = prev < 0.0;
  OdeState probe(x.size());
  while (ode.time() < max_time) {
    ode.step();
    const double cur = side(ode.state());
    if (armed && prev < 0.0 && cur >= 0.0) {
      double lo = ode.previous_time(), hi = ode.time();
      for (int it = 0; it < 200 && hi - lo > 1e-15 * (1.0 + hi); ++it) {
        const double mid = 0.5 * (lo + hi);
        ode.state_at(mid, probe);
        (side(probe) < 0.0 ? lo : hi) = mid;
      }
      ode.state_at(hi, x);
      return hi;
    }
    if (cur < 0.0) armed = true;
    prev = cur;
  }
  return -1.0;
}

}  // namespace detail

/// Locates the attracting periodic orbit reachable from x_seed by Poincare
/// shooting: relax onto the attractor, place the section at the maximum of
/// dx_1/dt, then Newton-iterate on (section point, period).
inline LimitCycle find_limit_cycle(const ReactionNetwork& net, const Vector& x_seed,
                                   const LimitCycleOptions& opt = {}) {
  if (opt.grid_size < 8) throw Error(ErrorCode::invalid_argument, "grid size must be at least 8");
  if (!(opt.tol > 0.0) || !(opt.ode_tol > 0.0)) throw Error(ErrorCode::invalid_argument, "tolerances must be positive");
  const int k = net.num_species();
  if (x_seed.size() != k) throw Error(ErrorCode::invalid_argument, "seed dimension does not match species count");
  const auto rhs = mass_action_rhs(net);
  const double fixed_point_eps = 1e-9;

  // Relax onto the attractor.
  OdeState x(x_seed.data(), x_seed.data() + k);
  integrate_to(rhs, x, 0.0, opt.transient, opt.ode_tol);
  auto as_vec = [k](const OdeState& s) { return Vector(Eigen::Map<const Vector>(s.data(), k)); };
  if (detail::velocity_scale(net, as_vec(x)) < fixed_point_eps)
    throw Error(ErrorCode::no_cycle, "trajectory settled onto a fixed point");

  // Period estimate from the return time to a section through the current point.
  Vector p = as_vec(x);
  Vector n = drift(net, p).normalized();
  double t_est = detail::next_upward_crossing(net, x, p, n, opt.max_search_time, opt.ode_tol);
  if (t_est <= 0.0) throw Error(ErrorCode::no_cycle, "no recurrence found within the search horizon");

  integrate_to(rhs, x, 0.0, opt.pre_periods * t_est, opt.ode_tol);
  if (detail::velocity_scale(net, as_vec(x)) < fixed_point_eps)
    throw Error(ErrorCode::no_cycle, "trajectory settled onto a fixed point");

  // Section point: maximum of F_1 along one revolution, located as a root of
  // d/dt F_1 = (J F)_1.
  auto accel = [&](const OdeState& s) {
    const Vector xv = as_vec(s);
    return (jacobian(net, xv) * drift(net, xv))[0];
  };
  Vector best = as_vec(x);
  double best_f1 = drift(net, best)[0];
  {
    DenseOde ode(rhs, x, 0.0, opt.ode_tol);
    OdeState probe(x.size());
    double prev = accel(x);
    while (ode.time() < 1.2 * t_est) {
      ode.step();
      const double cur = accel(ode.state());
      if (prev > 0.0 && cur <= 0.0) {
        double lo = ode.previous_time(), hi = ode.time();
        for (int it = 0; it < 200 && hi - lo > 1e-15 * (1.0 + hi); ++it) {
          const double mid = 0.5 * (lo + hi);
          ode.state_at(mid, probe);
          (accel(probe) > 0.0 ? lo : hi) = mid;
        }
        ode.state_at(0.5 * (lo + hi), probe);
        const Vector cand = as_vec(probe);
        const double f1 = drift(net, cand)[0];
        if (f1 > best_f1) {
          best_f1 = f1;
          best = cand;
        }
      }
      prev = cur;
    }
  }
  const Vector section_point = best;
  const Vector normal = drift(net, section_point).normalized();

  x.assign(section_point.data(), section_point.data() + k);
  double period = detail::next_upward_crossing(net, x, section_point, normal, 1.5 * t_est + 1.0, opt.ode_tol);
  if (period <= 0.0) throw Error(ErrorCode::no_cycle, "orbit does not return to the section");

  // Newton on G(x0, T) = (phi_T(x0) - x0, n . (x0 - p)).
  Vector x0 = section_point;
  double residual = std::numeric_limits<double>::infinity();
  const auto vrhs = variational_rhs(net);
  int iter = 0;
  for (; iter < opt.max_newton_iters; ++iter) {
    OdeState y = pack_variational(x0, Matrix::Identity(k, k));
    integrate_to(vrhs, y, 0.0, period, opt.ode_tol);
    const Vector xt = Eigen::Map<const Vector>(y.data(), k);
    const Matrix mono = Eigen::Map<const Matrix>(y.data() + k, k, k);
    const Vector r = xt - x0;
    residual = r.norm();
    const double section_res = normal.dot(x0 - section_point);
    if (residual < opt.tol && std::abs(section_res) < opt.tol) break;

    Matrix jac = Matrix::Zero(k + 1, k + 1);
    jac.topLeftCorner(k, k) = mono - Matrix::Identity(k, k);
    jac.topRightCorner(k, 1) = drift(net, xt);
    jac.bottomLeftCorner(1, k) = normal.transpose();
    Vector rhs_vec(k + 1);
    rhs_vec << -r, -section_res;
    const Vector delta = jac.fullPivLu().solve(rhs_vec);
    if (!delta.allFinite()) throw Error(ErrorCode::no_cycle, "singular shooting Jacobian");
    x0 += delta.head(k);
    period += delta[k];
    if (!(period > 1e-8)) throw Error(ErrorCode::no_cycle, "period collapsed during shooting");
    if (detail::velocity_scale(net, x0) < fixed_point_eps)
      throw Error(ErrorCode::no_cycle, "shooting converged onto a fixed point");
  }
  if (iter == opt.max_newton_iters)
    throw Error(ErrorCode::not_converged, "return-map residual " + std::to_string(residual) + " above tolerance");

  return sample_cycle(net, x0, normal, period, opt.grid_size, opt.ode_tol, residual);
}

}  // namespace crnphase
